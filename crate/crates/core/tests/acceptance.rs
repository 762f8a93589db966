//! Acceptance gate. Prints one line per criterion and exits non-zero when a
//! hard criterion fails. Run with `cargo test --test acceptance`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use gcnstab::bounds::{hoeffding_tail, offset_for_confidence, per_edge_terms};
use gcnstab::config::{ExperimentConfig, ExperimentKind, RankKey};
use gcnstab::experiments::{edges, execute, fig1, fig2, fig3};
use gcnstab::gcn::{filter_apply, frequency_response, FilterSpec, GcnLayer, Nonlinearity};
use gcnstab::graph::{delta_laplacian, laplacian, Edge, EdgePerturbation, Graph, Sign};
use gcnstab::random::{derive_seed, gaussian_features, generate_sbm, sample_perturbation, PerturbationPolicy, PolicyMode, SbmParams};
use gcnstab::spectral::{
    eigendecompose, exact_perturbed_spectrum, first_order_perturbation, first_order_perturbation_edges,
    perturbed_spectrum_approx, DEFAULT_GAP_TOL,
};
use gcnstab::training::{
    graph_loss_and_grad, node_loss_and_grad, FeatureMode, GraphParams, LabeledGraphTask, LabeledNodeTask,
    TrainConfig,
};
use gcnstab::Error;

const SEED: u64 = 20_240_611;

#[derive(Clone, Copy, PartialEq)]
enum Status {
    Pass,
    Fail,
    Report,
}

struct Gate {
    failed: usize,
}

impl Gate {
    fn record(&mut self, id: u32, name: &str, status: Status, detail: String, elapsed: Duration) {
        let tag = match status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Report => "REPORT",
        };
        if status == Status::Fail {
            self.failed += 1;
        }
        println!("[{tag}] {id}. {name} ({:.1}s): {detail}", elapsed.as_secs_f64());
    }

    fn check(&mut self, id: u32, name: &str, ok: bool, detail: String, elapsed: Duration) {
        self.record(id, name, if ok { Status::Pass } else { Status::Fail }, detail, elapsed);
    }
}

fn nondecreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] >= w[0])
}

fn sbm20(seed: u64) -> SbmParams {
    SbmParams {
        communities: vec![10, 10],
        p_intra: 0.7,
        p_inter: 0.08,
        seed,
        require_connected: true,
    }
}

/// 1. First-order eigenvalues after one deletion on 20-node SBM graphs.
fn first_order_accuracy(gate: &mut Gate) {
    let start = Instant::now();
    let trials = 500;
    let (mut ok, mut counted, mut skipped) = (0, 0, 0);
    let mut ratios = Vec::new();
    for t in 0..trials {
        let g = generate_sbm(&sbm20(derive_seed(SEED, 1, t))).unwrap();
        let policy = PerturbationPolicy::new(PolicyMode::FixedCountDelete { count: 1 }).connected();
        let p = sample_perturbation(&g, &policy, derive_seed(SEED, 2, t)).unwrap();
        let sd = eigendecompose(&laplacian(&g)).unwrap();
        let pert = match first_order_perturbation_edges(&sd, &p, DEFAULT_GAP_TOL) {
            Err(Error::DegenerateSpectrum { .. }) => {
                skipped += 1;
                continue;
            }
            other => other.unwrap(),
        };
        let mut approx: Vec<f64> = (sd.eigenvalues() + &pert.delta_lambda).iter().copied().collect();
        approx.sort_by(f64::total_cmp);
        let exact = exact_perturbed_spectrum(&g, &p).unwrap();
        let err = (DVector::from_vec(approx) - exact.eigenvalues()).norm();
        let dl_norm = delta_laplacian(&p, g.n()).norm();
        counted += 1;
        ratios.push(err / dl_norm);
        if err <= 0.15 * dl_norm {
            ok += 1;
        }
    }
    ratios.sort_by(f64::total_cmp);
    let share = ok as f64 / counted as f64;
    let elapsed = start.elapsed();
    gate.check(
        1,
        "first-order eigenvalue accuracy",
        share >= 0.95 && elapsed < Duration::from_secs(60),
        format!(
            "{ok}/{counted} trials within 0.15*||dL||_F ({:.1}%, need 95%), {skipped} degenerate skipped; \
             error/||dL||_F median {:.3}, 95th percentile {:.3}",
            100.0 * share,
            ratios[ratios.len() / 2],
            ratios[ratios.len() * 95 / 100]
        ),
        elapsed,
    );
}

/// 2. P3 plus the chord (0,2) against the exact K3 spectrum.
fn exactness_spot_check(gate: &mut Gate) {
    let start = Instant::now();
    let p3 = Graph::path(3);
    let sd = eigendecompose(&laplacian(&p3)).unwrap();
    let p = EdgePerturbation::new(vec![(Edge::new(0, 2).unwrap(), Sign::Insert)]).unwrap();
    let approx = perturbed_spectrum_approx(&sd, &delta_laplacian(&p, 3), DEFAULT_GAP_TOL).unwrap();
    let exact = eigendecompose(&laplacian(&Graph::complete(3))).unwrap();
    let err = (&approx.eigenvalues - exact.eigenvalues()).amax();
    let target = (approx.eigenvalues.clone() - DVector::from_vec(vec![0.0, 3.0, 3.0])).amax();
    gate.check(
        2,
        "exactness spot check",
        err <= 1e-10 && target <= 1e-10,
        format!("approx {:?}, max deviation from exact {err:.2e}", approx.eigenvalues.as_slice()),
        start.elapsed(),
    );
}

/// 3 and 6. Desk-scale deletion sweep.
fn fig1_checks(gate: &mut Gate) {
    let start = Instant::now();
    let cfg = ExperimentConfig::defaults(ExperimentKind::Fig1);
    let out = fig1::run_fig1(&cfg).unwrap();
    let elapsed = start.elapsed();
    let rows = &out.rows[1..];
    let mean_ok = rows.iter().all(|r| r.mean_distance <= r.mean_bound);
    let viol_ok = rows
        .iter()
        .filter(|r| r.k <= 3)
        .all(|r| r.violations as f64 <= 0.01 * r.trials as f64);
    let bounds: Vec<f64> = rows.iter().map(|r| r.mean_bound).collect();
    let max_viol = rows.iter().map(|r| r.violations).max().unwrap_or(0);
    gate.check(
        3,
        "deterministic bound validity",
        mean_ok && viol_ok && nondecreasing(&bounds) && elapsed < Duration::from_secs(600),
        format!(
            "{} graphs x {} trials, k = 1..{}: mean distance <= mean bound {mean_ok}, \
             max violations per k {max_viol}, bound monotone {}; k=1 distance {:.4} bound {:.4}, k=10 distance {:.4} bound {:.4}",
            cfg.counts.graphs,
            cfg.counts.trials,
            cfg.counts.max_edges,
            nondecreasing(&bounds),
            rows[0].mean_distance,
            rows[0].mean_bound,
            rows[rows.len() - 1].mean_distance,
            rows[rows.len() - 1].mean_bound
        ),
        elapsed,
    );
    let k1 = &out.rows[1];
    let share = k1.bound_below_baseline as f64 / k1.trials as f64;
    gate.record(
        6,
        "tightness against the naive baseline",
        Status::Report,
        format!(
            "bound <= baseline on {:.1}% of k = 1 trials (target 70%, reported only); mean bound {:.4}, mean baseline {:.4}",
            100.0 * share,
            k1.mean_bound,
            k1.mean_baseline
        ),
        elapsed,
    );
}

/// 4. Desk-scale Bernoulli sweep.
fn fig2_checks(gate: &mut Gate) {
    let start = Instant::now();
    let cfg = ExperimentConfig::defaults(ExperimentKind::Fig2);
    let out = fig2::run_fig2(&cfg).unwrap();
    let elapsed = start.elapsed();
    let below = out.rows.iter().all(|r| r.mean_distance <= r.expected_bound);
    let d: Vec<f64> = out.rows.iter().map(|r| r.mean_distance).collect();
    let b: Vec<f64> = out.rows.iter().map(|r| r.expected_bound).collect();
    gate.check(
        4,
        "expected bound validity",
        below && nondecreasing(&d) && nondecreasing(&b) && elapsed < Duration::from_secs(600),
        format!(
            "p = {:?}: distance <= expected bound {below}, distance monotone {}, bound monotone {}; distances {:?}, bounds {:?}",
            cfg.counts.probabilities,
            nondecreasing(&d),
            nondecreasing(&b),
            d.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            b.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
        ),
        elapsed,
    );
}

/// 5. Tail frequencies at p = 0.1 over 2,000 trials, and the offset round trip.
fn tail_checks(gate: &mut Gate) {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::Fig2);
    cfg.counts.probabilities = vec![0.1];
    cfg.counts.graphs = 10;
    cfg.counts.trials = 200;
    let out = fig2::run_fig2(&cfg).unwrap();
    let r = &out.rows[0];
    let at_b = r.tail_at_b <= r.hoeffding_at_b + 3.0 * r.tail_at_b_se;
    let at_2b = r.tail_at_2b <= r.hoeffding_at_2b + 3.0 * r.tail_at_2b_se;
    let mut worst: f64 = 0.0;
    for b in [0.01, 0.5, 1.0, 3.7, 42.0] {
        for eps in [1e-6, 1e-3, 0.05, 0.5, 0.9] {
            let t = offset_for_confidence(b, eps).unwrap();
            worst = worst.max((hoeffding_tail(b, t).unwrap() - eps).abs());
        }
    }
    gate.check(
        5,
        "tail bound",
        r.trials + r.skipped == 2000 && at_b && at_2b && worst <= 1e-12,
        format!(
            "{} trials: P(d > 2B) = {:.4} vs {:.4}, P(d > 3B) = {:.4} vs {:.4}; offset round trip max error {worst:.1e}",
            r.trials, r.tail_at_b, r.hoeffding_at_b, r.tail_at_2b, r.hoeffding_at_2b
        ),
        start.elapsed(),
    );
}

/// 7. Accuracy ordering of intra- and inter-community deletions.
fn fig3_checks(gate: &mut Gate) {
    let start = Instant::now();
    let cfg = ExperimentConfig::defaults(ExperimentKind::Fig3);
    let out = fig3::run_fig3(&cfg).unwrap();
    let elapsed = start.elapsed();
    let k = cfg.counts.max_edges;
    let row = |f: f64| out.rows.iter().find(|r| r.k == k && r.intra_fraction == f).unwrap();
    let (intra, inter) = (row(1.0), row(0.0));
    let red = out.report.unperturbed.accuracy;
    let ordered = inter.accuracy < intra.accuracy && inter.ci_high < intra.ci_low;
    let close = (intra.accuracy - red).abs() <= 0.05;
    gate.check(
        7,
        "intra- vs inter-community accuracy",
        ordered && close && elapsed < Duration::from_secs(900),
        format!(
            "k = {k}: intra {:.3} [{:.3}, {:.3}], inter {:.3} [{:.3}, {:.3}], unperturbed {red:.3}",
            intra.accuracy, intra.ci_low, intra.ci_high, inter.accuracy, inter.ci_low, inter.ci_high
        ),
        elapsed,
    );
}

fn central_diff(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-6 * x.abs().max(1.0);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// 8. Structural identities.
fn identities(gate: &mut Gate) {
    let start = Instant::now();
    let mut worst_basis: f64 = 0.0;
    let mut worst_trace: f64 = 0.0;
    let mut worst_orth: f64 = 0.0;
    let mut worst_first: f64 = 0.0;
    let mut skipped = 0;
    for s in 0..20 {
        let g = generate_sbm(&sbm20(derive_seed(SEED, 3, s))).unwrap();
        let sd = eigendecompose(&laplacian(&g)).unwrap();
        for e in g.edges() {
            let t = per_edge_terms(&sd, e, Sign::Delete).unwrap();
            worst_basis = worst_basis.max((t.lambda_term.powi(2) + t.vector_term.powi(2) - 4.0).abs());
        }
        let policy = PerturbationPolicy::new(PolicyMode::FixedCountDelete { count: 3 }).connected();
        let p = sample_perturbation(&g, &policy, derive_seed(SEED, 4, s)).unwrap();
        let dl = delta_laplacian(&p, g.n());
        match first_order_perturbation(&sd, &dl, DEFAULT_GAP_TOL) {
            Err(Error::DegenerateSpectrum { .. }) => skipped += 1,
            other => {
                let pert = other.unwrap();
                worst_trace = worst_trace.max((pert.delta_lambda.sum() - dl.trace()).abs());
                worst_first = worst_first.max(pert.delta_lambda[0].abs());
                for i in 0..g.n() {
                    let d = sd.eigenvectors().column(i).dot(&pert.delta_u.column(i));
                    worst_orth = worst_orth.max(d.abs());
                }
            }
        }
    }

    // analytic gradients against central differences
    let mut worst_grad: f64 = 0.0;
    let g = generate_sbm(&sbm20(derive_seed(SEED, 5, 0))).unwrap();
    let task = LabeledNodeTask::from_raw_features(g, &gaussian_features(20, derive_seed(SEED, 6, 0))).unwrap();
    for sigma in [Nonlinearity::Tanh, Nonlinearity::Sigmoid, Nonlinearity::Relu] {
        let coeffs = vec![0.3, -0.05, 0.004, -0.0002];
        let layer = |c: &[f64]| GcnLayer::new(FilterSpec::new(c.to_vec()).unwrap(), sigma);
        let (_, grad) = node_loss_and_grad(&task, &layer(&coeffs));
        for k in 0..coeffs.len() {
            let fd = central_diff(
                |v| {
                    let mut c = coeffs.clone();
                    c[k] = v;
                    node_loss_and_grad(&task, &layer(&c)).0
                },
                coeffs[k],
            );
            worst_grad = worst_grad.max(rel_err(grad[k], fd));
        }
    }
    let graphs: Vec<Graph> = (0..12)
        .map(|i| {
            generate_sbm(&SbmParams {
                communities: vec![5, 5, 5],
                p_intra: 0.7,
                p_inter: 0.1,
                seed: derive_seed(SEED, 7, i),
                require_connected: true,
            })
            .unwrap()
        })
        .collect();
    let gtask = LabeledGraphTask::from_cut_sizes(graphs, 12, FeatureMode::CommunityCoded).unwrap();
    let tc = TrainConfig {
        nonlinearity: Nonlinearity::Tanh,
        ..TrainConfig::default()
    };
    let params = GraphParams {
        coeffs: vec![0.2, 0.05, -0.004, 0.0003],
        weight: 0.8,
        bias: -0.1,
    };
    let (_, grad) = graph_loss_and_grad(&gtask, &tc, &params).unwrap();
    let loss_at = |p: &GraphParams| graph_loss_and_grad(&gtask, &tc, p).unwrap().0;
    for k in 0..params.coeffs.len() {
        let fd = central_diff(
            |v| {
                let mut p = params.clone();
                p.coeffs[k] = v;
                loss_at(&p)
            },
            params.coeffs[k],
        );
        worst_grad = worst_grad.max(rel_err(grad.coeffs[k], fd));
    }
    let fd_w = central_diff(|v| loss_at(&GraphParams { weight: v, ..params.clone() }), params.weight);
    let fd_b = central_diff(|v| loss_at(&GraphParams { bias: v, ..params.clone() }), params.bias);
    worst_grad = worst_grad.max(rel_err(grad.weight, fd_w)).max(rel_err(grad.bias, fd_b));

    // vertex-domain filter against U h(Λ) Uᵀ x
    let mut worst_filter: f64 = 0.0;
    for s in 0..10 {
        let g = generate_sbm(&sbm20(derive_seed(SEED, 8, s))).unwrap();
        let l = laplacian(&g);
        let sd = eigendecompose(&l).unwrap();
        let f = FilterSpec::new(vec![0.5, -0.2, 0.03, -0.001]).unwrap();
        let x = gaussian_features(20, derive_seed(SEED, 9, s));
        let vertex = filter_apply(&f, &l, &x).unwrap();
        let u = sd.eigenvectors();
        let h = DMatrix::from_diagonal(&sd.eigenvalues().map(|lam| frequency_response(&f, lam)));
        let spectral = u * h * u.transpose() * &x;
        worst_filter = worst_filter.max((vertex - &spectral).amax() / spectral.amax().max(1.0));
    }

    let mut small = ExperimentConfig::defaults(ExperimentKind::Fig1);
    small.counts.graphs = 2;
    small.counts.trials = 5;
    small.counts.max_edges = 3;
    let a = execute(&small).unwrap();
    let b = execute(&small).unwrap();
    let same = a.results_csv == b.results_csv && a.report_json == b.report_json;

    let elapsed = start.elapsed();
    let ok = worst_basis <= 1e-10
        && worst_trace <= 1e-10
        && worst_orth <= 1e-10
        && worst_first <= 1e-10
        && worst_grad < 1e-5
        && worst_filter <= 1e-8
        && same
        && elapsed < Duration::from_secs(10);
    gate.check(
        8,
        "structural identities",
        ok,
        format!(
            "basis identity {worst_basis:.1e}, trace {worst_trace:.1e}, orthogonality {worst_orth:.1e}, \
             first shift {worst_first:.1e} ({skipped} degenerate), gradient {worst_grad:.1e}, \
             spectral filter {worst_filter:.1e}, byte-identical rerun {same}"
        ),
        elapsed,
    );
}

fn two_cliques_with_bridge() -> Graph {
    let mut edges = Vec::new();
    for base in [0, 5] {
        for a in 0..5 {
            for b in a + 1..5 {
                edges.push(Edge::new(base + a, base + b).unwrap());
            }
        }
    }
    edges.push(Edge::new(4, 5).unwrap());
    Graph::with_communities(10, edges, Some(vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1])).unwrap()
}

/// 9. Ranking of edges by their single-edge bound.
fn edge_criticality(gate: &mut Gate) {
    let start = Instant::now();
    let cfg = ExperimentConfig::defaults(ExperimentKind::EdgeCriticality);
    let bridge = edges::rank_graphs(&cfg, vec![two_cliques_with_bridge()]).unwrap();
    let top = bridge.report.graphs[0].top;
    let bridge_rank = bridge
        .rows
        .iter()
        .find(|r| (r.source, r.target) == (4, 5))
        .map(|r| r.rank)
        .unwrap();
    let sbm = edges::run_edge_criticality(&cfg).unwrap();
    let means = sbm.report.by_kind.clone().unwrap();
    let mut fiedler_cfg = cfg.clone();
    fiedler_cfg.policy.rank_by = RankKey::FiedlerShift;
    let fiedler_top = edges::rank_graphs(&fiedler_cfg, vec![two_cliques_with_bridge()]).unwrap().report.graphs[0].top;
    let ok = top == Some([4, 5]) && means.inter_mean_score > means.intra_mean_score;
    gate.check(
        9,
        "edge criticality",
        ok,
        format!(
            "ranked by single-edge bound: bridge rank {bridge_rank} of {}, top {:?}; SBM mean score inter {:.3} vs intra {:.3} \
             (lambda term inter {:.3} vs intra {:.3}; Fiedler shift inter {:.4} vs intra {:.4}, Fiedler key top {:?})",
            bridge.rows.len(),
            top,
            means.inter_mean_score,
            means.intra_mean_score,
            means.inter_mean_lambda_term,
            means.intra_mean_lambda_term,
            means.inter_mean_fiedler_shift,
            means.intra_mean_fiedler_shift,
            fiedler_top
        ),
        start.elapsed(),
    );
}

fn main() -> ExitCode {
    let mut gate = Gate { failed: 0 };
    first_order_accuracy(&mut gate);
    exactness_spot_check(&mut gate);
    fig1_checks(&mut gate);
    fig2_checks(&mut gate);
    tail_checks(&mut gate);
    fig3_checks(&mut gate);
    identities(&mut gate);
    edge_criticality(&mut gate);
    println!("{} hard criteria failed", gate.failed);
    if gate.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
