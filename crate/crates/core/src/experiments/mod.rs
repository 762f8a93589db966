//! Seeded Monte Carlo experiments on SBM graphs.
//!
//! All randomness flows from the config's base seed through
//! [`derive_seed`](crate::random::derive_seed): graph `g` uses stream
//! [`STREAM_GRAPH`] with index `g`, and trial `t` on graph `g` uses stream
//! `STREAM_TRIAL + g` with an experiment-specific index. Trials run on a
//! rayon pool and are reduced in index order, so tables do not depend on
//! thread count.

pub mod edges;
pub mod fig1;
pub mod fig2;
pub mod fig3;

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bounds::{
    deterministic_bound_with, naive_baseline_bound, per_edge_terms_with, BoundReport, BoundVariant,
    PerEdgeTerms, TermOptions,
};
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{Error, Result};
use crate::gcn::{lipschitz_constant, output_distance, perturbed_interval, GcnLayer};
use crate::graph::{apply_perturbation, delta_laplacian, laplacian, Edge, EdgePerturbation, Graph, Sign};
use crate::random::{derive_seed, gaussian_features, generate_sbm};
use crate::spectral::{eigendecompose, eigengap_report, first_order_perturbation_edges, SpectralDecomposition};
use crate::training::{node_accuracy, train_node_classifier, LabeledNodeTask, Readout};

pub const STREAM_GRAPH: u64 = 1;
pub const STREAM_FEATURES: u64 = 2;
pub const STREAM_INIT: u64 = 3;
pub const STREAM_EVAL: u64 = 8;
pub const STREAM_TRIAL: u64 = 16;

/// Human-readable form of the seed derivation, stored in manifests.
pub const TRIAL_SEED_RULE: &str =
    "derive_seed(base, stream, index) = base + (stream << 40) + index; graph g: stream 1, index g; \
     trial on graph g: stream 16 + g";

/// Trials flagged degenerate beyond this share mark the run as failed.
pub const MAX_SKIP_RATE: f64 = 0.05;

pub fn graph_seed(base: u64, g: usize) -> u64 {
    derive_seed(base, STREAM_GRAPH, g as u64)
}

pub fn trial_seed(base: u64, g: usize, index: u64) -> u64 {
    derive_seed(base, STREAM_TRIAL + g as u64, index)
}

/// Pairwise (cascade) summation in index order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n if n <= 8 => v.iter().sum(),
        n => {
            let (a, b) = v.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Mean and standard error of the mean (0 for fewer than two values).
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = pairwise_sum(v) / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// A generated graph and the seed that regenerates it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub index: usize,
    pub seed: u64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub params: crate::config::GraphConfig,
    pub graphs: Vec<DatasetEntry>,
}

/// Generates graph `g` of a run.
pub fn sample_graph(cfg: &ExperimentConfig, g: usize) -> Result<Graph> {
    generate_sbm(&cfg.sbm(graph_seed(cfg.seed, g)))
}

pub fn sample_graphs(cfg: &ExperimentConfig, count: usize) -> Result<Vec<Graph>> {
    (0..count).map(|g| sample_graph(cfg, g)).collect()
}

/// Degenerate-trial accounting of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkipSummary {
    pub trials: usize,
    pub skipped: usize,
    pub skip_rate: f64,
    pub flagged: bool,
}

impl SkipSummary {
    pub fn new(trials: usize, skipped: usize) -> Self {
        let skip_rate = if trials == 0 { 0.0 } else { skipped as f64 / trials as f64 };
        SkipSummary {
            trials,
            skipped,
            skip_rate,
            flagged: skip_rate > MAX_SKIP_RATE,
        }
    }
}

/// What a run wrote and whether it should be flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub experiment: ExperimentKind,
    pub rows: usize,
    pub skips: SkipSummary,
    pub graphs: Vec<Graph>,
    pub graph_seeds: Vec<u64>,
}

/// The serialised artefacts of a run, before they touch the disk.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub results_csv: Vec<u8>,
    pub report_json: Vec<u8>,
    pub train_log: Option<Vec<u8>>,
    pub summary: RunSummary,
}

pub fn csv_bytes<R: Serialize>(rows: &[R]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| Error::Csv(csv::Error::from(e.into_error())))
}

pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    Ok(text)
}

/// Runs the configured experiment in memory.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let (results_csv, report_json, train_log, rows, skips, graphs) = match cfg.experiment {
        ExperimentKind::Fig1 => {
            let out = fig1::run_fig1(cfg)?;
            let s = out.report.skips;
            (csv_bytes(&out.rows)?, json_bytes(&out.report)?, None, out.rows.len(), s, out.graphs)
        }
        ExperimentKind::Fig2 => {
            let out = fig2::run_fig2(cfg)?;
            let s = out.report.skips;
            (csv_bytes(&out.rows)?, json_bytes(&out.report)?, None, out.rows.len(), s, out.graphs)
        }
        ExperimentKind::Fig3 => {
            let out = fig3::run_fig3(cfg)?;
            let log = out.training.log_bytes()?;
            let s = SkipSummary::new(0, 0);
            (csv_bytes(&out.rows)?, json_bytes(&out.report)?, Some(log), out.rows.len(), s, out.graphs)
        }
        ExperimentKind::EdgeCriticality => {
            let out = edges::run_edge_criticality(cfg)?;
            let s = SkipSummary::new(0, 0);
            (csv_bytes(&out.rows)?, json_bytes(&out.report)?, None, out.rows.len(), s, out.graphs)
        }
    };
    let graph_seeds = if cfg.experiment == ExperimentKind::EdgeCriticality && cfg.policy.graph_file.is_some() {
        Vec::new()
    } else {
        (0..graphs.len()).map(|g| graph_seed(cfg.seed, g)).collect()
    };
    Ok(RunArtifacts {
        results_csv,
        report_json,
        train_log,
        summary: RunSummary {
            experiment: cfg.experiment,
            rows,
            skips,
            graphs,
            graph_seeds,
        },
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Runs the experiment and writes `results.csv`, `report.json`,
/// `dataset.json` with `graphs/`, and for fig3 `train_log.csv` into `dir`.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<RunSummary> {
    let art = execute(cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_bytes(&dir.join("results.csv"), &art.results_csv)?;
    write_bytes(&dir.join("report.json"), &art.report_json)?;
    if let Some(log) = &art.train_log {
        write_bytes(&dir.join("train_log.csv"), log)?;
    }
    write_dataset(cfg, dir, &art.summary.graphs, &art.summary.graph_seeds)?;
    Ok(art.summary)
}

fn write_dataset(cfg: &ExperimentConfig, dir: &Path, graphs: &[Graph], seeds: &[u64]) -> Result<()> {
    let gdir = dir.join("graphs");
    std::fs::create_dir_all(&gdir).map_err(|e| Error::io(&gdir, e))?;
    let mut entries = Vec::with_capacity(graphs.len());
    for (i, g) in graphs.iter().enumerate() {
        let file = format!("graphs/graph_{i:04}.json");
        g.save(&dir.join(&file))?;
        entries.push(DatasetEntry {
            index: i,
            seed: seeds.get(i).copied().unwrap_or(0),
            file,
        });
    }
    write_json(
        &Dataset {
            params: cfg.graph.clone(),
            graphs: entries,
        },
        &dir.join("dataset.json"),
    )
}

/// Per-trial quantities of one perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialEval {
    pub distance: f64,
    pub bound: f64,
    pub bound_as_printed: f64,
    pub bound_gap_weighted: f64,
    pub baseline: f64,
}

/// A graph with everything that does not change between trials: its
/// spectrum, a trained layer, the input signal and the per-edge terms of
/// every existing edge under both variants.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub graph: Graph,
    pub laplacian: DMatrix<f64>,
    pub spectrum: SpectralDecomposition,
    pub features: DVector<f64>,
    pub layer: GcnLayer,
    pub variant: BoundVariant,
    pub gap_tol: f64,
    /// `C_L` over `[0, λ_max]`, which holds every deletion-only spectrum.
    pub c_filter: f64,
    terms: BTreeMap<Edge, (PerEdgeTerms, PerEdgeTerms)>,
}

impl PreparedGraph {
    pub fn new(
        graph: Graph,
        features: DVector<f64>,
        layer: GcnLayer,
        variant: BoundVariant,
        gap_tol: f64,
    ) -> Result<Self> {
        let laplacian = laplacian(&graph);
        let spectrum = eigendecompose(&laplacian)?;
        let c_filter = lipschitz_constant(&layer.filter, spectrum.lambda_max());
        let mut prepared = PreparedGraph {
            graph,
            laplacian,
            spectrum,
            features,
            layer,
            variant,
            gap_tol,
            c_filter,
            terms: BTreeMap::new(),
        };
        let edges: Vec<Edge> = prepared.graph.edges().collect();
        for e in edges {
            let t = prepared.edge_terms(e, Sign::Delete)?;
            prepared.terms.insert(e, t);
        }
        Ok(prepared)
    }

    pub fn c_sigma(&self) -> f64 {
        self.layer.nonlinearity.lipschitz()
    }

    /// Per-edge terms `(as printed, gap weighted)`.
    pub fn edge_terms(&self, e: Edge, sign: Sign) -> Result<(PerEdgeTerms, PerEdgeTerms)> {
        if let Some(&(a, b)) = self.terms.get(&e) {
            return Ok((PerEdgeTerms { sign, ..a }, PerEdgeTerms { sign, ..b }));
        }
        let opts = |variant| TermOptions {
            variant,
            gap_tol: self.gap_tol,
        };
        Ok((
            per_edge_terms_with(&self.spectrum, e, sign, opts(BoundVariant::AsPrinted))?,
            per_edge_terms_with(&self.spectrum, e, sign, opts(BoundVariant::GapWeighted))?,
        ))
    }

    /// `C_L` for a perturbation with `insertions` inserted edges. Each
    /// insertion raises `λ_max` by at most 2, and no Laplacian on `N` nodes
    /// exceeds `N`.
    pub fn c_filter_for(&self, insertions: usize) -> f64 {
        if insertions == 0 {
            return self.c_filter;
        }
        let top = perturbed_interval(self.spectrum.lambda_max(), insertions).min(self.graph.n() as f64);
        lipschitz_constant(&self.layer.filter, top)
    }

    /// Bound values of a perturbation under both variants, with the filter
    /// constant supplied.
    pub fn bounds(&self, p: &EdgePerturbation, c_filter: f64) -> Result<(f64, f64)> {
        let c = c_filter * self.c_sigma();
        let n = self.graph.n();
        let mut ap = 0.0;
        let mut gw = 0.0;
        for &(e, s) in p.items() {
            let (a, b) = self.edge_terms(e, s)?;
            ap += a.bound(c, n);
            gw += b.bound(c, n);
        }
        Ok((ap, gw))
    }

    fn pick(&self, ap: f64, gw: f64) -> f64 {
        match self.variant {
            BoundVariant::AsPrinted => ap,
            BoundVariant::GapWeighted => gw,
        }
    }

    /// Exact output distance against the bound computed from the
    /// unperturbed spectrum. `None` when the perturbation couples a
    /// degenerate eigenvalue pair.
    pub fn evaluate(&self, p: &EdgePerturbation) -> Result<Option<TrialEval>> {
        match first_order_perturbation_edges(&self.spectrum, p, self.gap_tol) {
            Err(Error::DegenerateSpectrum { .. }) => return Ok(None),
            Err(e) => return Err(e),
            Ok(_) => {}
        }
        let perturbed = laplacian(&apply_perturbation(&self.graph, p)?);
        let distance = output_distance(&self.layer, &self.laplacian, &perturbed, &self.features)?;
        let c_filter = self.c_filter_for(p.insertion_count());
        let (ap, gw) = self.bounds(p, c_filter)?;
        let dl = delta_laplacian(p, self.graph.n());
        Ok(Some(TrialEval {
            distance,
            bound: self.pick(ap, gw),
            bound_as_printed: ap,
            bound_gap_weighted: gw,
            baseline: naive_baseline_bound(&dl, c_filter, self.c_sigma()),
        }))
    }

    pub fn bound_report(&self, p: &EdgePerturbation) -> Result<BoundReport> {
        deterministic_bound_with(
            &self.spectrum,
            p,
            self.c_filter_for(p.insertion_count()),
            self.c_sigma(),
            TermOptions {
                variant: self.variant,
                gap_tol: self.gap_tol,
            },
        )
    }
}

/// Per-graph facts recorded in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub index: usize,
    pub seed: u64,
    pub n: usize,
    pub edges: usize,
    pub lambda_max: f64,
    pub min_gap: f64,
    pub c_filter: f64,
    pub c_sigma: f64,
    pub coefficients: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_accuracy: Option<f64>,
}

impl GraphSummary {
    pub fn of(p: &PreparedGraph, index: usize, seed: u64, train_accuracy: Option<f64>) -> Self {
        let gap = eigengap_report(&p.spectrum, p.gap_tol).min_gap;
        GraphSummary {
            index,
            seed,
            n: p.graph.n(),
            edges: p.graph.edge_count(),
            lambda_max: p.spectrum.lambda_max(),
            min_gap: if gap.is_finite() { gap } else { 0.0 },
            c_filter: p.c_filter,
            c_sigma: p.c_sigma(),
            coefficients: p.layer.filter.coeffs().to_vec(),
            train_accuracy,
        }
    }
}

/// The node-classification setup shared by fig1 and fig2: graph `g` with
/// seeded Gaussian features and a classifier trained on their signs.
pub fn prepare_node_task(cfg: &ExperimentConfig, g: usize) -> Result<(PreparedGraph, GraphSummary)> {
    let seed = graph_seed(cfg.seed, g);
    let graph = sample_graph(cfg, g)?;
    let raw = gaussian_features(graph.n(), derive_seed(cfg.seed, STREAM_FEATURES, g as u64));
    let task = LabeledNodeTask::from_raw_features(graph, &raw)?;
    let mut tc = cfg.train_config(derive_seed(cfg.seed, STREAM_INIT, g as u64));
    tc.readout = Readout::None;
    let trained = train_node_classifier(&task, &tc)?;
    let acc = node_accuracy(&trained.model, &task)?;
    let prepared = PreparedGraph::new(
        task.graph,
        task.features,
        trained.model,
        cfg.bound.variant,
        cfg.bound.gap_tol,
    )?;
    let summary = GraphSummary::of(&prepared, g, seed, Some(acc));
    Ok((prepared, summary))
}
