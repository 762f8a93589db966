//! Monte Carlo output distance under Bernoulli edge perturbations against
//! the closed-form expected bound, with empirical tail frequencies.
//!
//! Trial `t` on a graph uses the same seed at every probability, so the
//! draws are coupled across the grid and the curves are smooth in `p`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mean_se, pairwise_sum, prepare_node_task, trial_seed, GraphSummary, PreparedGraph, SkipSummary};
use crate::bounds::{hoeffding_tail, BoundVariant};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::graph::{Graph, Sign};
use crate::random::{bernoulli_candidates, sample_perturbation, PerturbationPolicy, PolicyMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2Row {
    pub p: f64,
    pub trials: usize,
    pub skipped: usize,
    pub mean_distance: f64,
    pub se_distance: f64,
    /// Mean over graphs of the expected bound `B`.
    pub expected_bound: f64,
    pub expected_bound_as_printed: f64,
    pub expected_bound_gap_weighted: f64,
    pub mean_perturbed_edges: f64,
    /// Share of trials with distance above `B + t` at `t = B`.
    pub tail_at_b: f64,
    pub tail_at_b_se: f64,
    pub hoeffding_at_b: f64,
    /// Same at `t = 2B`.
    pub tail_at_2b: f64,
    pub tail_at_2b_se: f64,
    pub hoeffding_at_2b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2Report {
    pub experiment: String,
    pub variant: BoundVariant,
    pub include_insertions: bool,
    pub skips: SkipSummary,
    pub graphs: Vec<GraphSummary>,
}

#[derive(Debug, Clone)]
pub struct Fig2Output {
    pub rows: Vec<Fig2Row>,
    pub report: Fig2Report,
    pub graphs: Vec<Graph>,
}

/// Expected bounds `(configured, as printed, gap weighted)` of one graph.
fn expected_bounds(pg: &PreparedGraph, p: f64, include_insertions: bool) -> Result<(f64, f64, f64)> {
    let cands = bernoulli_candidates(&pg.graph, p, include_insertions);
    let insertable = cands.iter().filter(|c| c.sign == Sign::Insert).count();
    let c = pg.c_filter_for(insertable) * pg.c_sigma();
    let n = pg.graph.n();
    let mut ap = Vec::with_capacity(cands.len());
    let mut gw = Vec::with_capacity(cands.len());
    for cand in &cands {
        let (a, b) = pg.edge_terms(cand.edge, cand.sign)?;
        ap.push(cand.probability * a.bound(c, n));
        gw.push(cand.probability * b.bound(c, n));
    }
    let (ap, gw) = (pairwise_sum(&ap), pairwise_sum(&gw));
    let chosen = match pg.variant {
        BoundVariant::AsPrinted => ap,
        BoundVariant::GapWeighted => gw,
    };
    Ok((chosen, ap, gw))
}

fn frequency(hits: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 0.0);
    }
    let f = hits as f64 / n as f64;
    (f, (f * (1.0 - f) / n as f64).sqrt())
}

pub fn run_fig2(cfg: &ExperimentConfig) -> Result<Fig2Output> {
    cfg.validate()?;
    let prepared = (0..cfg.counts.graphs)
        .into_par_iter()
        .map(|g| prepare_node_task(cfg, g))
        .collect::<Result<Vec<_>>>()?;
    let trials = cfg.counts.trials;
    let insertions = cfg.bound.include_insertions;
    let mut rows = Vec::new();
    let (mut total, mut skipped) = (0, 0);
    for &p in &cfg.counts.probabilities {
        let per_graph = prepared
            .iter()
            .map(|(pg, _)| expected_bounds(pg, p, insertions))
            .collect::<Result<Vec<_>>>()?;
        let policy = PerturbationPolicy::new(PolicyMode::BernoulliAllEdges {
            p,
            include_insertions: insertions,
        })
        .connected();
        let jobs: Vec<(usize, usize)> = (0..prepared.len())
            .flat_map(|g| (0..trials).map(move |t| (g, t)))
            .collect();
        let evals = jobs
            .par_iter()
            .map(|&(g, t)| {
                let pg = &prepared[g].0;
                let pert = sample_perturbation(&pg.graph, &policy, trial_seed(cfg.seed, g, t as u64))?;
                Ok(pg.evaluate(&pert)?.map(|e| (g, e.distance, pert.len())))
            })
            .collect::<Result<Vec<_>>>()?;
        let done: Vec<(usize, f64, usize)> = evals.iter().flatten().copied().collect();
        total += evals.len();
        skipped += evals.len() - done.len();
        let distances: Vec<f64> = done.iter().map(|d| d.1).collect();
        let sizes: Vec<f64> = done.iter().map(|d| d.2 as f64).collect();
        let (mean_distance, se_distance) = mean_se(&distances);
        let above = |mult: f64| {
            done.iter()
                .filter(|&&(g, d, _)| d > mult * per_graph[g].0)
                .count()
        };
        let (tail_at_b, tail_at_b_se) = frequency(above(2.0), done.len());
        let (tail_at_2b, tail_at_2b_se) = frequency(above(3.0), done.len());
        let col = |i: usize| {
            let v: Vec<f64> = per_graph.iter().map(|b| [b.0, b.1, b.2][i]).collect();
            mean_se(&v).0
        };
        rows.push(Fig2Row {
            p,
            trials: done.len(),
            skipped: evals.len() - done.len(),
            mean_distance,
            se_distance,
            expected_bound: col(0),
            expected_bound_as_printed: col(1),
            expected_bound_gap_weighted: col(2),
            mean_perturbed_edges: mean_se(&sizes).0,
            tail_at_b,
            tail_at_b_se,
            // exp(−t²/4B²) depends on t/B only
            hoeffding_at_b: hoeffding_tail(1.0, 1.0)?,
            tail_at_2b,
            tail_at_2b_se,
            hoeffding_at_2b: hoeffding_tail(1.0, 2.0)?,
        });
    }
    let (graphs, summaries): (Vec<Graph>, Vec<GraphSummary>) =
        prepared.into_iter().map(|(p, s)| (p.graph, s)).unzip();
    Ok(Fig2Output {
        rows,
        report: Fig2Report {
            experiment: cfg.experiment.id().into(),
            variant: cfg.bound.variant,
            include_insertions: insertions,
            skips: SkipSummary::new(total, skipped),
            graphs: summaries,
        },
        graphs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentKind;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::Fig2);
        cfg.graph.communities = vec![6, 6];
        cfg.counts.graphs = 2;
        cfg.counts.trials = 10;
        cfg.counts.probabilities = vec![0.01, 0.1];
        cfg.model.epochs = 50;
        cfg
    }

    #[test]
    fn small_run_respects_expected_bound() {
        let out = run_fig2(&small()).unwrap();
        assert_eq!(out.rows.len(), 2);
        for r in &out.rows {
            assert!(r.mean_distance <= r.expected_bound);
            assert!((r.hoeffding_at_b - (-0.25f64).exp()).abs() < 1e-15);
        }
        assert!(out.rows[0].expected_bound < out.rows[1].expected_bound);
    }

    #[test]
    fn insertions_enlarge_bound() {
        let mut cfg = small();
        let base = run_fig2(&cfg).unwrap();
        cfg.bound.include_insertions = true;
        let ins = run_fig2(&cfg).unwrap();
        assert!(ins.rows[1].expected_bound > base.rows[1].expected_bound);
        assert!(ins.rows[1].mean_distance <= ins.rows[1].expected_bound);
    }
}
