//! Output distance against the deterministic bound for an increasing number
//! of deleted edges.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mean_se, prepare_node_task, trial_seed, GraphSummary, PreparedGraph, SkipSummary, TrialEval};
use crate::bounds::{BoundReport, BoundVariant, BASELINE_LABEL};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::graph::{EdgePerturbation, Graph};
use crate::random::{sample_perturbation, PerturbationPolicy, PolicyMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig1Row {
    pub k: usize,
    pub trials: usize,
    pub skipped: usize,
    pub mean_distance: f64,
    pub se_distance: f64,
    pub mean_bound: f64,
    pub se_bound: f64,
    pub mean_bound_as_printed: f64,
    pub mean_bound_gap_weighted: f64,
    pub mean_baseline: f64,
    pub se_baseline: f64,
    /// Trials whose distance exceeds the bound.
    pub violations: usize,
    /// Trials whose bound is at most the baseline.
    pub bound_below_baseline: usize,
}

impl Fig1Row {
    pub(crate) fn from_evals(k: usize, evals: &[Option<TrialEval>]) -> Self {
        let done: Vec<&TrialEval> = evals.iter().flatten().collect();
        let col = |f: fn(&TrialEval) -> f64| done.iter().map(|e| f(e)).collect::<Vec<f64>>();
        let (mean_distance, se_distance) = mean_se(&col(|e| e.distance));
        let (mean_bound, se_bound) = mean_se(&col(|e| e.bound));
        let (mean_baseline, se_baseline) = mean_se(&col(|e| e.baseline));
        Fig1Row {
            k,
            trials: done.len(),
            skipped: evals.len() - done.len(),
            mean_distance,
            se_distance,
            mean_bound,
            se_bound,
            mean_bound_as_printed: mean_se(&col(|e| e.bound_as_printed)).0,
            mean_bound_gap_weighted: mean_se(&col(|e| e.bound_gap_weighted)).0,
            mean_baseline,
            se_baseline,
            violations: done.iter().filter(|e| e.distance > e.bound).count(),
            bound_below_baseline: done.iter().filter(|e| e.bound <= e.baseline).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig1Report {
    pub experiment: String,
    pub variant: BoundVariant,
    pub baseline: String,
    pub skips: SkipSummary,
    pub graphs: Vec<GraphSummary>,
    /// Bound breakdown of trial 0 on graph 0 at every k ≥ 1.
    pub example_bounds: Vec<BoundReport>,
}

#[derive(Debug, Clone)]
pub struct Fig1Output {
    pub rows: Vec<Fig1Row>,
    pub report: Fig1Report,
    pub graphs: Vec<Graph>,
    /// Trial evaluations indexed `[k][graph * trials + trial]`.
    pub evals: Vec<Vec<Option<TrialEval>>>,
}

fn perturbation(cfg: &ExperimentConfig, g: &PreparedGraph, gi: usize, k: usize, t: usize) -> Result<EdgePerturbation> {
    if k == 0 {
        return Ok(EdgePerturbation::empty());
    }
    let policy = PerturbationPolicy::new(PolicyMode::FixedCountDelete { count: k }).connected();
    let index = (k * cfg.counts.trials + t) as u64;
    sample_perturbation(&g.graph, &policy, trial_seed(cfg.seed, gi, index))
}

pub fn run_fig1(cfg: &ExperimentConfig) -> Result<Fig1Output> {
    cfg.validate()?;
    let prepared = (0..cfg.counts.graphs)
        .into_par_iter()
        .map(|g| prepare_node_task(cfg, g))
        .collect::<Result<Vec<_>>>()?;
    let trials = cfg.counts.trials;
    let mut rows = Vec::new();
    let mut evals = Vec::new();
    for k in 0..=cfg.counts.max_edges {
        let jobs: Vec<(usize, usize)> = (0..prepared.len())
            .flat_map(|g| (0..trials).map(move |t| (g, t)))
            .collect();
        let at_k = jobs
            .par_iter()
            .map(|&(g, t)| {
                let pg = &prepared[g].0;
                let p = perturbation(cfg, pg, g, k, t)?;
                pg.evaluate(&p)
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(Fig1Row::from_evals(k, &at_k));
        evals.push(at_k);
    }
    let mut example_bounds = Vec::new();
    if let Some((pg, _)) = prepared.first() {
        for k in 1..=cfg.counts.max_edges {
            example_bounds.push(pg.bound_report(&perturbation(cfg, pg, 0, k, 0)?)?);
        }
    }
    let total: usize = rows.iter().map(|r| r.trials + r.skipped).sum();
    let skipped: usize = rows.iter().map(|r| r.skipped).sum();
    let (graphs, summaries): (Vec<Graph>, Vec<GraphSummary>) =
        prepared.into_iter().map(|(p, s)| (p.graph, s)).unzip();
    Ok(Fig1Output {
        rows,
        report: Fig1Report {
            experiment: cfg.experiment.id().into(),
            variant: cfg.bound.variant,
            baseline: BASELINE_LABEL.into(),
            skips: SkipSummary::new(total, skipped),
            graphs: summaries,
            example_bounds,
        },
        graphs,
        evals,
    })
}
