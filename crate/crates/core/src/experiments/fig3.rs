//! Cut-size graph classification under intra- and inter-community edge
//! deletions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mean_se, pairwise_sum, sample_graphs, PreparedGraph, STREAM_EVAL, STREAM_INIT};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::graph::{apply_perturbation, laplacian, Graph, Sign};
use crate::random::{derive_seed, sample_perturbation, PerturbationPolicy, PolicyMode};
use crate::training::{
    evaluate_accuracy, train_graph_classifier, AccuracyReport, GraphClassifier, LabeledGraphTask, Trained,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig3Row {
    pub intra_fraction: f64,
    pub k: usize,
    pub evaluations: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub mean_removed_intra: f64,
    pub mean_removed_inter: f64,
    /// Node-output distance and its bound over non-degenerate draws.
    pub mean_distance: f64,
    pub mean_bound: f64,
    pub bound_trials: usize,
}

/// Mean per-edge quantities split by edge kind, with `C = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeKindStats {
    pub intra_edges: usize,
    pub inter_edges: usize,
    pub intra_mean_lambda_term: f64,
    pub inter_mean_lambda_term: f64,
    pub intra_mean_bound: f64,
    pub inter_mean_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig3Report {
    pub experiment: String,
    pub train_graphs: usize,
    pub test_graphs: usize,
    pub positive_share: f64,
    pub train_accuracy: AccuracyReport,
    /// Test accuracy without perturbation.
    pub unperturbed: AccuracyReport,
    pub final_loss: f64,
    pub edge_terms: EdgeKindStats,
    pub classifier: GraphClassifier,
}

#[derive(Debug, Clone)]
pub struct Fig3Output {
    pub rows: Vec<Fig3Row>,
    pub report: Fig3Report,
    pub training: Trained<GraphClassifier>,
    pub task: LabeledGraphTask,
    pub graphs: Vec<Graph>,
}

pub fn edge_kind_stats(prepared: &[PreparedGraph]) -> Result<EdgeKindStats> {
    let (mut li, mut lo, mut bi, mut bo) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for pg in prepared {
        let n = pg.graph.n();
        for e in pg.graph.edges() {
            let (t, _) = pg.edge_terms(e, Sign::Delete)?;
            let (l, b) = if pg.graph.is_intra(e) == Some(true) {
                (&mut li, &mut bi)
            } else {
                (&mut lo, &mut bo)
            };
            l.push(t.lambda_term);
            b.push(t.bound(1.0, n));
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { pairwise_sum(v) / v.len() as f64 };
    Ok(EdgeKindStats {
        intra_edges: li.len(),
        inter_edges: lo.len(),
        intra_mean_lambda_term: mean(&li),
        inter_mean_lambda_term: mean(&lo),
        intra_mean_bound: mean(&bi),
        inter_mean_bound: mean(&bo),
    })
}

/// Evaluation seed of curve `policy` at `k` deletions; draw `t` on test
/// graph `i` then uses `derive_seed(eval_seed, i, t)`, as in
/// [`evaluate_accuracy`].
pub fn eval_seed(base: u64, policy: usize, k: usize) -> u64 {
    derive_seed(base, STREAM_EVAL + policy as u64, k as u64)
}

pub fn run_fig3(cfg: &ExperimentConfig) -> Result<Fig3Output> {
    cfg.validate()?;
    let c = &cfg.counts;
    let graphs = sample_graphs(cfg, c.train_graphs + c.test_graphs)?;
    let task = LabeledGraphTask::from_cut_sizes(graphs.clone(), c.train_graphs, cfg.model.features)?;
    let training = train_graph_classifier(&task, &cfg.train_config(derive_seed(cfg.seed, STREAM_INIT, 0)))?;
    let model = &training.model;
    let mut train_view = task.clone();
    train_view.test = task.train.clone();
    let train_accuracy = evaluate_accuracy(model, &train_view, None, 1, 0)?;
    let unperturbed = evaluate_accuracy(model, &task, None, 1, 0)?;

    let prepared = task
        .test
        .par_iter()
        .map(|&i| {
            let g = task.graphs[i].clone();
            let x = task.features.features(&g)?;
            PreparedGraph::new(g, x, model.layer.clone(), cfg.bound.variant, cfg.bound.gap_tol)
        })
        .collect::<Result<Vec<_>>>()?;
    let all_prepared = task
        .graphs
        .par_iter()
        .map(|g| {
            let x = task.features.features(g)?;
            PreparedGraph::new(g.clone(), x, model.layer.clone(), cfg.bound.variant, cfg.bound.gap_tol)
        })
        .collect::<Result<Vec<_>>>()?;
    let edge_terms = edge_kind_stats(&all_prepared)?;

    let mut rows = Vec::new();
    for (pi, &fraction) in cfg.policy.intra_fractions.iter().enumerate() {
        for k in 0..=c.max_edges {
            let policy = PerturbationPolicy::new(PolicyMode::ClusterMix {
                count: k,
                intra_fraction: fraction,
            })
            .clamped();
            let seed = eval_seed(cfg.seed, pi, k);
            let jobs: Vec<(usize, usize)> = (0..c.trials)
                .flat_map(|t| (0..prepared.len()).map(move |j| (t, j)))
                .collect();
            let outcomes = jobs
                .par_iter()
                .map(|&(t, j)| {
                    let i = task.test[j];
                    let pg = &prepared[j];
                    let p = sample_perturbation(&pg.graph, &policy, derive_seed(seed, i as u64, t as u64))?;
                    let l = laplacian(&apply_perturbation(&pg.graph, &p)?);
                    let hit = model.predict(&l, &pg.features)? == task.labels[i];
                    let intra = p.items().iter().filter(|(e, _)| pg.graph.is_intra(*e) == Some(true)).count();
                    let eval = pg.evaluate(&p)?;
                    Ok((hit, intra, p.len() - intra, eval))
                })
                .collect::<Result<Vec<_>>>()?;
            let correct = outcomes.iter().filter(|o| o.0).count();
            let acc = AccuracyReport::from_counts(correct, outcomes.len());
            let intra: Vec<f64> = outcomes.iter().map(|o| o.1 as f64).collect();
            let inter: Vec<f64> = outcomes.iter().map(|o| o.2 as f64).collect();
            let evals: Vec<_> = outcomes.iter().filter_map(|o| o.3).collect();
            let dist: Vec<f64> = evals.iter().map(|e| e.distance).collect();
            let bound: Vec<f64> = evals.iter().map(|e| e.bound).collect();
            rows.push(Fig3Row {
                intra_fraction: fraction,
                k,
                evaluations: acc.total,
                correct,
                accuracy: acc.accuracy,
                ci_low: acc.ci_low,
                ci_high: acc.ci_high,
                mean_removed_intra: mean_se(&intra).0,
                mean_removed_inter: mean_se(&inter).0,
                mean_distance: mean_se(&dist).0,
                mean_bound: mean_se(&bound).0,
                bound_trials: evals.len(),
            });
        }
    }
    let positive = task.labels.iter().filter(|&&l| l == 1).count();
    let report = Fig3Report {
        experiment: cfg.experiment.id().into(),
        train_graphs: task.train.len(),
        test_graphs: task.test.len(),
        positive_share: positive as f64 / task.labels.len() as f64,
        train_accuracy,
        unperturbed,
        final_loss: training.losses.last().copied().unwrap_or(f64::NAN),
        edge_terms,
        classifier: model.clone(),
    };
    Ok(Fig3Output {
        rows,
        report,
        training,
        task,
        graphs,
    })
}
