//! Ranking of existing edges by how much their deletion can move the
//! network output.

use serde::{Deserialize, Serialize};

use super::{pairwise_sum, sample_graphs};
use crate::bounds::{per_edge_terms_with, BoundVariant, TermOptions};
use crate::config::{ExperimentConfig, RankKey};
use crate::error::Result;
use crate::graph::{laplacian, Graph, Sign};
use crate::spectral::{eigendecompose, SpectralDecomposition};

/// Scores within this distance of each other count as a tie.
pub const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRow {
    pub graph: usize,
    pub rank: usize,
    pub source: usize,
    pub target: usize,
    /// `intra`, `inter`, or `unknown` without community labels.
    pub kind: String,
    pub score: f64,
    pub lambda_term: f64,
    pub vector_term: f64,
    /// Single-edge bound `λ-term + N · vector-term` of the configured
    /// variant, that is with `C = 1`.
    pub bound: f64,
    pub bound_gap_weighted: f64,
    /// First-order shift of the second-smallest eigenvalue.
    pub fiedler_shift: f64,
    pub tied_with_previous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRanking {
    pub graph: usize,
    pub edges: usize,
    pub all_tied: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindMeans {
    pub intra_edges: usize,
    pub inter_edges: usize,
    pub intra_mean_score: f64,
    pub inter_mean_score: f64,
    pub intra_mean_lambda_term: f64,
    pub inter_mean_lambda_term: f64,
    pub intra_mean_bound: f64,
    pub inter_mean_bound: f64,
    pub intra_mean_fiedler_shift: f64,
    pub inter_mean_fiedler_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeReport {
    pub experiment: String,
    pub rank_by: RankKey,
    pub variant: BoundVariant,
    pub graphs: Vec<GraphRanking>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub by_kind: Option<KindMeans>,
}

#[derive(Debug, Clone)]
pub struct EdgeOutput {
    pub rows: Vec<EdgeRow>,
    pub report: EdgeReport,
    pub graphs: Vec<Graph>,
}

/// Every existing edge of `g` with its scores, sorted by `key` descending.
/// Equal scores keep edge order.
pub fn rank_edges(g: &Graph, index: usize, key: RankKey, opts: TermOptions) -> Result<Vec<EdgeRow>> {
    let sd = eigendecompose(&laplacian(g))?;
    let mut rows = g
        .edges()
        .map(|e| score_edge(g, &sd, index, e, key, opts))
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| b.score.total_cmp(&a.score));
    for i in 0..rows.len() {
        rows[i].rank = i + 1;
        rows[i].tied_with_previous = i > 0 && (rows[i - 1].score - rows[i].score).abs() <= TIE_TOL;
    }
    Ok(rows)
}

fn score_edge(
    g: &Graph,
    sd: &SpectralDecomposition,
    index: usize,
    e: crate::graph::Edge,
    key: RankKey,
    opts: TermOptions,
) -> Result<EdgeRow> {
    let n = g.n();
    let t = per_edge_terms_with(sd, e, Sign::Delete, opts)?;
    let gw = per_edge_terms_with(
        sd,
        e,
        Sign::Delete,
        TermOptions {
            variant: BoundVariant::GapWeighted,
            ..opts
        },
    )?;
    let (s, u) = e.endpoints();
    let fiedler_shift = if n > 1 {
        sd.edge_differences(s, u)[1].powi(2)
    } else {
        0.0
    };
    let bound = t.bound(1.0, n);
    let score = match key {
        RankKey::Bound => bound,
        RankKey::LambdaTerm => t.lambda_term,
        RankKey::FiedlerShift => fiedler_shift,
    };
    let kind = match g.is_intra(e) {
        Some(true) => "intra",
        Some(false) => "inter",
        None => "unknown",
    };
    Ok(EdgeRow {
        graph: index,
        rank: 0,
        source: s,
        target: u,
        kind: kind.into(),
        score,
        lambda_term: t.lambda_term,
        vector_term: t.vector_term,
        bound,
        bound_gap_weighted: gw.bound(1.0, n),
        fiedler_shift,
        tied_with_previous: false,
    })
}

pub fn kind_means(rows: &[EdgeRow]) -> Option<KindMeans> {
    let intra: Vec<&EdgeRow> = rows.iter().filter(|r| r.kind == "intra").collect();
    let inter: Vec<&EdgeRow> = rows.iter().filter(|r| r.kind == "inter").collect();
    if intra.is_empty() && inter.is_empty() {
        return None;
    }
    let mean = |v: &[&EdgeRow], f: fn(&EdgeRow) -> f64| {
        if v.is_empty() {
            0.0
        } else {
            pairwise_sum(&v.iter().map(|r| f(r)).collect::<Vec<_>>()) / v.len() as f64
        }
    };
    Some(KindMeans {
        intra_edges: intra.len(),
        inter_edges: inter.len(),
        intra_mean_score: mean(&intra, |r| r.score),
        inter_mean_score: mean(&inter, |r| r.score),
        intra_mean_lambda_term: mean(&intra, |r| r.lambda_term),
        inter_mean_lambda_term: mean(&inter, |r| r.lambda_term),
        intra_mean_bound: mean(&intra, |r| r.bound),
        inter_mean_bound: mean(&inter, |r| r.bound),
        intra_mean_fiedler_shift: mean(&intra, |r| r.fiedler_shift),
        inter_mean_fiedler_shift: mean(&inter, |r| r.fiedler_shift),
    })
}

/// Ranks the edges of each graph: the configured graph file if set,
/// otherwise `counts.graphs` SBM samples.
pub fn run_edge_criticality(cfg: &ExperimentConfig) -> Result<EdgeOutput> {
    cfg.validate()?;
    let graphs = match &cfg.policy.graph_file {
        Some(path) => vec![Graph::load(path)?],
        None => sample_graphs(cfg, cfg.counts.graphs)?,
    };
    rank_graphs(cfg, graphs)
}

pub fn rank_graphs(cfg: &ExperimentConfig, graphs: Vec<Graph>) -> Result<EdgeOutput> {
    let opts = TermOptions {
        variant: cfg.bound.variant,
        gap_tol: cfg.bound.gap_tol,
    };
    let mut rows = Vec::new();
    let mut rankings = Vec::new();
    for (i, g) in graphs.iter().enumerate() {
        let ranked = rank_edges(g, i, cfg.policy.rank_by, opts)?;
        rankings.push(GraphRanking {
            graph: i,
            edges: ranked.len(),
            all_tied: ranked.len() > 1 && ranked.iter().skip(1).all(|r| r.tied_with_previous),
            top: ranked.first().map(|r| [r.source, r.target]),
        });
        rows.extend(ranked);
    }
    Ok(EdgeOutput {
        report: EdgeReport {
            experiment: cfg.experiment.id().into(),
            rank_by: cfg.policy.rank_by,
            variant: cfg.bound.variant,
            graphs: rankings,
            by_kind: kind_means(&rows),
        },
        rows,
        graphs,
    })
}
