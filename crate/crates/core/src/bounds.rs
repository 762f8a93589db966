//! Stability bounds for a single GCN layer under edge perturbations.
//!
//! Every quantity here is computed from the unperturbed decomposition only.
//! For an edge `m` with eigenvector differences `d_i = u_i(s) − u_i(t)`:
//!
//! ```text
//! δλ_{i,m}     = d_i²
//! lambda_term  = ‖δΛ^(m)‖_F             = √(Σ_i d_i⁴)
//! vector_term  = √(Σ_i Σ_{j≠i} (d_j d_i)²)
//! bound        = Σ_m C · (lambda_term + N · vector_term),   C = C_σ · C_L
//! ```
//!
//! Since `Σ_{i,j} (d_j d_i)² = ‖a aᵀ‖_F² = 4`, the two terms satisfy
//! `lambda_term² + vector_term² = 4` for every edge.
//!
//! Inside a cluster of (numerically) repeated eigenvalues the eigenbasis is
//! not unique and the per-eigenvector split of `d` is arbitrary. The cluster
//! is rotated so that a single basis vector carries the whole projection
//! `‖U_cᵀ a‖²`; this is the basis in which the first-order expansion holds,
//! and it makes the terms independent of the eigensolver's choice. For a
//! simple spectrum it changes nothing.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Edge, EdgePerturbation, Sign};
use crate::spectral::{SpectralDecomposition, DEFAULT_GAP_TOL};

/// Which eigenvector term enters the bound.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundVariant {
    /// Couplings `(d_j d_i)²` without eigengap denominators.
    #[default]
    AsPrinted,
    /// Couplings divided by `(λ_i − λ_j)²`, matching the eigenvector shift
    /// `δu_i`.
    GapWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermOptions {
    pub variant: BoundVariant,
    pub gap_tol: f64,
}

impl Default for TermOptions {
    fn default() -> Self {
        TermOptions {
            variant: BoundVariant::AsPrinted,
            gap_tol: DEFAULT_GAP_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerEdgeTerms {
    pub edge: Edge,
    pub sign: Sign,
    pub lambda_term: f64,
    pub vector_term: f64,
}

impl PerEdgeTerms {
    /// Contribution `C · (lambda_term + N · vector_term)` of this edge.
    pub fn bound(&self, c: f64, n: usize) -> f64 {
        c * (self.lambda_term + n as f64 * self.vector_term)
    }
}

pub fn per_edge_terms(sd: &SpectralDecomposition, edge: Edge, sign: Sign) -> Result<PerEdgeTerms> {
    per_edge_terms_with(sd, edge, sign, TermOptions::default())
}

pub fn per_edge_terms_with(
    sd: &SpectralDecomposition,
    edge: Edge,
    sign: Sign,
    opts: TermOptions,
) -> Result<PerEdgeTerms> {
    let (s, t) = edge.endpoints();
    if t >= sd.n() {
        return Err(Error::InvalidEdge(s, t, "endpoint out of range"));
    }
    let d = sd.edge_differences(s, t);
    let clusters = sd.clusters(opts.gap_tol);
    let weights: Vec<f64> = clusters
        .iter()
        .map(|r| r.clone().map(|i| d[i] * d[i]).sum())
        .collect();
    let lambda_sq: f64 = weights.iter().map(|w| w * w).sum();
    let vector_sq = match opts.variant {
        BoundVariant::AsPrinted => {
            // Σ_c w_c · Σ_{c'≠c} w_c', with the inner sum from prefix and
            // suffix sums to avoid cancelling against a dominant cluster
            let k = weights.len();
            let mut suffix = vec![0.0; k + 1];
            for c in (0..k).rev() {
                suffix[c] = suffix[c + 1] + weights[c];
            }
            let mut prefix = 0.0;
            let mut acc = 0.0;
            for c in 0..k {
                acc += weights[c] * (prefix + suffix[c + 1]);
                prefix += weights[c];
            }
            acc
        }
        BoundVariant::GapWeighted => {
            let lam = sd.eigenvalues();
            let centre: Vec<f64> = clusters
                .iter()
                .map(|r| r.clone().map(|i| lam[i]).sum::<f64>() / r.len() as f64)
                .collect();
            let mut acc = 0.0;
            for (a, wa) in weights.iter().enumerate() {
                for (b, wb) in weights.iter().enumerate() {
                    if a != b {
                        let gap = centre[a] - centre[b];
                        acc += wa * wb / (gap * gap);
                    }
                }
            }
            acc
        }
    };
    Ok(PerEdgeTerms {
        edge,
        sign,
        lambda_term: lambda_sq.sqrt(),
        vector_term: vector_sq.max(0.0).sqrt(),
    })
}

/// Terms and totals of a bound evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub n: usize,
    pub variant: BoundVariant,
    pub c_filter: f64,
    pub c_sigma: f64,
    /// `C = C_σ · C_L`.
    pub c: f64,
    pub per_edge: Vec<PerEdgeTerms>,
    pub deterministic_bound: f64,
    /// Probability-weighted bound, present when probabilities were supplied.
    pub expected_bound: Option<f64>,
    /// Value that parameterises the tail probability.
    pub b: f64,
    pub degenerate_events: usize,
}

pub fn deterministic_bound(
    sd: &SpectralDecomposition,
    p: &EdgePerturbation,
    c_filter: f64,
    c_sigma: f64,
) -> Result<BoundReport> {
    deterministic_bound_with(sd, p, c_filter, c_sigma, TermOptions::default())
}

pub fn deterministic_bound_with(
    sd: &SpectralDecomposition,
    p: &EdgePerturbation,
    c_filter: f64,
    c_sigma: f64,
    opts: TermOptions,
) -> Result<BoundReport> {
    let n = sd.n();
    let c = c_sigma * c_filter;
    let per_edge = p
        .items()
        .iter()
        .map(|&(e, s)| per_edge_terms_with(sd, e, s, opts))
        .collect::<Result<Vec<_>>>()?;
    let total = per_edge.iter().map(|t| t.bound(c, n)).sum();
    Ok(BoundReport {
        n,
        variant: opts.variant,
        c_filter,
        c_sigma,
        c,
        per_edge,
        deterministic_bound: total,
        expected_bound: None,
        b: total,
        degenerate_events: 0,
    })
}

/// An edge that may be perturbed, with its probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub edge: Edge,
    pub sign: Sign,
    pub probability: f64,
}

fn check_probabilities(candidates: &[Candidate]) -> Result<()> {
    for c in candidates {
        if !(0.0..=1.0).contains(&c.probability) {
            return Err(Error::Probability {
                what: format!("edge {}", c.edge),
                value: c.probability,
            });
        }
    }
    Ok(())
}

pub fn expected_bound(
    sd: &SpectralDecomposition,
    candidates: &[Candidate],
    c_filter: f64,
    c_sigma: f64,
) -> Result<f64> {
    Ok(expected_bound_report(sd, candidates, c_filter, c_sigma, TermOptions::default())?.b)
}

/// Probability-weighted bound over a candidate set. `deterministic_bound`
/// in the report is the bound when every candidate is perturbed.
pub fn expected_bound_report(
    sd: &SpectralDecomposition,
    candidates: &[Candidate],
    c_filter: f64,
    c_sigma: f64,
    opts: TermOptions,
) -> Result<BoundReport> {
    check_probabilities(candidates)?;
    let n = sd.n();
    let c = c_sigma * c_filter;
    let mut per_edge = Vec::with_capacity(candidates.len());
    let mut expected = 0.0;
    let mut full = 0.0;
    for cand in candidates {
        let terms = per_edge_terms_with(sd, cand.edge, cand.sign, opts)?;
        let b = terms.bound(c, n);
        expected += cand.probability * b;
        full += b;
        per_edge.push(terms);
    }
    Ok(BoundReport {
        n,
        variant: opts.variant,
        c_filter,
        c_sigma,
        c,
        per_edge,
        deterministic_bound: full,
        expected_bound: Some(expected),
        b: expected,
        degenerate_events: 0,
    })
}

/// Tail probability bound `exp(−t² / 4B²)`.
pub fn hoeffding_tail(b: f64, t: f64) -> Result<f64> {
    if !b.is_finite() || b <= 0.0 {
        return Err(Error::InvalidArgument(format!("B must be positive, got {b}")));
    }
    if t.is_nan() || t < 0.0 {
        return Err(Error::InvalidArgument(format!("t must be non-negative, got {t}")));
    }
    Ok((-(t * t) / (4.0 * b * b)).exp())
}

/// Smallest offset `t` with `hoeffding_tail(B, t) ≤ ε`, i.e. `2B√ln(1/ε)`.
pub fn offset_for_confidence(b: f64, epsilon: f64) -> Result<f64> {
    if !b.is_finite() || b <= 0.0 {
        return Err(Error::InvalidArgument(format!("B must be positive, got {b}")));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must lie in (0, 1], got {epsilon}"
        )));
    }
    Ok(2.0 * b * (1.0 / epsilon).ln().sqrt())
}

/// Operator-Lipschitz baseline `C_σ · C_L · ‖ΔL‖_F`.
///
/// A Lipschitz function of a symmetric matrix is Lipschitz in the Frobenius
/// norm with the same constant, so this also bounds the output distance.
pub fn naive_baseline_bound(dl: &DMatrix<f64>, c_filter: f64, c_sigma: f64) -> f64 {
    c_sigma * c_filter * dl.norm()
}

pub const BASELINE_LABEL: &str = "naive operator-Lipschitz baseline C*||dL||_F";
