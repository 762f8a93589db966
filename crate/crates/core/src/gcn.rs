//! Polynomial graph filters and the single-layer GCN `y = σ(H(L) x)`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest supported truncation order `K`.
pub const MAX_ORDER: usize = 16;

/// Number of grid points used when maximising `|h′|`.
pub const LIPSCHITZ_GRID: usize = 10_001;

/// Coefficients `h_0..h_K` of `H(L) = Σ h_k L^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FilterSpec {
    coeffs: Vec<f64>,
}

impl TryFrom<Vec<f64>> for FilterSpec {
    type Error = Error;

    fn try_from(coeffs: Vec<f64>) -> Result<Self> {
        FilterSpec::new(coeffs)
    }
}

impl From<FilterSpec> for Vec<f64> {
    fn from(f: FilterSpec) -> Self {
        f.coeffs
    }
}

impl FilterSpec {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidFilter("at least one coefficient required".into()));
        }
        if coeffs.len() > MAX_ORDER + 1 {
            return Err(Error::InvalidFilter(format!(
                "order {} exceeds the supported maximum {MAX_ORDER}",
                coeffs.len() - 1
            )));
        }
        if let Some(bad) = coeffs.iter().find(|c| !c.is_finite()) {
            return Err(Error::InvalidFilter(format!("non-finite coefficient {bad}")));
        }
        Ok(FilterSpec { coeffs })
    }

    pub fn zeros(order: usize) -> Result<Self> {
        Self::new(vec![0.0; order + 1])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }
}

/// `H(L) x` by Horner's rule on vectors; `L^k` is never formed.
pub fn filter_apply(f: &FilterSpec, l: &DMatrix<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
    if l.nrows() != l.ncols() || l.ncols() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: l.ncols(),
            got: x.len(),
        });
    }
    let mut coeffs = f.coeffs.iter().rev();
    let top = *coeffs.next().expect("filter has a coefficient");
    let mut y = x * top;
    for &h in coeffs {
        y = l * y + x * h;
    }
    Ok(y)
}

/// `h(λ) = Σ h_k λ^k`.
pub fn frequency_response(f: &FilterSpec, lambda: f64) -> f64 {
    f.coeffs.iter().rev().fold(0.0, |acc, &h| acc * lambda + h)
}

/// `h′(λ) = Σ k h_k λ^{k−1}`.
pub fn response_derivative(f: &FilterSpec, lambda: f64) -> f64 {
    f.coeffs
        .iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (k, &h)| acc * lambda + k as f64 * h)
}

fn response_second_derivative(f: &FilterSpec, lambda: f64) -> f64 {
    f.coeffs
        .iter()
        .enumerate()
        .skip(2)
        .rev()
        .fold(0.0, |acc, (k, &h)| acc * lambda + (k * (k - 1)) as f64 * h)
}

/// Lipschitz constant of `h` on `[0, lambda_max]`, i.e. `max |h′|`.
///
/// `|h′|` is sampled on a uniform grid and the interior extrema of `h′`
/// (sign changes of `h″` between grid nodes) are refined by bisection, so
/// the result is the true maximum up to floating-point error.
pub fn lipschitz_constant(f: &FilterSpec, lambda_max: f64) -> f64 {
    let hi = lambda_max.max(0.0);
    let step = hi / (LIPSCHITZ_GRID - 1) as f64;
    let node = |i: usize| if i == LIPSCHITZ_GRID - 1 { hi } else { i as f64 * step };
    let mut best = response_derivative(f, 0.0).abs();
    if hi == 0.0 || f.order() == 0 {
        return best;
    }
    let mut prev_x = 0.0;
    let mut prev_curv = response_second_derivative(f, 0.0);
    for i in 1..LIPSCHITZ_GRID {
        let x = node(i);
        best = best.max(response_derivative(f, x).abs());
        let curv = response_second_derivative(f, x);
        if prev_curv * curv < 0.0 {
            let (mut a, mut b, mut fa) = (prev_x, x, prev_curv);
            for _ in 0..60 {
                let mid = 0.5 * (a + b);
                let fm = response_second_derivative(f, mid);
                if fa * fm <= 0.0 {
                    b = mid;
                } else {
                    a = mid;
                    fa = fm;
                }
            }
            best = best.max(response_derivative(f, 0.5 * (a + b)).abs());
        }
        prev_x = x;
        prev_curv = curv;
    }
    best
}

/// Upper end of the spectral interval that contains both the unperturbed
/// and the perturbed eigenvalues. Each insertion raises any eigenvalue by
/// at most `‖a aᵀ‖ = 2`; deletions only lower them.
pub fn perturbed_interval(lambda_max: f64, insertions: usize) -> f64 {
    lambda_max + 2.0 * insertions as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Nonlinearity {
    pub const ALL: [Nonlinearity; 4] = [
        Nonlinearity::Relu,
        Nonlinearity::Tanh,
        Nonlinearity::Sigmoid,
        Nonlinearity::Identity,
    ];

    pub fn lipschitz(self) -> f64 {
        match self {
            Nonlinearity::Sigmoid => 0.25,
            _ => 1.0,
        }
    }

    pub fn apply(self, v: f64) -> f64 {
        match self {
            Nonlinearity::Relu => v.max(0.0),
            Nonlinearity::Tanh => v.tanh(),
            Nonlinearity::Sigmoid => sigmoid(v),
            Nonlinearity::Identity => v,
        }
    }

    /// Derivative; for relu the right derivative is used at 0 so that
    /// training from an all-zero filter receives a gradient.
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Nonlinearity::Relu => {
                if v >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Nonlinearity::Tanh => 1.0 - v.tanh().powi(2),
            Nonlinearity::Sigmoid => {
                let s = sigmoid(v);
                s * (1.0 - s)
            }
            Nonlinearity::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Nonlinearity::Relu => "relu",
            Nonlinearity::Tanh => "tanh",
            Nonlinearity::Sigmoid => "sigmoid",
            Nonlinearity::Identity => "identity",
        }
    }
}

impl fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Nonlinearity::ALL
            .into_iter()
            .find(|n| n.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown nonlinearity {s:?}")))
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// One filter followed by a pointwise nonlinearity. Serialises as the model
/// file `{"coeffs": [...], "nonlinearity": "relu"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnLayer {
    #[serde(rename = "coeffs")]
    pub filter: FilterSpec,
    pub nonlinearity: Nonlinearity,
}

impl GcnLayer {
    pub fn new(filter: FilterSpec, nonlinearity: Nonlinearity) -> Self {
        GcnLayer {
            filter,
            nonlinearity,
        }
    }

    /// `C = C_σ · C_L` with `C_L` taken over `[0, interval_max]`.
    pub fn stability_constant(&self, interval_max: f64) -> f64 {
        self.nonlinearity.lipschitz() * lipschitz_constant(&self.filter, interval_max)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn gcn_forward(layer: &GcnLayer, l: &DMatrix<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
    let mut y = filter_apply(&layer.filter, l, x)?;
    let sigma = layer.nonlinearity;
    y.apply(|v| *v = sigma.apply(*v));
    Ok(y)
}

pub fn normalized(x: &DVector<f64>) -> Result<DVector<f64>> {
    let norm = x.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroInput);
    }
    Ok(x / norm)
}

/// `‖σ(H(L)x) − σ(H(L̃)x)‖₂` for the unit-normalised input.
pub fn output_distance(
    layer: &GcnLayer,
    l: &DMatrix<f64>,
    l_pert: &DMatrix<f64>,
    x: &DVector<f64>,
) -> Result<f64> {
    let x = normalized(x)?;
    let a = gcn_forward(layer, l, &x)?;
    let b = gcn_forward(layer, l_pert, &x)?;
    Ok((a - b).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{laplacian, Graph};

    fn filt(c: &[f64]) -> FilterSpec {
        FilterSpec::new(c.to_vec()).unwrap()
    }

    fn p3() -> DMatrix<f64> {
        laplacian(&Graph::path(3))
    }

    #[test]
    fn filter_examples() {
        let x = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        assert_eq!(filter_apply(&filt(&[1.0]), &p3(), &x).unwrap(), x);
        let e0 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let got = filter_apply(&filt(&[0.0, 1.0]), &p3(), &e0).unwrap();
        assert_eq!(got.as_slice(), &[1.0, -1.0, 0.0]);
        let short = DVector::from_vec(vec![1.0, 0.0]);
        assert!(matches!(
            filter_apply(&filt(&[1.0]), &p3(), &short),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn frequency_response_examples() {
        assert_eq!(frequency_response(&filt(&[1.0]), 7.0), 1.0);
        assert_eq!(frequency_response(&filt(&[0.0, 1.0]), 3.0), 3.0);
        assert_eq!(frequency_response(&filt(&[1.0, 2.0, 3.0]), 2.0), 17.0);
        assert_eq!(response_derivative(&filt(&[1.0, 2.0, 3.0]), 2.0), 14.0);
    }

    #[test]
    fn lipschitz_examples() {
        assert_eq!(lipschitz_constant(&filt(&[0.0, 1.0]), 12.5), 1.0);
        assert_eq!(lipschitz_constant(&filt(&[4.2]), 9.0), 0.0);
        assert_eq!(lipschitz_constant(&filt(&[0.0, 0.0, 1.0]), 3.0), 6.0);
        // h′ = 1 − 6λ + 3λ² has an interior extremum at λ = 1 with |h′| = 2
        let l = lipschitz_constant(&filt(&[0.0, 1.0, -3.0, 1.0]), 1.5);
        assert!((l - 2.0).abs() < 1e-12, "{l}");
        assert_eq!(perturbed_interval(5.0, 0), 5.0);
        assert_eq!(perturbed_interval(5.0, 3), 11.0);
    }

    #[test]
    fn forward_examples() {
        let e0 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let relu = GcnLayer::new(filt(&[0.0, 1.0]), Nonlinearity::Relu);
        assert_eq!(gcn_forward(&relu, &p3(), &e0).unwrap().as_slice(), &[1.0, 0.0, 0.0]);

        let x = DVector::from_vec(vec![0.5, -0.25, 2.0]);
        let f = filt(&[0.5, -1.0, 0.25]);
        let ident = GcnLayer::new(f.clone(), Nonlinearity::Identity);
        assert_eq!(gcn_forward(&ident, &p3(), &x).unwrap(), filter_apply(&f, &p3(), &x).unwrap());

        let sig = GcnLayer::new(filt(&[0.0]), Nonlinearity::Sigmoid);
        assert!(gcn_forward(&sig, &p3(), &x).unwrap().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn output_distance_examples() {
        let l = p3();
        let k3 = laplacian(&Graph::complete(3));
        let x = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let relu = GcnLayer::new(filt(&[0.0, 1.0]), Nonlinearity::Relu);
        assert_eq!(output_distance(&relu, &l, &l, &x).unwrap(), 0.0);

        let constant = GcnLayer::new(filt(&[2.0]), Nonlinearity::Tanh);
        assert_eq!(output_distance(&constant, &l, &k3, &x).unwrap(), 0.0);

        // L x = (1, −1, 0) → relu (1, 0, 0); L̃ x = (2, −1, −1) → relu (2, 0, 0)
        let d = output_distance(&relu, &l, &k3, &x).unwrap();
        assert!((d - 1.0).abs() < 1e-15);

        // input is normalised first: 3·e0 gives the same distance
        let d3 = output_distance(&relu, &l, &k3, &(x * 3.0)).unwrap();
        assert!((d3 - 1.0).abs() < 1e-15);

        assert!(matches!(
            output_distance(&relu, &l, &k3, &DVector::zeros(3)),
            Err(Error::ZeroInput)
        ));
    }

    #[test]
    fn filter_validation() {
        assert!(FilterSpec::new(vec![]).is_err());
        assert!(FilterSpec::new(vec![1.0, f64::NAN]).is_err());
        assert!(FilterSpec::new(vec![0.0; MAX_ORDER + 2]).is_err());
        assert_eq!(FilterSpec::zeros(3).unwrap().order(), 3);
    }

    #[test]
    fn model_file_format() {
        let layer = GcnLayer::new(filt(&[0.5, -1.0]), Nonlinearity::Relu);
        let text = serde_json::to_string(&layer).unwrap();
        assert_eq!(text, r#"{"coeffs":[0.5,-1.0],"nonlinearity":"relu"}"#);
        let back: GcnLayer = serde_json::from_str(&text).unwrap();
        assert_eq!(back, layer);
        assert!(serde_json::from_str::<GcnLayer>(r#"{"coeffs":[],"nonlinearity":"relu"}"#).is_err());
        assert!(serde_json::from_str::<GcnLayer>(r#"{"coeffs":[1],"nonlinearity":"gelu"}"#).is_err());
    }

    #[test]
    fn nonlinearity_names_round_trip() {
        for n in Nonlinearity::ALL {
            assert_eq!(n.name().parse::<Nonlinearity>().unwrap(), n);
        }
        assert!("swish".parse::<Nonlinearity>().is_err());
    }
}
