//! Symmetric eigendecomposition of Laplacians and first-order perturbation
//! of the resulting eigenpairs.
//!
//! For `L̃ = L + ΔL` with a simple spectrum, the first-order shifts are
//!
//! ```text
//! δλ_i = u_iᵀ ΔL u_i
//! δu_i = Σ_{j≠i} (u_jᵀ ΔL u_i) / (λ_i − λ_j) · u_j
//! ```
//!
//! Both are computed from the coupling matrix `W = Uᵀ ΔL U`. When `ΔL` is a
//! sum of edge terms, `W = Σ φ_m d_m d_mᵀ` with `d_m = Uᵀ a_m` the vector of
//! eigenvector differences across the edge, which avoids the dense product.

use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{apply_perturbation, laplacian, EdgePerturbation, Graph};

/// Eigenvalue gaps below this are treated as degenerate.
pub const DEFAULT_GAP_TOL: f64 = 1e-6;

/// Couplings below this magnitude are ignored inside degenerate pairs.
pub const COUPLING_TOL: f64 = 1e-12;

const SYMMETRY_TOL: f64 = 1e-12;

/// Eigenvalues in ascending order with orthonormal eigenvectors as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

impl SpectralDecomposition {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[self.n() - 1]
    }

    /// Difference `u_i(s) − u_i(t)` for every eigenvector, i.e. `Uᵀ a`.
    pub fn edge_differences(&self, s: usize, t: usize) -> DVector<f64> {
        let u = &self.eigenvectors;
        DVector::from_iterator(self.n(), (0..self.n()).map(|i| u[(s, i)] - u[(t, i)]))
    }

    /// Index ranges of eigenvalues whose consecutive gaps are below `tol`.
    pub fn clusters(&self, tol: f64) -> Vec<Range<usize>> {
        let lam = &self.eigenvalues;
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.n() {
            if i == self.n() || lam[i] - lam[i - 1] >= tol {
                out.push(start..i);
                start = i;
            }
        }
        out
    }
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in i + 1..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    let asym = max_asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// Dense symmetric eigendecomposition with a fixed sign convention: the
/// largest-magnitude entry of each eigenvector is positive, ties going to
/// the lowest index.
pub fn eigendecompose(m: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    check_symmetric(m)?;
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));

    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        let peak = v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        let pivot = v
            .iter()
            .position(|x| x.abs() >= peak - 1e-12)
            .expect("non-empty eigenvector");
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        eigenvectors.set_column(col, &v);
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// First-order shifts of every eigenpair.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPerturbation {
    pub delta_lambda: DVector<f64>,
    /// Column `i` holds `δu_i`.
    pub delta_u: DMatrix<f64>,
}

/// Coupling matrix `W = Uᵀ ΔL U`.
pub fn coupling_matrix(sd: &SpectralDecomposition, dl: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if dl.nrows() != sd.n() {
        return Err(Error::DimensionMismatch {
            expected: sd.n(),
            got: dl.nrows(),
        });
    }
    check_symmetric(dl)?;
    let u = &sd.eigenvectors;
    Ok(u.transpose() * dl * u)
}

/// Coupling matrix for an edge perturbation, `Σ φ_m d_m d_mᵀ`.
pub fn edge_coupling_matrix(sd: &SpectralDecomposition, p: &EdgePerturbation) -> DMatrix<f64> {
    let n = sd.n();
    let mut w = DMatrix::zeros(n, n);
    for &(e, sign) in p.items() {
        let d = sd.edge_differences(e.lo(), e.hi());
        w.ger(sign.value(), &d, &d, 1.0);
    }
    w
}

fn perturbation_from_coupling(
    sd: &SpectralDecomposition,
    w: &DMatrix<f64>,
    gap_tol: f64,
) -> Result<EigenPerturbation> {
    let n = sd.n();
    let lam = &sd.eigenvalues;
    let u = &sd.eigenvectors;
    let delta_lambda = w.diagonal();
    // coefficient matrix: column i holds the weights of u_j in δu_i
    let mut coeff = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            let coupling = w[(j, i)];
            let gap = lam[i] - lam[j];
            if gap.abs() < gap_tol {
                if coupling.abs() > COUPLING_TOL {
                    return Err(Error::DegenerateSpectrum {
                        i,
                        j,
                        gap: gap.abs(),
                        coupling: coupling.abs(),
                    });
                }
                continue;
            }
            coeff[(j, i)] = coupling / gap;
        }
    }
    Ok(EigenPerturbation {
        delta_lambda,
        delta_u: u * coeff,
    })
}

pub fn first_order_perturbation(
    sd: &SpectralDecomposition,
    dl: &DMatrix<f64>,
    gap_tol: f64,
) -> Result<EigenPerturbation> {
    let w = coupling_matrix(sd, dl)?;
    perturbation_from_coupling(sd, &w, gap_tol)
}

/// Same as [`first_order_perturbation`] for an edge perturbation, without
/// materialising `ΔL`.
pub fn first_order_perturbation_edges(
    sd: &SpectralDecomposition,
    p: &EdgePerturbation,
    gap_tol: f64,
) -> Result<EigenPerturbation> {
    let w = edge_coupling_matrix(sd, p);
    perturbation_from_coupling(sd, &w, gap_tol)
}

/// First-order approximation of the perturbed eigenpairs. Eigenvectors are
/// `u_i + δu_i` without renormalisation, so none of the
/// [`SpectralDecomposition`] invariants are promised.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxSpectrum {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl ApproxSpectrum {
    pub fn is_approximate(&self) -> bool {
        true
    }
}

pub fn perturbed_spectrum_approx(
    sd: &SpectralDecomposition,
    dl: &DMatrix<f64>,
    gap_tol: f64,
) -> Result<ApproxSpectrum> {
    let pert = first_order_perturbation(sd, dl, gap_tol)?;
    Ok(ApproxSpectrum {
        eigenvalues: &sd.eigenvalues + pert.delta_lambda,
        eigenvectors: &sd.eigenvectors + pert.delta_u,
    })
}

/// Eigendecomposition of the perturbed Laplacian, computed directly.
pub fn exact_perturbed_spectrum(g: &Graph, p: &EdgePerturbation) -> Result<SpectralDecomposition> {
    eigendecompose(&laplacian(&apply_perturbation(g, p)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigengapReport {
    /// Smallest gap between any two eigenvalues; `+∞` when `n = 1`.
    pub min_gap: f64,
    pub degenerate: bool,
}

pub fn eigengap_report(sd: &SpectralDecomposition, gap_tol: f64) -> EigengapReport {
    let lam = &sd.eigenvalues;
    let min_gap = (1..lam.len())
        .map(|i| lam[i] - lam[i - 1])
        .fold(f64::INFINITY, f64::min)
        .max(0.0);
    EigengapReport {
        min_gap,
        degenerate: min_gap < gap_tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{delta_laplacian, Edge, Sign};

    fn insert(a: usize, b: usize) -> EdgePerturbation {
        EdgePerturbation::new(vec![(Edge::new(a, b).unwrap(), Sign::Insert)]).unwrap()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn small_spectra() {
        let p3 = eigendecompose(&laplacian(&Graph::path(3))).unwrap();
        assert_close(p3.eigenvalues().as_slice(), &[0.0, 1.0, 3.0], 1e-12);
        let k3 = eigendecompose(&laplacian(&Graph::complete(3))).unwrap();
        assert_close(k3.eigenvalues().as_slice(), &[0.0, 3.0, 3.0], 1e-12);
    }

    #[test]
    fn zero_matrix_gives_identity() {
        let sd = eigendecompose(&DMatrix::zeros(4, 4)).unwrap();
        assert_eq!(sd.eigenvalues(), &DVector::zeros(4));
        assert_eq!(sd.eigenvectors(), &DMatrix::identity(4, 4));
    }

    #[test]
    fn sign_convention_and_orthonormality() {
        let g = Graph::from_pairs(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)]).unwrap();
        let l = laplacian(&g);
        let sd = eigendecompose(&l).unwrap();
        let u = sd.eigenvectors();
        let gram = u.transpose() * u;
        assert!((gram - DMatrix::identity(5, 5)).abs().max() < 1e-10);
        for i in 0..5 {
            let col = u.column(i);
            let peak = col.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            let first = col.iter().position(|x| x.abs() >= peak - 1e-12).unwrap();
            assert!(col[first] > 0.0);
            let resid = &l * col - col * sd.eigenvalues()[i];
            assert!(resid.norm() < 1e-8 * sd.lambda_max().max(1.0));
        }
        assert!(sd.eigenvalues()[0].abs() < 1e-10);
        assert!(sd.eigenvalues()[1] > 1e-6);
    }

    #[test]
    fn rejects_asymmetric_input() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(eigendecompose(&m), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn first_order_is_exact_for_p3_to_k3() {
        let g = Graph::path(3);
        let sd = eigendecompose(&laplacian(&g)).unwrap();
        let p = insert(0, 2);
        let dl = delta_laplacian(&p, 3);
        let pert = first_order_perturbation(&sd, &dl, DEFAULT_GAP_TOL).unwrap();
        assert_close(pert.delta_lambda.as_slice(), &[0.0, 2.0, 0.0], 1e-12);
        let approx = perturbed_spectrum_approx(&sd, &dl, DEFAULT_GAP_TOL).unwrap();
        assert!(approx.is_approximate());
        let exact = exact_perturbed_spectrum(&g, &p).unwrap();
        let mut a: Vec<f64> = approx.eigenvalues.iter().copied().collect();
        a.sort_by(f64::total_cmp);
        assert_close(&a, exact.eigenvalues().as_slice(), 1e-10);
        assert_close(&a, &[0.0, 3.0, 3.0], 1e-10);
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let g = Graph::from_pairs(4, &[(0, 1), (1, 2), (2, 3), (0, 2)]).unwrap();
        let sd = eigendecompose(&laplacian(&g)).unwrap();
        let zero = DMatrix::zeros(4, 4);
        let pert = first_order_perturbation(&sd, &zero, DEFAULT_GAP_TOL).unwrap();
        assert_eq!(pert.delta_lambda, DVector::zeros(4));
        assert_eq!(pert.delta_u, DMatrix::zeros(4, 4));
        let approx = perturbed_spectrum_approx(&sd, &zero, DEFAULT_GAP_TOL).unwrap();
        assert_eq!(&approx.eigenvalues, sd.eigenvalues());
        assert_eq!(&approx.eigenvectors, sd.eigenvectors());
    }

    #[test]
    fn coupled_degeneracy_is_an_error() {
        // K3 has a double eigenvalue 3; deleting an edge couples the pair.
        let sd = eigendecompose(&laplacian(&Graph::complete(3))).unwrap();
        let p = EdgePerturbation::deletions([Edge::new(0, 1).unwrap()]).unwrap();
        let err = first_order_perturbation_edges(&sd, &p, DEFAULT_GAP_TOL);
        assert!(matches!(err, Err(Error::DegenerateSpectrum { .. })));
    }

    #[test]
    fn uncoupled_degeneracy_is_skipped() {
        let sd = SpectralDecomposition {
            eigenvalues: DVector::from_vec(vec![0.0, 0.0, 1.0]),
            eigenvectors: DMatrix::identity(3, 3),
        };
        let uncoupled = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 2.0, 0.5, 0.0, 0.5, 0.0]);
        let pert = first_order_perturbation(&sd, &uncoupled, DEFAULT_GAP_TOL).unwrap();
        assert_eq!(pert.delta_u[(2, 1)], -0.5);
        assert_eq!(pert.delta_u[(1, 2)], 0.5);
        assert_eq!(pert.delta_u[(0, 1)], 0.0);

        let coupled = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.0, 0.3, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let err = first_order_perturbation(&sd, &coupled, DEFAULT_GAP_TOL);
        assert!(matches!(err, Err(Error::DegenerateSpectrum { i: 0, j: 1, .. })));
    }

    #[test]
    fn edge_and_dense_coupling_agree() {
        let g = Graph::from_pairs(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 3), (1, 4)]).unwrap();
        let sd = eigendecompose(&laplacian(&g)).unwrap();
        let p = EdgePerturbation::new(vec![
            (Edge::new(0, 3).unwrap(), Sign::Delete),
            (Edge::new(2, 5).unwrap(), Sign::Insert),
        ])
        .unwrap();
        let dense = coupling_matrix(&sd, &delta_laplacian(&p, 6)).unwrap();
        let sparse = edge_coupling_matrix(&sd, &p);
        assert!((dense - sparse).abs().max() < 1e-12);
    }

    #[test]
    fn eigengap_examples() {
        let from = |v: Vec<f64>| SpectralDecomposition {
            eigenvectors: DMatrix::identity(v.len(), v.len()),
            eigenvalues: DVector::from_vec(v),
        };
        let r = eigengap_report(&from(vec![0.0, 1.0, 3.0]), 1e-6);
        assert_eq!(r.min_gap, 1.0);
        assert!(!r.degenerate);
        let r = eigengap_report(&from(vec![0.0, 3.0, 3.0]), 1e-6);
        assert_eq!(r.min_gap, 0.0);
        assert!(r.degenerate);
        let r = eigengap_report(&from(vec![0.0]), 1e-6);
        assert!(r.min_gap.is_infinite());
        assert!(!r.degenerate);
    }

    #[test]
    fn clusters_group_repeated_eigenvalues() {
        let sd = eigendecompose(&laplacian(&Graph::complete(4))).unwrap();
        assert_eq!(sd.clusters(DEFAULT_GAP_TOL), vec![0..1, 1..4]);
    }
}
