//! Symmetric positive definite matrices and their spectral calculus.
//!
//! [`SpdMatrix`] is the central type of the crate: a dense `d x d` matrix
//! validated to be symmetric (entrywise, within [`SYMMETRY_TOL`] relative
//! tolerance) and positive definite (a Cholesky factorization must succeed).
//! The log-determinant is computed once at construction and cached, because
//! every kernel evaluation needs it.
//!
//! Matrix functions (square root, logarithm, exponential, real powers) are
//! implemented spectrally: factor `X = Q diag(l) Q^T` with [`sym_eig`], apply
//! the scalar function to the eigenvalues, and recompose. For the dimensions
//! this crate targets (single digits to a few tens) this is both accurate and
//! cheap.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance for the entrywise symmetry check:
/// `|a_ij - a_ji| <= SYMMETRY_TOL * max(1, |a_ij|)`.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Default eigenvalue floor factor used by [`project_to_spd`].
pub const PROJECTION_EPS: f64 = 1e-8;

/// Largest relative asymmetry of `m`, measured as
/// `max_ij |a_ij - a_ji| / max(1, |a_ij|)`.
fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            let dev = (m[(i, j)] - m[(j, i)]).abs() / f64::max(1.0, m[(i, j)].abs());
            worst = worst.max(dev);
        }
    }
    worst
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if m.nrows() == 0 {
        return Err(Error::InvalidParameter("matrix must be non-empty".into()));
    }
    Ok(())
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let dev = max_asymmetry(m);
    if dev > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { max_dev: dev });
    }
    Ok(())
}

/// `(m + m^T) / 2`, the exact symmetric part.
pub(crate) fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn logdet_from_cholesky(chol: &Cholesky<f64, nalgebra::Dyn>) -> f64 {
    let l = chol.l();
    let mut acc = 0.0;
    for i in 0..l.nrows() {
        acc += l[(i, i)].ln();
    }
    2.0 * acc
}

/// A validated symmetric positive definite matrix.
///
/// Construction always verifies the invariants; once built, the matrix can be
/// fed to the geometry and kernel routines without further checks. Entries
/// are stored exactly as supplied (no silent symmetrization), so matrices
/// round-trip bit-exactly through serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    mat: DMatrix<f64>,
    logdet: f64,
}

impl SpdMatrix {
    /// Validates symmetry and positive definiteness, then wraps `mat`.
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        check_square(&mat)?;
        check_symmetric(&mat)?;
        let chol = Cholesky::new(symmetric_part(&mat)).ok_or(Error::NotPositiveDefinite)?;
        let logdet = logdet_from_cholesky(&chol);
        Ok(SpdMatrix { mat, logdet })
    }

    /// Wraps a matrix produced by an internal computation that is symmetric
    /// positive definite by construction (spectral recomposition with positive
    /// eigenvalues, convex combinations, ...). Symmetrizes exactly and still
    /// runs the Cholesky check so rounding pathologies surface as errors
    /// rather than corrupt state.
    pub(crate) fn from_computed(mat: DMatrix<f64>) -> Result<Self> {
        let sym = symmetric_part(&mat);
        let chol = Cholesky::new(sym.clone()).ok_or(Error::NotPositiveDefinite)?;
        let logdet = logdet_from_cholesky(&chol);
        Ok(SpdMatrix { mat: sym, logdet })
    }

    /// The `d x d` identity.
    pub fn identity(dim: usize) -> Self {
        SpdMatrix {
            mat: DMatrix::identity(dim, dim),
            logdet: 0.0,
        }
    }

    /// Diagonal matrix from strictly positive entries.
    pub fn from_diagonal(entries: &[f64]) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidParameter("diagonal must be non-empty".into()));
        }
        if entries.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::InvalidParameter(
                "diagonal entries must be strictly positive".into(),
            ));
        }
        let mat = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(entries));
        let logdet = entries.iter().map(|e| e.ln()).sum();
        Ok(SpdMatrix { mat, logdet })
    }

    /// Builds from `dim * dim` row-major entries.
    pub fn from_row_major(dim: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: entries.len(),
            });
        }
        SpdMatrix::new(DMatrix::from_row_slice(dim, dim, entries))
    }

    /// Side length `d`.
    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    /// Borrow the underlying dense matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    /// Consume into the underlying dense matrix.
    pub fn into_matrix(self) -> DMatrix<f64> {
        self.mat
    }

    /// Cached `log det`.
    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// Frobenius norm.
    pub fn frobenius_norm(&self) -> f64 {
        self.mat.norm()
    }

    /// Spectral norm (largest eigenvalue; equals the 2-norm for SPD).
    pub fn spectral_norm(&self) -> f64 {
        sym_eig(&self.mat).map(|e| e.eigenvalues[0]).unwrap_or(f64::NAN)
    }

    /// Scale by a strictly positive factor (stays in the cone).
    pub fn scale(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "scale factor must be strictly positive, got {factor}"
            )));
        }
        Ok(SpdMatrix {
            mat: &self.mat * factor,
            logdet: self.logdet + self.dim() as f64 * factor.ln(),
        })
    }
}

/// A symmetric matrix living in a tangent space of the SPD cone.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    mat: DMatrix<f64>,
}

impl TangentVector {
    /// Validates symmetry (same tolerance as [`SpdMatrix`]).
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        check_square(&mat)?;
        check_symmetric(&mat)?;
        Ok(TangentVector { mat })
    }

    pub(crate) fn from_computed(mat: DMatrix<f64>) -> Self {
        TangentVector {
            mat: symmetric_part(&mat),
        }
    }

    /// The zero vector of side `d`.
    pub fn zero(dim: usize) -> Self {
        TangentVector {
            mat: DMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.mat
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.mat.norm()
    }

    /// `self * factor`.
    pub fn scale(&self, factor: f64) -> Self {
        TangentVector {
            mat: &self.mat * factor,
        }
    }

    /// `self + other`; dimensions must agree.
    pub fn add(&self, other: &TangentVector) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(TangentVector {
            mat: &self.mat + &other.mat,
        })
    }
}

/// Eigendecomposition of a symmetric matrix, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    /// Eigenvalues in descending order.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors, column `k` pairing with `eigenvalues[k]`.
    pub eigenvectors: DMatrix<f64>,
}

impl EigenDecomposition {
    /// `Q diag(f(l)) Q^T` for a scalar map `f`; the workhorse behind every
    /// matrix function in this module.
    pub fn recompose_mapped(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let d = self.eigenvectors.nrows();
        let mut scaled = self.eigenvectors.clone();
        for (k, &l) in self.eigenvalues.iter().enumerate() {
            let fl = f(l);
            for i in 0..d {
                scaled[(i, k)] *= fl;
            }
        }
        &scaled * self.eigenvectors.transpose()
    }

    /// Plain recomposition `Q diag(l) Q^T`.
    pub fn recompose(&self) -> DMatrix<f64> {
        self.recompose_mapped(|l| l)
    }
}

/// Eigendecomposition of a symmetric matrix.
///
/// Rejects asymmetric input, symmetrizes exactly before factoring to keep the
/// backend honest, and sorts eigenpairs by descending eigenvalue.
pub fn sym_eig(mat: &DMatrix<f64>) -> Result<EigenDecomposition> {
    check_square(mat)?;
    check_symmetric(mat)?;
    let eig = SymmetricEigen::new(symmetric_part(mat));
    let d = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("eigenvalues of a real symmetric matrix are finite")
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut eigenvectors = DMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

fn spectral_map_spd(x: &SpdMatrix, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    Ok(sym_eig(x.matrix())?.recompose_mapped(f))
}

/// Principal matrix square root `X^{1/2}`.
pub fn spd_sqrtm(x: &SpdMatrix) -> Result<SpdMatrix> {
    SpdMatrix::from_computed(spectral_map_spd(x, f64::sqrt)?)
}

/// Inverse square root `X^{-1/2}`.
pub fn spd_invsqrtm(x: &SpdMatrix) -> Result<SpdMatrix> {
    SpdMatrix::from_computed(spectral_map_spd(x, |l| 1.0 / l.sqrt())?)
}

/// Inverse `X^{-1}` through the spectral factorization.
pub fn spd_inverse(x: &SpdMatrix) -> Result<SpdMatrix> {
    SpdMatrix::from_computed(spectral_map_spd(x, |l| 1.0 / l)?)
}

/// Principal matrix logarithm of an SPD matrix; the result is symmetric but
/// (in general) indefinite, so it comes back as a tangent vector.
pub fn spd_logm(x: &SpdMatrix) -> Result<TangentVector> {
    Ok(TangentVector::from_computed(spectral_map_spd(x, f64::ln)?))
}

/// Matrix exponential of a symmetric matrix; always lands in the SPD cone.
pub fn sym_expm(v: &TangentVector) -> Result<SpdMatrix> {
    SpdMatrix::from_computed(sym_eig(v.matrix())?.recompose_mapped(f64::exp))
}

/// Real matrix power `X^p` of an SPD matrix.
pub fn spd_powm(x: &SpdMatrix, p: f64) -> Result<SpdMatrix> {
    SpdMatrix::from_computed(spectral_map_spd(x, |l| l.powf(p))?)
}

/// `log det X` for a symmetric positive definite `mat` given as a raw matrix.
///
/// Cholesky-based: `2 * sum_i log L_ii`. [`SpdMatrix`] caches this value at
/// construction; use this free function for matrices assembled on the fly
/// (e.g. midpoints) that never become full [`SpdMatrix`] values.
pub fn logdet(mat: &DMatrix<f64>) -> Result<f64> {
    check_square(mat)?;
    let chol = Cholesky::new(symmetric_part(mat)).ok_or(Error::NotPositiveDefinite)?;
    Ok(logdet_from_cholesky(&chol))
}

/// Nearest-SPD repair: symmetrize, then clamp eigenvalues from below.
///
/// The floor is `eps * max(largest eigenvalue, 1)`, so a matrix that is
/// already comfortably positive definite passes through (up to the spectral
/// round trip) while indefinite or negative definite input is pushed onto a
/// well-conditioned point of the cone.
pub fn project_to_spd(mat: &DMatrix<f64>, eps: f64) -> Result<SpdMatrix> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "projection eps must be strictly positive, got {eps}"
        )));
    }
    check_square(mat)?;
    let eig = SymmetricEigen::new(symmetric_part(mat));
    let top = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let floor = eps * f64::max(top, 1.0);
    let d = eig.eigenvalues.len();
    let mut scaled = eig.eigenvectors.clone();
    for k in 0..d {
        let l = f64::max(eig.eigenvalues[k], floor);
        for i in 0..d {
            scaled[(i, k)] *= l;
        }
    }
    SpdMatrix::from_computed(&scaled * eig.eigenvectors.transpose())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mat(d: usize, rows: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(d, d, rows)
    }

    #[test]
    fn rejects_asymmetric_input() {
        let m = mat(2, &[1.0, 0.5, 0.2, 1.0]);
        assert!(matches!(SpdMatrix::new(m), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn rejects_indefinite_input() {
        let m = mat(2, &[1.0, 2.0, 2.0, 1.0]); // eigenvalues 3, -1
        assert!(matches!(
            SpdMatrix::new(m),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn accepts_near_symmetric_within_tolerance() {
        let mut m = mat(2, &[2.0, 0.3, 0.3, 1.0]);
        m[(0, 1)] += 5e-11; // inside the relative tolerance
        assert!(SpdMatrix::new(m).is_ok());
    }

    #[test]
    fn logdet_of_identity_is_zero() {
        assert_eq!(SpdMatrix::identity(5).logdet(), 0.0);
    }

    #[test]
    fn logdet_matches_two_log_two() {
        let x = SpdMatrix::from_diagonal(&[2.0, 2.0]).unwrap();
        assert_relative_eq!(x.logdet(), 2.0 * 2.0f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn logdet_matches_eigenvalue_sum() {
        let x = well_conditioned(6, 7);
        let eig = sym_eig(x.matrix()).unwrap();
        let via_eig: f64 = eig.eigenvalues.iter().map(|l| l.ln()).sum();
        assert_relative_eq!(x.logdet(), via_eig, max_relative = 1e-9);
    }

    #[test]
    fn eig_identity() {
        let eig = sym_eig(&DMatrix::identity(3, 3)).unwrap();
        for l in &eig.eigenvalues {
            assert_relative_eq!(*l, 1.0, epsilon = 1e-14);
        }
        let r = eig.recompose();
        assert_relative_eq!((r - DMatrix::identity(3, 3)).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn eig_sorts_descending() {
        let eig = sym_eig(&mat(2, &[1.0, 0.0, 0.0, 4.0])).unwrap();
        assert_relative_eq!(eig.eigenvalues[0], 4.0, epsilon = 1e-12);
        assert_relative_eq!(eig.eigenvalues[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn eig_reconstructs_and_is_orthonormal() {
        let x = well_conditioned(5, 3);
        let eig = sym_eig(x.matrix()).unwrap();
        let recon_err = (eig.recompose() - x.matrix()).norm();
        assert!(
            recon_err <= 1e-8 * x.frobenius_norm(),
            "reconstruction error {recon_err} too large"
        );
        let q = &eig.eigenvectors;
        let ortho_err = (q.transpose() * q - DMatrix::identity(5, 5)).norm();
        assert!(ortho_err <= 1e-8, "eigenvector basis not orthonormal: {ortho_err}");
    }

    #[test]
    fn eig_rejects_asymmetric() {
        let m = mat(2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(matches!(sym_eig(&m), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn sqrtm_of_diagonal() {
        let x = SpdMatrix::from_diagonal(&[4.0, 9.0]).unwrap();
        let r = spd_sqrtm(&x).unwrap();
        assert_relative_eq!(r.matrix()[(0, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(r.matrix()[(1, 1)], 3.0, epsilon = 1e-12);
        assert_relative_eq!(r.matrix()[(0, 1)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn logm_of_identity_is_zero() {
        let v = spd_logm(&SpdMatrix::identity(4)).unwrap();
        assert!(v.norm() <= 1e-14);
    }

    #[test]
    fn exp_log_round_trip() {
        let x = well_conditioned(6, 11);
        let back = sym_expm(&spd_logm(&x).unwrap()).unwrap();
        let err = (back.matrix() - x.matrix()).norm();
        assert!(
            err <= 1e-8 * x.frobenius_norm(),
            "exp(log(X)) drifted by {err}"
        );
    }

    #[test]
    fn powm_half_matches_sqrtm() {
        let x = well_conditioned(4, 2);
        let a = spd_powm(&x, 0.5).unwrap();
        let b = spd_sqrtm(&x).unwrap();
        assert!((a.matrix() - b.matrix()).norm() <= 1e-10);
    }

    #[test]
    fn inverse_times_self_is_identity() {
        let x = well_conditioned(5, 19);
        let inv = spd_inverse(&x).unwrap();
        let err = (inv.matrix() * x.matrix() - DMatrix::identity(5, 5)).norm();
        assert!(err <= 1e-9, "X^-1 X deviates from I by {err}");
    }

    #[test]
    fn projection_fixes_identity() {
        let p = project_to_spd(&DMatrix::identity(3, 3), PROJECTION_EPS).unwrap();
        assert!((p.matrix() - DMatrix::identity(3, 3)).norm() <= 1e-12);
    }

    #[test]
    fn projection_clamps_negative_eigenvalue() {
        let m = mat(2, &[1.0, 0.0, 0.0, -0.5]);
        let p = project_to_spd(&m, 1e-8).unwrap();
        assert_relative_eq!(p.matrix()[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(p.matrix()[(1, 1)], 1e-8, epsilon = 1e-20);
        assert_relative_eq!(p.matrix()[(0, 1)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn projection_output_is_valid_spd() {
        let m = mat(
            3,
            &[0.2, 1.4, -0.7, 1.4, -2.0, 0.3, -0.7, 0.3, 0.9],
        );
        let p = project_to_spd(&m, PROJECTION_EPS).unwrap();
        // Re-validate through the strict constructor.
        assert!(SpdMatrix::new(p.matrix().clone()).is_ok());
    }

    #[test]
    fn scale_updates_logdet() {
        let x = well_conditioned(3, 5);
        let y = x.scale(2.5).unwrap();
        assert_relative_eq!(
            y.logdet(),
            x.logdet() + 3.0 * 2.5f64.ln(),
            max_relative = 1e-12
        );
    }

    /// Deterministic well-conditioned SPD test matrix: B B^T + I/2 with B
    /// filled from a simple linear congruential sequence.
    pub(crate) fn well_conditioned(d: usize, seed: u64) -> SpdMatrix {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            // map the top bits onto [-1, 1)
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let b = DMatrix::from_fn(d, d, |_, _| next());
        let m = &b * b.transpose() + DMatrix::identity(d, d) * 0.5;
        SpdMatrix::from_computed(m).unwrap()
    }
}
