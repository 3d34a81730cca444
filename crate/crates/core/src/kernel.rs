//! The Stein kernel `k(X, Y) = exp(-sigma * S(X, Y))` and Gram assembly.
//!
//! The kernel is positive definite on the SPD cone of dimension `d` exactly
//! when `sigma` is one of the half-integers `1/2, 1, ..., (d-1)/2` or any real
//! value above `(d-1)/2`. [`validate_sigma`] enforces that set;
//! [`KernelParams::new`] refuses widths outside it unless the caller opts in
//! with [`KernelParams::new_allow_indefinite`].
//!
//! All evaluations run in the log-domain (cached log-determinants plus one
//! Cholesky per midpoint), never through raw determinant ratios, so they stay
//! finite far beyond the range where `det` over/underflows.

use rayon::prelude::*;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::stein_divergence;
use crate::set::LabeledSpdSet;
use crate::spd::{sym_eig, SpdMatrix};

/// Absolute tolerance when testing whether `2 * sigma` is an integer.
pub const HALF_INTEGER_TOL: f64 = 1e-12;

/// A square Gram matrix of kernel evaluations is accepted as numerically PSD
/// while its smallest eigenvalue stays above `-PSD_SLACK_PER_POINT * n`.
pub const PSD_SLACK_PER_POINT: f64 = 1e-8;

/// Checks that `sigma` keeps the kernel positive definite in dimension `dim`:
/// either a half-integer `k/2` with `1 <= k <= dim - 1`, or strictly greater
/// than `(dim - 1)/2`.
pub fn validate_sigma(sigma: f64, dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::SigmaNotAdmissible { sigma, dim });
    }
    let threshold = (dim as f64 - 1.0) / 2.0;
    if sigma > threshold {
        return Ok(());
    }
    let nearest = (2.0 * sigma).round();
    if (sigma - nearest / 2.0).abs() <= HALF_INTEGER_TOL && nearest >= 1.0 {
        // nearest/2 <= threshold is implied by sigma <= threshold.
        return Ok(());
    }
    Err(Error::SigmaNotAdmissible { sigma, dim })
}

/// Kernel configuration: width `sigma` bound to a matrix dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    sigma: f64,
    dim: usize,
}

impl KernelParams {
    /// Validated parameters; rejects widths that break positive definiteness.
    pub fn new(sigma: f64, dim: usize) -> Result<Self> {
        validate_sigma(sigma, dim)?;
        Ok(KernelParams { sigma, dim })
    }

    /// Escape hatch for experiments with an indefinite kernel. The width must
    /// still be positive and finite.
    pub fn new_allow_indefinite(sigma: f64, dim: usize) -> Result<Self> {
        if !sigma.is_finite() || sigma <= 0.0 {
            return Err(Error::SigmaNotAdmissible { sigma, dim });
        }
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        Ok(KernelParams { sigma, dim })
    }

    /// The default width for dimension `d`: `sigma = d / 2`, the smallest
    /// "safe by margin" choice (it exceeds `(d-1)/2`).
    pub fn default_for_dim(dim: usize) -> Result<Self> {
        KernelParams::new(dim as f64 / 2.0, dim)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// One kernel evaluation `exp(-sigma * S(X, Y))`.
///
/// `k(X, X)` is exactly `1.0` (the divergence of equal operands is exactly
/// zero), and values stay in `(0, 1]` up to the sign noise of nearly equal
/// operands.
pub fn stein_kernel(x: &SpdMatrix, y: &SpdMatrix, params: &KernelParams) -> Result<f64> {
    if x.dim() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            got: x.dim(),
        });
    }
    let s = stein_divergence(x, y)?;
    Ok((-params.sigma() * s).exp())
}

/// A matrix of pairwise kernel evaluations.
///
/// `entries[(i, j)] = k(rows[i], cols[j])`. For a self-Gram (both inputs the
/// same set) the matrix is symmetric with unit diagonal and
/// [`GramMatrix::min_eigenvalue`] records the smallest eigenvalue as a
/// positive-definiteness diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    entries: DMatrix<f64>,
    min_eigenvalue: Option<f64>,
}

impl GramMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    /// Smallest eigenvalue, present on square symmetric Grams only.
    pub fn min_eigenvalue(&self) -> Option<f64> {
        self.min_eigenvalue
    }

    /// Rebuilds a Gram from raw parts (deserialization path). The eigenvalue
    /// diagnostic is trusted as given.
    pub fn from_parts(entries: DMatrix<f64>, min_eigenvalue: Option<f64>) -> Self {
        GramMatrix {
            entries,
            min_eigenvalue,
        }
    }
}

/// Pairwise kernel matrix between two sets (rows x cols).
///
/// Entries are computed independently in parallel; the result does not depend
/// on the schedule. When the two sets are the identical object (self-Gram),
/// only the upper triangle is evaluated and mirrored, the diagonal is exact
/// `1.0`, and the smallest eigenvalue is recorded — with a warning if it
/// falls below the `-1e-8 * n` slack that a valid width guarantees.
pub fn gram(rows: &LabeledSpdSet, cols: &LabeledSpdSet, params: &KernelParams) -> Result<GramMatrix> {
    for set in [rows, cols] {
        if let Some(d) = set.dim() {
            if d != params.dim() {
                return Err(Error::DimensionMismatch {
                    expected: params.dim(),
                    got: d,
                });
            }
        }
    }
    let n = rows.len();
    let m = cols.len();
    let self_gram = std::ptr::eq(rows, cols) || rows == cols;
    let mut entries = DMatrix::zeros(n, m);
    if self_gram {
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
            .collect();
        let values: Vec<f64> = pairs
            .par_iter()
            .map(|&(i, j)| stein_kernel(&rows.points()[i], &cols.points()[j], params))
            .collect::<Result<_>>()?;
        for (&(i, j), &v) in pairs.iter().zip(values.iter()) {
            entries[(i, j)] = v;
            entries[(j, i)] = v;
        }
        for i in 0..n {
            entries[(i, i)] = 1.0;
        }
    } else {
        let values: Vec<f64> = (0..n * m)
            .into_par_iter()
            .map(|idx| {
                let (i, j) = (idx / m, idx % m);
                stein_kernel(&rows.points()[i], &cols.points()[j], params)
            })
            .collect::<Result<_>>()?;
        for idx in 0..n * m {
            entries[(idx / m, idx % m)] = values[idx];
        }
    }
    let min_eigenvalue = if self_gram && n > 0 {
        let eig = sym_eig(&entries)?;
        let min = *eig.eigenvalues.last().expect("n > 0");
        if min < -PSD_SLACK_PER_POINT * n as f64 {
            log::warn!(
                "gram matrix of {n} points has min eigenvalue {min:.3e}; \
                 kernel width sigma = {} may be outside the admissible set",
                params.sigma()
            );
        }
        Some(min)
    } else {
        None
    };
    Ok(GramMatrix {
        entries,
        min_eigenvalue,
    })
}

/// Kernel evaluations of one query against every point of a set, as a vector.
pub fn kernel_vector(
    query: &SpdMatrix,
    set: &LabeledSpdSet,
    params: &KernelParams,
) -> Result<Vec<f64>> {
    set.points()
        .iter()
        .map(|p| stein_kernel(query, p, params))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    use crate::spd::tests::well_conditioned;

    fn set_of(points: Vec<SpdMatrix>) -> LabeledSpdSet {
        LabeledSpdSet::unlabeled(points).unwrap()
    }

    #[test]
    fn sigma_half_integers_below_threshold_are_valid() {
        // d = 4: valid discrete widths are 1/2, 1, 3/2.
        for s in [0.5, 1.0, 1.5] {
            assert!(validate_sigma(s, 4).is_ok(), "sigma {s} should be valid");
        }
    }

    #[test]
    fn sigma_between_half_integers_is_rejected() {
        assert!(matches!(
            validate_sigma(1.25, 4),
            Err(Error::SigmaNotAdmissible { .. })
        ));
    }

    #[test]
    fn sigma_above_threshold_is_valid() {
        assert!(validate_sigma(1.51, 4).is_ok());
        assert!(validate_sigma(7.3, 4).is_ok());
        // Default d/2 clears the threshold for every d.
        for d in 1..12 {
            assert!(KernelParams::default_for_dim(d).is_ok());
        }
    }

    #[test]
    fn sigma_zero_negative_or_nan_is_rejected() {
        for s in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(validate_sigma(s, 3).is_err(), "sigma {s} accepted");
        }
    }

    #[test]
    fn half_integer_tolerance_is_respected() {
        assert!(validate_sigma(0.5 + 5e-13, 4).is_ok());
        assert!(validate_sigma(0.5 + 5e-9, 4).is_err());
    }

    #[test]
    fn allow_indefinite_accepts_invalid_width() {
        assert!(KernelParams::new(1.25, 4).is_err());
        assert!(KernelParams::new_allow_indefinite(1.25, 4).is_ok());
        assert!(KernelParams::new_allow_indefinite(-1.0, 4).is_err());
    }

    #[test]
    fn self_similarity_is_exactly_one() {
        let params = KernelParams::default_for_dim(4).unwrap();
        for seed in 0..5 {
            let x = well_conditioned(4, seed);
            assert_eq!(stein_kernel(&x, &x, &params).unwrap(), 1.0);
        }
    }

    #[test]
    fn kernel_closed_form_two_ii() {
        // k(2I, I) at d = 2, sigma = 1: exp(-S) = 2^2 sqrt(det 2I * det I) / det(3I) = 8/9.
        let params = KernelParams::new(1.0, 2).unwrap();
        let x = SpdMatrix::identity(2).scale(2.0).unwrap();
        let y = SpdMatrix::identity(2);
        let k = stein_kernel(&x, &y, &params).unwrap();
        assert_relative_eq!(k, 8.0 / 9.0, epsilon = 1e-12);
        assert_relative_eq!(k, 0.888889, epsilon = 1e-6);
    }

    #[test]
    fn log_domain_matches_determinant_ratio() {
        // Same kernel through the raw formula
        // 2^{d sigma} (det X det Y)^{sigma/2} / det((X+Y)/2 * 2)^{sigma}
        //   = (det X det Y)^{sigma/2} / det((X+Y)/2)^{sigma}.
        let params = KernelParams::default_for_dim(5).unwrap();
        for seed in 0..8u64 {
            let x = well_conditioned(5, 300 + seed);
            let y = well_conditioned(5, 400 + seed);
            let direct = {
                let mid = (x.matrix() + y.matrix()) * 0.5;
                let ratio = (x.matrix().determinant() * y.matrix().determinant()).sqrt()
                    / mid.determinant();
                ratio.powf(params.sigma())
            };
            let k = stein_kernel(&x, &y, &params).unwrap();
            assert_relative_eq!(k, direct, max_relative = 1e-9);
        }
    }

    #[test]
    fn kernel_is_symmetric() {
        let params = KernelParams::default_for_dim(3).unwrap();
        for seed in 0..10u64 {
            let x = well_conditioned(3, 500 + seed);
            let y = well_conditioned(3, 600 + seed);
            let a = stein_kernel(&x, &y, &params).unwrap();
            let b = stein_kernel(&y, &x, &params).unwrap();
            assert!((a - b).abs() <= 1e-12);
            assert!(a > 0.0 && a <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn kernel_decreases_with_divergence() {
        // Along aI vs I both S and k are monotone in |log a|; larger divergence
        // must mean a strictly smaller kernel value.
        let params = KernelParams::default_for_dim(3).unwrap();
        let base = SpdMatrix::identity(3);
        let mut last_k = 1.0;
        let mut last_s = 0.0;
        for a in [1.5, 2.0, 3.0, 5.0, 9.0] {
            let x = SpdMatrix::identity(3).scale(a).unwrap();
            let s = crate::geometry::stein_divergence(&x, &base).unwrap();
            let k = stein_kernel(&x, &base, &params).unwrap();
            assert!(s > last_s, "divergence should grow along the ray");
            assert!(k < last_k, "kernel should shrink as divergence grows");
            last_s = s;
            last_k = k;
        }
    }

    #[test]
    fn gram_of_singleton_is_unit() {
        let params = KernelParams::default_for_dim(2).unwrap();
        let s = set_of(vec![SpdMatrix::identity(2)]);
        let g = gram(&s, &s, &params).unwrap();
        assert_eq!(g.nrows(), 1);
        assert_eq!(g.entries()[(0, 0)], 1.0);
        assert!(g.min_eigenvalue().unwrap() > 0.999);
    }

    #[test]
    fn self_gram_is_psd_with_unit_diagonal() {
        let params = KernelParams::default_for_dim(4).unwrap();
        let pts: Vec<SpdMatrix> = (0..30).map(|k| well_conditioned(4, 700 + k)).collect();
        let s = set_of(pts);
        let g = gram(&s, &s, &params).unwrap();
        for i in 0..30 {
            assert_eq!(g.entries()[(i, i)], 1.0);
            for j in 0..30 {
                assert!((g.entries()[(i, j)] - g.entries()[(j, i)]).abs() <= 1e-15);
            }
        }
        let min = g.min_eigenvalue().unwrap();
        assert!(
            min >= -PSD_SLACK_PER_POINT * 30.0,
            "self-gram not PSD: min eigenvalue {min}"
        );
    }

    #[test]
    fn cross_gram_is_transpose_of_swapped_arguments() {
        let params = KernelParams::default_for_dim(3).unwrap();
        let a = set_of((0..4).map(|k| well_conditioned(3, 800 + k)).collect());
        let b = set_of((0..6).map(|k| well_conditioned(3, 900 + k)).collect());
        let ab = gram(&a, &b, &params).unwrap();
        let ba = gram(&b, &a, &params).unwrap();
        assert_eq!(ab.nrows(), 4);
        assert_eq!(ab.ncols(), 6);
        assert!(ab.min_eigenvalue().is_none());
        let diff = (ab.entries() - ba.entries().transpose()).norm();
        assert!(diff <= 1e-12, "gram(A,B) != gram(B,A)^T: {diff}");
    }

    #[test]
    fn kernel_vector_matches_gram_row() {
        let params = KernelParams::default_for_dim(3).unwrap();
        let probe = well_conditioned(3, 1000);
        let set = set_of((0..5).map(|k| well_conditioned(3, 1100 + k)).collect());
        let v = kernel_vector(&probe, &set, &params).unwrap();
        for (j, p) in set.points().iter().enumerate() {
            assert_eq!(v[j], stein_kernel(&probe, p, &params).unwrap());
        }
    }
}
