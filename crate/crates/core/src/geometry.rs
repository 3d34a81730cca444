//! Divergences, metrics, geodesics, and intrinsic means on the SPD cone.
//!
//! Three ways of measuring how far apart two SPD matrices are live here:
//!
//! * [`stein_divergence`] — the symmetrized log-det divergence
//!   `S(X, Y) = log det((X + Y)/2) - (log det X + log det Y)/2`. Not a metric
//!   (its square root is), but cheap: three Cholesky factorizations, two of
//!   which are cached on the operands.
//! * [`airm_distance`] — the affine-invariant Riemannian metric
//!   `||logm(X^{-1/2} Y X^{-1/2})||_F`, the geodesic distance of the
//!   canonical Riemannian structure.
//! * [`thompson_metric`] — `max_i |log l_i|` over the generalized eigenvalues
//!   of `(X, Y)`; the part-metric of the cone.
//!
//! The three are mutually sandwiched:
//! `S <= d_airm^2 / 8 <= (1/4) d_T (S + d log d)`, which the test suite
//! exercises as an invariant. Geodesics interpolate with
//! `gamma(p) = X^{1/2} (X^{-1/2} Y X^{-1/2})^p X^{1/2}`, and the Stein
//! divergence contracts along them: `S(X, gamma(p)) <= p S(X, Y)`.
//!
//! [`karcher_mean`] computes the Riemannian barycenter by the standard
//! fixed-point iteration on the tangent-space average.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::spd::{
    logdet, project_to_spd, spd_invsqrtm, sym_eig, symmetric_part, SpdMatrix, TangentVector,
    PROJECTION_EPS,
};

/// Default tolerance on the tangent-space gradient for [`karcher_mean`].
pub const KARCHER_TOL: f64 = 1e-8;

/// Default iteration cap for [`karcher_mean`].
pub const KARCHER_MAX_ITER: usize = 100;

fn check_same_dim(x: &SpdMatrix, y: &SpdMatrix) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: y.dim(),
        });
    }
    Ok(())
}

/// Symmetrized log-det (Stein) divergence.
///
/// Non-negative, zero iff `X == Y`; `S(X, X)` evaluates to exactly `0.0`
/// because the midpoint `(X + X)/2` is bitwise `X`. Tiny negative values
/// (>= -1e-10) can appear for nearly identical operands through rounding and
/// are passed through untouched.
pub fn stein_divergence(x: &SpdMatrix, y: &SpdMatrix) -> Result<f64> {
    check_same_dim(x, y)?;
    let mid = (x.matrix() + y.matrix()) * 0.5;
    let mid_logdet = logdet(&mid)?;
    Ok(mid_logdet - 0.5 * (x.logdet() + y.logdet()))
}

/// The whitened operand `X^{-1/2} Y X^{-1/2}`, symmetrized.
fn whiten(x: &SpdMatrix, y: &SpdMatrix) -> Result<DMatrix<f64>> {
    let isq = spd_invsqrtm(x)?;
    Ok(symmetric_part(&(isq.matrix() * y.matrix() * isq.matrix())))
}

/// Affine-invariant Riemannian (geodesic) distance.
pub fn airm_distance(x: &SpdMatrix, y: &SpdMatrix) -> Result<f64> {
    check_same_dim(x, y)?;
    let w = whiten(x, y)?;
    let eig = sym_eig(&w)?;
    let mut acc = 0.0;
    for &l in &eig.eigenvalues {
        if !(l > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let t = l.ln();
        acc += t * t;
    }
    Ok(acc.sqrt())
}

/// Thompson (part) metric: largest `|log|` of a generalized eigenvalue of
/// `(X, Y)`.
///
/// Computed by whitening with a Cholesky factor of `Y` — the eigenvalues of
/// `L^{-1} X L^{-T}` are exactly the generalized eigenvalues — which avoids
/// ever forming the non-symmetric product `X Y^{-1}`.
pub fn thompson_metric(x: &SpdMatrix, y: &SpdMatrix) -> Result<f64> {
    check_same_dim(x, y)?;
    let chol = nalgebra::Cholesky::new(symmetric_part(y.matrix()))
        .ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    // Z = L^{-1} X, then W = Z L^{-T} = (L^{-1} Z^T)^T.
    let z = l
        .solve_lower_triangular(x.matrix())
        .ok_or(Error::NotPositiveDefinite)?;
    let w = l
        .solve_lower_triangular(&z.transpose())
        .ok_or(Error::NotPositiveDefinite)?
        .transpose();
    let eig = sym_eig(&symmetric_part(&w))?;
    let mut worst = 0.0f64;
    for &gl in &eig.eigenvalues {
        if !(gl > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        worst = worst.max(gl.ln().abs());
    }
    Ok(worst)
}

/// Point at parameter `p` on the geodesic from `X` (p = 0) to `Y` (p = 1):
/// `X^{1/2} (X^{-1/2} Y X^{-1/2})^p X^{1/2}`. Requires `p` in `[0, 1]`.
pub fn geodesic(x: &SpdMatrix, y: &SpdMatrix, p: f64) -> Result<SpdMatrix> {
    check_same_dim(x, y)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "geodesic parameter must lie in [0, 1], got {p}"
        )));
    }
    let eig_x = sym_eig(x.matrix())?;
    let sq = eig_x.recompose_mapped(f64::sqrt);
    let isq = eig_x.recompose_mapped(|l| 1.0 / l.sqrt());
    let w = symmetric_part(&(&isq * y.matrix() * &isq));
    let wp = sym_eig(&w)?.recompose_mapped(|l| l.powf(p));
    SpdMatrix::from_computed(&sq * wp * &sq)
}

/// Riemannian logarithm: the tangent vector at `X` pointing to `Y`,
/// `X^{1/2} logm(X^{-1/2} Y X^{-1/2}) X^{1/2}`.
pub fn log_map(x: &SpdMatrix, y: &SpdMatrix) -> Result<TangentVector> {
    check_same_dim(x, y)?;
    let eig_x = sym_eig(x.matrix())?;
    let sq = eig_x.recompose_mapped(f64::sqrt);
    let isq = eig_x.recompose_mapped(|l| 1.0 / l.sqrt());
    let w = symmetric_part(&(&isq * y.matrix() * &isq));
    let logw = sym_eig(&w)?.recompose_mapped(f64::ln);
    Ok(TangentVector::from_computed(&sq * logw * &sq))
}

/// Riemannian exponential at `X` of tangent vector `V`:
/// `X^{1/2} expm(X^{-1/2} V X^{-1/2}) X^{1/2}`. Inverse of [`log_map`].
pub fn exp_map(x: &SpdMatrix, v: &TangentVector) -> Result<SpdMatrix> {
    if x.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: v.dim(),
        });
    }
    let eig_x = sym_eig(x.matrix())?;
    let sq = eig_x.recompose_mapped(f64::sqrt);
    let isq = eig_x.recompose_mapped(|l| 1.0 / l.sqrt());
    let w = symmetric_part(&(&isq * v.matrix() * &isq));
    let expw = sym_eig(&w)?.recompose_mapped(f64::exp);
    SpdMatrix::from_computed(&sq * expw * &sq)
}

/// Karcher (Fréchet) mean under the affine-invariant metric.
///
/// Fixed-point iteration with unit step: starting from the arithmetic mean
/// (projected onto the cone), repeatedly move along the exponential of the
/// averaged log-maps. Stops once the tangent mean is small enough that the
/// total gradient `sum_i log_map(mu, X_i)` has Frobenius norm at most `tol`;
/// errors after `max_iter` steps, carrying the last iterate so callers that
/// prefer a best-effort mean can recover it.
pub fn karcher_mean(points: &[SpdMatrix], tol: f64, max_iter: usize) -> Result<SpdMatrix> {
    if points.is_empty() {
        return Err(Error::InvalidParameter(
            "karcher mean of an empty set".into(),
        ));
    }
    let d = points[0].dim();
    for p in points {
        if p.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: p.dim(),
            });
        }
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "karcher tolerance must be strictly positive, got {tol}"
        )));
    }
    let m = points.len() as f64;
    let mut arith = DMatrix::zeros(d, d);
    for p in points {
        arith += p.matrix();
    }
    arith /= m;
    let mut mu = project_to_spd(&arith, PROJECTION_EPS)?;
    // The gradient criterion is on the *sum* of log-maps; the mean must come
    // in under tol / m.
    let mean_tol = tol / m;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        // Shared factorization of mu for all m log-maps of this sweep.
        let eig_mu = sym_eig(mu.matrix())?;
        let sq = eig_mu.recompose_mapped(f64::sqrt);
        let isq = eig_mu.recompose_mapped(|l| 1.0 / l.sqrt());
        let mut tangent_sum = DMatrix::zeros(d, d);
        for p in points {
            let w = symmetric_part(&(&isq * p.matrix() * &isq));
            let logw = sym_eig(&w)?.recompose_mapped(f64::ln);
            tangent_sum += &sq * logw * &sq;
        }
        let step = TangentVector::from_computed(&tangent_sum / m);
        residual = step.norm();
        if residual <= mean_tol {
            return Ok(mu);
        }
        mu = exp_map(&mu, &step)?;
    }
    Err(Error::MeanDidNotConverge {
        iterations: max_iter,
        residual: residual * m,
        last: Box::new(mu),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    use crate::spd::tests::well_conditioned;

    #[test]
    fn stein_of_equal_operands_is_exactly_zero() {
        let x = well_conditioned(4, 21);
        assert_eq!(stein_divergence(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn stein_closed_form_two_ii() {
        // S(2I, I) in dimension 2: 2 (log 1.5 - 0.5 log 2).
        let x = SpdMatrix::identity(2).scale(2.0).unwrap();
        let y = SpdMatrix::identity(2);
        let expected = 2.0 * (1.5f64.ln() - 0.5 * 2.0f64.ln());
        let s = stein_divergence(&x, &y).unwrap();
        assert_relative_eq!(s, expected, epsilon = 1e-12);
        assert_relative_eq!(s, 0.117783, epsilon = 1e-6);
    }

    #[test]
    fn stein_is_symmetric_and_nonnegative() {
        for seed in 0..20u64 {
            let x = well_conditioned(5, 2 * seed + 1);
            let y = well_conditioned(5, 3 * seed + 2);
            let a = stein_divergence(&x, &y).unwrap();
            let b = stein_divergence(&y, &x).unwrap();
            assert_relative_eq!(a, b, epsilon = 1e-12);
            assert!(a >= -1e-10, "divergence unexpectedly negative: {a}");
        }
    }

    /// Independent route to the Stein divergence: Jensen-Shannon
    /// symmetrization of the Bregman divergence of -log det,
    /// `D(X, Y) = log det Y - log det X + tr(Y^{-1} X) - d`.
    fn stein_via_bregman(x: &SpdMatrix, y: &SpdMatrix) -> f64 {
        let d = x.dim() as f64;
        let bregman = |a: &SpdMatrix, b_inv: &DMatrix<f64>, b_logdet: f64| {
            b_logdet - a.logdet() + (b_inv * a.matrix()).trace() - d
        };
        let mid = SpdMatrix::from_computed((x.matrix() + y.matrix()) * 0.5).unwrap();
        let mid_inv = crate::spd::spd_inverse(&mid).unwrap();
        0.5 * bregman(x, mid_inv.matrix(), mid.logdet())
            + 0.5 * bregman(y, mid_inv.matrix(), mid.logdet())
    }

    #[test]
    fn stein_matches_bregman_symmetrization() {
        for seed in 0..10u64 {
            let x = well_conditioned(4, seed + 40);
            let y = well_conditioned(4, seed + 80);
            let direct = stein_divergence(&x, &y).unwrap();
            let via_js = stein_via_bregman(&x, &y);
            assert_relative_eq!(direct, via_js, epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn airm_self_distance_is_zero() {
        let x = well_conditioned(3, 9);
        assert!(airm_distance(&x, &x).unwrap() <= 1e-9);
    }

    #[test]
    fn airm_closed_form_scaled_identity() {
        // d(4I, I) in dimension 3 = sqrt(3) log 4.
        let x = SpdMatrix::identity(3).scale(4.0).unwrap();
        let y = SpdMatrix::identity(3);
        assert_relative_eq!(
            airm_distance(&x, &y).unwrap(),
            3.0f64.sqrt() * 4.0f64.ln(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn airm_is_congruence_invariant() {
        let x = well_conditioned(4, 5);
        let y = well_conditioned(4, 6);
        let base = airm_distance(&x, &y).unwrap();
        // A deterministic invertible congruence transform.
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.3, -0.2, 0.1, //
                0.0, 1.2, 0.4, -0.3, //
                0.5, 0.0, 0.9, 0.2, //
                -0.1, 0.2, 0.0, 1.1,
            ],
        );
        let xc = SpdMatrix::from_computed(&a * x.matrix() * a.transpose()).unwrap();
        let yc = SpdMatrix::from_computed(&a * y.matrix() * a.transpose()).unwrap();
        let transformed = airm_distance(&xc, &yc).unwrap();
        assert!(
            (base - transformed).abs() <= 1e-8 * base.max(1.0),
            "congruence moved the distance: {base} vs {transformed}"
        );
    }

    #[test]
    fn thompson_closed_form_scaled_identity() {
        let x = SpdMatrix::identity(2).scale(4.0).unwrap();
        let y = SpdMatrix::identity(2);
        assert_relative_eq!(thompson_metric(&x, &y).unwrap(), 4.0f64.ln(), epsilon = 1e-10);
    }

    #[test]
    fn thompson_is_symmetric() {
        for seed in 0..10u64 {
            let x = well_conditioned(5, seed + 13);
            let y = well_conditioned(5, seed + 31);
            let a = thompson_metric(&x, &y).unwrap();
            let b = thompson_metric(&y, &x).unwrap();
            assert_relative_eq!(a, b, epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn geodesic_endpoints() {
        let x = well_conditioned(4, 3);
        let y = well_conditioned(4, 4);
        let at0 = geodesic(&x, &y, 0.0).unwrap();
        let at1 = geodesic(&x, &y, 1.0).unwrap();
        assert!((at0.matrix() - x.matrix()).norm() <= 1e-10 * x.frobenius_norm());
        assert!((at1.matrix() - y.matrix()).norm() <= 1e-10 * y.frobenius_norm());
    }

    #[test]
    fn geodesic_midpoint_of_scaled_identity() {
        let x = SpdMatrix::identity(2);
        let y = SpdMatrix::identity(2).scale(4.0).unwrap();
        let mid = geodesic(&x, &y, 0.5).unwrap();
        assert!((mid.matrix() - DMatrix::identity(2, 2) * 2.0).norm() <= 1e-10);
    }

    #[test]
    fn geodesic_rejects_parameter_outside_unit_interval() {
        let x = SpdMatrix::identity(2);
        let y = SpdMatrix::identity(2).scale(2.0).unwrap();
        assert!(geodesic(&x, &y, -0.1).is_err());
        assert!(geodesic(&x, &y, 1.1).is_err());
    }

    #[test]
    fn geodesic_is_metrically_linear() {
        let x = well_conditioned(3, 17);
        let y = well_conditioned(3, 18);
        let total = airm_distance(&x, &y).unwrap();
        for k in 1..8 {
            let p = k as f64 / 8.0;
            let g = geodesic(&x, &y, p).unwrap();
            let part = airm_distance(&x, &g).unwrap();
            assert!(
                (part - p * total).abs() <= 1e-7 * total,
                "d(X, gamma({p})) = {part}, want {}",
                p * total
            );
        }
    }

    #[test]
    fn stein_contracts_along_geodesics() {
        let x = well_conditioned(4, 27);
        let y = well_conditioned(4, 28);
        let full = stein_divergence(&x, &y).unwrap();
        for k in 0..=8 {
            let p = k as f64 / 8.0;
            let g = geodesic(&x, &y, p).unwrap();
            let s = stein_divergence(&x, &g).unwrap();
            assert!(
                s <= p * full + 1e-9,
                "S(X, gamma({p})) = {s} exceeds p*S = {}",
                p * full
            );
        }
    }

    #[test]
    fn log_map_at_base_point_is_zero() {
        let x = well_conditioned(4, 33);
        assert!(log_map(&x, &x).unwrap().norm() <= 1e-9);
    }

    #[test]
    fn exp_map_at_identity_is_matrix_exponential() {
        let v = TangentVector::new(DMatrix::from_row_slice(
            2,
            2,
            &[0.3, -0.2, -0.2, 0.5],
        ))
        .unwrap();
        let via_map = exp_map(&SpdMatrix::identity(2), &v).unwrap();
        let direct = crate::spd::sym_expm(&v).unwrap();
        assert!((via_map.matrix() - direct.matrix()).norm() <= 1e-12);
    }

    #[test]
    fn exp_log_maps_invert_each_other() {
        let x = well_conditioned(5, 44);
        let y = well_conditioned(5, 45);
        let v = log_map(&x, &y).unwrap();
        let back = exp_map(&x, &v).unwrap();
        let err = (back.matrix() - y.matrix()).norm();
        assert!(
            err <= 1e-7 * y.frobenius_norm(),
            "exp_map(log_map) drifted by {err}"
        );
    }

    #[test]
    fn karcher_mean_of_singleton_is_the_point() {
        let x = well_conditioned(3, 50);
        let mu = karcher_mean(std::slice::from_ref(&x), KARCHER_TOL, KARCHER_MAX_ITER).unwrap();
        let err = (mu.matrix() - x.matrix()).norm();
        assert!(err <= 1e-12 * x.frobenius_norm(), "singleton mean off by {err}");
    }

    #[test]
    fn karcher_mean_of_commuting_pair_is_geometric_mean() {
        // For {aI, bI} the barycenter is sqrt(ab) I.
        let a = SpdMatrix::identity(3).scale(2.0).unwrap();
        let b = SpdMatrix::identity(3).scale(8.0).unwrap();
        let mu = karcher_mean(&[a, b], KARCHER_TOL, KARCHER_MAX_ITER).unwrap();
        let expected = DMatrix::identity(3, 3) * 4.0;
        assert!((mu.matrix() - expected).norm() <= 1e-7);
    }

    #[test]
    fn karcher_mean_satisfies_gradient_condition() {
        let points: Vec<SpdMatrix> = (0..6).map(|k| well_conditioned(4, 60 + k)).collect();
        let mu = karcher_mean(&points, KARCHER_TOL, KARCHER_MAX_ITER).unwrap();
        let mut grad = DMatrix::zeros(4, 4);
        for p in &points {
            grad += log_map(&mu, p).unwrap().matrix();
        }
        assert!(
            grad.norm() <= KARCHER_TOL,
            "first-order condition violated: |grad| = {}",
            grad.norm()
        );
    }

    #[test]
    fn karcher_mean_rejects_empty_and_mismatched_input() {
        assert!(karcher_mean(&[], KARCHER_TOL, KARCHER_MAX_ITER).is_err());
        let a = SpdMatrix::identity(2);
        let b = SpdMatrix::identity(3);
        assert!(matches!(
            karcher_mean(&[a, b], KARCHER_TOL, KARCHER_MAX_ITER),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn karcher_nonconvergence_carries_last_iterate() {
        let points: Vec<SpdMatrix> = (0..4).map(|k| well_conditioned(3, 70 + k)).collect();
        // One iteration cannot reach a 1e-8 gradient from a cold start.
        match karcher_mean(&points, 1e-12, 1) {
            Err(Error::MeanDidNotConverge { last, residual, .. }) => {
                assert_eq!(last.dim(), 3);
                assert!(residual.is_finite());
            }
            other => panic!("expected MeanDidNotConverge, got {other:?}"),
        }
    }

    #[test]
    fn sandwich_inequality_holds_on_random_pairs() {
        for seed in 0..30u64 {
            let d = [2, 3, 5][seed as usize % 3];
            let x = well_conditioned(d, 100 + seed);
            let y = well_conditioned(d, 200 + seed);
            let s = stein_divergence(&x, &y).unwrap();
            let g = airm_distance(&x, &y).unwrap();
            let t = thompson_metric(&x, &y).unwrap();
            let dd = d as f64;
            assert!(s <= g * g / 8.0 + 1e-9, "lower sandwich failed: {s} vs {}", g * g / 8.0);
            assert!(
                g * g / 8.0 <= 0.25 * t * (s + dd * dd.ln()) + 1e-9,
                "upper sandwich failed at d={d}"
            );
        }
    }
}
