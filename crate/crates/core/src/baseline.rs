//! The flat reference point: log-Euclidean embedding and sparse coding.
//!
//! Mapping `X -> logm(X)` pulls the SPD cone into the vector space of
//! symmetric matrices, where ordinary (Euclidean) sparse coding applies. The
//! embedding here stacks the upper triangle of the matrix logarithm row by
//! row, scaling off-diagonal entries by `sqrt(2)` so that the Euclidean norm
//! of the vector equals the Frobenius norm of the symmetric matrix — i.e. the
//! embedding is an isometry onto `R^{d(d+1)/2}`.
//!
//! Coding reuses the same coordinate-descent core as the kernel path: for a
//! column dictionary `A` and target `y`, the lasso objective
//! `|y - A v|^2 + lambda |v|_1` expands into the quadratic form with
//! `self_sim = |y|^2`, linear term `A' y`, and Gram `A' A`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::coding::{self, CodingProblem, SparseCode};
use crate::error::{Error, Result};
use crate::set::LabeledSpdSet;
use crate::spd::{spd_logm, SpdMatrix};

/// Length of the embedded vector for `d x d` matrices.
pub fn embedding_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Isometric vectorization of `logm(X)`: upper triangle in row-major order,
/// off-diagonal entries scaled by `sqrt(2)`.
pub fn log_euclidean_embed(x: &SpdMatrix) -> Result<Vec<f64>> {
    let log = spd_logm(x)?;
    let mat = log.matrix();
    let d = mat.nrows();
    let mut out = Vec::with_capacity(embedding_len(d));
    let root2 = std::f64::consts::SQRT_2;
    for i in 0..d {
        for j in i..d {
            let v = mat[(i, j)];
            out.push(if i == j { v } else { root2 * v });
        }
    }
    Ok(out)
}

/// A dictionary of embedded atoms (one column each) with the cached products
/// the coordinate-descent solver needs.
#[derive(Debug, Clone)]
pub struct EuclideanDictionary {
    columns: DMatrix<f64>,
    gram: DMatrix<f64>,
    labels: Option<Vec<usize>>,
}

impl EuclideanDictionary {
    /// Wraps raw columns. `labels`, when given, must have one entry per
    /// column.
    pub fn new(columns: DMatrix<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        if columns.ncols() == 0 {
            return Err(Error::InvalidParameter(
                "dictionary must contain at least one column".into(),
            ));
        }
        if let Some(l) = &labels {
            if l.len() != columns.ncols() {
                return Err(Error::DimensionMismatch {
                    expected: columns.ncols(),
                    got: l.len(),
                });
            }
        }
        let gram = columns.transpose() * &columns;
        Ok(EuclideanDictionary {
            columns,
            gram,
            labels,
        })
    }

    /// Embeds every matrix of `set` as a column, carrying the labels along.
    pub fn from_spd_set(set: &LabeledSpdSet) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::InvalidParameter(
                "dictionary must contain at least one column".into(),
            ));
        }
        let d = set.dim().expect("non-empty");
        let rows = embedding_len(d);
        let embedded: Vec<Vec<f64>> = set
            .points()
            .par_iter()
            .map(log_euclidean_embed)
            .collect::<Result<_>>()?;
        let mut columns = DMatrix::zeros(rows, set.len());
        for (j, e) in embedded.iter().enumerate() {
            columns.column_mut(j).copy_from_slice(e);
        }
        EuclideanDictionary::new(columns, set.labels().map(<[usize]>::to_vec))
    }

    pub fn len(&self) -> usize {
        self.columns.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.ncols() == 0
    }

    /// Embedded-space dimension (rows of the column matrix).
    pub fn rows(&self) -> usize {
        self.columns.nrows()
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// The coding problem for target `y`, sharing this dictionary's Gram.
    pub fn problem(&self, y: &[f64], lambda: f64) -> Result<CodingProblem<'_>> {
        if y.len() != self.rows() {
            return Err(Error::DimensionMismatch {
                expected: self.rows(),
                got: y.len(),
            });
        }
        let mut linear = Vec::with_capacity(self.len());
        for j in 0..self.len() {
            linear.push(self.columns.column(j).iter().zip(y).map(|(a, b)| a * b).sum());
        }
        let self_sim = y.iter().map(|v| v * v).sum();
        CodingProblem::new(linear, &self.gram, self_sim, lambda)
    }
}

/// Default penalty for target `y`: the same fraction-of-peak-response rule
/// the kernel path uses, applied to the linear term `A' y`.
pub fn default_lambda(y: &[f64], dict: &EuclideanDictionary) -> Result<f64> {
    let problem = dict.problem(y, 0.0)?;
    Ok(coding::default_lambda(problem.kernel_vec()))
}

/// Lasso over embedded atoms: minimizes `|y - A v|^2 + lambda |v|_1`.
/// `lambda = None` derives the default penalty from the responses `A' y`.
pub fn euclidean_lasso(
    y: &[f64],
    dict: &EuclideanDictionary,
    lambda: Option<f64>,
) -> Result<SparseCode> {
    let lambda = match lambda {
        Some(l) => l,
        None => default_lambda(y, dict)?,
    };
    let problem = dict.problem(y, lambda)?;
    coding::solve(&problem, coding::SOLVER_TOL, coding::SOLVER_MAX_SWEEPS)
}

/// Nearest-column fallback: index minimizing `|y - a_j|` (ties toward the
/// smaller index).
fn nearest_column(y: &[f64], dict: &EuclideanDictionary) -> usize {
    let mut best = (0usize, f64::INFINITY);
    for j in 0..dict.len() {
        let dist: f64 = dict
            .columns
            .column(j)
            .iter()
            .zip(y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if dist < best.1 {
            best = (j, dist);
        }
    }
    best.0
}

/// Residual-based classification in the embedded space: code the query, then
/// pick the class whose atoms alone reconstruct it best (strict minimum, ties
/// toward the smaller class id). `lambda = None` derives the default penalty
/// per query. An all-zero code falls back to the label of the nearest column.
pub fn classify_euclidean(
    query: &SpdMatrix,
    dict: &EuclideanDictionary,
    lambda: Option<f64>,
) -> Result<usize> {
    let labels = dict.labels.as_ref().ok_or_else(|| {
        Error::InvalidParameter("classification requires a labeled dictionary".into())
    })?;
    let y = log_euclidean_embed(query)?;
    let lambda = match lambda {
        Some(l) => l,
        None => default_lambda(&y, dict)?,
    };
    let problem = dict.problem(&y, lambda)?;
    let code = coding::solve_lenient(&problem, coding::SOLVER_TOL, coding::SOLVER_MAX_SWEEPS)?;
    if code.nonzeros() == 0 {
        return Ok(labels[nearest_column(&y, dict)]);
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut best: Option<(usize, f64)> = None;
    for &c in &classes {
        let err =
            coding::masked_reconstruction_error(&code.coefficients, &problem, |i| labels[i] == c);
        match best {
            Some((_, e)) if err >= e => {}
            _ => best = Some((c, err)),
        }
    }
    Ok(best.expect("at least one class").0)
}
