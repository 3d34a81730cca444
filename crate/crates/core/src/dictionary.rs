//! Dictionary learning in the Stein-kernel feature space.
//!
//! Given samples `X_1..X_m`, find atoms `D_1..D_N` (SPD, unit norm) so that
//! every sample is well represented by a sparse combination of mapped atoms.
//! The energy being minimized is the summed coding objective
//!
//! ```text
//! J(D, V) = sum_j [ k(X_j, X_j) - 2 v_j' kv_j + v_j' K v_j + lambda |v_j|_1 ]
//! ```
//!
//! and [`learn`] alternates the two classic phases:
//!
//! 1. *Coding*: with atoms fixed, each `v_j` is a kernelized lasso solved by
//!    coordinate descent (cold-started from zero each iteration).
//! 2. *Atom updates*: with codes fixed, each atom in turn is moved toward the
//!    stationary point of `J` in `D_r`. Differentiating through the kernel
//!    produces the pair of matrix sums exposed as [`atom_terms`]:
//!
//!    ```text
//!    F(r) = sum_j 2 v_jr k(X_j, D_r) (X_j + D_r)^{-1}
//!    G(r) = sum_j sum_i v_jr v_ji k(D_i, D_r) (D_i + D_r)^{-1}
//!    ```
//!
//!    Setting the derivative to zero and freezing the kernel values and the
//!    summed inverses at their cached values leaves a linear stationarity
//!    condition in `D_r^{-1}`, namely `F - G = -(s/2) D_r^{-1}` with the
//!    scalar `s = sum_j v_jr (v_j' k(D, D_r) - 2 k(X_j, D_r))`, so the
//!    closed-form candidate is `D_r <- (-s/2) (F - G)^{-1}`. For an atom that
//!    is actually used by the codes, `s` works out negative (each active
//!    sample contributes `-v_jr k(X_j, D_r) - lambda |v_jr| / 2` at the coding
//!    optimum), making the leading factor positive; a sample-free perfect fit
//!    (`X = D`, `v = 1`) reproduces the atom exactly. The candidate is
//!    projected back onto the SPD cone and renormalized; degenerate cases
//!    (unused atom, tiny `s`, singular `F - G`) leave the atom untouched and
//!    are counted in the trace.
//!
//! Atoms are updated in sequence, and every accepted update refreshes the
//! cached kernel values against that atom before the next one moves. Updating
//! the whole round against iteration-start kernels instead (a simultaneous
//! step) sends every atom toward the same stationary target and collapses the
//! dictionary onto near-duplicates within one iteration. Because the
//! fixed-point step is not a descent step, [`learn`] additionally rejects any
//! move that would raise the energy under the fixed codes, which makes the
//! recorded energy non-increasing across the whole alternation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use nalgebra::{Cholesky, DMatrix};

use crate::coding::{self, CodingProblem, SparseCode};
use crate::error::{Error, Result};
use crate::geometry::{airm_distance, karcher_mean};
use crate::kernel::{gram, stein_kernel, GramMatrix, KernelParams};
use crate::set::LabeledSpdSet;
use crate::spd::{project_to_spd, sym_eig, symmetric_part, SpdMatrix, PROJECTION_EPS};

/// Denominators smaller than this (in absolute value) make the closed-form
/// atom update numerically meaningless; the atom is skipped instead.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Relative energy decrease below which an iteration counts as stalled.
pub const STALL_REL_TOL: f64 = 1e-4;

/// Consecutive stalled iterations after which learning stops early.
pub const STALL_PATIENCE: usize = 3;

/// Karcher-mean settings used inside k-means (looser than the public
/// defaults; a best-effort mean is accepted when the cap is hit).
const KMEANS_MEAN_TOL: f64 = 1e-6;
const KMEANS_MEAN_MAX_ITER: usize = 50;

/// A dictionary whose Gram matrix is kept consistent with its atoms.
///
/// Immutable by design: learning builds a fresh value per outer iteration
/// boundary instead of mutating in place, so the Gram can never go stale.
#[derive(Debug, Clone)]
pub struct StableDictionary {
    atoms: LabeledSpdSet,
    params: KernelParams,
    gram: GramMatrix,
}

impl StableDictionary {
    /// Computes the self-Gram and bundles it with the atoms.
    pub fn new(atoms: LabeledSpdSet, params: KernelParams) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidParameter(
                "dictionary must contain at least one atom".into(),
            ));
        }
        let d = atoms.dim().expect("non-empty set");
        if d != params.dim() {
            return Err(Error::DimensionMismatch {
                expected: params.dim(),
                got: d,
            });
        }
        let gram = gram(&atoms, &atoms, &params)?;
        Ok(StableDictionary {
            atoms,
            params,
            gram,
        })
    }

    /// Number of atoms `N`.
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Matrix dimension `d`.
    pub fn dim(&self) -> usize {
        self.atoms.dim().expect("dictionary is never empty")
    }

    pub fn atoms(&self) -> &LabeledSpdSet {
        &self.atoms
    }

    pub fn atom(&self, index: usize) -> &SpdMatrix {
        &self.atoms.points()[index]
    }

    /// Per-atom class labels, when the dictionary carries them.
    pub fn labels(&self) -> Option<&[usize]> {
        self.atoms.labels()
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    /// The cached atom self-Gram.
    pub fn gram(&self) -> &GramMatrix {
        &self.gram
    }

    /// Kernel responses `k(query, D_i)` for all atoms.
    pub fn kernel_responses(&self, query: &SpdMatrix) -> Result<Vec<f64>> {
        crate::kernel::kernel_vector(query, &self.atoms, &self.params)
    }

    /// Largest absolute difference between the cached Gram and a fresh
    /// recomputation — a consistency self-check for deserialized values.
    pub fn gram_deviation(&self) -> Result<f64> {
        let fresh = gram(&self.atoms, &self.atoms, &self.params)?;
        Ok((self.gram.entries() - fresh.entries()).abs().max())
    }
}

/// Codes for a whole sample set against one dictionary, as a dense view.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeMatrix {
    codes: Vec<SparseCode>,
    n_atoms: usize,
}

impl CodeMatrix {
    pub fn new(codes: Vec<SparseCode>, n_atoms: usize) -> Result<Self> {
        for (j, c) in codes.iter().enumerate() {
            if c.coefficients.len() != n_atoms {
                return Err(Error::Sample {
                    index: j,
                    source: Box::new(Error::DimensionMismatch {
                        expected: n_atoms,
                        got: c.coefficients.len(),
                    }),
                });
            }
        }
        Ok(CodeMatrix { codes, n_atoms })
    }

    pub fn n_samples(&self) -> usize {
        self.codes.len()
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn codes(&self) -> &[SparseCode] {
        &self.codes
    }

    /// Coefficient of sample `j` on atom `r`.
    pub fn coefficient(&self, j: usize, r: usize) -> f64 {
        self.codes[j].coefficients[r]
    }

    /// True when no sample uses atom `r`.
    pub fn atom_unused(&self, r: usize) -> bool {
        self.codes.iter().all(|c| c.coefficients[r] == 0.0)
    }

    /// Mean number of structurally nonzero coefficients per sample.
    pub fn mean_nonzeros(&self) -> f64 {
        if self.codes.is_empty() {
            return 0.0;
        }
        self.codes.iter().map(|c| c.nonzeros() as f64).sum::<f64>() / self.codes.len() as f64
    }
}

/// Per-iteration diagnostics of a [`learn`] run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningTrace {
    /// Energy `J` after the coding phase of each iteration.
    pub energy: Vec<f64>,
    /// Mean nonzero count per code, per iteration.
    pub mean_nonzeros: Vec<f64>,
    /// Atom updates skipped (unused atom / degenerate denominator / singular
    /// system), per iteration.
    pub skipped: Vec<usize>,
}

/// Total coding energy of `codes` for `samples` under `dict`, recomputed from
/// scratch (kernels included). Each code contributes its own penalty weight.
pub fn energy(samples: &LabeledSpdSet, dict: &StableDictionary, codes: &[SparseCode]) -> Result<f64> {
    if samples.len() != codes.len() {
        return Err(Error::DimensionMismatch {
            expected: samples.len(),
            got: codes.len(),
        });
    }
    let terms: Vec<Result<f64>> = samples
        .points()
        .par_iter()
        .zip(codes.par_iter())
        .map(|(x, code)| {
            let kv = dict.kernel_responses(x)?;
            let problem = CodingProblem::new(kv, dict.gram().entries(), 1.0, code.lambda)?;
            Ok(coding::objective(&code.coefficients, &problem))
        })
        .collect();
    let mut total = 0.0;
    for (index, t) in terms.into_iter().enumerate() {
        total += t.map_err(|e| Error::Sample {
            index,
            source: Box::new(e),
        })?;
    }
    Ok(total)
}

/// How the starting dictionary is picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMethod {
    /// `N` distinct samples drawn without replacement.
    Random,
    /// Riemannian k-means centers ([`riemannian_kmeans`]).
    KMeans,
}

/// Seeds a dictionary from the samples. Atoms are taken as-is (no
/// normalization); [`learn`] normalizes its own working copy.
pub fn init_dictionary(
    samples: &LabeledSpdSet,
    n_atoms: usize,
    method: InitMethod,
    seed: u64,
) -> Result<StableDictionary> {
    check_atom_count(samples, n_atoms)?;
    let d = samples.dim().expect("non-empty");
    let params = KernelParams::default_for_dim(d)?;
    match method {
        InitMethod::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let picks = rand::seq::index::sample(&mut rng, samples.len(), n_atoms);
            let atoms: Vec<SpdMatrix> = picks
                .iter()
                .map(|j| samples.points()[j].clone())
                .collect();
            StableDictionary::new(LabeledSpdSet::unlabeled(atoms)?, params)
        }
        InitMethod::KMeans => Ok(riemannian_kmeans(samples, n_atoms, seed, 50)?.dictionary),
    }
}

fn check_atom_count(samples: &LabeledSpdSet, n_atoms: usize) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("sample set is empty".into()));
    }
    if n_atoms == 0 || n_atoms > samples.len() {
        return Err(Error::InvalidParameter(format!(
            "atom count must satisfy 1 <= N <= {}, got {n_atoms}",
            samples.len()
        )));
    }
    Ok(())
}

/// Result of [`riemannian_kmeans`].
#[derive(Debug, Clone)]
pub struct KMeansOutcome {
    /// The final centers, packaged with the default kernel width.
    pub dictionary: StableDictionary,
    /// Cluster index per sample.
    pub assignments: Vec<usize>,
    /// Sum of squared geodesic distances to assigned centers, recorded after
    /// every assignment step (non-increasing along the run).
    pub distortion_trace: Vec<f64>,
}

/// Lloyd's algorithm under the affine-invariant metric.
///
/// Initialization is seeded farthest-point sampling: the first center is a
/// uniform draw, every further center the point farthest from the chosen
/// ones. Assignment uses geodesic distance (ties toward the smaller cluster
/// index), updates take Karcher means (best effort when the inner iteration
/// hits its cap), and a cluster that ends up empty is re-seeded with the
/// point farthest from its assigned center. Stops when assignments stop
/// changing or after `max_iter` rounds.
pub fn riemannian_kmeans(
    samples: &LabeledSpdSet,
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<KMeansOutcome> {
    check_atom_count(samples, k)?;
    let m = samples.len();
    let points = samples.points();
    let d = samples.dim().expect("non-empty");
    let params = KernelParams::default_for_dim(d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Farthest-point seeding.
    let first = rand::Rng::random_range(&mut rng, 0..m);
    let mut centers: Vec<SpdMatrix> = vec![points[first].clone()];
    let mut nearest: Vec<f64> = points
        .par_iter()
        .map(|p| airm_distance(p, &centers[0]))
        .collect::<Result<_>>()?;
    while centers.len() < k {
        let (next, _) = nearest
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, &x)| {
                if x > bv {
                    (i, x)
                } else {
                    (bi, bv)
                }
            });
        centers.push(points[next].clone());
        let latest = centers.last().expect("just pushed").clone();
        let updated: Vec<f64> = points
            .par_iter()
            .zip(nearest.par_iter())
            .map(|(p, &old)| Ok(old.min(airm_distance(p, &latest)?)))
            .collect::<Result<_>>()?;
        nearest = updated;
    }

    let mut assignments: Vec<usize> = vec![usize::MAX; m];
    let mut distortion_trace = Vec::new();
    for _round in 0..max_iter {
        // Assignment step.
        let assigned: Vec<(usize, f64)> = points
            .par_iter()
            .map(|p| {
                let mut best = (0usize, f64::INFINITY);
                for (c, center) in centers.iter().enumerate() {
                    let dist = airm_distance(p, center)?;
                    if dist < best.1 {
                        best = (c, dist);
                    }
                }
                Ok(best)
            })
            .collect::<Result<_>>()?;
        let new_assignments: Vec<usize> = assigned.iter().map(|&(c, _)| c).collect();
        distortion_trace.push(assigned.iter().map(|&(_, d)| d * d).sum());
        let converged = new_assignments == assignments;
        assignments = new_assignments;
        if converged {
            break;
        }

        // Re-seed empty clusters with the worst-served point.
        for c in 0..k {
            if assignments.iter().any(|&a| a == c) {
                continue;
            }
            let (worst, _) = assigned
                .iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, &(_, dist))| {
                    if assignments[i] != c && dist > bv {
                        (i, dist)
                    } else {
                        (bi, bv)
                    }
                });
            centers[c] = points[worst].clone();
            assignments[worst] = c;
        }

        // Update step: Karcher mean per cluster.
        let members: Vec<Vec<SpdMatrix>> = (0..k)
            .map(|c| {
                assignments
                    .iter()
                    .zip(points.iter())
                    .filter(|&(&a, _)| a == c)
                    .map(|(_, p)| p.clone())
                    .collect()
            })
            .collect();
        let updated: Vec<SpdMatrix> = members
            .into_par_iter()
            .enumerate()
            .map(|(c, group)| {
                if group.is_empty() {
                    return Ok(centers[c].clone());
                }
                match karcher_mean(&group, KMEANS_MEAN_TOL, KMEANS_MEAN_MAX_ITER) {
                    Ok(mu) => Ok(mu),
                    Err(Error::MeanDidNotConverge { last, .. }) => Ok(*last),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()?;
        centers = updated;
    }

    let dictionary = StableDictionary::new(LabeledSpdSet::unlabeled(centers)?, params)?;
    Ok(KMeansOutcome {
        dictionary,
        assignments,
        distortion_trace,
    })
}

/// Symmetrized Cholesky inverse of the SPD sum `a + b`.
fn spd_sum_inverse(a: &SpdMatrix, b: &SpdMatrix) -> Result<DMatrix<f64>> {
    let sum = a.matrix() + b.matrix();
    let chol = Cholesky::new(symmetric_part(&sum)).ok_or(Error::NotPositiveDefinite)?;
    Ok(symmetric_part(&chol.inverse()))
}

/// The two matrix sums of the stationary-point equation for atom `r`, from
/// the current kernel caches: `kxd[(j, i)] = k(X_j, D_i)` and
/// `kdd[(i, l)] = k(D_i, D_l)`. Samples with a zero coefficient on `r`
/// contribute nothing and are not touched.
pub fn atom_terms_cached(
    r: usize,
    samples: &LabeledSpdSet,
    atoms: &[SpdMatrix],
    codes: &CodeMatrix,
    kxd: &DMatrix<f64>,
    kdd: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = atoms.len();
    let m = samples.len();
    if r >= n {
        return Err(Error::InvalidParameter(format!(
            "atom index {r} out of range for {n} atoms"
        )));
    }
    if codes.n_samples() != m || codes.n_atoms() != n {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: codes.n_samples(),
        });
    }
    let d = atoms[r].dim();
    let mut f = DMatrix::zeros(d, d);
    for (j, x) in samples.points().iter().enumerate() {
        let vjr = codes.coefficient(j, r);
        if vjr == 0.0 {
            continue;
        }
        f += spd_sum_inverse(x, &atoms[r])? * (2.0 * vjr * kxd[(j, r)]);
    }
    let mut g = DMatrix::zeros(d, d);
    for (i, di) in atoms.iter().enumerate() {
        let mut ci = 0.0;
        for j in 0..m {
            ci += codes.coefficient(j, r) * codes.coefficient(j, i);
        }
        if ci == 0.0 {
            continue;
        }
        g += spd_sum_inverse(di, &atoms[r])? * (ci * kdd[(i, r)]);
    }
    Ok((symmetric_part(&f), symmetric_part(&g)))
}

/// Convenience wrapper over [`atom_terms_cached`] that derives both kernel
/// caches from the dictionary itself.
pub fn atom_terms(
    r: usize,
    samples: &LabeledSpdSet,
    dict: &StableDictionary,
    codes: &CodeMatrix,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let kxd = cross_kernel(samples, dict)?;
    atom_terms_cached(
        r,
        samples,
        dict.atoms().points(),
        codes,
        &kxd,
        dict.gram().entries(),
    )
}

fn cross_kernel(samples: &LabeledSpdSet, dict: &StableDictionary) -> Result<DMatrix<f64>> {
    Ok(gram(samples, dict.atoms(), dict.params())?.entries().clone())
}

/// Kernel values of atom `r` against every sample and every atom, for
/// refreshing the caches after the atom has moved.
fn kernel_columns(
    r: usize,
    samples: &LabeledSpdSet,
    atoms: &[SpdMatrix],
    params: &KernelParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let against_samples: Vec<Result<f64>> = samples
        .points()
        .par_iter()
        .map(|x| stein_kernel(x, &atoms[r], params))
        .collect();
    let col_x = against_samples
        .into_iter()
        .enumerate()
        .map(|(index, k)| {
            k.map_err(|e| Error::Sample {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut col_d = Vec::with_capacity(atoms.len());
    for (i, di) in atoms.iter().enumerate() {
        col_d.push(if i == r {
            1.0
        } else {
            stein_kernel(di, &atoms[r], params)?
        });
    }
    Ok((col_x, col_d))
}

/// Which norm updated atoms are rescaled to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    /// Unit Frobenius norm (default).
    Frobenius,
    /// Unit spectral norm (largest eigenvalue).
    Spectral,
}

impl NormKind {
    fn of(&self, x: &SpdMatrix) -> f64 {
        match self {
            NormKind::Frobenius => x.frobenius_norm(),
            NormKind::Spectral => x.spectral_norm(),
        }
    }
}

/// Outcome of one atom update.
#[derive(Debug, Clone, PartialEq)]
pub enum AtomUpdate {
    /// Replace the atom with this (projected, normalized) matrix.
    Updated(SpdMatrix),
    /// No sample used the atom; it stays untouched.
    SkippedUnused,
    /// The denominator or the linear system was too degenerate to trust.
    SkippedDegenerate,
}

/// Closed-form update of atom `r` given fixed codes and current kernel
/// caches: solve `D_r = (-s/2)(F - G)^{-1}`, project onto the cone,
/// normalize. Degenerate configurations are reported, not forced.
pub fn update_atom(
    r: usize,
    samples: &LabeledSpdSet,
    atoms: &[SpdMatrix],
    codes: &CodeMatrix,
    kxd: &DMatrix<f64>,
    kdd: &DMatrix<f64>,
    norm: NormKind,
) -> Result<AtomUpdate> {
    if codes.atom_unused(r) {
        return Ok(AtomUpdate::SkippedUnused);
    }
    let m = samples.len();
    let n = atoms.len();
    let mut s = 0.0;
    for j in 0..m {
        let vjr = codes.coefficient(j, r);
        if vjr == 0.0 {
            continue;
        }
        let mut vk = 0.0;
        for i in 0..n {
            vk += codes.coefficient(j, i) * kdd[(i, r)];
        }
        s += vjr * (vk - 2.0 * kxd[(j, r)]);
    }
    if s.abs() <= DENOMINATOR_FLOOR {
        return Ok(AtomUpdate::SkippedDegenerate);
    }
    let (f, g) = atom_terms_cached(r, samples, atoms, codes, kxd, kdd)?;
    let system = f - g;
    let eig = sym_eig(&system)?;
    let max_abs = eig
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, &l| acc.max(l.abs()));
    let min_abs = eig
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, &l| acc.min(l.abs()));
    if max_abs == 0.0 || min_abs <= 1e-14 * max_abs {
        log::warn!("atom {r}: singular F - G (|eig| range {min_abs:.3e}..{max_abs:.3e}), skipping update");
        return Ok(AtomUpdate::SkippedDegenerate);
    }
    let candidate = eig.recompose_mapped(|l| 1.0 / l) * (-s / 2.0);
    let projected = project_to_spd(&candidate, PROJECTION_EPS)?;
    let scale = norm.of(&projected);
    if !(scale > 0.0) {
        return Ok(AtomUpdate::SkippedDegenerate);
    }
    Ok(AtomUpdate::Updated(projected.scale(1.0 / scale)?))
}

/// Settings for [`learn`].
#[derive(Debug, Clone)]
pub struct LearnOptions {
    /// Dictionary size `N`.
    pub n_atoms: usize,
    /// Fixed coding penalty; `None` derives the default per sample.
    pub lambda: Option<f64>,
    /// Outer iteration cap.
    pub iterations: usize,
    /// RNG seed (initialization).
    pub seed: u64,
    /// Starting dictionary.
    pub init: InitMethod,
    /// Kernel width; `None` uses `d / 2`.
    pub sigma: Option<f64>,
    /// Norm updated atoms are rescaled to.
    pub norm: NormKind,
    /// Replace atoms unused by every sample with the worst-coded sample
    /// after each iteration (off by default; when off, skipped atoms are
    /// bit-identical across the iteration).
    pub replace_unused: bool,
}

impl LearnOptions {
    /// Defaults for a dictionary of `n_atoms` atoms: auto penalty, 30
    /// iterations, seed 0, random init, width `d/2`, Frobenius normalization.
    pub fn new(n_atoms: usize) -> Self {
        LearnOptions {
            n_atoms,
            lambda: None,
            iterations: 30,
            seed: 0,
            init: InitMethod::Random,
            sigma: None,
            norm: NormKind::Frobenius,
            replace_unused: false,
        }
    }
}

fn normalized(atom: &SpdMatrix, norm: NormKind) -> Result<SpdMatrix> {
    let scale = norm.of(atom);
    if !(scale > 0.0) {
        return Err(Error::InvalidParameter(
            "atom has non-positive norm".into(),
        ));
    }
    atom.scale(1.0 / scale)
}

/// Codes every sample against raw atom data (shared kernel caches).
///
/// Uses the lenient acceptance rule: mid-learning dictionaries routinely
/// hold near-duplicate atoms (normalized k-means centers, replaced samples)
/// whose degenerate Gram can stall the exact solver on its final decimal,
/// and an energy-driven outer loop must not abort over that.
fn code_against_cache(
    kxd: &DMatrix<f64>,
    kdd: &DMatrix<f64>,
    lambda: Option<f64>,
) -> Result<Vec<SparseCode>> {
    let m = kxd.nrows();
    let outcomes: Vec<Result<SparseCode>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let kv: Vec<f64> = kxd.row(j).iter().cloned().collect();
            let lam = lambda.unwrap_or_else(|| coding::default_lambda(&kv));
            let problem = CodingProblem::new(kv, kdd, 1.0, lam)?;
            coding::solve_lenient(&problem, coding::SOLVER_TOL, coding::SOLVER_MAX_SWEEPS)
        })
        .collect();
    outcomes
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map_err(|e| Error::Sample {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Alternating dictionary learning. Returns the learned dictionary and the
/// per-iteration trace. Fixed seeds give bit-identical traces.
pub fn learn(samples: &LabeledSpdSet, opts: &LearnOptions) -> Result<(StableDictionary, LearningTrace)> {
    check_atom_count(samples, opts.n_atoms)?;
    let d = samples.dim().expect("non-empty");
    let params = match opts.sigma {
        Some(s) => KernelParams::new(s, d)?,
        None => KernelParams::default_for_dim(d)?,
    };
    if opts.iterations == 0 {
        return Err(Error::InvalidParameter("iteration count must be positive".into()));
    }
    if let Some(l) = opts.lambda {
        if !(l >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be non-negative, got {l}"
            )));
        }
    }

    let start = init_dictionary(samples, opts.n_atoms, opts.init, opts.seed)?;
    let mut atoms: Vec<SpdMatrix> = Vec::with_capacity(opts.n_atoms);
    for a in start.atoms().points() {
        atoms.push(normalized(a, opts.norm)?);
    }

    let mut trace = LearningTrace::default();
    let mut stalled = 0usize;
    for _iter in 0..opts.iterations {
        let atom_set = LabeledSpdSet::unlabeled(atoms.clone())?;
        let mut kdd = gram(&atom_set, &atom_set, &params)?.entries().clone();
        let mut kxd = gram(samples, &atom_set, &params)?.entries().clone();

        let codes = code_against_cache(&kxd, &kdd, opts.lambda)?;
        let j_now: f64 = codes.iter().map(|c| c.objective).sum();
        let code_matrix = CodeMatrix::new(codes, opts.n_atoms)?;
        trace.mean_nonzeros.push(code_matrix.mean_nonzeros());
        trace.energy.push(j_now);

        let mut skips = 0usize;
        for r in 0..opts.n_atoms {
            match update_atom(r, samples, &atoms, &code_matrix, &kxd, &kdd, opts.norm)? {
                AtomUpdate::Updated(a) => {
                    // The fixed-point step is not a descent step, so the move
                    // is kept only when it lowers the energy under the codes
                    // held fixed; otherwise the atom stays and the rejection
                    // counts with the skips.
                    let old = std::mem::replace(&mut atoms[r], a);
                    let (col_x, col_d) = kernel_columns(r, samples, &atoms, &params)?;
                    let mut delta = 0.0;
                    for j in 0..samples.len() {
                        let vjr = code_matrix.coefficient(j, r);
                        if vjr == 0.0 {
                            continue;
                        }
                        let mut cross = 0.0;
                        for i in 0..opts.n_atoms {
                            if i != r {
                                cross += code_matrix.coefficient(j, i) * (col_d[i] - kdd[(i, r)]);
                            }
                        }
                        delta += 2.0 * vjr * (cross - (col_x[j] - kxd[(j, r)]));
                    }
                    if delta <= 0.0 {
                        for j in 0..samples.len() {
                            kxd[(j, r)] = col_x[j];
                        }
                        for i in 0..opts.n_atoms {
                            kdd[(i, r)] = col_d[i];
                            kdd[(r, i)] = col_d[i];
                        }
                    } else {
                        atoms[r] = old;
                        skips += 1;
                    }
                }
                AtomUpdate::SkippedUnused | AtomUpdate::SkippedDegenerate => skips += 1,
            }
        }
        if opts.replace_unused {
            let mut order: Vec<usize> = (0..code_matrix.n_samples()).collect();
            order.sort_by(|&a, &b| {
                code_matrix.codes()[b]
                    .objective
                    .partial_cmp(&code_matrix.codes()[a].objective)
                    .expect("objectives are finite")
            });
            let mut replacement = order.into_iter();
            for r in 0..opts.n_atoms {
                if code_matrix.atom_unused(r) {
                    if let Some(j) = replacement.next() {
                        atoms[r] = normalized(&samples.points()[j], opts.norm)?;
                    }
                }
            }
        }
        trace.skipped.push(skips);

        let t = trace.energy.len();
        if t >= 2 {
            let prev = trace.energy[t - 2];
            let rel = (prev - trace.energy[t - 1]) / prev.abs().max(f64::MIN_POSITIVE);
            if rel < STALL_REL_TOL {
                stalled += 1;
            } else {
                stalled = 0;
            }
            if stalled >= STALL_PATIENCE {
                break;
            }
        }
    }

    let dict = StableDictionary::new(LabeledSpdSet::unlabeled(atoms)?, params)?;
    Ok((dict, trace))
}
