//! Seeded synthetic data generators for the two benchmark tasks.
//!
//! *Classification*: each class gets its own random SPD pole and a class-mean
//! tangent vector, and samples are exponential-map images (taken at the class
//! pole) of Gaussian perturbations around that mean vector. Poles land in
//! different curvature regions of the cone, so the task rewards methods that
//! respect the geometry; `spread` is the difficulty knob — small spread keeps
//! classes tight and separable, larger spread makes them overlap.
//!
//! *Dictionary recovery*: a pool of source SPD matrices (covariances of
//! seeded Gaussian clouds with per-source location and scale) is mixed into
//! samples, each a positive combination of a few distinct sources. Positive
//! combinations stay inside the cone, so every sample is SPD by construction.
//!
//! Generation is sequential over a single seeded stream: the same seed gives
//! bit-identical output, different seeds give independent draws.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::set::LabeledSpdSet;
use crate::spd::{spd_sqrtm, sym_expm, SpdMatrix, TangentVector};

/// Tangent-noise scale of the well-separated classification task.
pub const EASY_SPREAD: f64 = 0.15;

/// Tangent-noise scale of the overlapping classification task.
pub const HARD_SPREAD: f64 = 0.45;

/// Default scale of the class-mean tangent vectors, calibrated so the hard
/// task separates geometry-aware classification from the flat baseline while
/// staying clearly harder than the easy task.
pub const DEFAULT_MEAN_SCALE: f64 = 0.3;

/// Ridge added to random covariance poles to keep them well conditioned.
const POLE_RIDGE: f64 = 0.1;

/// A random symmetric matrix with upper-triangle entries drawn iid from
/// `N(0, scale^2)` and mirrored below the diagonal.
pub fn random_tangent<R: Rng + ?Sized>(dim: usize, scale: f64, rng: &mut R) -> TangentVector {
    let mut mat = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in i..dim {
            let v: f64 = rng.sample(StandardNormal);
            mat[(i, j)] = scale * v;
            mat[(j, i)] = scale * v;
        }
    }
    TangentVector::new(mat).expect("mirrored matrix is symmetric")
}

/// Sample covariance (denominator `n - 1`) of `draws`, each a length-`dim`
/// vector.
fn sample_covariance(draws: &[Vec<f64>], dim: usize) -> DMatrix<f64> {
    let n = draws.len() as f64;
    let mut mean = vec![0.0; dim];
    for d in draws {
        for (m, x) in mean.iter_mut().zip(d) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for d in draws {
        for i in 0..dim {
            for j in i..dim {
                cov[(i, j)] += (d[i] - mean[i]) * (d[j] - mean[j]);
            }
        }
    }
    cov /= n - 1.0;
    for i in 0..dim {
        for j in 0..i {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    cov
}

/// Exponential-map step where `z` holds tangent coordinates in the
/// orthonormal basis at `base`: returns `base^{1/2} expm(z) base^{1/2}`.
///
/// Expressed this way the perturbation acts multiplicatively — eigenvalues
/// move by at most `exp(±|z|)` — so conditioning stays bounded regardless of
/// how anisotropic the base point is. (A raw ambient tangent of the same size
/// gets amplified by `base^{-1/2}` during whitening and can push the result
/// outside numerical positive definiteness.)
pub fn exp_in_base_coordinates(base: &SpdMatrix, z: &TangentVector) -> Result<SpdMatrix> {
    let sq = spd_sqrtm(base)?;
    let grown = sym_expm(z)?;
    SpdMatrix::from_computed(sq.matrix() * grown.matrix() * sq.matrix())
}

/// A random well-conditioned SPD matrix: the covariance of `2 * dim`
/// standard-normal vectors plus a small ridge.
pub fn random_covariance_pole<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<SpdMatrix> {
    let draws: Vec<Vec<f64>> = (0..2 * dim)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let mut cov = sample_covariance(&draws, dim);
    for i in 0..dim {
        cov[(i, i)] += POLE_RIDGE;
    }
    SpdMatrix::from_computed(cov)
}

/// Settings of the synthetic classification task.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthClassificationConfig {
    /// Number of classes.
    pub classes: usize,
    /// Total sample count across classes and both splits.
    pub total: usize,
    /// Matrix dimension.
    pub dim: usize,
    /// Standard deviation of the per-sample tangent noise.
    pub spread: f64,
    /// Standard deviation of each class-mean tangent vector (how far a class
    /// mean sits from its pole).
    pub mean_scale: f64,
    pub seed: u64,
}

impl SynthClassificationConfig {
    /// The well-separated task: 4 classes, 512 samples of dimension 3.
    pub fn easy(seed: u64) -> Self {
        SynthClassificationConfig {
            classes: 4,
            total: 512,
            dim: 3,
            spread: EASY_SPREAD,
            mean_scale: DEFAULT_MEAN_SCALE,
            seed,
        }
    }

    /// The overlapping task: identical layout, three times the spread.
    pub fn hard(seed: u64) -> Self {
        SynthClassificationConfig {
            spread: HARD_SPREAD,
            ..Self::easy(seed)
        }
    }

    fn validate(&self) -> Result<(usize, usize)> {
        if self.classes < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if self.total == 0 || self.total % self.classes != 0 {
            return Err(Error::InvalidParameter(format!(
                "total {} does not split evenly over {} classes",
                self.total, self.classes
            )));
        }
        let per_class = self.total / self.classes;
        if per_class % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "per-class count {per_class} does not split into train/test halves"
            )));
        }
        if !(self.spread >= 0.0) || !(self.mean_scale >= 0.0) {
            return Err(Error::InvalidParameter(
                "spread and mean_scale must be non-negative".into(),
            ));
        }
        Ok((per_class, per_class / 2))
    }
}

/// Generates the classification task: returns `(train, test)`, each holding
/// half of every class.
pub fn gen_classification(
    config: &SynthClassificationConfig,
) -> Result<(LabeledSpdSet, LabeledSpdSet)> {
    let (per_class, half) = config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut train_points = Vec::with_capacity(half * config.classes);
    let mut train_labels = Vec::with_capacity(half * config.classes);
    let mut test_points = Vec::with_capacity(half * config.classes);
    let mut test_labels = Vec::with_capacity(half * config.classes);
    for class in 0..config.classes {
        let pole = random_covariance_pole(config.dim, &mut rng)?;
        let mean_step = random_tangent(config.dim, config.mean_scale, &mut rng);
        for j in 0..per_class {
            let noise = random_tangent(config.dim, config.spread, &mut rng);
            let tangent = TangentVector::new(mean_step.matrix() + noise.matrix())?;
            let sample = exp_in_base_coordinates(&pole, &tangent)?;
            if j < half {
                train_points.push(sample);
                train_labels.push(class);
            } else {
                test_points.push(sample);
                test_labels.push(class);
            }
        }
    }
    Ok((
        LabeledSpdSet::new(train_points, Some(train_labels))?,
        LabeledSpdSet::new(test_points, Some(test_labels))?,
    ))
}

/// Settings of the synthetic dictionary-recovery task.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDictionaryConfig {
    /// Size of the source pool.
    pub sources: usize,
    /// Number of mixed samples.
    pub samples: usize,
    /// Matrix dimension.
    pub dim: usize,
    /// Distinct sources combined into each sample.
    pub combination_size: usize,
    /// Gaussian draws behind each source covariance.
    pub draws_per_source: usize,
    /// Uniform range of each source's per-coordinate location.
    pub mean_range: (f64, f64),
    /// Uniform range of each source's per-coordinate scale (must be
    /// positive).
    pub std_range: (f64, f64),
    /// Use weight 1 for every combination term instead of `|N(0, 1)|`.
    pub unit_weights: bool,
    pub seed: u64,
}

impl SynthDictionaryConfig {
    /// The reference task: 512 samples mixed from 32 sources of dimension 5,
    /// four sources per sample. The scale range keeps typical sample
    /// Frobenius norms near 1, matching the unit-norm atoms a learned
    /// dictionary is constrained to (the Stein kernel is scale sensitive,
    /// so a gross norm mismatch would flatten every response).
    pub fn standard(seed: u64) -> Self {
        SynthDictionaryConfig {
            sources: 32,
            samples: 512,
            dim: 5,
            combination_size: 4,
            draws_per_source: 100,
            mean_range: (-2.0, 2.0),
            std_range: (0.25, 0.5),
            unit_weights: false,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.sources == 0 || self.samples == 0 {
            return Err(Error::InvalidParameter(
                "source and sample counts must be positive".into(),
            ));
        }
        if self.dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if self.combination_size == 0 || self.combination_size > self.sources {
            return Err(Error::InvalidParameter(format!(
                "combination size must lie in 1..={}, got {}",
                self.sources, self.combination_size
            )));
        }
        if self.draws_per_source <= self.dim {
            return Err(Error::InvalidParameter(format!(
                "need more than {} draws per source for a full-rank covariance",
                self.dim
            )));
        }
        if self.mean_range.0 > self.mean_range.1 || self.std_range.0 > self.std_range.1 {
            return Err(Error::InvalidParameter("ranges must be ordered".into()));
        }
        if !(self.std_range.0 > 0.0) {
            return Err(Error::InvalidParameter(
                "scale range must be strictly positive".into(),
            ));
        }
        Ok(())
    }
}

/// Draws `count` source covariances, each from `draws` Gaussian samples with
/// a per-coordinate location in `mean_range` and scale in `std_range`.
fn draw_sources(
    rng: &mut ChaCha8Rng,
    count: usize,
    d: usize,
    draws: usize,
    mean_range: (f64, f64),
    std_range: (f64, f64),
) -> Result<Vec<SpdMatrix>> {
    let mut sources = Vec::with_capacity(count);
    for _ in 0..count {
        let mean: Vec<f64> = (0..d)
            .map(|_| rng.random_range(mean_range.0..=mean_range.1))
            .collect();
        let scale: Vec<f64> = (0..d)
            .map(|_| rng.random_range(std_range.0..=std_range.1))
            .collect();
        let pulls: Vec<Vec<f64>> = (0..draws)
            .map(|_| {
                (0..d)
                    .map(|i| mean[i] + scale[i] * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        sources.push(SpdMatrix::from_computed(sample_covariance(&pulls, d))?);
    }
    Ok(sources)
}

/// Generates the dictionary-recovery task: returns `(samples, sources)`,
/// both unlabeled.
pub fn gen_dictionary_task(
    config: &SynthDictionaryConfig,
) -> Result<(LabeledSpdSet, LabeledSpdSet)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.dim;
    let sources = draw_sources(
        &mut rng,
        config.sources,
        d,
        config.draws_per_source,
        config.mean_range,
        config.std_range,
    )?;
    let mut samples = Vec::with_capacity(config.samples);
    for _ in 0..config.samples {
        let picks = rand::seq::index::sample(&mut rng, config.sources, config.combination_size);
        let mut sum = DMatrix::zeros(d, d);
        for i in picks.iter() {
            let w: f64 = if config.unit_weights {
                1.0
            } else {
                rng.sample::<f64, _>(StandardNormal).abs()
            };
            sum += sources[i].matrix() * w;
        }
        samples.push(SpdMatrix::from_computed(sum)?);
    }
    Ok((
        LabeledSpdSet::unlabeled(samples)?,
        LabeledSpdSet::unlabeled(sources)?,
    ))
}

/// Labeled mixture classes: every class is a fixed subset of a shared source
/// pool, and each sample mixes its class's sources with `|N(0, 1)|` weights.
/// Classes therefore differ in *which* sources they combine rather than in
/// where a single blob sits, so representing the pool well matters more than
/// covering blob centers.
#[derive(Debug, Clone)]
pub struct SynthMixtureClassConfig {
    /// Number of classes.
    pub classes: usize,
    /// Samples per class; the first half goes to the training split.
    pub per_class: usize,
    /// Matrix dimension.
    pub dim: usize,
    /// Size of the shared source pool.
    pub pool: usize,
    /// Distinct sources combined by each class.
    pub sources_per_class: usize,
    /// Gaussian draws behind each source covariance.
    pub draws_per_source: usize,
    /// Uniform range of each source's per-coordinate location.
    pub mean_range: (f64, f64),
    /// Uniform range of each source's per-coordinate scale.
    pub std_range: (f64, f64),
    pub seed: u64,
}

impl SynthMixtureClassConfig {
    /// The reference task: 8 classes of 32 samples over a 12-source pool,
    /// three sources per class, dimension 5.
    pub fn standard(seed: u64) -> Self {
        SynthMixtureClassConfig {
            classes: 8,
            per_class: 32,
            dim: 5,
            pool: 12,
            sources_per_class: 3,
            draws_per_source: 100,
            mean_range: (-2.0, 2.0),
            std_range: (0.25, 0.5),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.per_class < 2 {
            return Err(Error::InvalidParameter(
                "need at least one class and two samples per class".into(),
            ));
        }
        if self.dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if self.sources_per_class == 0 || self.sources_per_class > self.pool {
            return Err(Error::InvalidParameter(format!(
                "cannot pick {} sources from a pool of {}",
                self.sources_per_class, self.pool
            )));
        }
        if !(self.std_range.0 > 0.0) || self.std_range.0 > self.std_range.1 {
            return Err(Error::InvalidParameter(
                "scale range must be positive and ordered".into(),
            ));
        }
        if self.mean_range.0 > self.mean_range.1 {
            return Err(Error::InvalidParameter("location range is reversed".into()));
        }
        Ok(())
    }
}

/// Generates the mixture-class task: returns `(train, test)`, both labeled,
/// with the first half of every class in the training split. Class subsets
/// are drawn without repetition, so two classes never combine the same set
/// of sources (they may still share some).
pub fn gen_mixture_classes(
    config: &SynthMixtureClassConfig,
) -> Result<(LabeledSpdSet, LabeledSpdSet)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.dim;
    let sources = draw_sources(
        &mut rng,
        config.pool,
        d,
        config.draws_per_source,
        config.mean_range,
        config.std_range,
    )?;

    let mut subsets: Vec<Vec<usize>> = Vec::with_capacity(config.classes);
    let mut attempts = 0usize;
    while subsets.len() < config.classes {
        let mut pick: Vec<usize> =
            rand::seq::index::sample(&mut rng, config.pool, config.sources_per_class).into_vec();
        pick.sort_unstable();
        if !subsets.contains(&pick) {
            subsets.push(pick);
        }
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::InvalidParameter(format!(
                "pool of {} admits fewer than {} distinct subsets of size {}",
                config.pool, config.classes, config.sources_per_class
            )));
        }
    }

    let half = config.per_class / 2;
    let mut train_points = Vec::new();
    let mut train_labels = Vec::new();
    let mut test_points = Vec::new();
    let mut test_labels = Vec::new();
    for (label, subset) in subsets.iter().enumerate() {
        for k in 0..config.per_class {
            let mut sum = DMatrix::zeros(d, d);
            for &i in subset {
                let w: f64 = rng.sample::<f64, _>(StandardNormal).abs();
                sum += sources[i].matrix() * w;
            }
            let point = SpdMatrix::from_computed(sum)?;
            if k < half {
                train_points.push(point);
                train_labels.push(label);
            } else {
                test_points.push(point);
                test_labels.push(label);
            }
        }
    }
    Ok((
        LabeledSpdSet::new(train_points, Some(train_labels))?,
        LabeledSpdSet::new(test_points, Some(test_labels))?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::stein_divergence;

    #[test]
    fn classification_shapes_and_balance() {
        let (train, test) = gen_classification(&SynthClassificationConfig::easy(7)).unwrap();
        assert_eq!(train.len(), 256);
        assert_eq!(test.len(), 256);
        assert_eq!(train.dim(), Some(3));
        for set in [&train, &test] {
            let labels = set.labels().unwrap();
            for c in 0..4 {
                assert_eq!(labels.iter().filter(|&&l| l == c).count(), 64);
            }
        }
    }

    #[test]
    fn classification_is_bit_deterministic() {
        let (a_train, a_test) = gen_classification(&SynthClassificationConfig::easy(3)).unwrap();
        let (b_train, b_test) = gen_classification(&SynthClassificationConfig::easy(3)).unwrap();
        assert_eq!(a_train.points(), b_train.points());
        assert_eq!(a_test.points(), b_test.points());
        let (c_train, _) = gen_classification(&SynthClassificationConfig::easy(4)).unwrap();
        assert_ne!(a_train.points(), c_train.points());
    }

    #[test]
    fn zero_spread_collapses_each_class() {
        let config = SynthClassificationConfig {
            spread: 0.0,
            total: 32,
            ..SynthClassificationConfig::easy(11)
        };
        let (train, test) = gen_classification(&config).unwrap();
        for c in 0..4 {
            let mut class_points = Vec::new();
            for set in [&train, &test] {
                for (p, &l) in set.points().iter().zip(set.labels().unwrap()) {
                    if l == c {
                        class_points.push(p.clone());
                    }
                }
            }
            for p in &class_points[1..] {
                assert_eq!(p, &class_points[0], "class {c} samples differ at zero spread");
            }
        }
    }

    #[test]
    fn harder_spread_means_wider_classes() {
        let easy = SynthClassificationConfig {
            total: 64,
            ..SynthClassificationConfig::easy(5)
        };
        let hard = SynthClassificationConfig {
            total: 64,
            ..SynthClassificationConfig::hard(5)
        };
        let scatter = |cfg: &SynthClassificationConfig| -> f64 {
            let (train, _) = gen_classification(cfg).unwrap();
            let labels = train.labels().unwrap().to_vec();
            let mut total = 0.0;
            let mut count = 0usize;
            for c in 0..cfg.classes {
                let members: Vec<_> = train
                    .points()
                    .iter()
                    .zip(&labels)
                    .filter(|&(_, &l)| l == c)
                    .map(|(p, _)| p)
                    .collect();
                for p in &members[1..] {
                    total += stein_divergence(p, members[0]).unwrap();
                    count += 1;
                }
            }
            total / count as f64
        };
        assert!(
            scatter(&hard) > 2.0 * scatter(&easy),
            "hard task should scatter classes much more than easy"
        );
    }

    #[test]
    fn classification_rejects_bad_configs() {
        let mut c = SynthClassificationConfig::easy(0);
        c.total = 510; // not divisible by 4
        assert!(gen_classification(&c).is_err());
        let mut c = SynthClassificationConfig::easy(0);
        c.classes = 1;
        assert!(gen_classification(&c).is_err());
        let mut c = SynthClassificationConfig::easy(0);
        c.total = 12; // 3 per class: no even split
        assert!(gen_classification(&c).is_err());
        let mut c = SynthClassificationConfig::easy(0);
        c.spread = -0.1;
        assert!(gen_classification(&c).is_err());
    }

    #[test]
    fn dictionary_task_shapes() {
        let (samples, sources) = gen_dictionary_task(&SynthDictionaryConfig::standard(2)).unwrap();
        assert_eq!(samples.len(), 512);
        assert_eq!(sources.len(), 32);
        assert_eq!(samples.dim(), Some(5));
        assert_eq!(sources.dim(), Some(5));
        assert!(samples.labels().is_none());
    }

    #[test]
    fn dictionary_task_is_bit_deterministic() {
        let (a, sa) = gen_dictionary_task(&SynthDictionaryConfig::standard(9)).unwrap();
        let (b, sb) = gen_dictionary_task(&SynthDictionaryConfig::standard(9)).unwrap();
        assert_eq!(a.points(), b.points());
        assert_eq!(sa.points(), sb.points());
        let (c, _) = gen_dictionary_task(&SynthDictionaryConfig::standard(10)).unwrap();
        assert_ne!(a.points(), c.points());
    }

    #[test]
    fn single_source_unit_weight_copies_sources() {
        let config = SynthDictionaryConfig {
            combination_size: 1,
            unit_weights: true,
            samples: 40,
            ..SynthDictionaryConfig::standard(13)
        };
        let (samples, sources) = gen_dictionary_task(&config).unwrap();
        for s in samples.points() {
            assert!(
                sources.points().iter().any(|src| src == s),
                "sample is not an exact copy of any source"
            );
        }
    }

    #[test]
    fn dictionary_task_rejects_bad_configs() {
        let mut c = SynthDictionaryConfig::standard(0);
        c.combination_size = 33;
        assert!(gen_dictionary_task(&c).is_err());
        let mut c = SynthDictionaryConfig::standard(0);
        c.std_range = (0.0, 1.0);
        assert!(gen_dictionary_task(&c).is_err());
        let mut c = SynthDictionaryConfig::standard(0);
        c.draws_per_source = 5;
        assert!(gen_dictionary_task(&c).is_err());
    }

    #[test]
    fn helpers_produce_valid_objects() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let pole = random_covariance_pole(4, &mut rng).unwrap();
        assert_eq!(pole.dim(), 4);
        let t = random_tangent(4, 0.5, &mut rng);
        assert_eq!(t.dim(), 4);
        let zero = random_tangent(4, 0.0, &mut rng);
        assert_eq!(zero.norm(), 0.0);
    }
}
