//! Experiment orchestration and report emission.
//!
//! Three named experiments: `synth-classify` (sparse-representation
//! classification on the seeded 4-class task, kernel method against the flat
//! log-domain baseline), `synth-dict` (dictionary learning against a k-means
//! dictionary on the seeded mixture task), and `texture` (the same two
//! classifiers on region-covariance descriptors extracted from a directory
//! of graymap images). Trials run in parallel with per-trial seeds
//! `seed + trial index`; report rows are ordered by trial index regardless
//! of completion order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

use stein_sparse::baseline::{classify_euclidean, EuclideanDictionary};
use stein_sparse::coding::{batch_code_lenient, classify_residual};
use stein_sparse::descriptor::{image_grid_descriptors, read_pgm};
use stein_sparse::dictionary::{
    energy, init_dictionary, learn, InitMethod, LearnOptions, StableDictionary,
};
use stein_sparse::kernel::KernelParams;
use stein_sparse::synth::{
    gen_classification, gen_dictionary_task, SynthClassificationConfig, SynthDictionaryConfig,
};
use stein_sparse::{Error, LabeledSpdSet, Result};

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

// ---------------------------------------------------------------------------
// Reports

/// Aggregated outcome of one experiment run: a comma-delimited table with
/// one row per trial, a mean and a sample-standard-deviation summary row,
/// and the effective configuration echoed in `#` comment lines so a report
/// is self-describing.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    /// `key=value` pairs echoed as leading comment lines.
    pub config_echo: Vec<(String, String)>,
    /// Metric column names (the implicit first column is the trial index).
    pub columns: Vec<String>,
    /// One row of metric values per trial, ordered by trial index.
    pub rows: Vec<Vec<f64>>,
    /// Column means over trials.
    pub mean: Vec<f64>,
    /// Column sample standard deviations (n-1 denominator; 0 for one trial).
    pub std: Vec<f64>,
}

fn column_mean_std(rows: &[Vec<f64>], col: usize) -> (f64, f64) {
    let n = rows.len();
    let mean = rows.iter().map(|r| r[col]).sum::<f64>() / n as f64;
    let std = if n > 1 {
        (rows.iter().map(|r| (r[col] - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

impl ExperimentReport {
    /// Builds a report from per-trial rows, computing the summary columns.
    pub fn new(
        config_echo: Vec<(String, String)>,
        columns: Vec<String>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(bad("report needs at least one trial row"));
        }
        if rows.iter().any(|r| r.len() != columns.len()) {
            return Err(bad("report row width does not match column count"));
        }
        let (mut mean, mut std) = (Vec::new(), Vec::new());
        for c in 0..columns.len() {
            let (m, s) = column_mean_std(&rows, c);
            mean.push(m);
            std.push(s);
        }
        Ok(ExperimentReport {
            config_echo,
            columns,
            rows,
            mean,
            std,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.config_echo {
            let _ = writeln!(out, "# {k}={v}");
        }
        out.push_str("trial");
        for c in &self.columns {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            let _ = write!(out, "{i}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        for (label, vals) in [("mean", &self.mean), ("std", &self.std)] {
            out.push_str(label);
            for v in vals {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut config_echo = Vec::new();
        let mut columns: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        let mut mean = None;
        let mut std = None;
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("# ") {
                let (k, v) = rest
                    .split_once('=')
                    .ok_or_else(|| bad(format!("malformed comment line `{line}`")))?;
                config_echo.push((k.to_string(), v.to_string()));
                continue;
            }
            let mut fields = line.split(',');
            let head = fields.next().unwrap_or_default();
            let rest: Vec<&str> = fields.collect();
            match (head, &columns) {
                ("trial", None) => {
                    columns = Some(rest.iter().map(|s| s.to_string()).collect());
                }
                (_, None) => return Err(bad("report is missing its header row")),
                (label, Some(cols)) => {
                    if rest.len() != cols.len() {
                        return Err(bad(format!("row `{label}`: wrong number of columns")));
                    }
                    let vals = rest
                        .iter()
                        .map(|f| {
                            f.parse::<f64>()
                                .map_err(|_| bad(format!("cannot parse `{f}` in row `{label}`")))
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    match label {
                        "mean" => mean = Some(vals),
                        "std" => std = Some(vals),
                        _ => {
                            let index: usize = label
                                .parse()
                                .map_err(|_| bad(format!("unexpected row label `{label}`")))?;
                            if index != rows.len() {
                                return Err(bad(format!(
                                    "trial rows out of order at index {index}"
                                )));
                            }
                            rows.push(vals);
                        }
                    }
                }
            }
        }
        let columns = columns.ok_or_else(|| bad("report is missing its header row"))?;
        Ok(ExperimentReport {
            config_echo,
            columns,
            rows,
            mean: mean.ok_or_else(|| bad("report is missing its mean row"))?,
            std: std.ok_or_else(|| bad("report is missing its std row"))?,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_csv())
            .map_err(|e| bad(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| bad(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_csv(&text)
    }
}

// ---------------------------------------------------------------------------
// Configuration

/// Which of the named experiments to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentName {
    SynthClassify,
    SynthDict,
    Texture,
}

impl ExperimentName {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "synth-classify" => Ok(ExperimentName::SynthClassify),
            "synth-dict" => Ok(ExperimentName::SynthDict),
            "texture" => Ok(ExperimentName::Texture),
            other => Err(bad(format!(
                "unknown experiment `{other}` (expected synth-classify, synth-dict, or texture)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::SynthClassify => "synth-classify",
            ExperimentName::SynthDict => "synth-dict",
            ExperimentName::Texture => "texture",
        }
    }
}

/// Experiment settings, assembled from an optional TOML file plus
/// command-line overrides; every field has a default so a bare
/// `experiment <name>` runs.
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    /// `easy` or `hard` (synth-classify only).
    pub spread: Option<String>,
    pub sigma: Option<f64>,
    pub lambda: Option<f64>,
    pub atoms: Option<usize>,
    pub iters: Option<usize>,
    /// `random` or `kmeans` (synth-dict only).
    pub init: Option<String>,
    /// Directory of `.pgm` images, one class per image (texture only).
    pub images: Option<PathBuf>,
    /// Square block side for descriptor extraction (texture only).
    pub block: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| bad(format!("{}: {e}", path.as_ref().display())))?;
        toml::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.as_ref().display())))
    }

    /// Field-wise merge preferring `self` (command-line) over `file`.
    pub fn or(self, file: ExperimentConfig) -> Self {
        ExperimentConfig {
            trials: self.trials.or(file.trials),
            seed: self.seed.or(file.seed),
            spread: self.spread.or(file.spread),
            sigma: self.sigma.or(file.sigma),
            lambda: self.lambda.or(file.lambda),
            atoms: self.atoms.or(file.atoms),
            iters: self.iters.or(file.iters),
            init: self.init.or(file.init),
            images: self.images.or(file.images),
            block: self.block.or(file.block),
        }
    }
}

fn parse_init(s: &str) -> Result<InitMethod> {
    match s {
        "random" => Ok(InitMethod::Random),
        "kmeans" => Ok(InitMethod::KMeans),
        other => Err(bad(format!(
            "unknown init `{other}` (expected random or kmeans)"
        ))),
    }
}

fn echo(pairs: &[(&str, String)]) -> Vec<(String, String)> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

fn opt_echo<T: std::fmt::Display>(v: &Option<T>) -> String {
    match v {
        Some(x) => x.to_string(),
        None => "auto".to_string(),
    }
}

// ---------------------------------------------------------------------------
// Shared classification helpers

fn rsr_accuracy(
    train: &LabeledSpdSet,
    test: &LabeledSpdSet,
    sigma: Option<f64>,
    lambda: Option<f64>,
) -> Result<f64> {
    let d = train
        .dim()
        .ok_or_else(|| bad("empty training split"))?;
    let params = match sigma {
        Some(s) => KernelParams::new(s, d)?,
        None => KernelParams::default_for_dim(d)?,
    };
    let dict = StableDictionary::new(train.clone(), params)?;
    let labels = test
        .labels()
        .ok_or_else(|| bad("test split is unlabeled"))?;
    let hits = test
        .points()
        .par_iter()
        .zip(labels.par_iter())
        .map(|(q, &l)| Ok((classify_residual(q, &dict, lambda)? == l) as usize))
        .collect::<Result<Vec<usize>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / test.len() as f64)
}

fn loge_accuracy(
    train: &LabeledSpdSet,
    test: &LabeledSpdSet,
    lambda: Option<f64>,
) -> Result<f64> {
    let dict = EuclideanDictionary::from_spd_set(train)?;
    let labels = test
        .labels()
        .ok_or_else(|| bad("test split is unlabeled"))?;
    let hits = test
        .points()
        .par_iter()
        .zip(labels.par_iter())
        .map(|(q, &l)| Ok((classify_euclidean(q, &dict, lambda)? == l) as usize))
        .collect::<Result<Vec<usize>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / test.len() as f64)
}

/// The same points rescaled to unit Frobenius norm, the convention `learn`
/// applies to every dictionary it touches.
fn unit_normalized(atoms: &LabeledSpdSet) -> Result<LabeledSpdSet> {
    let scaled = atoms
        .points()
        .iter()
        .map(|a| a.scale(1.0 / a.frobenius_norm()))
        .collect::<stein_sparse::error::Result<Vec<_>>>()?;
    Ok(LabeledSpdSet::unlabeled(scaled)?)
}

/// Kernel-space energy of a dictionary built from `atoms`, scored with
/// freshly solved codes for every sample — the honest way to compare two
/// dictionaries that were produced by different procedures.
fn fresh_energy(
    samples: &LabeledSpdSet,
    atoms: &LabeledSpdSet,
    sigma: Option<f64>,
    lambda: Option<f64>,
) -> Result<f64> {
    let d = atoms.dim().ok_or_else(|| bad("empty dictionary"))?;
    let params = match sigma {
        Some(s) => KernelParams::new(s, d)?,
        None => KernelParams::default_for_dim(d)?,
    };
    let dict = StableDictionary::new(atoms.clone(), params)?;
    let codes = batch_code_lenient(samples, &dict, lambda)?;
    energy(samples, &dict, &codes)
}

fn run_trials<F>(trials: usize, run: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(usize) -> Result<Vec<f64>> + Sync,
{
    (0..trials)
        .into_par_iter()
        .map(|t| {
            run(t).map_err(|e| Error::Sample {
                index: t,
                source: Box::new(e),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Runners

/// Seeded 4-class classification: sparse-representation accuracy of the
/// kernel method and the flat log-domain baseline, one row per trial.
pub fn run_synth_classify(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let trials = cfg.trials.unwrap_or(20);
    let seed = cfg.seed.unwrap_or(0);
    let spread = cfg.spread.as_deref().unwrap_or("easy");
    if trials == 0 {
        return Err(bad("trials must be positive"));
    }
    let template = match spread {
        "easy" => SynthClassificationConfig::easy(0),
        "hard" => SynthClassificationConfig::hard(0),
        other => return Err(bad(format!("unknown spread `{other}` (expected easy or hard)"))),
    };
    let started = Instant::now();
    let rows = run_trials(trials, |t| {
        let config = SynthClassificationConfig {
            seed: seed + t as u64,
            ..template.clone()
        };
        let (train, test) = gen_classification(&config)?;
        Ok(vec![
            rsr_accuracy(&train, &test, cfg.sigma, cfg.lambda)?,
            loge_accuracy(&train, &test, cfg.lambda)?,
        ])
    })?;
    let wall = started.elapsed().as_secs_f64();
    ExperimentReport::new(
        echo(&[
            ("experiment", "synth-classify".into()),
            ("spread", spread.into()),
            ("trials", trials.to_string()),
            ("seed", seed.to_string()),
            ("sigma", opt_echo(&cfg.sigma)),
            ("lambda", opt_echo(&cfg.lambda)),
            ("classes", template.classes.to_string()),
            ("total", template.total.to_string()),
            ("dim", template.dim.to_string()),
            ("wall_seconds", wall.to_string()),
        ]),
        vec!["rsr_accuracy".into(), "loge_accuracy".into()],
        rows,
    )
}

/// Seeded dictionary-learning comparison: kernel-space energy of the
/// learned dictionary against the k-means dictionary, both scored with
/// freshly solved codes, plus the first/last energies of the learning trace.
pub fn run_synth_dict(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let trials = cfg.trials.unwrap_or(5);
    let seed = cfg.seed.unwrap_or(0);
    let iters = cfg.iters.unwrap_or(30);
    let init = parse_init(cfg.init.as_deref().unwrap_or("kmeans"))?;
    if trials == 0 {
        return Err(bad("trials must be positive"));
    }
    let template = SynthDictionaryConfig::standard(0);
    let n_atoms = cfg.atoms.unwrap_or(template.sources);
    let started = Instant::now();
    let rows = run_trials(trials, |t| {
        let config = SynthDictionaryConfig {
            seed: seed + t as u64,
            ..template.clone()
        };
        let (samples, _) = gen_dictionary_task(&config)?;
        let trial_seed = seed + t as u64;
        let kmeans_dict = init_dictionary(&samples, n_atoms, InitMethod::KMeans, trial_seed)?;
        // Score the baseline exactly as the learner starts from it: atoms
        // under the same unit-norm convention. Anything else would compare
        // the update procedure against a differently constrained dictionary.
        let kmeans_atoms = unit_normalized(kmeans_dict.atoms())?;
        let j_kmeans = fresh_energy(&samples, &kmeans_atoms, cfg.sigma, cfg.lambda)?;
        let mut opts = LearnOptions::new(n_atoms);
        opts.lambda = cfg.lambda;
        opts.sigma = cfg.sigma;
        opts.iterations = iters;
        opts.seed = trial_seed;
        opts.init = init;
        let (dict, trace) = learn(&samples, &opts)?;
        let j_learned = fresh_energy(&samples, dict.atoms(), cfg.sigma, cfg.lambda)?;
        let first = *trace.energy.first().expect("trace is never empty");
        let last = *trace.energy.last().expect("trace is never empty");
        Ok(vec![j_kmeans, j_learned, first, last])
    })?;
    let wall = started.elapsed().as_secs_f64();
    ExperimentReport::new(
        echo(&[
            ("experiment", "synth-dict".into()),
            ("trials", trials.to_string()),
            ("seed", seed.to_string()),
            ("atoms", n_atoms.to_string()),
            ("iters", iters.to_string()),
            ("init", cfg.init.clone().unwrap_or_else(|| "kmeans".into())),
            ("sigma", opt_echo(&cfg.sigma)),
            ("lambda", opt_echo(&cfg.lambda)),
            ("samples", template.samples.to_string()),
            ("sources", template.sources.to_string()),
            ("dim", template.dim.to_string()),
            ("wall_seconds", wall.to_string()),
        ]),
        vec![
            "j_kmeans".into(),
            "j_learned".into(),
            "j_trace_first".into(),
            "j_trace_last".into(),
        ],
        rows,
    )
}

/// Loads every `.pgm` in the directory (sorted by file name; the file's
/// position is its class label) and extracts one grid of region-covariance
/// descriptors per image.
fn load_texture_classes(dir: &Path, block: usize) -> Result<Vec<Vec<stein_sparse::spd::SpdMatrix>>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| bad(format!("{}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    paths.sort();
    if paths.len() < 2 {
        return Err(bad(format!(
            "{}: need at least two .pgm images (one class per image)",
            dir.display()
        )));
    }
    paths
        .iter()
        .map(|p| {
            let image = read_pgm(p)?;
            let descriptors = image_grid_descriptors(&image, block)?;
            if descriptors.len() < 2 {
                return Err(bad(format!(
                    "{}: image yields fewer than two blocks",
                    p.display()
                )));
            }
            Ok(descriptors)
        })
        .collect()
}

/// Texture classification over region-covariance descriptors: per trial, a
/// seeded half/half split of every class's blocks, then the same two
/// classifiers as `synth-classify`.
pub fn run_texture(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let trials = cfg.trials.unwrap_or(5);
    let seed = cfg.seed.unwrap_or(0);
    let block = cfg.block.unwrap_or(32);
    if trials == 0 {
        return Err(bad("trials must be positive"));
    }
    let dir = cfg
        .images
        .as_ref()
        .ok_or_else(|| bad("texture experiment needs --images <dir>"))?;
    let classes = load_texture_classes(dir, block)?;
    let started = Instant::now();
    let rows = run_trials(trials, |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + t as u64);
        let mut train_points = Vec::new();
        let mut train_labels = Vec::new();
        let mut test_points = Vec::new();
        let mut test_labels = Vec::new();
        for (label, descriptors) in classes.iter().enumerate() {
            let mut order: Vec<usize> = (0..descriptors.len()).collect();
            order.shuffle(&mut rng);
            let half = descriptors.len() / 2;
            for (pos, &i) in order.iter().enumerate() {
                if pos < half {
                    train_points.push(descriptors[i].clone());
                    train_labels.push(label);
                } else {
                    test_points.push(descriptors[i].clone());
                    test_labels.push(label);
                }
            }
        }
        let train = LabeledSpdSet::new(train_points, Some(train_labels))?;
        let test = LabeledSpdSet::new(test_points, Some(test_labels))?;
        Ok(vec![
            rsr_accuracy(&train, &test, cfg.sigma, cfg.lambda)?,
            loge_accuracy(&train, &test, cfg.lambda)?,
        ])
    })?;
    let wall = started.elapsed().as_secs_f64();
    ExperimentReport::new(
        echo(&[
            ("experiment", "texture".into()),
            ("images", dir.display().to_string()),
            ("classes", classes.len().to_string()),
            ("block", block.to_string()),
            ("trials", trials.to_string()),
            ("seed", seed.to_string()),
            ("sigma", opt_echo(&cfg.sigma)),
            ("lambda", opt_echo(&cfg.lambda)),
            ("wall_seconds", wall.to_string()),
        ]),
        vec!["rsr_accuracy".into(), "loge_accuracy".into()],
        rows,
    )
}

/// Dispatches to the named experiment and writes its report.
pub fn run(
    name: ExperimentName,
    cfg: &ExperimentConfig,
    output: &Path,
) -> Result<ExperimentReport> {
    let report = match name {
        ExperimentName::SynthClassify => run_synth_classify(cfg),
        ExperimentName::SynthDict => run_synth_dict(cfg),
        ExperimentName::Texture => run_texture(cfg),
    }?;
    report.write(output)?;
    Ok(report)
}
