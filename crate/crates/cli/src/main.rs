//! `stein-sparse` — sparse coding and dictionary learning for symmetric
//! positive definite matrices, from the command line.
//!
//! Exit codes are a stable contract: 0 on success, 2 on input or validation
//! failure, 3 when an iterative solver fails to converge. The environment
//! variable `STEIN_SPARSE_THREADS` caps the worker-thread count.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stein_sparse::coding::batch_code;
use stein_sparse::dictionary::{learn, InitMethod, LearnOptions, NormKind, StableDictionary};
use stein_sparse::kernel::{gram, KernelParams};
use stein_sparse::{Error, Result};

use stein_sparse_cli::experiment::{self, ExperimentConfig, ExperimentName};
use stein_sparse_cli::fileio;

#[derive(Parser)]
#[command(
    name = "stein-sparse",
    version,
    about = "Sparse coding and dictionary learning on the SPD matrix cone"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the kernel Gram matrix of a matrix set.
    Gram {
        /// Input set file.
        input: PathBuf,
        /// Kernel width; defaults to d/2 for d-dimensional input.
        #[arg(long)]
        sigma: Option<f64>,
        /// Output Gram file (includes a min-eigenvalue diagnostic).
        #[arg(long, short)]
        output: PathBuf,
        /// Accept kernel widths outside the positive-definite range.
        #[arg(long)]
        allow_indefinite: bool,
    },
    /// Sparse-code a set of queries against a dictionary.
    Code {
        /// Query set file.
        queries: PathBuf,
        /// Dictionary set file (its `sigma` header is used unless --sigma).
        #[arg(long)]
        dict: PathBuf,
        /// Sparsity penalty; per-query automatic when omitted.
        #[arg(long)]
        lambda: Option<f64>,
        /// Kernel width override.
        #[arg(long)]
        sigma: Option<f64>,
        /// Output codes file (one row per query, optimality residual included).
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Learn a dictionary from a sample set.
    Learn {
        /// Sample set file.
        samples: PathBuf,
        /// Number of atoms.
        #[arg(long)]
        atoms: usize,
        /// Sparsity penalty; per-sample automatic when omitted.
        #[arg(long)]
        lambda: Option<f64>,
        /// Kernel width; defaults to d/2.
        #[arg(long)]
        sigma: Option<f64>,
        /// Outer iterations.
        #[arg(long, default_value_t = 30)]
        iters: usize,
        /// Initialization: random or kmeans.
        #[arg(long, default_value = "random")]
        init: String,
        /// Atom normalization: frobenius or spectral.
        #[arg(long, default_value = "frobenius")]
        norm: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output dictionary file (records the kernel width).
        #[arg(long, short)]
        output: PathBuf,
        /// Output energy-trace file.
        #[arg(long)]
        trace: PathBuf,
    },
    /// Run a named experiment and write its report.
    Experiment {
        /// One of: synth-classify, synth-dict, texture.
        name: String,
        /// Optional TOML settings file; command-line flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// easy or hard (synth-classify).
        #[arg(long)]
        spread: Option<String>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        atoms: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        /// random or kmeans (synth-dict).
        #[arg(long)]
        init: Option<String>,
        /// Directory of .pgm images, one class per image (texture).
        #[arg(long)]
        images: Option<PathBuf>,
        /// Descriptor block side (texture).
        #[arg(long)]
        block: Option<usize>,
        /// Output report (comma-delimited).
        #[arg(long, short)]
        output: PathBuf,
    },
}

fn configure_threads() -> Result<()> {
    if let Ok(raw) = std::env::var("STEIN_SPARSE_THREADS") {
        let n: usize = raw.parse().map_err(|_| {
            Error::InvalidParameter(format!(
                "STEIN_SPARSE_THREADS must be a thread count, got `{raw}`"
            ))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn kernel_params(sigma: Option<f64>, dim: usize, allow_indefinite: bool) -> Result<KernelParams> {
    match (sigma, allow_indefinite) {
        (Some(s), false) => KernelParams::new(s, dim),
        (Some(s), true) => KernelParams::new_allow_indefinite(s, dim),
        (None, _) => KernelParams::default_for_dim(dim),
    }
}

fn cmd_gram(
    input: PathBuf,
    sigma: Option<f64>,
    output: PathBuf,
    allow_indefinite: bool,
) -> Result<()> {
    let set = fileio::read_spd_set(&input)?;
    let dim = set
        .dim()
        .ok_or_else(|| Error::InvalidParameter("input set is empty".into()))?;
    let params = kernel_params(sigma, dim, allow_indefinite)?;
    let g = gram(&set, &set, &params)?;
    fileio::write_gram(&output, &g)?;
    match g.min_eigenvalue() {
        Some(m) => println!(
            "{}: {} x {} Gram, min eigenvalue {m:e}",
            output.display(),
            g.nrows(),
            g.ncols()
        ),
        None => println!("{}: {} x {} Gram", output.display(), g.nrows(), g.ncols()),
    }
    Ok(())
}

fn cmd_code(
    queries: PathBuf,
    dict: PathBuf,
    lambda: Option<f64>,
    sigma: Option<f64>,
    output: PathBuf,
) -> Result<()> {
    let dict_file = fileio::MatrixSetFile::read(&dict)?;
    let sigma = sigma.or(dict_file.sigma);
    let atoms = dict_file.into_spd_set()?;
    let dim = atoms
        .dim()
        .ok_or_else(|| Error::InvalidParameter("dictionary is empty".into()))?;
    let params = kernel_params(sigma, dim, false)?;
    let dictionary = StableDictionary::new(atoms, params)?;
    let query_set = fileio::read_spd_set(&queries)?;
    let codes = batch_code(&query_set, &dictionary, lambda)?;
    fileio::write_codes(&output, &codes, dictionary.len())?;
    println!(
        "{}: {} codes against {} atoms",
        output.display(),
        codes.len(),
        dictionary.len()
    );
    Ok(())
}

fn parse_norm(s: &str) -> Result<NormKind> {
    match s {
        "frobenius" => Ok(NormKind::Frobenius),
        "spectral" => Ok(NormKind::Spectral),
        other => Err(Error::InvalidParameter(format!(
            "unknown norm `{other}` (expected frobenius or spectral)"
        ))),
    }
}

fn parse_init(s: &str) -> Result<InitMethod> {
    match s {
        "random" => Ok(InitMethod::Random),
        "kmeans" => Ok(InitMethod::KMeans),
        other => Err(Error::InvalidParameter(format!(
            "unknown init `{other}` (expected random or kmeans)"
        ))),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_learn(
    samples: PathBuf,
    atoms: usize,
    lambda: Option<f64>,
    sigma: Option<f64>,
    iters: usize,
    init: String,
    norm: String,
    seed: u64,
    output: PathBuf,
    trace_path: PathBuf,
) -> Result<()> {
    let set = fileio::read_spd_set(&samples)?;
    let mut opts = LearnOptions::new(atoms);
    opts.lambda = lambda;
    opts.sigma = sigma;
    opts.iterations = iters;
    opts.init = parse_init(&init)?;
    opts.norm = parse_norm(&norm)?;
    opts.seed = seed;
    let (dict, trace) = learn(&set, &opts)?;
    fileio::write_spd_set(&output, dict.atoms(), Some(dict.params().sigma()))?;
    let reason = if trace.energy.len() < iters {
        "stalled"
    } else {
        "completed"
    };
    fileio::write_trace(&trace_path, &trace.energy, reason)?;
    println!(
        "{}: {} atoms after {} iterations ({reason}), energy {} -> {}",
        output.display(),
        dict.len(),
        trace.energy.len(),
        trace.energy.first().copied().unwrap_or(f64::NAN),
        trace.energy.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_experiment(
    name: String,
    config: Option<PathBuf>,
    flags: ExperimentConfig,
    output: PathBuf,
) -> Result<()> {
    let name = ExperimentName::parse(&name)?;
    let file_cfg = match config {
        Some(path) => ExperimentConfig::from_toml_file(path)?,
        None => ExperimentConfig::default(),
    };
    let cfg = flags.or(file_cfg);
    let report = experiment::run(name, &cfg, &output)?;
    let wall = report
        .config_echo
        .iter()
        .find(|(k, _)| k == "wall_seconds")
        .map(|(_, v)| v.as_str())
        .unwrap_or("?");
    println!(
        "{}: {} over {} trials in {wall} s",
        output.display(),
        name.as_str(),
        report.rows.len()
    );
    for (c, (m, s)) in report
        .columns
        .iter()
        .zip(report.mean.iter().zip(report.std.iter()))
    {
        println!("  {c}: {m:.4} +/- {s:.4}");
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gram {
            input,
            sigma,
            output,
            allow_indefinite,
        } => cmd_gram(input, sigma, output, allow_indefinite),
        Command::Code {
            queries,
            dict,
            lambda,
            sigma,
            output,
        } => cmd_code(queries, dict, lambda, sigma, output),
        Command::Learn {
            samples,
            atoms,
            lambda,
            sigma,
            iters,
            init,
            norm,
            seed,
            output,
            trace,
        } => cmd_learn(
            samples, atoms, lambda, sigma, iters, init, norm, seed, output, trace,
        ),
        Command::Experiment {
            name,
            config,
            trials,
            seed,
            spread,
            sigma,
            lambda,
            atoms,
            iters,
            init,
            images,
            block,
            output,
        } => cmd_experiment(
            name,
            config,
            ExperimentConfig {
                trials,
                seed,
                spread,
                sigma,
                lambda,
                atoms,
                iters,
                init,
                images,
                block,
            },
            output,
        ),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let run = configure_threads().and_then(|()| dispatch(cli));
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
