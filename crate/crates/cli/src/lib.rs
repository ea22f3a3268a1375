//! `evquant` command-line front end.

use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use evquant::baselines::{BaselineModel, EnsembleModel};
use evquant::data::{
    generate_synthetic, load_csv, split, standardize, write_csv, DatasetManifest, MeanFn, SyntheticSpec,
};
use evquant::dist::NoiseSpec;
use evquant::evidential::{oracle_sweep, EvidentialModel, QuadratureConfig};
use evquant::harness::{
    compute_metrics, fit_method, run_experiment_with, AblationSettings, ExperimentConfig, ExperimentKind, FittedModel,
    GridSpec, Method, TrainRecipe,
};
use evquant::neural::{Checkpoint, HeadKind, Samples};
use evquant::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;
pub const EXIT_ORACLE: i32 = 4;

/// Relative error bound of the `oracle` sweep.
pub const ORACLE_TOLERANCE: f64 = 1e-3;

pub const ABLATION_LAMBDAS: [f64; 6] = [0.0, 0.05, 0.1, 0.3, 0.5, 1.0];

#[derive(Debug, Parser)]
#[command(name = "evquant", version, about = "Evidential quantile regression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic y = x³ + noise dataset as CSV.
    Synth(SynthArgs),
    /// Train one method on a CSV dataset and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a CSV dataset.
    Eval(EvalArgs),
    /// Run an experiment described by a config file.
    Experiment(ExperimentArgs),
    /// Check the closed-form marginal against numerical integration.
    Oracle(OracleArgs),
    /// Sweep the regularization strength of the evidential model.
    Ablation(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NoisePreset {
    Gaussian,
    Exponential,
    Gamma,
    Laplace,
    ExponentialCentered,
}

impl NoisePreset {
    fn spec(self) -> NoiseSpec {
        match self {
            NoisePreset::Gaussian => NoiseSpec::gaussian_growing(),
            NoisePreset::Exponential => NoiseSpec::exponential_growing(),
            NoisePreset::Gamma => NoiseSpec::gamma_growing(),
            NoisePreset::Laplace => NoiseSpec::laplace_growing(),
            NoisePreset::ExponentialCentered => NoiseSpec::exponential_centered(),
        }
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "exponential", conflicts_with = "config")]
    noise: NoisePreset,
    /// TOML file holding a noise specification.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = -4.0, allow_hyphen_values = true)]
    lo: f64,
    #[arg(long, default_value_t = 4.0, allow_hyphen_values = true)]
    hi: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV; a `.manifest.json` is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    EvidentialQuantile,
    Dropout,
    Ensemble,
}

impl MethodArg {
    fn method(self) -> Method {
        match self {
            MethodArg::EvidentialQuantile => Method::EvidentialQuantile,
            MethodArg::Dropout => Method::Dropout,
            MethodArg::Ensemble => Method::Ensemble,
        }
    }
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Headed numeric CSV.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "y")]
    target: String,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "evidential-quantile")]
    method: MethodArg,
    #[command(flatten)]
    data: DataArgs,
    /// TOML training recipe; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint file, or a directory for ensembles.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Checkpoint file, or an ensemble directory.
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 5)]
    mc_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the metrics JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

/// Exit status for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::TrainingAborted { .. } | Error::NonFinite { .. } => EXIT_TRAINING,
        Error::NonConvergence { .. } => EXIT_ORACLE,
        Error::TapeConsumed | Error::TapeStale { .. } => EXIT_TRAINING,
        _ => EXIT_DATA,
    }
}

fn fail(e: impl Display, code: i32) -> i32 {
    eprintln!("error: {e}");
    code
}

/// Runs the CLI on `argv` (program name first) and returns the exit status.
pub fn cli_main<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Experiment(a) => experiment(a, false),
        Command::Ablation(a) => experiment(a, true),
        Command::Oracle(a) => return oracle(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => fail(&e, exit_code(&e)),
    }
}

fn synth(a: SynthArgs) -> evquant::Result<()> {
    let noise = match &a.config {
        Some(path) => {
            if !path.exists() {
                return Err(Error::MissingFile(path.clone()));
            }
            let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.clone(), source })?;
            NoiseSpec::from_toml(&text)?
        }
        None => a.noise.spec(),
    };
    let spec = SyntheticSpec { mean_fn: MeanFn::Cubic, x_range: [a.lo, a.hi], n: a.n, noise, seed: a.seed };
    let data = generate_synthetic(&spec)?;
    write_csv(&data, &a.out, b',')?;
    let manifest = DatasetManifest::describe(&data, a.out.display().to_string());
    manifest.save(&manifest_path(&a.out))?;
    println!("wrote {} rows to {}", data.len(), a.out.display());
    Ok(())
}

fn manifest_path(csv: &Path) -> PathBuf {
    let mut name = csv.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    csv.with_file_name(name)
}

fn delimiter(c: char) -> evquant::Result<u8> {
    u8::try_from(c).ok().filter(u8::is_ascii).ok_or_else(|| Error::Config(format!("delimiter {c:?} is not ASCII")))
}

fn train_cmd(a: TrainArgs) -> evquant::Result<()> {
    let recipe = match &a.config {
        Some(p) => TrainRecipe::load(p)?,
        None => TrainRecipe::default(),
    };
    let data = load_csv(&a.data.data, &a.data.target, delimiter(a.data.delimiter)?)?;
    let data = split(&data, recipe.fractions, a.seed)?;
    let (scaled, stats) = standardize(&data)?;
    for w in &stats.warnings {
        eprintln!("warning: {w}");
    }
    let parts = scaled.split().expect("split assigned").clone();
    let (tx, ty) = scaled.subset(&parts.train);
    let (vx, vy) = scaled.subset(&parts.validation);
    let cfg = recipe.train_config(a.seed)?;
    let method = a.method.method();
    let (model, histories) = fit_method(
        method,
        recipe.architecture,
        Samples::new(&tx, &ty)?,
        Samples::new(&vx, &vy)?,
        &cfg,
        &recipe.sampling,
    )?;
    match &model {
        FittedModel::Evidential(m) => save_single(HeadKind::Evidential, m.quantiles(), m.net(), &stats, &cfg, &a.out)?,
        FittedModel::Dropout { model: m, .. } => {
            save_single(HeadKind::MeanScale, m.quantiles(), m.net(), &stats, &cfg, &a.out)?
        }
        FittedModel::Ensemble(e) => {
            let seeds: Vec<u64> = (0..e.size()).map(|i| a.seed.wrapping_add(i as u64)).collect();
            e.save_dir(&a.out, &seeds, Some(&stats))?;
        }
    }
    for (i, h) in histories.iter().enumerate() {
        let best = h.best_validation();
        println!(
            "{} member {i}: {} epochs, best epoch {}, validation loss {best}",
            method.name(),
            h.epochs.len(),
            h.best_epoch
        );
    }
    println!("saved {}", a.out.display());
    Ok(())
}

fn save_single(
    head: HeadKind,
    quantiles: &[evquant::dist::QuantileLevel],
    net: &evquant::neural::Mlp,
    stats: &evquant::data::Standardization,
    cfg: &evquant::neural::TrainConfig,
    out: &Path,
) -> evquant::Result<()> {
    let mut ckpt = Checkpoint::new(head, quantiles.to_vec(), net)?;
    ckpt.standardization = Some(stats.clone());
    ckpt.train = Some(cfg.clone());
    ckpt.save(out)
}

fn load_fitted(path: &Path, mc_samples: usize) -> evquant::Result<(FittedModel, evquant::data::Standardization)> {
    let missing = || Error::Checkpoint(format!("{} has no standardization statistics", path.display()));
    if path.is_dir() {
        let (ensemble, _, stats) = EnsembleModel::load_dir(path)?;
        return Ok((FittedModel::Ensemble(ensemble), stats.ok_or_else(missing)?));
    }
    let ckpt = Checkpoint::load(path)?;
    let stats = ckpt.standardization.clone().ok_or_else(missing)?;
    let net = ckpt.to_mlp()?;
    let model = match ckpt.head {
        HeadKind::Evidential => FittedModel::Evidential(EvidentialModel::from_mlp(net, ckpt.quantiles)?),
        HeadKind::MeanScale => {
            FittedModel::Dropout { model: BaselineModel::from_mlp(net, ckpt.quantiles)?, mc_samples }
        }
    };
    Ok((model, stats))
}

fn eval_cmd(a: EvalArgs) -> evquant::Result<()> {
    let (model, stats) = load_fitted(&a.checkpoint, a.mc_samples)?;
    let data = load_csv(&a.data.data, &a.data.target, delimiter(a.data.delimiter)?)?;
    let preds = model.predict(data.features(), &stats, a.seed)?;
    let metrics = compute_metrics(&preds, data.targets(), None)?;
    let json = serde_json::to_string_pretty(&serde_json::json!({
        "method": model.method(),
        "rows": data.len(),
        "metrics": metrics,
    }))?;
    match &a.out {
        Some(p) => std::fs::write(p, json).map_err(|source| Error::Io { path: p.clone(), source })?,
        None => println!("{json}"),
    }
    Ok(())
}

fn experiment(a: ExperimentArgs, ablation: bool) -> evquant::Result<()> {
    let mut config = ExperimentConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if ablation {
        config.kind = ExperimentKind::Ablation;
        config.methods = vec![Method::EvidentialQuantile];
        config.ablation.get_or_insert_with(|| AblationSettings { lambdas: ABLATION_LAMBDAS.to_vec() });
        config.grid.get_or_insert(GridSpec {
            lo: -7.0,
            hi: 7.0,
            points: 141,
            in_distribution: 3.0,
            out_of_distribution: [5.0, 7.0],
        });
    }
    let out = a.out.or_else(|| config.output_dir.clone()).unwrap_or_else(|| PathBuf::from("results"));
    let outcome = run_experiment_with(&config, &out, &mut |line| eprintln!("{line}"))?;
    for r in &outcome.report.rows {
        let lambda = r.lambda.map(|l| format!(" λ={l}")).unwrap_or_default();
        let mae = r.mae_to_truth.map(|s| format!(" mae={:.3}±{:.3}", s.mean, s.two_sd)).unwrap_or_default();
        println!(
            "{} {}{lambda} q={}:{mae} tl={:.4}±{:.4} nll={:.4}±{:.4}",
            r.dataset,
            r.method.name(),
            r.quantile,
            r.tilted_loss.mean,
            r.tilted_loss.two_sd,
            r.nll.mean,
            r.nll.two_sd
        );
    }
    if let Some(t) = &outcome.timing {
        for e in &t.entries {
            println!("latency {}: median {:.6}s ratio {:.2}", e.method, e.latency.median, e.ratio);
        }
    }
    println!("report written to {}", outcome.output_dir.join(evquant::harness::REPORT_FILE).display());
    Ok(())
}

fn oracle(a: OracleArgs) -> i32 {
    match oracle_sweep(a.n, a.seed, &QuadratureConfig::default()) {
        Ok(r) => {
            let pass = r.max_rel_error < ORACLE_TOLERANCE;
            println!("parameter sets: {}, evaluations: {}", r.parameter_sets, r.evaluations);
            println!("max relative error: {:e}", r.max_rel_error);
            println!("{} (tolerance {ORACLE_TOLERANCE:e})", if pass { "PASS" } else { "FAIL" });
            if pass {
                EXIT_OK
            } else {
                EXIT_ORACLE
            }
        }
        Err(e) => {
            println!("FAIL");
            fail(&e, EXIT_ORACLE)
        }
    }
}
