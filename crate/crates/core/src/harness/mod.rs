//! Experiment drivers: train each method, score it, and write the report
//! and band files.

mod config;
mod metrics;
mod timing;

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    ensemble_mean, ensemble_predict, mc_dropout_predict, train_baseline, BaselineKind, BaselineModel, EnsembleModel,
    TrainedBaseline,
};
use crate::data::{
    evaluation_grid, generate_synthetic, load_csv, run_seed, split, standardize, Dataset, Standardization,
    SyntheticSpec,
};
use crate::dist::{al_entropy, QuantileLevel};
use crate::error::{Error, Result};
use crate::evidential::{predictive_entropy, EvidentialModel};
use crate::neural::{train, Architecture, History, Samples, Tensor2, TrainConfig};

pub use config::{
    AblationSettings, DataSource, ExperimentConfig, ExperimentKind, GridSpec, Method, NamedNoise, SamplingSettings,
    TimingSettings, TrainRecipe, TrainSettings,
};
pub use metrics::{compute_metrics, BandStats, QuantileMetrics, QuantilePrediction, Summary};
pub use timing::{time_inference, LatencyStats, TimingEntry, TimingReport, MIN_REPETITIONS};

pub const REPORT_VERSION: u32 = 1;
pub const BAND_VERSION: u32 = 1;
pub const REPORT_FILE: &str = "report.json";
pub const TIMING_FILE: &str = "timing.json";

/// Identifies the code that produced a report. Set `EVQUANT_BUILD_ID` at
/// compile time (e.g. to `git describe` output) to override.
pub fn build_id() -> String {
    match option_env!("EVQUANT_BUILD_ID") {
        Some(id) => id.to_string(),
        None => format!("evquant-{}", env!("CARGO_PKG_VERSION")),
    }
}

/// A trained model of any supported method.
#[derive(Debug, Clone)]
pub enum FittedModel {
    Evidential(EvidentialModel),
    Dropout { model: BaselineModel, mc_samples: usize },
    Ensemble(EnsembleModel),
}

impl FittedModel {
    pub fn method(&self) -> Method {
        match self {
            FittedModel::Evidential(_) => Method::EvidentialQuantile,
            FittedModel::Dropout { .. } => Method::Dropout,
            FittedModel::Ensemble(_) => Method::Ensemble,
        }
    }

    pub fn quantiles(&self) -> &[QuantileLevel] {
        match self {
            FittedModel::Evidential(m) => m.quantiles(),
            FittedModel::Dropout { model, .. } => model.quantiles(),
            FittedModel::Ensemble(e) => e.quantiles(),
        }
    }

    /// Predictions in original target units for features in original units.
    /// `seed` drives the dropout passes.
    pub fn predict(&self, x: &Tensor2, stats: &Standardization, seed: u64) -> Result<Vec<QuantilePrediction>> {
        let xs = stats.transform_features(x)?;
        let (mean, sd) = (stats.target.mean, stats.target.sd);
        let ln_sd = sd.ln();
        match self {
            FittedModel::Evidential(model) => {
                let params = model.predict_params(&xs)?;
                model
                    .quantiles()
                    .iter()
                    .enumerate()
                    .map(|(j, &q)| {
                        let mut p = QuantilePrediction {
                            quantile: q,
                            prediction: Vec::with_capacity(params.len()),
                            aleatoric: Vec::with_capacity(params.len()),
                            epistemic: Vec::with_capacity(params.len()),
                            entropy: Vec::with_capacity(params.len()),
                        };
                        for row in &params {
                            let e = &row[j];
                            let aleatoric = e.beta() / (e.alpha() - 1.0);
                            p.prediction.push(mean + sd * e.gamma());
                            p.aleatoric.push(sd * aleatoric);
                            p.epistemic.push(sd * aleatoric / e.nu());
                            p.entropy.push(predictive_entropy(e, q)? + ln_sd);
                        }
                        Ok(p)
                    })
                    .collect()
            }
            FittedModel::Dropout { model, mc_samples } => {
                let s = mc_dropout_predict(model, &xs, *mc_samples, &mut ChaCha8Rng::seed_from_u64(seed))?;
                s.per_quantile
                    .into_iter()
                    .map(|h| {
                        baseline_prediction(h.quantile, &h.mean_mu, &h.mean_sigma, Some(&h.epistemic_var), mean, sd)
                    })
                    .collect()
            }
            FittedModel::Ensemble(e) if e.size() >= 2 => ensemble_predict(e, &xs)?
                .per_quantile
                .into_iter()
                .map(|h| baseline_prediction(h.quantile, &h.mean_mu, &h.mean_sigma, Some(&h.epistemic_var), mean, sd))
                .collect(),
            FittedModel::Ensemble(e) => ensemble_mean(e, &xs)?
                .into_iter()
                .zip(e.quantiles())
                .map(|(h, &q)| baseline_prediction(q, &h.mu, &h.sigma, None, mean, sd))
                .collect(),
        }
    }

    /// One inference pass on standardized features, for timing.
    pub fn infer(&self, xs: &Tensor2, rng: &mut ChaCha8Rng) -> Result<()> {
        match self {
            FittedModel::Evidential(m) => m.predict_params(xs).map(drop),
            FittedModel::Dropout { model, mc_samples } => mc_dropout_predict(model, xs, *mc_samples, rng).map(drop),
            FittedModel::Ensemble(e) if e.size() >= 2 => ensemble_predict(e, xs).map(drop),
            FittedModel::Ensemble(e) => ensemble_mean(e, xs).map(drop),
        }
    }
}

/// μ and σ back in original units; the variance of μ scales with sd².
/// A single-member ensemble has no spread, so its epistemic value is zero.
fn baseline_prediction(
    quantile: QuantileLevel,
    mu: &[f64],
    sigma: &[f64],
    var: Option<&[f64]>,
    mean: f64,
    sd: f64,
) -> Result<QuantilePrediction> {
    let aleatoric: Vec<f64> = sigma.iter().map(|s| sd * s).collect();
    Ok(QuantilePrediction {
        quantile,
        prediction: mu.iter().map(|m| mean + sd * m).collect(),
        epistemic: match var {
            Some(v) => v.iter().map(|v| sd * sd * v).collect(),
            None => vec![0.0; mu.len()],
        },
        entropy: aleatoric.iter().map(|&s| al_entropy(s, quantile)).collect::<Result<_>>()?,
        aleatoric,
    })
}

/// Trains one method. Every method uses the same architecture, including
/// its dropout rate; only the dropout baseline samples at inference.
pub fn fit_method(
    method: Method,
    arch: Architecture,
    train_set: Samples<'_>,
    validation: Samples<'_>,
    config: &TrainConfig,
    sampling: &SamplingSettings,
) -> Result<(FittedModel, Vec<History>)> {
    match method {
        Method::EvidentialQuantile => {
            let mut model = EvidentialModel::new(train_set.x.cols(), arch, config.quantiles.clone(), config.seed)?;
            let objective = model.objective(config.lambda)?;
            let history = train(model.net_mut(), train_set, validation, config, &objective)?;
            Ok((FittedModel::Evidential(model), vec![history]))
        }
        Method::Dropout => match train_baseline(BaselineKind::Dropout, arch, 1, train_set, validation, config)? {
            TrainedBaseline::Dropout { model, history } => {
                Ok((FittedModel::Dropout { model, mc_samples: sampling.mc_samples }, vec![history]))
            }
            TrainedBaseline::Ensemble { .. } => unreachable!("dropout kind returns a single model"),
        },
        Method::Ensemble => {
            match train_baseline(BaselineKind::Ensemble, arch, sampling.ensemble_size, train_set, validation, config)? {
                TrainedBaseline::Ensemble { model, histories } => Ok((FittedModel::Ensemble(model), histories)),
                TrainedBaseline::Dropout { .. } => unreachable!("ensemble kind returns an ensemble"),
            }
        }
        Method::EvidentialGaussian => {
            Err(Error::Config("method `evidential_gaussian` is a documented stub and cannot be run".into()))
        }
    }
}

/// Metrics of one method on one run, for one quantile head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub dataset: String,
    pub method: Method,
    /// Regularization strength, for the evidential model.
    pub lambda: Option<f64>,
    pub run: usize,
    pub seed: u64,
    /// Training epochs, summed over ensemble members.
    pub epochs: usize,
    #[serde(flatten)]
    pub metrics: QuantileMetrics,
    pub band: Option<BandStats>,
}

/// Aggregate over runs for one (dataset, method, λ, quantile).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub method: Method,
    pub lambda: Option<f64>,
    pub quantile: f64,
    pub seed: u64,
    pub build_id: String,
    pub config_hash: String,
    pub tilted_loss: Summary,
    pub nll: Summary,
    pub mae_to_truth: Option<Summary>,
    pub coverage: Summary,
    pub epistemic: Summary,
    pub aleatoric: Summary,
    pub entropy: Summary,
    pub epistemic_in: Option<Summary>,
    pub epistemic_out: Option<Summary>,
    pub aleatoric_in: Option<Summary>,
    pub aleatoric_out: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub band_schema_version: u32,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub build_id: String,
    pub config_hash: String,
    pub runs: usize,
    pub rows: Vec<ReportRow>,
    pub run_rows: Vec<RunRow>,
    /// Band and data files, relative to the output directory.
    pub files: Vec<String>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn row(&self, dataset: &str, method: Method, lambda: Option<f64>, quantile: f64) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.dataset == dataset && r.method == method && r.lambda == lambda && r.quantile == quantile)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: MetricsReport,
    pub timing: Option<TimingReport>,
    pub output_dir: PathBuf,
}

enum Source {
    Synthetic(SyntheticSpec),
    Table(Dataset),
}

struct NamedSource {
    name: String,
    source: Source,
}

impl NamedSource {
    fn dataset(&self, seed: u64) -> Result<Dataset> {
        match &self.source {
            Source::Synthetic(spec) => generate_synthetic(&SyntheticSpec { seed, ..spec.clone() }),
            Source::Table(d) => Ok(d.clone()),
        }
    }

    fn truth(&self, x: &Tensor2, quantiles: &[QuantileLevel]) -> Result<Option<Vec<Vec<f64>>>> {
        match &self.source {
            Source::Synthetic(spec) => quantiles
                .iter()
                .map(|&q| (0..x.rows()).map(|i| spec.conditional_quantile(x.get(i, 0), q)).collect())
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Source::Table(_) => Ok(None),
        }
    }
}

fn sources(config: &ExperimentConfig) -> Result<Vec<NamedSource>> {
    match &config.data {
        DataSource::Synthetic { n, x_range, datasets, .. } => Ok(datasets
            .iter()
            .map(|d| NamedSource {
                name: d.name.clone(),
                source: Source::Synthetic(SyntheticSpec {
                    mean_fn: Default::default(),
                    x_range: *x_range,
                    n: *n,
                    noise: d.noise.clone(),
                    seed: 0,
                }),
            })
            .collect()),
        DataSource::Csv { files, target, delimiter, .. } => files
            .iter()
            .map(|f| {
                let name = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "data".into());
                Ok(NamedSource { name, source: Source::Table(load_csv(f, target, *delimiter as u8)?) })
            })
            .collect(),
    }
}

/// File-name-safe form of a label.
fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

fn write_band(path: &Path, x: &[f64], preds: &[QuantilePrediction], truth: Option<&[Vec<f64>]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["x".to_string()];
    for p in preds {
        let q = p.quantile.q();
        header.extend([format!("q{q}_prediction"), format!("q{q}_aleatoric"), format!("q{q}_epistemic")]);
        if truth.is_some() {
            header.push(format!("q{q}_truth"));
        }
    }
    w.write_record(&header)?;
    for (i, xi) in x.iter().enumerate() {
        let mut rec = vec![xi.to_string()];
        for (j, p) in preds.iter().enumerate() {
            rec.extend([p.prediction[i].to_string(), p.aleatoric[i].to_string(), p.epistemic[i].to_string()]);
            if let Some(t) = truth {
                rec.push(t[j][i].to_string());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_points(path: &Path, x: &Tensor2, y: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y"])?;
    for (i, yi) in y.iter().enumerate() {
        w.write_record([x.get(i, 0).to_string(), yi.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

struct RunContext<'a> {
    config: &'a ExperimentConfig,
    out_dir: &'a Path,
    lambdas: Vec<f64>,
}

struct RunResult {
    rows: Vec<RunRow>,
    files: Vec<String>,
    /// Models and standardized test features kept for timing.
    timed: Vec<(FittedModel, Tensor2)>,
}

fn run_once(ctx: &RunContext<'_>, src: &NamedSource, run: usize, seed: u64, keep_models: bool) -> Result<RunResult> {
    let config = ctx.config;
    let data = split(&src.dataset(seed)?, config.data.fractions(), seed)?;
    let (scaled, stats) = standardize(&data)?;
    let parts = scaled.split().expect("split was just assigned").clone();
    if parts.validation.is_empty() || parts.test.is_empty() {
        return Err(Error::Config(format!(
            "dataset `{}` has {} rows, too few for non-empty validation and test partitions",
            src.name,
            data.len()
        )));
    }
    let (tx, ty) = scaled.subset(&parts.train);
    let (vx, vy) = scaled.subset(&parts.validation);
    let (test_x, test_y) = data.subset(&parts.test);
    let truth = src.truth(&test_x, &config.quantiles)?;

    let grid = config.grid.map(|g| (g, evaluation_grid(g.lo, g.hi, g.points)));
    let grid_truth = match &grid {
        Some((_, gx)) => src.truth(gx, &config.quantiles)?,
        None => None,
    };

    let mut out = RunResult { rows: Vec::new(), files: Vec::new(), timed: Vec::new() };
    if grid.is_some() {
        let (px, py) = data.subset(&parts.train);
        let name = format!("data/{}_run{run}_train.csv", slug(&src.name));
        write_points(&ctx.out_dir.join(&name), &px, &py)?;
        out.files.push(name);
    }

    for &method in &config.methods {
        let lambdas: Vec<Option<f64>> = match method {
            Method::EvidentialQuantile => ctx.lambdas.iter().map(|&l| Some(l)).collect(),
            _ => vec![None],
        };
        for lambda in lambdas {
            let mut cfg = config.train_config(seed)?;
            if let Some(l) = lambda {
                cfg.lambda = l;
            }
            let (model, histories) = fit_method(
                method,
                config.architecture,
                Samples::new(&tx, &ty)?,
                Samples::new(&vx, &vy)?,
                &cfg,
                &config.sampling,
            )?;
            let epochs = histories.iter().map(|h| h.epochs.len()).sum();
            let preds = model.predict(&test_x, &stats, seed)?;
            let metrics = compute_metrics(&preds, &test_y, truth.as_deref())?;

            let mut bands = vec![None; preds.len()];
            if let Some((g, gx)) = &grid {
                let gp = model.predict(gx, &stats, seed)?;
                let xs = gx.values();
                for (b, p) in bands.iter_mut().zip(&gp) {
                    *b = BandStats::of(xs, p, g.in_distribution, g.out_of_distribution);
                }
                let tag = match lambda {
                    Some(l) if ctx.lambdas.len() > 1 => format!("_lambda{l}"),
                    _ => String::new(),
                };
                let name = format!("bands/{}_{}{}_run{run}.csv", slug(&src.name), method.name(), slug(&tag));
                write_band(&ctx.out_dir.join(&name), xs, &gp, grid_truth.as_deref())?;
                out.files.push(name);
            }

            for (m, band) in metrics.into_iter().zip(bands) {
                out.rows.push(RunRow {
                    dataset: src.name.clone(),
                    method,
                    lambda,
                    run,
                    seed,
                    epochs,
                    metrics: m,
                    band,
                });
            }
            if keep_models && !out.timed.iter().any(|(m, _)| m.method() == method) {
                out.timed.push((model, stats.transform_features(&test_x)?));
            }
        }
    }
    Ok(out)
}

fn summarize(rows: &[&RunRow], pick: impl Fn(&RunRow) -> Option<f64>) -> Result<Option<Summary>> {
    let v: Option<Vec<f64>> = rows.iter().map(|r| pick(r)).collect();
    v.map(|v| Summary::of(&v)).transpose()
}

fn aggregate(config: &ExperimentConfig, run_rows: &[RunRow]) -> Result<Vec<ReportRow>> {
    let (build, hash) = (build_id(), config.hash());
    let mut keys: Vec<(&str, Method, Option<f64>, f64)> = Vec::new();
    for r in run_rows {
        let k = (r.dataset.as_str(), r.method, r.lambda, r.metrics.quantile);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(dataset, method, lambda, quantile)| {
            let rows: Vec<&RunRow> = run_rows
                .iter()
                .filter(|r| {
                    r.dataset == dataset && r.method == method && r.lambda == lambda && r.metrics.quantile == quantile
                })
                .collect();
            let all = |f: fn(&QuantileMetrics) -> f64| -> Result<Summary> {
                Summary::of(&rows.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>())
            };
            Ok(ReportRow {
                dataset: dataset.to_string(),
                method,
                lambda,
                quantile,
                seed: config.seed,
                build_id: build.clone(),
                config_hash: hash.clone(),
                tilted_loss: all(|m| m.tilted_loss)?,
                nll: all(|m| m.nll)?,
                mae_to_truth: summarize(&rows, |r| r.metrics.mae_to_truth)?,
                coverage: all(|m| m.coverage)?,
                epistemic: all(|m| m.epistemic)?,
                aleatoric: all(|m| m.aleatoric)?,
                entropy: all(|m| m.entropy)?,
                epistemic_in: summarize(&rows, |r| r.band.map(|b| b.epistemic_in))?,
                epistemic_out: summarize(&rows, |r| r.band.map(|b| b.epistemic_out))?,
                aleatoric_in: summarize(&rows, |r| r.band.map(|b| b.aleatoric_in))?,
                aleatoric_out: summarize(&rows, |r| r.band.map(|b| b.aleatoric_out))?,
            })
        })
        .collect()
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn time_models(models: &[(FittedModel, Tensor2)], settings: TimingSettings, seed: u64) -> Result<TimingReport> {
    let mut measured = Vec::with_capacity(models.len());
    for (model, xs) in models {
        let rows: Vec<usize> = (0..settings.batch).map(|i| i % xs.rows()).collect();
        let batch = xs.select_rows(&rows);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stats = time_inference(|| model.infer(&batch, &mut rng), settings.repetitions)?;
        measured.push((model.method().name().to_string(), stats));
    }
    TimingReport::new(settings.batch, Method::EvidentialQuantile.name(), measured)
}

/// Runs every (dataset, run, method) combination and writes `report.json`,
/// band CSVs and, when timing is configured, `timing.json` into `out_dir`.
///
/// `progress` receives one line per finished run.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    out_dir: &Path,
    progress: &mut dyn FnMut(&str),
) -> Result<ExperimentOutcome> {
    config.validate()?;
    let srcs = sources(config)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    if config.grid.is_some() {
        for sub in ["bands", "data"] {
            let d = out_dir.join(sub);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
    }
    let lambdas = match (&config.kind, &config.ablation) {
        (ExperimentKind::Ablation, Some(a)) => a.lambdas.clone(),
        _ => vec![config.lambda()],
    };
    let ctx = RunContext { config, out_dir, lambdas };

    let mut run_rows = Vec::new();
    let mut files = Vec::new();
    let mut timed = Vec::new();
    for (d, src) in srcs.iter().enumerate() {
        for run in 0..config.runs {
            let seed = run_seed(config.seed, run);
            let keep = config.timing.is_some() && d == 0 && run == 0;
            let result =
                run_once(&ctx, src, run, seed, keep).map_err(|e| Error::Run { run, seed, source: Box::new(e) })?;
            progress(&format!("dataset {} run {run} (seed {seed}): {} rows scored", src.name, result.rows.len()));
            run_rows.extend(result.rows);
            files.extend(result.files);
            timed.extend(result.timed);
        }
    }

    let report = MetricsReport {
        schema_version: REPORT_VERSION,
        band_schema_version: BAND_VERSION,
        kind: config.kind,
        seed: config.seed,
        build_id: build_id(),
        config_hash: config.hash(),
        runs: config.runs,
        rows: aggregate(config, &run_rows)?,
        run_rows,
        files,
    };
    let timing = match config.timing {
        Some(t) => {
            let r = time_models(&timed, t, config.seed)?;
            write_atomic(&out_dir.join(TIMING_FILE), &serde_json::to_string_pretty(&r)?)?;
            Some(r)
        }
        None => None,
    };
    write_atomic(&out_dir.join(REPORT_FILE), &report.to_json()?)?;
    Ok(ExperimentOutcome { report, timing, output_dir: out_dir.to_path_buf() })
}

pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutcome> {
    run_experiment_with(config, out_dir, &mut |_| {})
}
