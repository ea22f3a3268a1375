//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use evquant::baselines::{BaselineModel, EnsembleModel};
use evquant::dist::QuantileLevel;
use evquant::evidential::{
    evidential_nll, marginal_student_t, oracle_sweep, raw_to_evidential, total_loss, EvidentialModel,
    EvidentialObjective, EvidentialParams, InnerMu, QuadratureConfig,
};
use evquant::harness::{
    run_experiment, time_inference, ExperimentConfig, ExperimentOutcome, FittedModel, Method, RunRow,
};
use evquant::neural::{Architecture, Mlp, Mode, Objective, Tensor2};
use evquant::quadrature::{integrate_real_line, AdaptiveConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ORACLE_REL_TOL: f64 = 1e-3;
const ORACLE_BUDGET: Duration = Duration::from_secs(60);
/// Per point: ‖numeric − analytic‖ / max(‖numeric‖, ‖analytic‖).
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(30);
/// Step of the five-point central stencil.
const GRAD_STEP: f64 = 1e-4;
const NORM_TOL: f64 = 1e-5;
/// 0.95 and 0.05 are not exact binary fractions, so the ratio carries
/// rounding at the last few ulps.
const ASYM_TOL: f64 = 1e-13;
const MAE_Q95_BOUND: f64 = 6.7;
const TABLE_BUDGET: Duration = Duration::from_secs(600);
const COVERAGE_Q95: [f64; 2] = [0.90, 0.99];
const COVERAGE_Q05: [f64; 2] = [0.01, 0.10];
const COVERAGE_MIN_RUNS: usize = 4;
const OOD_MIN_RATIO: f64 = 5.0;
const SPEED_MIN_RATIO: f64 = 3.0;
const SPEED_BATCH: usize = 1024;
const SPEED_REPS: usize = 30;
const ENSEMBLE_MAE_BOUND: f64 = 2.0 * 3.11;
const DROPOUT_MAE_BOUND: f64 = 2.0 * 3.90;
const ABLATION_MAX_INVERSIONS: usize = 1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk").join(name);
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn run(name: &str) -> (ExperimentOutcome, Duration) {
    let dir = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let out = run_experiment(&config(name), dir.path()).unwrap_or_else(|e| panic!("{name}: {e}"));
    (out, t.elapsed())
}

fn ql(q: f64) -> QuantileLevel {
    QuantileLevel::new(q).unwrap()
}

fn random_params(rng: &mut ChaCha8Rng) -> EvidentialParams {
    EvidentialParams::new(
        rng.random_range(-3.0..3.0),
        rng.random_range(0.1..10.0),
        rng.random_range(1.1..10.0),
        rng.random_range(0.1..10.0),
    )
    .unwrap()
}

fn oracle() -> Outcome {
    let t = Instant::now();
    let cfg = QuadratureConfig { inner: InnerMu::Numeric, ..QuadratureConfig::default() };
    let r = oracle_sweep(100, 7, &cfg).unwrap();
    let el = t.elapsed();
    outcome(
        r.max_rel_error < ORACLE_REL_TOL && el < ORACLE_BUDGET,
        format!("{} evaluations, max rel error {:.2e}, {:.1}s", r.evaluations, r.max_rel_error, el.as_secs_f64()),
    )
}

fn gradient() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let quantiles = vec![ql(0.1), ql(0.5), ql(0.9)];
    let lambda = 0.5;
    let arch = Architecture { hidden_layers: 2, hidden_units: 8, dropout_rate: 0.0 };
    let cfg = arch.mlp(3, 4 * quantiles.len());
    let objective = EvidentialObjective::new(quantiles.clone(), lambda).unwrap();
    let mut worst: f64 = 0.0;
    for point in 0..50 {
        let net = Mlp::new(cfg, 100 + point).unwrap();
        let x = Tensor2::from_vec(1, 3, (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let y: f64 = rng.random_range(-3.0..3.0);
        let loss = |params: &[f64]| -> f64 {
            let m = Mlp::from_params(cfg, params.to_vec()).unwrap();
            let out = m.predict(&x).unwrap();
            let row = out.row(0);
            quantiles
                .iter()
                .enumerate()
                .map(|(j, &q)| {
                    let p = raw_to_evidential([row[4 * j], row[4 * j + 1], row[4 * j + 2], row[4 * j + 3]]).unwrap();
                    total_loss(&p, y, q, lambda).unwrap()
                })
                .sum()
        };
        let (out, mut tape) = net.forward(&x, Mode::Eval, &mut rng).unwrap();
        let mut g = Tensor2::zeros(1, out.cols());
        objective.evaluate(&out, &[y], Some(&mut g)).unwrap();
        let analytic = net.backward(&mut tape, &g).unwrap();
        let mut params = net.params().to_vec();
        let mut numeric = Vec::with_capacity(params.len());
        for k in 0..params.len() {
            let orig = params[k];
            let mut at = |d: f64| {
                params[k] = orig + d;
                loss(&params)
            };
            let h = GRAD_STEP;
            let fd = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
            params[k] = orig;
            numeric.push(fd);
        }
        let norm = |v: &[f64]| v.iter().map(|g| g * g).sum::<f64>().sqrt();
        let diff: Vec<f64> = numeric.iter().zip(&analytic).map(|(n, a)| n - a).collect();
        worst = worst.max(norm(&diff) / norm(&numeric).max(norm(&analytic)));
    }
    let el = t.elapsed();
    outcome(
        worst < GRAD_REL_TOL && el < GRAD_BUDGET,
        format!("50 points, max rel error {worst:.2e}, {:.1}s", el.as_secs_f64()),
    )
}

fn normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = AdaptiveConfig::default();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let p = random_params(&mut rng);
        let q = ql(rng.random_range(0.05..0.95));
        let st = marginal_student_t(&p, q);
        let mass =
            integrate_real_line(|y| (-evidential_nll(&p, y, q).unwrap()).exp(), st.loc(), st.scale_sq().sqrt(), &cfg)
                .unwrap()
                .value;
        worst = worst.max((mass - 1.0).abs());
    }
    outcome(worst <= NORM_TOL, format!("20 parameter sets, max |mass - 1| {worst:.2e}"))
}

fn tilted_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let median = ql(0.5);
    let mismatches = (0..10_000)
        .filter(|_| {
            let e: f64 = rng.random_range(-1e3..1e3);
            median.rho(e) != e.abs() / 2.0
        })
        .count();
    let q95 = ql(0.95);
    let ratio = q95.rho(1.0) / q95.rho(-1.0);
    outcome(
        mismatches == 0 && (ratio - 19.0).abs() <= ASYM_TOL,
        format!("{mismatches} median mismatches in 10000, q=0.95 ratio {ratio:.17}"),
    )
}

fn rows<'a>(out: &'a ExperimentOutcome, dataset: &'a str, method: Method, q: f64) -> impl Iterator<Item = &'a RunRow> {
    out.report.run_rows.iter().filter(move |r| r.dataset == dataset && r.method == method && r.metrics.quantile == q)
}

fn mean_mae(out: &ExperimentOutcome, dataset: &str, method: Method, q: f64) -> f64 {
    let v: Vec<f64> = rows(out, dataset, method, q).map(|r| r.metrics.mae_to_truth.unwrap()).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn table(out: &ExperimentOutcome, elapsed: Duration) -> Outcome {
    let mae = mean_mae(out, "exponential", Method::EvidentialQuantile, 0.95);
    let runs = rows(out, "exponential", Method::EvidentialQuantile, 0.95).count();
    outcome(
        runs == 5 && mae <= MAE_Q95_BOUND && elapsed < TABLE_BUDGET,
        format!("q95 MAE {mae:.3} over {runs} runs, table run {:.0}s", elapsed.as_secs_f64()),
    )
}

fn coverage(out: &ExperimentOutcome) -> Outcome {
    let inside = |q: f64, band: [f64; 2]| -> Vec<bool> {
        rows(out, "gaussian", Method::EvidentialQuantile, q)
            .map(|r| (band[0]..=band[1]).contains(&r.metrics.coverage))
            .collect()
    };
    let hi = inside(0.95, COVERAGE_Q95);
    let lo = inside(0.05, COVERAGE_Q05);
    let good = hi.iter().zip(&lo).filter(|(a, b)| **a && **b).count();
    let fractions: Vec<String> = rows(out, "gaussian", Method::EvidentialQuantile, 0.95)
        .zip(rows(out, "gaussian", Method::EvidentialQuantile, 0.05))
        .map(|(h, l)| format!("{:.3}/{:.3}", l.metrics.coverage, h.metrics.coverage))
        .collect();
    outcome(
        good >= COVERAGE_MIN_RUNS,
        format!("{good}/{} runs in range, q05/q95 coverage {}", hi.len(), fractions.join(" ")),
    )
}

fn ood() -> Outcome {
    let (out, _) = run("ood_bands.toml");
    let (mut ei, mut eo, mut ai, mut ao) = (0.0, 0.0, 0.0, 0.0);
    for r in &out.report.run_rows {
        let b = r.band.expect("band statistics");
        ei += b.epistemic_in;
        eo += b.epistemic_out;
        ai += b.aleatoric_in;
        ao += b.aleatoric_out;
    }
    let (er, ar) = (eo / ei, ao / ai);
    outcome(er >= OOD_MIN_RATIO && ar < er, format!("epistemic out/in {er:.2}, aleatoric out/in {ar:.2}"))
}

fn speed() -> Outcome {
    let arch = Architecture { hidden_layers: 3, hidden_units: 128, dropout_rate: 0.1 };
    let quantiles = vec![ql(0.05), ql(0.95)];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xs = Tensor2::column((0..SPEED_BATCH).map(|_| rng.random_range(-4.0..4.0)).collect());
    let models = [
        FittedModel::Evidential(EvidentialModel::new(1, arch, quantiles.clone(), 1).unwrap()),
        FittedModel::Ensemble(
            EnsembleModel::new(
                (0..5).map(|s| BaselineModel::new(1, arch, quantiles.clone(), 10 + s).unwrap()).collect(),
            )
            .unwrap(),
        ),
        FittedModel::Dropout { model: BaselineModel::new(1, arch, quantiles.clone(), 2).unwrap(), mc_samples: 5 },
    ];
    let medians: Vec<f64> =
        models.iter().map(|m| time_inference(|| m.infer(&xs, &mut rng), SPEED_REPS).unwrap().median).collect();
    let (ens, drop) = (medians[1] / medians[0], medians[2] / medians[0]);
    outcome(
        ens >= SPEED_MIN_RATIO && drop >= SPEED_MIN_RATIO,
        format!(
            "ensemble/evidential {ens:.2}, dropout/evidential {drop:.2}, evidential median {:.2}ms",
            medians[0] * 1e3
        ),
    )
}

fn baseline_parity(out: &ExperimentOutcome) -> Outcome {
    let ens = mean_mae(out, "exponential", Method::Ensemble, 0.05);
    let drop = mean_mae(out, "exponential", Method::Dropout, 0.05);
    outcome(
        ens <= ENSEMBLE_MAE_BOUND && drop <= DROPOUT_MAE_BOUND,
        format!("q05 MAE ensemble {ens:.3}, dropout {drop:.3}"),
    )
}

fn ablation() -> Outcome {
    let (out, _) = run("ablation.toml");
    let lambdas = config("ablation.toml").ablation.unwrap().lambdas;
    let widths: Vec<f64> = lambdas
        .iter()
        .map(|&l| {
            let sel: Vec<&RunRow> = out.report.run_rows.iter().filter(|r| r.lambda == Some(l)).collect();
            let runs = sel.iter().map(|r| r.run).max().unwrap() + 1;
            sel.iter().map(|r| r.metrics.epistemic).sum::<f64>() / runs as f64
        })
        .collect();
    let inversions = widths.windows(2).filter(|w| w[1] < w[0]).count();
    let shown: Vec<String> = lambdas.iter().zip(&widths).map(|(l, w)| format!("{l}:{w:.3}")).collect();
    outcome(
        inversions <= ABLATION_MAX_INVERSIONS,
        format!("{inversions} inversion(s), epistemic by lambda {}", shown.join(" ")),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    let mut report = |id: u8, name: &'static str, o: Outcome| {
        println!("criterion {id:>2} {name:<22} {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };
    report(1, "derivation oracle", oracle());
    report(2, "gradient check", gradient());
    report(3, "normalization", normalization());
    report(4, "tilted-loss identities", tilted_identities());
    let (tab, elapsed) = run("non_gaussian.toml");
    report(5, "exponential q95 MAE", table(&tab, elapsed));
    report(6, "gaussian coverage", coverage(&tab));
    report(7, "OOD epistemic", ood());
    report(8, "inference speed", speed());
    report(9, "baseline parity", baseline_parity(&tab));
    report(10, "ablation direction", ablation());
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
