//! Replays the checked-in fuzz seeds, plus truncations and byte flips of
//! each, through the parsers. Only panics fail; parse errors are expected.

use std::fs;
use std::path::PathBuf;

use evquant::baselines::EnsembleManifest;
use evquant::data::{parse_csv, DatasetManifest};
use evquant::dist::NoiseSpec;
use evquant::harness::{ExperimentConfig, TrainRecipe};
use evquant::neural::Checkpoint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn variants(bytes: &[u8], rng: &mut ChaCha8Rng) -> Vec<Vec<u8>> {
    let mut v = Vec::new();
    let step = (bytes.len() / 16).max(1);
    for cut in (0..bytes.len()).step_by(step) {
        v.push(bytes[..cut].to_vec());
    }
    for _ in 0..64 {
        let mut b = bytes.to_vec();
        if b.is_empty() {
            break;
        }
        for _ in 0..rng.random_range(1..4) {
            let i = rng.random_range(0..b.len());
            b[i] = match rng.random_range(0..4) {
                0 => rng.random(),
                1 => b'-',
                2 => b'9',
                _ => b'"',
            };
        }
        v.push(b);
    }
    v
}

fn replay(target: &str, expect_ok: &dyn Fn(&str) -> bool, parse: &dyn Fn(&[u8]) -> bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (name, bytes) in seeds(target) {
        assert_eq!(parse(&bytes), expect_ok(&name), "{target}/{name}");
        for v in variants(&bytes, &mut rng) {
            parse(&v);
        }
    }
}

fn text(b: &[u8]) -> &str {
    std::str::from_utf8(b).unwrap_or("\u{0}")
}

#[test]
fn csv_seeds() {
    replay("parse_csv", &|n| !matches!(n, "missing_value.csv" | "nan.csv"), &|b| {
        let delim = if b.contains(&b';') { b';' } else { b',' };
        parse_csv(b, "y", delim).is_ok()
    });
}

#[test]
fn experiment_config_seeds() {
    replay("experiment_config", &|_| true, &|b| ExperimentConfig::from_toml(text(b)).is_ok());
}

#[test]
fn recipe_seeds() {
    replay("train_recipe", &|_| true, &|b| TrainRecipe::from_toml(text(b)).is_ok());
}

#[test]
fn checkpoint_seeds() {
    replay("checkpoint", &|_| true, &|b| Checkpoint::from_slice(b).and_then(|c| c.to_mlp()).is_ok());
}

#[test]
fn noise_spec_seeds() {
    replay("noise_spec", &|_| true, &|b| NoiseSpec::from_json(b).is_ok() || NoiseSpec::from_toml(text(b)).is_ok());
}

#[test]
fn manifest_seeds() {
    replay("dataset_manifest", &|_| true, &|b| DatasetManifest::from_slice(b).is_ok());
    replay("ensemble_manifest", &|_| true, &|b| EnsembleManifest::from_slice(b).is_ok());
}
