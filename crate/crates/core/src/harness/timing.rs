//! Wall-clock inference latency.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_REPETITIONS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub repetitions: usize,
    /// Seconds per batch.
    pub median: f64,
    pub iqr: f64,
}

/// Calls `batch` once to warm up, then `repetitions` timed times.
pub fn time_inference<F>(mut batch: F, repetitions: usize) -> Result<LatencyStats>
where
    F: FnMut() -> Result<()>,
{
    if repetitions < MIN_REPETITIONS {
        return Err(Error::Domain {
            what: "repetitions",
            value: repetitions as f64,
            reason: "timing needs at least 10 repetitions",
        });
    }
    batch()?;
    let mut secs = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let t = Instant::now();
        batch()?;
        secs.push(t.elapsed().as_secs_f64());
    }
    secs.sort_by(f64::total_cmp);
    Ok(LatencyStats {
        repetitions,
        median: percentile(&secs, 0.5),
        iqr: percentile(&secs, 0.75) - percentile(&secs, 0.25),
    })
}

/// Linear interpolation between order statistics of sorted data.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingEntry {
    pub method: String,
    pub latency: LatencyStats,
    /// Median latency divided by the reference method's median.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub batch: usize,
    pub reference: String,
    pub entries: Vec<TimingEntry>,
}

impl TimingReport {
    /// Ratios are relative to the first entry named `reference`, or to the
    /// first entry when it is absent.
    pub fn new(batch: usize, reference: &str, measured: Vec<(String, LatencyStats)>) -> Result<Self> {
        let base = measured
            .iter()
            .find(|(m, _)| m == reference)
            .or(measured.first())
            .ok_or(Error::Empty("timing measurements"))?;
        let (reference, base) = (base.0.clone(), base.1.median);
        let entries = measured
            .into_iter()
            .map(|(method, latency)| TimingEntry { ratio: latency.median / base, method, latency })
            .collect();
        Ok(Self { batch, reference, entries })
    }

    pub fn ratio(&self, method: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.method == method).map(|e| e.ratio)
    }
}
