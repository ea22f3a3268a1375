//! Globally adaptive Gauss–Legendre integration.
//!
//! Each interval carries an estimate from its two halves and an error taken
//! as the disagreement with the single-panel rule; the interval with the
//! largest error is bisected until the summed error meets the tolerance.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nodes and weights of the n-point Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss-Legendre order must be >= 1");
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let half = n.div_ceil(2);
        for i in 0..half {
            let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp;
            loop {
                let (mut p1, mut p2) = (1.0, 0.0);
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    p1 = ((2 * j - 1) as f64 * z * p2 - (j - 1) as f64 * p3) / j as f64;
                }
                dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
                let z_prev = z;
                z = z_prev - p1 / dp;
                if (z - z_prev).abs() < 1e-15 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Single-panel estimate of the integral of `f` over [a, b].
    pub fn integrate<F: FnMut(f64) -> f64>(&self, f: &mut F, a: f64, b: f64) -> f64 {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    /// Points per panel.
    pub order: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_intervals: usize,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self { order: 20, rel_tol: 1e-10, abs_tol: 1e-300, max_intervals: 2_000 }
    }
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

fn panel<F: FnMut(f64) -> f64>(rule: &GaussLegendre, f: &mut F, lo: f64, hi: f64) -> Panel {
    let mid = 0.5 * (lo + hi);
    let whole = rule.integrate(f, lo, hi);
    let value = rule.integrate(f, lo, mid) + rule.integrate(f, mid, hi);
    Panel { lo, hi, value, error: (whole - value).abs() }
}

/// Integrates `f` over the finite interval [a, b].
///
/// Fails with [`Error::NonConvergence`] when the error budget is not met
/// within `max_intervals` panels or the integrand produces a non-finite value.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, config: &AdaptiveConfig) -> Result<Integral> {
    if !(a.is_finite() && b.is_finite()) || a >= b {
        return Err(Error::Domain {
            what: "integration interval",
            value: b - a,
            reason: "bounds must be finite with a < b",
        });
    }
    let rule = GaussLegendre::new(config.order.max(1));
    let mut heap = BinaryHeap::new();
    let first = panel(&rule, &mut f, a, b);
    let mut value = first.value;
    let mut error = first.error;
    heap.push(first);
    loop {
        if !value.is_finite() || !error.is_finite() {
            return Err(Error::NonConvergence { lo: a, hi: b, estimate: error, tolerance: 0.0, intervals: heap.len() });
        }
        let tolerance = config.abs_tol.max(config.rel_tol * value.abs());
        if error <= tolerance {
            return Ok(Integral { value, error, intervals: heap.len() });
        }
        if heap.len() >= config.max_intervals {
            return Err(Error::NonConvergence { lo: a, hi: b, estimate: error, tolerance, intervals: heap.len() });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.lo + worst.hi);
        let left = panel(&rule, &mut f, worst.lo, mid);
        let right = panel(&rule, &mut f, mid, worst.hi);
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        // Re-sum periodically so cancellation in the running totals cannot drift.
        if heap.len() % 64 == 0 {
            value = heap.iter().map(|p| p.value).sum();
            error = heap.iter().map(|p| p.error).sum();
        }
    }
}

/// Integrates `f` over the whole real line through y = center + scale·tan(θ).
pub fn integrate_real_line<F: FnMut(f64) -> f64>(
    mut f: F,
    center: f64,
    scale: f64,
    config: &AdaptiveConfig,
) -> Result<Integral> {
    let edge = FRAC_PI_2 * (1.0 - 1e-12);
    integrate(
        |theta| {
            let t = theta.tan();
            let jac = scale * (1.0 + t * t);
            let v = f(center + scale * t) * jac;
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        -edge,
        edge,
        config,
    )
}
