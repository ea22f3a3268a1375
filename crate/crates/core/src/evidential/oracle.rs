//! Numerical marginal likelihood under the NIG prior.
//!
//! Evaluates ∫∫ N(y; μ + τz, ωσz) · N(μ; γ, σ/ν) · InvGamma(σ; α, β) dμ dσ
//! directly from the hierarchy, without using the Student-t closed form.
//! The σ-integral runs over t = ln σ with adaptive Gauss–Legendre; the
//! μ-integral is either the Gaussian convolution identity or a second
//! adaptive quadrature.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{marginal_student_t, EvidentialParams};
use crate::dist::{student_t_logpdf, QuantileLevel};
use crate::error::{ensure_finite, Result};
use crate::quadrature::{integrate, AdaptiveConfig};
use crate::special::ln_gamma;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMu {
    /// N(y; γ + τz, σ(ωz + 1/ν)).
    #[default]
    ClosedForm,
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    /// Range of ln σ as offsets from ln(β + d²/(2(ωz + 1/ν))).
    pub log_sigma_range: [f64; 2],
    /// Half-width of the μ-range in predictive standard deviations.
    pub mu_half_width: f64,
    pub inner: InnerMu,
    pub sigma_rule: AdaptiveConfig,
    pub mu_rule: AdaptiveConfig,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            log_sigma_range: [-8.0, 45.0],
            mu_half_width: 14.0,
            inner: InnerMu::ClosedForm,
            sigma_rule: AdaptiveConfig { order: 20, rel_tol: 1e-9, abs_tol: 1e-300, max_intervals: 4_000 },
            mu_rule: AdaptiveConfig { order: 20, rel_tol: 1e-11, abs_tol: 1e-300, max_intervals: 2_000 },
        }
    }
}

fn ln_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (2.0 * PI * var).ln() - d * d / (2.0 * var)
}

fn ln_inv_gamma_pdf(s: f64, alpha: f64, beta: f64) -> f64 {
    alpha * beta.ln() - ln_gamma(alpha) - (alpha + 1.0) * s.ln() - beta / s
}

/// Closed-form inner integral ∫ N(y; μ + τz, ωσz) N(μ; γ, σ/ν) dμ.
pub fn mu_marginal(p: &EvidentialParams, y: f64, q: QuantileLevel, sigma: f64) -> f64 {
    let z = p.z().z;
    ln_normal_pdf(y, p.gamma + q.tau() * z, sigma * (q.omega() * z + 1.0 / p.nu)).exp()
}

/// The same inner integral by adaptive quadrature over μ.
pub fn mu_marginal_by_quadrature(
    p: &EvidentialParams,
    y: f64,
    q: QuantileLevel,
    sigma: f64,
    config: &QuadratureConfig,
) -> Result<f64> {
    let z = p.z().z;
    let lik_var = q.omega() * sigma * z;
    let prior_var = sigma / p.nu;
    // Product of the two Gaussians in μ is centred at the precision-weighted mean.
    let w = prior_var / (prior_var + lik_var);
    let centre = p.gamma + w * (y - q.tau() * z - p.gamma);
    let spread = (lik_var * prior_var / (lik_var + prior_var)).sqrt();
    let half = config.mu_half_width * spread;
    let r = integrate(
        |mu| (ln_normal_pdf(y, mu + q.tau() * z, lik_var) + ln_normal_pdf(mu, p.gamma, prior_var)).exp(),
        centre - half,
        centre + half,
        &config.mu_rule,
    )?;
    Ok(r.value)
}

/// Marginal density p(y | γ, ν, α, β) by quadrature.
pub fn marginal_via_quadrature(
    p: &EvidentialParams,
    y: f64,
    q: QuantileLevel,
    config: &QuadratureConfig,
) -> Result<f64> {
    ensure_finite("target", y)?;
    let z = p.z().z;
    let k = q.omega() * z + 1.0 / p.nu;
    let d = y - p.gamma - q.tau() * z;
    let centre = (p.beta + d * d / (2.0 * k)).ln();
    let lo = centre + config.log_sigma_range[0];
    let hi = centre + config.log_sigma_range[1];

    let result = match config.inner {
        InnerMu::ClosedForm => integrate(
            |t| {
                let s = t.exp();
                (ln_normal_pdf(y, p.gamma + q.tau() * z, s * k) + ln_inv_gamma_pdf(s, p.alpha, p.beta) + t).exp()
            },
            lo,
            hi,
            &config.sigma_rule,
        )?,
        InnerMu::Numeric => {
            let mut failure = None;
            let r = integrate(
                |t| {
                    let s = t.exp();
                    match mu_marginal_by_quadrature(p, y, q, s, config) {
                        Ok(inner) => inner * (ln_inv_gamma_pdf(s, p.alpha, p.beta) + t).exp(),
                        Err(e) => {
                            failure.get_or_insert(e);
                            f64::NAN
                        }
                    }
                },
                lo,
                hi,
                &config.sigma_rule,
            );
            if let Some(e) = failure {
                return Err(e);
            }
            r?
        }
    };
    Ok(result.value)
}

/// Largest relative disagreement between the oracle and the closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub parameter_sets: usize,
    pub evaluations: usize,
    pub max_rel_error: f64,
}

/// Compares the oracle with the Student-t density for `n` random parameter
/// sets (γ ∈ [−3, 3], ν ∈ [0.1, 10], α ∈ [1.1, 10], β ∈ [0.1, 10],
/// q ∈ {0.05, 0.5, 0.95}) at y = loc − 2, loc, loc + 3·scale.
pub fn oracle_sweep(n: usize, seed: u64, config: &QuadratureConfig) -> Result<SweepResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut evaluations = 0;
    for _ in 0..n {
        let p = EvidentialParams::new(
            rng.random_range(-3.0..=3.0),
            rng.random_range(0.1..=10.0),
            rng.random_range(1.1..=10.0),
            rng.random_range(0.1..=10.0),
        )?;
        let q = QuantileLevel::new([0.05, 0.5, 0.95][rng.random_range(0..3)])?;
        let st = marginal_student_t(&p, q);
        for y in [st.loc() - 2.0, st.loc(), st.loc() + 3.0 * st.scale_sq().sqrt()] {
            let closed = student_t_logpdf(y, &st)?.exp();
            let numeric = marginal_via_quadrature(&p, y, q, config)?;
            worst = worst.max((numeric - closed).abs() / closed);
            evaluations += 1;
        }
    }
    Ok(SweepResult { parameter_sets: n, evaluations, max_rel_error: worst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::student_t_logpdf;
    use crate::dist::StudentTParams;
    use crate::error::Error;
    use crate::evidential::{evidential_nll, marginal_student_t};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ql(q: f64) -> QuantileLevel {
        QuantileLevel::new(q).unwrap()
    }

    #[test]
    fn reference_point_matches_student_t() {
        let p = EvidentialParams::new(0.0, 1.0, 2.0, 1.0).unwrap();
        let got = marginal_via_quadrature(&p, 0.0, ql(0.5), &QuadratureConfig::default()).unwrap();
        let st = StudentTParams::new(0.0, 4.5, 4.0).unwrap();
        let want = student_t_logpdf(0.0, &st).unwrap().exp();
        assert!((got / want - 1.0).abs() < 1e-4, "{got} vs {want}");
        // 0.17677669529663687 = 1/(4√2), from an independent double quadrature.
        assert!((got - 0.176_776_695_296_636_9).abs() < 1e-8);
    }

    #[test]
    fn inner_mu_integral_is_gaussian_convolution() {
        let cfg = QuadratureConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..30 {
            let p = EvidentialParams::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(0.1..10.0),
                rng.random_range(1.1..10.0),
                rng.random_range(0.1..10.0),
            )
            .unwrap();
            let q = ql([0.05, 0.5, 0.95][rng.random_range(0..3)]);
            let y = rng.random_range(-5.0..5.0);
            let sigma = rng.random_range(0.05..5.0);
            let closed = mu_marginal(&p, y, q, sigma);
            let numeric = mu_marginal_by_quadrature(&p, y, q, sigma, &cfg).unwrap();
            assert!((closed - numeric).abs() <= 1e-9 * closed.max(1e-300), "{closed} vs {numeric}");
        }
    }

    #[test]
    fn fully_numeric_double_integral_agrees() {
        let cfg = QuadratureConfig { inner: InnerMu::Numeric, ..QuadratureConfig::default() };
        for (p, q, y) in [
            (EvidentialParams::new(0.0, 1.0, 2.0, 1.0).unwrap(), ql(0.5), 0.0),
            (EvidentialParams::new(1.0, 2.0, 3.0, 4.0).unwrap(), ql(0.9), -12.0),
            (EvidentialParams::new(-0.5, 0.3, 1.4, 0.6).unwrap(), ql(0.05), 3.0),
        ] {
            let numeric = marginal_via_quadrature(&p, y, q, &cfg).unwrap();
            let closed = (-evidential_nll(&p, y, q).unwrap()).exp();
            assert!((numeric / closed - 1.0).abs() < 1e-6, "{numeric} vs {closed}");
        }
    }

    #[test]
    fn doubled_scale_is_rejected_by_the_oracle() {
        // The variant with squared scale 2β(1 + ωνz)/(να) is not the marginal.
        let p = EvidentialParams::new(0.0, 1.0, 2.0, 1.0).unwrap();
        let q = ql(0.5);
        let st = marginal_student_t(&p, q);
        let doubled = StudentTParams::new(st.loc(), 2.0 * st.scale_sq(), st.dof()).unwrap();
        let oracle = marginal_via_quadrature(&p, 0.0, q, &QuadratureConfig::default()).unwrap();
        let wrong = student_t_logpdf(0.0, &doubled).unwrap().exp();
        assert!((oracle / wrong - 1.0).abs() > 0.3);
    }

    #[test]
    fn small_sweep_agrees() {
        let r = oracle_sweep(5, 1, &QuadratureConfig::default()).unwrap();
        assert_eq!((r.parameter_sets, r.evaluations), (5, 15));
        assert!(r.max_rel_error < 1e-3, "{r:?}");
    }

    #[test]
    fn starved_quadrature_reports_non_convergence() {
        let cfg = QuadratureConfig {
            sigma_rule: AdaptiveConfig { order: 2, rel_tol: 1e-14, abs_tol: 0.0, max_intervals: 3 },
            ..QuadratureConfig::default()
        };
        let p = EvidentialParams::new(0.0, 1.0, 2.0, 1.0).unwrap();
        let err = marginal_via_quadrature(&p, 0.0, ql(0.5), &cfg).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. }));
    }
}
