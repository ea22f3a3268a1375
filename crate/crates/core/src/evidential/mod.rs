//! Evidential quantile regression.
//!
//! A network predicts, per quantile, the Normal-Inverse-Gamma parameters
//! (γ, ν, α, β) of a prior over the location μ and scale σ of the
//! scalar-mixture form of the asymmetric Laplace likelihood,
//!
//! ```text
//! y ~ N(μ + τz, ωσz),   μ ~ N(γ, σ/ν),   σ ~ InvGamma(α, β),
//! ```
//!
//! with the mixing variable fixed at its plug-in mean z = β/(α − 1).
//! Marginalizing (μ, σ) gives a Student-t with location γ + τz,
//! squared scale β(1 + ωνz)/(να) and 2α degrees of freedom; its negative
//! log-density is the fit term of the training loss. The [`oracle`]
//! submodule re-derives that density by numerical integration.

mod model;
pub mod oracle;

use serde::{Deserialize, Serialize};

use crate::dist::{QuantileLevel, StudentTParams};
use crate::error::{ensure_finite, Error, Result};
use crate::special::{digamma, ln_gamma, sigmoid, softplus};

pub use model::{predictive_entropy, EvidentialModel, EvidentialObjective};
pub use oracle::{marginal_via_quadrature, oracle_sweep, InnerMu, QuadratureConfig, SweepResult};

/// Added to every softplus output so ν, β and α − 1 stay strictly positive.
pub const POSITIVITY_FLOOR: f64 = 1e-6;

/// The four NIG parameters for one (sample, quantile) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRecord", into = "ParamsRecord")]
pub struct EvidentialParams {
    gamma: f64,
    nu: f64,
    alpha: f64,
    beta: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsRecord {
    gamma: f64,
    nu: f64,
    alpha: f64,
    beta: f64,
}

impl TryFrom<ParamsRecord> for EvidentialParams {
    type Error = Error;

    fn try_from(r: ParamsRecord) -> Result<Self> {
        Self::new(r.gamma, r.nu, r.alpha, r.beta)
    }
}

impl From<EvidentialParams> for ParamsRecord {
    fn from(p: EvidentialParams) -> Self {
        ParamsRecord { gamma: p.gamma, nu: p.nu, alpha: p.alpha, beta: p.beta }
    }
}

impl EvidentialParams {
    pub fn new(gamma: f64, nu: f64, alpha: f64, beta: f64) -> Result<Self> {
        ensure_finite("gamma", gamma)?;
        ensure_finite("nu", nu)?;
        ensure_finite("alpha", alpha)?;
        ensure_finite("beta", beta)?;
        if nu <= 0.0 {
            return Err(Error::Domain { what: "nu", value: nu, reason: "must be > 0" });
        }
        if alpha <= 1.0 {
            return Err(Error::Domain { what: "alpha", value: alpha, reason: "must be > 1" });
        }
        if beta <= 0.0 {
            return Err(Error::Domain { what: "beta", value: beta, reason: "must be > 0" });
        }
        Ok(Self { gamma, nu, alpha, beta })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Plug-in mean of the mixing variable.
    pub fn z(&self) -> ZPlugin {
        ZPlugin { z: self.beta / (self.alpha - 1.0) }
    }

    /// Maps γ and E[σ] back to original target units, given the target
    /// standardization `y = mean + sd · y_std`.
    pub fn destandardize(&self, mean: f64, sd: f64) -> Self {
        Self { gamma: mean + sd * self.gamma, beta: sd * self.beta, ..*self }
    }
}

/// Plug-in mean z = β/(α − 1) of the exponential mixing variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZPlugin {
    pub z: f64,
}

/// Prediction and uncertainty summary of one set of evidential parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyEstimate {
    pub prediction: f64,
    /// E[σ] = β/(α − 1)
    pub aleatoric: f64,
    /// Var[μ] = β/(ν(α − 1))
    pub epistemic: f64,
    /// Φ = 2ν + α + 1/β
    pub confidence: f64,
}

/// Softplus head: γ = r₀, ν = sp(r₁), α = 1 + sp(r₂), β = sp(r₃),
/// each softplus shifted up by [`POSITIVITY_FLOOR`].
pub fn raw_to_evidential(raw: [f64; 4]) -> Result<EvidentialParams> {
    for r in raw {
        ensure_finite("raw evidential output", r)?;
    }
    let (p, _) = raw_to_evidential_with_jacobian(raw);
    Ok(p)
}

/// Parameters plus the diagonal Jacobian d(γ, ν, α, β)/d(raw).
pub(crate) fn raw_to_evidential_with_jacobian(raw: [f64; 4]) -> (EvidentialParams, [f64; 4]) {
    let p = EvidentialParams {
        gamma: raw[0],
        nu: softplus(raw[1]) + POSITIVITY_FLOOR,
        alpha: 1.0 + softplus(raw[2]) + POSITIVITY_FLOOR,
        beta: softplus(raw[3]) + POSITIVITY_FLOOR,
    };
    (p, [1.0, sigmoid(raw[1]), sigmoid(raw[2]), sigmoid(raw[3])])
}

/// Student-t predictive obtained by marginalizing μ and σ.
pub fn marginal_student_t(p: &EvidentialParams, q: QuantileLevel) -> StudentTParams {
    let z = p.z().z;
    let loc = p.gamma + q.tau() * z;
    let scale_sq = p.beta * (1.0 + q.omega() * p.nu * z) / (p.nu * p.alpha);
    StudentTParams::new(loc, scale_sq, 2.0 * p.alpha).expect("valid evidential params give a valid Student-t")
}

/// Negative log marginal likelihood of `y`.
pub fn evidential_nll(p: &EvidentialParams, y: f64, q: QuantileLevel) -> Result<f64> {
    ensure_finite("target", y)?;
    Ok(nll_and_grad(p, y, q).0)
}

/// NLL and its gradient with respect to (γ, ν, α, β).
///
/// With d = y − γ − τz and Ω = 2β(1 + ωνz):
///
/// ```text
/// NLL = lnΓ(α) − lnΓ(α + ½) + ½ ln(π/ν) − α ln Ω + (α + ½) ln(νd² + Ω)
/// ```
pub fn nll_and_grad(p: &EvidentialParams, y: f64, q: QuantileLevel) -> (f64, [f64; 4]) {
    let EvidentialParams { gamma, nu, alpha, beta } = *p;
    let (tau, omega) = (q.tau(), q.omega());
    let am1 = alpha - 1.0;
    let z = beta / am1;
    let k = 1.0 + omega * nu * z;
    let big_omega = 2.0 * beta * k;
    let d = y - gamma - tau * z;
    let a = nu * d * d + big_omega;
    let ln_omega = big_omega.ln();
    let ln_a = a.ln();

    let nll = ln_gamma(alpha) - ln_gamma(alpha + 0.5) + 0.5 * (std::f64::consts::PI / nu).ln() - alpha * ln_omega
        + (alpha + 0.5) * ln_a;

    let half_up = alpha + 0.5;
    let dl_domega = -alpha / big_omega + half_up / a;
    let dl_dd = half_up * 2.0 * nu * d / a;
    let dl_dnu_direct = -0.5 / nu + half_up * d * d / a;
    let dl_dalpha_direct = digamma(alpha) - digamma(alpha + 0.5) - ln_omega + ln_a;

    // Ω depends on (β, ν, z); d depends on (γ, z); z on (α, β).
    let dl_dz = dl_domega * 2.0 * beta * omega * nu - dl_dd * tau;
    let g_gamma = -dl_dd;
    let g_nu = dl_dnu_direct + dl_domega * 2.0 * beta * omega * z;
    let g_alpha = dl_dalpha_direct - dl_dz * z / am1;
    let g_beta = dl_domega * 2.0 * k + dl_dz / am1;
    (nll, [g_gamma, g_nu, g_alpha, g_beta])
}

/// Φ = 2ν + α + 1/β.
pub fn confidence(p: &EvidentialParams) -> f64 {
    2.0 * p.nu + p.alpha + 1.0 / p.beta
}

/// ρ_q(y − γ) · Φ: evidence is penalized in proportion to the tilted error.
pub fn evidence_regularizer(p: &EvidentialParams, y: f64, q: QuantileLevel) -> f64 {
    q.rho(y - p.gamma) * confidence(p)
}

pub(crate) fn regularizer_and_grad(p: &EvidentialParams, y: f64, q: QuantileLevel) -> (f64, [f64; 4]) {
    let eps = y - p.gamma;
    let rho = q.rho(eps);
    let phi = confidence(p);
    let g_gamma = if rho == 0.0 { 0.0 } else { -q.rho_slope(eps) * phi };
    (rho * phi, [g_gamma, 2.0 * rho, rho, -rho / (p.beta * p.beta)])
}

/// Per-sample training loss: NLL + λ · regularizer.
pub fn total_loss(p: &EvidentialParams, y: f64, q: QuantileLevel, lambda: f64) -> Result<f64> {
    ensure_finite("target", y)?;
    ensure_finite("lambda", lambda)?;
    if lambda < 0.0 {
        return Err(Error::Domain { what: "lambda", value: lambda, reason: "must be >= 0" });
    }
    let value = nll_and_grad(p, y, q).0 + lambda * evidence_regularizer(p, y, q);
    ensure_finite("total loss", value)
}

pub fn decompose_uncertainty(p: &EvidentialParams) -> UncertaintyEstimate {
    let aleatoric = p.beta / (p.alpha - 1.0);
    UncertaintyEstimate { prediction: p.gamma, aleatoric, epistemic: aleatoric / p.nu, confidence: confidence(p) }
}
