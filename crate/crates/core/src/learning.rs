//! Learning-versus-price decomposition of a demand response.
//!
//! Ride quality `A` is log-normal under the rider's prior. Demand for the
//! outside option, bundles and single rides solves the linear system
//! `M x = φ/λ`, where `M` is the Gram matrix of `(1, γA^φ, A)`. A change in
//! the bundle price moves demand through the second row only; what the
//! observed effect does not explain is attributed to learning.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{GmlmError, Result};

const MAX_CONDITION: f64 = 1e10;

/// Log-normal prior over quality: `log A ~ N(mu, sigma2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityPrior {
    pub mu: f64,
    pub sigma2: f64,
}

impl QualityPrior {
    pub fn new(mu: f64, sigma2: f64) -> Result<Self> {
        let p = Self { mu, sigma2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() || !self.sigma2.is_finite() || self.sigma2 < 0.0 {
            return Err(GmlmError::invalid(format!(
                "prior needs finite mu and sigma2 ≥ 0, got ({}, {})",
                self.mu, self.sigma2
            )));
        }
        Ok(())
    }
}

/// Bundle technology `γ A^φ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BundleTech {
    pub gamma: f64,
    pub phi: f64,
}

impl BundleTech {
    pub fn new(gamma: f64, phi: f64) -> Result<Self> {
        let t = Self { gamma, phi };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) || !(self.phi > 0.0 && self.phi <= 1.0) {
            return Err(GmlmError::invalid(format!(
                "bundle technology needs gamma > 0 and phi in (0, 1], got ({}, {})",
                self.gamma, self.phi
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub prior: QualityPrior,
    pub tech: BundleTech,
    pub lambda: f64,
    /// Change in the bundle price; negative for a discount.
    pub price_change: f64,
}

impl CalibrationParams {
    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        self.tech.validate()?;
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(GmlmError::invalid(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !self.price_change.is_finite() {
            return Err(GmlmError::invalid("price change must be finite"));
        }
        Ok(())
    }
}

/// `E[A^s] = exp(sμ + s²σ²/2)`.
pub fn lognormal_moment(prior: &QualityPrior, s: f64) -> f64 {
    (s * prior.mu + 0.5 * s * s * prior.sigma2).exp()
}

pub fn demand_matrix(prior: &QualityPrior, tech: &BundleTech) -> Matrix3<f64> {
    let m = |s: f64| lognormal_moment(prior, s);
    let (g, phi) = (tech.gamma, tech.phi);
    let a = g * m(phi);
    let b = m(1.0);
    let c = g * g * m(2.0 * phi);
    let d = g * m(1.0 + phi);
    let e = m(2.0);
    Matrix3::new(1.0, a, b, a, c, d, b, d, e)
}

/// Response of (outside option, bundles, single rides) to the bundle price
/// change alone.
pub fn direct_price_effect(params: &CalibrationParams) -> Result<Vector3<f64>> {
    params.validate()?;
    let m = demand_matrix(&params.prior, &params.tech);
    let eig = m.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 0.0 && hi / lo < MAX_CONDITION) {
        return Err(GmlmError::DegeneratePrior(format!(
            "demand matrix is singular or ill-conditioned (eigenvalues {lo:.3e} .. {hi:.3e})"
        )));
    }
    let inv = m
        .cholesky()
        .ok_or_else(|| GmlmError::DegeneratePrior("demand matrix is not positive definite".into()))?
        .inverse();
    Ok(inv.column(1) * (-params.price_change / params.lambda))
}

/// Fraction of the total effect not explained by the direct price effect.
pub fn learning_share(total_effect: f64, direct_effect: f64) -> Result<f64> {
    if total_effect == 0.0 || !total_effect.is_finite() {
        return Err(GmlmError::UndefinedShare);
    }
    Ok(1.0 - direct_effect / total_effect)
}

/// Matches `γA^φ` to a log-normal bundle quality with the given log moments.
pub fn calibrate_bundle_tech(
    logmean_a: f64,
    logvar_a: f64,
    logmean_bundle: f64,
    logvar_bundle: f64,
) -> Result<BundleTech> {
    if !(logvar_a > 0.0) || !(logvar_bundle >= 0.0) {
        return Err(GmlmError::invalid(format!(
            "log variances must be positive, got {logvar_a} and {logvar_bundle}"
        )));
    }
    let phi = (logvar_bundle / logvar_a).sqrt();
    Ok(BundleTech {
        gamma: (logmean_bundle - phi * logmean_a).exp(),
        phi,
    })
}

/// Curvature at which losing the target costs the present value of two
/// periods of income.
pub fn backout_lambda(monthly_income: f64, per_period_rate: f64, target: f64) -> Result<f64> {
    if !(target > 0.0) {
        return Err(GmlmError::invalid(format!("target must be > 0, got {target}")));
    }
    if !(per_period_rate > -1.0) {
        return Err(GmlmError::invalid(format!("rate must exceed -1, got {per_period_rate}")));
    }
    Ok(monthly_income * (1.0 + 1.0 / (1.0 + per_period_rate)) / target)
}

/// Geometric conversion of an annual rate.
pub fn per_period_rate(annual_rate: f64, periods_per_year: f64) -> f64 {
    (1.0 + annual_rate).powf(1.0 / periods_per_year) - 1.0
}

/// One individual: either `lambda` directly or income and target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecompositionUnit {
    pub id: String,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub income: Option<f64>,
    #[serde(default)]
    pub target: Option<f64>,
}

fn default_annual_rate() -> f64 {
    0.04
}

fn default_periods() -> f64 {
    26.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecompositionConfig {
    pub prior: QualityPrior,
    pub tech: BundleTech,
    pub price_change: f64,
    /// Estimated total effect on bundle demand.
    pub total_effect: f64,
    #[serde(default = "default_annual_rate")]
    pub annual_rate: f64,
    #[serde(default = "default_periods")]
    pub periods_per_year: f64,
    pub units: Vec<DecompositionUnit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitShare {
    pub id: String,
    pub lambda: f64,
    /// Direct effect on (outside option, bundles, single rides).
    pub direct: [f64; 3],
    pub learning_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub units: Vec<UnitShare>,
    pub mean_direct_bundles: f64,
    pub learning_share: f64,
}

pub fn decompose(cfg: &DecompositionConfig) -> Result<DecompositionReport> {
    if cfg.units.is_empty() {
        return Err(GmlmError::invalid("no units"));
    }
    let rate = per_period_rate(cfg.annual_rate, cfg.periods_per_year);
    let mut units = Vec::with_capacity(cfg.units.len());
    for u in &cfg.units {
        let lambda = match (u.lambda, u.income, u.target) {
            (Some(l), None, None) => l,
            (None, Some(w), Some(t)) => backout_lambda(w, rate, t)?,
            _ => {
                return Err(GmlmError::invalid(format!(
                    "unit '{}' needs either lambda or both income and target",
                    u.id
                )))
            }
        };
        let direct = direct_price_effect(&CalibrationParams {
            prior: cfg.prior,
            tech: cfg.tech,
            lambda,
            price_change: cfg.price_change,
        })?;
        units.push(UnitShare {
            id: u.id.clone(),
            lambda,
            direct: [direct[0], direct[1], direct[2]],
            learning_share: learning_share(cfg.total_effect, direct[1])?,
        });
    }
    let mean = units.iter().map(|u| u.direct[1]).sum::<f64>() / units.len() as f64;
    Ok(DecompositionReport {
        learning_share: learning_share(cfg.total_effect, mean)?,
        mean_direct_bundles: mean,
        units,
    })
}
