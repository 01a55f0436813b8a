//! Treatment-effect functionals of a location-scale fit, their delta-method
//! standard errors, and aggregation across strata.
//!
//! With `Y(d) = α + σ Y(0)` in distribution, the average effect imputes the
//! missing potential outcome in each arm:
//!
//! ```text
//! Δ = s_d (b̄_d − (b̄_d − α)/σ) + s_0 (α + (σ − 1) b̄_0),   s_a = p_a / (p_d + p_0)
//! ```
//!
//! and the relative change in dispersion is `Ψ = σ − 1`.

use log::warn;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{GmlmError, Result};
use crate::estimator::{GmlmProblem, ModelSpec};
use crate::inference::{primitive_joint_cov, two_step, BootstrapConfig, PrimitiveCovariance};
use crate::quantile::{Sample, TrimRange};
use crate::rng::tag;

fn shares(p_d: f64, p_0: f64) -> Result<(f64, f64)> {
    if !(p_d > 0.0 && p_0 > 0.0) {
        return Err(GmlmError::invalid(format!(
            "arm shares must be positive, got {p_d} and {p_0}"
        )));
    }
    Ok((p_d / (p_d + p_0), p_0 / (p_d + p_0)))
}

/// Average effect implied by a location-scale fit.
pub fn ate_from_fit(
    alpha: f64,
    sigma: f64,
    treated_mean: f64,
    control_mean: f64,
    p_d: f64,
    p_0: f64,
) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(GmlmError::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let (sd, s0) = shares(p_d, p_0)?;
    let imputed_treated = treated_mean - (treated_mean - alpha) / sigma;
    let imputed_control = alpha + (sigma - 1.0) * control_mean;
    Ok(sd * imputed_treated + s0 * imputed_control)
}

/// Gradient of [`ate_from_fit`] with respect to `(α, σ, b̄_d, b̄_0)`.
pub fn ate_gradient(
    alpha: f64,
    sigma: f64,
    treated_mean: f64,
    control_mean: f64,
    p_d: f64,
    p_0: f64,
) -> Result<[f64; 4]> {
    if !(sigma > 0.0) {
        return Err(GmlmError::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let (sd, s0) = shares(p_d, p_0)?;
    Ok([
        sd / sigma + s0,
        sd * (treated_mean - alpha) / (sigma * sigma) + s0 * control_mean,
        sd * (1.0 - 1.0 / sigma),
        s0 * (sigma - 1.0),
    ])
}

/// `Ψ = σ − 1`.
pub fn dispersion_from_fit(sigma: f64) -> f64 {
    sigma - 1.0
}

/// Gradient of [`dispersion_from_fit`] with respect to `(α, σ, b̄_d, b̄_0)`.
pub const DISPERSION_GRADIENT: [f64; 4] = [0.0, 1.0, 0.0, 0.0];

/// `sqrt(g' Σ g)`; a negative quadratic form is clamped to zero.
pub fn delta_se(gradient: &[f64], cov: &PrimitiveCovariance) -> Result<f64> {
    if gradient.len() != cov.dim() {
        return Err(GmlmError::invalid(format!(
            "gradient has {} entries but the covariance is {}x{}",
            gradient.len(),
            cov.dim(),
            cov.dim()
        )));
    }
    let g = DVector::from_column_slice(gradient);
    let var = g.dot(&(&cov.matrix * &g));
    if var < 0.0 {
        warn!("negative delta-method variance {var:e} clamped to zero");
        return Ok(0.0);
    }
    Ok(var.sqrt())
}

/// One stratum's estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumValue {
    pub stratum: String,
    pub value: f64,
    pub se: f64,
}

/// Proportion-weighted combination of per-stratum estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateEffect {
    pub value: f64,
    pub se: f64,
    pub weights: Vec<(String, f64)>,
}

/// `Σ w_u e_u` with standard error `sqrt(Σ w_u² se_u²)`.
///
/// `proportions` must name exactly the strata in `estimates` and sum to 1.
pub fn aggregate_strata(
    estimates: &[StratumValue],
    proportions: &[(String, f64)],
) -> Result<AggregateEffect> {
    if estimates.is_empty() || estimates.len() != proportions.len() {
        return Err(GmlmError::invalid("strata and proportions do not match"));
    }
    let total: f64 = proportions.iter().map(|(_, w)| w).sum();
    if (total - 1.0).abs() > 1e-9 || proportions.iter().any(|(_, w)| !(*w >= 0.0)) {
        return Err(GmlmError::invalid(format!(
            "stratum proportions must be nonnegative and sum to 1, got {total}"
        )));
    }
    let mut value = 0.0;
    let mut var = 0.0;
    let mut seen = Vec::with_capacity(estimates.len());
    for e in estimates {
        if seen.contains(&&e.stratum) {
            return Err(GmlmError::invalid(format!("stratum {} repeated", e.stratum)));
        }
        seen.push(&e.stratum);
        let w = proportions
            .iter()
            .find(|(s, _)| *s == e.stratum)
            .map(|(_, w)| *w)
            .ok_or_else(|| GmlmError::invalid(format!("no proportion for stratum {}", e.stratum)))?;
        value += w * e.value;
        var += w * w * e.se * e.se;
    }
    Ok(AggregateEffect {
        value,
        se: var.sqrt(),
        weights: proportions.to_vec(),
    })
}

/// Effect estimates for one treated-versus-control comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub delta: f64,
    pub delta_se: f64,
    pub psi: f64,
    pub psi_se: f64,
    pub alpha: f64,
    pub alpha_se: f64,
    pub sigma: f64,
    pub sigma_se: f64,
    pub j_stat: f64,
    pub j_pvalue: f64,
    pub treated_mean: f64,
    pub control_mean: f64,
    pub n_treated: usize,
    pub n_control: usize,
    pub r_used: usize,
    pub trim_used: TrimRange,
}

/// Two-step location-scale fit followed by the average-effect and
/// dispersion functionals with bootstrap delta-method standard errors.
pub fn estimate_effects(
    treated: &Sample,
    control: &Sample,
    order: usize,
    trim: TrimRange,
    cfg: &BootstrapConfig,
) -> Result<EffectEstimate> {
    let model = ModelSpec::LocationScale;
    let two = two_step(treated, control, &model, order, trim, cfg, None)?;
    let problem = GmlmProblem::new(
        treated.clone(),
        control.clone(),
        order,
        trim,
        two.weight.weight.clone(),
    )?;
    let (alpha, sigma) = (two.fit.theta[0], two.fit.theta[1]);
    let cov = primitive_joint_cov(
        &problem,
        &model,
        &two.fit.theta,
        &cfg.derive(&[tag::PRIMITIVE_BOOTSTRAP]),
    )?;
    let (b1, b0) = (treated.mean(), control.mean());
    let (n1, n0) = (treated.len() as f64, control.len() as f64);
    let grad = ate_gradient(alpha, sigma, b1, b0, n1, n0)?;
    Ok(EffectEstimate {
        delta: ate_from_fit(alpha, sigma, b1, b0, n1, n0)?,
        delta_se: delta_se(&grad, &cov)?,
        psi: dispersion_from_fit(sigma),
        psi_se: delta_se(&DISPERSION_GRADIENT, &cov)?,
        alpha,
        alpha_se: cov.matrix[(0, 0)].sqrt(),
        sigma,
        sigma_se: cov.matrix[(1, 1)].sqrt(),
        j_stat: two.fit.j_stat,
        j_pvalue: two.j_pvalue,
        treated_mean: b1,
        control_mean: b0,
        n_treated: treated.len(),
        n_control: control.len(),
        r_used: order,
        trim_used: trim,
    })
}
