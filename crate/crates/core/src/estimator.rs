//! The GMLM estimator.
//!
//! Given samples from the treated and untreated outcome distributions and a
//! monotone transformation model `Y(1) = G(Y(0); θ)`, the estimator minimises
//!
//! ```text
//! ‖ ∫_{p_lo}^{p_hi} (Q̂₁(u) − G(Q̂₀(u); θ)) P_R(u) du ‖²_W
//! ```
//!
//! For the location and location-scale families the residual is linear in
//! `θ` and the minimiser is a GLS regression of the treated L-moments on
//! `[∫P_R, ∫Q̂₀P_R]`. Other families go through Gauss-Newton.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GmlmError, Result};
use crate::inference::WeightMatrix;
use crate::linalg::guarded_spd_inverse;
use crate::quantile::{build_basis, integrate_step_function, Sample, TrimRange};

/// Gradient-norm convergence threshold for Gauss-Newton.
pub const GRADIENT_TOL: f64 = 1e-10;
/// Step-norm convergence threshold, relative to `1 + ‖θ‖`.
pub const STEP_TOL: f64 = 1e-12;
pub const MAX_ITERATIONS: usize = 200;
const MAX_HALVINGS: usize = 60;

/// A transformation `y ↦ G(y; θ)` that is strictly increasing in `y`.
pub trait TransformModel: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, y: f64, theta: &[f64]) -> f64;

    /// `∂G/∂y`.
    fn d_outcome(&self, y: f64, theta: &[f64]) -> f64;

    /// `∇_θ G`, written into `out` (length [`TransformModel::dim`]).
    fn grad_theta(&self, y: f64, theta: &[f64], out: &mut [f64]);

    /// The parameter value with `G(y; θ̃) = y`.
    fn null_parameter(&self) -> Vec<f64>;

    /// Parameters outside the admissible set are never accepted by the
    /// line search.
    fn is_admissible(&self, _theta: &[f64]) -> bool {
        true
    }

    fn name(&self) -> &str {
        "custom"
    }
}

/// `G(y; α, σ) = α + σ y`, `σ > 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LocationScale;

impl TransformModel for LocationScale {
    fn dim(&self) -> usize {
        2
    }
    fn eval(&self, y: f64, t: &[f64]) -> f64 {
        t[0] + t[1] * y
    }
    fn d_outcome(&self, _y: f64, t: &[f64]) -> f64 {
        t[1]
    }
    fn grad_theta(&self, y: f64, _t: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        out[1] = y;
    }
    fn null_parameter(&self) -> Vec<f64> {
        vec![0.0, 1.0]
    }
    fn is_admissible(&self, t: &[f64]) -> bool {
        t[1] > 0.0
    }
    fn name(&self) -> &str {
        "location_scale"
    }
}

/// `G(y; α) = α + y`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Location;

impl TransformModel for Location {
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, y: f64, t: &[f64]) -> f64 {
        t[0] + y
    }
    fn d_outcome(&self, _y: f64, _t: &[f64]) -> f64 {
        1.0
    }
    fn grad_theta(&self, _y: f64, _t: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }
    fn null_parameter(&self) -> Vec<f64> {
        vec![0.0]
    }
    fn name(&self) -> &str {
        "location_only"
    }
}

/// `G(y; θ) = e^θ y`, the level form of a location shift in logs.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogLocation;

impl TransformModel for LogLocation {
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, y: f64, t: &[f64]) -> f64 {
        t[0].exp() * y
    }
    fn d_outcome(&self, _y: f64, t: &[f64]) -> f64 {
        t[0].exp()
    }
    fn grad_theta(&self, y: f64, t: &[f64], out: &mut [f64]) {
        out[0] = t[0].exp() * y;
    }
    fn null_parameter(&self) -> Vec<f64> {
        vec![0.0]
    }
    fn name(&self) -> &str {
        "log_location"
    }
}

/// The model family used in a fit.
#[derive(Clone)]
pub enum ModelSpec {
    LocationScale,
    LocationOnly,
    Custom(Arc<dyn TransformModel>),
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ModelSpec({})", self.as_model().name())
    }
}

impl ModelSpec {
    pub fn custom(model: impl TransformModel + 'static) -> Self {
        ModelSpec::Custom(Arc::new(model))
    }

    pub fn as_model(&self) -> &dyn TransformModel {
        match self {
            ModelSpec::LocationScale => &LocationScale,
            ModelSpec::LocationOnly => &Location,
            ModelSpec::Custom(m) => m.as_ref(),
        }
    }

    pub fn dim(&self) -> usize {
        self.as_model().dim()
    }

    pub fn null_parameter(&self) -> Vec<f64> {
        self.as_model().null_parameter()
    }

    /// Checks `G(y; θ̃) = y` and strict monotonicity on probe points.
    pub fn validate(&self, probes: &[f64]) -> Result<()> {
        let m = self.as_model();
        let null = m.null_parameter();
        if null.len() != m.dim() {
            return Err(GmlmError::invalid("null parameter has the wrong dimension"));
        }
        for &y in probes {
            let g = m.eval(y, &null);
            if (g - y).abs() > 1e-10 * (1.0 + y.abs()) {
                return Err(GmlmError::invalid(format!(
                    "G(y; null) = {g} differs from y = {y}"
                )));
            }
        }
        let mut sorted = probes.to_vec();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        for w in sorted.windows(2) {
            if m.eval(w[1], &null) <= m.eval(w[0], &null) {
                return Err(GmlmError::invalid("G is not strictly increasing in y"));
            }
        }
        Ok(())
    }

    fn is_linear(&self) -> bool {
        matches!(self, ModelSpec::LocationScale | ModelSpec::LocationOnly)
    }
}

/// One GMLM estimation problem.
#[derive(Debug, Clone)]
pub struct GmlmProblem {
    pub treated: Sample,
    pub control: Sample,
    pub order: usize,
    pub trim: TrimRange,
    pub weight: WeightMatrix,
}

impl GmlmProblem {
    pub fn new(
        treated: Sample,
        control: Sample,
        order: usize,
        trim: TrimRange,
        weight: WeightMatrix,
    ) -> Result<Self> {
        if weight.dim() != order {
            return Err(GmlmError::invalid(format!(
                "weight matrix is {0}x{0} but the basis order is {order}",
                weight.dim()
            )));
        }
        build_basis(order)?;
        Ok(Self {
            treated,
            control,
            order,
            trim,
            weight,
        })
    }

    /// Identity-weighted problem.
    pub fn identity(treated: Sample, control: Sample, order: usize, trim: TrimRange) -> Result<Self> {
        Self::new(treated, control, order, trim, WeightMatrix::identity(order))
    }

    pub fn with_weight(&self, weight: WeightMatrix) -> Result<Self> {
        Self::new(
            self.treated.clone(),
            self.control.clone(),
            self.order,
            self.trim,
            weight,
        )
    }

    /// Total sample size `N = N₁ + N₀`.
    pub fn n_total(&self) -> usize {
        self.treated.len() + self.control.len()
    }

    /// `∫ Q̂₁ P_R` over the trim range.
    pub fn treated_integrals(&self) -> DVector<f64> {
        Arm::unit(&self.treated).integrals(self.order, self.trim)
    }

    /// `∫ Q̂₀ P_R` over the trim range.
    pub fn control_integrals(&self) -> DVector<f64> {
        Arm::unit(&self.control).integrals(self.order, self.trim)
    }

    /// `∫ G(Q̂₀(u); θ) P_R(u) du`.
    pub fn model_integrals(&self, model: &dyn TransformModel, theta: &[f64]) -> DVector<f64> {
        Arm::unit(&self.control).model_integrals(model, theta, self.order, self.trim)
    }

    /// Residual Jacobian `-∫ ∇_θ G(Q̂₀(u); θ) P_R(u) du` (R × p).
    pub fn model_jacobian(&self, model: &dyn TransformModel, theta: &[f64]) -> DMatrix<f64> {
        Arm::unit(&self.control).model_jacobian(model, theta, self.order, self.trim)
    }

    fn arms(&self) -> (Arm<'_>, Arm<'_>) {
        (Arm::unit(&self.treated), Arm::unit(&self.control))
    }
}

/// A quantile step function: sorted `values` with cumulative probability
/// `ends` (unit weights for a plain sample, bootstrap weights otherwise).
pub(crate) struct Arm<'a> {
    pub ends: Vec<f64>,
    pub values: &'a [f64],
}

impl<'a> Arm<'a> {
    pub fn unit(s: &'a Sample) -> Self {
        let n = s.len();
        Arm {
            ends: (1..=n).map(|k| k as f64 / n as f64).collect(),
            values: s.values(),
        }
    }

    /// Cumulative ends from probability weights on the sorted values.
    pub fn weighted(s: &'a Sample, weights: &[f64]) -> Self {
        let mut acc = 0.0;
        let mut ends: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w;
                acc.min(1.0)
            })
            .collect();
        if let Some(last) = ends.last_mut() {
            *last = 1.0;
        }
        Arm {
            ends,
            values: s.values(),
        }
    }

    pub fn integrals(&self, order: usize, trim: TrimRange) -> DVector<f64> {
        let mut out = vec![0.0; order];
        integrate_step_function(&self.ends, self.values, trim, &mut out);
        DVector::from_vec(out)
    }

    pub fn model_integrals(
        &self,
        model: &dyn TransformModel,
        theta: &[f64],
        order: usize,
        trim: TrimRange,
    ) -> DVector<f64> {
        let vals: Vec<f64> = self.values.iter().map(|&y| model.eval(y, theta)).collect();
        let mut out = vec![0.0; order];
        integrate_step_function(&self.ends, &vals, trim, &mut out);
        DVector::from_vec(out)
    }

    pub fn model_jacobian(
        &self,
        model: &dyn TransformModel,
        theta: &[f64],
        order: usize,
        trim: TrimRange,
    ) -> DMatrix<f64> {
        let p = model.dim();
        let n = self.values.len();
        let mut grads = vec![vec![0.0; n]; p];
        let mut g = vec![0.0; p];
        for (k, &y) in self.values.iter().enumerate() {
            model.grad_theta(y, theta, &mut g);
            for j in 0..p {
                grads[j][k] = g[j];
            }
        }
        let mut jac = DMatrix::zeros(order, p);
        let mut col = vec![0.0; order];
        for (j, vals) in grads.iter().enumerate() {
            integrate_step_function(&self.ends, vals, trim, &mut col);
            for r in 0..order {
                jac[(r, j)] = -col[r];
            }
        }
        jac
    }
}

/// Result of a GMLM fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmlmFit {
    pub theta: Vec<f64>,
    /// `∫(Q̂₁ − G(Q̂₀; θ̂)) P_R` at the optimum.
    pub residual: Vec<f64>,
    /// `residual' W residual`.
    pub objective: f64,
    /// `N · objective`.
    pub j_stat: f64,
    pub df: usize,
    /// Residual Jacobian at `θ̂` (R × p).
    pub jacobian: DMatrix<f64>,
    /// Estimator covariance (already divided by `N`), when computed.
    pub covariance: Option<DMatrix<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub n_total: usize,
}

impl GmlmFit {
    pub fn std_errors(&self) -> Option<Vec<f64>> {
        self.covariance
            .as_ref()
            .map(|c| (0..c.nrows()).map(|i| c[(i, i)].max(0.0).sqrt()).collect())
    }
}

/// `(y, X)` of the closed-form GLS fit: `y = ∫Q̂₁P_R`, `X = [∫P_R, ∫Q̂₀P_R]`
/// for location-scale; `y = ∫(Q̂₁ − Q̂₀)P_R`, `X = ∫P_R` for location-only.
pub fn design_vectors(
    problem: &GmlmProblem,
    model: &ModelSpec,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (t, c) = problem.arms();
    linear_design(&t, &c, problem.order, problem.trim, model)
}

fn linear_design(
    treated: &Arm,
    control: &Arm,
    order: usize,
    trim: TrimRange,
    model: &ModelSpec,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let basis = build_basis(order)?;
    let constant = basis.trim_integrals(trim);
    let mut y = treated.integrals(order, trim);
    let q0 = control.integrals(order, trim);
    let x = match model {
        ModelSpec::LocationScale => {
            DMatrix::from_fn(order, 2, |r, c| if c == 0 { constant[r] } else { q0[r] })
        }
        ModelSpec::LocationOnly => {
            y -= q0;
            DMatrix::from_column_slice(order, 1, &constant)
        }
        ModelSpec::Custom(_) => {
            return Err(GmlmError::invalid(
                "design vectors exist only for the location and location-scale families",
            ))
        }
    };
    Ok((y, x))
}

/// Everything a fit needs besides the two arms.
pub(crate) struct FitSetup<'a> {
    pub order: usize,
    pub trim: TrimRange,
    pub weight: &'a WeightMatrix,
    pub n_total: usize,
}

fn make_fit(
    setup: &FitSetup,
    theta: Vec<f64>,
    residual: DVector<f64>,
    jacobian: DMatrix<f64>,
    converged: bool,
    iterations: usize,
) -> GmlmFit {
    let w = setup.weight.matrix();
    let objective = residual.dot(&(w * &residual)).max(0.0);
    GmlmFit {
        df: setup.order.saturating_sub(theta.len()),
        theta,
        residual: residual.iter().cloned().collect(),
        objective,
        j_stat: setup.n_total as f64 * objective,
        jacobian,
        covariance: None,
        converged,
        iterations,
        n_total: setup.n_total,
    }
}

impl GmlmProblem {
    fn setup(&self) -> FitSetup<'_> {
        FitSetup {
            order: self.order,
            trim: self.trim,
            weight: &self.weight,
            n_total: self.n_total(),
        }
    }
}

/// Closed-form GLS fit of the location-scale family.
///
/// Fails with [`GmlmError::DegenerateDesign`] when the control quantile
/// function is constant over the trim range (unless the treated one matches
/// it exactly, in which case the null parameter is returned) and with
/// [`GmlmError::NonMonotoneFit`] when `σ̂ ≤ 0`.
pub fn fit_location_scale(problem: &GmlmProblem) -> Result<GmlmFit> {
    fit(problem, &ModelSpec::LocationScale)
}

/// Closed-form fit of the location-only family.
pub fn fit_location(problem: &GmlmProblem) -> Result<GmlmFit> {
    fit(problem, &ModelSpec::LocationOnly)
}

/// Fits the location or location-scale family in closed form and any other
/// family by Gauss-Newton.
pub fn fit(problem: &GmlmProblem, model: &ModelSpec) -> Result<GmlmFit> {
    let (t, c) = problem.arms();
    fit_arms(&t, &c, &problem.setup(), model, None)
}

pub(crate) fn fit_arms(
    treated: &Arm,
    control: &Arm,
    setup: &FitSetup,
    model: &ModelSpec,
    init: Option<&[f64]>,
) -> Result<GmlmFit> {
    if model.is_linear() {
        fit_linear(treated, control, setup, model)
    } else {
        gauss_newton(treated, control, setup, model, init)
    }
}

fn fit_linear(treated: &Arm, control: &Arm, setup: &FitSetup, model: &ModelSpec) -> Result<GmlmFit> {
    let (y, x) = linear_design(treated, control, setup.order, setup.trim, model)?;
    let jacobian = -&x;
    let null = DVector::from_vec(model.null_parameter());
    let null_resid = &y - &x * &null;
    if null_resid.iter().all(|v| *v == 0.0) || setup.weight.rank() == 0 {
        // Flat objective: anchor at the null parameter.
        return Ok(make_fit(
            setup,
            null.iter().cloned().collect(),
            null_resid,
            jacobian,
            true,
            0,
        ));
    }
    let w = setup.weight.matrix();
    let xtw = x.transpose() * w;
    let normal = &xtw * &x;
    let inv = guarded_spd_inverse(&normal, "X'WX")?;
    let theta = inv * (&xtw * &y);
    if matches!(model, ModelSpec::LocationScale) && !(theta[1] > 0.0) {
        return Err(GmlmError::NonMonotoneFit { sigma: theta[1] });
    }
    let residual = &y - &x * &theta;
    Ok(make_fit(
        setup,
        theta.iter().cloned().collect(),
        residual,
        jacobian,
        true,
        1,
    ))
}

fn objective(w: &DMatrix<f64>, r: &DVector<f64>) -> f64 {
    r.dot(&(w * r))
}

/// Gauss-Newton minimisation of the GMLM objective with step halving.
///
/// Starts from the model's null parameter unless `theta_init` is given.
/// Stops when `‖J'Wr‖ < 1e-10`, when the step is below `1e-12 (1 + ‖θ‖)`,
/// or after 200 iterations (`converged = false`).
pub fn fit_generic(
    problem: &GmlmProblem,
    model: &ModelSpec,
    theta_init: Option<&[f64]>,
) -> Result<GmlmFit> {
    let (t, c) = problem.arms();
    gauss_newton(&t, &c, &problem.setup(), model, theta_init)
}

fn gauss_newton(
    treated: &Arm,
    control: &Arm,
    setup: &FitSetup,
    model: &ModelSpec,
    theta_init: Option<&[f64]>,
) -> Result<GmlmFit> {
    let m = model.as_model();
    let p = m.dim();
    let (order, trim) = (setup.order, setup.trim);
    if order < p {
        return Err(GmlmError::invalid(format!(
            "basis order {order} below parameter dimension {p}"
        )));
    }
    let mut theta: Vec<f64> = match theta_init {
        Some(t) if t.len() == p => t.to_vec(),
        Some(t) => {
            return Err(GmlmError::invalid(format!(
                "initial parameter has length {} but the model has {p}",
                t.len()
            )))
        }
        None => m.null_parameter(),
    };
    if !m.is_admissible(&theta) {
        return Err(GmlmError::invalid("initial parameter is not admissible"));
    }
    let w = setup.weight.matrix();
    let y = treated.integrals(order, trim);
    let residual_at = |t: &[f64]| &y - control.model_integrals(m, t, order, trim);

    let mut r = residual_at(&theta);
    if r.iter().all(|v| *v == 0.0) || setup.weight.rank() == 0 {
        let jac = control.model_jacobian(m, &theta, order, trim);
        return Ok(make_fit(setup, theta, r, jac, true, 0));
    }
    let mut obj = objective(w, &r);
    let mut converged = false;
    let mut iterations = 0;
    let mut jac = control.model_jacobian(m, &theta, order, trim);

    while iterations < MAX_ITERATIONS {
        let jtw = jac.transpose() * w;
        let grad = &jtw * &r;
        if grad.norm() < GRADIENT_TOL {
            converged = true;
            break;
        }
        let normal = &jtw * &jac;
        let inv = guarded_spd_inverse(&normal, "J'WJ")?;
        let full_step = -(inv * grad);
        let theta_norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
        if full_step.norm() < STEP_TOL * (1.0 + theta_norm) {
            converged = true;
            break;
        }
        iterations += 1;

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = theta
                .iter()
                .zip(full_step.iter())
                .map(|(t, s)| t + scale * s)
                .collect();
            if m.is_admissible(&cand) {
                let rc = residual_at(&cand);
                let oc = objective(w, &rc);
                if oc.is_finite() && oc <= obj {
                    accepted = Some((cand, rc, oc));
                    break;
                }
            }
            scale *= 0.5;
        }
        match accepted {
            Some((cand, rc, oc)) => {
                let moved = cand
                    .iter()
                    .zip(&theta)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                theta = cand;
                r = rc;
                obj = oc;
                jac = control.model_jacobian(m, &theta, order, trim);
                if moved < STEP_TOL * (1.0 + theta_norm) {
                    converged = true;
                    break;
                }
            }
            None => {
                // No descent along the Gauss-Newton direction: numerically
                // stationary if the proposed step was already tiny.
                converged = full_step.norm() < 1e-8 * (1.0 + theta_norm);
                break;
            }
        }
    }
    Ok(make_fit(setup, theta, r, jac, converged, iterations))
}

/// `(N · ‖residual‖²_W, R − p)`.
///
/// Only χ²-calibrated when the fit used the optimal weighting matrix.
pub fn j_statistic(fit: &GmlmFit, n_total: usize) -> (f64, usize) {
    (n_total as f64 * fit.objective, fit.df)
}
