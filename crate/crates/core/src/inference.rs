//! Weighted-bootstrap inference: the optimal weighting matrix, sandwich
//! covariance, J-test p-values and the joint covariance of the primitives
//! that feed delta-method functionals.
//!
//! Bootstrap weights are normalised standard exponentials (the Bayesian
//! bootstrap). Replicate `b` of arm `a` always draws from the stream
//! `(seed, tag, b, a)`, so results do not depend on scheduling.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::gamma_ur;

use crate::error::{GmlmError, Result};
use crate::estimator::{fit_arms, Arm, FitSetup, GmlmFit, GmlmProblem, ModelSpec};
use crate::linalg::{clamp_psd, guarded_spd_inverse, psd_pinv, sample_covariance};
use crate::quantile::{build_basis, Sample, TrimRange};
use crate::rng::{self, tag};

const SYMMETRY_TOL: f64 = 1e-12;
const NEGATIVE_EIGEN_TOL: f64 = 1e-10;
/// Fraction of failed replicate fits above which inference is abandoned.
pub const MAX_FAILURE_RATE: f64 = 0.05;
pub const MIN_REPLICATES: usize = 50;
const TREATED_ARM: u64 = 1;
const CONTROL_ARM: u64 = 0;

/// A symmetric positive semidefinite weighting matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    matrix: DMatrix<f64>,
    rank: usize,
}

impl WeightMatrix {
    /// Validates symmetry and clamps eigenvalues in `[-1e-10, 0)` to zero.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(GmlmError::invalid("weight matrix must be square"));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(GmlmError::invalid("weight matrix has non-finite entries"));
        }
        let scale = matrix.amax().max(1.0);
        if (&matrix - matrix.transpose()).amax() > SYMMETRY_TOL * scale {
            return Err(GmlmError::invalid("weight matrix is not symmetric"));
        }
        let n = matrix.nrows();
        if n == 0 {
            return Ok(Self { matrix, rank: 0 });
        }
        let eig = nalgebra::SymmetricEigen::new(crate::linalg::symmetrize(&matrix));
        let min = eig.eigenvalues.min();
        if min < -NEGATIVE_EIGEN_TOL * scale {
            return Err(GmlmError::invalid(format!(
                "weight matrix has a negative eigenvalue {min:e}"
            )));
        }
        let max = eig.eigenvalues.max();
        let rank = eig
            .eigenvalues
            .iter()
            .filter(|&&l| l > 1e-12 * max && l > 0.0)
            .count();
        Ok(Self {
            matrix: clamp_psd(&matrix),
            rank,
        })
    }

    pub fn identity(order: usize) -> Self {
        Self {
            matrix: DMatrix::identity(order, order),
            rank: order,
        }
    }

    pub fn zeros(order: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(order, order),
            rank: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

/// Weighted-bootstrap settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 500,
            seed: rng::DEFAULT_SEED,
        }
    }
}

impl BootstrapConfig {
    pub fn new(replicates: usize, seed: u64) -> Self {
        Self { replicates, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < MIN_REPLICATES {
            return Err(GmlmError::invalid(format!(
                "at least {MIN_REPLICATES} bootstrap replicates are needed, got {}",
                self.replicates
            )));
        }
        if self.replicates < 200 {
            warn!(
                "{} bootstrap replicates: covariance estimates may be noisy",
                self.replicates
            );
        }
        Ok(())
    }

    /// Same replicate count, seed mixed with `tags`.
    pub fn derive(&self, tags: &[u64]) -> Self {
        Self {
            replicates: self.replicates,
            seed: rng::derive_key(self.seed, tags),
        }
    }
}

/// The optimal weight together with the bootstrap moment covariance it
/// inverts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimalWeight {
    pub weight: WeightMatrix,
    /// Covariance `V` of `√N ∫(Q̃₁ − Q̂₁ − s(Q̃₀ − Q̂₀)) P_R`.
    pub moment_covariance: DMatrix<f64>,
    pub rank: usize,
}

impl OptimalWeight {
    pub fn from_covariance(v: DMatrix<f64>) -> Self {
        let v = clamp_psd(&v);
        let (pinv, rank) = psd_pinv(&v);
        let weight = WeightMatrix {
            matrix: crate::linalg::symmetrize(&pinv),
            rank,
        };
        Self {
            weight,
            moment_covariance: v,
            rank,
        }
    }

    /// The optimal weight for the first `order` moments only.
    pub fn leading(&self, order: usize) -> Self {
        let v = self.moment_covariance.view((0, 0), (order, order)).into_owned();
        Self::from_covariance(v)
    }
}

/// Joint bootstrap covariance of `(θ̂, treated mean, control mean)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrimitiveCovariance {
    pub matrix: DMatrix<f64>,
    pub replicates: usize,
    pub failures: usize,
}

impl PrimitiveCovariance {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// `inf{x : Σ w_i 1{y_i ≤ x} ≥ u}` over the sample values.
pub fn reweighted_quantile(s: &Sample, weights: &[f64], u: f64) -> Result<f64> {
    if weights.len() != s.len() {
        return Err(GmlmError::invalid(format!(
            "{} weights for a sample of size {}",
            weights.len(),
            s.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(GmlmError::invalid("bootstrap weights must be nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(GmlmError::invalid(format!(
            "bootstrap weights sum to {total}, not 1"
        )));
    }
    if !(0.0..=1.0).contains(&u) {
        return Err(GmlmError::invalid(format!("probability {u} outside [0, 1]")));
    }
    let values = s.values();
    let mut acc = 0.0;
    let mut last = values[0];
    for (&w, &y) in weights.iter().zip(values) {
        if w > 0.0 {
            acc += w;
            last = y;
            if acc >= u {
                return Ok(y);
            }
        }
    }
    // Rounding can leave the cumulative weight just short of 1.
    Ok(last)
}

/// `n` normalised standard-exponential weights.
pub fn draw_bootstrap_weights<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = z.iter().sum();
    for v in &mut z {
        *v /= total;
    }
    z
}

fn replicate_weights(n: usize, seed: u64, loop_tag: u64, b: usize, arm: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, &[loop_tag, b as u64, arm]);
    draw_bootstrap_weights(n, &mut rng)
}

/// How the control arm enters the moment discrepancy.
#[derive(Clone)]
pub enum FirstStep {
    /// `s · Q̂₀`: `s = σ` for location-scale, `1` for location-only.
    Scale(f64),
    /// `G(Q̂₀; θ₁)` for a first-step estimate `θ₁`.
    Model(ModelSpec, Vec<f64>),
}

impl FirstStep {
    fn control_values(&self, control: &Sample) -> Vec<f64> {
        match self {
            FirstStep::Scale(s) => control.values().iter().map(|y| s * y).collect(),
            FirstStep::Model(m, theta) => control
                .values()
                .iter()
                .map(|&y| m.as_model().eval(y, theta))
                .collect(),
        }
    }
}

/// Bootstrap draws `v_b`, one per replicate.
pub(crate) fn moment_draws(
    treated: &Sample,
    control: &Sample,
    first_step: &FirstStep,
    order: usize,
    trim: TrimRange,
    cfg: &BootstrapConfig,
) -> Result<Vec<DVector<f64>>> {
    build_basis(order)?;
    cfg.validate()?;
    let n_total = (treated.len() + control.len()) as f64;
    let root_n = n_total.sqrt();
    let g0 = first_step.control_values(control);
    let g0 = Sample::from_sorted_unchecked(g0);
    let base1 = Arm::unit(treated).integrals(order, trim);
    let base0 = Arm::unit(&g0).integrals(order, trim);
    let draws = (0..cfg.replicates)
        .into_par_iter()
        .map(|b| {
            let w1 = replicate_weights(treated.len(), cfg.seed, tag::WEIGHT_BOOTSTRAP, b, TREATED_ARM);
            let w0 = replicate_weights(control.len(), cfg.seed, tag::WEIGHT_BOOTSTRAP, b, CONTROL_ARM);
            let d1 = Arm::weighted(treated, &w1).integrals(order, trim) - &base1;
            let d0 = Arm::weighted(&g0, &w0).integrals(order, trim) - &base0;
            (d1 - d0) * root_n
        })
        .collect();
    Ok(draws)
}

/// The optimal weighting matrix: the pseudoinverse of the bootstrap
/// covariance of
/// `√N ∫(Q̃₁ − Q̂₁)P_R − s √N ∫(Q̃₀ − Q̂₀)P_R`
/// with independent weights per arm.
pub fn optimal_weight_matrix(
    treated: &Sample,
    control: &Sample,
    first_step_scale: f64,
    order: usize,
    trim: TrimRange,
    cfg: &BootstrapConfig,
) -> Result<OptimalWeight> {
    if !first_step_scale.is_finite() {
        return Err(GmlmError::invalid("first-step scale must be finite"));
    }
    optimal_weight_with(treated, control, &FirstStep::Scale(first_step_scale), order, trim, cfg)
}

/// [`optimal_weight_matrix`] with a general first step.
pub fn optimal_weight_with(
    treated: &Sample,
    control: &Sample,
    first_step: &FirstStep,
    order: usize,
    trim: TrimRange,
    cfg: &BootstrapConfig,
) -> Result<OptimalWeight> {
    let draws = moment_draws(treated, control, first_step, order, trim, cfg)?;
    let v = sample_covariance(&draws);
    let ow = OptimalWeight::from_covariance(v);
    if ow.rank < order {
        warn!("moment covariance has rank {} of {order}", ow.rank);
    }
    Ok(ow)
}

/// Sandwich covariance `(J'WJ)⁻¹ J'WVWJ (J'WJ)⁻¹ / N`.
pub fn theta_covariance(
    fit: &GmlmFit,
    weight: &WeightMatrix,
    moment_covariance: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let p = fit.theta.len();
    let r = fit.jacobian.nrows();
    if weight.dim() != r || moment_covariance.nrows() != r || moment_covariance.ncols() != r {
        return Err(GmlmError::invalid("covariance dimensions do not match the fit"));
    }
    if moment_covariance.iter().all(|v| *v == 0.0) {
        return Ok(DMatrix::zeros(p, p));
    }
    let j = &fit.jacobian;
    let wj = weight.matrix() * j;
    let bread = guarded_spd_inverse(&(j.transpose() * &wj), "J'WJ")?;
    let meat = wj.transpose() * moment_covariance * &wj;
    let cov = &bread * meat * &bread / fit.n_total as f64;
    Ok(clamp_psd(&cov))
}

/// Upper-tail probability of `χ²(df)` at `j`.
pub fn jtest_pvalue(j: f64, df: usize) -> f64 {
    if df == 0 {
        return if j <= 1e-8 { 1.0 } else { 0.0 };
    }
    if !(j > 0.0) {
        return 1.0;
    }
    gamma_ur(df as f64 / 2.0, j / 2.0).clamp(0.0, 1.0)
}

/// Two-sided standard normal critical value for a confidence level in (0, 1).
pub fn normal_critical(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(GmlmError::invalid(format!("confidence level {level} outside (0, 1)")));
    }
    Ok(Normal::standard().inverse_cdf(0.5 + level / 2.0))
}

/// Joint covariance of `(θ̂, treated mean, control mean)` from `B` weighted
/// bootstrap re-fits with the weighting matrix held fixed.
pub fn primitive_joint_cov(
    problem: &GmlmProblem,
    model: &ModelSpec,
    theta_hat: &[f64],
    cfg: &BootstrapConfig,
) -> Result<PrimitiveCovariance> {
    cfg.validate()?;
    let setup = FitSetup {
        order: problem.order,
        trim: problem.trim,
        weight: &problem.weight,
        n_total: problem.n_total(),
    };
    let (t, c) = (&problem.treated, &problem.control);
    let results: Vec<Option<DVector<f64>>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|b| {
            let w1 = replicate_weights(t.len(), cfg.seed, tag::PRIMITIVE_BOOTSTRAP, b, TREATED_ARM);
            let w0 = replicate_weights(c.len(), cfg.seed, tag::PRIMITIVE_BOOTSTRAP, b, CONTROL_ARM);
            let a1 = Arm::weighted(t, &w1);
            let a0 = Arm::weighted(c, &w0);
            let fit = fit_arms(&a1, &a0, &setup, model, Some(theta_hat)).ok()?;
            if !fit.converged {
                return None;
            }
            let m1: f64 = w1.iter().zip(t.values()).map(|(w, y)| w * y).sum();
            let m0: f64 = w0.iter().zip(c.values()).map(|(w, y)| w * y).sum();
            let mut v = fit.theta;
            v.push(m1);
            v.push(m0);
            Some(DVector::from_vec(v))
        })
        .collect();
    let failures = results.iter().filter(|r| r.is_none()).count();
    if failures as f64 > MAX_FAILURE_RATE * cfg.replicates as f64 {
        return Err(GmlmError::InferenceUnstable {
            failures,
            replicates: cfg.replicates,
        });
    }
    let draws: Vec<DVector<f64>> = results.into_iter().flatten().collect();
    Ok(PrimitiveCovariance {
        matrix: clamp_psd(&sample_covariance(&draws)),
        replicates: draws.len(),
        failures,
    })
}

/// Output of the two-step estimator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoStepFit {
    /// Second-step fit with `covariance` filled in.
    pub fit: GmlmFit,
    pub weight: OptimalWeight,
    pub j_pvalue: f64,
}

impl TwoStepFit {
    pub fn std_errors(&self) -> Vec<f64> {
        self.fit.std_errors().unwrap_or_default()
    }
}

/// First-step scale for the built-in families: the ratio of sample standard
/// deviations for location-scale, 1 for location-only.
pub fn first_step_scale(treated: &Sample, control: &Sample, model: &ModelSpec) -> f64 {
    match model {
        ModelSpec::LocationScale => {
            let (s1, s0) = (treated.std_dev(), control.std_dev());
            if s1 > 0.0 && s0 > 0.0 {
                s1 / s0
            } else {
                1.0
            }
        }
        _ => 1.0,
    }
}

/// Two-step GMLM: optimal weight from a first-step scale, second-step fit,
/// sandwich covariance and J-test.
///
/// Custom models take `first_step` as their first-step parameter; when it
/// is `None` the identity-weighted fit is used.
pub fn two_step(
    treated: &Sample,
    control: &Sample,
    model: &ModelSpec,
    order: usize,
    trim: TrimRange,
    cfg: &BootstrapConfig,
    first_step: Option<&[f64]>,
) -> Result<TwoStepFit> {
    let step = match model {
        ModelSpec::Custom(_) => {
            let theta = match first_step {
                Some(t) => t.to_vec(),
                None => {
                    let p = GmlmProblem::identity(treated.clone(), control.clone(), order, trim)?;
                    crate::estimator::fit(&p, model)?.theta
                }
            };
            FirstStep::Model(model.clone(), theta)
        }
        _ => FirstStep::Scale(first_step_scale(treated, control, model)),
    };
    let weight = optimal_weight_with(treated, control, &step, order, trim, cfg)?;
    let problem = GmlmProblem::new(
        treated.clone(),
        control.clone(),
        order,
        trim,
        weight.weight.clone(),
    )?;
    two_step_with_weight(&problem, model, weight)
}

/// Second step of [`two_step`] for a problem already carrying its optimal
/// weight.
pub fn two_step_with_weight(
    problem: &GmlmProblem,
    model: &ModelSpec,
    weight: OptimalWeight,
) -> Result<TwoStepFit> {
    let mut fit = crate::estimator::fit(problem, model)?;
    fit.covariance = Some(theta_covariance(
        &fit,
        &weight.weight,
        &weight.moment_covariance,
    )?);
    let j_pvalue = jtest_pvalue(fit.j_stat, fit.df);
    Ok(TwoStepFit {
        fit,
        weight,
        j_pvalue,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::fit_location_scale;
    use crate::quantile::empirical_quantile;
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, LogNormal, Normal};

    fn sample(v: &[f64]) -> Sample {
        Sample::new(v.to_vec()).unwrap()
    }

    fn draws(n: usize, seed: u64, d: impl Distribution<f64>) -> Vec<f64> {
        let mut r = rng::stream(seed, &[99]);
        (0..n).map(|_| d.sample(&mut r)).collect()
    }

    #[test]
    fn normal_critical_values() {
        assert_abs_diff_eq!(normal_critical(0.95).unwrap(), 1.959963984540054, epsilon = 1e-9);
        assert_abs_diff_eq!(normal_critical(0.90).unwrap(), 1.6448536269514722, epsilon = 1e-9);
        assert!(normal_critical(1.0).is_err() && normal_critical(0.0).is_err());
    }

    #[test]
    fn reweighted_quantile_examples() {
        let s = sample(&[1.0, 2.0]);
        assert_eq!(reweighted_quantile(&s, &[0.25, 0.75], 0.25).unwrap(), 1.0);
        assert_eq!(reweighted_quantile(&s, &[0.25, 0.75], 0.3).unwrap(), 2.0);
        assert!(reweighted_quantile(&s, &[-0.25, 1.25], 0.3).is_err());
        assert!(reweighted_quantile(&s, &[0.5, 0.6], 0.3).is_err());
    }

    #[test]
    fn uniform_weights_match_empirical_quantile() {
        let s = sample(&[3.0, -1.0, 2.0, 2.0, 7.5]);
        let w = vec![0.2; 5];
        for k in 0..=50 {
            let u = k as f64 / 50.0;
            assert_eq!(
                reweighted_quantile(&s, &w, u).unwrap(),
                empirical_quantile(&s, u).unwrap(),
                "u = {u}"
            );
        }
    }

    #[test]
    fn point_mass_on_largest_value() {
        let s = sample(&[1.0, 5.0, 9.0]);
        for u in [0.0, 0.1, 0.5, 1.0] {
            assert_eq!(reweighted_quantile(&s, &[0.0, 0.0, 1.0], u).unwrap(), 9.0);
        }
    }

    #[test]
    fn weights_are_probabilities_and_reproducible() {
        let a = draw_bootstrap_weights(100, &mut rng::stream(5, &[1]));
        let b = draw_bootstrap_weights(100, &mut rng::stream(5, &[1]));
        assert_eq!(a, b);
        assert_abs_diff_eq!(a.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(a.iter().all(|w| *w > 0.0));
        assert_eq!(draw_bootstrap_weights(1, &mut rng::stream(5, &[1])), vec![1.0]);
    }

    #[test]
    fn pvalues_from_chi_square_table() {
        assert_eq!(jtest_pvalue(0.0, 3), 1.0);
        assert_abs_diff_eq!(jtest_pvalue(3.841, 1), 0.05, epsilon = 5e-4);
        assert_abs_diff_eq!(jtest_pvalue(12.592, 6), 0.05, epsilon = 5e-4);
        assert_eq!(jtest_pvalue(1e-9, 0), 1.0);
        assert_eq!(jtest_pvalue(0.1, 0), 0.0);
    }

    #[test]
    fn weight_matrix_validation() {
        let mut m = DMatrix::identity(2, 2);
        m[(0, 1)] = 0.5;
        assert!(WeightMatrix::new(m.clone()).is_err());
        m[(1, 0)] = 0.5;
        assert_eq!(WeightMatrix::new(m).unwrap().rank(), 2);
        let neg = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-3]));
        assert!(WeightMatrix::new(neg).is_err());
        let tiny = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-12]));
        let w = WeightMatrix::new(tiny).unwrap();
        assert_eq!(w.rank(), 1);
        assert_eq!(w.matrix()[(1, 1)], 0.0);
    }

    #[test]
    fn constant_samples_give_zero_weight() {
        let t = sample(&[2.0; 30]);
        let c = sample(&[2.0; 20]);
        let ow =
            optimal_weight_matrix(&t, &c, 1.0, 4, TrimRange::full(), &BootstrapConfig::default())
                .unwrap();
        assert_eq!(ow.rank, 0);
        assert!(ow.weight.matrix().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn optimal_weight_is_deterministic() {
        let t = sample(&draws(80, 1, LogNormal::new(0.0, 1.0).unwrap()));
        let c = sample(&draws(90, 2, LogNormal::new(0.0, 1.0).unwrap()));
        let cfg = BootstrapConfig::new(100, 42);
        let a = optimal_weight_matrix(&t, &c, 1.0, 5, TrimRange::full(), &cfg).unwrap();
        let b = optimal_weight_matrix(&t, &c, 1.0, 5, TrimRange::full(), &cfg).unwrap();
        assert_eq!(a.weight, b.weight);
        assert_eq!(a.rank, 5);
    }

    #[test]
    fn scalar_weight_matches_mean_difference_variance() {
        // V ≈ Var(Y₁)/p₁ + Var(Y₀)/p₀ for R = 1.
        let t = sample(&draws(600, 3, Normal::new(0.0, 2.0).unwrap()));
        let c = sample(&draws(400, 4, Normal::new(0.0, 1.0).unwrap()));
        let cfg = BootstrapConfig::new(2000, 7);
        let ow = optimal_weight_matrix(&t, &c, 1.0, 1, TrimRange::full(), &cfg).unwrap();
        let (p1, p0) = (0.6, 0.4);
        let oracle = t.variance() / p1 + c.variance() / p0;
        let v = ow.moment_covariance[(0, 0)];
        assert!((v / oracle - 1.0).abs() < 0.1, "{v} vs {oracle}");
        assert_abs_diff_eq!(ow.weight.matrix()[(0, 0)] * v, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sandwich_collapses_under_optimal_weight() {
        let t = sample(&draws(200, 5, LogNormal::new(0.0, 0.5).unwrap()));
        let c = sample(&draws(200, 6, LogNormal::new(0.0, 0.5).unwrap()));
        let cfg = BootstrapConfig::new(300, 8);
        let ow = optimal_weight_matrix(&t, &c, 1.0, 6, TrimRange::full(), &cfg).unwrap();
        let p = GmlmProblem::new(t, c, 6, TrimRange::full(), ow.weight.clone()).unwrap();
        let fit = fit_location_scale(&p).unwrap();
        let sandwich = theta_covariance(&fit, &ow.weight, &ow.moment_covariance).unwrap();
        let j = &fit.jacobian;
        let efficient = (j.transpose() * ow.weight.matrix() * j).try_inverse().unwrap()
            / fit.n_total as f64;
        for (a, b) in sandwich.iter().zip(efficient.iter()) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-300) + 1e-16, "{a} vs {b}");
        }
        let scaled = theta_covariance(&fit, &ow.weight, &(&ow.moment_covariance * 3.0)).unwrap();
        for (a, b) in scaled.iter().zip(sandwich.iter()) {
            assert_abs_diff_eq!(*a, 3.0 * b, epsilon = 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn primitive_covariance_properties() {
        let t = sample(&draws(150, 9, LogNormal::new(0.0, 0.5).unwrap()));
        let c = sample(&draws(150, 10, LogNormal::new(0.0, 0.5).unwrap()));
        let p = GmlmProblem::identity(t, c, 4, TrimRange::full()).unwrap();
        let fit = fit_location_scale(&p).unwrap();
        let cfg = BootstrapConfig::new(100, 11);
        let a = primitive_joint_cov(&p, &ModelSpec::LocationScale, &fit.theta, &cfg).unwrap();
        let b = primitive_joint_cov(&p, &ModelSpec::LocationScale, &fit.theta, &cfg).unwrap();
        assert_eq!(a.matrix, b.matrix);
        assert_eq!(a.dim(), 4);
        assert!((0..4).all(|i| a.matrix[(i, i)] >= 0.0));
        assert_eq!(a.failures, 0);
    }

    #[test]
    fn too_few_replicates_rejected() {
        let t = sample(&[1.0, 2.0]);
        let r = optimal_weight_matrix(&t, &t, 1.0, 2, TrimRange::full(), &BootstrapConfig::new(10, 1));
        assert!(r.is_err());
    }
}
