//! Semiparametric estimation of treatment effects on heavy-tailed outcomes
//! by the generalized method of L-moments (GMLM).
//!
//! The crate is organised bottom-up:
//!
//! * [`quantile`]: samples, empirical quantile functions, shifted Legendre
//!   polynomials and exact L-moments.
//! * [`estimator`]: the GMLM fit (closed-form GLS for location-scale
//!   models, Gauss-Newton for generic monotone transformations) and the
//!   J statistic.
//! * [`inference`]: weighted bootstrap, optimal weighting, sandwich
//!   covariances and chi-squared p-values.
//! * [`effects`] and [`panel`]: average and dispersion effects with
//!   delta-method standard errors, and the cell-by-cell experiment loop.
//! * [`tuning`]: pre-treatment placebo selection of the number of
//!   L-moments and trimming.
//! * [`montecarlo`]: two-sample simulation study comparing estimators.
//! * [`learning`]: the calibrated learning-versus-price decomposition.
//! * [`io`]: CSV ingestion and report formatting.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod effects;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod io;
pub mod learning;
mod linalg;
pub mod montecarlo;
pub mod panel;
pub mod quantile;
pub mod rng;
pub mod tuning;

pub use error::{GmlmError, Result};
pub use effects::{estimate_effects, EffectEstimate};
pub use estimator::{
    design_vectors, fit, fit_generic, fit_location, fit_location_scale, j_statistic, GmlmFit,
    GmlmProblem, ModelSpec, TransformModel,
};
pub use inference::{
    draw_bootstrap_weights, jtest_pvalue, normal_critical, optimal_weight_matrix, primitive_joint_cov,
    reweighted_quantile, theta_covariance, two_step, BootstrapConfig, FirstStep, OptimalWeight,
    PrimitiveCovariance, TwoStepFit, WeightMatrix,
};
pub use quantile::{
    build_basis, empirical_quantile, lmoments, poly_integral, LMomentVector, LegendreBasis,
    Sample, TrimRange,
};
