//! Hyperparameter selection by placebo estimation.
//!
//! Before treatment starts, the future treated and control groups share one
//! outcome distribution, so a fit on a pre-treatment period should return
//! the null parameter `θ̃`. The selected grid point minimises
//! `(1/T₀) Σ_t ‖θ̂(t; h) − θ̃‖²` over the pre-treatment periods.

use std::cmp::Ordering;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GmlmError, Result};
use crate::estimator::{fit, GmlmProblem, ModelSpec};
use crate::inference::{
    first_step_scale, moment_draws, BootstrapConfig, FirstStep, OptimalWeight, WeightMatrix,
};
use crate::linalg::sample_covariance;
use crate::quantile::{Sample, TrimRange};
use crate::rng::{self, tag};

/// One hyperparameter setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPoint {
    pub order: usize,
    pub trim: TrimRange,
}

fn tie_break(a: &HyperPoint, b: &HyperPoint) -> Ordering {
    a.order
        .cmp(&b.order)
        .then(b.trim.width().total_cmp(&a.trim.width()))
        .then(a.trim.lo().total_cmp(&b.trim.lo()))
}

/// Candidate hyperparameters in tie-break order: smaller `R` first, then
/// wider trim range first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<HyperPoint>", try_from = "Vec<HyperPoint>")]
pub struct HyperGrid {
    points: Vec<HyperPoint>,
}

impl TryFrom<Vec<HyperPoint>> for HyperGrid {
    type Error = GmlmError;
    fn try_from(points: Vec<HyperPoint>) -> Result<Self> {
        Self::from_points(points)
    }
}

impl From<HyperGrid> for Vec<HyperPoint> {
    fn from(g: HyperGrid) -> Self {
        g.points
    }
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self::new(&(2..=16).collect::<Vec<_>>(), &[TrimRange::full()]).expect("default grid")
    }
}

impl HyperGrid {
    /// The product grid `orders × trims`.
    pub fn new(orders: &[usize], trims: &[TrimRange]) -> Result<Self> {
        let points = orders
            .iter()
            .flat_map(|&order| trims.iter().map(move |&trim| HyperPoint { order, trim }))
            .collect();
        Self::from_points(points)
    }

    pub fn from_points(mut points: Vec<HyperPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(GmlmError::invalid("empty hyperparameter grid"));
        }
        points.sort_by(tie_break);
        points.dedup();
        Ok(Self { points })
    }

    pub fn points(&self) -> &[HyperPoint] {
        &self.points
    }

    pub fn max_order(&self) -> usize {
        self.points.iter().map(|p| p.order).max().unwrap_or(0)
    }

    fn trims(&self) -> Vec<TrimRange> {
        let mut t: Vec<TrimRange> = Vec::new();
        for p in &self.points {
            if !t.contains(&p.trim) {
                t.push(p.trim);
            }
        }
        t
    }

    fn check(&self, model: &ModelSpec) -> Result<()> {
        let p = model.dim();
        match self.points.iter().find(|h| h.order < p) {
            Some(h) => Err(GmlmError::invalid(format!(
                "grid order {} below the parameter dimension {p}",
                h.order
            ))),
            None => Ok(()),
        }
    }
}

/// Weighting used inside placebo fits.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningWeight {
    /// No bootstrap noise in the criterion. For the untrimmed location
    /// model every order gives the mean difference, so the smallest order
    /// wins the tie.
    #[default]
    Identity,
    /// The bootstrap optimal weight, estimated once per period and trim at
    /// the largest grid order and restricted to leading blocks.
    Optimal(BootstrapConfig),
}

/// Treated and control samples from one pre-treatment period.
#[derive(Debug, Clone)]
pub struct PlaceboPeriod {
    pub label: String,
    pub treated: Sample,
    pub control: Sample,
}

/// Criterion values of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCriterion {
    pub point: HyperPoint,
    /// `‖θ̂(t; h) − θ̃‖²` per period; `None` where the fit failed.
    pub per_period: Vec<Option<f64>>,
    /// Average over periods; `None` when any period is infeasible.
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub chosen: HyperPoint,
    pub chosen_criterion: f64,
    pub criteria: Vec<GridCriterion>,
    pub periods: Vec<String>,
    pub t0: usize,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn label_key(label: &str) -> u64 {
    let words: Vec<u64> = label.bytes().map(u64::from).collect();
    rng::derive_key(label.len() as u64, &words)
}

/// Fits the model on one pre-treatment period with hyperparameters `h`.
pub fn placebo_fit(
    period: &PlaceboPeriod,
    model: &ModelSpec,
    h: HyperPoint,
    weighting: &TuningWeight,
) -> Result<Vec<f64>> {
    let grid = HyperGrid::from_points(vec![h])?;
    let fits = period_fits(period, model, &grid, weighting)?;
    fits.into_iter().next().expect("one grid point")
}

fn first_step(period: &PlaceboPeriod, model: &ModelSpec) -> FirstStep {
    match model {
        ModelSpec::Custom(_) => FirstStep::Model(model.clone(), model.null_parameter()),
        _ => FirstStep::Scale(first_step_scale(&period.treated, &period.control, model)),
    }
}

/// Placebo fits of one period at every grid point, in grid order.
fn period_fits(
    period: &PlaceboPeriod,
    model: &ModelSpec,
    grid: &HyperGrid,
    weighting: &TuningWeight,
) -> Result<Vec<Result<Vec<f64>>>> {
    let max_order = grid.max_order();
    let mut covariances: Vec<(TrimRange, OptimalWeight)> = Vec::new();
    if let TuningWeight::Optimal(cfg) = weighting {
        let cfg = cfg.derive(&[tag::PLACEBO_WEIGHT, label_key(&period.label)]);
        let step = first_step(period, model);
        for trim in grid.trims() {
            let draws = moment_draws(&period.treated, &period.control, &step, max_order, trim, &cfg)?;
            covariances.push((trim, OptimalWeight::from_covariance(sample_covariance(&draws))));
        }
    }
    Ok(grid
        .points()
        .iter()
        .map(|h| {
            let weight = match weighting {
                TuningWeight::Identity => WeightMatrix::identity(h.order),
                TuningWeight::Optimal(_) => {
                    let full = &covariances
                        .iter()
                        .find(|(t, _)| *t == h.trim)
                        .expect("covariance for every trim")
                        .1;
                    full.leading(h.order).weight
                }
            };
            let problem = GmlmProblem::new(
                period.treated.clone(),
                period.control.clone(),
                h.order,
                h.trim,
                weight,
            )?;
            Ok(fit(&problem, model)?.theta)
        })
        .collect())
}

/// Chooses the grid point with the smallest average placebo criterion.
///
/// A grid point that fails on any period is infeasible. Ties go to the
/// earlier point in grid order.
pub fn select_hyperparams(
    periods: &[PlaceboPeriod],
    model: &ModelSpec,
    grid: &HyperGrid,
    weighting: &TuningWeight,
) -> Result<TuningReport> {
    if periods.is_empty() {
        return Err(GmlmError::invalid("tuning needs at least one pre-treatment period"));
    }
    grid.check(model)?;
    let null = model.null_parameter();
    let per_period: Vec<Vec<Option<f64>>> = periods
        .par_iter()
        .map(|period| {
            Ok(period_fits(period, model, grid, weighting)?
                .into_iter()
                .map(|r| match r {
                    Ok(theta) => Some(squared_distance(&theta, &null)),
                    Err(e) => {
                        debug!("placebo fit failed in period {}: {e}", period.label);
                        None
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let t0 = periods.len();
    let criteria: Vec<GridCriterion> = grid
        .points()
        .iter()
        .enumerate()
        .map(|(i, &point)| {
            let values: Vec<Option<f64>> = per_period.iter().map(|p| p[i]).collect();
            let mean = values
                .iter()
                .copied()
                .collect::<Option<Vec<f64>>>()
                .map(|v| v.iter().sum::<f64>() / t0 as f64);
            GridCriterion {
                point,
                per_period: values,
                mean,
            }
        })
        .collect();

    let mut best: Option<(HyperPoint, f64)> = None;
    for c in &criteria {
        if let Some(m) = c.mean {
            if best.is_none_or(|(_, b)| m < b) {
                best = Some((c.point, m));
            }
        }
    }
    let (chosen, chosen_criterion) = best.ok_or_else(|| {
        GmlmError::TuningFailed("every grid point failed on some pre-treatment period".into())
    })?;
    Ok(TuningReport {
        chosen,
        chosen_criterion,
        criteria,
        periods: periods.iter().map(|p| p.label.clone()).collect(),
        t0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, LogNormal};

    fn draws(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::stream(seed, &[3]);
        let d = LogNormal::new(0.0, 0.7).unwrap();
        (0..n).map(|_| d.sample(&mut r)).collect()
    }

    fn period(label: &str, t: Vec<f64>, c: Vec<f64>) -> PlaceboPeriod {
        PlaceboPeriod {
            label: label.into(),
            treated: Sample::new(t).unwrap(),
            control: Sample::new(c).unwrap(),
        }
    }

    #[test]
    fn grid_is_sorted_by_tie_break() {
        let wide = TrimRange::full();
        let narrow = TrimRange::new(0.0, 0.9).unwrap();
        let g = HyperGrid::new(&[5, 2], &[narrow, wide]).unwrap();
        let pts: Vec<_> = g.points().iter().map(|p| (p.order, p.trim)).collect();
        assert_eq!(pts, vec![(2, wide), (2, narrow), (5, wide), (5, narrow)]);
        assert!(HyperGrid::new(&[], &[wide]).is_err());
        assert_eq!(HyperGrid::default().points().len(), 15);
    }

    #[test]
    fn exact_copies_score_zero_and_pick_smallest_order() {
        let v = draws(50, 1);
        let periods = vec![period("a", v.clone(), v.clone()), period("b", v.clone(), v)];
        let grid = HyperGrid::new(&[3, 2, 6], &[TrimRange::full()]).unwrap();
        let rep = select_hyperparams(&periods, &ModelSpec::LocationScale, &grid, &TuningWeight::Identity)
            .unwrap();
        assert!(rep.criteria.iter().all(|c| c.mean == Some(0.0)));
        assert_eq!(rep.chosen.order, 2);
        assert_eq!(rep.t0, 2);
    }

    #[test]
    fn planted_location_drift_bounds_the_criterion() {
        let c = draws(200, 2);
        let t: Vec<f64> = draws(200, 3).iter().map(|v| v + 0.5).collect();
        let periods = vec![period("p", t, c)];
        let grid = HyperGrid::new(&[1, 2, 4, 8], &[TrimRange::full()]).unwrap();
        let rep = select_hyperparams(&periods, &ModelSpec::LocationOnly, &grid, &TuningWeight::Identity)
            .unwrap();
        for c in &rep.criteria {
            assert!(c.mean.unwrap() > 0.1, "{c:?}");
        }
    }

    #[test]
    fn identity_location_criterion_is_flat_in_order() {
        // Untrimmed, identity-weighted location fits reduce to the mean
        // difference at every order.
        let periods = vec![period("p", draws(80, 5), draws(90, 6))];
        let grid = HyperGrid::new(&(1..=16).collect::<Vec<_>>(), &[TrimRange::full()]).unwrap();
        let rep = select_hyperparams(&periods, &ModelSpec::LocationOnly, &grid, &TuningWeight::Identity)
            .unwrap();
        let first = rep.criteria[0].mean.unwrap();
        assert!(rep.criteria.iter().all(|c| c.mean == Some(first)));
        assert_eq!(rep.chosen.order, 1);
    }

    #[test]
    fn infeasible_points_are_skipped() {
        // A constant control makes every location-scale fit degenerate.
        let periods = vec![period("p", draws(30, 4), vec![1.0; 30])];
        let grid = HyperGrid::new(&[2, 3], &[TrimRange::full()]).unwrap();
        let r = select_hyperparams(&periods, &ModelSpec::LocationScale, &grid, &TuningWeight::Identity);
        assert!(matches!(r, Err(GmlmError::TuningFailed(_))));
    }

    #[test]
    fn optimal_weighting_is_deterministic_and_order_invariant() {
        let periods: Vec<_> = (0..3)
            .map(|t| period(&format!("t{t}"), draws(120, 10 + t), draws(120, 20 + t)))
            .collect();
        let grid = HyperGrid::new(&[2, 3, 5], &[TrimRange::full()]).unwrap();
        let w = TuningWeight::Optimal(BootstrapConfig::new(60, 9));
        let a = select_hyperparams(&periods, &ModelSpec::LocationOnly, &grid, &w).unwrap();
        let b = select_hyperparams(&periods, &ModelSpec::LocationOnly, &grid, &w).unwrap();
        assert_eq!(a, b);
        let reversed: Vec<_> = periods.iter().rev().cloned().collect();
        let c = select_hyperparams(&reversed, &ModelSpec::LocationOnly, &grid, &w).unwrap();
        assert_eq!(a.chosen, c.chosen);
        let single = placebo_fit(&periods[0], &ModelSpec::LocationOnly, grid.points()[1], &w).unwrap();
        let per = a.criteria[1].per_period[0].unwrap();
        assert!((single[0] * single[0] - per).abs() <= 1e-15 * per.max(1.0));
    }
}
