//! Simulation study comparing difference-in-means with GMLM.
//!
//! Each replication draws two disjoint halves of size `N/2` without
//! replacement from a finite population, so the true effect is zero. The
//! GMLM estimators fit the location model with `R` tuned on freshly drawn
//! placebo periods, then refit with the optimal weight and report sandwich
//! standard errors.

use std::path::PathBuf;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GmlmError, Result};
use crate::estimator::ModelSpec;
use crate::inference::{normal_critical, two_step, BootstrapConfig};
use crate::quantile::{Sample, TrimRange};
use crate::rng::{self, tag};
use crate::tuning::{select_hyperparams, HyperGrid, PlaceboPeriod, TuningWeight};

/// Log-normal body with an inflated-variance log-normal tail component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub size: usize,
    pub body_log_mean: f64,
    pub body_log_sd: f64,
    /// Mixture weight of the tail component.
    pub tail_weight: f64,
    pub tail_log_mean: f64,
    pub tail_log_sd: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            size: 100_000,
            body_log_mean: 12.0,
            body_log_sd: 0.5,
            tail_weight: 0.05,
            tail_log_mean: 12.0,
            tail_log_sd: 1.5,
            seed: rng::DEFAULT_SEED,
        }
    }
}

impl SyntheticSpec {
    /// A plain log-normal population.
    pub fn lognormal(log_mean: f64, log_sd: f64, size: usize, seed: u64) -> Self {
        Self {
            size,
            body_log_mean: log_mean,
            body_log_sd: log_sd,
            tail_weight: 0.0,
            tail_log_mean: log_mean,
            tail_log_sd: log_sd,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PopulationSource {
    File { path: PathBuf },
    Synthetic(SyntheticSpec),
    Values,
}

/// A finite population of outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    values: Vec<f64>,
    source: PopulationSource,
}

impl Population {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        Self::with_source(values, PopulationSource::Values)
    }

    fn with_source(values: Vec<f64>, source: PopulationSource) -> Result<Self> {
        if values.is_empty() {
            return Err(GmlmError::InvalidState("empty population".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(GmlmError::invalid(format!("non-finite population value {bad}")));
        }
        Ok(Self { values, source })
    }

    pub fn synthetic(spec: &SyntheticSpec) -> Result<Self> {
        if spec.size == 0 || !(0.0..=1.0).contains(&spec.tail_weight) {
            return Err(GmlmError::invalid("synthetic population needs size ≥ 1 and a tail weight in [0, 1]"));
        }
        let body = LogNormal::new(spec.body_log_mean, spec.body_log_sd)
            .map_err(|e| GmlmError::invalid(format!("body component: {e}")))?;
        let tail = LogNormal::new(spec.tail_log_mean, spec.tail_log_sd)
            .map_err(|e| GmlmError::invalid(format!("tail component: {e}")))?;
        let mut r = rng::stream(spec.seed, &[tag::POPULATION]);
        let values = (0..spec.size)
            .map(|_| {
                if r.random::<f64>() < spec.tail_weight {
                    tail.sample(&mut r)
                } else {
                    body.sample(&mut r)
                }
            })
            .collect();
        Self::with_source(values, PopulationSource::Synthetic(spec.clone()))
    }

    pub fn from_file(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let values = crate::io::read_values_csv(&path)?;
        Self::with_source(values, PopulationSource::File { path })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn source(&self) -> &PopulationSource {
        &self.source
    }
}

/// Two disjoint random halves of size `N/2`.
pub fn draw_two_samples<R: Rng + ?Sized>(
    pop: &Population,
    n: usize,
    rng: &mut R,
) -> Result<(Sample, Sample)> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(GmlmError::invalid(format!("N = {n} must be even and at least 2")));
    }
    if n > pop.len() {
        return Err(GmlmError::invalid(format!(
            "N = {n} exceeds the population size {}",
            pop.len()
        )));
    }
    let idx = index::sample(rng, pop.len(), n).into_vec();
    let (a, b) = idx.split_at(n / 2);
    let pick = |ix: &[usize]| Sample::new(ix.iter().map(|&i| pop.values[i]).collect());
    Ok((pick(a)?, pick(b)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeScale {
    Levels,
    Logs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    DiffInMeans,
    Gmlm,
    GmlmTrimmed,
}

impl EstimatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorKind::DiffInMeans => "diff-in-means",
            EstimatorKind::Gmlm => "GMLM",
            EstimatorKind::GmlmTrimmed => "GMLM (trimmed)",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningWeightKind {
    Identity,
    Optimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub sizes: Vec<usize>,
    pub replications: usize,
    /// Placebo periods drawn per replication for tuning.
    pub t0: usize,
    pub ci_level: f64,
    pub bootstrap_replicates: usize,
    /// Bootstrap replicates behind each placebo-period weight.
    pub tuning_replicates: usize,
    pub tuning_weight: TuningWeightKind,
    pub seed: u64,
    pub scale: OutcomeScale,
    pub estimators: Vec<EstimatorKind>,
    pub orders: Vec<usize>,
    /// Upper trim point of the trimmed GMLM variant.
    pub trim_hi: f64,
    /// Nominal level of the J-test.
    pub j_level: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            sizes: vec![500, 1000, 2000],
            replications: 1000,
            t0: 16,
            ci_level: 0.95,
            bootstrap_replicates: 500,
            tuning_replicates: 200,
            tuning_weight: TuningWeightKind::Identity,
            seed: rng::DEFAULT_SEED,
            scale: OutcomeScale::Levels,
            estimators: vec![
                EstimatorKind::DiffInMeans,
                EstimatorKind::Gmlm,
                EstimatorKind::GmlmTrimmed,
            ],
            orders: (2..=16).collect(),
            trim_hi: 0.98,
            j_level: 0.05,
        }
    }
}

impl McConfig {
    pub fn validate(&self, pop: &Population) -> Result<()> {
        if self.sizes.is_empty() || self.estimators.is_empty() || self.replications == 0 {
            return Err(GmlmError::invalid("need at least one size, estimator and replication"));
        }
        for &n in &self.sizes {
            if n < 4 || n % 2 != 0 || n > pop.len() {
                return Err(GmlmError::invalid(format!(
                    "N = {n} must be even, at least 4 and at most the population size {}",
                    pop.len()
                )));
            }
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) || !(self.j_level > 0.0 && self.j_level < 1.0) {
            return Err(GmlmError::invalid("levels must lie in (0, 1)"));
        }
        if self.t0 == 0 && self.estimators.iter().any(|e| *e != EstimatorKind::DiffInMeans) {
            return Err(GmlmError::invalid("tuning needs t0 ≥ 1"));
        }
        if self.scale == OutcomeScale::Logs && pop.values().iter().any(|v| *v <= 0.0) {
            return Err(GmlmError::invalid("log scale needs a positive population"));
        }
        TrimRange::new(0.0, self.trim_hi)?;
        HyperGrid::new(&self.orders, &[TrimRange::full()])?;
        BootstrapConfig::new(self.bootstrap_replicates, self.seed).validate()?;
        if self.tuning_weight == TuningWeightKind::Optimal {
            BootstrapConfig::new(self.tuning_replicates, self.seed).validate()?;
        }
        Ok(())
    }

    fn critical_value(&self) -> f64 {
        normal_critical(self.ci_level).unwrap_or(f64::NAN)
    }
}

/// One estimator's result in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOutcome {
    pub estimator: EstimatorKind,
    pub estimate: f64,
    pub se: f64,
    pub covers: bool,
    pub j_reject: Option<bool>,
    pub order: Option<usize>,
    /// Set when the estimator failed; the other fields are then meaningless.
    pub error: Option<String>,
}

impl EstimatorOutcome {
    fn failed(estimator: EstimatorKind, e: GmlmError) -> Self {
        Self {
            estimator,
            estimate: f64::NAN,
            se: f64::NAN,
            covers: false,
            j_reject: None,
            order: None,
            error: Some(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub n: usize,
    pub replicate: usize,
    pub outcomes: Vec<EstimatorOutcome>,
}

fn scaled(s: Sample, scale: OutcomeScale) -> Result<Sample> {
    match scale {
        OutcomeScale::Levels => Ok(s),
        OutcomeScale::Logs => s.map(f64::ln),
    }
}

fn diff_in_means(t: &Sample, c: &Sample, z: f64) -> EstimatorOutcome {
    let estimate = t.mean() - c.mean();
    let se = (t.variance() / t.len() as f64 + c.variance() / c.len() as f64).sqrt();
    EstimatorOutcome {
        estimator: EstimatorKind::DiffInMeans,
        estimate,
        se,
        covers: estimate.abs() <= z * se,
        j_reject: None,
        order: None,
        error: None,
    }
}

#[allow(clippy::too_many_arguments)]
fn gmlm(
    kind: EstimatorKind,
    t: &Sample,
    c: &Sample,
    periods: &[PlaceboPeriod],
    trim: TrimRange,
    cfg: &McConfig,
    keys: [u64; 2],
    z: f64,
) -> Result<EstimatorOutcome> {
    let model = ModelSpec::LocationOnly;
    let grid = HyperGrid::new(&cfg.orders, &[trim])?;
    let weighting = match cfg.tuning_weight {
        TuningWeightKind::Identity => TuningWeight::Identity,
        TuningWeightKind::Optimal => TuningWeight::Optimal(
            BootstrapConfig::new(cfg.tuning_replicates, cfg.seed).derive(&keys),
        ),
    };
    let report = select_hyperparams(periods, &model, &grid, &weighting)?;
    let order = report.chosen.order;
    let boot = BootstrapConfig::new(cfg.bootstrap_replicates, cfg.seed)
        .derive(&[tag::WEIGHT_BOOTSTRAP, keys[0], keys[1]]);
    let two = two_step(t, c, &model, order, trim, &boot, None)?;
    let estimate = two.fit.theta[0];
    let se = two.std_errors()[0];
    Ok(EstimatorOutcome {
        estimator: kind,
        estimate,
        se,
        covers: estimate.abs() <= z * se,
        j_reject: Some(two.j_pvalue < cfg.j_level),
        order: Some(order),
        error: None,
    })
}

/// All configured estimators on replication `replicate` at size `n`.
pub fn run_replication(
    pop: &Population,
    n: usize,
    cfg: &McConfig,
    replicate: usize,
) -> Result<ReplicationRecord> {
    let keys = [n as u64, replicate as u64];
    let mut r = rng::stream(cfg.seed, &[tag::TWO_SAMPLE_DRAW, keys[0], keys[1]]);
    let (t, c) = draw_two_samples(pop, n, &mut r)?;
    let (t, c) = (scaled(t, cfg.scale)?, scaled(c, cfg.scale)?);
    let z = cfg.critical_value();

    let needs_tuning = cfg.estimators.iter().any(|e| *e != EstimatorKind::DiffInMeans);
    let periods = if needs_tuning {
        (0..cfg.t0)
            .map(|p| {
                let mut r = rng::stream(cfg.seed, &[tag::PLACEBO_DRAW, keys[0], keys[1], p as u64]);
                let (pt, pc) = draw_two_samples(pop, n, &mut r)?;
                Ok(PlaceboPeriod {
                    label: format!("t{p}"),
                    treated: scaled(pt, cfg.scale)?,
                    control: scaled(pc, cfg.scale)?,
                })
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };

    let outcomes = cfg
        .estimators
        .iter()
        .map(|&kind| {
            let trim = match kind {
                EstimatorKind::DiffInMeans => return diff_in_means(&t, &c, z),
                EstimatorKind::Gmlm => TrimRange::full(),
                EstimatorKind::GmlmTrimmed => TrimRange::new(0.0, cfg.trim_hi).expect("validated"),
            };
            gmlm(kind, &t, &c, &periods, trim, cfg, keys, z)
                .unwrap_or_else(|e| EstimatorOutcome::failed(kind, e))
        })
        .collect();
    Ok(ReplicationRecord {
        n,
        replicate,
        outcomes,
    })
}

/// Summary metrics of one estimator at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub estimator: EstimatorKind,
    pub n: usize,
    pub rmse: f64,
    pub mae: f64,
    pub coverage: f64,
    pub avg_length: f64,
    pub j_rate: Option<f64>,
    pub median_r: Option<f64>,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub rows: Vec<McRow>,
    pub config: McConfig,
    pub population_size: usize,
    pub source: PopulationSource,
}

impl McResult {
    pub fn row(&self, estimator: EstimatorKind, n: usize) -> Option<&McRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.n == n)
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Aggregates the replications of one size into metric rows.
pub fn summarize(records: &[ReplicationRecord], cfg: &McConfig, n: usize) -> Vec<McRow> {
    let z = cfg.critical_value();
    cfg.estimators
        .iter()
        .map(|&kind| {
            let all: Vec<&EstimatorOutcome> = records
                .iter()
                .filter(|r| r.n == n)
                .flat_map(|r| r.outcomes.iter().filter(move |o| o.estimator == kind))
                .collect();
            let ok: Vec<&&EstimatorOutcome> = all.iter().filter(|o| o.error.is_none()).collect();
            let k = ok.len().max(1) as f64;
            let mean = |f: &dyn Fn(&EstimatorOutcome) -> f64| ok.iter().map(|o| f(o)).sum::<f64>() / k;
            let j: Vec<bool> = ok.iter().filter_map(|o| o.j_reject).collect();
            let orders: Vec<f64> = ok.iter().filter_map(|o| o.order.map(|r| r as f64)).collect();
            McRow {
                estimator: kind,
                n,
                rmse: mean(&|o| o.estimate * o.estimate).sqrt(),
                mae: mean(&|o| o.estimate.abs()),
                coverage: mean(&|o| if o.covers { 1.0 } else { 0.0 }),
                avg_length: mean(&|o| 2.0 * z * o.se),
                j_rate: (!j.is_empty())
                    .then(|| j.iter().filter(|b| **b).count() as f64 / j.len() as f64),
                median_r: median(orders),
                successes: ok.len(),
                failures: all.len() - ok.len(),
            }
        })
        .collect()
}

/// Runs every configured size and aggregates the metric table.
pub fn run_study(pop: &Population, cfg: &McConfig) -> Result<McResult> {
    cfg.validate(pop)?;
    let mut rows = Vec::new();
    for &n in &cfg.sizes {
        let records = (0..cfg.replications)
            .into_par_iter()
            .map(|rep| run_replication(pop, n, cfg, rep))
            .collect::<Result<Vec<_>>>()?;
        rows.extend(summarize(&records, cfg, n));
    }
    Ok(McResult {
        rows,
        config: cfg.clone(),
        population_size: pop.len(),
        source: pop.source().clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> McConfig {
        McConfig {
            sizes: vec![60],
            replications: 4,
            t0: 2,
            bootstrap_replicates: 60,
            tuning_replicates: 60,
            orders: vec![2, 3],
            ..McConfig::default()
        }
    }

    #[test]
    fn halves_are_disjoint_and_reproducible() {
        let pop = Population::from_values((0..500).map(f64::from).collect()).unwrap();
        let (t, c) = draw_two_samples(&pop, 500, &mut rng::stream(1, &[])).unwrap();
        assert_eq!((t.len(), c.len()), (250, 250));
        let mut all: Vec<f64> = t.values().iter().chain(c.values()).copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, pop.values());
        let again = draw_two_samples(&pop, 500, &mut rng::stream(1, &[])).unwrap();
        assert_eq!((t, c), again);
        assert!(draw_two_samples(&pop, 502, &mut rng::stream(1, &[])).is_err());
        assert!(draw_two_samples(&pop, 7, &mut rng::stream(1, &[])).is_err());
    }

    #[test]
    fn diff_in_means_is_the_mean_difference() {
        let pop = Population::synthetic(&SyntheticSpec { size: 2000, ..Default::default() }).unwrap();
        let cfg = McConfig {
            estimators: vec![EstimatorKind::DiffInMeans],
            ..small_cfg()
        };
        let rec = run_replication(&pop, 60, &cfg, 3).unwrap();
        let mut r = rng::stream(cfg.seed, &[tag::TWO_SAMPLE_DRAW, 60, 3]);
        let (t, c) = draw_two_samples(&pop, 60, &mut r).unwrap();
        assert_eq!(rec.outcomes[0].estimate, t.mean() - c.mean());
    }

    #[test]
    fn constant_population_is_exact() {
        let pop = Population::from_values(vec![7.0; 200]).unwrap();
        let res = run_study(&pop, &small_cfg()).unwrap();
        for row in &res.rows {
            assert_eq!(row.failures, 0, "{row:?}");
            assert_eq!(row.rmse, 0.0);
            assert_eq!(row.mae, 0.0);
            assert_eq!(row.coverage, 1.0);
        }
    }

    #[test]
    fn study_is_deterministic() {
        let pop = Population::synthetic(&SyntheticSpec { size: 3000, ..Default::default() }).unwrap();
        let a = run_study(&pop, &small_cfg()).unwrap();
        let b = run_study(&pop, &small_cfg()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 3);
        let g = a.row(EstimatorKind::Gmlm, 60).unwrap();
        assert!(g.median_r.is_some() && g.j_rate.is_some());
    }

    #[test]
    fn config_validation() {
        let pop = Population::from_values(vec![1.0; 100]).unwrap();
        let bad = McConfig { sizes: vec![101], ..small_cfg() };
        assert!(bad.validate(&pop).is_err());
        let odd = McConfig { sizes: vec![51], ..small_cfg() };
        assert!(odd.validate(&pop).is_err());
        let neg = Population::from_values(vec![-1.0; 100]).unwrap();
        let logs = McConfig { scale: OutcomeScale::Logs, ..small_cfg() };
        assert!(logs.validate(&neg).is_err());
        let cfg: McConfig = serde_json::from_str(r#"{"sizes":[10],"replications":3}"#).unwrap();
        assert_eq!(cfg.t0, 16);
        assert!(serde_json::from_str::<McConfig>(r#"{"bogus":1}"#).is_err());
    }
}
