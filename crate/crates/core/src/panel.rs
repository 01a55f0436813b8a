//! Panel experiments: per-cell effect estimation over
//! (outcome type × post-treatment period × discount × stratum), stratum
//! aggregation and control means.
//!
//! Every cell is fitted on its own. A cell with too few observations is
//! reported as unavailable; a cell whose fit fails is reported with the
//! error and the run continues.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effects::{aggregate_strata, estimate_effects, AggregateEffect, EffectEstimate, StratumValue};
use crate::error::{GmlmError, Result};
use crate::estimator::ModelSpec;
use crate::inference::BootstrapConfig;
use crate::quantile::{Sample, TrimRange};
use crate::rng::{self, tag};
use crate::tuning::{select_hyperparams, HyperGrid, PlaceboPeriod, TuningReport, TuningWeight};

macro_rules! label_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!(
                        "unknown {} '{}' (expected one of: {})",
                        stringify!($name).to_lowercase(),
                        other,
                        [$($text),+].join(", ")
                    )),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

label_enum!(Arm { Control => "control", D20 => "d20", D50 => "d50" });
label_enum!(Stratum { User => "user", Nonuser => "nonuser" });
label_enum!(OutcomeType { Integrated => "integrated", Nonintegrated => "nonintegrated" });

impl Arm {
    pub const DISCOUNTS: &'static [Arm] = &[Arm::D20, Arm::D50];
}

/// One observation: a unit's count of one outcome type in one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRecord {
    pub unit_id: String,
    pub arm: Arm,
    pub stratum: Stratum,
    pub period: String,
    pub outcome_type: OutcomeType,
    pub count: f64,
}

/// A validated long-format panel.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    records: Vec<PanelRecord>,
}

impl PanelDataset {
    /// Validates counts, key uniqueness and per-unit consistency. Errors
    /// cite the 1-based record position.
    pub fn new(records: Vec<PanelRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(GmlmError::InvalidState("empty panel".into()));
        }
        let mut keys = HashMap::new();
        let mut units: HashMap<&str, (Arm, Stratum, usize)> = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            let pos = i + 1;
            if !(r.count.is_finite() && r.count >= 0.0) {
                return Err(GmlmError::data(pos, format!("count {} must be finite and ≥ 0", r.count)));
            }
            if r.unit_id.is_empty() || r.period.is_empty() {
                return Err(GmlmError::data(pos, "unit_id and period must be nonempty"));
            }
            if let Some(first) = keys.insert((&r.unit_id, &r.period, r.outcome_type), pos) {
                return Err(GmlmError::data(
                    pos,
                    format!(
                        "duplicate (unit, period, outcome) = ({}, {}, {}); first seen at record {first}",
                        r.unit_id, r.period, r.outcome_type
                    ),
                ));
            }
            match units.get(r.unit_id.as_str()) {
                Some(&(arm, stratum, first)) if arm != r.arm || stratum != r.stratum => {
                    return Err(GmlmError::data(
                        pos,
                        format!(
                            "unit {} is {arm}/{stratum} at record {first} but {}/{} here",
                            r.unit_id, r.arm, r.stratum
                        ),
                    ))
                }
                Some(_) => {}
                None => {
                    units.insert(&r.unit_id, (r.arm, r.stratum, pos));
                }
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[PanelRecord] {
        &self.records
    }

    /// Distinct period labels in sorted order.
    pub fn periods(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.period.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn outcome_types(&self) -> Vec<OutcomeType> {
        self.records
            .iter()
            .map(|r| r.outcome_type)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    fn index(&self) -> BTreeMap<(OutcomeType, &str, Arm, Stratum), Vec<f64>> {
        let mut m: BTreeMap<_, Vec<f64>> = BTreeMap::new();
        for r in &self.records {
            m.entry((r.outcome_type, r.period.as_str(), r.arm, r.stratum))
                .or_default()
                .push(r.count);
        }
        m
    }

    /// Counts of one (outcome, period, arm, stratum) cell.
    pub fn cell_values(&self, outcome: OutcomeType, period: &str, arm: Arm, stratum: Stratum) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| {
                r.outcome_type == outcome && r.period == period && r.arm == arm && r.stratum == stratum
            })
            .map(|r| r.count)
            .collect()
    }
}

/// Which comparison a tuning run or analysis row refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellSelector {
    pub outcome: OutcomeType,
    pub discount: Arm,
    pub stratum: Stratum,
}

/// How `R` (and trim) are chosen per selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OrderChoice {
    Fixed {
        order: usize,
        trim: TrimRange,
    },
    Tuned {
        grid: HyperGrid,
        /// Use the last `t0` pre-treatment periods (all when `None`).
        t0: Option<usize>,
        weighting: TuningWeight,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelConfig {
    /// First post-treatment period label; earlier labels are pre-treatment.
    pub cutover: String,
    pub order: OrderChoice,
    pub bootstrap: BootstrapConfig,
    /// Cells with fewer observations in either arm are unavailable.
    pub min_cell_size: usize,
}

impl PanelConfig {
    pub fn fixed(cutover: impl Into<String>, order: usize, bootstrap: BootstrapConfig) -> Self {
        Self {
            cutover: cutover.into(),
            order: OrderChoice::Fixed {
                order,
                trim: TrimRange::full(),
            },
            bootstrap,
            min_cell_size: 10,
        }
    }
}

/// Builds the pre-treatment placebo periods of one selector.
pub fn placebo_periods(
    data: &PanelDataset,
    selector: CellSelector,
    cutover: &str,
    t0: Option<usize>,
) -> Result<Vec<PlaceboPeriod>> {
    let pre: Vec<String> = data.periods().into_iter().filter(|p| p.as_str() < cutover).collect();
    let skip = t0.map_or(0, |t| pre.len().saturating_sub(t));
    let index = data.index();
    let mut out = Vec::new();
    for p in &pre[skip..] {
        let get = |arm| index.get(&(selector.outcome, p.as_str(), arm, selector.stratum));
        if let (Some(t), Some(c)) = (get(selector.discount), get(Arm::Control)) {
            out.push(PlaceboPeriod {
                label: p.clone(),
                treated: Sample::new(t.clone())?,
                control: Sample::new(c.clone())?,
            });
        }
    }
    if out.is_empty() {
        return Err(GmlmError::invalid(format!(
            "no pre-treatment periods before '{cutover}' for {}/{}/{}",
            selector.outcome, selector.discount, selector.stratum
        )));
    }
    if let Some(t) = t0 {
        if out.len() < t {
            return Err(GmlmError::invalid(format!(
                "{t} pre-treatment periods requested, {} available",
                out.len()
            )));
        }
    }
    Ok(out)
}

/// Tunes `R` and trim for one selector on its pre-treatment periods.
pub fn tune_selector(
    data: &PanelDataset,
    selector: CellSelector,
    cutover: &str,
    grid: &HyperGrid,
    t0: Option<usize>,
    weighting: &TuningWeight,
) -> Result<TuningReport> {
    let periods = placebo_periods(data, selector, cutover, t0)?;
    select_hyperparams(&periods, &ModelSpec::LocationScale, grid, weighting)
}

/// Difference in means and the ratio of standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub diff_in_means: f64,
    pub diff_in_means_se: f64,
    /// `sd₁/sd₀ − 1` with `n − 1` variances.
    pub sd_ratio_minus_one: f64,
    /// Delta-method standard error from the sample kurtoses.
    pub sd_ratio_se: f64,
}

fn kurtosis(s: &Sample) -> f64 {
    let m = s.mean();
    let n = s.len() as f64;
    let m2 = s.values().iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m4 = s.values().iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    if m2 > 0.0 {
        m4 / (m2 * m2)
    } else {
        1.0
    }
}

pub fn baseline(t: &Sample, c: &Sample) -> Baseline {
    let (n1, n0) = (t.len() as f64, c.len() as f64);
    let dim = t.mean() - c.mean();
    let dim_se = (t.variance() / n1 + c.variance() / n0).sqrt();
    let (s1, s0) = (t.std_dev(), c.std_dev());
    let ratio = if s0 > 0.0 { s1 / s0 } else { f64::NAN };
    // Var(log s) ≈ (κ − 1) / (4n).
    let var_log = (kurtosis(t) - 1.0).max(0.0) / (4.0 * n1) + (kurtosis(c) - 1.0).max(0.0) / (4.0 * n0);
    Baseline {
        diff_in_means: dim,
        diff_in_means_se: dim_se,
        sd_ratio_minus_one: ratio - 1.0,
        sd_ratio_se: ratio * var_log.sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Unavailable,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub outcome: OutcomeType,
    pub period: String,
    pub discount: Arm,
    pub stratum: Stratum,
    pub status: CellStatus,
    pub message: Option<String>,
    pub n_treated: usize,
    pub n_control: usize,
    pub estimate: Option<EffectEstimate>,
    pub baseline: Option<Baseline>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub outcome: OutcomeType,
    pub period: String,
    pub discount: Arm,
    pub delta: AggregateEffect,
    pub psi: AggregateEffect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlMeanRow {
    pub outcome: OutcomeType,
    pub period: String,
    pub stratum: Stratum,
    pub mean: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningEntry {
    pub selector: CellSelector,
    pub report: Option<TuningReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelReport {
    pub rows: Vec<EffectRow>,
    pub aggregates: Vec<AggregateRow>,
    pub control_means: Vec<ControlMeanRow>,
    pub tuning: Vec<TuningEntry>,
}

fn cell_key(outcome: OutcomeType, period: &str, discount: Arm, stratum: Stratum) -> u64 {
    let mut words: Vec<u64> = vec![outcome as u64, discount as u64, stratum as u64];
    words.extend(period.bytes().map(u64::from));
    rng::derive_key(tag::CELL, &words)
}

/// Fits every (outcome, post period, discount, stratum) cell.
pub fn analyze_panel(data: &PanelDataset, config: &PanelConfig) -> Result<PanelReport> {
    config.bootstrap.validate()?;
    let periods = data.periods();
    let post: Vec<&String> = periods.iter().filter(|p| **p >= config.cutover).collect();
    if post.is_empty() {
        return Err(GmlmError::invalid(format!(
            "no periods at or after the cutover '{}'",
            config.cutover
        )));
    }
    let outcomes = data.outcome_types();
    let index = data.index();

    let mut selectors = Vec::new();
    for &outcome in &outcomes {
        for &discount in Arm::DISCOUNTS {
            for &stratum in Stratum::ALL {
                selectors.push(CellSelector {
                    outcome,
                    discount,
                    stratum,
                });
            }
        }
    }

    let tuning: Vec<TuningEntry> = match &config.order {
        OrderChoice::Fixed { .. } => Vec::new(),
        OrderChoice::Tuned { grid, t0, weighting } => selectors
            .par_iter()
            .map(|&selector| match tune_selector(data, selector, &config.cutover, grid, *t0, weighting) {
                Ok(report) => {
                    info!(
                        "{}/{}/{}: R = {}",
                        selector.outcome, selector.discount, selector.stratum, report.chosen.order
                    );
                    TuningEntry {
                        selector,
                        report: Some(report),
                        error: None,
                    }
                }
                Err(e) => TuningEntry {
                    selector,
                    report: None,
                    error: Some(e.to_string()),
                },
            })
            .collect(),
    };
    let hyper = |s: &CellSelector| -> std::result::Result<(usize, TrimRange), String> {
        match &config.order {
            OrderChoice::Fixed { order, trim } => Ok((*order, *trim)),
            OrderChoice::Tuned { .. } => {
                let entry = tuning.iter().find(|t| t.selector == *s).expect("tuned selector");
                match (&entry.report, &entry.error) {
                    (Some(r), _) => Ok((r.chosen.order, r.chosen.trim)),
                    (None, e) => Err(format!("tuning failed: {}", e.clone().unwrap_or_default())),
                }
            }
        }
    };

    let mut cells = Vec::new();
    for &outcome in &outcomes {
        for &period in &post {
            for &discount in Arm::DISCOUNTS {
                for &stratum in Stratum::ALL {
                    cells.push((outcome, period.as_str(), discount, stratum));
                }
            }
        }
    }
    let rows: Vec<EffectRow> = cells
        .par_iter()
        .map(|&(outcome, period, discount, stratum)| {
            let t = index.get(&(outcome, period, discount, stratum));
            let c = index.get(&(outcome, period, Arm::Control, stratum));
            let (n1, n0) = (t.map_or(0, Vec::len), c.map_or(0, Vec::len));
            let mut row = EffectRow {
                outcome,
                period: period.to_string(),
                discount,
                stratum,
                status: CellStatus::Unavailable,
                message: None,
                n_treated: n1,
                n_control: n0,
                estimate: None,
                baseline: None,
            };
            if n1 < config.min_cell_size.max(1) || n0 < config.min_cell_size.max(1) {
                row.message = Some(format!("cell sizes {n1}/{n0} below {}", config.min_cell_size));
                return row;
            }
            let ts = Sample::new(t.expect("nonempty").clone()).expect("validated counts");
            let cs = Sample::new(c.expect("nonempty").clone()).expect("validated counts");
            row.baseline = Some(baseline(&ts, &cs));
            let selector = CellSelector {
                outcome,
                discount,
                stratum,
            };
            let (order, trim) = match hyper(&selector) {
                Ok(h) => h,
                Err(msg) => {
                    row.status = CellStatus::Failed;
                    row.message = Some(msg);
                    return row;
                }
            };
            let cfg = config
                .bootstrap
                .derive(&[cell_key(outcome, period, discount, stratum)]);
            match estimate_effects(&ts, &cs, order, trim, &cfg) {
                Ok(e) => {
                    row.status = CellStatus::Ok;
                    row.estimate = Some(e);
                }
                Err(e) => {
                    row.status = CellStatus::Failed;
                    row.message = Some(e.to_string());
                }
            }
            row
        })
        .collect();

    let mut aggregates = Vec::new();
    for &outcome in &outcomes {
        for &period in &post {
            for &discount in Arm::DISCOUNTS {
                let parts: Vec<(&EffectRow, &EffectEstimate)> = rows
                    .iter()
                    .filter(|r| r.outcome == outcome && r.period == *period && r.discount == discount)
                    .filter_map(|r| r.estimate.as_ref().map(|e| (r, e)))
                    .collect();
                if parts.len() != Stratum::ALL.len() {
                    continue;
                }
                let total: usize = parts.iter().map(|(r, _)| r.n_treated + r.n_control).sum();
                let props: Vec<(String, f64)> = parts
                    .iter()
                    .map(|(r, _)| {
                        (
                            r.stratum.to_string(),
                            (r.n_treated + r.n_control) as f64 / total as f64,
                        )
                    })
                    .collect();
                let values = |f: &dyn Fn(&EffectEstimate) -> (f64, f64)| -> Vec<StratumValue> {
                    parts
                        .iter()
                        .map(|(r, e)| {
                            let (value, se) = f(e);
                            StratumValue {
                                stratum: r.stratum.to_string(),
                                value,
                                se,
                            }
                        })
                        .collect()
                };
                aggregates.push(AggregateRow {
                    outcome,
                    period: period.to_string(),
                    discount,
                    delta: aggregate_strata(&values(&|e| (e.delta, e.delta_se)), &props)?,
                    psi: aggregate_strata(&values(&|e| (e.psi, e.psi_se)), &props)?,
                });
            }
        }
    }

    let mut control_means = Vec::new();
    for &outcome in &outcomes {
        for period in &periods {
            for &stratum in Stratum::ALL {
                if let Some(v) = index.get(&(outcome, period.as_str(), Arm::Control, stratum)) {
                    control_means.push(ControlMeanRow {
                        outcome,
                        period: period.clone(),
                        stratum,
                        mean: v.iter().sum::<f64>() / v.len() as f64,
                        n: v.len(),
                    });
                }
            }
        }
    }

    Ok(PanelReport {
        rows,
        aggregates,
        control_means,
        tuning,
    })
}
