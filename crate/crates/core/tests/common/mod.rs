//! Synthetic fixtures shared by the integration and acceptance tests.

#![allow(dead_code)]

use gmlm::panel::{Arm, OutcomeType, PanelDataset, PanelRecord, Stratum};
use gmlm::rng;
use rand_distr::{Distribution, LogNormal};

/// Planted location-scale effect of one (outcome, discount, stratum).
#[derive(Debug, Clone, Copy)]
pub struct Planted {
    pub outcome: OutcomeType,
    pub discount: Arm,
    pub stratum: Stratum,
    pub alpha: f64,
    pub sigma: f64,
}

impl Planted {
    pub fn is_null(&self) -> bool {
        self.alpha == 0.0 && self.sigma == 1.0
    }
}

pub struct PanelSpec {
    pub units_per_group: usize,
    pub pre_periods: usize,
    pub post_periods: usize,
    pub effects: Vec<Planted>,
    pub seed: u64,
}

impl PanelSpec {
    pub fn period_label(&self, t: usize) -> String {
        format!("p{t:03}")
    }

    pub fn cutover(&self) -> String {
        self.period_label(self.pre_periods)
    }

    pub fn effect(&self, outcome: OutcomeType, discount: Arm, stratum: Stratum) -> Planted {
        self.effects
            .iter()
            .copied()
            .find(|e| e.outcome == outcome && e.discount == discount && e.stratum == stratum)
            .unwrap_or(Planted {
                outcome,
                discount,
                stratum,
                alpha: 0.0,
                sigma: 1.0,
            })
    }
}

fn baseline(outcome: OutcomeType, stratum: Stratum) -> LogNormal<f64> {
    let (mu, sd) = match (outcome, stratum) {
        (OutcomeType::Integrated, Stratum::User) => (1.0, 0.6),
        (OutcomeType::Integrated, Stratum::Nonuser) => (0.3, 0.8),
        (OutcomeType::Nonintegrated, Stratum::User) => (0.5, 0.7),
        (OutcomeType::Nonintegrated, Stratum::Nonuser) => (0.0, 0.9),
    };
    LogNormal::new(mu, sd).unwrap()
}

/// Every unit appears in every period with both outcome types. Treated
/// outcomes after the cutover are `α + σ·Y₀` with `Y₀` a fresh baseline
/// draw; before the cutover all arms share the baseline.
pub fn synthetic_panel(spec: &PanelSpec) -> PanelDataset {
    let mut records = Vec::new();
    let mut unit = 0u64;
    for &arm in Arm::ALL {
        for &stratum in Stratum::ALL {
            for _ in 0..spec.units_per_group {
                unit += 1;
                let mut r = rng::stream(spec.seed, &[unit]);
                for t in 0..spec.pre_periods + spec.post_periods {
                    for &outcome in OutcomeType::ALL {
                        let y0 = baseline(outcome, stratum).sample(&mut r);
                        let count = if arm == Arm::Control || t < spec.pre_periods {
                            y0
                        } else {
                            let e = spec.effect(outcome, arm, stratum);
                            e.alpha + e.sigma * y0
                        };
                        records.push(PanelRecord {
                            unit_id: format!("u{unit}"),
                            arm,
                            stratum,
                            period: spec.period_label(t),
                            outcome_type: outcome,
                            count,
                        });
                    }
                }
            }
        }
    }
    PanelDataset::new(records).unwrap()
}

/// Every 20% discount selector is null; the 50% discount carries planted
/// effects. Null cells never share a control group, so they are
/// independent.
pub fn default_effects() -> Vec<Planted> {
    use Arm::*;
    use OutcomeType::*;
    use Stratum::*;
    let e = |outcome, discount, stratum, alpha, sigma| Planted {
        outcome,
        discount,
        stratum,
        alpha,
        sigma,
    };
    vec![
        e(Integrated, D50, User, 0.5, 1.2),
        e(Integrated, D50, Nonuser, 0.8, 0.8),
        e(Nonintegrated, D50, User, 0.3, 1.0),
        e(Nonintegrated, D50, Nonuser, 0.0, 1.3),
    ]
}

/// Asymptotic Kolmogorov distribution tail `P(√n D > x)`.
pub fn kolmogorov_pvalue(d: f64, n: usize) -> f64 {
    let x = d * (n as f64).sqrt();
    if x < 1e-3 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let sign = if k as i64 % 2 == 1 { 1.0 } else { -1.0 };
        p += sign * (-2.0 * k * k * x * x).exp();
    }
    (2.0 * p).clamp(0.0, 1.0)
}

/// Kolmogorov-Smirnov distance of a sample from Uniform(0, 1).
pub fn ks_uniform(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, p)| ((i as f64 + 1.0) / n - p).max(p - i as f64 / n))
        .fold(0.0, f64::max)
}
