//! Distances between an ideal and a mitigated distribution, and the rate of
//! improvement over the unmitigated baseline.
//!
//! Conventions: natural logarithm for the KL divergence, mitigated
//! probabilities floored at `1e-12` inside the log, `0 · log 0 = 0`.
//! Set-level figures are arithmetic means of per-sample distances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probdist::ProbDist;

pub const KLD_FLOOR: f64 = 1e-12;

fn check(p: &ProbDist, q: &ProbDist) {
    assert_eq!(p.width(), q.width(), "distributions differ in width");
}

/// Neumaier-compensated sum, so that distances near zero keep their
/// precision on wide registers.
fn compensated_sum(terms: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for t in terms {
        let s = sum + t;
        c += if sum.abs() >= t.abs() { (sum - s) + t } else { (t - s) + sum };
        sum = s;
    }
    (sum, c)
}

/// Mean squared difference over the `2^n` outcomes.
pub fn mse(p: &ProbDist, q: &ProbDist) -> f64 {
    check(p, q);
    let (s, c) = compensated_sum(p.values().iter().zip(q.values()).map(|(a, b)| (a - b) * (a - b)));
    (s + c) / p.len() as f64
}

/// `Σ_{p_i > 0} p_i ln(p_i / max(q_i, 1e-12))`, clamped at zero (the floor
/// can push it below zero by at most `2^n · 1e-12`).
pub fn kld(ideal: &ProbDist, mitigated: &ProbDist) -> f64 {
    check(ideal, mitigated);
    let (s, c) = compensated_sum(
        ideal
            .values()
            .iter()
            .zip(mitigated.values())
            .filter(|(&p, _)| p > 0.0)
            .map(|(&p, &q)| p * (p / q.max(KLD_FLOOR)).ln()),
    );
    let raw = s + c;
    if raw < 0.0 {
        if raw < -(ideal.len() as f64) * KLD_FLOOR {
            log::warn!("KL divergence {raw:e} below the floor bound; clamped to 0");
        }
        return 0.0;
    }
    raw
}

/// One minus the squared Bhattacharyya coefficient.
pub fn infidelity(p: &ProbDist, q: &ProbDist) -> f64 {
    check(p, q);
    let (hi, lo) = compensated_sum(p.values().iter().zip(q.values()).map(|(a, b)| (a * b).sqrt()));
    // 1 - (hi + lo)^2 without cancelling the low part
    let r = (-hi).mul_add(hi, 1.0) - 2.0 * hi * lo - lo * lo;
    r.clamp(0.0, 1.0)
}

/// Percent reduction of a distance relative to the unmitigated one.
pub fn improvement_rate(unmitigated: f64, mitigated: f64) -> Result<f64> {
    if unmitigated == 0.0 {
        return Err(Error::UndefinedRate);
    }
    Ok((unmitigated - mitigated) / unmitigated * 100.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Distances {
    pub mse: f64,
    pub kld: f64,
    pub infidelity: f64,
}

impl Distances {
    pub fn between(ideal: &ProbDist, mitigated: &ProbDist) -> Self {
        Self {
            mse: mse(ideal, mitigated),
            kld: kld(ideal, mitigated),
            infidelity: infidelity(ideal, mitigated),
        }
    }

    /// Arithmetic mean of per-sample distances, in input order.
    pub fn mean_over<'a>(pairs: impl IntoIterator<Item = (&'a ProbDist, &'a ProbDist)>) -> Self {
        let mut acc = Self::default();
        let mut n = 0usize;
        for (ideal, mitigated) in pairs {
            let d = Self::between(ideal, mitigated);
            acc.mse += d.mse;
            acc.kld += d.kld;
            acc.infidelity += d.infidelity;
            n += 1;
        }
        if n > 0 {
            let k = n as f64;
            acc.mse /= k;
            acc.kld /= k;
            acc.infidelity /= k;
        }
        acc
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Mse => self.mse,
            Metric::Kld => self.kld,
            Metric::Infidelity => self.infidelity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mse,
    Kld,
    #[serde(rename = "if")]
    Infidelity,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Mse, Metric::Kld, Metric::Infidelity];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "MSE",
            Metric::Kld => "KLD",
            Metric::Infidelity => "IF",
        }
    }
}

/// Distances of one method plus its improvement over the unmitigated
/// baseline (percent, may be negative).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub distances: Distances,
    pub r_mse: f64,
    pub r_kld: f64,
    pub r_if: f64,
}

impl MetricsReport {
    pub fn new(unmitigated: &Distances, mitigated: Distances) -> Result<Self> {
        Ok(Self {
            distances: mitigated,
            r_mse: improvement_rate(unmitigated.mse, mitigated.mse)?,
            r_kld: improvement_rate(unmitigated.kld, mitigated.kld)?,
            r_if: improvement_rate(unmitigated.infidelity, mitigated.infidelity)?,
        })
    }
}
