//! Empirical checks of the privacy guarantee: neighboring datasets, how much
//! a target's matching-context set moves between neighbors, and the exact
//! worst-case selection-probability ratio of the direct mechanism.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::detectors::OutlierVerifier;
use crate::error::{PcorError, Result};
use crate::experiments::rng_for;
use crate::mechanism::log_probabilities;
use crate::oracle::{enumerate_coe, CoeSet};
use crate::utility::{UtilitySpec, UtilityValue};

/// Label written next to match percentages so readers know the metric.
pub const MATCH_METRIC: &str = "jaccard";

#[derive(Clone, Debug)]
pub struct Neighbor {
    pub dataset: Dataset,
    pub removed: Vec<u64>,
}

/// Removes `delta` records chosen uniformly without replacement. `delta = 0`
/// returns an identical copy.
pub fn make_neighbor<R: Rng + ?Sized>(dataset: &Dataset, delta: usize, rng: &mut R) -> Result<Neighbor> {
    make_neighbor_keeping(dataset, delta, None, rng)
}

/// As [`make_neighbor`], never removing the record `keep`.
pub fn make_neighbor_keeping<R: Rng + ?Sized>(
    dataset: &Dataset,
    delta: usize,
    keep: Option<u64>,
    rng: &mut R,
) -> Result<Neighbor> {
    let n = dataset.len();
    if delta >= n {
        return Err(PcorError::Precondition(format!("cannot remove {delta} of {n} records")));
    }
    let kept = match keep {
        Some(id) => Some(dataset.position_of(id).ok_or(PcorError::UnknownRecord(id))?),
        None => None,
    };
    let pool = n - kept.is_some() as usize;
    let mut positions: Vec<usize> = sample(rng, pool, delta)
        .into_iter()
        .map(|p| match kept {
            Some(k) if p >= k => p + 1,
            _ => p,
        })
        .collect();
    positions.sort_unstable();
    let removed = positions.iter().map(|&p| dataset.records()[p].id).collect();
    Ok(Neighbor {
        dataset: dataset.without_positions(&positions),
        removed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MatchOutcome {
    /// Jaccard similarity of the two COE sets, in percent.
    pub percent: f64,
    /// Both sets were empty; `percent` is 100 by convention.
    pub vacuous: bool,
}

pub fn jaccard(a: &CoeSet, b: &CoeSet) -> MatchOutcome {
    let inter = a.intersection_len(b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        return MatchOutcome {
            percent: 100.0,
            vacuous: true,
        };
    }
    MatchOutcome {
        percent: 100.0 * inter as f64 / union as f64,
        vacuous: false,
    }
}

/// COE match of `target` between two datasets.
pub fn coe_match(
    dataset: &Dataset,
    neighbor: &Dataset,
    target: u64,
    verifier: &dyn OutlierVerifier,
    cap: usize,
) -> Result<MatchOutcome> {
    for d in [dataset, neighbor] {
        if d.position_of(target).is_none() {
            return Err(PcorError::UnknownRecord(target));
        }
    }
    let u = UtilitySpec::population_size();
    let a = enumerate_coe(dataset, target, verifier, &u, cap)?;
    let b = enumerate_coe(neighbor, target, verifier, &u, cap)?;
    Ok(jaccard(&a, &b))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioReport {
    pub target: u64,
    pub epsilon: f64,
    pub coe_equal: bool,
    pub intersection: usize,
    /// Largest `|ln p1(c) - ln p2(c)|` over the shared contexts; covers the
    /// ratio in both directions.
    pub max_log_ratio: f64,
    pub max_ratio: f64,
    pub bound: f64,
    pub within_bound: bool,
    /// No shared context, so nothing was compared.
    pub empty: bool,
}

/// Exact worst-case probability ratio of the direct mechanism between two
/// COE sets, each side at `epsilon1 = epsilon / 2` over its own full set.
pub fn ratio_between(a: &CoeSet, b: &CoeSet, epsilon: f64) -> Result<RatioReport> {
    let bound = epsilon.exp();
    let mut report = RatioReport {
        target: a.target,
        epsilon,
        coe_equal: a.context_set() == b.context_set(),
        intersection: a.intersection_len(b),
        max_log_ratio: 0.0,
        max_ratio: 1.0,
        bound,
        within_bound: true,
        empty: false,
    };
    if report.intersection == 0 {
        report.empty = true;
        return Ok(report);
    }
    let eps1 = epsilon / 2.0;
    let lp = |s: &CoeSet| -> Result<Vec<f64>> {
        let u: Vec<UtilityValue> = s.contexts.values().map(|&v| UtilityValue::Finite(v)).collect();
        log_probabilities(&u, eps1)
    };
    let (la, lb) = (lp(a)?, lp(b)?);
    let index_b: std::collections::HashMap<_, _> = b.contexts.keys().zip(&lb).collect();
    for (c, x) in a.contexts.keys().zip(&la) {
        if let Some(&&y) = index_b.get(c) {
            report.max_log_ratio = report.max_log_ratio.max((x - y).abs());
        }
    }
    report.max_ratio = report.max_log_ratio.exp();
    report.within_bound = report.max_ratio <= bound + 1e-9;
    Ok(report)
}

pub fn probability_ratio_audit(
    dataset: &Dataset,
    neighbor: &Dataset,
    target: u64,
    verifier: &dyn OutlierVerifier,
    utility: &UtilitySpec,
    epsilon: f64,
    cap: usize,
) -> Result<RatioReport> {
    for d in [dataset, neighbor] {
        if d.position_of(target).is_none() {
            return Err(PcorError::UnknownRecord(target));
        }
    }
    let a = enumerate_coe(dataset, target, verifier, utility, cap)?;
    let b = enumerate_coe(neighbor, target, verifier, utility, cap)?;
    ratio_between(&a, &b, epsilon)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatchRow {
    pub detector: String,
    pub delta: usize,
    pub metric: &'static str,
    /// Mean match over the compared pairs; `None` when every pair was skipped.
    pub mean_percent: Option<f64>,
    pub pairs: usize,
    pub vacuous: usize,
    /// Pairs where the target had no matching context left in the neighbor.
    pub skipped: usize,
}

/// Mean COE match per removal size. Each (target, trial) pair uses its own
/// random stream, so results do not depend on thread scheduling. Targets
/// are never removed; pairs where the neighbor leaves the target without a
/// matching context are skipped and counted.
pub fn coe_match_table(
    dataset: &Dataset,
    verifier: &dyn OutlierVerifier,
    deltas: &[usize],
    targets: &[u64],
    trials: usize,
    seed: u64,
    cap: usize,
) -> Result<Vec<MatchRow>> {
    let u = UtilitySpec::population_size();
    let base: Vec<CoeSet> = targets
        .iter()
        .map(|&t| enumerate_coe(dataset, t, verifier, &u, cap))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (di, &delta) in deltas.iter().enumerate() {
        let jobs: Vec<(usize, usize)> = (0..targets.len())
            .flat_map(|i| (0..trials).map(move |k| (i, k)))
            .collect();
        let outcomes: Vec<Option<MatchOutcome>> = jobs
            .par_iter()
            .map(|&(i, k)| -> Result<Option<MatchOutcome>> {
                let stream = ((di * targets.len() + i) * trials + k) as u64;
                let mut rng = rng_for(seed, crate::experiments::Purpose::Neighbor, stream);
                let nb = make_neighbor_keeping(dataset, delta, Some(targets[i]), &mut rng)?;
                let other = enumerate_coe(&nb.dataset, targets[i], verifier, &u, cap)?;
                if other.is_empty() && !base[i].is_empty() {
                    return Ok(None);
                }
                Ok(Some(jaccard(&base[i], &other)))
            })
            .collect::<Result<_>>()?;
        let kept: Vec<MatchOutcome> = outcomes.iter().flatten().copied().collect();
        rows.push(MatchRow {
            detector: verifier.label(),
            delta,
            metric: MATCH_METRIC,
            mean_percent: (!kept.is_empty()).then(|| kept.iter().map(|m| m.percent).sum::<f64>() / kept.len() as f64),
            pairs: kept.len(),
            vacuous: kept.iter().filter(|m| m.vacuous).count(),
            skipped: outcomes.len() - kept.len(),
        });
    }
    Ok(rows)
}

/// Ratio audits over `pairs` random (target, neighbor) pairs, cycling
/// through `targets`.
#[allow(clippy::too_many_arguments)]
pub fn ratio_audit_pairs(
    dataset: &Dataset,
    verifier: &dyn OutlierVerifier,
    utility: &UtilitySpec,
    targets: &[u64],
    pairs: usize,
    delta: usize,
    epsilon: f64,
    seed: u64,
    cap: usize,
) -> Result<Vec<RatioReport>> {
    if targets.is_empty() {
        return Ok(Vec::new());
    }
    let base: Vec<CoeSet> = targets
        .iter()
        .map(|&t| enumerate_coe(dataset, t, verifier, utility, cap))
        .collect::<Result<_>>()?;
    (0..pairs)
        .into_par_iter()
        .map(|k| {
            let i = k % targets.len();
            let mut rng = rng_for(seed, crate::experiments::Purpose::Neighbor, k as u64);
            let nb = make_neighbor_keeping(dataset, delta, Some(targets[i]), &mut rng)?;
            let other = enumerate_coe(&nb.dataset, targets[i], verifier, utility, cap)?;
            ratio_between(&base[i], &other, epsilon)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioSummary {
    pub pairs: usize,
    pub equal_coe_pairs: usize,
    pub equal_coe_within_bound: usize,
    pub unequal_coe_pairs: usize,
    pub unequal_coe_within_bound: usize,
    pub empty_intersections: usize,
    pub worst_ratio: f64,
    pub bound: f64,
}

pub fn summarize_ratios(reports: &[RatioReport], epsilon: f64) -> RatioSummary {
    let compared = reports.iter().filter(|r| !r.empty);
    let (equal, unequal): (Vec<&RatioReport>, Vec<&RatioReport>) = compared.partition(|r| r.coe_equal);
    RatioSummary {
        pairs: reports.len(),
        equal_coe_pairs: equal.len(),
        equal_coe_within_bound: equal.iter().filter(|r| r.within_bound).count(),
        unequal_coe_pairs: unequal.len(),
        unequal_coe_within_bound: unequal.iter().filter(|r| r.within_bound).count(),
        empty_intersections: reports.iter().filter(|r| r.empty).count(),
        worst_ratio: reports
            .iter()
            .filter(|r| !r.empty)
            .map(|r| r.max_ratio)
            .fold(1.0, f64::max),
        bound: epsilon.exp(),
    }
}
