//! Deterministic outlier verification `f_M(D_C, V)` over a population's metric values.
//!
//! Every detector works on the metric values sorted ascending, which makes
//! the verdict a function of the value multiset alone.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::{Population, Record};
use crate::error::{PcorError, Result};

/// Added to mean reachability distances so duplicated points get a large
/// but finite local reachability density.
const LRD_EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Grubbs,
    Lof,
    Histogram,
}

impl FromStr for DetectorKind {
    type Err = PcorError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "grubbs" => Ok(DetectorKind::Grubbs),
            "lof" => Ok(DetectorKind::Lof),
            "histogram" | "hist" => Ok(DetectorKind::Histogram),
            other => Err(PcorError::Config(format!("unknown detector `{other}`"))),
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectorKind::Grubbs => "grubbs",
            DetectorKind::Lof => "lof",
            DetectorKind::Histogram => "histogram",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub kind: DetectorKind,
    pub grubbs_alpha: f64,
    pub lof_k: usize,
    pub lof_threshold: f64,
    pub hist_freq_coeff: f64,
    /// Overrides the per-kind default minimum population size.
    pub min_population: Option<usize>,
}

impl DetectorSpec {
    pub fn new(kind: DetectorKind) -> Self {
        DetectorSpec {
            kind,
            grubbs_alpha: 0.05,
            lof_k: 10,
            lof_threshold: 1.5,
            hist_freq_coeff: 2.5e-3,
            min_population: None,
        }
    }

    pub fn grubbs() -> Self {
        Self::new(DetectorKind::Grubbs)
    }

    pub fn lof() -> Self {
        Self::new(DetectorKind::Lof)
    }

    pub fn histogram() -> Self {
        Self::new(DetectorKind::Histogram)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.grubbs_alpha > 0.0 && self.grubbs_alpha < 1.0) {
            return Err(PcorError::Config(format!(
                "grubbs alpha {} not in (0, 1)",
                self.grubbs_alpha
            )));
        }
        if self.lof_k < 1 {
            return Err(PcorError::Config("lof k must be at least 1".into()));
        }
        if !(self.lof_threshold > 0.0) {
            return Err(PcorError::Config(format!(
                "lof threshold {} must be positive",
                self.lof_threshold
            )));
        }
        if !(self.hist_freq_coeff > 0.0) {
            return Err(PcorError::Config(format!(
                "histogram coefficient {} must be positive",
                self.hist_freq_coeff
            )));
        }
        Ok(())
    }

    /// Canonical one-line description used in fingerprints and metadata.
    pub fn label(&self) -> String {
        match self.kind {
            DetectorKind::Grubbs => format!("grubbs(alpha={})", self.grubbs_alpha),
            DetectorKind::Lof => format!("lof(k={},threshold={})", self.lof_k, self.lof_threshold),
            DetectorKind::Histogram => format!("histogram(coeff={})", self.hist_freq_coeff),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Verdict {
    pub is_outlier: bool,
    /// Test statistic, LOF score or bin count. Diagnostic only.
    pub score: f64,
}

impl Verdict {
    pub const NOT_OUTLIER: Verdict = Verdict {
        is_outlier: false,
        score: 0.0,
    };
}

/// An outlier verification function over sorted metric values.
pub trait OutlierVerifier: Send + Sync {
    /// Populations smaller than this are never outlying.
    fn min_population(&self) -> usize;

    /// `sorted` is ascending and contains `target` at least once.
    fn verify_sorted(&self, sorted: &[f64], target: f64) -> Verdict;

    /// Per-position outlier flags for every value of `sorted`.
    fn outlier_flags(&self, sorted: &[f64]) -> Vec<bool> {
        if sorted.len() < self.min_population() {
            return vec![false; sorted.len()];
        }
        sorted
            .iter()
            .map(|&x| self.verify_sorted(sorted, x).is_outlier)
            .collect()
    }

    fn label(&self) -> String;
}

impl OutlierVerifier for DetectorSpec {
    fn min_population(&self) -> usize {
        self.min_population.unwrap_or(match self.kind {
            DetectorKind::Grubbs | DetectorKind::Histogram => 3,
            DetectorKind::Lof => (self.lof_k + 1).max(3),
        })
    }

    fn verify_sorted(&self, sorted: &[f64], target: f64) -> Verdict {
        if sorted.len() < self.min_population() {
            return Verdict::NOT_OUTLIER;
        }
        match self.kind {
            DetectorKind::Grubbs => grubbs_verdict(sorted, target, self.grubbs_alpha),
            DetectorKind::Lof => {
                if sorted.len() < self.lof_k + 1 {
                    return Verdict::NOT_OUTLIER;
                }
                let score = lof_score_sorted(sorted, target, self.lof_k);
                Verdict {
                    is_outlier: score > self.lof_threshold,
                    score,
                }
            }
            DetectorKind::Histogram => histogram_sorted(sorted, target, self.hist_freq_coeff),
        }
    }

    fn outlier_flags(&self, sorted: &[f64]) -> Vec<bool> {
        let n = sorted.len();
        if n < self.min_population() {
            return vec![false; n];
        }
        match self.kind {
            DetectorKind::Grubbs => {
                // only the extreme values can be flagged
                let mut flags = vec![false; n];
                for &end in &[0, n - 1] {
                    if grubbs_verdict(sorted, sorted[end], self.grubbs_alpha).is_outlier {
                        for (i, &x) in sorted.iter().enumerate() {
                            if x == sorted[end] {
                                flags[i] = true;
                            }
                        }
                    }
                }
                flags
            }
            DetectorKind::Histogram => {
                let Some(bins) = Bins::new(sorted) else {
                    return vec![false; n];
                };
                let mut counts = vec![0usize; bins.count];
                let idx: Vec<usize> = sorted.iter().map(|&x| bins.index(x)).collect();
                for &b in &idx {
                    counts[b] += 1;
                }
                let cutoff = self.hist_freq_coeff * n as f64;
                idx.iter().map(|&b| (counts[b] as f64) < cutoff).collect()
            }
            DetectorKind::Lof => {
                if n < self.lof_k + 1 || sorted[0] == sorted[n - 1] {
                    return vec![false; n];
                }
                let mut lof = Lof::new(sorted, self.lof_k);
                (0..n).map(|i| lof.score_at(i) > self.lof_threshold).collect()
            }
        }
    }

    fn label(&self) -> String {
        DetectorSpec::label(self)
    }
}

/// Verifier that declares the target an outlier in every non-empty
/// population. Used to exercise the search algorithms on a graph where every
/// context containing the target matches.
#[derive(Clone, Copy, Debug, Default)]
pub struct AlwaysOutlier;

impl OutlierVerifier for AlwaysOutlier {
    fn min_population(&self) -> usize {
        1
    }

    fn verify_sorted(&self, _sorted: &[f64], _target: f64) -> Verdict {
        Verdict {
            is_outlier: true,
            score: 1.0,
        }
    }

    fn label(&self) -> String {
        "always".into()
    }
}

/// Decides whether `target` is an outlier in `population`.
///
/// Returns a negative verdict when the target is not a member or the
/// population is below the detector's minimum size.
pub fn verify(population: &Population, target: &Record, spec: &DetectorSpec) -> Verdict {
    verify_with(spec, population, target)
}

pub fn verify_with<V: OutlierVerifier + ?Sized>(verifier: &V, population: &Population, target: &Record) -> Verdict {
    if !population.contains_id(target.id) || population.len() < verifier.min_population() {
        return Verdict::NOT_OUTLIER;
    }
    let mut sorted = population.metric_values.clone();
    sorted.sort_by(f64::total_cmp);
    verifier.verify_sorted(&sorted, target.metric)
}

fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `|target - mean| / s` with the sample standard deviation; 0 when `s` is 0.
pub fn grubbs_statistic(values: &[f64], target: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let (mean, sd) = mean_and_sd(values);
    if !(sd > 0.0) {
        return 0.0;
    }
    (target - mean).abs() / sd
}

/// Two-sided Grubbs critical value for `n` observations at level `alpha`:
/// `((n-1)/sqrt(n)) * sqrt(t^2 / (n - 2 + t^2))` with `t` the upper
/// `alpha/(2n)` quantile of Student's t on `n - 2` degrees of freedom.
pub fn grubbs_critical_value(n: usize, alpha: f64) -> f64 {
    if n < 3 {
        return f64::INFINITY;
    }
    let nf = n as f64;
    let dist = StudentsT::new(0.0, 1.0, nf - 2.0).expect("positive degrees of freedom");
    let t = dist.inverse_cdf(1.0 - alpha / (2.0 * nf));
    let t2 = t * t;
    (nf - 1.0) / nf.sqrt() * (t2 / (nf - 2.0 + t2)).sqrt()
}

fn grubbs_verdict(sorted: &[f64], target: f64, alpha: f64) -> Verdict {
    let n = sorted.len();
    if n < 3 {
        return Verdict::NOT_OUTLIER;
    }
    let (mean, sd) = mean_and_sd(sorted);
    if !(sd > 0.0) {
        return Verdict::NOT_OUTLIER;
    }
    let dev = (target - mean).abs();
    let max_dev = (sorted[0] - mean).abs().max((sorted[n - 1] - mean).abs());
    let g = dev / sd;
    Verdict {
        is_outlier: dev >= max_dev && g > grubbs_critical_value(n, alpha),
        score: g,
    }
}

/// Local outlier factor of `target` among `values` (which must contain it)
/// using absolute difference as the distance. Returns 0 when fewer than
/// `k + 1` values are supplied.
pub fn lof_score(values: &[f64], target: f64, k: usize) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    lof_score_sorted(&sorted, target, k)
}

fn lof_score_sorted(sorted: &[f64], target: f64, k: usize) -> f64 {
    let n = sorted.len();
    if k == 0 || n < k + 1 {
        return 0.0;
    }
    if sorted[0] == sorted[n - 1] {
        return 1.0;
    }
    let Ok(pos) = sorted.binary_search_by(|x| x.total_cmp(&target)) else {
        return 0.0;
    };
    Lof::new(sorted, k).score_at(pos)
}

/// LOF over a sorted one-dimensional sample. Neighbourhoods are contiguous
/// index ranges, so k-distances take O(k) and are memoised per call.
struct Lof<'a> {
    x: &'a [f64],
    k: usize,
    kdist: HashMap<usize, f64>,
    lrd: HashMap<usize, f64>,
}

impl<'a> Lof<'a> {
    fn new(x: &'a [f64], k: usize) -> Self {
        Lof {
            x,
            k,
            kdist: HashMap::new(),
            lrd: HashMap::new(),
        }
    }

    fn dist(&self, i: usize, j: usize) -> f64 {
        (self.x[i] - self.x[j]).abs()
    }

    fn k_distance(&mut self, i: usize) -> f64 {
        if let Some(&d) = self.kdist.get(&i) {
            return d;
        }
        let n = self.x.len();
        let (mut l, mut r) = (i as isize - 1, i + 1);
        let mut d = 0.0;
        for _ in 0..self.k {
            let dl = if l >= 0 {
                self.dist(i, l as usize)
            } else {
                f64::INFINITY
            };
            let dr = if r < n { self.dist(i, r) } else { f64::INFINITY };
            if dl <= dr {
                d = dl;
                l -= 1;
            } else {
                d = dr;
                r += 1;
            }
        }
        self.kdist.insert(i, d);
        d
    }

    /// Indices within k-distance of `i`, excluding `i`; ties are included.
    fn neighborhood(&mut self, i: usize) -> impl Iterator<Item = usize> {
        let kd = self.k_distance(i);
        let n = self.x.len();
        let mut lo = i;
        while lo > 0 && self.dist(i, lo - 1) <= kd {
            lo -= 1;
        }
        let mut hi = i;
        while hi + 1 < n && self.dist(i, hi + 1) <= kd {
            hi += 1;
        }
        (lo..=hi).filter(move |&j| j != i)
    }

    fn local_reachability_density(&mut self, i: usize) -> f64 {
        if let Some(&v) = self.lrd.get(&i) {
            return v;
        }
        let hood: Vec<usize> = self.neighborhood(i).collect();
        let mut total = 0.0;
        for &o in &hood {
            total += self.k_distance(o).max(self.dist(i, o));
        }
        let v = 1.0 / (total / hood.len() as f64 + LRD_EPS);
        self.lrd.insert(i, v);
        v
    }

    fn score_at(&mut self, i: usize) -> f64 {
        let hood: Vec<usize> = self.neighborhood(i).collect();
        let mut total = 0.0;
        for &o in &hood {
            total += self.local_reachability_density(o);
        }
        (total / hood.len() as f64) / self.local_reachability_density(i)
    }
}

struct Bins {
    min: f64,
    width: f64,
    count: usize,
}

impl Bins {
    /// Equal-width bins over `[min, max]` of a sorted sample; `None` if all values are equal.
    fn new(sorted: &[f64]) -> Option<Bins> {
        let n = sorted.len();
        let (min, max) = (sorted[0], sorted[n - 1]);
        if !(max > min) {
            return None;
        }
        let count = ((n as f64).sqrt().round() as usize).max(1);
        Some(Bins {
            min,
            width: (max - min) / count as f64,
            count,
        })
    }

    fn index(&self, x: f64) -> usize {
        (((x - self.min) / self.width) as usize).min(self.count - 1)
    }
}

/// Number of equal-width bins used for a population of size `n`.
pub fn histogram_bin_count(n: usize) -> usize {
    ((n as f64).sqrt().round() as usize).max(1)
}

/// Flags `target` when its bin holds fewer than `coeff * |values|` values.
pub fn histogram_verdict(values: &[f64], target: f64, coeff: f64) -> Verdict {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    histogram_sorted(&sorted, target, coeff)
}

fn histogram_sorted(sorted: &[f64], target: f64, coeff: f64) -> Verdict {
    let n = sorted.len();
    if n < 2 {
        return Verdict::NOT_OUTLIER;
    }
    let Some(bins) = Bins::new(sorted) else {
        return Verdict {
            is_outlier: false,
            score: n as f64,
        };
    };
    let tb = bins.index(target);
    let count = sorted.iter().filter(|&&x| bins.index(x) == tb).count();
    Verdict {
        is_outlier: (count as f64) < coeff * n as f64,
        score: count as f64,
    }
}
