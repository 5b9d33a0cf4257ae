//! Context utilities `u_V(D, C)` with sensitivity 1.
//!
//! [`population_size_utility`] and [`overlap_utility`] evaluate a single
//! context through [`filter`] and [`verify`]. [`Scorer`] is the fast path the
//! samplers use: it scans precomputed record masks in metric order, so the
//! population comes out already sorted for the detector.

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{filter, Context, Dataset, Record};
use crate::detectors::{verify, verify_with, DetectorSpec, OutlierVerifier};
use crate::error::{PcorError, Result};

/// Utility of a context, with a distinguished marker for non-matching contexts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum UtilityValue {
    NegInfinity,
    Finite(f64),
}

impl UtilityValue {
    pub fn finite(&self) -> Option<f64> {
        match *self {
            UtilityValue::Finite(v) => Some(v),
            UtilityValue::NegInfinity => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, UtilityValue::Finite(_))
    }
}

impl fmt::Display for UtilityValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UtilityValue::NegInfinity => f.write_str("-inf"),
            UtilityValue::Finite(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UtilityKind {
    #[serde(rename = "popsize")]
    PopulationSize,
    Overlap,
}

impl FromStr for UtilityKind {
    type Err = PcorError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "popsize" | "population" | "population-size" => Ok(UtilityKind::PopulationSize),
            "overlap" => Ok(UtilityKind::Overlap),
            other => Err(PcorError::Config(format!("unknown utility `{other}`"))),
        }
    }
}

impl fmt::Display for UtilityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UtilityKind::PopulationSize => "popsize",
            UtilityKind::Overlap => "overlap",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    pub kind: UtilityKind,
    /// The starting context `C_V`; required for [`UtilityKind::Overlap`].
    pub starting_context: Option<Context>,
}

impl UtilitySpec {
    pub fn population_size() -> Self {
        UtilitySpec {
            kind: UtilityKind::PopulationSize,
            starting_context: None,
        }
    }

    pub fn overlap(starting: Context) -> Self {
        UtilitySpec {
            kind: UtilityKind::Overlap,
            starting_context: Some(starting),
        }
    }

    /// Every shipped utility changes by at most one when a record is added or removed.
    pub fn sensitivity(&self) -> f64 {
        1.0
    }

    pub fn validate(&self, t: usize) -> Result<()> {
        match (self.kind, self.starting_context) {
            (UtilityKind::Overlap, None) => Err(PcorError::Config("overlap utility needs a starting context".into())),
            (_, Some(c)) if c.len() != t => Err(PcorError::Config(format!(
                "starting context has {} bits, schema has t = {t}",
                c.len()
            ))),
            _ => Ok(()),
        }
    }
}

/// `|D_C|` when `C` is matching for `target`, otherwise `NegInfinity`.
pub fn population_size_utility(
    dataset: &Dataset,
    context: &Context,
    target: &Record,
    detector: &DetectorSpec,
) -> UtilityValue {
    let population = filter(dataset, context);
    if verify(&population, target, detector).is_outlier {
        UtilityValue::Finite(population.len() as f64)
    } else {
        UtilityValue::NegInfinity
    }
}

/// `|D_C ∩ D_{C_V}|` (by record id) when `C` is matching, otherwise `NegInfinity`.
pub fn overlap_utility(
    dataset: &Dataset,
    context: &Context,
    target: &Record,
    detector: &DetectorSpec,
    starting: &Context,
) -> UtilityValue {
    overlap_utility_with(dataset, context, target, detector, starting)
}

pub(crate) fn overlap_utility_with<V: OutlierVerifier + ?Sized>(
    dataset: &Dataset,
    context: &Context,
    target: &Record,
    verifier: &V,
    starting: &Context,
) -> UtilityValue {
    let population = filter(dataset, context);
    if !verify_with(verifier, &population, target).is_outlier {
        return UtilityValue::NegInfinity;
    }
    let start: HashSet<u64> = filter(dataset, starting).member_ids.into_iter().collect();
    let shared = population.member_ids.iter().filter(|id| start.contains(id)).count();
    UtilityValue::Finite(shared as f64)
}

/// Utility through the naive filter-then-verify route for any verifier.
pub fn utility_with<V: OutlierVerifier + ?Sized>(
    dataset: &Dataset,
    context: &Context,
    target: &Record,
    verifier: &V,
    utility: &UtilitySpec,
) -> UtilityValue {
    match (utility.kind, utility.starting_context) {
        (UtilityKind::Overlap, Some(start)) => overlap_utility_with(dataset, context, target, verifier, &start),
        (UtilityKind::Overlap, None) => UtilityValue::NegInfinity,
        (UtilityKind::PopulationSize, _) => {
            let population = filter(dataset, context);
            if verify_with(verifier, &population, target).is_outlier {
                UtilityValue::Finite(population.len() as f64)
            } else {
                UtilityValue::NegInfinity
            }
        }
    }
}

/// Evaluation of one context for one target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub utility: UtilityValue,
    pub population: usize,
}

/// Binds a dataset, a target, a verifier and a utility into a fast context
/// evaluator. Not shared across threads; each release owns one.
pub struct Scorer<'a> {
    dataset: &'a Dataset,
    target: &'a Record,
    target_mask: u64,
    verifier: &'a dyn OutlierVerifier,
    utility: UtilitySpec,
    /// 1 for records inside the starting context, in metric order.
    starting_members: Option<Vec<usize>>,
    buf: RefCell<Vec<f64>>,
    evaluations: Cell<u64>,
}

impl<'a> Scorer<'a> {
    pub fn new(
        dataset: &'a Dataset,
        target_id: u64,
        verifier: &'a dyn OutlierVerifier,
        utility: UtilitySpec,
    ) -> Result<Self> {
        utility.validate(dataset.schema().t())?;
        let pos = dataset
            .position_of(target_id)
            .ok_or(PcorError::UnknownRecord(target_id))?;
        let target = &dataset.records()[pos];
        let starting_members = utility
            .starting_context
            .filter(|_| utility.kind == UtilityKind::Overlap)
            .map(|start| {
                let c = start.raw();
                dataset.sorted_masks().iter().map(|&m| (m & !c == 0) as usize).collect()
            });
        Ok(Scorer {
            dataset,
            target,
            target_mask: dataset.mask_at(pos),
            verifier,
            utility,
            starting_members,
            buf: RefCell::new(vec![0.0; dataset.len()]),
            evaluations: Cell::new(0),
        })
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    pub fn target(&self) -> &'a Record {
        self.target
    }

    pub fn utility_spec(&self) -> &UtilitySpec {
        &self.utility
    }

    pub fn t(&self) -> usize {
        self.dataset.schema().t()
    }

    /// The target's own context: one bit per attribute.
    pub fn target_context(&self) -> Context {
        Context::from_index(self.target_mask, self.t())
    }

    /// Number of contexts evaluated so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations.get()
    }

    pub fn contains_target(&self, context: &Context) -> bool {
        context.raw() & self.target_mask == self.target_mask
    }

    pub fn evaluate(&self, context: &Context) -> Evaluation {
        self.evaluations.set(self.evaluations.get() + 1);
        let c = context.raw();
        if c & self.target_mask != self.target_mask {
            return Evaluation {
                utility: UtilityValue::NegInfinity,
                population: 0,
            };
        }
        // Branchless compaction: every value is written, and the cursor only
        // advances past members. Population scans dominate the run time.
        let mut values = self.buf.borrow_mut();
        let metrics = self.dataset.sorted_metrics();
        let mut population = 0usize;
        let mut shared = 0usize;
        for (i, &m) in self.dataset.sorted_masks().iter().enumerate() {
            let hit = (m & !c == 0) as usize;
            values[population] = metrics[i];
            population += hit;
        }
        if let Some(start) = &self.starting_members {
            for (i, &m) in self.dataset.sorted_masks().iter().enumerate() {
                shared += ((m & !c == 0) as usize) & start[i];
            }
        }
        let values = &values[..population];
        let matching = population >= self.verifier.min_population()
            && self.verifier.verify_sorted(values, self.target.metric).is_outlier;
        let utility = if !matching {
            UtilityValue::NegInfinity
        } else if self.starting_members.is_some() {
            UtilityValue::Finite(shared as f64)
        } else {
            UtilityValue::Finite(population as f64)
        };
        Evaluation { utility, population }
    }

    pub fn score(&self, context: &Context) -> UtilityValue {
        self.evaluate(context).utility
    }

    pub fn is_matching(&self, context: &Context) -> bool {
        self.score(context).is_finite()
    }
}
