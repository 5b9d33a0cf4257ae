//! Repeated releases over a set of targets, with utility ratios against the
//! exact maximum and run-time measurements.

pub mod fixture;
pub mod stats;

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Context, Dataset};
use crate::detectors::{DetectorKind, DetectorSpec};
use crate::error::{PcorError, Result};
use crate::oracle::{enumerate_coe, records_with_matching_context, ReferenceFile, ReferenceHeader};
use crate::samplers::{budget_split, find_starting_context, release, SamplerKind, SamplerSpec};
use crate::utility::{Scorer, UtilityKind, UtilitySpec};

pub use fixture::{generate_fixture, FixtureMeta, FixtureParams};
pub use stats::{emit_stats, read_stats_csv, StatsFormat, StatsRow};

/// What a random stream is used for; keeps streams for different purposes
/// apart even when their indices coincide.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Release = 1,
    Start = 2,
    Targets = 3,
    Neighbor = 4,
    Fixture = 5,
}

/// Independent stream `index` of the run seeded with `seed`.
pub fn rng_for(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 56) ^ index);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetSelection {
    Ids(Vec<u64>),
    /// This many records drawn from those with at least one matching context.
    Random(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub detector: DetectorSpec,
    pub utility: UtilityKind,
    /// Used for every target when set; otherwise each target gets its own
    /// starting context from [`find_starting_context`].
    pub starting_context: Option<Context>,
    pub sampler: SamplerSpec,
    pub reps: usize,
    pub seed: u64,
    pub targets: TargetSelection,
    /// Off for byte-reproducible output.
    pub timing: bool,
    pub cap: usize,
    pub start_attempts: u64,
}

impl RunConfig {
    pub fn new(detector: DetectorSpec, sampler: SamplerSpec, targets: TargetSelection) -> Self {
        RunConfig {
            detector,
            utility: UtilityKind::PopulationSize,
            starting_context: None,
            sampler,
            reps: 200,
            seed: 0,
            targets,
            timing: true,
            cap: crate::samplers::DEFAULT_ENUMERATION_CAP,
            start_attempts: 100_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < 1 {
            return Err(PcorError::Config("repetitions must be at least 1".into()));
        }
        self.detector.validate()?;
        budget_split(self.sampler.kind, self.sampler.n, self.sampler.total_epsilon)?;
        Ok(())
    }

    pub fn label(&self) -> String {
        format!(
            "{}/{}/{}/eps={}/n={}",
            self.sampler.kind,
            self.detector.label(),
            self.utility,
            self.sampler.total_epsilon,
            self.sampler.n
        )
    }

    /// SHA-256 of the configuration's JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// One repetition for one target. Failed repetitions keep `error` and leave
/// the release fields empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepRow {
    pub target: u64,
    pub rep: usize,
    pub context: Option<Context>,
    pub utility: Option<f64>,
    pub max_utility: Option<f64>,
    pub ratio: Option<f64>,
    pub samples: usize,
    pub invocations: u64,
    pub expansions: u64,
    pub epsilon1: f64,
    pub wall_ms: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub sampler: SamplerKind,
    pub detector: String,
    pub utility: UtilityKind,
    pub epsilon: f64,
    pub n: usize,
    pub reps: usize,
    pub targets: Vec<u64>,
    pub ok: usize,
    pub errors: usize,
    pub mean_ratio: Option<f64>,
    pub sd_ratio: Option<f64>,
    /// 90% interval: mean +/- 1.645 sd / sqrt(count).
    pub ci90: Option<(f64, f64)>,
    pub mean_utility: Option<f64>,
    pub time_min_ms: Option<f64>,
    pub time_mean_ms: Option<f64>,
    pub time_max_ms: Option<f64>,
    #[serde(skip)]
    pub rows: Vec<RepRow>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn sample_sd(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    if xs.len() < 2 {
        return Some(0.0);
    }
    Some((xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt())
}

/// Summary statistics recomputed from raw rows.
pub fn summarize(config: &RunConfig, targets: Vec<u64>, rows: Vec<RepRow>) -> RunSummary {
    let ok: Vec<&RepRow> = rows.iter().filter(|r| r.error.is_none()).collect();
    let ratios: Vec<f64> = ok.iter().filter_map(|r| r.ratio).collect();
    let utilities: Vec<f64> = ok.iter().filter_map(|r| r.utility).collect();
    let times: Vec<f64> = ok.iter().filter_map(|r| r.wall_ms).collect();
    let mean_ratio = mean(&ratios);
    let sd_ratio = sample_sd(&ratios);
    let ci90 = mean_ratio.zip(sd_ratio).map(|(m, s)| {
        let half = 1.645 * s / (ratios.len() as f64).sqrt();
        (m - half, m + half)
    });
    RunSummary {
        label: config.label(),
        sampler: config.sampler.kind,
        detector: config.detector.label(),
        utility: config.utility,
        epsilon: config.sampler.total_epsilon,
        n: config.sampler.n,
        reps: config.reps,
        targets,
        ok: ok.len(),
        errors: rows.len() - ok.len(),
        mean_ratio,
        sd_ratio,
        ci90,
        mean_utility: mean(&utilities),
        time_min_ms: times.iter().copied().reduce(f64::min),
        time_mean_ms: mean(&times),
        time_max_ms: times.iter().copied().reduce(f64::max),
        rows,
    }
}

pub fn resolve_targets(dataset: &Dataset, config: &RunConfig) -> Result<Vec<u64>> {
    match &config.targets {
        TargetSelection::Ids(ids) => {
            for &id in ids {
                dataset.position_of(id).ok_or(PcorError::UnknownRecord(id))?;
            }
            Ok(ids.clone())
        }
        TargetSelection::Random(count) => {
            let pool: Vec<u64> = records_with_matching_context(dataset, &config.detector, config.cap)?
                .into_iter()
                .collect();
            let mut rng = rng_for(config.seed, Purpose::Targets, 0);
            let k = (*count).min(pool.len());
            Ok(sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i]).collect())
        }
    }
}

/// Everything a target's repetitions share.
struct TargetPlan {
    id: u64,
    utility: UtilitySpec,
    start: Option<Context>,
    max_utility: Option<f64>,
    /// Set when the target cannot be released at all.
    error: Option<String>,
}

fn plan_target(
    dataset: &Dataset,
    config: &RunConfig,
    index: usize,
    id: u64,
    reference: Option<&ReferenceFile>,
) -> Result<TargetPlan> {
    let needs_start = config.sampler.kind.needs_start() || config.utility == UtilityKind::Overlap;
    let mut plan = TargetPlan {
        id,
        utility: UtilitySpec::population_size(),
        start: config.starting_context,
        max_utility: None,
        error: None,
    };
    if needs_start && plan.start.is_none() {
        let mut rng = rng_for(config.seed, Purpose::Start, index as u64);
        match find_starting_context(dataset, id, &config.detector, config.start_attempts, &mut rng) {
            Ok(c) => plan.start = Some(c),
            Err(e) => {
                plan.error = Some(e.to_string());
                return Ok(plan);
            }
        }
    }
    if config.utility == UtilityKind::Overlap {
        plan.utility = UtilitySpec::overlap(plan.start.expect("start resolved above"));
    }
    plan.max_utility = match reference {
        Some(r) => {
            r.check(&ReferenceHeader::for_config(dataset, &config.detector, &plan.utility)?)?;
            r.coe(id).max_utility()
        }
        None => enumerate_coe(dataset, id, &config.detector, &plan.utility, config.cap)?.max_utility(),
    };
    Ok(plan)
}

fn run_rep(dataset: &Dataset, config: &RunConfig, plan: &TargetPlan, stream: u64, rep: usize) -> RepRow {
    let mut row = RepRow {
        target: plan.id,
        rep,
        context: None,
        utility: None,
        max_utility: plan.max_utility,
        ratio: None,
        samples: 0,
        invocations: 0,
        expansions: 0,
        epsilon1: budget_split(config.sampler.kind, config.sampler.n, config.sampler.total_epsilon).unwrap_or(0.0),
        wall_ms: None,
        error: plan.error.clone(),
    };
    if row.error.is_some() {
        return row;
    }
    let mut spec = config.sampler.clone();
    spec.starting_context = plan.start;
    spec.enumeration_cap = config.cap;
    let mut rng = rng_for(config.seed, Purpose::Release, stream);
    let outcome = Scorer::new(dataset, plan.id, &config.detector, plan.utility.clone())
        .and_then(|scorer| release(&scorer, &spec, &mut rng));
    match outcome {
        Ok(r) => {
            let u = r.utility.finite();
            row.context = Some(r.private_context);
            row.utility = u;
            row.ratio = match (u, plan.max_utility) {
                (Some(u), Some(m)) if m > 0.0 => Some(u / m),
                (Some(_), Some(_)) => Some(1.0),
                _ => None,
            };
            row.samples = r.sample_set.contexts.len();
            row.invocations = r.mechanism_invocations;
            row.expansions = r.expansions;
            row.epsilon1 = r.epsilon1_used;
            if config.timing {
                row.wall_ms = Some(r.wall_time.as_secs_f64() * 1e3);
            }
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Runs `config.reps` independent releases per target. Repetitions run in
/// parallel, each on its own random stream, and are merged in (target, rep)
/// order.
pub fn run_experiment(dataset: &Dataset, config: &RunConfig, reference: Option<&ReferenceFile>) -> Result<RunSummary> {
    config.validate()?;
    let targets = resolve_targets(dataset, config)?;
    let plans: Vec<TargetPlan> = targets
        .iter()
        .enumerate()
        .map(|(i, &id)| plan_target(dataset, config, i, id, reference))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..plans.len())
        .flat_map(|p| (0..config.reps).map(move |r| (p, r)))
        .collect();
    let rows: Vec<RepRow> = jobs
        .par_iter()
        .map(|&(p, rep)| run_rep(dataset, config, &plans[p], (p * config.reps + rep) as u64, rep))
        .collect();
    Ok(summarize(config, targets, rows))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Epsilon,
    N,
    Sampler,
    Detector,
    Utility,
}

impl FromStr for SweepAxis {
    type Err = PcorError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "epsilon" | "eps" => Ok(SweepAxis::Epsilon),
            "n" => Ok(SweepAxis::N),
            "sampler" => Ok(SweepAxis::Sampler),
            "detector" => Ok(SweepAxis::Detector),
            "utility" => Ok(SweepAxis::Utility),
            other => Err(PcorError::Config(format!("unknown sweep axis `{other}`"))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Epsilon => "epsilon",
            SweepAxis::N => "n",
            SweepAxis::Sampler => "sampler",
            SweepAxis::Detector => "detector",
            SweepAxis::Utility => "utility",
        })
    }
}

/// `base` with one axis set to `value`.
pub fn with_axis(base: &RunConfig, axis: SweepAxis, value: &str) -> Result<RunConfig> {
    let bad = |what: &str| PcorError::Config(format!("bad {what} `{value}` in sweep"));
    let mut c = base.clone();
    match axis {
        SweepAxis::Epsilon => c.sampler.total_epsilon = value.parse().map_err(|_| bad("epsilon"))?,
        SweepAxis::N => c.sampler.n = value.parse().map_err(|_| bad("n"))?,
        SweepAxis::Sampler => c.sampler.kind = value.parse()?,
        SweepAxis::Detector => c.detector.kind = value.parse::<DetectorKind>()?,
        SweepAxis::Utility => c.utility = value.parse()?,
    }
    c.validate()?;
    Ok(c)
}

/// One run per value; every run uses the base seed.
pub fn sweep(
    dataset: &Dataset,
    base: &RunConfig,
    axis: SweepAxis,
    values: &[String],
    reference: Option<&ReferenceFile>,
) -> Result<Vec<RunSummary>> {
    values
        .iter()
        .map(|v| run_experiment(dataset, &with_axis(base, axis, v)?, reference))
        .collect()
}
