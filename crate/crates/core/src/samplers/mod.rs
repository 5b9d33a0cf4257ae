//! Private release algorithms: direct enumeration, uniform sampling, random
//! walk, and differentially private DFS and BFS over the context graph.
//!
//! Every algorithm ends with one exponential-mechanism draw over the contexts
//! it collected, so the released context is always a matching context.

mod bfs;
mod dfs;
mod direct;
mod random_walk;
mod uniform;

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use bfs::bfs_release;
pub use dfs::dfs_release;
pub use direct::{direct_release, matching_contexts, DEFAULT_ENUMERATION_CAP};
pub use random_walk::random_walk_release;
pub use uniform::uniform_release;

use crate::dataset::{Context, Dataset};
use crate::detectors::OutlierVerifier;
use crate::error::{PcorError, Result};
use crate::mechanism::draw_index;
use crate::utility::{Scorer, UtilitySpec, UtilityValue};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Direct,
    Uniform,
    #[serde(rename = "rwalk")]
    RandomWalk,
    Dfs,
    Bfs,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 5] = [
        SamplerKind::Direct,
        SamplerKind::Uniform,
        SamplerKind::RandomWalk,
        SamplerKind::Dfs,
        SamplerKind::Bfs,
    ];

    /// Graph searches start from a known matching context.
    pub fn needs_start(&self) -> bool {
        matches!(self, SamplerKind::RandomWalk | SamplerKind::Dfs | SamplerKind::Bfs)
    }
}

impl FromStr for SamplerKind {
    type Err = PcorError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(SamplerKind::Direct),
            "uniform" => Ok(SamplerKind::Uniform),
            "rwalk" | "random-walk" | "randomwalk" => Ok(SamplerKind::RandomWalk),
            "dfs" => Ok(SamplerKind::Dfs),
            "bfs" => Ok(SamplerKind::Bfs),
            other => Err(PcorError::Config(format!("unknown sampler `{other}`"))),
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplerKind::Direct => "direct",
            SamplerKind::Uniform => "uniform",
            SamplerKind::RandomWalk => "rwalk",
            SamplerKind::Dfs => "dfs",
            SamplerKind::Bfs => "bfs",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    pub n: usize,
    pub total_epsilon: f64,
    pub starting_context: Option<Context>,
    pub max_attempts: u64,
    pub enumeration_cap: usize,
}

impl SamplerSpec {
    pub fn new(kind: SamplerKind, total_epsilon: f64) -> Self {
        SamplerSpec {
            kind,
            n: 50,
            total_epsilon,
            starting_context: None,
            max_attempts: 10_000_000,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_start(mut self, start: Context) -> Self {
        self.starting_context = Some(start);
        self
    }

    pub fn epsilon1(&self) -> Result<f64> {
        budget_split(self.kind, self.n, self.total_epsilon)
    }
}

/// Contexts collected by a sampler, in collection order. A multiset for the
/// random walk and uniform sampling; a set for the searches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub contexts: Vec<Context>,
    pub provenance: SamplerKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReleaseResult {
    pub private_context: Context,
    pub utility: UtilityValue,
    pub sample_set: SampleSet,
    pub epsilon1_used: f64,
    pub mechanism_invocations: u64,
    /// Contexts examined while searching (neighbors generated, uniform draws,
    /// or enumerated contexts).
    pub expansions: u64,
    /// Candidates weighed across all mechanism invocations.
    pub mechanism_work: u64,
    pub wall_time: Duration,
}

/// Per-invocation `epsilon1` for a total budget: `epsilon / 2` for the
/// single-draw algorithms, `epsilon / (2n + 2)` for DFS and BFS, which make
/// up to `n + 1` draws.
pub fn budget_split(kind: SamplerKind, n: usize, total_epsilon: f64) -> Result<f64> {
    if !(total_epsilon > 0.0) || !total_epsilon.is_finite() {
        return Err(PcorError::Config(format!(
            "total epsilon {total_epsilon} must be positive"
        )));
    }
    if n < 1 {
        return Err(PcorError::Config("sample count n must be at least 1".into()));
    }
    Ok(match kind {
        SamplerKind::Direct | SamplerKind::Uniform | SamplerKind::RandomWalk => total_epsilon / 2.0,
        SamplerKind::Dfs | SamplerKind::Bfs => total_epsilon / (2.0 * n as f64 + 2.0),
    })
}

/// Runs the sampler named by `spec`.
pub fn release<R: Rng + ?Sized>(scorer: &Scorer<'_>, spec: &SamplerSpec, rng: &mut R) -> Result<ReleaseResult> {
    let eps = spec.total_epsilon;
    let start = || {
        spec.starting_context
            .ok_or_else(|| PcorError::Config(format!("sampler {} needs a starting context", spec.kind)))
    };
    match spec.kind {
        SamplerKind::Direct => direct_release(scorer, eps, spec.enumeration_cap, rng),
        SamplerKind::Uniform => uniform_release(scorer, eps, spec.n, spec.max_attempts, rng),
        SamplerKind::RandomWalk => random_walk_release(scorer, eps, spec.n, start()?, rng),
        SamplerKind::Dfs => dfs_release(scorer, eps, spec.n, start()?, rng),
        SamplerKind::Bfs => bfs_release(scorer, eps, spec.n, start()?, rng),
    }
}

/// Finds some matching context for the target: the full context if it
/// matches, else up to `max_attempts` uniform contexts with the target's own
/// bits forced on. Runs on the data owner's side before any release and
/// spends no privacy budget.
pub fn find_starting_context<R: Rng + ?Sized>(
    dataset: &Dataset,
    target_id: u64,
    verifier: &dyn OutlierVerifier,
    max_attempts: u64,
    rng: &mut R,
) -> Result<Context> {
    let scorer = Scorer::new(dataset, target_id, verifier, UtilitySpec::population_size())?;
    let t = scorer.t();
    let full = Context::ones(t);
    if scorer.is_matching(&full) {
        return Ok(full);
    }
    let own = scorer.target_context();
    let mask = full.index();
    for _ in 0..max_attempts {
        let candidate = Context::from_index((rng.random::<u64>() & mask) | own.index(), t);
        if scorer.is_matching(&candidate) {
            return Ok(candidate);
        }
    }
    Err(PcorError::NoStartingContext {
        target: target_id,
        attempts: max_attempts,
    })
}

/// Bookkeeping shared by the samplers.
pub(crate) struct Tally {
    started: Instant,
    epsilon1: f64,
    invocations: u64,
    expansions: u64,
    mechanism_work: u64,
}

impl Tally {
    pub(crate) fn new(epsilon1: f64) -> Self {
        Tally {
            started: Instant::now(),
            epsilon1,
            invocations: 0,
            expansions: 0,
            mechanism_work: 0,
        }
    }

    pub(crate) fn expand(&mut self, count: u64) {
        self.expansions += count;
    }

    /// One exponential-mechanism draw over `utilities`.
    pub(crate) fn draw<R: Rng + ?Sized>(&mut self, utilities: &[UtilityValue], rng: &mut R) -> Result<usize> {
        self.invocations += 1;
        self.mechanism_work += utilities.len() as u64;
        draw_index(utilities, self.epsilon1, rng)
    }

    pub(crate) fn finish<R: Rng + ?Sized>(
        mut self,
        kind: SamplerKind,
        pool: Vec<(Context, UtilityValue)>,
        rng: &mut R,
    ) -> Result<ReleaseResult> {
        let utilities: Vec<UtilityValue> = pool.iter().map(|(_, u)| *u).collect();
        let chosen = self.draw(&utilities, rng)?;
        Ok(ReleaseResult {
            private_context: pool[chosen].0,
            utility: pool[chosen].1,
            sample_set: SampleSet {
                contexts: pool.into_iter().map(|(c, _)| c).collect(),
                provenance: kind,
            },
            epsilon1_used: self.epsilon1,
            mechanism_invocations: self.invocations,
            expansions: self.expansions,
            mechanism_work: self.mechanism_work,
            wall_time: self.started.elapsed(),
        })
    }
}

pub(crate) fn require_matching(scorer: &Scorer<'_>, start: &Context) -> Result<UtilityValue> {
    if start.len() != scorer.t() {
        return Err(PcorError::Precondition(format!(
            "starting context has {} bits, schema has t = {}",
            start.len(),
            scorer.t()
        )));
    }
    let u = scorer.score(start);
    if !u.is_finite() {
        return Err(PcorError::Precondition(format!(
            "starting context {start} is not matching for target {}",
            scorer.target().id
        )));
    }
    Ok(u)
}
