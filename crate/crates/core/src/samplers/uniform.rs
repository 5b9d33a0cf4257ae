use rand::Rng;

use super::{budget_split, ReleaseResult, SamplerKind, Tally};
use crate::dataset::Context;
use crate::error::{PcorError, Result};
use crate::utility::Scorer;

/// Draws uniform contexts (each bit on with probability 1/2) until `n`
/// matching ones are collected, then draws once from that multiset.
pub fn uniform_release<R: Rng + ?Sized>(
    scorer: &Scorer<'_>,
    total_epsilon: f64,
    n: usize,
    max_attempts: u64,
    rng: &mut R,
) -> Result<ReleaseResult> {
    let mut tally = Tally::new(budget_split(SamplerKind::Uniform, n, total_epsilon)?);
    let t = scorer.t();
    let mask = Context::ones(t).index();
    let mut pool = Vec::with_capacity(n);
    let mut attempts = 0u64;
    while pool.len() < n {
        if attempts == max_attempts {
            return Err(PcorError::SamplingExhausted {
                attempts,
                found: pool.len(),
                requested: n,
            });
        }
        attempts += 1;
        let c = Context::from_index(rng.random::<u64>() & mask, t);
        let u = scorer.score(&c);
        if u.is_finite() {
            pool.push((c, u));
        }
    }
    tally.expand(attempts);
    tally.finish(SamplerKind::Uniform, pool, rng)
}
