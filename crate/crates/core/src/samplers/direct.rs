use rand::Rng;

use super::{budget_split, ReleaseResult, SamplerKind, Tally};
use crate::dataset::Context;
use crate::error::{PcorError, Result};
use crate::utility::{Scorer, UtilityValue};

/// Largest `t` enumerated without an explicit override.
pub const DEFAULT_ENUMERATION_CAP: usize = 24;

/// Every matching context for the scorer's target, ascending by index.
pub fn matching_contexts(scorer: &Scorer<'_>, cap: usize) -> Result<Vec<(Context, UtilityValue)>> {
    let t = scorer.t();
    if t > cap {
        return Err(PcorError::EnumerationCap { t, cap });
    }
    let mut out = Vec::new();
    for index in 0..1u64 << t {
        let c = Context::from_index(index, t);
        let u = scorer.score(&c);
        if u.is_finite() {
            out.push((c, u));
        }
    }
    Ok(out)
}

/// Enumerates all `2^t` contexts and draws once from the matching ones.
pub fn direct_release<R: Rng + ?Sized>(
    scorer: &Scorer<'_>,
    total_epsilon: f64,
    cap: usize,
    rng: &mut R,
) -> Result<ReleaseResult> {
    let mut tally = Tally::new(budget_split(SamplerKind::Direct, 1, total_epsilon)?);
    let pool = matching_contexts(scorer, cap)?;
    tally.expand(1u64 << scorer.t());
    if pool.is_empty() {
        return Err(PcorError::NoValidContext {
            target: scorer.target().id,
        });
    }
    tally.finish(SamplerKind::Direct, pool, rng)
}
