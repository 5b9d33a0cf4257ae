use std::collections::HashSet;

use rand::Rng;

use super::{budget_split, require_matching, ReleaseResult, SamplerKind, Tally};
use crate::dataset::Context;
use crate::error::Result;
use crate::utility::{Scorer, UtilityValue};

/// Differentially private best-first search. Each step the exponential
/// mechanism picks one context from the frontier, which moves to Visited and
/// contributes its matching, not yet seen neighbors to the frontier. Stops
/// once `n` contexts are visited or the frontier empties, then draws from
/// Visited.
pub fn bfs_release<R: Rng + ?Sized>(
    scorer: &Scorer<'_>,
    total_epsilon: f64,
    n: usize,
    start: Context,
    rng: &mut R,
) -> Result<ReleaseResult> {
    let mut tally = Tally::new(budget_split(SamplerKind::Bfs, n, total_epsilon)?);
    let u0 = require_matching(scorer, &start)?;
    let t = scorer.t();
    // frontier keeps insertion order so draws replay exactly
    let mut frontier: Vec<(Context, UtilityValue)> = vec![(start, u0)];
    let mut seen: HashSet<Context> = HashSet::from([start]);
    let mut visited = Vec::with_capacity(n);
    let mut utilities: Vec<UtilityValue> = Vec::new();
    while visited.len() < n && !frontier.is_empty() {
        utilities.clear();
        utilities.extend(frontier.iter().map(|c| c.1));
        let chosen = tally.draw(&utilities, rng)?;
        let (c, u) = frontier.remove(chosen);
        visited.push((c, u));
        for pos in 0..t {
            let next = c.flipped(pos);
            if seen.contains(&next) {
                continue;
            }
            let u = scorer.score(&next);
            if u.is_finite() {
                seen.insert(next);
                frontier.push((next, u));
            }
        }
        tally.expand(t as u64);
    }
    tally.finish(SamplerKind::Bfs, visited, rng)
}
