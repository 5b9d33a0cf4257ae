use std::collections::HashSet;

use rand::Rng;

use super::{budget_split, require_matching, ReleaseResult, SamplerKind, Tally};
use crate::dataset::Context;
use crate::error::Result;
use crate::utility::{Scorer, UtilityValue};

/// Differentially private depth-first search. The stack top is marked
/// visited, one of its matching unvisited neighbors is chosen by the
/// exponential mechanism and pushed; dead ends are popped. Stops once `n`
/// contexts are visited or the stack empties, then draws from Visited.
pub fn dfs_release<R: Rng + ?Sized>(
    scorer: &Scorer<'_>,
    total_epsilon: f64,
    n: usize,
    start: Context,
    rng: &mut R,
) -> Result<ReleaseResult> {
    let mut tally = Tally::new(budget_split(SamplerKind::Dfs, n, total_epsilon)?);
    let u0 = require_matching(scorer, &start)?;
    let t = scorer.t();
    let mut stack: Vec<(Context, UtilityValue)> = vec![(start, u0)];
    let mut seen: HashSet<Context> = HashSet::new();
    let mut visited = Vec::with_capacity(n);
    let mut children: Vec<(Context, UtilityValue)> = Vec::with_capacity(t);
    let mut utilities: Vec<UtilityValue> = Vec::with_capacity(t);
    while visited.len() < n {
        let Some(&(top, u)) = stack.last() else { break };
        if seen.insert(top) {
            visited.push((top, u));
        }
        children.clear();
        for pos in 0..t {
            let c = top.flipped(pos);
            if seen.contains(&c) {
                continue;
            }
            let u = scorer.score(&c);
            if u.is_finite() {
                children.push((c, u));
            }
        }
        tally.expand(t as u64);
        if children.is_empty() {
            stack.pop();
            continue;
        }
        utilities.clear();
        utilities.extend(children.iter().map(|c| c.1));
        let chosen = tally.draw(&utilities, rng)?;
        stack.push(children[chosen]);
    }
    tally.finish(SamplerKind::Dfs, visited, rng)
}
