use rand::Rng;

use super::{budget_split, require_matching, ReleaseResult, SamplerKind, Tally};
use crate::dataset::Context;
use crate::error::Result;
use crate::utility::Scorer;

/// Walks the context graph from `start`, moving to a uniformly chosen
/// matching neighbor each step. Neighbors are tried without replacement and
/// the walk ends early when none of the current context's neighbors match.
/// The visited contexts (a multiset) feed one final draw.
pub fn random_walk_release<R: Rng + ?Sized>(
    scorer: &Scorer<'_>,
    total_epsilon: f64,
    n: usize,
    start: Context,
    rng: &mut R,
) -> Result<ReleaseResult> {
    let mut tally = Tally::new(budget_split(SamplerKind::RandomWalk, n, total_epsilon)?);
    let u0 = require_matching(scorer, &start)?;
    let t = scorer.t();
    let mut pool = Vec::with_capacity(n);
    pool.push((start, u0));
    let mut current = start;
    let mut untried: Vec<usize> = Vec::with_capacity(t);
    'walk: while pool.len() < n {
        untried.clear();
        untried.extend(0..t);
        while !untried.is_empty() {
            let pos = untried.swap_remove(rng.random_range(0..untried.len()));
            tally.expand(1);
            let next = current.flipped(pos);
            let u = scorer.score(&next);
            if u.is_finite() {
                pool.push((next, u));
                current = next;
                continue 'walk;
            }
        }
        break;
    }
    tally.finish(SamplerKind::RandomWalk, pool, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::{AlwaysOutlier, DetectorSpec};
    use crate::samplers::testkit::grid;
    use crate::utility::UtilitySpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stuck_start_releases_itself() {
        // salaries(), target 8: check for a matching context without matching neighbors
        let d = crate::dataset::fixtures::salaries();
        let spec = DetectorSpec::grubbs();
        let scorer = Scorer::new(&d, 8, &spec, UtilitySpec::population_size()).unwrap();
        let isolated = (0..512u64)
            .map(|i| Context::from_index(i, 9))
            .find(|c| scorer.is_matching(c) && (0..9).all(|p| !scorer.is_matching(&c.flipped(p))));
        if let Some(c) = isolated {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let r = random_walk_release(&scorer, 0.2, 10, c, &mut rng).unwrap();
            assert_eq!(r.sample_set.contexts, vec![c]);
            assert_eq!(r.private_context, c);
            assert_eq!(r.expansions, 9);
        }
    }

    #[test]
    fn all_matching_walk_has_n_steps_of_unit_flips() {
        let d = grid();
        let scorer = Scorer::new(&d, 1, &AlwaysOutlier, UtilitySpec::population_size()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let r = random_walk_release(&scorer, 0.2, 30, Context::ones(9), &mut rng).unwrap();
        let path = &r.sample_set.contexts;
        assert!(path.len() <= 30);
        assert!(r.expansions <= 30 * 9);
        for w in path.windows(2) {
            assert_eq!(w[0].hamming_distance(&w[1]), 1);
        }
        assert!(path.iter().all(|c| scorer.is_matching(c)));
    }

    #[test]
    fn same_seed_same_walk() {
        let d = grid();
        let spec = DetectorSpec::grubbs();
        let scorer = Scorer::new(&d, 1, &spec, UtilitySpec::population_size()).unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            random_walk_release(&scorer, 0.2, 50, Context::ones(9), &mut rng).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.sample_set, b.sample_set);
        assert_eq!(a.private_context, b.private_context);
    }
}
