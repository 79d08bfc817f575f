use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::metrics::Ranking;

pub const TIE_BREAK: &str = "seeded-shuffle";

/// Seeded uniform order. The first `budget` ids are a uniform sample without
/// replacement and the remainder follows in shuffled order, so the full
/// ranking is a single seeded permutation.
pub fn select_random(ids: &[String], budget: usize, seed: u64) -> Ranking {
    debug_assert!(budget <= ids.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = ids.to_vec();
    order.shuffle(&mut rng);
    Ranking::from_order("random", order, TIE_BREAK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("i{i}")).collect()
    }

    #[test]
    fn deterministic_per_seed() {
        let ids = ids(50);
        assert_eq!(select_random(&ids, 10, 9), select_random(&ids, 10, 9));
        assert_ne!(select_random(&ids, 10, 9).order, select_random(&ids, 10, 10).order);
    }

    #[test]
    fn full_budget_is_permutation() {
        let ids = ids(30);
        let r = select_random(&ids, 30, 1);
        assert!(r.is_permutation_of(ids.iter().map(String::as_str)));
    }

    #[test]
    fn inclusion_frequency_is_uniform() {
        let ids = ids(20);
        let trials = 10_000;
        let mut hits = vec![0usize; ids.len()];
        for seed in 0..trials {
            let r = select_random(&ids, 10, seed as u64);
            for id in r.top(10) {
                let i: usize = id[1..].parse().unwrap();
                hits[i] += 1;
            }
        }
        for (i, h) in hits.iter().enumerate() {
            let f = *h as f64 / trials as f64;
            assert!((f - 0.5).abs() <= 0.02, "item {i}: {f}");
        }
    }
}
