use crate::metrics::ProbVector;

use super::MutantPredictionSet;

/// `1 - Σ p²`. Higher is more suspicious.
pub fn score_gini(p: &ProbVector) -> f64 {
    1.0 - p.probs().iter().map(|x| x * x).sum::<f64>()
}

/// Shannon entropy in nats, with `0 ln 0 = 0`. Higher is more suspicious.
pub fn score_entropy(p: &ProbVector) -> f64 {
    -p.probs()
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// Largest class probability. Lower is more suspicious.
pub fn score_maxp(p: &ProbVector) -> f64 {
    crate::metrics::confidence(p)
}

/// Top-1 minus top-2 probability. Lower is more suspicious.
pub fn score_margin(p: &ProbVector) -> f64 {
    let mut first = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &x in p.probs() {
        if x > first {
            second = first;
            first = x;
        } else if x > second {
            second = x;
        }
    }
    first - second
}

/// Mutant disagreement `1 - count(mode) / T`. Higher is more suspicious.
pub fn score_bald(m: &MutantPredictionSet) -> f64 {
    let t = m.mutant_labels.len();
    if t == 0 {
        return 0.0;
    }
    let classes = m.mutant_labels.iter().copied().max().unwrap_or(0) + 1;
    let mut counts = vec![0usize; classes];
    for &y in &m.mutant_labels {
        counts[y] += 1;
    }
    let mode_count = counts.iter().copied().max().unwrap_or(0);
    1.0 - mode_count as f64 / t as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn one_hot_set(labels: &[usize], classes: usize) -> MutantPredictionSet {
        let probs = labels
            .iter()
            .map(|&y| {
                let mut v = vec![0.0; classes];
                v[y] = 1.0;
                pv(&v)
            })
            .collect();
        MutantPredictionSet::new("m", probs).unwrap()
    }

    #[test]
    fn gini_examples() {
        assert_eq!(score_gini(&pv(&[1.0, 0.0])), 0.0);
        assert_eq!(score_gini(&pv(&[0.5, 0.5])), 0.5);
        assert!((score_gini(&pv(&[0.7, 0.2, 0.1])) - 0.46).abs() < 1e-12);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(score_entropy(&pv(&[1.0, 0.0])), 0.0);
        assert!((score_entropy(&pv(&[0.5, 0.5])) - 2f64.ln()).abs() < 1e-12);
        assert!((score_entropy(&pv(&[0.2; 5])) - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn maxp_margin_examples() {
        let p = pv(&[0.7, 0.2, 0.1]);
        assert_eq!(score_maxp(&p), 0.7);
        assert!((score_margin(&p) - 0.5).abs() < 1e-12);
        assert_eq!(score_margin(&pv(&[0.5, 0.5])), 0.0);
        assert_eq!(score_maxp(&pv(&[1.0, 0.0])), 1.0);
        // duplicated maximum
        assert_eq!(score_margin(&pv(&[0.1, 0.45, 0.45])), 0.0);
    }

    #[test]
    fn bald_examples() {
        assert_eq!(score_bald(&one_hot_set(&[2; 10], 3)), 0.0);
        let labels = [0, 0, 0, 1, 1, 1, 1, 2, 2, 2];
        assert_eq!(score_bald(&one_hot_set(&labels, 3)), 1.0 - 4.0 / 10.0);
        assert_eq!(score_bald(&one_hot_set(&[1], 3)), 0.0);
    }

    fn prob_vec(max_classes: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001f64..1.0, 2..=max_classes).prop_map(|raw| {
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn scores_invariant_under_class_permutation(v in prob_vec(7), rot in 0usize..7) {
            let p = pv(&v);
            let mut w = v.clone();
            let k = rot % w.len();
            w.rotate_left(k);
            let q = pv(&w);
            prop_assert!((score_gini(&p) - score_gini(&q)).abs() < 1e-12);
            prop_assert!((score_entropy(&p) - score_entropy(&q)).abs() < 1e-12);
            prop_assert_eq!(score_maxp(&p), score_maxp(&q));
            prop_assert_eq!(score_margin(&p), score_margin(&q));
        }

        #[test]
        fn scores_stay_in_range(v in prob_vec(7)) {
            let p = pv(&v);
            let c = v.len() as f64;
            let g = score_gini(&p);
            prop_assert!(g >= -1e-12 && g <= 1.0 - 1.0 / c + 1e-12);
            prop_assert!(score_maxp(&p) >= 1.0 / c - 1e-12);
            let e = score_entropy(&p);
            prop_assert!(e >= 0.0 && e <= c.ln() + 1e-12);
        }

        #[test]
        fn bald_bounds(labels in prop::collection::vec(0usize..4, 1..20)) {
            let t = labels.len() as f64;
            let s = score_bald(&one_hot_set(&labels, 4));
            prop_assert!(s >= 0.0 && s <= 1.0 - 1.0 / t + 1e-12);
        }
    }
}
