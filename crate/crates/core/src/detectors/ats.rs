//! Simplified adaptive test selection.
//!
//! A record's fault pattern is the set of its top-3 classes; its point is
//! `(p_2 / p_1, p_3 / p_1)` in the unit square. Selection is greedy
//! max-min: the next record is the one farthest from every already selected
//! point of its own pattern, and a record whose pattern has not been
//! selected yet counts as infinitely far. Ties prefer lower max probability,
//! then the lexicographically smaller item id.

use crate::metrics::{confidence, PredictionRecord, Ranking};

use super::DetectorError;

pub const TIE_BREAK: &str = "lower-maxp-then-item-id";

#[derive(Debug, Clone, PartialEq)]
pub struct AtsPoint {
    pub id: String,
    pub pattern: [usize; 3],
    pub point: (f64, f64),
    pub maxp: f64,
}

impl AtsPoint {
    pub fn from_record(r: &PredictionRecord) -> Self {
        let ranked = r.probs.ranked_classes();
        let p = r.probs.probs();
        let (p1, p2, p3) = (p[ranked[0]], p[ranked[1]], p[ranked[2]]);
        let mut pattern = [ranked[0], ranked[1], ranked[2]];
        pattern.sort_unstable();
        AtsPoint {
            id: r.item_id.clone(),
            pattern,
            point: (p2 / p1, p3 / p1),
            maxp: confidence(&r.probs),
        }
    }
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Full ATS order. Any prefix of length `b` is the selection under budget `b`.
pub fn select_ats(records: &[PredictionRecord]) -> Result<Ranking, DetectorError> {
    if records.iter().any(|r| r.probs.num_classes() < 3) {
        return Err(DetectorError::TooFewClassesForAts);
    }
    let points: Vec<AtsPoint> = records.iter().map(AtsPoint::from_record).collect();
    let order = ats_order_from(&points, &[]);
    Ok(Ranking::from_order(
        "ats",
        order.into_iter().map(|i| points[i].id.clone()).collect(),
        TIE_BREAK,
    ))
}

/// Greedy order over `points` (indices), continuing from an already
/// selected prefix `seeded`.
pub fn ats_order_from(points: &[AtsPoint], seeded: &[usize]) -> Vec<usize> {
    let n = points.len();
    let mut gain = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let take = |s: usize, gain: &mut Vec<f64>, taken: &mut Vec<bool>, order: &mut Vec<usize>| {
        taken[s] = true;
        order.push(s);
        for j in 0..n {
            if !taken[j] && points[j].pattern == points[s].pattern {
                gain[j] = gain[j].min(distance(points[j].point, points[s].point));
            }
        }
    };

    for &s in seeded {
        if !taken[s] {
            take(s, &mut gain, &mut taken, &mut order);
        }
    }
    while order.len() < n {
        let mut best: Option<usize> = None;
        for j in (0..n).filter(|&j| !taken[j]) {
            best = Some(match best {
                None => j,
                Some(b) => {
                    let better = gain[j] > gain[b]
                        || (gain[j] == gain[b]
                            && (points[j].maxp < points[b].maxp
                                || (points[j].maxp == points[b].maxp
                                    && points[j].id < points[b].id)));
                    if better {
                        j
                    } else {
                        b
                    }
                }
            });
        }
        let s = best.expect("an untaken point remains");
        take(s, &mut gain, &mut taken, &mut order);
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{PredictionSource, ProbVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(id: &str, probs: &[f64]) -> PredictionRecord {
        PredictionRecord::new(
            id,
            ProbVector::new(probs.to_vec()).unwrap(),
            PredictionSource::Original,
            None,
        )
    }

    fn pt(id: &str, x: f64, y: f64) -> AtsPoint {
        AtsPoint {
            id: id.into(),
            pattern: [0, 1, 2],
            point: (x, y),
            maxp: 1.0 / (1.0 + x + y),
        }
    }

    #[test]
    fn rejects_binary() {
        let records = vec![rec("a", &[0.6, 0.4])];
        assert_eq!(select_ats(&records), Err(DetectorError::TooFewClassesForAts));
    }

    #[test]
    fn identical_points_degenerate_to_maxp_then_id() {
        // same point means same maxp; order falls to item id
        let records = vec![
            rec("c", &[0.5, 0.3, 0.2]),
            rec("a", &[0.5, 0.3, 0.2]),
            rec("b", &[0.5, 0.3, 0.2]),
        ];
        assert_eq!(select_ats(&records).unwrap().order, ["a", "b", "c"]);
    }

    #[test]
    fn single_pattern_with_distinct_points_starts_at_lowest_maxp() {
        let records = vec![
            rec("sure", &[0.8, 0.15, 0.05]),
            rec("unsure", &[0.4, 0.35, 0.25]),
        ];
        assert_eq!(select_ats(&records).unwrap().order[0], "unsure");
    }

    #[test]
    fn distinct_patterns_come_first() {
        let records = vec![
            rec("p", &[0.5, 0.3, 0.2, 0.0]),
            rec("q", &[0.0, 0.2, 0.3, 0.5]),
        ];
        let r = select_ats(&records).unwrap();
        assert!(r.is_permutation_of(["p", "q"]));
        // both have an unseen pattern; equal maxp, so id decides
        assert_eq!(r.order, ["p", "q"]);

        let records = vec![
            rec("a1", &[0.5, 0.3, 0.2, 0.0]),
            rec("a2", &[0.45, 0.35, 0.2, 0.0]),
            rec("b1", &[0.0, 0.2, 0.3, 0.5]),
        ];
        let r = select_ats(&records).unwrap();
        // a2 has lowest maxp; then b1's unseen pattern beats a1
        assert_eq!(r.order, ["a2", "b1", "a1"]);
    }

    #[test]
    fn seeded_example() {
        let points = vec![pt("A", 0.1, 0.1), pt("B", 0.9, 0.9), pt("C", 0.5, 0.5)];
        assert_eq!(ats_order_from(&points, &[0]), vec![0, 1, 2]);
    }

    /// Exhaustive greedy: recompute every gain from scratch each step.
    fn brute_force(points: &[AtsPoint]) -> Vec<usize> {
        let mut order: Vec<usize> = Vec::new();
        while order.len() < points.len() {
            let mut cands: Vec<(f64, f64, &str, usize)> = Vec::new();
            for j in 0..points.len() {
                if order.contains(&j) {
                    continue;
                }
                let g = order
                    .iter()
                    .filter(|&&s| points[s].pattern == points[j].pattern)
                    .map(|&s| distance(points[s].point, points[j].point))
                    .fold(f64::INFINITY, f64::min);
                cands.push((g, points[j].maxp, points[j].id.as_str(), j));
            }
            cands.sort_by(|a, b| {
                b.0.total_cmp(&a.0)
                    .then(a.1.total_cmp(&b.1))
                    .then(a.2.cmp(b.2))
            });
            order.push(cands[0].3);
        }
        order
    }

    #[test]
    fn matches_brute_force_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..100 {
            let n = rng.gen_range(1..15);
            let records: Vec<_> = (0..n)
                .map(|i| {
                    let raw: Vec<f64> = (0..4).map(|_| rng.gen_range(1..8) as f64).collect();
                    let s: f64 = raw.iter().sum();
                    let v: Vec<f64> = raw.iter().map(|x| x / s).collect();
                    rec(&format!("{trial}-{i:02}"), &v)
                })
                .collect();
            let points: Vec<_> = records.iter().map(AtsPoint::from_record).collect();
            assert_eq!(ats_order_from(&points, &[]), brute_force(&points));
        }
    }
}
