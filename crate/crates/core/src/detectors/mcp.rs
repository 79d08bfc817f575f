//! Multiple-boundary clustering and prioritization.
//!
//! Each record sits near the decision boundary between its top-1 and top-2
//! classes. Records are grouped by that ordered pair, and within a group the
//! ratio `p_top1 / p_top2` (≥ 1, closer to 1 is closer to the boundary)
//! orders them. Selection walks the groups round-robin: round `r` takes the
//! `r`-th best record of every group still holding one, the picks of a round
//! ordered by ratio and then by boundary key.

use std::collections::BTreeMap;

use crate::metrics::{PredictionRecord, Ranking};

pub const TIE_BREAK: &str = "round-ratio-then-boundary-then-input-order";

pub(crate) fn boundary_and_ratio(r: &PredictionRecord) -> ((usize, usize), f64) {
    let ranked = r.probs.ranked_classes();
    let (first, second) = (ranked[0], ranked[1]);
    let p = r.probs.probs();
    let ratio = if p[second] > 0.0 {
        p[first] / p[second]
    } else {
        f64::INFINITY
    };
    ((first, second), ratio)
}

/// Full MCP order. Any prefix of length `b` is the selection under budget `b`.
pub fn select_mcp(records: &[PredictionRecord]) -> Ranking {
    let mut clusters: BTreeMap<(usize, usize), Vec<(f64, usize)>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let (key, ratio) = boundary_and_ratio(r);
        clusters.entry(key).or_default().push((ratio, i));
    }
    for members in clusters.values_mut() {
        members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    }

    let mut order = Vec::with_capacity(records.len());
    let mut round = 0;
    while order.len() < records.len() {
        let mut picks: Vec<((usize, usize), f64, usize)> = clusters
            .iter()
            .filter_map(|(key, m)| m.get(round).map(|&(ratio, i)| (*key, ratio, i)))
            .collect();
        picks.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        order.extend(picks.into_iter().map(|(_, _, i)| records[i].item_id.clone()));
        round += 1;
    }
    Ranking::from_order("mcp", order, TIE_BREAK)
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

    /// Vector over 3 classes with top-1 `a`, top-2 `b` and the given ratio.
    fn with_ratio(a: usize, b: usize, ratio: f64) -> Vec<f64> {
        // p_a = ratio * p_b, third class gets a small fixed share
        let rest = 0.05;
        let pb = (1.0 - rest) / (1.0 + ratio);
        let mut v = vec![rest; 3];
        v[a] = ratio * pb;
        v[b] = pb;
        v
    }

    #[test]
    fn round_robin_example() {
        let records = vec![
            rec("r1", &with_ratio(0, 1, 1.1)),
            rec("r2", &with_ratio(0, 1, 3.0)),
            rec("r3", &with_ratio(0, 2, 1.5)),
        ];
        let ranking = select_mcp(&records);
        assert_eq!(ranking.top(2), ["r1", "r3"]);
        assert_eq!(ranking.order, ["r1", "r3", "r2"]);
    }

    #[test]
    fn single_record_and_single_cluster() {
        let one = vec![rec("only", &[0.6, 0.4])];
        assert_eq!(select_mcp(&one).order, ["only"]);

        let same = vec![
            rec("a", &[0.9, 0.1]),
            rec("b", &[0.55, 0.45]),
            rec("c", &[0.7, 0.3]),
        ];
        assert_eq!(select_mcp(&same).order, ["b", "c", "a"]);
    }

    /// Independent formulation: repeatedly take, among clusters not yet
    /// visited this round, the one whose current head has the smallest
    /// ratio (then smallest key), by linear scans.
    fn brute_force(records: &[PredictionRecord]) -> Vec<String> {
        let info: Vec<_> = records.iter().map(boundary_and_ratio).collect();
        let mut taken = vec![false; records.len()];
        let mut out = Vec::new();
        while out.len() < records.len() {
            let mut visited: Vec<(usize, usize)> = Vec::new();
            loop {
                let mut best: Option<usize> = None;
                for i in 0..records.len() {
                    if taken[i] || visited.contains(&info[i].0) {
                        continue;
                    }
                    // i must be its cluster's current head
                    let is_head = (0..records.len()).all(|j| {
                        j == i
                            || taken[j]
                            || info[j].0 != info[i].0
                            || (info[i].1, i) < (info[j].1, j)
                    });
                    if !is_head {
                        continue;
                    }
                    best = match best {
                        None => Some(i),
                        Some(b) if (info[i].1, info[i].0) < (info[b].1, info[b].0) => Some(i),
                        keep => keep,
                    };
                }
                match best {
                    Some(i) => {
                        visited.push(info[i].0);
                        taken[i] = true;
                        out.push(records[i].item_id.clone());
                    }
                    None => break,
                }
            }
        }
        out
    }

    #[test]
    fn matches_brute_force_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..200 {
            let n = rng.gen_range(1..=20);
            let records: Vec<_> = (0..n)
                .map(|i| {
                    // coarse values so ties across clusters occur
                    let raw: Vec<f64> = (0..4).map(|_| rng.gen_range(1..6) as f64).collect();
                    let s: f64 = raw.iter().sum();
                    let v: Vec<f64> = raw.iter().map(|x| x / s).collect();
                    rec(&format!("t{trial}-{i}"), &v)
                })
                .collect();
            assert_eq!(select_mcp(&records).order, brute_force(&records), "trial {trial}");
        }
    }
}
