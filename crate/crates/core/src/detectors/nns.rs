//! Nearest-neighbor smoothing: each distribution is averaged with those of
//! its `k` nearest neighbors in embedding space (cosine distance).

use std::collections::HashMap;

use crate::metrics::{PredictionRecord, ProbVector};

use super::DetectorError;

/// Cosine similarity; zero vectors are orthogonal to everything.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Looks up one embedding per record, enforcing a uniform positive dimension.
pub(crate) fn gather_embeddings<'a>(
    records: &[PredictionRecord],
    embeddings: &'a HashMap<String, Vec<f64>>,
    expected_dim: Option<usize>,
) -> Result<Vec<&'a [f64]>, DetectorError> {
    let mut dim = expected_dim;
    records
        .iter()
        .map(|r| {
            let e = embeddings
                .get(&r.item_id)
                .ok_or_else(|| DetectorError::MissingEmbedding(r.item_id.clone()))?;
            let expected = *dim.get_or_insert(e.len());
            if e.is_empty() || e.len() != expected {
                return Err(DetectorError::DimensionMismatch {
                    id: r.item_id.clone(),
                    expected,
                    got: e.len(),
                });
            }
            Ok(e.as_slice())
        })
        .collect()
}

/// Indices of the `k` most similar candidates to `query`, most similar
/// first, ties broken by candidate index. `skip` is excluded.
pub(crate) fn nearest(
    query: &[f64],
    candidates: &[&[f64]],
    k: usize,
    skip: Option<usize>,
) -> Vec<(usize, f64)> {
    let mut sims: Vec<(usize, f64)> = candidates
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != skip)
        .map(|(j, c)| (j, cosine_similarity(query, c)))
        .collect();
    sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    sims.truncate(k);
    sims
}

/// Replaces each record's distribution with the mean over itself and its
/// `k` nearest neighbors.
pub fn smooth_nns(
    records: &[PredictionRecord],
    embeddings: &HashMap<String, Vec<f64>>,
    k: usize,
) -> Result<Vec<PredictionRecord>, DetectorError> {
    if k == 0 || k >= records.len() {
        return Err(DetectorError::InvalidParameter(format!(
            "nns k must satisfy 0 < k < {} (got {k})",
            records.len()
        )));
    }
    let vectors = gather_embeddings(records, embeddings, None)?;
    let classes = records[0].probs.num_classes();

    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut sum = r.probs.probs().to_vec();
            for (j, _) in nearest(vectors[i], &vectors, k, Some(i)) {
                let other = records[j].probs.probs();
                if other.len() != classes {
                    return Err(DetectorError::ClassCountMismatch(classes, other.len()));
                }
                for (s, p) in sum.iter_mut().zip(other) {
                    *s += p;
                }
            }
            let mean = sum.into_iter().map(|s| s / (k + 1) as f64).collect();
            let probs = ProbVector::with_names(mean, r.probs.class_names().to_vec())
                .expect("mean of distributions is a distribution");
            Ok(PredictionRecord::new(
                r.item_id.clone(),
                probs,
                r.source,
                r.true_label,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::PredictionSource;
    use proptest::prelude::*;

    fn rec(id: &str, probs: &[f64]) -> PredictionRecord {
        PredictionRecord::new(
            id,
            ProbVector::new(probs.to_vec()).unwrap(),
            PredictionSource::Original,
            None,
        )
    }

    fn emb(pairs: &[(&str, Vec<f64>)]) -> HashMap<String, Vec<f64>> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn pair_of_identical_embeddings_averages() {
        let records = vec![rec("a", &[1.0, 0.0]), rec("b", &[0.0, 1.0])];
        let e = emb(&[("a", vec![1.0, 2.0]), ("b", vec![1.0, 2.0])]);
        let out = smooth_nns(&records, &e, 1).unwrap();
        for r in &out {
            assert_eq!(r.probs.probs(), &[0.5, 0.5]);
        }
    }

    #[test]
    fn duplicate_neighbor_keeps_vector() {
        let records = vec![
            rec("a", &[0.7, 0.3]),
            rec("a2", &[0.7, 0.3]),
            rec("far", &[0.1, 0.9]),
        ];
        let e = emb(&[
            ("a", vec![1.0, 0.0]),
            ("a2", vec![1.0, 0.0]),
            ("far", vec![0.0, 1.0]),
        ]);
        let out = smooth_nns(&records, &e, 1).unwrap();
        assert_eq!(out[0].probs.probs(), &[0.7, 0.3]);
    }

    #[test]
    fn three_items_k2_is_global_mean() {
        let records = vec![
            rec("a", &[0.9, 0.1, 0.0]),
            rec("b", &[0.0, 0.6, 0.4]),
            rec("c", &[0.3, 0.3, 0.4]),
        ];
        let e = emb(&[
            ("a", vec![1.0, 0.0]),
            ("b", vec![0.0, 1.0]),
            ("c", vec![1.0, 1.0]),
        ]);
        let out = smooth_nns(&records, &e, 2).unwrap();
        let mean = [0.4, 1.0 / 3.0, 0.8 / 3.0];
        for r in &out {
            for (x, m) in r.probs.probs().iter().zip(mean) {
                assert!((x - m).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn errors() {
        let records = vec![rec("a", &[0.9, 0.1]), rec("b", &[0.2, 0.8])];
        let e = emb(&[("a", vec![1.0])]);
        assert_eq!(
            smooth_nns(&records, &e, 1),
            Err(DetectorError::MissingEmbedding("b".into()))
        );
        assert!(matches!(
            smooth_nns(&records, &e, 0),
            Err(DetectorError::InvalidParameter(_))
        ));
        let e = emb(&[("a", vec![1.0]), ("b", vec![1.0, 2.0])]);
        assert!(matches!(
            smooth_nns(&records, &e, 1),
            Err(DetectorError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine_similarity(&[1.0, 0.0], &[2.0, 0.0]) - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }

    proptest! {
        #[test]
        fn identical_inputs_are_a_fixed_point(
            v in prop::collection::vec(0.01f64..1.0, 3),
            embs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 4..10),
            k in 1usize..3,
        ) {
            let s: f64 = v.iter().sum();
            let p: Vec<f64> = v.iter().map(|x| x / s).collect();
            let records: Vec<_> = (0..embs.len()).map(|i| rec(&i.to_string(), &p)).collect();
            let e: HashMap<_, _> = embs.iter().enumerate().map(|(i, x)| (i.to_string(), x.clone())).collect();
            let out = smooth_nns(&records, &e, k).unwrap();
            for r in out {
                let sum: f64 = r.probs.probs().iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                for (a, b) in r.probs.probs().iter().zip(&p) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
