//! TestRank-lite: one round of similarity-weighted neighbor label
//! aggregation followed by a logistic-regression fault classifier.
//!
//! Features of an item are its class probabilities (intrinsic) plus one
//! contextual scalar: the mean fault flag of its `k` most cosine-similar
//! labeled training items, weighted by `max(similarity, 0)`. Training items
//! get the same feature with themselves excluded from the neighbor pool.
//!
//! The classifier starts with weight 1 on the contextual feature and 0
//! elsewhere, so with a zero learning rate the ranking is ordered by the
//! contextual feature alone.

use std::collections::HashMap;

use crate::metrics::{Orientation, PredictionRecord, Ranking};

use super::nns::{gather_embeddings, nearest};
use super::{DetectorConfig, DetectorError};

/// Weighted fault rate among the nearest labeled neighbors of `query`.
pub fn contextual_feature(
    query: &[f64],
    pool: &[&[f64]],
    pool_faults: &[bool],
    k: usize,
    skip: Option<usize>,
) -> f64 {
    let neigh = nearest(query, pool, k, skip);
    if neigh.is_empty() {
        return 0.0;
    }
    let fault = |j: usize| if pool_faults[j] { 1.0 } else { 0.0 };
    let wsum: f64 = neigh.iter().map(|(_, s)| s.max(0.0)).sum();
    if wsum > 0.0 {
        neigh.iter().map(|&(j, s)| s.max(0.0) * fault(j)).sum::<f64>() / wsum
    } else {
        neigh.iter().map(|&(j, _)| fault(j)).sum::<f64>() / neigh.len() as f64
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

struct Logistic {
    weights: Vec<f64>,
    bias: f64,
}

impl Logistic {
    fn new(dim: usize) -> Self {
        let mut weights = vec![0.0; dim];
        weights[dim - 1] = 1.0;
        Logistic { weights, bias: 0.0 }
    }

    fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
    }

    /// Full-batch gradient descent on mean binary cross-entropy.
    fn fit(&mut self, xs: &[Vec<f64>], ys: &[f64], epochs: usize, lr: f64) {
        let n = xs.len() as f64;
        for _ in 0..epochs {
            let mut grad_w = vec![0.0; self.weights.len()];
            let mut grad_b = 0.0;
            for (x, &y) in xs.iter().zip(ys) {
                let err = self.predict(x) - y;
                for (g, v) in grad_w.iter_mut().zip(x) {
                    *g += err * v;
                }
                grad_b += err;
            }
            for (w, g) in self.weights.iter_mut().zip(&grad_w) {
                *w -= lr * g / n;
            }
            self.bias -= lr * grad_b / n;
        }
    }
}

pub fn rank_testrank_lite(
    train: &[PredictionRecord],
    test: &[PredictionRecord],
    embeddings: &HashMap<String, Vec<f64>>,
    cfg: &DetectorConfig,
) -> Result<Ranking, DetectorError> {
    if train.is_empty() {
        return Err(DetectorError::EmptyTrainSet);
    }
    if cfg.testrank_k == 0 || cfg.testrank_learning_rate.is_nan() || cfg.testrank_learning_rate < 0.0 {
        return Err(DetectorError::InvalidParameter(
            "testrank_k must be positive and learning rate non-negative".into(),
        ));
    }
    let classes = train[0].probs.num_classes();
    for r in train.iter().chain(test) {
        if r.probs.num_classes() != classes {
            return Err(DetectorError::ClassCountMismatch(classes, r.probs.num_classes()));
        }
    }
    let train_faults: Vec<bool> = train
        .iter()
        .map(|r| r.is_fault.ok_or_else(|| DetectorError::UnlabeledTrainRecord(r.item_id.clone())))
        .collect::<Result<_, _>>()?;
    let train_vecs = gather_embeddings(train, embeddings, None)?;
    let test_vecs = gather_embeddings(test, embeddings, Some(train_vecs[0].len()))?;
    let k = cfg.testrank_k;

    let featurize = |r: &PredictionRecord, ctx: f64| {
        let mut x = r.probs.probs().to_vec();
        x.push(ctx);
        x
    };

    let xs: Vec<Vec<f64>> = train
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let ctx = contextual_feature(train_vecs[i], &train_vecs, &train_faults, k, Some(i));
            featurize(r, ctx)
        })
        .collect();
    let ys: Vec<f64> = train_faults.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();

    let mut model = Logistic::new(classes + 1);
    model.fit(&xs, &ys, cfg.testrank_epochs, cfg.testrank_learning_rate);

    let scored = test
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let ctx = contextual_feature(test_vecs[i], &train_vecs, &train_faults, k, None);
            (r.item_id.clone(), model.predict(&featurize(r, ctx)))
        })
        .collect();
    Ok(Ranking::from_scores(
        "testrank_lite",
        scored,
        Orientation::HigherFirst,
    ))
}
