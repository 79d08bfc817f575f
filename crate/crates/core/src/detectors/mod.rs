//! Fault-detection rankers.
//!
//! Every detector turns a set of [`PredictionRecord`]s (plus embeddings,
//! labeled training data or mutant predictions where it needs them) into a
//! [`Ranking`] whose head holds the inputs most likely to be mispredicted.

mod ats;
mod mcp;
mod nns;
mod random;
mod scores;
mod testrank;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{Orientation, PredictionRecord, ProbVector, Ranking};

pub use ats::{ats_order_from, select_ats, AtsPoint};
pub use mcp::select_mcp;
pub use nns::{cosine_similarity, smooth_nns};
pub use random::select_random;
pub use scores::{score_bald, score_entropy, score_gini, score_margin, score_maxp};
pub use testrank::{contextual_feature, rank_testrank_lite};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("item {0} has no embedding")]
    MissingEmbedding(String),
    #[error("embedding dimension mismatch for {id}: expected {expected}, got {got}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        got: usize,
    },
    #[error("ATS requires ≥ 3 classes")]
    TooFewClassesForAts,
    #[error("records disagree on class count ({0} vs {1})")]
    ClassCountMismatch(usize, usize),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("training record {0} has no label")]
    UnlabeledTrainRecord(String),
    #[error("{0} requires mutant predictions")]
    MissingMutants(Method),
    #[error("{0} requires embeddings")]
    MissingEmbeddings(Method),
    #[error("{0} requires a labeled training set")]
    MissingTrainSet(Method),
    #[error("mutant set for {0} is empty")]
    EmptyMutantSet(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no records to rank")]
    NoRecords,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Random,
    Gini,
    Entropy,
    Mcp,
    Maxp,
    Margin,
    Ats,
    Nns,
    TestrankLite,
    Bald,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Random,
        Method::Gini,
        Method::Entropy,
        Method::Mcp,
        Method::Maxp,
        Method::Margin,
        Method::Ats,
        Method::Nns,
        Method::TestrankLite,
        Method::Bald,
    ];

    /// Identifier used in configs and on the command line.
    pub fn id(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Gini => "gini",
            Method::Entropy => "entropy",
            Method::Mcp => "mcp",
            Method::Maxp => "maxp",
            Method::Margin => "margin",
            Method::Ats => "ats",
            Method::Nns => "nns",
            Method::TestrankLite => "testrank_lite",
            Method::Bald => "bald",
        }
    }

    /// Column header used in report tables.
    pub fn column(self) -> &'static str {
        match self {
            Method::Random => "Random",
            Method::Gini => "Gini",
            Method::Entropy => "Entropy",
            Method::Mcp => "MCP",
            Method::Maxp => "MaxP",
            Method::Margin => "Margin",
            Method::Ats => "ATS",
            Method::Nns => "NNS",
            Method::TestrankLite => "TestRank",
            Method::Bald => "BALD",
        }
    }

    /// Whether the method consumes the (possibly smoothed) distributions.
    pub fn uses_probabilities(self) -> bool {
        !matches!(self, Method::Random | Method::Bald)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = DetectorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        let key = match key.as_str() {
            "deepgini" => "gini",
            "testrank" => "testrank_lite",
            other => other,
        };
        Method::ALL
            .into_iter()
            .find(|m| m.id() == key)
            .ok_or_else(|| DetectorError::InvalidParameter(format!("unknown method '{s}'")))
    }
}

/// Per-method parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub seed: u64,
    pub nns_k: usize,
    pub testrank_k: usize,
    pub testrank_epochs: usize,
    pub testrank_learning_rate: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            seed: 0,
            nns_k: 5,
            testrank_k: 10,
            testrank_epochs: 200,
            testrank_learning_rate: 0.5,
        }
    }
}

/// Predictions of every mutant of one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutantPredictionSet {
    pub item_id: String,
    pub mutant_probs: Vec<ProbVector>,
    pub mutant_labels: Vec<usize>,
}

impl MutantPredictionSet {
    pub fn new(
        item_id: impl Into<String>,
        mutant_probs: Vec<ProbVector>,
    ) -> Result<Self, DetectorError> {
        let item_id = item_id.into();
        let first = mutant_probs
            .first()
            .ok_or_else(|| DetectorError::EmptyMutantSet(item_id.clone()))?
            .num_classes();
        if let Some(p) = mutant_probs.iter().find(|p| p.num_classes() != first) {
            return Err(DetectorError::ClassCountMismatch(first, p.num_classes()));
        }
        let mutant_labels = mutant_probs.iter().map(ProbVector::argmax).collect();
        Ok(MutantPredictionSet {
            item_id,
            mutant_probs,
            mutant_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.mutant_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mutant_labels.is_empty()
    }
}

/// Everything a detector may draw on besides its configuration.
#[derive(Debug, Clone, Copy, Default)]
pub struct DetectorInputs<'a> {
    pub records: &'a [PredictionRecord],
    pub embeddings: Option<&'a HashMap<String, Vec<f64>>>,
    pub train: Option<&'a [PredictionRecord]>,
    pub mutants: Option<&'a HashMap<String, MutantPredictionSet>>,
}

impl<'a> DetectorInputs<'a> {
    pub fn new(records: &'a [PredictionRecord]) -> Self {
        DetectorInputs {
            records,
            ..Default::default()
        }
    }
}

fn class_count(records: &[PredictionRecord]) -> Result<usize, DetectorError> {
    let first = records.first().ok_or(DetectorError::NoRecords)?.probs.num_classes();
    match records.iter().find(|r| r.probs.num_classes() != first) {
        Some(r) => Err(DetectorError::ClassCountMismatch(first, r.probs.num_classes())),
        None => Ok(first),
    }
}

fn by_score(
    method: Method,
    records: &[PredictionRecord],
    orientation: Orientation,
    score: impl Fn(&ProbVector) -> f64,
) -> Ranking {
    let scored = records
        .iter()
        .map(|r| (r.item_id.clone(), score(&r.probs)))
        .collect();
    Ranking::from_scores(method.id(), scored, orientation)
}

/// Runs one detector over `inputs.records`.
///
/// Prerequisites (embeddings for NNS/TestRank, ≥ 3 classes for ATS, mutant
/// sets for BALD) are checked up front and reported as errors so callers
/// can render the cell as unavailable.
pub fn rank(
    method: Method,
    cfg: &DetectorConfig,
    inputs: &DetectorInputs<'_>,
) -> Result<Ranking, DetectorError> {
    let records = inputs.records;
    class_count(records)?;
    let ranking = match method {
        Method::Random => {
            let ids: Vec<String> = records.iter().map(|r| r.item_id.clone()).collect();
            select_random(&ids, ids.len(), cfg.seed)
        }
        Method::Gini => by_score(method, records, Orientation::HigherFirst, score_gini),
        Method::Entropy => by_score(method, records, Orientation::HigherFirst, score_entropy),
        Method::Maxp => by_score(method, records, Orientation::LowerFirst, score_maxp),
        Method::Margin => by_score(method, records, Orientation::LowerFirst, score_margin),
        Method::Mcp => select_mcp(records),
        Method::Ats => select_ats(records)?,
        Method::Nns => {
            let emb = inputs
                .embeddings
                .ok_or(DetectorError::MissingEmbeddings(method))?;
            let smoothed = smooth_nns(records, emb, cfg.nns_k)?;
            let mut r = by_score(method, &smoothed, Orientation::HigherFirst, score_gini);
            r.method = method.id().into();
            r
        }
        Method::TestrankLite => {
            let emb = inputs
                .embeddings
                .ok_or(DetectorError::MissingEmbeddings(method))?;
            let train = inputs.train.ok_or(DetectorError::MissingTrainSet(method))?;
            rank_testrank_lite(train, records, emb, cfg)?
        }
        Method::Bald => {
            let mutants = inputs.mutants.ok_or(DetectorError::MissingMutants(method))?;
            let scored = records
                .iter()
                .map(|r| {
                    let s = mutants.get(&r.item_id).map(score_bald).unwrap_or(0.0);
                    (r.item_id.clone(), s)
                })
                .collect();
            Ranking::from_scores(method.id(), scored, Orientation::HigherFirst)
        }
    };
    Ok(ranking)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::PredictionSource;
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

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.id().parse::<Method>().unwrap(), m);
        }
        assert_eq!("DeepGini".parse::<Method>().unwrap(), Method::Gini);
        assert_eq!("testrank".parse::<Method>().unwrap(), Method::TestrankLite);
        assert!("nope".parse::<Method>().is_err());
    }

    #[test]
    fn binary_rankings_coincide() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let records: Vec<_> = (0..1000)
            .map(|i| {
                let p: f64 = rng.gen();
                rec(&format!("r{i}"), &[p, 1.0 - p])
            })
            .collect();
        let inputs = DetectorInputs::new(&records);
        let cfg = DetectorConfig::default();
        let gini = rank(Method::Gini, &cfg, &inputs).unwrap().order;
        for m in [Method::Entropy, Method::Margin, Method::Maxp] {
            assert_eq!(rank(m, &cfg, &inputs).unwrap().order, gini, "{m}");
        }
    }

    #[test]
    fn prerequisites_reported() {
        let records = vec![rec("a", &[0.6, 0.4]), rec("b", &[0.3, 0.7])];
        let inputs = DetectorInputs::new(&records);
        let cfg = DetectorConfig::default();
        assert_eq!(
            rank(Method::Ats, &cfg, &inputs),
            Err(DetectorError::TooFewClassesForAts)
        );
        assert_eq!(
            rank(Method::Bald, &cfg, &inputs),
            Err(DetectorError::MissingMutants(Method::Bald))
        );
        assert_eq!(
            rank(Method::Nns, &cfg, &inputs),
            Err(DetectorError::MissingEmbeddings(Method::Nns))
        );
    }

    #[test]
    fn every_detector_returns_a_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut records = Vec::new();
        let mut emb = HashMap::new();
        let mut train = Vec::new();
        let mut mutants = HashMap::new();
        for i in 0..40 {
            let raw: Vec<f64> = (0..4).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let id = format!("t{i}");
            let label = rng.gen_range(0..4);
            records.push(PredictionRecord::new(
                id.clone(),
                ProbVector::new(p.clone()).unwrap(),
                PredictionSource::Original,
                Some(label),
            ));
            emb.insert(id.clone(), (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let tid = format!("train{i}");
            train.push(PredictionRecord::new(
                tid.clone(),
                ProbVector::new(p.clone()).unwrap(),
                PredictionSource::Original,
                Some(label),
            ));
            emb.insert(tid, (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let ms = (0..5)
                .map(|_| {
                    let mut q = p.clone();
                    q.rotate_left(rng.gen_range(0..4));
                    ProbVector::new(q).unwrap()
                })
                .collect();
            mutants.insert(id.clone(), MutantPredictionSet::new(id, ms).unwrap());
        }
        let inputs = DetectorInputs {
            records: &records,
            embeddings: Some(&emb),
            train: Some(&train),
            mutants: Some(&mutants),
        };
        let cfg = DetectorConfig::default();
        for m in Method::ALL {
            let r = rank(m, &cfg, &inputs).unwrap();
            assert!(
                r.is_permutation_of(records.iter().map(|r| r.item_id.as_str())),
                "{m}"
            );
            let again = rank(m, &cfg, &inputs).unwrap();
            assert_eq!(r, again, "{m} not deterministic");
            let monotone = r.scores.windows(2).all(|w| match r.orientation {
                Orientation::HigherFirst => w[0] >= w[1],
                Orientation::LowerFirst => w[0] <= w[1],
            });
            assert!(monotone, "{m} scores not monotone");
        }
    }

    #[test]
    fn mutant_set_validation() {
        assert_eq!(
            MutantPredictionSet::new("x", vec![]),
            Err(DetectorError::EmptyMutantSet("x".into()))
        );
        let a = ProbVector::new(vec![0.5, 0.5]).unwrap();
        let b = ProbVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert!(MutantPredictionSet::new("x", vec![a.clone(), b]).is_err());
        let set = MutantPredictionSet::new("x", vec![a.clone(), a]).unwrap();
        assert_eq!(set.mutant_labels, vec![0, 0]);
    }
}
