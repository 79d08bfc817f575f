//! Prompt mutation and mutation-based confidence smoothing (MuCS).
//!
//! Each input prompt is perturbed into `n_mutants` mutants, every mutant
//! built by applying `K` operators drawn with replacement from the pool.
//! The model's distributions over the mutants are averaged entry-wise, and
//! that mean replaces the original distribution as detector input. The
//! per-mutant labels are kept for the BALD disagreement score.

mod lexicon;
pub mod ops;
pub mod tokenize;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::detectors::MutantPredictionSet;
use crate::metrics::{ItemKind, PredictionRecord, PredictionSource, ProbVector, TestItem};
use crate::model::{ModelError, ProbModel};

pub use lexicon::Lexicon;
pub use tokenize::{scan_code, CodeScan, StatementKind, TokenKind, TokenizedPrompt};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MutationError {
    #[error("operator {op} does not apply to {kind:?} prompts")]
    IncompatibleOp { op: MutationOp, kind: ItemKind },
    #[error("operator pool is empty")]
    EmptyPool,
    #[error("invalid mutation parameter: {0}")]
    InvalidParameter(String),
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationOp {
    SynonymReplacement,
    RandomDeletion,
    RandomInsertion,
    RandomSwap,
    PunctuationInsertion,
    PrintAdding,
    LocalVariableAdding,
    DeadIfAdding,
    Duplication,
}

impl MutationOp {
    pub const TEXT: [MutationOp; 5] = [
        MutationOp::SynonymReplacement,
        MutationOp::RandomDeletion,
        MutationOp::RandomInsertion,
        MutationOp::RandomSwap,
        MutationOp::PunctuationInsertion,
    ];

    pub const CODE: [MutationOp; 4] = [
        MutationOp::PrintAdding,
        MutationOp::LocalVariableAdding,
        MutationOp::DeadIfAdding,
        MutationOp::Duplication,
    ];

    pub fn is_code_op(self) -> bool {
        Self::CODE.contains(&self)
    }

    pub fn applies_to(self, kind: ItemKind) -> bool {
        kind == ItemKind::Code || !self.is_code_op()
    }

    pub fn name(self) -> &'static str {
        match self {
            MutationOp::SynonymReplacement => "synonym_replacement",
            MutationOp::RandomDeletion => "random_deletion",
            MutationOp::RandomInsertion => "random_insertion",
            MutationOp::RandomSwap => "random_swap",
            MutationOp::PunctuationInsertion => "punctuation_insertion",
            MutationOp::PrintAdding => "print_adding",
            MutationOp::LocalVariableAdding => "local_variable_adding",
            MutationOp::DeadIfAdding => "dead_if_adding",
            MutationOp::Duplication => "duplication",
        }
    }

    /// Every operator that applies to prompts of `kind`.
    pub fn pool_for(kind: ItemKind) -> Vec<MutationOp> {
        match kind {
            ItemKind::Text => Self::TEXT.to_vec(),
            ItemKind::Code => Self::TEXT.iter().chain(&Self::CODE).copied().collect(),
        }
    }
}

impl std::fmt::Display for MutationOp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Operator parameters shared by the whole pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MutationParams {
    /// Words replaced/inserted and marks inserted per application.
    pub n: usize,
    /// Per-word deletion probability for random deletion.
    pub t_delete: f64,
    /// Brace depth marking a method body (2 for class-wrapped Java, 1 for
    /// bare method snippets).
    pub body_depth: usize,
}

impl Default for MutationParams {
    fn default() -> Self {
        MutationParams {
            n: 1,
            t_delete: 0.01,
            body_depth: 2,
        }
    }
}

impl MutationParams {
    pub fn validate(&self) -> Result<(), MutationError> {
        if self.n == 0 {
            return Err(MutationError::InvalidParameter("n must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.t_delete) {
            return Err(MutationError::InvalidParameter(format!(
                "t_delete {} not in [0, 1]",
                self.t_delete
            )));
        }
        Ok(())
    }
}

/// Applies one operator. Code operators on text prompts are rejected.
pub fn apply_op<R: Rng + ?Sized>(
    op: MutationOp,
    prompt: &str,
    kind: ItemKind,
    params: &MutationParams,
    lexicon: &Lexicon,
    rng: &mut R,
) -> Result<String, MutationError> {
    if !op.applies_to(kind) {
        return Err(MutationError::IncompatibleOp { op, kind });
    }
    Ok(match op {
        MutationOp::SynonymReplacement => ops::synonym_replacement(prompt, params.n, lexicon, rng),
        MutationOp::RandomDeletion => ops::random_deletion(prompt, params.t_delete, rng),
        MutationOp::RandomInsertion => ops::random_insertion(prompt, params.n, lexicon, rng),
        MutationOp::RandomSwap => ops::random_swap(prompt, rng),
        MutationOp::PunctuationInsertion => ops::punctuation_insertion(prompt, params.n, rng),
        MutationOp::PrintAdding => ops::print_adding(prompt, params.body_depth, rng),
        MutationOp::LocalVariableAdding => {
            ops::local_variable_adding(prompt, params.body_depth, rng)
        }
        MutationOp::DeadIfAdding => ops::dead_if_adding(prompt, params.body_depth, rng),
        MutationOp::Duplication => ops::duplication(prompt, params.body_depth, rng),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mutant {
    pub prompt: String,
    pub op_chain: Vec<MutationOp>,
}

/// Draws `k` operators uniformly with replacement from `pool` and applies
/// them one after another.
pub fn make_mutant<R: Rng + ?Sized>(
    prompt: &str,
    kind: ItemKind,
    k: usize,
    pool: &[MutationOp],
    params: &MutationParams,
    lexicon: &Lexicon,
    rng: &mut R,
) -> Result<Mutant, MutationError> {
    if pool.is_empty() {
        return Err(MutationError::EmptyPool);
    }
    if let Some(&op) = pool.iter().find(|op| !op.applies_to(kind)) {
        return Err(MutationError::IncompatibleOp { op, kind });
    }
    let mut current = prompt.to_string();
    let mut op_chain = Vec::with_capacity(k);
    for _ in 0..k {
        let op = *pool.choose(rng).expect("non-empty pool");
        current = apply_op(op, &current, kind, params, lexicon, rng)?;
        op_chain.push(op);
    }
    Ok(Mutant {
        prompt: current,
        op_chain,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MucsConfig {
    pub n_mutants: usize,
    /// Operators applied per mutant.
    pub k: usize,
    /// Empty means every operator applicable to the item kind.
    pub op_pool: Vec<MutationOp>,
    pub seed: u64,
    pub params: MutationParams,
}

impl Default for MucsConfig {
    fn default() -> Self {
        MucsConfig {
            n_mutants: 10,
            k: 3,
            op_pool: Vec::new(),
            seed: 0,
            params: MutationParams::default(),
        }
    }
}

impl MucsConfig {
    /// Defaults for a task: one operator per mutant on two-class code tasks,
    /// three otherwise.
    pub fn for_task(num_classes: usize, kind: ItemKind) -> Self {
        MucsConfig {
            k: if num_classes == 2 && kind == ItemKind::Code { 1 } else { 3 },
            ..MucsConfig::default()
        }
    }

    pub fn pool(&self, kind: ItemKind) -> Vec<MutationOp> {
        if self.op_pool.is_empty() {
            MutationOp::pool_for(kind)
        } else {
            self.op_pool.clone()
        }
    }

    pub fn validate(&self, kind: ItemKind) -> Result<(), MutationError> {
        if self.n_mutants == 0 || self.k == 0 {
            return Err(MutationError::InvalidParameter(
                "n_mutants and k must be positive".into(),
            ));
        }
        self.params.validate()?;
        if let Some(&op) = self.pool(kind).iter().find(|op| !op.applies_to(kind)) {
            return Err(MutationError::IncompatibleOp { op, kind });
        }
        Ok(())
    }
}

/// Per-item generator: depends only on the seed and the item id, so an
/// item's mutants do not depend on processing order.
pub fn item_rng(seed: u64, item_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(item_id.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// The `n_mutants` mutants of an item, each derived from the original prompt.
pub fn generate_mutants(
    item: &TestItem,
    cfg: &MucsConfig,
    lexicon: &Lexicon,
) -> Result<Vec<Mutant>, MutationError> {
    cfg.validate(item.kind)?;
    let pool = cfg.pool(item.kind);
    let mut rng = item_rng(cfg.seed, &item.id);
    (0..cfg.n_mutants)
        .map(|_| make_mutant(&item.prompt, item.kind, cfg.k, &pool, &cfg.params, lexicon, &mut rng))
        .collect()
}

/// One line of the mutant audit log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutantAudit {
    pub item_id: String,
    pub mutant_index: usize,
    pub op_chain: Vec<MutationOp>,
    pub mutant_prompt: String,
}

pub fn audit_lines(item_id: &str, mutants: &[Mutant]) -> Vec<MutantAudit> {
    mutants
        .iter()
        .enumerate()
        .map(|(i, m)| MutantAudit {
            item_id: item_id.to_string(),
            mutant_index: i,
            op_chain: m.op_chain.clone(),
            mutant_prompt: m.prompt.clone(),
        })
        .collect()
}

/// Entry-wise mean of equally sized vectors, accumulated incrementally so
/// that identical inputs reproduce themselves exactly.
pub fn mean_vector(vectors: &[&[f64]]) -> Vec<f64> {
    let mut mean = vectors[0].to_vec();
    for (k, v) in vectors.iter().enumerate().skip(1) {
        let count = (k + 1) as f64;
        for (m, x) in mean.iter_mut().zip(v.iter()) {
            *m += (x - *m) / count;
        }
    }
    mean
}

/// Mean of mutant distributions, as a distribution.
pub fn smooth_distributions(vectors: &[ProbVector]) -> Option<ProbVector> {
    let first = vectors.first()?;
    let slices: Vec<&[f64]> = vectors.iter().map(ProbVector::probs).collect();
    let mean = mean_vector(&slices);
    Some(
        ProbVector::with_names(mean, first.class_names().to_vec())
            .expect("mean of distributions is a distribution"),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct MucsOutcome {
    pub item_id: String,
    /// Smoothed record; `None` when any mutant query failed, in which case
    /// the caller falls back to the original prediction.
    pub smoothed: Option<PredictionRecord>,
    /// Successful mutant predictions in generation order.
    pub mutants: Option<MutantPredictionSet>,
    pub audit: Vec<MutantAudit>,
    pub failures: Vec<(usize, ModelError)>,
}

impl MucsOutcome {
    pub fn failed(&self) -> bool {
        self.smoothed.is_none()
    }
}

/// Queries `model` on every mutant of `item` and averages the distributions.
pub fn mucs_smooth(
    item: &TestItem,
    cfg: &MucsConfig,
    lexicon: &Lexicon,
    model: &dyn ProbModel,
) -> Result<MucsOutcome, MutationError> {
    let mutants = generate_mutants(item, cfg, lexicon)?;
    let prompts: Vec<String> = mutants.iter().map(|m| m.prompt.clone()).collect();
    let results = model.predict_batch(&prompts);

    let mut ok = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(p) => ok.push(p),
            Err(e) => failures.push((i, e)),
        }
    }
    let smoothed = if failures.is_empty() {
        smooth_distributions(&ok).map(|p| {
            PredictionRecord::new(item.id.clone(), p, PredictionSource::Smoothed, item.true_label)
        })
    } else {
        log::warn!(
            "item {}: {} of {} mutant queries failed, smoothing skipped",
            item.id,
            failures.len(),
            prompts.len()
        );
        None
    };
    let mutant_set = MutantPredictionSet::new(item.id.clone(), ok).ok();
    Ok(MucsOutcome {
        item_id: item.id.clone(),
        smoothed,
        mutants: mutant_set,
        audit: audit_lines(&item.id, &mutants),
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn make_mutant_examples() {
        let params = MutationParams::default();
        let lex = Lexicon::empty();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = make_mutant("a b", ItemKind::Text, 1, &[MutationOp::RandomSwap], &params, &lex, &mut rng)
            .unwrap();
        assert_eq!(m.prompt, "b a");

        let pool = MutationOp::TEXT;
        let a = make_mutant("the quick brown fox", ItemKind::Text, 3, &pool, &params, &lex, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = make_mutant("the quick brown fox", ItemKind::Text, 3, &pool, &params, &lex, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.op_chain.len(), 3);

        let m = make_mutant("x", ItemKind::Text, 2, &[MutationOp::PunctuationInsertion], &params, &lex, &mut rng)
            .unwrap();
        let tp = TokenizedPrompt::tokenize(&m.prompt);
        assert_eq!(tp.words(), ["x"]);
        let marks = tp.tokens.iter().filter(|t| t.kind == TokenKind::Punct).count();
        assert_eq!(marks, 2);
    }

    #[test]
    fn rejects_code_ops_on_text() {
        let err = make_mutant(
            "hello",
            ItemKind::Text,
            1,
            &[MutationOp::PrintAdding],
            &MutationParams::default(),
            &Lexicon::empty(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap_err();
        assert!(matches!(err, MutationError::IncompatibleOp { .. }));
        let cfg = MucsConfig {
            op_pool: vec![MutationOp::Duplication],
            ..Default::default()
        };
        assert!(cfg.validate(ItemKind::Text).is_err());
        assert!(cfg.validate(ItemKind::Code).is_ok());
    }

    #[test]
    fn smoothing_examples() {
        let item = TestItem::new("i", "great movie", ItemKind::Text).with_label(0);
        let cfg = MucsConfig::default();
        let constant = |_: &str| Ok(pv(&[0.6, 0.4]));
        let out = mucs_smooth(&item, &cfg, &Lexicon::empty(), &constant).unwrap();
        let rec = out.smoothed.unwrap();
        assert_eq!(rec.probs.probs(), &[0.6, 0.4]);
        assert_eq!(rec.source, PredictionSource::Smoothed);
        assert_eq!(out.mutants.unwrap().len(), 10);
        assert_eq!(out.audit.len(), 10);

        let two = smooth_distributions(&[pv(&[1.0, 0.0]), pv(&[0.0, 1.0])]).unwrap();
        assert_eq!(two.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn failed_queries_shrink_mutant_set() {
        let item = TestItem::new("i", "one two three four", ItemKind::Text);
        let cfg = MucsConfig {
            op_pool: vec![MutationOp::RandomSwap],
            ..Default::default()
        };
        let counter = std::sync::atomic::AtomicUsize::new(0);
        let flaky = |_: &str| {
            let n = counter.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            if n.is_multiple_of(3) {
                Err(ModelError::Other("boom".into()))
            } else {
                Ok(pv(&[0.2, 0.8]))
            }
        };
        let out = mucs_smooth(&item, &cfg, &Lexicon::empty(), &flaky).unwrap();
        assert!(out.failed());
        assert_eq!(out.failures.len(), 4);
        assert_eq!(out.mutants.unwrap().len(), 10 - 4);
    }

    #[test]
    fn item_rng_depends_on_seed_and_id() {
        let a: u64 = item_rng(1, "x").gen();
        assert_eq!(a, item_rng(1, "x").gen::<u64>());
        assert_ne!(a, item_rng(2, "x").gen::<u64>());
        assert_ne!(a, item_rng(1, "y").gen::<u64>());
    }

    proptest! {
        #[test]
        fn mean_matches_brute_force(
            vs in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 4), 1..12)
        ) {
            let normed: Vec<Vec<f64>> = vs.iter().map(|v| {
                let s: f64 = v.iter().sum::<f64>() + 1e-3;
                v.iter().map(|x| (x + 2.5e-4) / s).collect()
            }).collect();
            let slices: Vec<&[f64]> = normed.iter().map(Vec::as_slice).collect();
            let got = mean_vector(&slices);
            for j in 0..4 {
                let brute = normed.iter().map(|v| v[j]).sum::<f64>() / normed.len() as f64;
                prop_assert!((got[j] - brute).abs() < 1e-12);
            }
        }
    }
}
