//! Shared domain types plus the prediction-level metrics: confidence,
//! expected calibration error, test relative coverage (TRC) and the
//! confidence-histogram statistics used to judge how spread out a model's
//! confidence is.
//!
//! Everything here is a pure function over immutable inputs.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default number of equal-width confidence intervals for histograms,
/// diversity and ECE.
pub const DEFAULT_BINS: usize = 30;

/// Raw probability sums inside this window are renormalized; outside it the
/// vector is rejected.
pub const SUM_WINDOW: (f64, f64) = (0.95, 1.05);

/// Sums closer to one than this are kept verbatim (no division), so that
/// already-normalized vectors survive reconstruction bit-for-bit.
const RENORM_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("probability vector needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("probability entry {index} is invalid: {value}")]
    InvalidEntry { index: usize, value: f64 },
    #[error("probability sum {0} outside [0.95, 1.05]")]
    SumOutOfRange(f64),
    #[error("class name count {names} does not match probability count {probs}")]
    NameMismatch { names: usize, probs: usize },
    #[error("no labeled records")]
    NoLabeledRecords,
    #[error("record {0} has no ground-truth label")]
    MissingLabel(String),
    #[error("TRC undefined: no faults")]
    NoFaults,
    #[error("selected id {0} is not among the records")]
    UnknownId(String),
    #[error("selection of {selected} items exceeds budget {budget}")]
    OverBudget { selected: usize, budget: usize },
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error("bin count must be positive")]
    ZeroBins,
}

/// A normalized class-probability distribution for one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProbVector", into = "RawProbVector")]
pub struct ProbVector {
    probs: Vec<f64>,
    class_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct RawProbVector {
    probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    class_names: Vec<String>,
}

impl TryFrom<RawProbVector> for ProbVector {
    type Error = MetricsError;

    fn try_from(raw: RawProbVector) -> Result<Self, Self::Error> {
        if raw.class_names.is_empty() {
            ProbVector::new(raw.probs)
        } else {
            ProbVector::with_names(raw.probs, raw.class_names)
        }
    }
}

impl From<ProbVector> for RawProbVector {
    fn from(p: ProbVector) -> Self {
        RawProbVector {
            probs: p.probs,
            class_names: p.class_names,
        }
    }
}

impl ProbVector {
    /// Builds a vector with positional class names `"0"`, `"1"`, ...
    pub fn new(raw: Vec<f64>) -> Result<Self, MetricsError> {
        let names = (0..raw.len()).map(|i| i.to_string()).collect();
        Self::with_names(raw, names)
    }

    pub fn with_names(raw: Vec<f64>, class_names: Vec<String>) -> Result<Self, MetricsError> {
        if raw.len() < 2 {
            return Err(MetricsError::TooFewClasses(raw.len()));
        }
        if class_names.len() != raw.len() {
            return Err(MetricsError::NameMismatch {
                names: class_names.len(),
                probs: raw.len(),
            });
        }
        for (index, &value) in raw.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(MetricsError::InvalidEntry { index, value });
            }
        }
        let sum: f64 = raw.iter().sum();
        if !(SUM_WINDOW.0..=SUM_WINDOW.1).contains(&sum) {
            return Err(MetricsError::SumOutOfRange(sum));
        }
        let probs = if (sum - 1.0).abs() > RENORM_EPS {
            raw.iter().map(|p| p / sum).collect()
        } else {
            raw
        };
        if let Some((index, &value)) = probs.iter().enumerate().find(|(_, p)| **p > 1.0) {
            return Err(MetricsError::InvalidEntry { index, value });
        }
        Ok(ProbVector { probs, class_names })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    /// Index of the largest entry; ties go to the lowest class id.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Class ids ordered by decreasing probability, ties by lowest id.
    pub fn ranked_classes(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.probs.len()).collect();
        idx.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]).then(a.cmp(&b)));
        idx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ItemKind {
    #[default]
    Text,
    Code,
}

/// One prompt to be classified, optionally labeled and embedded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestItem {
    pub id: String,
    pub prompt: String,
    pub kind: ItemKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl TestItem {
    pub fn new(id: impl Into<String>, prompt: impl Into<String>, kind: ItemKind) -> Self {
        TestItem {
            id: id.into(),
            prompt: prompt.into(),
            kind,
            true_label: None,
            embedding: None,
        }
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.true_label = Some(label);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionSource {
    Original,
    Smoothed,
}

/// An item's prediction: its distribution, the argmax label and, when the
/// ground truth is known, whether the prediction is a fault.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub item_id: String,
    pub probs: ProbVector,
    pub predicted: usize,
    pub source: PredictionSource,
    pub true_label: Option<usize>,
    pub is_fault: Option<bool>,
}

impl PredictionRecord {
    pub fn new(
        item_id: impl Into<String>,
        probs: ProbVector,
        source: PredictionSource,
        true_label: Option<usize>,
    ) -> Self {
        let predicted = probs.argmax();
        PredictionRecord {
            item_id: item_id.into(),
            predicted,
            is_fault: true_label.map(|y| y != predicted),
            true_label,
            probs,
            source,
        }
    }

    pub fn confidence(&self) -> f64 {
        confidence(&self.probs)
    }
}

/// A labeling budget, either a fraction of the test set or an absolute count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    Fraction(f64),
    Count(usize),
}

impl Budget {
    /// Number of items the budget allows out of `total`.
    pub fn resolve(&self, total: usize) -> Result<usize, MetricsError> {
        match *self {
            Budget::Fraction(f) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(MetricsError::InvalidBudget(format!(
                        "fraction {f} not in (0, 1]"
                    )));
                }
                // 0.1 * 150 is 15.000000000000002 in binary floating point
                let raw = f * total as f64;
                Ok(((raw - 1e-9).ceil().max(0.0) as usize).min(total))
            }
            Budget::Count(c) => {
                if c == 0 {
                    return Err(MetricsError::InvalidBudget("count must be positive".into()));
                }
                if c > total {
                    return Err(MetricsError::InvalidBudget(format!(
                        "count {c} exceeds test set size {total}"
                    )));
                }
                Ok(c)
            }
        }
    }
}

/// Per-interval statistics of a reliability diagram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub count: usize,
    pub accuracy: f64,
    pub avg_confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBins {
    pub m_intervals: usize,
    pub bins: Vec<Bin>,
}

impl CalibrationBins {
    pub fn from_records(records: &[PredictionRecord], m: usize) -> Result<Self, MetricsError> {
        if m == 0 {
            return Err(MetricsError::ZeroBins);
        }
        let mut count = vec![0usize; m];
        let mut correct = vec![0usize; m];
        let mut conf_sum = vec![0.0f64; m];
        for r in records {
            let fault = r.is_fault.ok_or_else(|| MetricsError::MissingLabel(r.item_id.clone()))?;
            let c = r.confidence();
            let b = bin_index(c, m);
            count[b] += 1;
            conf_sum[b] += c;
            if !fault {
                correct[b] += 1;
            }
        }
        let bins = (0..m)
            .map(|b| {
                if count[b] == 0 {
                    Bin {
                        count: 0,
                        accuracy: 0.0,
                        avg_confidence: 0.0,
                    }
                } else {
                    Bin {
                        count: count[b],
                        accuracy: correct[b] as f64 / count[b] as f64,
                        avg_confidence: conf_sum[b] / count[b] as f64,
                    }
                }
            })
            .collect();
        Ok(CalibrationBins { m_intervals: m, bins })
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    pub fn ece(&self) -> f64 {
        let n = self.total();
        if n == 0 {
            return 0.0;
        }
        self.bins
            .iter()
            .filter(|b| b.count > 0)
            .map(|b| (b.count as f64 / n as f64) * (b.accuracy - b.avg_confidence).abs())
            .sum()
    }
}

/// Zero-based interval for a confidence: `((m-1)/M, m/M]` maps to `m - 1`,
/// and a confidence of exactly 0 falls in the first interval.
pub fn bin_index(conf: f64, m: usize) -> usize {
    let raw = (conf * m as f64).ceil();
    if raw <= 1.0 {
        0
    } else {
        (raw as usize - 1).min(m - 1)
    }
}

/// Probability assigned to the predicted label.
pub fn confidence(p: &ProbVector) -> f64 {
    p.probs().iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Expected calibration error over `m` equal-width intervals.
pub fn ece(records: &[PredictionRecord], m: usize) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::NoLabeledRecords);
    }
    Ok(CalibrationBins::from_records(records, m)?.ece())
}

/// Faults among `selected` divided by `min(budget, total faults)`.
pub fn trc(
    selected: &[String],
    records: &[PredictionRecord],
    budget: usize,
) -> Result<f64, MetricsError> {
    if selected.len() > budget {
        return Err(MetricsError::OverBudget {
            selected: selected.len(),
            budget,
        });
    }
    let mut faults = HashSet::new();
    let mut known = HashSet::new();
    for r in records {
        let fault = r.is_fault.ok_or_else(|| MetricsError::MissingLabel(r.item_id.clone()))?;
        known.insert(r.item_id.as_str());
        if fault {
            faults.insert(r.item_id.as_str());
        }
    }
    if faults.is_empty() {
        return Err(MetricsError::NoFaults);
    }
    let mut seen = HashSet::new();
    let mut found = 0usize;
    for id in selected {
        if !known.contains(id.as_str()) {
            return Err(MetricsError::UnknownId(id.clone()));
        }
        if seen.insert(id.as_str()) && faults.contains(id.as_str()) {
            found += 1;
        }
    }
    Ok(found as f64 / budget.min(faults.len()) as f64)
}

pub fn confidence_histogram(records: &[PredictionRecord], m: usize) -> Vec<usize> {
    histogram_of(records.iter().map(|r| r.confidence()), m)
}

/// Counts of confidences per interval `((k-1)/m, k/m]`.
pub fn histogram_of(confidences: impl IntoIterator<Item = f64>, m: usize) -> Vec<usize> {
    let m = m.max(1);
    let mut counts = vec![0usize; m];
    for c in confidences {
        counts[bin_index(c, m)] += 1;
    }
    counts
}

/// Population variance of the histogram counts. Lower means confidence is
/// spread over more intervals.
pub fn histogram_diversity(counts: &[usize]) -> f64 {
    if counts.is_empty() {
        return 0.0;
    }
    let n = counts.len() as f64;
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
    counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n
}

/// Fraction of labeled records whose prediction is correct.
pub fn accuracy(records: &[PredictionRecord]) -> Option<f64> {
    let labeled: Vec<bool> = records.iter().filter_map(|r| r.is_fault).collect();
    if labeled.is_empty() {
        return None;
    }
    Some(labeled.iter().filter(|f| !**f).count() as f64 / labeled.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Larger scores are more fault-suspicious.
    HigherFirst,
    /// Smaller scores are more fault-suspicious.
    LowerFirst,
}

/// A detector's total order over item ids, most suspicious first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub method: String,
    pub order: Vec<String>,
    /// Score of `order[i]`, monotone under `orientation`.
    pub scores: Vec<f64>,
    pub orientation: Orientation,
    pub tie_break: String,
}

/// Ties keep the caller's input order.
pub const TIE_BREAK_INPUT_ORDER: &str = "input-order";

impl Ranking {
    /// Sorts `(id, score)` pairs under `orientation`, keeping input order
    /// among equal scores.
    pub fn from_scores(
        method: impl Into<String>,
        scored: Vec<(String, f64)>,
        orientation: Orientation,
    ) -> Self {
        let mut scored = scored;
        match orientation {
            Orientation::HigherFirst => scored.sort_by(|a, b| b.1.total_cmp(&a.1)),
            Orientation::LowerFirst => scored.sort_by(|a, b| a.1.total_cmp(&b.1)),
        }
        let (order, scores) = scored.into_iter().unzip();
        Ranking {
            method: method.into(),
            order,
            scores,
            orientation,
            tie_break: TIE_BREAK_INPUT_ORDER.into(),
        }
    }

    /// For selection-order methods: the score is the remaining priority
    /// `n - position`, so it is strictly decreasing.
    pub fn from_order(method: impl Into<String>, order: Vec<String>, tie_break: &str) -> Self {
        let n = order.len();
        Ranking {
            method: method.into(),
            scores: (0..n).map(|i| (n - i) as f64).collect(),
            order,
            orientation: Orientation::HigherFirst,
            tie_break: tie_break.into(),
        }
    }

    pub fn top(&self, budget: usize) -> &[String] {
        &self.order[..budget.min(self.order.len())]
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn is_permutation_of<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> bool {
        let mut expected: Vec<&str> = ids.into_iter().collect();
        let mut got: Vec<&str> = self.order.iter().map(String::as_str).collect();
        expected.sort_unstable();
        got.sort_unstable();
        expected == got
    }
}
