//! Experiment orchestration: ingestion, detector runs over a budget grid
//! with and without MuCS smoothing, calibration summaries and reports.

pub mod io;
pub mod report;

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detectors::{rank, DetectorConfig, DetectorError, DetectorInputs, Method, MutantPredictionSet};
use crate::gateway::{
    Gateway, GatewayError, HttpTransport, ModelEndpoint, PriceTable, ResponseCache, StubTable, StubTransport,
    TaskTemplate,
};
use crate::metrics::{
    accuracy, Ranking, trc, Budget, ItemKind, MetricsError, PredictionRecord, PredictionSource, TestItem, DEFAULT_BINS,
};
use crate::model::{ModelError, ProbModel};
use crate::mutation::{mucs_smooth, smooth_distributions, Lexicon, MucsConfig, MutantAudit, MutationError};

pub use io::{load_dataset, load_embeddings, load_predictions, write_predictions, OfflinePrediction};
pub use report::{
    budget_label, compare_reports, faults_in_prefix, write_csv, AccuracySummary, CalibrationSummary, Direction,
    EvalReport, ImprovementCell, ImprovementTable, ItemFailure, MethodImprovement, MethodResult,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: line {line}: {message}")]
    Malformed { path: String, line: usize, message: String },
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("{path}: line {line}: duplicate id {id:?}")]
    DuplicateId { path: String, line: usize, id: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("items without labels: {}", .0.join(", "))]
    MissingLabels(Vec<String>),
    #[error("TRC undefined: the test set contains no faults")]
    NoFaults,
    #[error("no item received a prediction")]
    NoPredictions,
    #[error("reports are not comparable: {0}")]
    GridMismatch(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Mutation(#[from] MutationError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

/// Accuracy gap between original and mutated prompts above which the
/// mutants are considered to have changed the task.
pub const DRIFT_THRESHOLD: f64 = 0.05;

/// One experiment, as read from a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    /// Built-in template id, used when `template` is absent.
    pub task: String,
    pub template: Option<TaskTemplate>,
    /// Kind for dataset lines without one; `clone_detection` defaults to code.
    pub item_kind: Option<ItemKind>,
    pub endpoint: Option<ModelEndpoint>,
    /// Stub reply table; replaces the endpoint's HTTP transport.
    pub stub: Option<PathBuf>,
    /// Logged predictions; when set no model is queried.
    pub offline_predictions: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub prices: PriceTable,
    pub methods: Vec<Method>,
    pub budgets: Vec<f64>,
    pub mucs: Option<MucsConfig>,
    pub lexicon: Option<PathBuf>,
    /// Drives random selection and mutant generation.
    pub seed: u64,
    pub embeddings: Option<PathBuf>,
    /// Labeled items disjoint from the test set, for TestRank-lite.
    pub train: Option<PathBuf>,
    pub detector: DetectorConfig,
    pub ece_bins: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: PathBuf::new(),
            task: "sentiment".into(),
            template: None,
            item_kind: None,
            endpoint: None,
            stub: None,
            offline_predictions: None,
            cache: None,
            prices: PriceTable::default(),
            methods: vec![
                Method::Random,
                Method::Gini,
                Method::Entropy,
                Method::Mcp,
                Method::Maxp,
                Method::Margin,
                Method::Ats,
            ],
            budgets: vec![0.1, 0.3, 0.5],
            mucs: None,
            lexicon: None,
            seed: 0,
            embeddings: None,
            train: None,
            detector: DetectorConfig::default(),
            ece_bins: DEFAULT_BINS,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.budgets.is_empty() {
            return Err(HarnessError::Config("budgets is empty".into()));
        }
        if self.budgets.iter().any(|b| !(*b > 0.0 && *b <= 1.0)) {
            return Err(HarnessError::Config(format!("budgets {:?} must lie in (0, 1]", self.budgets)));
        }
        if self.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(HarnessError::Config(format!(
                "budgets {:?} must be strictly increasing",
                self.budgets
            )));
        }
        if self.methods.is_empty() {
            return Err(HarnessError::Config("methods is empty".into()));
        }
        let mut seen = HashSet::new();
        if let Some(m) = self.methods.iter().find(|m| !seen.insert(**m)) {
            return Err(HarnessError::Config(format!("method {m} listed twice")));
        }
        if self.methods.contains(&Method::Bald) && self.mucs.is_none() {
            return Err(HarnessError::Config("bald needs mutant predictions: set mucs".into()));
        }
        if self.ece_bins == 0 {
            return Err(HarnessError::Config("ece_bins must be positive".into()));
        }
        self.resolve_template()?.validate()?;
        Ok(())
    }

    pub fn resolve_template(&self) -> Result<TaskTemplate, HarnessError> {
        match &self.template {
            Some(t) => Ok(t.clone()),
            None => TaskTemplate::builtin(&self.task)
                .ok_or_else(|| HarnessError::Config(format!("unknown task {:?} and no template given", self.task))),
        }
    }

    pub fn default_kind(&self) -> ItemKind {
        self.item_kind.unwrap_or(if self.task == "clone_detection" {
            ItemKind::Code
        } else {
            ItemKind::Text
        })
    }

    /// MuCS defaults for this task, seeded from the experiment seed.
    pub fn default_mucs(&self) -> MucsConfig {
        let classes = self.resolve_template().map_or(0, |t| t.class_names.len());
        MucsConfig {
            seed: self.seed,
            ..MucsConfig::for_task(classes, self.default_kind())
        }
    }

    /// The config with `seed` pushed into the detector and MuCS settings.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        c.detector.seed = c.seed;
        if let Some(m) = c.mucs.as_mut() {
            m.seed = c.seed;
        }
        c
    }
}

/// Builds the gateway the config asks for; `None` in offline mode.
pub fn build_gateway(cfg: &ExperimentConfig) -> Result<Option<Gateway>, HarnessError> {
    if cfg.offline_predictions.is_some() {
        return Ok(None);
    }
    let cache = match &cfg.cache {
        Some(p) => ResponseCache::open(p)?,
        None => ResponseCache::in_memory(),
    };
    let gw = if let Some(stub) = &cfg.stub {
        let endpoint = cfg.endpoint.clone().unwrap_or_else(ModelEndpoint::stub);
        let table = StubTable::load(stub)?;
        Gateway::new(endpoint, StubTransport::from_table(table), cache, cfg.prices.clone())?
    } else if let Some(endpoint) = &cfg.endpoint {
        Gateway::new(endpoint.clone(), HttpTransport::new(endpoint)?, cache, cfg.prices.clone())?
    } else {
        return Err(HarnessError::Config(
            "no prediction source: set offline_predictions, stub or endpoint".into(),
        ));
    };
    Ok(Some(gw))
}

fn failure(item_id: &str, e: &ModelError) -> ItemFailure {
    ItemFailure {
        item_id: item_id.to_string(),
        reason: e.to_string(),
        transport: e.is_transport(),
    }
}

/// Per-item smoothing results.
#[derive(Debug, Default)]
pub struct Smoothing {
    /// Keyed by item id; absent when smoothing failed.
    pub smoothed: HashMap<String, PredictionRecord>,
    pub mutants: HashMap<String, MutantPredictionSet>,
    pub audit: Vec<MutantAudit>,
    pub failures: Vec<ItemFailure>,
}

/// Everything detectors consume, gathered once per run.
#[derive(Debug)]
pub struct Prepared {
    /// Ground truth for TRC: faults are mispredictions on the original prompts.
    pub original: Vec<PredictionRecord>,
    pub prediction_failures: Vec<ItemFailure>,
    pub smoothing: Option<Smoothing>,
    /// Smoothed where available, else original.
    pub detector_records: Vec<PredictionRecord>,
    pub train_records: Option<Vec<PredictionRecord>>,
}

impl Prepared {
    pub fn inputs<'a>(&'a self, embeddings: Option<&'a HashMap<String, Vec<f64>>>) -> DetectorInputs<'a> {
        DetectorInputs {
            records: &self.detector_records,
            embeddings,
            train: self.train_records.as_deref(),
            mutants: self.smoothing.as_ref().map(|s| &s.mutants),
        }
    }
}

/// Predictions gathered for a prediction log.
#[derive(Debug, Default)]
pub struct PredictionLog {
    pub predictions: Vec<OfflinePrediction>,
    pub failures: Vec<ItemFailure>,
}

/// Loaded inputs of one experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    /// Effective config (see [`ExperimentConfig::effective`]).
    pub config: ExperimentConfig,
    pub template: TaskTemplate,
    pub items: Vec<TestItem>,
    pub train: Option<Vec<TestItem>>,
    pub embeddings: Option<HashMap<String, Vec<f64>>>,
    pub lexicon: Lexicon,
    pub offline: Option<HashMap<String, OfflinePrediction>>,
}

impl Experiment {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let config = cfg.effective();
        let template = config.resolve_template()?;
        let kind = config.default_kind();
        let items = load_dataset(&config.dataset, &template.class_names, kind)?;
        let train = match &config.train {
            Some(p) => Some(load_dataset(p, &template.class_names, kind)?),
            None => None,
        };
        if let Some(train) = &train {
            let test_ids: HashSet<&str> = items.iter().map(|i| i.id.as_str()).collect();
            if let Some(t) = train.iter().find(|t| test_ids.contains(t.id.as_str())) {
                return Err(HarnessError::Config(format!("train item {:?} also in the test set", t.id)));
            }
        }
        let embeddings = config.embeddings.as_deref().map(load_embeddings).transpose()?;
        let lexicon = match &config.lexicon {
            Some(p) => Lexicon::load(p)?,
            None => Lexicon::empty(),
        };
        let offline = match &config.offline_predictions {
            Some(p) => Some(load_predictions(p, &template.class_names)?),
            None => None,
        };
        Ok(Experiment {
            config,
            template,
            items,
            train,
            embeddings,
            lexicon,
            offline,
        })
    }

    /// An experiment over in-memory items with no auxiliary files.
    pub fn from_items(cfg: &ExperimentConfig, items: Vec<TestItem>) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let config = cfg.effective();
        Ok(Experiment {
            template: config.resolve_template()?,
            config,
            items,
            train: None,
            embeddings: None,
            lexicon: Lexicon::empty(),
            offline: None,
        })
    }

    fn original_predictions(
        &self,
        items: &[TestItem],
        model: Option<&dyn ProbModel>,
    ) -> Result<(Vec<PredictionRecord>, Vec<ItemFailure>), HarnessError> {
        let mut records = Vec::new();
        let mut failures = Vec::new();
        if let Some(offline) = &self.offline {
            for item in items {
                match offline.get(&item.id) {
                    Some(p) => records.push(PredictionRecord::new(
                        item.id.clone(),
                        p.probs.clone(),
                        PredictionSource::Original,
                        item.true_label,
                    )),
                    None => failures.push(ItemFailure {
                        item_id: item.id.clone(),
                        reason: "no logged prediction".into(),
                        transport: false,
                    }),
                }
            }
            return Ok((records, failures));
        }
        let model = model.ok_or_else(|| HarnessError::Config("no model and no offline predictions".into()))?;
        let prompts: Vec<String> = items.iter().map(|i| i.prompt.clone()).collect();
        for (item, r) in items.iter().zip(model.predict_batch(&prompts)) {
            match r {
                Ok(p) => records.push(PredictionRecord::new(
                    item.id.clone(),
                    p,
                    PredictionSource::Original,
                    item.true_label,
                )),
                Err(e) => failures.push(failure(&item.id, &e)),
            }
        }
        Ok((records, failures))
    }

    fn smooth(&self, items: &[&TestItem], model: Option<&dyn ProbModel>) -> Result<Smoothing, HarnessError> {
        let cfg = self
            .config
            .mucs
            .as_ref()
            .ok_or_else(|| HarnessError::Config("mucs is not configured".into()))?;
        let mut out = Smoothing::default();
        for item in items {
            if let Some(offline) = &self.offline {
                match offline.get(&item.id).and_then(|p| p.mutant_probs.as_ref()) {
                    Some(ms) => {
                        let p = smooth_distributions(ms).expect("logged mutant lists are non-empty");
                        out.smoothed.insert(
                            item.id.clone(),
                            PredictionRecord::new(item.id.clone(), p, PredictionSource::Smoothed, item.true_label),
                        );
                        out.mutants.insert(item.id.clone(), MutantPredictionSet::new(item.id.clone(), ms.clone())?);
                    }
                    None => out.failures.push(ItemFailure {
                        item_id: item.id.clone(),
                        reason: "no logged mutant predictions".into(),
                        transport: false,
                    }),
                }
                continue;
            }
            let model = model.ok_or_else(|| HarnessError::Config("no model and no offline predictions".into()))?;
            let outcome = mucs_smooth(item, cfg, &self.lexicon, model)?;
            if let Some((_, e)) = outcome.failures.first() {
                let mut f = failure(&item.id, e);
                f.reason = format!("{} of {} mutant queries failed: {}", outcome.failures.len(), cfg.n_mutants, f.reason);
                out.failures.push(f);
            }
            if let Some(s) = outcome.smoothed {
                out.smoothed.insert(item.id.clone(), s);
            }
            if let Some(m) = outcome.mutants {
                out.mutants.insert(item.id.clone(), m);
            }
            out.audit.extend(outcome.audit);
        }
        Ok(out)
    }

    /// Queries every test and train item, plus mutants when MuCS is
    /// configured, producing a replayable prediction log.
    pub fn collect_predictions(&self, model: &dyn ProbModel) -> Result<PredictionLog, HarnessError> {
        let all: Vec<TestItem> = self.items.iter().chain(self.train.iter().flatten()).cloned().collect();
        let (records, failures) = self.original_predictions(&all, Some(model))?;
        let mut log = PredictionLog {
            failures,
            ..PredictionLog::default()
        };
        let smoothing = match self.config.mucs {
            Some(_) => {
                let ok: HashSet<&str> = records.iter().map(|r| r.item_id.as_str()).collect();
                let items: Vec<&TestItem> = all.iter().filter(|i| ok.contains(i.id.as_str())).collect();
                Some(self.smooth(&items, Some(model))?)
            }
            None => None,
        };
        for r in records {
            let mutant_probs = smoothing.as_ref().and_then(|s| {
                s.smoothed
                    .contains_key(&r.item_id)
                    .then(|| s.mutants[&r.item_id].mutant_probs.clone())
            });
            log.predictions.push(OfflinePrediction {
                id: r.item_id,
                probs: r.probs,
                mutant_probs,
            });
        }
        if let Some(s) = smoothing {
            log.failures.extend(s.failures);
        }
        Ok(log)
    }

    /// Gathers original predictions, smoothed predictions when MuCS is
    /// configured, and train predictions when a train split is given.
    pub fn prepare(&self, model: Option<&dyn ProbModel>) -> Result<Prepared, HarnessError> {
        let (original, prediction_failures) = self.original_predictions(&self.items, model)?;
        if original.is_empty() {
            return Err(HarnessError::NoPredictions);
        }
        let evaluated: HashSet<&str> = original.iter().map(|r| r.item_id.as_str()).collect();
        let smoothing = match self.config.mucs {
            Some(_) => {
                let items: Vec<&TestItem> = self.items.iter().filter(|i| evaluated.contains(i.id.as_str())).collect();
                Some(self.smooth(&items, model)?)
            }
            None => None,
        };
        let detector_records: Vec<PredictionRecord> = match &smoothing {
            Some(s) => original
                .iter()
                .map(|r| s.smoothed.get(&r.item_id).cloned().unwrap_or_else(|| r.clone()))
                .collect(),
            None => original.clone(),
        };
        let train_records = match &self.train {
            Some(train) => {
                let (records, failures) = self.original_predictions(train, model)?;
                for f in failures {
                    log::warn!("train item {} has no prediction: {}", f.item_id, f.reason);
                }
                Some(records)
            }
            None => None,
        };
        Ok(Prepared {
            original,
            prediction_failures,
            smoothing,
            detector_records,
            train_records,
        })
    }

    /// Full rankings of every configured detector; `Err` marks unmet
    /// prerequisites.
    pub fn rankings(&self, prepared: &Prepared) -> Vec<(Method, Result<Ranking, DetectorError>)> {
        let inputs = prepared.inputs(self.embeddings.as_ref());
        self.config
            .methods
            .iter()
            .map(|&m| (m, rank(m, &self.config.detector, &inputs)))
            .collect()
    }

    /// Runs every configured detector at every budget. `model` is unused in
    /// offline mode.
    pub fn run(&self, model: Option<&dyn ProbModel>) -> Result<EvalReport, HarnessError> {
        let cfg = &self.config;
        let unlabeled: Vec<String> = self
            .items
            .iter()
            .filter(|i| i.true_label.is_none())
            .map(|i| i.id.clone())
            .collect();
        if !unlabeled.is_empty() {
            return Err(HarnessError::MissingLabels(unlabeled));
        }

        let prepared = self.prepare(model)?;
        let Prepared {
            original,
            prediction_failures,
            smoothing,
            detector_records,
            ..
        } = &prepared;
        let n_faults = original.iter().filter(|r| r.is_fault == Some(true)).count();
        if n_faults == 0 {
            return Err(HarnessError::NoFaults);
        }
        let inputs = prepared.inputs(self.embeddings.as_ref());
        let n = original.len();
        let budget_counts = cfg
            .budgets
            .iter()
            .map(|b| Budget::Fraction(*b).resolve(n))
            .collect::<Result<Vec<_>, _>>()?;

        let mut methods = Vec::new();
        for &method in &cfg.methods {
            let column = if smoothing.is_some() && !matches!(method, Method::Random | Method::Bald) {
                format!("{}-M", method.column())
            } else {
                method.column().to_string()
            };
            let result = match rank(method, &cfg.detector, &inputs) {
                Ok(ranking) => {
                    let mut trcs = Vec::new();
                    let mut found = Vec::new();
                    for &k in &budget_counts {
                        let selected = ranking.top(k);
                        trcs.push(Some(trc(selected, original, k)?));
                        found.push(Some(faults_in_prefix(&ranking.order, original, k)));
                    }
                    let average = trcs.iter().flatten().sum::<f64>() / trcs.len() as f64;
                    MethodResult {
                        method,
                        column,
                        trc: trcs,
                        selected_faults: found,
                        average: Some(average),
                        unavailable: None,
                    }
                }
                Err(e) => {
                    log::info!("{method}: unavailable ({e})");
                    MethodResult {
                        method,
                        column,
                        trc: vec![None; budget_counts.len()],
                        selected_faults: vec![None; budget_counts.len()],
                        average: None,
                        unavailable: Some(e.to_string()),
                    }
                }
            };
            methods.push(result);
        }

        let acc_original = accuracy(original).expect("labels checked above");
        let accuracy = match &smoothing {
            Some(s) => {
                let label: HashMap<&str, usize> = original
                    .iter()
                    .filter_map(|r| r.true_label.map(|y| (r.item_id.as_str(), y)))
                    .collect();
                let (mut correct, mut total) = (0usize, 0usize);
                let mut ids: Vec<&String> = s.mutants.keys().collect();
                ids.sort();
                for id in ids {
                    let y = label[id.as_str()];
                    total += s.mutants[id].mutant_labels.len();
                    correct += s.mutants[id].mutant_labels.iter().filter(|&&l| l == y).count();
                }
                let mutated = (total > 0).then(|| correct as f64 / total as f64);
                let drift = mutated.map(|m| (acc_original - m).abs());
                AccuracySummary {
                    original: acc_original,
                    mutated,
                    smoothed: accuracy(detector_records),
                    drift,
                    drift_flagged: drift.is_some_and(|d| d > DRIFT_THRESHOLD),
                }
            }
            None => AccuracySummary {
                original: acc_original,
                mutated: None,
                smoothed: None,
                drift: None,
                drift_flagged: false,
            },
        };
        if accuracy.drift_flagged {
            log::warn!(
                "accuracy on mutated prompts differs from the original by {:.4}",
                accuracy.drift.unwrap_or_default()
            );
        }

        Ok(EvalReport {
            task: self.template.task_id.clone(),
            mucs: smoothing.is_some(),
            seed: cfg.seed,
            n_items: n,
            n_faults,
            budgets: cfg.budgets.clone(),
            budget_counts,
            methods,
            calibration_original: CalibrationSummary::from_records(original, cfg.ece_bins)?,
            calibration_smoothed: smoothing
                .as_ref()
                .map(|_| CalibrationSummary::from_records(detector_records, cfg.ece_bins))
                .transpose()?,
            accuracy,
            fallbacks: smoothing.as_ref().map(|s| s.failures.clone()).unwrap_or_default(),
            prediction_failures: prediction_failures.clone(),
        })
    }
}

/// Loads the experiment described by `cfg` and runs it.
pub fn run_experiment(cfg: &ExperimentConfig, model: Option<&dyn ProbModel>) -> Result<EvalReport, HarnessError> {
    Experiment::load(cfg)?.run(model)
}
