//! Replays a logged prediction file through the public harness API.

use std::path::Path;

use mucs_core::detectors::Method;
use mucs_core::harness::{run_experiment, ExperimentConfig, HarnessError};
use mucs_core::mutation::MucsConfig;
use serde_json::json;

const N: usize = 40;
const FAULTS: usize = 8;

fn write_lines(path: &Path, rows: impl Iterator<Item = serde_json::Value>) {
    let text: String = rows.map(|r| format!("{r}\n")).collect();
    std::fs::write(path, text).unwrap();
}

/// Every item is labeled `negative`. The first `FAULTS` items are confidently
/// wrong on the original prompt and split across classes on their mutants.
fn fixture(dir: &Path) -> ExperimentConfig {
    write_lines(
        &dir.join("data.jsonl"),
        (0..N).map(|i| json!({"id": format!("d{i}"), "prompt": format!("text {i}"), "label": "negative"})),
    );
    write_lines(
        &dir.join("preds.jsonl"),
        (0..N).map(|i| {
            if i < FAULTS {
                json!({"id": format!("d{i}"), "probs": [0.05, 0.05, 0.9],
                       "mutant_probs": [[0.5, 0.2, 0.3], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5], [0.5, 0.3, 0.2]]})
            } else {
                let c = 0.6 + 0.01 * i as f64;
                let r = (1.0 - c) / 2.0;
                json!({"id": format!("d{i}"), "probs": [c, r, r], "mutant_probs": [[c, r, r], [c, r, r]]})
            }
        }),
    );
    ExperimentConfig {
        dataset: dir.join("data.jsonl"),
        offline_predictions: Some(dir.join("preds.jsonl")),
        methods: vec![Method::Gini, Method::Maxp],
        budgets: vec![0.2, 0.5],
        ..ExperimentConfig::default()
    }
}

#[test]
fn plain_replay_misses_confident_faults() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&fixture(dir.path()), None).unwrap();
    assert_eq!((report.n_items, report.n_faults), (N, FAULTS));
    assert_eq!(report.budget_counts, [8, 20]);
    let gini = report.method(Method::Gini).unwrap();
    assert_eq!(gini.column, "Gini");
    assert_eq!(gini.trc, [Some(0.0), Some(0.0)]);
    assert_eq!(report.method(Method::Maxp).unwrap().trc, gini.trc);
}

#[test]
fn smoothed_replay_surfaces_faults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        mucs: Some(MucsConfig::default()),
        methods: vec![Method::Gini, Method::Maxp, Method::Bald],
        ..fixture(dir.path())
    };
    let report = run_experiment(&cfg, None).unwrap();
    assert!(report.mucs);
    let gini = report.method(Method::Gini).unwrap();
    assert_eq!(gini.column, "Gini-M");
    assert_eq!(gini.trc, [Some(1.0), Some(1.0)]);
    assert_eq!(report.method(Method::Maxp).unwrap().trc, gini.trc);
    let smoothed = report.calibration_smoothed.as_ref().unwrap();
    assert!(smoothed.ece < report.calibration_original.ece);
    assert!(report.fallbacks.is_empty());
    assert_eq!(report.method(Method::Bald).unwrap().trc, [Some(1.0), Some(1.0)]);
}

#[test]
fn unlabeled_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    write_lines(&cfg.dataset, (0..3).map(|i| json!({"id": format!("d{i}"), "prompt": "x"})));
    let err = run_experiment(&cfg, None).unwrap_err();
    assert!(matches!(&err, HarnessError::MissingLabels(ids) if ids.len() == 3), "{err}");
}
