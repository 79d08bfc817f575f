//! Evaluation reports, their CSV tables and report-to-report comparison.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::detectors::Method;
use crate::metrics::{histogram_diversity, CalibrationBins, PredictionRecord};

/// TRC of one detector across the budget grid. `trc` is `None` throughout
/// when the detector's prerequisites were unmet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    /// Table column name, `-M` suffixed when run on smoothed predictions.
    pub column: String,
    pub trc: Vec<Option<f64>>,
    pub selected_faults: Vec<Option<usize>>,
    pub average: Option<f64>,
    pub unavailable: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub average_confidence: f64,
    pub ece: f64,
    pub histogram: Vec<usize>,
    /// Population variance of the histogram counts.
    pub diversity: f64,
}

impl CalibrationSummary {
    pub fn from_records(records: &[PredictionRecord], m: usize) -> Result<Self, HarnessError> {
        let bins = CalibrationBins::from_records(records, m)?;
        let histogram: Vec<usize> = bins.bins.iter().map(|b| b.count).collect();
        let n = records.len() as f64;
        Ok(CalibrationSummary {
            average_confidence: records.iter().map(PredictionRecord::confidence).sum::<f64>() / n,
            ece: bins.ece(),
            diversity: histogram_diversity(&histogram),
            histogram,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub original: f64,
    /// Pooled over every mutant prediction.
    pub mutated: Option<f64>,
    pub smoothed: Option<f64>,
    /// `|original - mutated|`.
    pub drift: Option<f64>,
    pub drift_flagged: bool,
}

/// An item whose prediction or smoothing could not be obtained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub item_id: String,
    pub reason: String,
    /// The model endpoint was unreachable rather than unparseable.
    #[serde(default)]
    pub transport: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub mucs: bool,
    pub seed: u64,
    pub n_items: usize,
    pub n_faults: usize,
    pub budgets: Vec<f64>,
    pub budget_counts: Vec<usize>,
    pub methods: Vec<MethodResult>,
    pub calibration_original: CalibrationSummary,
    pub calibration_smoothed: Option<CalibrationSummary>,
    pub accuracy: AccuracySummary,
    /// Items evaluated on their original prediction because smoothing failed.
    pub fallbacks: Vec<ItemFailure>,
    /// Items dropped because no original prediction was available.
    pub prediction_failures: Vec<ItemFailure>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("report: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn method(&self, m: Method) -> Option<&MethodResult> {
        self.methods.iter().find(|r| r.method == m)
    }

    /// Budget rows then an `Average` row; one column per method.
    pub fn trc_table(&self) -> Vec<Vec<String>> {
        let mut rows = vec![std::iter::once("Budget".to_string())
            .chain(self.methods.iter().map(|m| m.column.clone()))
            .collect::<Vec<_>>()];
        for (j, b) in self.budgets.iter().enumerate() {
            rows.push(
                std::iter::once(budget_label(*b))
                    .chain(self.methods.iter().map(|m| cell(m.trc[j])))
                    .collect(),
            );
        }
        rows.push(
            std::iter::once("Average".to_string())
                .chain(self.methods.iter().map(|m| cell(m.average)))
                .collect(),
        );
        rows
    }

    pub fn calibration_table(&self) -> Vec<Vec<String>> {
        let mut rows = vec![vec![
            "Predictions".to_string(),
            "Average Confidence".into(),
            "ECE".into(),
            "Variance".into(),
        ]];
        let mut push = |name: &str, c: &CalibrationSummary| {
            rows.push(vec![
                name.to_string(),
                format!("{:.4}", c.average_confidence),
                format!("{:.4}", c.ece),
                format!("{:.4}", c.diversity),
            ])
        };
        push("Original", &self.calibration_original);
        if let Some(s) = &self.calibration_smoothed {
            push("MuCS", s);
        }
        rows
    }

    /// One row per confidence interval.
    pub fn histogram_table(&self) -> Vec<Vec<String>> {
        let m = self.calibration_original.histogram.len();
        let mut header = vec!["Interval".to_string(), "Original".into()];
        if self.calibration_smoothed.is_some() {
            header.push("MuCS".into());
        }
        let mut rows = vec![header];
        for i in 0..m {
            let mut row = vec![
                format!("({:.4},{:.4}]", i as f64 / m as f64, (i + 1) as f64 / m as f64),
                self.calibration_original.histogram[i].to_string(),
            ];
            if let Some(s) = &self.calibration_smoothed {
                row.push(s.histogram[i].to_string());
            }
            rows.push(row);
        }
        rows
    }

    /// Writes `report.json`, `trc.csv`, `calibration.csv` and
    /// `histogram.csv` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        let json = dir.join("report.json");
        std::fs::write(&json, self.to_json() + "\n").map_err(|e| HarnessError::Io {
            path: json.display().to_string(),
            message: e.to_string(),
        })?;
        write_csv(&dir.join("trc.csv"), &self.trc_table())?;
        write_csv(&dir.join("calibration.csv"), &self.calibration_table())?;
        write_csv(&dir.join("histogram.csv"), &self.histogram_table())
    }
}

/// `0.1` → `10%`.
pub fn budget_label(b: f64) -> String {
    let pct = b * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{:.0}%", pct.round())
    } else {
        format!("{pct}%")
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

pub fn write_csv(path: &Path, rows: &[Vec<String>]) -> Result<(), HarnessError> {
    let err = |e: csv::Error| HarnessError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(|e| HarnessError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Flat,
    /// Baseline TRC is 0, so no relative change exists.
    Skipped,
    /// One side has no value.
    Unavailable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementCell {
    pub method: Method,
    pub budget: f64,
    pub baseline: Option<f64>,
    pub treated: Option<f64>,
    /// Percent change `(treated - baseline) / baseline * 100`.
    pub change_pct: Option<f64>,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodImprovement {
    pub method: Method,
    /// Mean of the per-budget percent changes, skipped cells excluded.
    pub mean_of_relative_pct: Option<f64>,
    /// Percent change between the two budget-averaged TRCs.
    pub relative_of_means_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementTable {
    pub cells: Vec<ImprovementCell>,
    pub methods: Vec<MethodImprovement>,
}

fn relative(baseline: Option<f64>, treated: Option<f64>) -> (Option<f64>, Direction) {
    match (baseline, treated) {
        (Some(0.0), Some(_)) => (None, Direction::Skipped),
        (Some(b), Some(t)) => {
            let pct = (t - b) / b * 100.0;
            let dir = if pct.abs() < 1e-12 {
                Direction::Flat
            } else if pct > 0.0 {
                Direction::Up
            } else {
                Direction::Down
            };
            (Some(pct), dir)
        }
        _ => (None, Direction::Unavailable),
    }
}

/// Per-cell relative change of `treated` over `baseline`. Methods are
/// matched by detector, so a MuCS report compares against a plain one.
pub fn compare_reports(baseline: &EvalReport, treated: &EvalReport) -> Result<ImprovementTable, HarnessError> {
    let same_budgets = baseline.budgets.len() == treated.budgets.len()
        && baseline.budgets.iter().zip(&treated.budgets).all(|(a, b)| (a - b).abs() < 1e-12);
    if !same_budgets {
        return Err(HarnessError::GridMismatch(format!(
            "budgets {:?} vs {:?}",
            baseline.budgets, treated.budgets
        )));
    }
    let mut a: Vec<Method> = baseline.methods.iter().map(|m| m.method).collect();
    let mut b: Vec<Method> = treated.methods.iter().map(|m| m.method).collect();
    a.sort();
    b.sort();
    if a != b {
        return Err(HarnessError::GridMismatch(format!("methods {a:?} vs {b:?}")));
    }
    let mut cells = Vec::new();
    let mut methods = Vec::new();
    for base in &baseline.methods {
        let treat = treated.method(base.method).expect("method sets are equal");
        let mut pcts = Vec::new();
        for (j, &budget) in baseline.budgets.iter().enumerate() {
            let (change_pct, direction) = relative(base.trc[j], treat.trc[j]);
            pcts.extend(change_pct);
            cells.push(ImprovementCell {
                method: base.method,
                budget,
                baseline: base.trc[j],
                treated: treat.trc[j],
                change_pct,
                direction,
            });
        }
        methods.push(MethodImprovement {
            method: base.method,
            mean_of_relative_pct: (!pcts.is_empty()).then(|| pcts.iter().sum::<f64>() / pcts.len() as f64),
            relative_of_means_pct: relative(base.average, treat.average).0,
        });
    }
    Ok(ImprovementTable { cells, methods })
}

impl ImprovementTable {
    pub fn rows(&self) -> Vec<Vec<String>> {
        let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:+.2}%"));
        let mut rows = vec![vec![
            "Method".to_string(),
            "Budget".into(),
            "Baseline".into(),
            "Treated".into(),
            "Change".into(),
            "Direction".into(),
        ]];
        for c in &self.cells {
            rows.push(vec![
                c.method.column().to_string(),
                budget_label(c.budget),
                cell(c.baseline),
                cell(c.treated),
                pct(c.change_pct),
                serde_json::to_value(c.direction)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default(),
            ]);
        }
        for m in &self.methods {
            for (label, v) in [
                ("mean of per-budget changes", m.mean_of_relative_pct),
                ("change of budget averages", m.relative_of_means_pct),
            ] {
                rows.push(vec![
                    m.method.column().to_string(),
                    label.to_string(),
                    String::new(),
                    String::new(),
                    pct(v),
                    String::new(),
                ]);
            }
        }
        rows
    }
}

/// Faults among the first `k` items of `order`, for nested-prefix checks.
pub fn faults_in_prefix(order: &[String], records: &[PredictionRecord], k: usize) -> usize {
    let faults: std::collections::HashSet<&str> = records
        .iter()
        .filter(|r| r.is_fault == Some(true))
        .map(|r| r.item_id.as_str())
        .collect();
    order.iter().take(k).filter(|id| faults.contains(id.as_str())).count()
}

