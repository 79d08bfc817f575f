//! JSON-lines ingestion: datasets, embeddings and offline prediction logs.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::HarnessError;
use crate::metrics::{ItemKind, ProbVector, TestItem};

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn line_err(path: &Path, line: usize, message: impl Into<String>) -> HarnessError {
    HarnessError::Malformed {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

type NumberedObjects = Vec<(usize, Map<String, Value>)>;

/// Non-blank lines with their 1-based line numbers, parsed as JSON objects.
fn json_lines(path: &Path) -> Result<NumberedObjects, HarnessError> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(m)) => out.push((i + 1, m)),
            Ok(_) => return Err(line_err(path, i + 1, "expected a JSON object")),
            Err(e) => return Err(line_err(path, i + 1, e.to_string())),
        }
    }
    Ok(out)
}

/// Ids may be written as strings or integers.
fn read_id(path: &Path, line: usize, obj: &Map<String, Value>) -> Result<String, HarnessError> {
    match obj.get("id") {
        Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(_) => Err(line_err(path, line, "id must be a non-empty string or a number")),
        None => Err(line_err(path, line, "missing id")),
    }
}

fn check_unique(path: &Path, line: usize, id: &str, seen: &mut HashSet<String>) -> Result<(), HarnessError> {
    if !seen.insert(id.to_string()) {
        return Err(HarnessError::DuplicateId {
            path: path.display().to_string(),
            line,
            id: id.to_string(),
        });
    }
    Ok(())
}

/// Reads `{id, prompt, label?, kind?}` records. A label is a class index or
/// a class name (matched case-insensitively); `kind` defaults to
/// `default_kind`.
pub fn load_dataset(path: &Path, class_names: &[String], default_kind: ItemKind) -> Result<Vec<TestItem>, HarnessError> {
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (line, obj) in json_lines(path)? {
        let id = read_id(path, line, &obj)?;
        check_unique(path, line, &id, &mut seen)?;
        let prompt = obj
            .get("prompt")
            .and_then(Value::as_str)
            .ok_or_else(|| line_err(path, line, "missing string field prompt"))?;
        let kind = match obj.get("kind") {
            None | Some(Value::Null) => default_kind,
            Some(v) => serde_json::from_value(v.clone()).map_err(|_| line_err(path, line, "kind must be \"text\" or \"code\""))?,
        };
        let label = match obj.get("label") {
            None | Some(Value::Null) => None,
            Some(Value::Number(n)) => {
                let l = n
                    .as_u64()
                    .ok_or_else(|| line_err(path, line, "label must be a non-negative integer"))? as usize;
                if l >= class_names.len() {
                    return Err(line_err(path, line, format!("label {l} out of range for {} classes", class_names.len())));
                }
                Some(l)
            }
            Some(Value::String(s)) => {
                let l = class_names
                    .iter()
                    .position(|c| c.eq_ignore_ascii_case(s.trim()))
                    .ok_or_else(|| line_err(path, line, format!("unknown label {s:?}")))?;
                Some(l)
            }
            Some(_) => return Err(line_err(path, line, "label must be an integer or a class name")),
        };
        let mut item = TestItem::new(id, prompt, kind);
        item.true_label = label;
        items.push(item);
    }
    if items.is_empty() {
        return Err(HarnessError::EmptyDataset(path.display().to_string()));
    }
    Ok(items)
}

#[derive(Deserialize)]
struct EmbeddingLine {
    vector: Vec<f64>,
}

/// Reads `{id, vector}` records.
pub fn load_embeddings(path: &Path) -> Result<HashMap<String, Vec<f64>>, HarnessError> {
    let mut out = HashMap::new();
    let mut seen = HashSet::new();
    for (line, obj) in json_lines(path)? {
        let id = read_id(path, line, &obj)?;
        check_unique(path, line, &id, &mut seen)?;
        let e: EmbeddingLine = serde_json::from_value(Value::Object(obj)).map_err(|e| line_err(path, line, e.to_string()))?;
        if e.vector.is_empty() || e.vector.iter().any(|x| !x.is_finite()) {
            return Err(line_err(path, line, "vector must be non-empty and finite"));
        }
        out.insert(id, e.vector);
    }
    Ok(out)
}

/// One logged prediction, optionally with its mutants' predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflinePrediction {
    pub id: String,
    pub probs: ProbVector,
    pub mutant_probs: Option<Vec<ProbVector>>,
}

#[derive(Deserialize)]
struct PredictionLine {
    probs: Vec<f64>,
    #[serde(default)]
    mutant_probs: Option<Vec<Vec<f64>>>,
}

/// Reads `{id, probs, mutant_probs?}` records; every vector must have one
/// entry per class.
pub fn load_predictions(path: &Path, class_names: &[String]) -> Result<HashMap<String, OfflinePrediction>, HarnessError> {
    let mut out = HashMap::new();
    let mut seen = HashSet::new();
    let vector = |line: usize, v: Vec<f64>| {
        ProbVector::with_names(v, class_names.to_vec()).map_err(|e| line_err(path, line, e.to_string()))
    };
    for (line, obj) in json_lines(path)? {
        let id = read_id(path, line, &obj)?;
        check_unique(path, line, &id, &mut seen)?;
        let p: PredictionLine = serde_json::from_value(Value::Object(obj)).map_err(|e| line_err(path, line, e.to_string()))?;
        let probs = vector(line, p.probs)?;
        let mutant_probs = match p.mutant_probs {
            Some(ms) if ms.is_empty() => return Err(line_err(path, line, "mutant_probs is empty")),
            Some(ms) => Some(ms.into_iter().map(|m| vector(line, m)).collect::<Result<Vec<_>, _>>()?),
            None => None,
        };
        out.insert(id.clone(), OfflinePrediction { id, probs, mutant_probs });
    }
    Ok(out)
}

#[derive(Serialize)]
struct PredictionOut<'a> {
    id: &'a str,
    probs: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    mutant_probs: Option<Vec<&'a [f64]>>,
}

/// Writes predictions in the order given, one JSON object per line.
pub fn write_predictions<'a>(path: &Path, preds: impl IntoIterator<Item = &'a OfflinePrediction>) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    for p in preds {
        let line = PredictionOut {
            id: &p.id,
            probs: p.probs.probs(),
            mutant_probs: p.mutant_probs.as_ref().map(|ms| ms.iter().map(ProbVector::probs).collect()),
        };
        let text = serde_json::to_string(&line).map_err(|e| io_err(path, e))?;
        writeln!(w, "{text}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        vec!["negative".into(), "neutral".into(), "positive".into()]
    }

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn sentiment_sized_dataset() {
        let text: String = (0..150)
            .map(|i| format!("{{\"id\":\"r{i}\",\"prompt\":\"review {i}\",\"label\":{}}}\n", i % 3))
            .collect();
        let f = file(&text);
        let items = load_dataset(f.path(), &names(), ItemKind::Text).unwrap();
        assert_eq!(items.len(), 150);
        assert_eq!(items[4].true_label, Some(1));
    }

    #[test]
    fn labels_by_name_ids_by_number_and_kinds() {
        let f = file("{\"id\":7,\"prompt\":\"x\",\"label\":\"Positive\",\"kind\":\"code\"}\n\n{\"id\":\"b\",\"prompt\":\"y\"}\n");
        let items = load_dataset(f.path(), &names(), ItemKind::Text).unwrap();
        assert_eq!(items[0].id, "7");
        assert_eq!(items[0].true_label, Some(2));
        assert_eq!(items[0].kind, ItemKind::Code);
        assert_eq!(items[1].true_label, None);
        assert_eq!(items[1].kind, ItemKind::Text);
    }

    #[test]
    fn dataset_errors() {
        let f = file("");
        assert!(matches!(load_dataset(f.path(), &names(), ItemKind::Text), Err(HarnessError::EmptyDataset(_))));
        let f = file("{\"id\":\"a\",\"prompt\":\"x\"}\n{\"prompt\":\"y\"}\n");
        let err = load_dataset(f.path(), &names(), ItemKind::Text).unwrap_err();
        assert!(matches!(&err, HarnessError::Malformed { line: 2, message, .. } if message == "missing id"));
        assert!(err.to_string().contains("line 2"));
        let f = file("{\"id\":\"a\",\"prompt\":\"x\"}\n{\"id\":\"a\",\"prompt\":\"y\"}\n");
        assert!(matches!(
            load_dataset(f.path(), &names(), ItemKind::Text),
            Err(HarnessError::DuplicateId { line: 2, .. })
        ));
        let f = file("{\"id\":\"a\",\"prompt\":\"x\",\"label\":3}\n");
        assert!(load_dataset(f.path(), &names(), ItemKind::Text).is_err());
        let f = file("not json\n");
        assert!(matches!(load_dataset(f.path(), &names(), ItemKind::Text), Err(HarnessError::Malformed { line: 1, .. })));
    }

    #[test]
    fn predictions_round_trip() {
        let preds = vec![
            OfflinePrediction {
                id: "a".into(),
                probs: ProbVector::with_names(vec![0.1, 0.2, 0.7], names()).unwrap(),
                mutant_probs: Some(vec![ProbVector::with_names(vec![0.3, 0.3, 0.4], names()).unwrap()]),
            },
            OfflinePrediction {
                id: "b".into(),
                probs: ProbVector::with_names(vec![0.6, 0.2, 0.2], names()).unwrap(),
                mutant_probs: None,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        write_predictions(&path, &preds).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("{\"id\":\"a\",\"probs\":[0.1,0.2,0.7],\"mutant_probs\":[[0.3,0.3,0.4]]}\n"));
        let back = load_predictions(&path, &names()).unwrap();
        assert_eq!(back["a"], preds[0]);
        assert_eq!(back["b"], preds[1]);
    }

    #[test]
    fn prediction_width_checked() {
        let f = file("{\"id\":\"a\",\"probs\":[0.5,0.5]}\n");
        assert!(load_predictions(f.path(), &names()).is_err());
    }

    #[test]
    fn embeddings() {
        let f = file("{\"id\":\"a\",\"vector\":[1,0]}\n{\"id\":\"b\",\"vector\":[0.5,0.5]}\n");
        let e = load_embeddings(f.path()).unwrap();
        assert_eq!(e["a"], [1.0, 0.0]);
        let f = file("{\"id\":\"a\",\"vector\":[]}\n");
        assert!(load_embeddings(f.path()).is_err());
    }
}
