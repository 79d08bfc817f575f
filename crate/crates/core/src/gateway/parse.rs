//! Reading a class distribution out of free-form model replies.

use serde_json::Value;

use super::template::TaskTemplate;
use crate::metrics::ProbVector;

/// The first balanced `{...}` block, skipping braces inside JSON strings.
/// An opening brace that never closes is abandoned for the next one.
pub fn first_json_object(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(off) = text[start..].find('{') {
        let open = start + off;
        let mut depth = 0usize;
        let mut in_str = false;
        let mut escaped = false;
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(&text[open..=i]);
                    }
                }
                _ => {}
            }
        }
        start = open + 1;
    }
    None
}

fn bare_scalar(text: &str) -> Option<f64> {
    let t = text
        .trim()
        .trim_matches(|c: char| c == '`' || c == '"' || c == '\'' || c.is_whitespace())
        .trim_end_matches('.');
    t.parse::<f64>().ok()
}

/// Parses a reply into a distribution over `template.class_names`.
/// Every class must be present exactly once; unknown keys fail.
pub fn parse_reply(reply: &str, template: &TaskTemplate) -> Result<ProbVector, String> {
    let c = template.class_names.len();
    let raw = match first_json_object(reply) {
        Some(obj) => {
            let value: Value = serde_json::from_str(obj).map_err(|e| format!("invalid JSON object: {e}"))?;
            let map = value.as_object().ok_or("reply JSON is not an object")?;
            let mut raw: Vec<Option<f64>> = vec![None; c];
            for (key, v) in map {
                let idx = template
                    .class_index(key)
                    .ok_or_else(|| format!("unknown class {key:?}"))?;
                let p = v
                    .as_f64()
                    .ok_or_else(|| format!("value for {key:?} is not a number"))?;
                if raw[idx].replace(p).is_some() {
                    return Err(format!("class {:?} given twice", template.class_names[idx]));
                }
            }
            raw.into_iter()
                .enumerate()
                .map(|(i, p)| p.ok_or_else(|| format!("missing class {:?}", template.class_names[i])))
                .collect::<Result<Vec<f64>, String>>()?
        }
        None if template.scalar_binary => {
            let s = bare_scalar(reply).ok_or("reply is neither a JSON object nor a number")?;
            if !(0.0..=1.0).contains(&s) {
                return Err(format!("scalar {s} outside [0, 1]"));
            }
            vec![1.0 - s, s]
        }
        None => return Err("no JSON object in reply".into()),
    };
    ProbVector::with_names(raw, template.class_names.clone()).map_err(|e| e.to_string())
}
