use std::collections::HashSet;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::GatewayError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub prompt: String,
    pub label: usize,
}

/// How a task is put to the model and how its reply is read back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTemplate {
    pub task_id: String,
    pub class_names: Vec<String>,
    pub instruction: String,
    /// Empty for zero-shot prompting.
    #[serde(default)]
    pub examples: Vec<FewShotExample>,
    /// Two-class tasks whose reply may be a bare probability of the second
    /// class (`s` parses as `[1 - s, s]`).
    #[serde(default)]
    pub scalar_binary: bool,
}

impl TaskTemplate {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.class_names.len() < 2 {
            return Err(GatewayError::Template(format!(
                "{}: at least two classes required",
                self.task_id
            )));
        }
        let mut seen = HashSet::new();
        for c in &self.class_names {
            if c.trim().is_empty() || !seen.insert(c.to_lowercase()) {
                return Err(GatewayError::Template(format!(
                    "{}: class names must be non-empty and unique, got {c:?}",
                    self.task_id
                )));
            }
        }
        if self.scalar_binary && self.class_names.len() != 2 {
            return Err(GatewayError::Template(format!(
                "{}: scalar replies need exactly two classes",
                self.task_id
            )));
        }
        if let Some(ex) = self.examples.iter().find(|e| e.label >= self.class_names.len()) {
            return Err(GatewayError::Template(format!(
                "{}: example label {} out of range",
                self.task_id, ex.label
            )));
        }
        Ok(())
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        let name = name.trim().to_lowercase();
        self.class_names.iter().position(|c| c.to_lowercase() == name)
    }

    fn schema_example(&self) -> String {
        let fields: Vec<String> = self
            .class_names
            .iter()
            .map(|c| format!("{}: <probability>", json_str(c)))
            .collect();
        format!("{{{}}}", fields.join(", "))
    }

    fn one_hot(&self, label: usize) -> String {
        let fields: Vec<String> = self
            .class_names
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{}: {}", json_str(c), if i == label { "1.0" } else { "0.0" }))
            .collect();
        format!("{{{}}}", fields.join(", "))
    }

    /// The output-format reminder closing every prompt.
    pub fn schema_reminder(&self) -> String {
        let mut s = format!(
            "Respond with only a JSON object mapping every class to its probability, \
             exactly in this form: {}. The probabilities must be between 0 and 1 and sum to 1.",
            self.schema_example()
        );
        if self.scalar_binary {
            let _ = write!(
                s,
                " Alternatively respond with a single number between 0 and 1: the probability of {}.",
                json_str(&self.class_names[1])
            );
        }
        s
    }

    /// Instruction, class list, few-shot examples in class-id order, the
    /// input, then the output schema.
    pub fn render(&self, prompt: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.instruction.trim_end());
        let _ = writeln!(out);
        let _ = writeln!(out, "Classes: {}", self.class_names.join(", "));
        let mut examples: Vec<&FewShotExample> = self.examples.iter().collect();
        examples.sort_by_key(|e| e.label);
        for (i, ex) in examples.iter().enumerate() {
            let _ = writeln!(out);
            let _ = writeln!(out, "Example {}:", i + 1);
            let _ = writeln!(out, "Input:\n{}", ex.prompt.trim_end());
            let _ = writeln!(out, "Output: {}", self.one_hot(ex.label));
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "Input:\n{}", prompt.trim_end());
        let _ = writeln!(out);
        out.push_str(&self.schema_reminder());
        out
    }

    /// Built-in templates: `sentiment`, `clone_detection`, `tagmynews`.
    pub fn builtin(id: &str) -> Option<TaskTemplate> {
        let t = match id {
            "sentiment" => TaskTemplate {
                task_id: "sentiment".into(),
                class_names: vec!["negative".into(), "neutral".into(), "positive".into()],
                instruction: "Classify the sentiment of the following review as negative, \
                              neutral or positive, and give your confidence in each class."
                    .into(),
                examples: vec![],
                scalar_binary: false,
            },
            "clone_detection" => TaskTemplate {
                task_id: "clone_detection".into(),
                class_names: vec!["no_clone".into(), "clone".into()],
                instruction: "Decide whether the two code snippets below are clones, i.e. \
                              implement the same functionality. Give a probability score from \
                              0 to 1, where 0 indicates no clone and 1 indicates a clone."
                    .into(),
                examples: vec![],
                scalar_binary: true,
            },
            "tagmynews" => TaskTemplate {
                task_id: "tagmynews".into(),
                class_names: ["sport", "business", "us", "health", "sci_tech", "world", "entertainment"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
                instruction: "Assign the news headline below to one of the topic classes, and \
                              give your confidence in each class."
                    .into(),
                examples: vec![],
                scalar_binary: false,
            },
            _ => return None,
        };
        Some(t)
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_shot_sentiment_layout() {
        let t = TaskTemplate::builtin("sentiment").unwrap();
        t.validate().unwrap();
        let out = t.render("The plot was thin but the acting saved it.");
        assert!(out.starts_with("Classify the sentiment"));
        let input_at = out.find("The plot was thin").unwrap();
        let schema_at = out.find("Respond with only a JSON object").unwrap();
        assert!(input_at < schema_at);
        assert!(out.ends_with("sum to 1."));
        assert!(out.contains(r#"{"negative": <probability>, "neutral": <probability>, "positive": <probability>}"#));
        assert_eq!(out, t.render("The plot was thin but the acting saved it."));
    }

    #[test]
    fn one_shot_examples_in_class_order() {
        let mut t = TaskTemplate::builtin("tagmynews").unwrap();
        t.class_names.truncate(5);
        t.examples = (0..5)
            .rev()
            .map(|l| FewShotExample {
                prompt: format!("exemplar-{l}"),
                label: l,
            })
            .collect();
        t.validate().unwrap();
        let out = t.render("query");
        let positions: Vec<usize> = (0..5).map(|l| out.find(&format!("exemplar-{l}")).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert!(out.contains(r#"Output: {"sport": 1.0, "business": 0.0"#));
    }

    #[test]
    fn validation() {
        let mut t = TaskTemplate::builtin("sentiment").unwrap();
        t.class_names = vec!["a".into(), "A".into()];
        assert!(t.validate().is_err());
        let mut t = TaskTemplate::builtin("clone_detection").unwrap();
        t.validate().unwrap();
        t.class_names.push("maybe".into());
        assert!(t.validate().is_err());
        assert_eq!(TaskTemplate::builtin("sentiment").unwrap().class_index(" Positive "), Some(2));
    }
}
