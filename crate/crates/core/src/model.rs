//! The classifier abstraction shared by smoothing, the gateway and the
//! experiment harness.

use thiserror::Error;

use crate::metrics::ProbVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("could not parse a distribution from the reply after {attempts} attempts: {reason}")]
    PredictFailed {
        attempts: u32,
        raw_text: String,
        reason: String,
    },
    #[error("transport failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
    #[error("prompt needs ~{estimated} tokens, limit is {limit}")]
    ContextOverflow { estimated: usize, limit: usize },
    #[error("{0}")]
    Other(String),
}

impl ModelError {
    pub fn is_transport(&self) -> bool {
        matches!(self, ModelError::Transport { .. })
    }
}

/// Anything that maps a prompt to a class distribution.
pub trait ProbModel: Sync {
    fn predict(&self, prompt: &str) -> Result<ProbVector, ModelError>;

    /// Predicts several prompts; results keep the input order. Implementors
    /// may issue the queries concurrently.
    fn predict_batch(&self, prompts: &[String]) -> Vec<Result<ProbVector, ModelError>> {
        prompts.iter().map(|p| self.predict(p)).collect()
    }
}

impl<F> ProbModel for F
where
    F: Fn(&str) -> Result<ProbVector, ModelError> + Sync,
{
    fn predict(&self, prompt: &str) -> Result<ProbVector, ModelError> {
        self(prompt)
    }
}
