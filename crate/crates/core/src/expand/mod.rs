//! Document expansion: prompt rendering, remote and synthetic query
//! generation, completion parsing and expansion files.

mod parse;
mod prompt;
mod remote;
mod store;
mod synthetic;

pub use parse::parse_completion;
pub use prompt::{Exemplar, PromptTemplate, TemplateKind};
pub use remote::{expand_remote, CompletionBackend, EndpointConfig, HttpCompletion, Metrics, RateLimiter, RemoteExpansion};
pub use store::{expansions_to_jsonl, load_expansions, parse_expansions, persist_expansions, ExpandedQueries, LoadedExpansions};
pub use synthetic::{expand_synthetic, is_content_term, SyntheticGenerator, SyntheticQueries, STOPWORDS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExpandError {
    #[error("endpoint returned status {status}: {message}")]
    Endpoint { status: u16, message: String },
    #[error("endpoint timed out after {0} s")]
    Timeout(f64),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed endpoint response: {0}")]
    Parse(String),
    #[error("completion contained no queries")]
    EmptyExpansion,
    #[error("template error: {0}")]
    Template(String),
    #[error("invalid generation settings: {0}")]
    Config(String),
    #[error("{path}:{line}: {message}")]
    Malformed { path: String, line: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ExpandError {
    /// Whether the error came from talking to the completion endpoint.
    pub fn is_endpoint(&self) -> bool {
        matches!(self, Self::Endpoint { .. } | Self::Timeout(_) | Self::Transport(_) | Self::Parse(_))
    }
}

/// Sampling settings forwarded to the completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationParams {
    pub top_p: f64,
    pub top_k: usize,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub n_queries: usize,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            top_p: 0.95,
            top_k: 50,
            temperature: 0.7,
            max_new_tokens: 128,
            n_queries: 3,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), ExpandError> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ExpandError::Config(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if self.top_k < 1 {
            return Err(ExpandError::Config("top_k must be at least 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(ExpandError::Config(format!("temperature {} must be positive", self.temperature)));
        }
        if self.max_new_tokens < 1 || self.n_queries < 1 {
            return Err(ExpandError::Config("max_new_tokens and n_queries must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sampling_settings() {
        let p = GenerationParams::default();
        assert_eq!((p.top_p, p.top_k, p.temperature, p.n_queries), (0.95, 50, 0.7, 3));
        p.validate().unwrap();
        for bad in [
            GenerationParams { top_p: 0.0, ..p.clone() },
            GenerationParams { top_p: 1.01, ..p.clone() },
            GenerationParams { top_k: 0, ..p.clone() },
            GenerationParams { temperature: 0.0, ..p.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
