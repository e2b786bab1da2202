//! Prompt construction, response grammars and query backends.
//!
//! Builders and parsers are pure. Backends implement [`BrainBackend`]: the
//! scripted [`OracleBrain`] answers from scene repertoires, [`RemoteBackend`]
//! talks to a chat-completion endpoint and [`CachedBackend`] wraps any
//! backend with a content-addressed response store.

mod oracle;
mod parse;
mod prompts;
mod remote;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use oracle::OracleBrain;
pub use parse::{
    parse_decomposition, parse_proposals, parse_steps, parse_verdict, render_decomposition,
    Decomposition, Step,
};
pub use prompts::{
    build_decomposition_prompt, build_inference_prompt, build_proposal_prompt, PromptKind,
    DECOMPOSITION_BASE, INFERENCE_BASE, PROPOSAL_BASE,
};
pub use remote::{
    cache_key, CacheStore, CachedBackend, RemoteBackend, RemoteConfig, ReplayBackend, API_KEY_ENV,
};

pub use crate::verifier::{Answer, Verdict};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskOrigin {
    Oracle,
    Remote,
    Manual,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub description: String,
    pub scene_id: String,
    pub origin: TaskOrigin,
}

impl TaskSpec {
    pub fn new(description: &str, scene_id: &str, origin: TaskOrigin) -> Self {
        Self {
            description: description.to_string(),
            scene_id: scene_id.to_string(),
            origin,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BrainError {
    #[error("no valid task lines in the response")]
    NoTasksFound,
    #[error("response has no answer section")]
    MissingAnswerSection,
    #[error("line {line}: malformed step {text:?}")]
    MalformedStep { line: usize, text: String },
    #[error("unknown primitive {0:?}")]
    UnknownPrimitive(String),
    #[error("{name} takes {expected}, got {got:?}")]
    BadArity {
        name: String,
        expected: &'static str,
        got: String,
    },
    #[error("success inference needs at least two scene graphs, got {0}")]
    TooFewGraphs(usize),
    #[error("prompt does not match any known prompt shape")]
    UnrecognizedPromptShape,
    #[error("no scene matches the prompt's scene graph")]
    UnknownScene,
    #[error("request timed out")]
    Timeout,
    #[error("endpoint returned HTTP {0}")]
    HttpError(u16),
    #[error("request budget exhausted")]
    BudgetExceeded,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed completion response: {0}")]
    BadResponse(String),
    #[error("cache error: {0}")]
    Cache(String),
    #[error("no cached response for this prompt")]
    CacheMiss,
}

/// A source of completions. Implementations must tolerate concurrent calls.
pub trait BrainBackend: Send + Sync {
    fn query(&self, prompt: &str) -> Result<String, BrainError>;
    fn identity(&self) -> String;
}

impl<B: BrainBackend + ?Sized> BrainBackend for Box<B> {
    fn query(&self, prompt: &str) -> Result<String, BrainError> {
        (**self).query(prompt)
    }
    fn identity(&self) -> String {
        (**self).identity()
    }
}

impl<B: BrainBackend + ?Sized> BrainBackend for std::sync::Arc<B> {
    fn query(&self, prompt: &str) -> Result<String, BrainError> {
        (**self).query(prompt)
    }
    fn identity(&self) -> String {
        (**self).identity()
    }
}
