//! Prompt rendering, code extraction and chat-completion backends.

mod http;
mod mock;
mod prompts;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use http::{BackendConfig, HttpBackend, PrefillMode, RetryPolicy, TokenBucket};
pub use mock::{MockBackend, MockRecord};
pub use prompts::{
    parse_code, render_prompt, zero_shot_prompt, ParseError, PromptContext, PromptError,
};

/// The three expansion actions of the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Generate,
    Improve,
    Fix,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Generate, Action::Improve, Action::Fix];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Generate => "generate",
            Action::Improve => "improve",
            Action::Fix => "fix",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "generate" => Ok(Action::Generate),
            "improve" => Ok(Action::Improve),
            "fix" => Ok(Action::Fix),
            other => Err(format!("unknown action {other:?}")),
        }
    }
}

/// Whether a prompt targets an environment model or a stdin/stdout problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Cwm,
    IoProblem,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    /// Pre-filled head of the assistant turn; the completion continues it.
    pub assistant_prefix: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub top_k: u32,
    pub top_p: f64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            max_new_tokens: 1500,
            temperature: 1.0,
            top_k: 100,
            top_p: 0.8,
        }
    }
}

/// A prompt plus sampling parameters. `action` is informational for real
/// backends and is the replay key for the mock backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub action: Action,
    pub prompt: PromptBundle,
    pub params: SamplingParams,
}

impl CompletionRequest {
    pub fn new(action: Action, prompt: PromptBundle) -> Self {
        Self {
            action,
            prompt,
            params: SamplingParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub usage: Option<Usage>,
    pub latency: Duration,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("transport error after {:.2}s: {message}", elapsed.as_secs_f64())]
    Transport { message: String, elapsed: Duration },
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Decode(String),
    #[error("mock script exhausted at {action} call {index}")]
    ScriptExhausted { action: Action, index: usize },
    #[error("backend configuration: {0}")]
    Config(String),
}

/// A chat-completion service. Implementations must be shareable across
/// concurrent searches.
pub trait LanguageModel: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError>;

    /// Short identifier recorded in run manifests.
    fn describe(&self) -> String;
}

impl<T: LanguageModel + ?Sized> LanguageModel for &T {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        (**self).complete(request)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for Box<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        (**self).complete(request)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for std::sync::Arc<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        (**self).complete(request)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}
