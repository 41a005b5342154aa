//! Completion sessions, suggestion lifecycle and the backend contract.

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod predicate;
pub mod rules;
pub mod session;

pub use rules::{RuleBackend, RuleFile, RuleSpec};
pub use session::{
    AcceptMode, CompletionSession, FeedbackEvent, FeedbackKind, SessionError, Suggestion,
    SuggestionStatus,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendParams {
    pub max_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

impl Default for BackendParams {
    fn default() -> Self {
        Self {
            max_tokens: 64,
            temperature: 0.0,
            stop_sequences: Vec::new(),
        }
    }
}

impl BackendParams {
    pub fn with_max_tokens(max_tokens: u32) -> Self {
        Self {
            max_tokens,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend unavailable{}: {message}", status.map(|s| alloc::format!(" (HTTP {s})")).unwrap_or_default())]
    Unavailable { status: Option<u16>, message: String },
    #[error("backend timed out")]
    Timeout,
    #[error("corrupt stream: {0}")]
    StreamCorrupt(String),
    #[error("no rule matches and no organ could be identified in the prompt")]
    NoRuleMatches,
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

impl BackendError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Unavailable { .. } => "BackendUnavailable",
            Self::Timeout => "BackendTimeout",
            Self::StreamCorrupt(_) => "StreamCorrupt",
            Self::NoRuleMatches => "NoRuleMatches",
            Self::EmptyPrompt => "EmptyPrompt",
            Self::InvalidParams(_) => "InvalidParams",
        }
    }
}

/// How a generation run ended without error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamEnd {
    /// Backend reached end of stream, a stop sequence, or `max_tokens`.
    Finished,
    /// The sink asked to stop.
    Cancelled,
}

/// Receives streamed tokens. Returning `Break` cancels the stream; the
/// backend must not deliver further tokens afterwards.
pub trait TokenSink {
    fn token(&mut self, token: &str) -> ControlFlow<()>;

    /// Polled between tokens; a backend that is waiting on IO may call this
    /// to notice cancellation before the next token arrives.
    fn cancelled(&self) -> bool {
        false
    }
}

impl<F: FnMut(&str) -> ControlFlow<()>> TokenSink for F {
    fn token(&mut self, token: &str) -> ControlFlow<()> {
        self(token)
    }
}

/// Streaming text generator.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn generate(
        &self,
        prompt: &str,
        params: &BackendParams,
        sink: &mut dyn TokenSink,
    ) -> Result<StreamEnd, BackendError>;
}

/// Enforces `max_tokens` and stop sequences in front of a caller's sink.
/// Backends feed every raw token through this.
pub struct Limiter<'a> {
    inner: &'a mut dyn TokenSink,
    remaining: u32,
    stops: &'a [String],
    text: String,
    cancelled: bool,
}

impl<'a> Limiter<'a> {
    pub fn new(params: &'a BackendParams, inner: &'a mut dyn TokenSink) -> Result<Self, BackendError> {
        if params.max_tokens == 0 {
            return Err(BackendError::InvalidParams(String::from("max_tokens must be at least 1")));
        }
        if !(params.temperature >= 0.0) {
            return Err(BackendError::InvalidParams(String::from("temperature must be non-negative")));
        }
        Ok(Self {
            inner,
            remaining: params.max_tokens,
            stops: &params.stop_sequences,
            text: String::new(),
            cancelled: false,
        })
    }

    /// `Break` means the backend must stop producing.
    pub fn push(&mut self, token: &str) -> ControlFlow<()> {
        if self.remaining == 0 || self.cancelled {
            return ControlFlow::Break(());
        }
        if !self.stops.is_empty() {
            self.text.push_str(token);
            if self.stops.iter().any(|s| !s.is_empty() && self.text.contains(s.as_str())) {
                self.remaining = 0;
                return ControlFlow::Break(());
            }
        }
        self.remaining -= 1;
        if self.inner.token(token).is_break() {
            self.cancelled = true;
            return ControlFlow::Break(());
        }
        if self.remaining == 0 {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    }

    pub fn is_cancelled(&self) -> bool {
        self.cancelled || self.inner.cancelled()
    }

    pub fn end(&self) -> StreamEnd {
        if self.is_cancelled() {
            StreamEnd::Cancelled
        } else {
            StreamEnd::Finished
        }
    }
}

/// Microsecond timestamps supplied by the host.
pub trait Clock {
    fn now_micros(&self) -> u64;
}
