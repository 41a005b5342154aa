//! Streaming client for the chat-completions wire format.

use std::io::{BufRead, BufReader, ErrorKind};
use std::time::Duration;

use radassist_core::completion::{Limiter, StreamEnd};
use radassist_core::{Backend, BackendError, BackendParams, TokenSink};
use serde::Deserialize;
use serde_json::json;

pub const SYSTEM_INSTRUCTION: &str = "You are assisting a radiologist. Continue the radiology report \
using the quantitative findings at the start of the text. Reply with report text only.";

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Without the `/v1/chat/completions` suffix.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    /// Whole-request limit, including the streamed body.
    pub timeout: Duration,
    pub system_prompt: String,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            base_url: String::new(),
            model: String::new(),
            api_key: None,
            timeout: Duration::from_secs(30),
            system_prompt: SYSTEM_INSTRUCTION.to_owned(),
        }
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct Chunk {
    #[serde(default)]
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    #[serde(default)]
    delta: Delta,
}

#[derive(Deserialize, Default)]
struct Delta {
    #[serde(default)]
    content: Option<String>,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    pub fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    pub fn request_body(&self, prompt: &str, params: &BackendParams) -> serde_json::Value {
        let mut body = json!({
            "model": self.config.model,
            "stream": true,
            "max_tokens": params.max_tokens,
            "temperature": params.temperature,
            "messages": [
                {"role": "system", "content": self.config.system_prompt},
                {"role": "user", "content": prompt},
            ],
        });
        if !params.stop_sequences.is_empty() {
            body["stop"] = json!(params.stop_sequences);
        }
        body
    }
}

fn map_ureq(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        ureq::Error::Io(io) => map_io(io),
        other => BackendError::Unavailable {
            status: None,
            message: other.to_string(),
        },
    }
}

fn map_io(e: std::io::Error) -> BackendError {
    if matches!(e.kind(), ErrorKind::TimedOut | ErrorKind::WouldBlock) {
        return BackendError::Timeout;
    }
    // ureq reports its own errors through io::Error while the body streams
    if e.get_ref().and_then(|inner| inner.downcast_ref::<ureq::Error>()).is_some() {
        let inner = e.into_inner().expect("checked above");
        return match inner.downcast::<ureq::Error>() {
            Ok(u) => map_ureq(*u),
            Err(other) => BackendError::Unavailable {
                status: None,
                message: other.to_string(),
            },
        };
    }
    BackendError::Unavailable {
        status: None,
        message: e.to_string(),
    }
}

/// One `data:` payload: either more tokens or the end marker.
pub enum Frame {
    Tokens(Vec<String>),
    Done,
}

/// Parses the payload after `data:`.
pub fn parse_data(payload: &str) -> Result<Frame, BackendError> {
    let payload = payload.trim();
    if payload == "[DONE]" {
        return Ok(Frame::Done);
    }
    let chunk: Chunk = serde_json::from_str(payload)
        .map_err(|e| BackendError::StreamCorrupt(format!("bad chunk {payload:?}: {e}")))?;
    Ok(Frame::Tokens(
        chunk
            .choices
            .into_iter()
            .filter_map(|c| c.delta.content)
            .filter(|t| !t.is_empty())
            .collect(),
    ))
}

impl Backend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn generate(
        &self,
        prompt: &str,
        params: &BackendParams,
        sink: &mut dyn TokenSink,
    ) -> Result<StreamEnd, BackendError> {
        if prompt.trim().is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let mut limiter = Limiter::new(params, sink)?;
        let mut req = self
            .agent
            .post(&self.endpoint())
            .header("Accept", "text/event-stream");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let resp = req.send_json(self.request_body(prompt, params)).map_err(map_ureq)?;
        let status = resp.status().as_u16();
        if status >= 400 {
            return Err(BackendError::Unavailable {
                status: Some(status),
                message: format!("HTTP {status}"),
            });
        }
        let reader = BufReader::new(resp.into_body().into_reader());
        for line in reader.lines() {
            if limiter.is_cancelled() {
                return Ok(StreamEnd::Cancelled);
            }
            let line = line.map_err(map_io)?;
            // comments, event names and ids carry nothing we need
            let Some(payload) = line.strip_prefix("data:") else {
                continue;
            };
            match parse_data(payload)? {
                Frame::Done => return Ok(limiter.end()),
                Frame::Tokens(tokens) => {
                    for t in &tokens {
                        if limiter.push(t).is_break() {
                            return Ok(limiter.end());
                        }
                    }
                }
            }
        }
        Err(BackendError::StreamCorrupt("stream ended before [DONE]".into()))
    }
}
