//! Single-writer completion session state machine.
//!
//! Suggestions move `Streaming → Complete | Cancelled` and then
//! `Complete → Accepted | PartiallyAccepted | Rejected`. Every change to the
//! report text is recorded in the event log, and [`CompletionSession::replay`]
//! rebuilds the text from that log alone.

use alloc::borrow::ToOwned;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Backend, BackendError, BackendParams, Clock, StreamEnd};
use crate::text::append_spaced;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("no current suggestion")]
    NoSuggestion,
    #[error("suggestion is not complete")]
    NotComplete,
    #[error("suggestion is not streaming")]
    NotStreaming,
    #[error("a suggestion is already streaming")]
    SuggestionInFlight,
    #[error("feature payload and report text are both empty")]
    EmptyPrompt,
    #[error("suggestion {0} is no longer current")]
    StaleSuggestion(u64),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl SessionError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::NoSuggestion => "NoSuggestion",
            Self::NotComplete => "NotComplete",
            Self::NotStreaming => "NotStreaming",
            Self::SuggestionInFlight => "SuggestionInFlight",
            Self::EmptyPrompt => "EmptyPrompt",
            Self::StaleSuggestion(_) => "StaleSuggestion",
            Self::Backend(e) => e.name(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SuggestionStatus {
    Streaming,
    Complete,
    Accepted,
    PartiallyAccepted,
    Rejected,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub id: u64,
    pub prompt: String,
    pub tokens: Vec<String>,
    pub status: SuggestionStatus,
    /// Microseconds.
    pub started_at: u64,
    pub finished_at: Option<u64>,
    pub tokens_per_sec: Option<f64>,
}

impl Suggestion {
    /// Tokens concatenated; stream tokens carry their own spacing.
    pub fn text(&self) -> String {
        self.tokens.concat()
    }

    pub fn elapsed_micros(&self) -> Option<u64> {
        self.finished_at.map(|f| f.saturating_sub(self.started_at).max(1))
    }

    fn finish(&mut self, now: u64, status: SuggestionStatus) {
        self.status = status;
        self.finished_at = Some(now.max(self.started_at));
        let secs = self.elapsed_micros().unwrap_or(1) as f64 / 1e6;
        self.tokens_per_sec = Some(self.tokens.len() as f64 / secs);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeedbackKind {
    Proposed,
    Accepted,
    PartialAccept,
    Rejected,
    Edited,
    Cancelled,
}

/// `payload` is the suggested text for Proposed/Rejected/Cancelled, the
/// appended text for Accepted/PartialAccept, and the full new report text
/// for Edited.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub kind: FeedbackKind,
    /// Microseconds, strictly increasing within a session.
    pub timestamp: u64,
    pub payload: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AcceptMode {
    Full,
    FirstWord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionSession {
    pub id: String,
    pub organ: String,
    pub feature_payload: String,
    initial_text: String,
    accepted_text: String,
    current: Option<Suggestion>,
    event_log: Vec<FeedbackEvent>,
    next_suggestion: u64,
}

impl CompletionSession {
    pub fn new(id: &str, organ: &str, feature_payload: &str, initial_text: &str) -> Self {
        Self {
            id: id.to_owned(),
            organ: organ.to_owned(),
            feature_payload: feature_payload.to_owned(),
            initial_text: initial_text.to_owned(),
            accepted_text: initial_text.to_owned(),
            current: None,
            event_log: Vec::new(),
            next_suggestion: 1,
        }
    }

    /// Rebuilds a session from its creation parameters and event log.
    pub fn replay(
        id: &str,
        organ: &str,
        feature_payload: &str,
        initial_text: &str,
        events: impl IntoIterator<Item = FeedbackEvent>,
    ) -> Self {
        let mut s = Self::new(id, organ, feature_payload, initial_text);
        for event in events {
            s.accepted_text = apply_event(&s.accepted_text, &event);
            if matches!(event.kind, FeedbackKind::Proposed) {
                s.next_suggestion += 1;
            }
            s.event_log.push(event);
        }
        s
    }

    pub fn accepted_text(&self) -> &str {
        &self.accepted_text
    }

    pub fn initial_text(&self) -> &str {
        &self.initial_text
    }

    pub fn current(&self) -> Option<&Suggestion> {
        self.current.as_ref()
    }

    pub fn event_log(&self) -> &[FeedbackEvent] {
        &self.event_log
    }

    pub fn is_streaming(&self) -> bool {
        self.current
            .as_ref()
            .is_some_and(|s| s.status == SuggestionStatus::Streaming)
    }

    /// Radiomics statements first, then the report so far.
    pub fn prompt(&self) -> Result<String, SessionError> {
        match (self.feature_payload.is_empty(), self.accepted_text.is_empty()) {
            (true, true) => Err(SessionError::EmptyPrompt),
            (false, true) => Ok(self.feature_payload.clone()),
            (true, false) => Ok(self.accepted_text.clone()),
            (false, false) => Ok([self.feature_payload.as_str(), ", ", &self.accepted_text].concat()),
        }
    }

    fn log(&mut self, kind: FeedbackKind, now: u64, payload: String) {
        let timestamp = match self.event_log.last() {
            Some(last) if now <= last.timestamp => last.timestamp + 1,
            _ => now,
        };
        self.event_log.push(FeedbackEvent {
            kind,
            timestamp,
            payload,
        });
    }

    /// Opens a new streaming suggestion, replacing any finished one.
    pub fn begin_suggestion(&mut self, now: u64) -> Result<(u64, String), SessionError> {
        if self.is_streaming() {
            return Err(SessionError::SuggestionInFlight);
        }
        let prompt = self.prompt()?;
        let id = self.next_suggestion;
        self.next_suggestion += 1;
        self.current = Some(Suggestion {
            id,
            prompt: prompt.clone(),
            tokens: Vec::new(),
            status: SuggestionStatus::Streaming,
            started_at: now,
            finished_at: None,
            tokens_per_sec: None,
        });
        Ok((id, prompt))
    }

    fn streaming_mut(&mut self, id: u64) -> Result<&mut Suggestion, SessionError> {
        match self.current.as_mut() {
            Some(s) if s.id == id && s.status == SuggestionStatus::Streaming => Ok(s),
            _ => Err(SessionError::StaleSuggestion(id)),
        }
    }

    pub fn push_token(&mut self, id: u64, token: &str) -> Result<(), SessionError> {
        self.streaming_mut(id)?.tokens.push(token.to_owned());
        Ok(())
    }

    /// Marks the stream complete and logs it as proposed.
    pub fn finish_suggestion(&mut self, id: u64, now: u64) -> Result<&Suggestion, SessionError> {
        let s = self.streaming_mut(id)?;
        s.finish(now, SuggestionStatus::Complete);
        let text = s.text();
        self.log(FeedbackKind::Proposed, now, text);
        Ok(self.current.as_ref().expect("just finished"))
    }

    /// Ends the stream as cancelled (client abort or backend failure). The
    /// session is immediately ready for another suggestion.
    pub fn abort_suggestion(&mut self, id: u64, now: u64) -> Result<Suggestion, SessionError> {
        let s = self.streaming_mut(id)?;
        s.finish(now, SuggestionStatus::Cancelled);
        let text = s.text();
        self.log(FeedbackKind::Cancelled, now, text);
        Ok(self.current.take().expect("just cancelled"))
    }

    /// Cancels whatever suggestion is streaming.
    pub fn cancel(&mut self, now: u64) -> Result<Suggestion, SessionError> {
        match self.current.as_ref() {
            None => Err(SessionError::NoSuggestion),
            Some(s) if s.status != SuggestionStatus::Streaming => Err(SessionError::NotStreaming),
            Some(s) => {
                let id = s.id;
                self.abort_suggestion(id, now)
            }
        }
    }

    fn complete_current(&self) -> Result<&Suggestion, SessionError> {
        match self.current.as_ref() {
            None => Err(SessionError::NoSuggestion),
            Some(s) if s.status != SuggestionStatus::Complete => Err(SessionError::NotComplete),
            Some(s) => Ok(s),
        }
    }

    /// Returns the accepted suggestion. With `FirstWord` the remainder stays
    /// current as a new complete suggestion.
    pub fn accept(&mut self, mode: AcceptMode, now: u64) -> Result<Suggestion, SessionError> {
        let text = self.complete_current()?.text();
        let mut taken = self.current.take().expect("checked above");
        match mode {
            AcceptMode::Full => {
                taken.status = SuggestionStatus::Accepted;
                self.accepted_text = append_spaced(&self.accepted_text, &text);
                self.log(FeedbackKind::Accepted, now, text);
            }
            AcceptMode::FirstWord => {
                let trimmed = text.trim_start();
                let split = trimmed.find(char::is_whitespace).unwrap_or(trimmed.len());
                let (word, rest) = trimmed.split_at(split);
                let rest = rest.trim_start();
                taken.status = SuggestionStatus::PartiallyAccepted;
                self.accepted_text = append_spaced(&self.accepted_text, word);
                if !rest.is_empty() {
                    let id = self.next_suggestion;
                    self.next_suggestion += 1;
                    self.current = Some(Suggestion {
                        id,
                        prompt: taken.prompt.clone(),
                        tokens: alloc::vec![rest.to_owned()],
                        status: SuggestionStatus::Complete,
                        started_at: taken.started_at,
                        finished_at: taken.finished_at,
                        tokens_per_sec: taken.tokens_per_sec,
                    });
                }
                self.log(FeedbackKind::PartialAccept, now, word.to_owned());
            }
        }
        Ok(taken)
    }

    pub fn reject(&mut self, now: u64) -> Result<Suggestion, SessionError> {
        let text = match self.current.as_ref() {
            None => return Err(SessionError::NoSuggestion),
            Some(s) if s.status == SuggestionStatus::Streaming => {
                return Err(SessionError::SuggestionInFlight)
            }
            Some(s) => s.text(),
        };
        let mut taken = self.current.take().expect("checked above");
        taken.status = SuggestionStatus::Rejected;
        self.log(FeedbackKind::Rejected, now, text);
        Ok(taken)
    }

    /// Replaces the report text wholesale.
    pub fn edit(&mut self, new_text: &str, now: u64) -> Result<(), SessionError> {
        if self.is_streaming() {
            return Err(SessionError::SuggestionInFlight);
        }
        self.accepted_text = new_text.to_owned();
        self.log(FeedbackKind::Edited, now, new_text.to_owned());
        Ok(())
    }

    /// Runs `backend` to completion on the calling thread.
    pub fn propose(
        &mut self,
        backend: &dyn Backend,
        params: &BackendParams,
        clock: &dyn Clock,
    ) -> Result<&Suggestion, SessionError> {
        let (id, prompt) = self.begin_suggestion(clock.now_micros())?;
        let mut tokens: Vec<String> = Vec::new();
        let mut sink = |t: &str| {
            tokens.push(t.to_owned());
            ControlFlow::Continue(())
        };
        let result = backend.generate(&prompt, params, &mut sink);
        for t in &tokens {
            self.push_token(id, t)?;
        }
        match result {
            Ok(StreamEnd::Finished) => self.finish_suggestion(id, clock.now_micros()),
            Ok(StreamEnd::Cancelled) => {
                self.abort_suggestion(id, clock.now_micros())?;
                Err(SessionError::NoSuggestion)
            }
            Err(e) => {
                self.abort_suggestion(id, clock.now_micros())?;
                Err(e.into())
            }
        }
    }
}

/// Report text after applying one logged event.
pub fn apply_event(text: &str, event: &FeedbackEvent) -> String {
    match event.kind {
        FeedbackKind::Accepted | FeedbackKind::PartialAccept => append_spaced(text, &event.payload),
        FeedbackKind::Edited => event.payload.clone(),
        FeedbackKind::Proposed | FeedbackKind::Rejected | FeedbackKind::Cancelled => text.to_owned(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::completion::RuleBackend;
    use crate::completion::rules::KIDNEY_NORMAL;
    use core::cell::Cell;

    const PAYLOAD: &str =
        "Left kidney volume: 170 cm3, Right kidney volume: 179 cm3, the volume ratio is 0.95";

    struct Tick(Cell<u64>);

    impl Clock for Tick {
        fn now_micros(&self) -> u64 {
            let t = self.0.get() + 250;
            self.0.set(t);
            t
        }
    }

    fn session() -> CompletionSession {
        CompletionSession::new("s1", "kidney", PAYLOAD, "")
    }

    fn proposed(s: &mut CompletionSession) -> Suggestion {
        s.propose(&RuleBackend::default(), &BackendParams::default(), &Tick(Cell::new(0)))
            .unwrap()
            .clone()
    }

    #[test]
    fn fresh_propose_completes() {
        let mut s = session();
        let sug = proposed(&mut s);
        assert_eq!(sug.status, SuggestionStatus::Complete);
        assert_eq!(sug.text(), KIDNEY_NORMAL);
        assert_eq!(sug.prompt, PAYLOAD);
        // 7 tokens over 250 µs
        assert_eq!(sug.tokens_per_sec, Some(28_000.0));
        assert_eq!(s.event_log().len(), 1);
        assert_eq!(s.event_log()[0].kind, FeedbackKind::Proposed);
    }

    #[test]
    fn one_in_flight() {
        let mut s = session();
        s.begin_suggestion(1).unwrap();
        assert_eq!(s.begin_suggestion(2), Err(SessionError::SuggestionInFlight));
        assert_eq!(s.edit("x", 3), Err(SessionError::SuggestionInFlight));
    }

    #[test]
    fn empty_prompt() {
        let mut s = CompletionSession::new("s", "kidney", "", "");
        assert_eq!(s.begin_suggestion(0), Err(SessionError::EmptyPrompt));
    }

    #[test]
    fn prompt_composition() {
        let s = CompletionSession::new("s", "kidney", PAYLOAD, "The kidneys");
        assert_eq!(s.prompt().unwrap(), [PAYLOAD, ", The kidneys"].concat());
        let s = CompletionSession::new("s", "kidney", "", "The kidneys");
        assert_eq!(s.prompt().unwrap(), "The kidneys");
    }

    #[test]
    fn accept_full() {
        let mut s = CompletionSession::new("s", "kidney", PAYLOAD, "FINDINGS:");
        proposed(&mut s);
        let taken = s.accept(AcceptMode::Full, 10_000).unwrap();
        assert_eq!(taken.status, SuggestionStatus::Accepted);
        assert_eq!(s.accepted_text(), ["FINDINGS: ", KIDNEY_NORMAL].concat());
        assert_eq!(s.accept(AcceptMode::Full, 10_001), Err(SessionError::NoSuggestion));
    }

    #[test]
    fn accept_first_word() {
        let mut s = session();
        proposed(&mut s);
        let taken = s.accept(AcceptMode::FirstWord, 10_000).unwrap();
        assert_eq!(taken.status, SuggestionStatus::PartiallyAccepted);
        assert_eq!(s.accepted_text(), "The");
        let rest = s.current().unwrap();
        assert_eq!(rest.status, SuggestionStatus::Complete);
        assert_eq!(rest.text(), "kidneys have a normal appearance.");
        s.accept(AcceptMode::Full, 10_001).unwrap();
        assert_eq!(s.accepted_text(), KIDNEY_NORMAL);
    }

    #[test]
    fn accept_requires_complete() {
        let mut s = session();
        assert_eq!(s.accept(AcceptMode::Full, 0), Err(SessionError::NoSuggestion));
        s.begin_suggestion(1).unwrap();
        assert_eq!(s.accept(AcceptMode::Full, 2), Err(SessionError::NotComplete));
    }

    #[test]
    fn reject_twice() {
        let mut s = session();
        proposed(&mut s);
        assert_eq!(s.reject(10_000).unwrap().status, SuggestionStatus::Rejected);
        assert_eq!(s.reject(10_001), Err(SessionError::NoSuggestion));
    }

    #[test]
    fn cancel_mid_stream_then_propose() {
        let mut s = session();
        let (id, _) = s.begin_suggestion(1).unwrap();
        s.push_token(id, "The").unwrap();
        let cancelled = s.cancel(5).unwrap();
        assert_eq!(cancelled.status, SuggestionStatus::Cancelled);
        assert_eq!(s.push_token(id, " kidneys"), Err(SessionError::StaleSuggestion(id)));
        assert_eq!(s.cancel(6), Err(SessionError::NoSuggestion));
        assert_eq!(proposed(&mut s).status, SuggestionStatus::Complete);
    }

    #[test]
    fn edit_replaces_text() {
        let mut s = CompletionSession::new("s", "kidney", PAYLOAD, "draft");
        s.edit("The kidneys are unremarkable.", 1).unwrap();
        assert_eq!(s.accepted_text(), "The kidneys are unremarkable.");
        let last = s.event_log().last().unwrap();
        assert_eq!(last.kind, FeedbackKind::Edited);
    }

    #[test]
    fn timestamps_strictly_increase() {
        let mut s = session();
        s.edit("a", 5).unwrap();
        s.edit("b", 5).unwrap();
        s.edit("c", 1).unwrap();
        let ts: Vec<u64> = s.event_log().iter().map(|e| e.timestamp).collect();
        assert_eq!(ts, alloc::vec![5, 6, 7]);
    }

    #[test]
    fn replay_matches() {
        let mut s = CompletionSession::new("s", "kidney", PAYLOAD, "FINDINGS:");
        proposed(&mut s);
        s.accept(AcceptMode::FirstWord, 10_000).unwrap();
        s.reject(10_001).unwrap();
        s.edit("The kidneys", 10_002).unwrap();
        proposed(&mut s);
        s.accept(AcceptMode::Full, 20_000).unwrap();
        let r = CompletionSession::replay("s", "kidney", PAYLOAD, "FINDINGS:", s.event_log().to_vec());
        assert_eq!(r.accepted_text(), s.accepted_text());
        assert_eq!(r.accepted_text(), KIDNEY_NORMAL);
        assert_eq!(r.event_log(), s.event_log());
    }

    #[test]
    fn zero_token_suggestion_has_zero_rate() {
        let mut s = CompletionSession::new("s", "kidney", PAYLOAD, KIDNEY_NORMAL);
        let sug = proposed(&mut s);
        assert!(sug.tokens.is_empty());
        assert_eq!(sug.tokens_per_sec, Some(0.0));
    }

    #[test]
    fn backend_error_aborts() {
        let mut s = CompletionSession::new("s", "", "", "Nothing to see");
        let err = s
            .propose(&RuleBackend::default(), &BackendParams::default(), &Tick(Cell::new(0)))
            .unwrap_err();
        assert_eq!(err, SessionError::Backend(BackendError::NoRuleMatches));
        assert!(!s.is_streaming());
        assert_eq!(s.event_log().last().unwrap().kind, FeedbackKind::Cancelled);
    }
}
