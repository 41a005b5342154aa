//! Deterministic template backend driven by an ordered rule file.
//!
//! The prompt's radiomics statements are parsed back into numbers, the first
//! rule for the prompt's organ whose predicate holds is selected, and its
//! sentence is streamed. If the report text at the end of the prompt already
//! begins the sentence, only the remainder is streamed; a sentence already
//! present in the prompt is skipped in favour of the next matching rule.

use alloc::borrow::ToOwned;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::predicate::{Predicate, PredicateError};
use super::{Backend, BackendError, BackendParams, Limiter, StreamEnd, TokenSink};
use crate::promptgen::{parse_payload, PayloadValues};
use crate::router::OrganDictionary;

pub const FALLBACK_TEMPLATE: &str = "The {organ} is visualized.";

pub const KIDNEY_NORMAL: &str = "The kidneys have a normal appearance.";
pub const KIDNEY_LEFT_SMALL: &str =
    "The left kidney is small relative to the right, suggesting asymmetry.";
pub const KIDNEY_RIGHT_SMALL: &str =
    "The right kidney is small relative to the left, suggesting asymmetry.";
pub const KIDNEY_ATROPHIC: &str = "Renal volume is reduced, consistent with an atrophic kidney.";
pub const KIDNEY_ENLARGED: &str = "Renal volume is increased, consistent with an enlarged kidney.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub organ: String,
    pub predicate: String,
    pub template: String,
    /// Lower runs first; equal priorities keep file order.
    #[serde(default)]
    pub priority: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleFile(pub Vec<RuleSpec>);

impl RuleFile {
    /// Kidney table: ratio checks first, then per-volume checks, then the
    /// normal range.
    pub fn kidney_default() -> Self {
        let rule = |priority: i32, predicate: &str, template: &str| RuleSpec {
            organ: "kidney".to_owned(),
            predicate: predicate.to_owned(),
            template: template.to_owned(),
            priority,
        };
        RuleFile(alloc::vec![
            rule(10, "ratio < 0.85", KIDNEY_LEFT_SMALL),
            rule(20, "ratio > 1.18", KIDNEY_RIGHT_SMALL),
            rule(30, "min_volume < 120", KIDNEY_ATROPHIC),
            rule(40, "max_volume > 200", KIDNEY_ENLARGED),
            rule(
                50,
                "left_volume in [120, 200] && right_volume in [120, 200] && ratio in [0.85, 1.18]",
                KIDNEY_NORMAL,
            ),
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleFileError {
    #[error("rule {index}: {source}")]
    Predicate { index: usize, source: PredicateError },
    #[error("rule file is not valid JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone)]
struct CompiledRule {
    organ: String,
    predicate: Predicate,
    template: String,
}

#[derive(Debug, Clone)]
pub struct RuleBackend {
    rules: Vec<CompiledRule>,
    dictionary: OrganDictionary,
}

impl Default for RuleBackend {
    fn default() -> Self {
        Self::new(&RuleFile::kidney_default()).expect("built-in rules compile")
    }
}

/// Splits `text` into stream tokens: words carry a leading space after the
/// first, and a sentence-final `.`, `!` or `?` is its own token.
pub fn stream_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let lead = if out.is_empty() { "" } else { " " };
        let splittable = word.len() > 1
            && word.ends_with(['.', '!', '?'])
            && word[..word.len() - 1].ends_with(char::is_alphabetic)
            && !crate::text::ABBREVIATIONS.iter().any(|a| word.eq_ignore_ascii_case(a));
        if splittable {
            let (body, punct) = word.split_at(word.len() - 1);
            out.push([lead, body].concat());
            out.push(punct.to_owned());
        } else {
            out.push([lead, word].concat());
        }
    }
    out
}

impl RuleBackend {
    pub fn new(file: &RuleFile) -> Result<Self, RuleFileError> {
        let mut indexed: Vec<(usize, &RuleSpec)> = file.0.iter().enumerate().collect();
        indexed.sort_by_key(|(i, r)| (r.priority, *i));
        let rules = indexed
            .into_iter()
            .map(|(index, r)| {
                Predicate::parse(&r.predicate)
                    .map(|predicate| CompiledRule {
                        organ: r.organ.to_lowercase(),
                        predicate,
                        template: r.template.clone(),
                    })
                    .map_err(|source| RuleFileError::Predicate { index, source })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            rules,
            dictionary: OrganDictionary::default(),
        })
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, RuleFileError> {
        let file: RuleFile =
            serde_json::from_slice(bytes).map_err(|e| RuleFileError::Json(e.to_string()))?;
        Self::new(&file)
    }

    pub fn with_dictionary(mut self, dictionary: OrganDictionary) -> Self {
        self.dictionary = dictionary;
        self
    }

    fn lookup<'a>(values: &'a PayloadValues) -> impl Fn(&str) -> Option<f64> + 'a {
        move |key: &str| match key {
            "min_volume" | "max_volume" => {
                let vols = ["left_volume", "right_volume", "volume"]
                    .iter()
                    .filter_map(|k| values.get(k));
                if key == "min_volume" {
                    vols.reduce(f64::min)
                } else {
                    vols.reduce(f64::max)
                }
            }
            other => values.get(other),
        }
    }

    fn organ_of(&self, prompt: &str, values: &PayloadValues) -> Option<String> {
        values
            .organ
            .clone()
            .or_else(|| self.dictionary.detect(prompt).into_iter().next().map(|h| h.organ))
    }

    /// Full sentences applicable to `prompt`, in rule order, fallback last.
    pub fn candidates(&self, prompt: &str) -> Result<Vec<String>, BackendError> {
        let values = parse_payload(prompt);
        let organ = self.organ_of(prompt, &values).ok_or(BackendError::NoRuleMatches)?;
        let lookup = Self::lookup(&values);
        let fill = |t: &str| t.replace("{organ}", &organ);
        let mut out: Vec<String> = self
            .rules
            .iter()
            .filter(|r| r.organ == organ && r.predicate.eval(&lookup))
            .map(|r| fill(&r.template))
            .collect();
        if out.is_empty() {
            out.push(fill(FALLBACK_TEMPLATE));
        }
        Ok(out)
    }

    /// The text this backend streams for `prompt`.
    pub fn suggestion_text(&self, prompt: &str) -> Result<String, BackendError> {
        Ok(self.suggestion_tokens(prompt)?.concat())
    }

    pub fn suggestion_tokens(&self, prompt: &str) -> Result<Vec<String>, BackendError> {
        let tail = prompt.trim_end();
        for sentence in self.candidates(prompt)? {
            if prompt.contains(sentence.as_str()) {
                continue;
            }
            let tokens = stream_tokens(&sentence);
            // longest already-typed head of the sentence at the end of the prompt
            let typed = (1..tokens.len()).rev().find(|&m| {
                let head = tokens[..m].concat();
                tail.strip_suffix(head.as_str())
                    .is_some_and(|before| before.is_empty() || before.ends_with([' ', ',', '\n']))
            });
            let mut rest = tokens[typed.unwrap_or(0)..].to_vec();
            if let Some(first) = rest.first_mut() {
                *first = first.trim_start().to_owned();
            }
            return Ok(rest);
        }
        Ok(Vec::new())
    }
}

impl Backend for RuleBackend {
    fn name(&self) -> &str {
        "rule"
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
        let tokens = self.suggestion_tokens(prompt)?;
        let mut limiter = Limiter::new(params, sink)?;
        for token in &tokens {
            if limiter.is_cancelled() || limiter.push(token).is_break() {
                break;
            }
        }
        Ok(limiter.end())
    }
}
