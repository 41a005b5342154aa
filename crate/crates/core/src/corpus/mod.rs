//! Instruct/Input/Target triplets, dataset splitting and augmentation.

use alloc::borrow::ToOwned;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::completion::BackendError;
use crate::metrics::Label;
use crate::promptgen::{render_input_payload, PromptError};
use crate::radiomics::{LateralityRatio, OrganFeatureSet};
use crate::text::split_sentences;

pub mod sections;
pub mod synth;

pub use sections::{extract_organ_section, parse_report_sections, ReportDocument, Section};
pub use synth::{generate_synthetic_corpus, SyntheticCase, SyntheticManifest, SyntheticParams};

pub const INSTRUCT_TEMPLATE: &str =
    "Complete the radiology report section for the {organ} given the quantitative findings.";

/// Words kept from the target when no radiomics are given.
pub const PREFIX_TOKENS: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorpusError {
    #[error("organ section text is empty")]
    EmptyTarget,
    #[error("report does not mention the {0}")]
    OrganNotMentioned(String),
    #[error("{0} is not in the organ dictionary")]
    UnknownOrgan(String),
    #[error("need at least 2 items to split, got {0}")]
    TooFewItems(usize),
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("line {line}: {message}")]
    Jsonl { line: usize, message: String },
}

impl CorpusError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::EmptyTarget => "EmptyTarget",
            Self::OrganNotMentioned(_) => "OrganNotMentioned",
            Self::UnknownOrgan(_) => "UnknownOrgan",
            Self::TooFewItems(_) => "TooFewItems",
            Self::InvalidFraction(_) => "InvalidFraction",
            Self::Prompt(_) => "PromptError",
            Self::Backend(e) => e.name(),
            Self::Jsonl { .. } => "MalformedJsonl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    WithRadiomics,
    PrefixOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletMeta {
    pub report_id: String,
    pub organ: String,
    pub condition: Condition,
    #[serde(default)]
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingTriplet {
    pub instruct: String,
    pub input: String,
    pub target: String,
    pub meta: TripletMeta,
}

/// What a triplet's input is built from.
#[derive(Debug, Clone, Copy)]
pub enum TripletSource<'a> {
    Radiomics {
        features: &'a [OrganFeatureSet],
        ratio: Option<&'a LateralityRatio>,
    },
    /// The first [`PREFIX_TOKENS`] words of the target.
    Prefix,
}

impl TripletSource<'_> {
    pub fn condition(&self) -> Condition {
        match self {
            Self::Radiomics { .. } => Condition::WithRadiomics,
            Self::Prefix => Condition::PrefixOnly,
        }
    }
}

pub fn instruct_for(organ: &str) -> String {
    INSTRUCT_TEMPLATE.replace("{organ}", organ)
}

/// First `n` whitespace-separated words joined by single spaces.
pub fn prefix_tokens(text: &str, n: usize) -> String {
    text.split_whitespace().take(n.max(1)).collect::<Vec<_>>().join(" ")
}

pub fn build_triplet(
    source: TripletSource<'_>,
    organ_text: &str,
    organ: &str,
    report_id: &str,
    label: Label,
) -> Result<TrainingTriplet, CorpusError> {
    let target = organ_text.trim();
    if target.is_empty() {
        return Err(CorpusError::EmptyTarget);
    }
    let input = match source {
        TripletSource::Radiomics { features, ratio } => render_input_payload(features, ratio, organ)?,
        TripletSource::Prefix => prefix_tokens(target, PREFIX_TOKENS),
    };
    Ok(TrainingTriplet {
        instruct: instruct_for(organ),
        input,
        target: target.to_owned(),
        meta: TripletMeta {
            report_id: report_id.to_owned(),
            organ: organ.to_owned(),
            condition: source.condition(),
            label,
        },
    })
}

/// Shuffles the target's sentences. With two or more distinct sentences the
/// result always differs from the original order.
pub fn augment_reorder(triplet: &TrainingTriplet, seed: u64) -> TrainingTriplet {
    let sentences = split_sentences(&triplet.target);
    let distinct = sentences.iter().any(|s| *s != sentences[0]);
    let mut out = triplet.clone();
    if !distinct {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = sentences.clone();
    while shuffled == sentences {
        shuffled.shuffle(&mut rng);
    }
    out.target = shuffled.join(" ");
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.9,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn train_len(&self, n: usize) -> usize {
        libm::floor(self.train_fraction * n as f64) as usize
    }
}

/// Seeded shuffle, then the first `floor(train_fraction · N)` items train.
pub fn split<T: Clone>(items: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>), CorpusError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(spec.train_fraction));
    }
    if items.len() < 2 {
        return Err(CorpusError::TooFewItems(items.len()));
    }
    let order = split_order(items.len(), spec.seed);
    let n_train = spec.train_len(items.len());
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

/// The index permutation used by [`split`].
pub fn split_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("plain data serializes"));
        out.push('\n');
    }
    out
}

/// Blank lines are skipped.
pub fn from_jsonl<T: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<T>, CorpusError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CorpusError::Jsonl {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
