//! Pipeline routing and organ keyword detection.

use alloc::borrow::ToOwned;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::Modality;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RouterError {
    #[error("no pipeline rule matches the study")]
    NoPipelineMatches,
    #[error("rule {rule:?} names unregistered pipeline {pipeline:?}")]
    UnknownPipeline { rule: String, pipeline: String },
    #[error("rule {0:?} must have a positive weight")]
    NonPositiveWeight(String),
    #[error("invalid router config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyDescriptor {
    pub modality: Modality,
    pub body_region: String,
    #[serde(default)]
    pub hint_keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub pipeline_id: String,
    pub score: f64,
    pub matched_rules: Vec<String>,
    pub matched_keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordHit {
    pub organ: String,
    /// Character (not byte) offsets, end exclusive.
    pub span: (usize, usize),
    /// Matched text, lowercased.
    pub surface_form: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrganEntry {
    pub organ: String,
    pub forms: Vec<String>,
}

/// Canonical organ dictionary with multi-word surface forms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrganDictionary {
    pub organs: Vec<OrganEntry>,
    #[serde(default = "default_qualifiers")]
    pub qualifiers: Vec<String>,
}

fn default_qualifiers() -> Vec<String> {
    ["left", "right", "bilateral"].map(String::from).to_vec()
}

const DEFAULT_ORGANS: &[(&str, &[&str])] = &[
    ("kidney", &["kidney", "kidneys", "renal"]),
    ("liver", &["liver", "hepatic"]),
    ("spleen", &["spleen", "splenic"]),
    ("bladder", &["bladder", "urinary bladder"]),
    ("gallbladder", &["gallbladder", "gall bladder"]),
    ("lung", &["lung", "lungs", "lung base", "lung bases"]),
    ("appendix", &["appendix"]),
    ("adrenal gland", &["adrenal", "adrenals", "adrenal gland", "adrenal glands"]),
    ("pancreas", &["pancreas", "pancreatic"]),
    ("aorta", &["aorta", "aortic"]),
    ("ureter", &["ureter", "ureters", "ureteral"]),
    ("stomach", &["stomach"]),
    ("small bowel", &["small bowel", "small intestine"]),
    ("colon", &["colon", "large bowel"]),
    ("prostate", &["prostate"]),
    ("uterus", &["uterus"]),
    ("lymph node", &["lymph node", "lymph nodes"]),
    ("vertebra", &["vertebra", "vertebrae", "spine"]),
    ("heart", &["heart"]),
    ("esophagus", &["esophagus"]),
    ("duodenum", &["duodenum"]),
];

impl Default for OrganDictionary {
    fn default() -> Self {
        Self {
            organs: DEFAULT_ORGANS
                .iter()
                .map(|(organ, forms)| OrganEntry {
                    organ: (*organ).to_owned(),
                    forms: forms.iter().map(|f| (*f).to_owned()).collect(),
                })
                .collect(),
            qualifiers: default_qualifiers(),
        }
    }
}

struct Word {
    start: usize,
    end: usize,
    lower: String,
}

fn words(text: &str) -> Vec<Word> {
    let mut out = Vec::new();
    let mut current: Option<Word> = None;
    for (pos, ch) in text.chars().enumerate() {
        if ch.is_alphabetic() {
            let w = current.get_or_insert_with(|| Word {
                start: pos,
                end: pos,
                lower: String::new(),
            });
            w.lower.extend(ch.to_lowercase());
            w.end = pos + 1;
        } else if let Some(w) = current.take() {
            out.push(w);
        }
    }
    out.extend(current);
    out
}

impl OrganDictionary {
    pub fn is_canonical(&self, organ: &str) -> bool {
        self.organs.iter().any(|e| e.organ == organ)
    }

    /// Longest dictionary match starting at word `at`: `(organ, words consumed)`.
    fn match_at(&self, text: &[char], ws: &[Word], at: usize) -> Option<(&str, usize)> {
        let mut best: Option<(&str, usize)> = None;
        for entry in &self.organs {
            for form in &entry.forms {
                let parts: Vec<&str> = form.split_whitespace().collect();
                if parts.is_empty() || at + parts.len() > ws.len() {
                    continue;
                }
                let hit = parts.iter().enumerate().all(|(k, p)| {
                    let w = &ws[at + k];
                    w.lower == *p
                        && (k == 0 || text[ws[at + k - 1].end..w.start].iter().all(|c| c.is_whitespace()))
                });
                if hit && best.is_none_or(|(_, n)| parts.len() > n) {
                    best = Some((entry.organ.as_str(), parts.len()));
                }
            }
        }
        best
    }

    /// Case-insensitive longest-match scan. A leading laterality qualifier
    /// is folded into the hit.
    pub fn detect(&self, text: &str) -> Vec<KeywordHit> {
        let chars: Vec<char> = text.chars().collect();
        let ws = words(text);
        let mut hits = Vec::new();
        let mut i = 0;
        while i < ws.len() {
            let qualified = self.qualifiers.iter().any(|q| *q == ws[i].lower)
                && i + 1 < ws.len()
                && chars[ws[i].end..ws[i + 1].start].iter().all(|c| c.is_whitespace());
            let found = if qualified {
                self.match_at(&chars, &ws, i + 1).map(|(o, n)| (o, n + 1))
            } else {
                None
            }
            .or_else(|| self.match_at(&chars, &ws, i));
            match found {
                Some((organ, n)) => {
                    let (start, end) = (ws[i].start, ws[i + n - 1].end);
                    let surface: String = chars[start..end].iter().collect();
                    hits.push(KeywordHit {
                        organ: organ.to_owned(),
                        span: (start, end),
                        surface_form: surface.to_lowercase(),
                    });
                    i += n;
                }
                None => i += 1,
            }
        }
        hits
    }
}

/// Keyword scan with the built-in dictionary.
pub fn detect_keywords(text: &str) -> Vec<KeywordHit> {
    OrganDictionary::default().detect(text)
}

/// Canonical organs mentioned in `text`, first-mention order, deduplicated.
pub fn organs_in(dict: &OrganDictionary, text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for hit in dict.detect(text) {
        if !out.contains(&hit.organ) {
            out.push(hit.organ);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRule {
    pub id: String,
    /// `None` matches any modality.
    #[serde(default)]
    pub modality: Option<Modality>,
    /// `None` matches any body region.
    #[serde(default)]
    pub region: Option<String>,
    /// Empty matches regardless of keywords; otherwise at least one organ
    /// detected in the hint keywords must be listed.
    #[serde(default)]
    pub keywords: Vec<String>,
    pub pipeline_id: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub id: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Router {
    pub pipelines: Vec<Pipeline>,
    pub rules: Vec<RouteRule>,
    #[serde(default)]
    pub dictionary: OrganDictionary,
}

pub const CT_SEG_RADIOMICS: &str = "ct-seg-radiomics";
pub const XRAY_CLASSIFIER: &str = "xray-classifier";

impl Default for Router {
    fn default() -> Self {
        Self {
            pipelines: vec![
                Pipeline {
                    id: CT_SEG_RADIOMICS.to_owned(),
                    description: "organ segmentation followed by radiomics features".to_owned(),
                },
                Pipeline {
                    id: XRAY_CLASSIFIER.to_owned(),
                    description: "precomputed radiograph classifier probabilities".to_owned(),
                },
            ],
            rules: vec![
                RouteRule {
                    id: "ct-abdomen".to_owned(),
                    modality: Some(Modality::CT),
                    region: Some("abdomen".to_owned()),
                    keywords: vec![],
                    pipeline_id: CT_SEG_RADIOMICS.to_owned(),
                    weight: 1.0,
                },
                RouteRule {
                    id: "xr-chest".to_owned(),
                    modality: Some(Modality::XR),
                    region: Some("chest".to_owned()),
                    keywords: vec![],
                    pipeline_id: XRAY_CLASSIFIER.to_owned(),
                    weight: 1.0,
                },
            ],
            dictionary: OrganDictionary::default(),
        }
    }
}

impl Router {
    pub fn from_json(bytes: &[u8]) -> Result<Self, RouterError> {
        let router: Router =
            serde_json::from_slice(bytes).map_err(|e| RouterError::Config(e.to_string()))?;
        router.validate()?;
        Ok(router)
    }

    pub fn validate(&self) -> Result<(), RouterError> {
        for rule in &self.rules {
            if !(rule.weight > 0.0) {
                return Err(RouterError::NonPositiveWeight(rule.id.clone()));
            }
            if !self.pipelines.iter().any(|p| p.id == rule.pipeline_id) {
                return Err(RouterError::UnknownPipeline {
                    rule: rule.id.clone(),
                    pipeline: rule.pipeline_id.clone(),
                });
            }
        }
        Ok(())
    }

    fn rule_matches(rule: &RouteRule, study: &StudyDescriptor, organs: &[String]) -> bool {
        rule.modality.is_none_or(|m| m == study.modality)
            && rule
                .region
                .as_deref()
                .is_none_or(|r| r.eq_ignore_ascii_case(study.body_region.trim()))
            && (rule.keywords.is_empty() || rule.keywords.iter().any(|k| organs.contains(k)))
    }

    /// Highest summed weight wins; ties go to the pipeline whose first
    /// matching rule comes earliest in the table.
    pub fn route(&self, study: &StudyDescriptor) -> Result<RouteDecision, RouterError> {
        let hint_text = study.hint_keywords.join(", ");
        let organs = organs_in(&self.dictionary, &hint_text);

        // (pipeline, score, rule ids) in first-match order
        let mut tally: Vec<(&str, f64, Vec<String>)> = Vec::new();
        for rule in self.rules.iter().filter(|r| Self::rule_matches(r, study, &organs)) {
            match tally.iter_mut().find(|(p, _, _)| *p == rule.pipeline_id) {
                Some((_, score, ids)) => {
                    *score += rule.weight;
                    ids.push(rule.id.clone());
                }
                None => tally.push((&rule.pipeline_id, rule.weight, vec![rule.id.clone()])),
            }
        }
        let mut best: Option<&(&str, f64, Vec<String>)> = None;
        for entry in &tally {
            if best.is_none_or(|b| entry.1 > b.1) {
                best = Some(entry);
            }
        }
        let (pipeline, score, ids) = best.ok_or(RouterError::NoPipelineMatches)?;
        Ok(RouteDecision {
            pipeline_id: (*pipeline).to_owned(),
            score: *score,
            matched_rules: ids.clone(),
            matched_keywords: organs,
        })
    }
}
