//! Report section parsing and per-organ sentence extraction.
//!
//! A line holding only upper-case words and a colon (`FINDINGS:`) opens a
//! section. A line that starts with such a label followed by text
//! (`KIDNEYS: The kidneys are unremarkable.`) stays inside the current
//! section; the label is kept in the body but not in the extracted
//! sentences.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use super::CorpusError;
use crate::completion::{Backend, BackendParams};
use crate::router::{organs_in, OrganDictionary};
use crate::text::split_sentences;

pub const FINDINGS: &str = "FINDINGS";

pub const EXTRACTION_INSTRUCTION: &str = "Extract the sentences describing the {organ} from the \
following radiology report. Reply with those sentences only, verbatim.";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    /// Empty for the untitled leading section.
    pub heading: String,
    pub body: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub report_id: String,
    pub raw_text: String,
    pub sections: Vec<Section>,
    pub organ_sentences: BTreeMap<String, Vec<String>>,
}

impl ReportDocument {
    /// Headings and bodies in order; equals [`normalize_report`] of the raw text.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.sections {
            if !s.heading.is_empty() {
                push_line(&mut out, &[s.heading.as_str(), ":"].concat());
            }
            if !s.body.is_empty() {
                push_line(&mut out, &s.body);
            }
        }
        out
    }
}

fn push_line(out: &mut String, line: &str) {
    if !out.is_empty() {
        out.push('\n');
    }
    out.push_str(line);
}

/// Delimiter normalization: lines trimmed, blank lines dropped, line
/// endings unified to `\n`.
pub fn normalize_report(raw: &str) -> String {
    let mut out = String::new();
    for line in raw.lines().map(str::trim).filter(|l| !l.is_empty()) {
        push_line(&mut out, line);
    }
    out
}

/// `Some(label)` when `line` starts with upper-case words and a colon.
fn leading_label(line: &str) -> Option<(&str, &str)> {
    let (label, rest) = line.split_once(':')?;
    let valid = label.chars().any(|c| c.is_ascii_uppercase())
        && label.chars().next().is_some_and(|c| c.is_ascii_uppercase())
        && label
            .chars()
            .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || matches!(c, ' ' | '/' | '&' | '-'));
    valid.then_some((label.trim(), rest.trim()))
}

pub fn parse_report_sections(report_id: &str, raw: &str) -> ReportDocument {
    parse_report_sections_with(report_id, raw, &OrganDictionary::default())
}

pub fn parse_report_sections_with(report_id: &str, raw: &str, dict: &OrganDictionary) -> ReportDocument {
    let mut sections: Vec<Section> = Vec::new();
    for line in raw.lines().map(str::trim).filter(|l| !l.is_empty()) {
        match leading_label(line) {
            Some((label, "")) => sections.push(Section {
                heading: label.to_owned(),
                body: String::new(),
            }),
            _ => {
                if sections.is_empty() {
                    sections.push(Section::default());
                }
                let body = &mut sections.last_mut().expect("non-empty").body;
                push_line(body, line);
            }
        }
    }

    let has_findings = sections.iter().any(|s| s.heading == FINDINGS);
    let mut organ_sentences: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for section in sections
        .iter()
        .filter(|s| !has_findings || s.heading == FINDINGS)
    {
        for line in section.body.lines() {
            let (label_organs, text) = match leading_label(line) {
                Some((label, rest)) => (organs_in(dict, &label.to_lowercase()), rest),
                None => (Vec::new(), line),
            };
            for sentence in split_sentences(text) {
                let mut organs = organs_in(dict, &sentence);
                if organs.is_empty() {
                    organs = label_organs.clone();
                }
                for organ in organs {
                    organ_sentences.entry(organ).or_default().push(sentence.clone());
                }
            }
        }
    }

    ReportDocument {
        report_id: report_id.to_owned(),
        raw_text: raw.to_owned(),
        sections,
        organ_sentences,
    }
}

/// The organ's sentences joined by single spaces, or, with `assist`, the
/// backend's reply to [`EXTRACTION_INSTRUCTION`] and the raw report.
pub fn extract_organ_section(
    doc: &ReportDocument,
    organ: &str,
    assist: Option<&dyn Backend>,
    dict: &OrganDictionary,
) -> Result<String, CorpusError> {
    let organ = organ.trim().to_lowercase();
    if !dict.is_canonical(&organ) {
        return Err(CorpusError::UnknownOrgan(organ));
    }
    let text = match assist {
        Some(backend) => {
            let prompt = [
                EXTRACTION_INSTRUCTION.replace("{organ}", &organ).as_str(),
                "\n\n",
                &doc.raw_text,
            ]
            .concat();
            let mut reply = String::new();
            let mut sink = |t: &str| {
                reply.push_str(t);
                ControlFlow::Continue(())
            };
            backend.generate(&prompt, &BackendParams::with_max_tokens(512), &mut sink)?;
            reply
        }
        None => doc
            .organ_sentences
            .get(&organ)
            .map(|s| s.join(" "))
            .unwrap_or_default(),
    };
    let text = text.trim();
    if text.is_empty() {
        return Err(CorpusError::OrganNotMentioned(organ));
    }
    Ok(text.to_owned())
}
