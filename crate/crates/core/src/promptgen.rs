//! Informative prompts: radiomics statements rendered ahead of the report text.
//!
//! Default layout for a paired organ:
//!
//! ```text
//! Left kidney volume: 170 cm3, Right kidney volume: 179 cm3, the volume ratio is 0.95, <report prefix>
//! ```

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::radiomics::{LateralityRatio, OrganFeatureSet};

/// Volumes below this many cm³ keep one decimal instead of rounding to integer.
pub const SMALL_VOLUME_CM3: f64 = 10.0;
pub const SEPARATOR: &str = ", ";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("feature set for {found:?} does not belong to organ {expected:?}")]
    OrganMismatch { expected: String, found: String },
    #[error("no feature sets to render")]
    EmptyFeatures,
    #[error("more than one feature set for the {0} side")]
    DuplicateSide(&'static str),
    #[error("template placeholder {{{0}}} has no value")]
    MissingPlaceholder(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    fn word(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

/// Extra features that may follow the volume statements, in rendering order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtraFeature {
    SurfaceArea,
    Sphericity,
    IntensityMean,
    IntensityStd,
    Entropy,
}

impl ExtraFeature {
    pub const ALL: [ExtraFeature; 5] = [
        ExtraFeature::SurfaceArea,
        ExtraFeature::Sphericity,
        ExtraFeature::IntensityMean,
        ExtraFeature::IntensityStd,
        ExtraFeature::Entropy,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ExtraFeature::SurfaceArea => "surface area",
            ExtraFeature::Sphericity => "sphericity",
            ExtraFeature::IntensityMean => "mean intensity",
            ExtraFeature::IntensityStd => "intensity std",
            ExtraFeature::Entropy => "intensity entropy",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            ExtraFeature::SurfaceArea => "mm2",
            ExtraFeature::Sphericity => "",
            ExtraFeature::IntensityMean | ExtraFeature::IntensityStd => "HU",
            ExtraFeature::Entropy => "bits",
        }
    }

    fn value(self, f: &OrganFeatureSet) -> f64 {
        match self {
            ExtraFeature::SurfaceArea => f.surface_area_mm2,
            ExtraFeature::Sphericity => f.sphericity,
            ExtraFeature::IntensityMean => f.intensity_mean,
            ExtraFeature::IntensityStd => f.intensity_std,
            ExtraFeature::Entropy => f.intensity_entropy,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.label() == s || serde_json::to_string(e).ok().as_deref() == Some(&format!("\"{s}\"")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatementStyle {
    /// `{name}: {value} {unit}`
    Labeled,
    /// `{name} is {value}`
    Phrase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub name: String,
    pub value: String,
    pub unit: String,
    pub style: StatementStyle,
}

impl Statement {
    pub fn render(&self) -> String {
        match (self.style, self.unit.is_empty()) {
            (StatementStyle::Phrase, _) => format!("{} is {}", self.name, self.value),
            (StatementStyle::Labeled, true) => format!("{}: {}", self.name, self.value),
            (StatementStyle::Labeled, false) => format!("{}: {} {}", self.name, self.value, self.unit),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InformativePrompt {
    pub organ: String,
    pub statements: Vec<Statement>,
    pub report_prefix: String,
    pub rendered: String,
}

/// Which statements to emit beyond volumes and ratio, plus optional
/// per-organ template overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptOptions {
    #[serde(default)]
    pub extras: Vec<ExtraFeature>,
    /// organ → template with `{left_volume}`, `{right_volume}`, `{volume}`,
    /// `{ratio}` and `{statements}` placeholders.
    #[serde(default)]
    pub templates: BTreeMap<String, String>,
}

/// Half-away-from-zero rounding to `decimals` places, rendered with exactly
/// that many digits.
pub fn round_fixed(value: f64, decimals: u32) -> String {
    let scale = libm::pow(10.0, decimals as f64);
    // + 0.0 folds -0.0 into 0.0
    let rounded = libm::round(value * scale) / scale + 0.0;
    format!("{:.*}", decimals as usize, rounded)
}

pub fn render_volume(cm3: f64) -> String {
    if cm3 < SMALL_VOLUME_CM3 {
        round_fixed(cm3, 1)
    } else {
        round_fixed(cm3, 0)
    }
}

pub fn render_ratio(ratio: f64) -> String {
    round_fixed(ratio, 2)
}

fn normalize(name: &str) -> String {
    name.trim().to_lowercase().replace(['_', '-'], " ")
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Splits `kidney_left`, `left kidney`, `Left_Kidney`, … into side and base.
pub fn split_side(name: &str) -> (Option<Side>, String) {
    let n = normalize(name);
    for side in [Side::Left, Side::Right] {
        let w = side.word();
        if let Some(base) = n.strip_suffix(w).and_then(|b| b.strip_suffix(' ')) {
            return (Some(side), base.trim().to_owned());
        }
        if let Some(base) = n.strip_prefix(w).and_then(|b| b.strip_prefix(' ')) {
            return (Some(side), base.trim().to_owned());
        }
    }
    (None, n)
}

fn subject(side: Option<Side>, organ: &str) -> String {
    match side {
        Some(s) => format!("{} {}", capitalize(s.word()), organ),
        None => capitalize(organ),
    }
}

fn build_statements<'a>(
    features: &'a [OrganFeatureSet],
    ratio: Option<&LateralityRatio>,
    organ: &str,
    extras: &[ExtraFeature],
) -> Result<(String, Vec<(Option<Side>, &'a OrganFeatureSet)>, Vec<Statement>), PromptError> {
    if features.is_empty() {
        return Err(PromptError::EmptyFeatures);
    }
    let organ_norm = normalize(organ);
    let mut sided: Vec<(Option<Side>, &OrganFeatureSet)> = Vec::with_capacity(features.len());
    for f in features {
        let (side, base) = split_side(&f.organ);
        if base != organ_norm {
            return Err(PromptError::OrganMismatch {
                expected: organ.to_owned(),
                found: f.organ.clone(),
            });
        }
        if sided.iter().any(|(s, _)| *s == side) {
            return Err(PromptError::DuplicateSide(side.map_or("unlateralized", Side::word)));
        }
        sided.push((side, f));
    }
    // unlateralized first, then left, then right
    sided.sort_by_key(|(s, _)| *s);

    let mut statements: Vec<Statement> = sided
        .iter()
        .map(|(side, f)| Statement {
            name: format!("{} volume", subject(*side, &organ_norm)),
            value: render_volume(f.volume_cm3),
            unit: "cm3".to_owned(),
            style: StatementStyle::Labeled,
        })
        .collect();
    if let Some(r) = ratio {
        statements.push(Statement {
            name: "the volume ratio".to_owned(),
            value: render_ratio(r.ratio),
            unit: String::new(),
            style: StatementStyle::Phrase,
        });
    }
    let mut extras = extras.to_vec();
    extras.sort();
    extras.dedup();
    for extra in extras {
        for (side, f) in &sided {
            statements.push(Statement {
                name: format!("{} {}", subject(*side, &organ_norm), extra.label()),
                value: round_fixed(extra.value(f), 1),
                unit: extra.unit().to_owned(),
                style: StatementStyle::Labeled,
            });
        }
    }
    Ok((organ_norm, sided, statements))
}

fn fill_template(
    template: &str,
    sided: &[(Option<Side>, &OrganFeatureSet)],
    ratio: Option<&LateralityRatio>,
    statements: &str,
) -> Result<String, PromptError> {
    let lookup = |key: &str| -> Option<String> {
        let side_volume = |want: Option<Side>| {
            sided
                .iter()
                .find(|(s, _)| *s == want)
                .map(|(_, f)| render_volume(f.volume_cm3))
        };
        match key {
            "left_volume" => side_volume(Some(Side::Left)),
            "right_volume" => side_volume(Some(Side::Right)),
            "volume" => side_volume(None),
            "ratio" => ratio.map(|r| render_ratio(r.ratio)),
            "statements" => Some(statements.to_owned()),
            _ => None,
        }
    };
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else {
            out.push_str(&rest[open..]);
            return Ok(out);
        };
        let key = &after[..close];
        out.push_str(&lookup(key).ok_or_else(|| PromptError::MissingPlaceholder(key.to_owned()))?);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

pub fn render_prompt_with(
    features: &[OrganFeatureSet],
    ratio: Option<&LateralityRatio>,
    organ: &str,
    report_prefix: &str,
    options: &PromptOptions,
) -> Result<InformativePrompt, PromptError> {
    let (organ_norm, sided, statements) = build_statements(features, ratio, organ, &options.extras)?;
    let joined = statements
        .iter()
        .map(Statement::render)
        .collect::<Vec<_>>()
        .join(SEPARATOR);
    let body = match options.templates.get(&organ_norm) {
        Some(t) => fill_template(t, &sided, ratio, &joined)?,
        None => joined,
    };
    let rendered = if report_prefix.is_empty() {
        body
    } else {
        format!("{body}{SEPARATOR}{report_prefix}")
    };
    Ok(InformativePrompt {
        organ: organ_norm,
        statements,
        report_prefix: report_prefix.to_owned(),
        rendered,
    })
}

pub fn render_prompt(
    features: &[OrganFeatureSet],
    ratio: Option<&LateralityRatio>,
    organ: &str,
    report_prefix: &str,
) -> Result<InformativePrompt, PromptError> {
    render_prompt_with(features, ratio, organ, report_prefix, &PromptOptions::default())
}

/// The prompt without a report prefix; stored as a training triplet's input.
pub fn render_input_payload(
    features: &[OrganFeatureSet],
    ratio: Option<&LateralityRatio>,
    organ: &str,
) -> Result<String, PromptError> {
    render_prompt(features, ratio, organ, "").map(|p| p.rendered)
}

/// Numeric values recovered from a rendered payload.
///
/// Keys: `left_volume`, `right_volume`, `volume`, `ratio`, and for extras the
/// snake-cased feature label with an optional side prefix, e.g.
/// `left_surface_area`. `organ` is the base organ named by the first
/// volume statement.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PayloadValues {
    pub organ: Option<String>,
    pub values: BTreeMap<String, f64>,
}

impl PayloadValues {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }
}

/// Inverse of the default rendering. Segments that are not statements (for
/// example report text following the payload) are skipped.
pub fn parse_payload(text: &str) -> PayloadValues {
    let mut out = PayloadValues::default();
    for segment in text.split(SEPARATOR) {
        let segment = segment.trim();
        if let Some(v) = segment.strip_prefix("the volume ratio is ") {
            if let Ok(r) = v.trim().parse::<f64>() {
                out.values.insert("ratio".to_owned(), r);
            }
            continue;
        }
        let Some((name, rest)) = segment.split_once(": ") else {
            continue;
        };
        let Some(number) = rest.split_whitespace().next().and_then(|n| n.parse::<f64>().ok()) else {
            continue;
        };
        let (side, base) = split_side_leading(name);
        if let Some(organ) = base.strip_suffix(" volume") {
            out.organ.get_or_insert_with(|| organ.to_owned());
            let key = side.map_or("volume".to_owned(), |s| format!("{}_volume", s.word()));
            out.values.insert(key, number);
            continue;
        }
        if let Some(extra) = ExtraFeature::ALL
            .into_iter()
            .find(|e| base.ends_with(&format!(" {}", e.label())))
        {
            let key = extra.label().replace(' ', "_");
            let key = side.map_or(key.clone(), |s| format!("{}_{key}", s.word()));
            out.values.insert(key, number);
        }
    }
    out
}

fn split_side_leading(name: &str) -> (Option<Side>, String) {
    let n = normalize(name);
    for side in [Side::Left, Side::Right] {
        if let Some(base) = n.strip_prefix(side.word()).and_then(|b| b.strip_prefix(' ')) {
            return (Some(side), base.to_owned());
        }
    }
    (None, n)
}

impl core::fmt::Display for InformativePrompt {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&self.rendered)
    }
}

impl From<InformativePrompt> for String {
    fn from(p: InformativePrompt) -> String {
        p.rendered
    }
}
