//! Seeded synthetic kidney corpus standing in for a private report archive.
//!
//! Each case gets a left/right kidney volume pair, a report whose kidney
//! line comes from the default kidney rule table, benign filler about other
//! organs, and a Normal/Abnormal label from the draw itself.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sections::{extract_organ_section, parse_report_sections};
use super::{build_triplet, Condition, CorpusError, TrainingTriplet, TripletSource};
use crate::completion::RuleBackend;
use crate::metrics::Label;
use crate::promptgen::render_input_payload;
use crate::radiomics::{volume_ratio, LateralityRatio, OrganFeatureSet};
use crate::router::OrganDictionary;

pub const GENERATOR: &str = "radassist-synth";

/// Optional second kidney sentence; all mention the kidney by keyword.
pub const KIDNEY_FILLER: &[&str] = &[
    "No renal calculi or hydronephrosis.",
    "The renal collecting systems are not dilated.",
    "No focal renal mass is identified.",
];

/// `(line label, sentence)` filler for other organs.
pub const OTHER_FILLER: &[(&str, &[&str])] = &[
    ("LIVER", &["The liver is normal in size and attenuation.", "No focal hepatic lesion."]),
    ("SPLEEN", &["The spleen is unremarkable.", "Spleen size is within normal limits."]),
    ("PANCREAS", &["The pancreas is unremarkable."]),
    ("ADRENALS", &["The adrenal glands are normal."]),
    ("BLADDER", &["The urinary bladder is well distended.", "The bladder wall is not thickened."]),
];

pub const IMPRESSION_NORMAL: &str = "No acute abdominal abnormality.";
pub const IMPRESSION_ABNORMAL: &str = "Renal volume abnormality as described.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub abnormal_rate: f64,
    pub normal_volume_cm3: [f64; 2],
    /// Left/right ratio window for normal draws.
    pub normal_ratio: [f64; 2],
    pub small_volume_cm3: [f64; 2],
    pub large_volume_cm3: [f64; 2],
    /// Probability of a second, benign kidney sentence.
    pub kidney_filler_rate: f64,
    /// Inclusive range of other-organ filler lines per report.
    pub other_filler_lines: [usize; 2],
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            abnormal_rate: 0.3,
            normal_volume_cm3: [130.0, 190.0],
            normal_ratio: [0.9, 1.11],
            small_volume_cm3: [40.0, 110.0],
            large_volume_cm3: [210.0, 320.0],
            kidney_filler_rate: 0.5,
            other_filler_lines: [1, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticManifest {
    pub generator: String,
    pub seed: u64,
    pub n_cases: usize,
    pub params: SyntheticParams,
}

impl SyntheticManifest {
    pub fn new(seed: u64, n_cases: usize, params: SyntheticParams) -> Self {
        Self {
            generator: GENERATOR.to_owned(),
            seed,
            n_cases,
            params,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCase {
    pub case_id: String,
    pub left: OrganFeatureSet,
    pub right: OrganFeatureSet,
    pub ratio: LateralityRatio,
    pub report: String,
    pub label: Label,
    /// Kidney sentences placed in the report, in order.
    pub kidney_sentences: Vec<String>,
}

impl SyntheticCase {
    pub fn features(&self) -> [OrganFeatureSet; 2] {
        [self.left.clone(), self.right.clone()]
    }

    /// The kidney payload an informative prompt would carry.
    pub fn payload(&self) -> String {
        render_input_payload(&self.features(), Some(&self.ratio), "kidney")
            .expect("left and right kidney features render")
    }
}

/// Features for an organ of the given volume. Only volume is meaningful:
/// shape fields are those of the equal-volume sphere at 1 mm spacing and
/// intensities are fixed soft-tissue values.
pub fn placeholder_features(organ: &str, volume_cm3: f64) -> OrganFeatureSet {
    let v_mm3 = volume_cm3 * 1000.0;
    let area = libm::cbrt(36.0 * PI * v_mm3 * v_mm3);
    let diameter = 2.0 * libm::cbrt(3.0 * v_mm3 / (4.0 * PI));
    OrganFeatureSet {
        organ: organ.to_owned(),
        label_id: 0,
        voxel_count: libm::round(v_mm3) as u64,
        volume_cm3,
        surface_area_mm2: area,
        sphericity: 1.0,
        bbox_mm: [diameter; 3],
        intensity_mean: 30.0,
        intensity_std: 10.0,
        intensity_min: -20.0,
        intensity_max: 80.0,
        intensity_entropy: 3.0,
    }
}

fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    rng.gen_range(range[0]..=range[1])
}

fn draw_volumes(rng: &mut ChaCha8Rng, p: &SyntheticParams, abnormal: bool) -> (f64, f64) {
    if abnormal {
        let odd = if rng.gen_bool(0.5) {
            uniform(rng, p.small_volume_cm3)
        } else {
            uniform(rng, p.large_volume_cm3)
        };
        let other = uniform(rng, p.normal_volume_cm3);
        if rng.gen_bool(0.5) {
            (odd, other)
        } else {
            (other, odd)
        }
    } else {
        loop {
            let l = uniform(rng, p.normal_volume_cm3);
            let r = uniform(rng, p.normal_volume_cm3);
            if (p.normal_ratio[0]..=p.normal_ratio[1]).contains(&(l / r)) {
                return (l, r);
            }
        }
    }
}

/// Case `index` of the corpus with `seed`; each case has its own stream so
/// cases can be generated independently. `force` overrides the label draw.
pub fn generate_case(
    seed: u64,
    index: usize,
    params: &SyntheticParams,
    rules: &RuleBackend,
    force: Option<Label>,
) -> SyntheticCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let drawn_abnormal = rng.gen_bool(params.abnormal_rate.clamp(0.0, 1.0));
    let abnormal = match force {
        Some(Label::Abnormal) => true,
        Some(Label::Normal) => false,
        _ => drawn_abnormal,
    };
    let (lv, rv) = draw_volumes(&mut rng, params, abnormal);
    let left = placeholder_features("left kidney", lv);
    let right = placeholder_features("right kidney", rv);
    let ratio = volume_ratio(lv, rv).expect("drawn volumes are positive");

    let payload = render_input_payload(&[left.clone(), right.clone()], Some(&ratio), "kidney")
        .expect("kidney pair renders");
    let lead = rules
        .candidates(&payload)
        .ok()
        .and_then(|c| c.into_iter().next())
        .expect("kidney rules always produce a sentence");
    let mut kidney_sentences = alloc::vec![lead];
    if rng.gen_bool(params.kidney_filler_rate.clamp(0.0, 1.0)) {
        kidney_sentences.push((*KIDNEY_FILLER.choose(&mut rng).expect("non-empty")).to_owned());
    }

    let n_other = rng
        .gen_range(params.other_filler_lines[0]..=params.other_filler_lines[1])
        .min(OTHER_FILLER.len());
    let mut lines: Vec<String> = OTHER_FILLER
        .choose_multiple(&mut rng, n_other)
        .map(|(label, options)| format!("{label}: {}", options.choose(&mut rng).expect("non-empty")))
        .collect();
    let at = rng.gen_range(0..=lines.len());
    lines.insert(at, format!("KIDNEYS: {}", kidney_sentences.join(" ")));

    let impression = if abnormal { IMPRESSION_ABNORMAL } else { IMPRESSION_NORMAL };
    let report = format!("FINDINGS:\n{}\nIMPRESSION:\n{impression}", lines.join("\n"));

    SyntheticCase {
        case_id: format!("synth-{index:05}"),
        left,
        right,
        ratio,
        report,
        label: if abnormal { Label::Abnormal } else { Label::Normal },
        kidney_sentences,
    }
}

pub fn generate_synthetic_corpus(n_cases: usize, seed: u64) -> Vec<SyntheticCase> {
    generate_with(n_cases, seed, &SyntheticParams::default())
}

pub fn generate_with(n_cases: usize, seed: u64, params: &SyntheticParams) -> Vec<SyntheticCase> {
    let rules = RuleBackend::default();
    (0..n_cases)
        .map(|i| generate_case(seed, i, params, &rules, None))
        .collect()
}

/// One kidney triplet per case: the target is the kidney section recovered
/// from the report text.
pub fn build_dataset(cases: &[SyntheticCase], condition: Condition) -> Result<Vec<TrainingTriplet>, CorpusError> {
    let dict = OrganDictionary::default();
    cases
        .iter()
        .map(|case| {
            let doc = parse_report_sections(&case.case_id, &case.report);
            let target = extract_organ_section(&doc, "kidney", None, &dict)?;
            let features = case.features();
            let source = match condition {
                Condition::WithRadiomics => TripletSource::Radiomics {
                    features: &features,
                    ratio: Some(&case.ratio),
                },
                Condition::PrefixOnly => TripletSource::Prefix,
            };
            build_triplet(source, &target, "kidney", &case.case_id, case.label)
        })
        .collect()
}
