//! Corpus BLEU-1..4, ROUGE-L, and stratified dataset evaluation.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_N: usize = 4;
/// Floor applied to zero precisions by [`sentence_bleu_smoothed`].
pub const DIAGNOSTIC_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("{candidates} candidates but {references} references")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("nothing to evaluate")]
    EmptyCorpus,
    #[error("ROUGE-L needs non-empty candidate and reference")]
    EmptyText,
}

impl MetricsError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::LengthMismatch { .. } => "LengthMismatch",
            Self::EmptyCorpus => "EmptyCorpus",
            Self::EmptyText => "EmptyText",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Label {
    Normal,
    Abnormal,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stratum {
    All,
    Normal,
    Abnormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeL {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub bleu: [f64; MAX_N],
    pub rouge_l: RougeL,
    pub n_cases: usize,
    pub stratum: Stratum,
}

/// Lowercase, split on whitespace, strip leading/trailing ASCII punctuation.
pub fn tokenize_eval(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and candidate n-gram total for one pair.
fn clipped(candidate: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let matches = cand
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    (matches, candidate.len().saturating_sub(n - 1))
}

/// Modified precisions `p_1..p_4` plus total candidate and reference lengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; MAX_N],
    pub totals: [usize; MAX_N],
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl BleuStats {
    pub fn precision(&self, k: usize) -> f64 {
        if self.totals[k] == 0 {
            0.0
        } else {
            self.matches[k] as f64 / self.totals[k] as f64
        }
    }

    pub fn brevity_penalty(&self) -> f64 {
        let (c, r) = (self.candidate_len as f64, self.reference_len as f64);
        if self.candidate_len == 0 {
            0.0
        } else if c > r {
            1.0
        } else {
            libm::exp(1.0 - r / c)
        }
    }

    /// BLEU-1..4 with the given floor on zero precisions (0 = canonical).
    fn scores(&self, epsilon: f64) -> [f64; MAX_N] {
        let bp = self.brevity_penalty();
        let mut out = [0.0; MAX_N];
        let mut log_sum = 0.0;
        let mut zero = false;
        for (k, slot) in out.iter_mut().enumerate() {
            let p = self.precision(k);
            if p == 0.0 {
                if epsilon == 0.0 {
                    zero = true;
                } else {
                    log_sum += libm::log(epsilon);
                }
            } else {
                log_sum += libm::log(p);
            }
            *slot = if zero {
                0.0
            } else {
                bp * libm::exp(log_sum / (k + 1) as f64)
            };
        }
        out
    }
}

pub fn bleu_stats(
    candidates: &[Vec<String>],
    references: &[Vec<String>],
) -> Result<BleuStats, MetricsError> {
    if candidates.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut stats = BleuStats {
        matches: [0; MAX_N],
        totals: [0; MAX_N],
        candidate_len: 0,
        reference_len: 0,
    };
    for (cand, reference) in candidates.iter().zip(references) {
        stats.candidate_len += cand.len();
        stats.reference_len += reference.len();
        for k in 0..MAX_N {
            let (m, t) = clipped(cand, reference, k + 1);
            stats.matches[k] += m;
            stats.totals[k] += t;
        }
    }
    Ok(stats)
}

/// Corpus-level BLEU-1..4, no smoothing.
pub fn bleu(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<[f64; MAX_N], MetricsError> {
    bleu_stats(candidates, references).map(|s| s.scores(0.0))
}

/// Per-sentence BLEU with zero precisions floored at [`DIAGNOSTIC_EPSILON`].
/// Not the canonical metric; for inspecting individual cases only.
pub fn sentence_bleu_smoothed(candidate: &[String], reference: &[String]) -> [f64; MAX_N] {
    let stats = bleu_stats(&[candidate.to_vec()], &[reference.to_vec()])
        .expect("one candidate, one reference");
    stats.scores(DIAGNOSTIC_EPSILON)
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(candidate: &[String], reference: &[String]) -> Result<RougeL, MetricsError> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(MetricsError::EmptyText);
    }
    let l = lcs_len(candidate, reference) as f64;
    let precision = l / candidate.len() as f64;
    let recall = l / reference.len() as f64;
    let f1 = if l == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(RougeL {
        precision,
        recall,
        f1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub candidate: String,
    pub reference: String,
    #[serde(default)]
    pub label: Label,
}

fn evaluate_stratum(pairs: &[&EvalPair], stratum: Stratum) -> Result<EvalResult, MetricsError> {
    let cands: Vec<Vec<String>> = pairs.iter().map(|p| tokenize_eval(&p.candidate)).collect();
    let refs: Vec<Vec<String>> = pairs.iter().map(|p| tokenize_eval(&p.reference)).collect();
    let bleu = bleu(&cands, &refs)?;
    let mut sums = [0.0f64; 3];
    for (c, r) in cands.iter().zip(&refs) {
        if r.is_empty() {
            return Err(MetricsError::EmptyText);
        }
        // an empty prediction scores zero rather than aborting the run
        let s = if c.is_empty() {
            RougeL {
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
            }
        } else {
            rouge_l(c, r)?
        };
        sums[0] += s.precision;
        sums[1] += s.recall;
        sums[2] += s.f1;
    }
    let n = pairs.len() as f64;
    Ok(EvalResult {
        bleu,
        rouge_l: RougeL {
            precision: sums[0] / n,
            recall: sums[1] / n,
            f1: sums[2] / n,
        },
        n_cases: pairs.len(),
        stratum,
    })
}

/// Results for All, Normal and Abnormal, omitting empty strata.
pub fn evaluate_dataset(pairs: &[EvalPair]) -> Result<Vec<EvalResult>, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut out = Vec::with_capacity(3);
    for (stratum, keep) in [
        (Stratum::All, None),
        (Stratum::Normal, Some(Label::Normal)),
        (Stratum::Abnormal, Some(Label::Abnormal)),
    ] {
        let subset: Vec<&EvalPair> = pairs
            .iter()
            .filter(|p| keep.is_none_or(|l| p.label == l))
            .collect();
        if !subset.is_empty() {
            out.push(evaluate_stratum(&subset, stratum)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumRow {
    pub stratum: Stratum,
    pub n_cases: usize,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    #[serde(rename = "rougeL_p")]
    pub rouge_l_p: f64,
    #[serde(rename = "rougeL_r")]
    pub rouge_l_r: f64,
    #[serde(rename = "rougeL_f1")]
    pub rouge_l_f1: f64,
}

impl From<&EvalResult> for StratumRow {
    fn from(r: &EvalResult) -> Self {
        Self {
            stratum: r.stratum,
            n_cases: r.n_cases,
            bleu1: r.bleu[0],
            bleu2: r.bleu[1],
            bleu3: r.bleu[2],
            bleu4: r.bleu[3],
            rouge_l_p: r.rouge_l.precision,
            rouge_l_r: r.rouge_l.recall,
            rouge_l_f1: r.rouge_l.f1,
        }
    }
}

/// Evaluation report file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub model: String,
    pub strata: Vec<StratumRow>,
}

impl EvalReport {
    pub fn new(dataset: &str, model: &str, results: &[EvalResult]) -> Self {
        Self {
            dataset: dataset.to_owned(),
            model: model.to_owned(),
            strata: results.iter().map(StratumRow::from).collect(),
        }
    }

    pub fn stratum(&self, s: Stratum) -> Option<&StratumRow> {
        self.strata.iter().find(|r| r.stratum == s)
    }

    /// Plain-text table: one row per stratum, three decimals.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<10} {:<16} {:>6} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
            "stratum", "model", "n", "BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "ROUGE"
        );
        for r in &self.strata {
            let name = match r.stratum {
                Stratum::All => "all",
                Stratum::Normal => "normal",
                Stratum::Abnormal => "abnormal",
            };
            out.push_str(&format!(
                "{:<10} {:<16} {:>6} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>7.3}\n",
                name, self.model, r.n_cases, r.bleu1, r.bleu2, r.bleu3, r.bleu4, r.rouge_l_f1
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    #[test]
    fn tokenization() {
        assert_eq!(tokenize_eval("The kidneys are normal."), toks("the kidneys are normal"));
        assert!(tokenize_eval("").is_empty());
        assert_eq!(tokenize_eval("0.95,"), toks("0.95"));
        assert_eq!(tokenize_eval("( ... ) x"), toks("x"));
    }

    #[test]
    fn identity_is_one() {
        let t = toks("the kidneys have a normal appearance");
        assert_eq!(bleu(&[t.clone()], &[t]).unwrap(), [1.0; 4]);
    }

    #[test]
    fn clipped_unigram_precision() {
        let b = bleu(&[toks("the the the the")], &[toks("the cat")]).unwrap();
        assert!((b[0] - 0.25).abs() < 1e-12);
        assert_eq!(b[1], 0.0);
    }

    #[test]
    fn no_shared_four_gram() {
        let b = bleu(&[toks("a b c d e")], &[toks("a b c x d e")]).unwrap();
        assert!(b[0] > 0.0 && b[2] > 0.0);
        assert_eq!(b[3], 0.0);
    }

    #[test]
    fn brevity_penalty() {
        // c = 2, r = 4 -> BP = e^(1 - 2) ; both unigrams match
        let b = bleu(&[toks("a b")], &[toks("a b c d")]).unwrap();
        assert!((b[0] - libm::exp(-1.0)).abs() < 1e-15);
        assert!((b[1] - libm::exp(-1.0)).abs() < 1e-15);
    }

    #[test]
    fn bleu_errors() {
        assert_eq!(
            bleu(&[toks("a")], &[]),
            Err(MetricsError::LengthMismatch { candidates: 1, references: 0 })
        );
        assert_eq!(bleu(&[], &[]), Err(MetricsError::EmptyCorpus));
    }

    #[test]
    fn smoothed_sentence_bleu_is_positive() {
        let s = sentence_bleu_smoothed(&toks("a b c d e"), &toks("a b c x d e"));
        assert!(s[3] > 0.0 && s[3] < 1e-2);
        assert_eq!(sentence_bleu_smoothed(&toks("a b c d"), &toks("a b c d")), [1.0; 4]);
    }

    #[test]
    fn rouge_fixture() {
        let r = rouge_l(&toks("the cat sat on the mat"), &toks("the cat ate the mat")).unwrap();
        assert!((r.precision - 4.0 / 6.0).abs() < 1e-15);
        assert!((r.recall - 0.8).abs() < 1e-15);
        assert!((r.f1 - 0.727_272_727_272_727_3).abs() < 1e-9);
    }

    #[test]
    fn rouge_edges() {
        let t = toks("a b c");
        let r = rouge_l(&t, &t).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        let r = rouge_l(&toks("a b"), &toks("c d")).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        assert_eq!(rouge_l(&[], &t), Err(MetricsError::EmptyText));
    }

    fn pair(c: &str, r: &str, label: Label) -> EvalPair {
        EvalPair {
            candidate: c.into(),
            reference: r.into(),
            label,
        }
    }

    #[test]
    fn strata() {
        let pairs = vec![
            pair("The kidneys are normal.", "The kidneys are normal.", Label::Normal),
            pair("No stones are seen.", "No stones are seen.", Label::Normal),
            pair("Left kidney is small.", "Left kidney is small.", Label::Abnormal),
        ];
        let res = evaluate_dataset(&pairs).unwrap();
        assert_eq!(
            res.iter().map(|r| (r.stratum, r.n_cases)).collect::<Vec<_>>(),
            vec![(Stratum::All, 3), (Stratum::Normal, 2), (Stratum::Abnormal, 1)]
        );
        for r in &res {
            assert_eq!(r.bleu, [1.0; 4]);
            assert_eq!(r.rouge_l.f1, 1.0);
        }
        let unlabeled = vec![pair("a", "a", Label::Unknown)];
        assert_eq!(evaluate_dataset(&unlabeled).unwrap().len(), 1);
        assert_eq!(evaluate_dataset(&[]), Err(MetricsError::EmptyCorpus));
    }

    #[test]
    fn empty_prediction_scores_zero() {
        let res = evaluate_dataset(&[pair("", "The kidneys.", Label::Normal)]).unwrap();
        assert_eq!(res[0].rouge_l.f1, 0.0);
        assert_eq!(res[0].bleu, [0.0; 4]);
    }

    #[test]
    fn report_rows() {
        let res = evaluate_dataset(&[pair("a b c d", "a b c d", Label::Abnormal)]).unwrap();
        let report = EvalReport::new("synthetic", "rule", &res);
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"rougeL_f1\":1.0"), "{json}");
        assert!(json.contains("\"bleu4\":1.0"));
        assert!(report.to_table().contains("abnormal"));
        assert_eq!(report.stratum(Stratum::Abnormal).unwrap().n_cases, 1);
    }
}
