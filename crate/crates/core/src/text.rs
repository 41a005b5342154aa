//! Sentence splitting and whitespace helpers shared by the corpus and
//! completion modules.

use alloc::string::String;
use alloc::vec::Vec;

/// Words that end in a period without ending the sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "cm.", "mm.", "no.", "e.g.", "i.e.", "dr.", "approx.", "vs.", "fig.", "st.", "mr.", "ms.",
];

fn is_abbreviation(word: &str) -> bool {
    let lower = word.to_lowercase();
    ABBREVIATIONS.iter().any(|a| lower.ends_with(a) && {
        // whole-word match: "5cm." counts, "alarm." does not
        let head = &lower[..lower.len() - a.len()];
        head.is_empty() || head.chars().all(|c| c.is_ascii_digit() || c == '.' || c == '(')
    })
}

/// Splits on a period followed by whitespace (or end of text), skipping
/// known abbreviations. Line breaks also end a sentence. Sentences keep
/// their terminal period and are trimmed.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let mut current = String::new();
        let mut words = line.split_whitespace().peekable();
        while let Some(word) = words.next() {
            if !current.is_empty() {
                current.push(' ');
            }
            current.push_str(word);
            let ends = word.ends_with('.') || word.ends_with('?') || word.ends_with('!');
            if ends && !is_abbreviation(word) {
                out.push(core::mem::take(&mut current));
            } else if words.peek().is_none() {
                out.push(core::mem::take(&mut current));
            }
        }
    }
    out
}

/// `base` followed by `addition`, with one separating space when neither
/// side already provides whitespace and `addition` does not open with
/// closing punctuation.
pub fn append_spaced(base: &str, addition: &str) -> String {
    let mut out = String::with_capacity(base.len() + addition.len() + 1);
    out.push_str(base);
    let needs_space = !base.is_empty()
        && !addition.is_empty()
        && !base.ends_with(char::is_whitespace)
        && !addition.starts_with(char::is_whitespace)
        && !addition.starts_with(['.', ',', ';', ':', '!', '?']);
    if needs_space {
        out.push(' ');
    }
    out.push_str(addition);
    out
}
