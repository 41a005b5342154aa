//! Run-length encoding for label slices: `[[label, count], …]`.

use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RleError {
    #[error("run {0} has zero length")]
    EmptyRun(usize),
    #[error("runs expand to {actual} labels, expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },
}

pub fn encode(labels: &[u32]) -> Vec<[u32; 2]> {
    let mut runs: Vec<[u32; 2]> = Vec::new();
    for &l in labels {
        match runs.last_mut() {
            Some([label, count]) if *label == l && *count < u32::MAX => *count += 1,
            _ => runs.push([l, 1]),
        }
    }
    runs
}

pub fn decode(runs: &[[u32; 2]]) -> Result<Vec<u32>, RleError> {
    let mut out = Vec::new();
    for (i, &[label, count]) in runs.iter().enumerate() {
        if count == 0 {
            return Err(RleError::EmptyRun(i));
        }
        out.extend(core::iter::repeat_n(label, count as usize));
    }
    Ok(out)
}

/// Decode and check the result has `expected` labels.
pub fn decode_exact(runs: &[[u32; 2]], expected: usize) -> Result<Vec<u32>, RleError> {
    let out = decode(runs)?;
    if out.len() != expected {
        return Err(RleError::LengthMismatch {
            expected,
            actual: out.len(),
        });
    }
    Ok(out)
}
