//! Sidecar-JSON raw format: a small header object plus a little-endian blob.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Dtype, ImagingError, LabelMask, Modality, Parsed, VoxelVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawKind {
    Image,
    Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub dtype: Dtype,
    pub kind: RawKind,
    #[serde(default)]
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<BTreeMap<String, String>>,
}

fn label_table(raw: &BTreeMap<String, String>) -> Result<BTreeMap<u32, String>, ImagingError> {
    raw.iter()
        .map(|(k, v)| {
            k.parse::<u32>()
                .map(|id| (id, v.clone()))
                .map_err(|_| ImagingError::MalformedHeader(alloc::format!("label key {k:?}")))
        })
        .collect()
}

pub fn parse_raw(header_json: &[u8], data: &[u8]) -> Result<Parsed, ImagingError> {
    let header: RawHeader = serde_json::from_slice(header_json)
        .map_err(|e| ImagingError::MalformedHeader(e.to_string()))?;
    if header.kind == RawKind::Mask && !header.dtype.is_integer() {
        return Err(ImagingError::MaskDtypeNotInteger);
    }
    let count = header
        .dims
        .iter()
        .try_fold(1usize, |acc, &d| if d == 0 { None } else { acc.checked_mul(d) })
        .ok_or(ImagingError::InvalidDims(header.dims.map(|d| d as i64)))?;
    let expected = count * header.dtype.size();
    if data.len() != expected {
        return Err(ImagingError::LengthMismatch {
            expected,
            actual: data.len(),
        });
    }

    let values = data.chunks_exact(header.dtype.size());
    match header.kind {
        RawKind::Image => {
            let samples = values
                .map(|c| match header.dtype {
                    Dtype::U8 => c[0] as f32,
                    Dtype::I16 => i16::from_le_bytes([c[0], c[1]]) as f32,
                    Dtype::F32 => f32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                })
                .collect();
            VoxelVolume::new(header.dims, header.spacing, header.modality, samples)
                .map(Parsed::Volume)
        }
        RawKind::Mask => {
            let table = header
                .labels
                .as_ref()
                .ok_or_else(|| ImagingError::MalformedHeader(String::from("mask requires labels")))
                .and_then(label_table)?;
            let labels = values
                .map(|c| match header.dtype {
                    Dtype::U8 => Ok(c[0] as u32),
                    _ => {
                        let v = i16::from_le_bytes([c[0], c[1]]);
                        u32::try_from(v).map_err(|_| ImagingError::NegativeLabel(v as i64))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            LabelMask::new(header.dims, header.spacing, labels, table).map(Parsed::Mask)
        }
    }
}

/// Returns `(header_json, data)`.
pub fn serialize_raw_volume(
    volume: &VoxelVolume,
    dtype: Dtype,
) -> Result<(Vec<u8>, Vec<u8>), ImagingError> {
    let header = RawHeader {
        dims: volume.dims(),
        spacing: volume.spacing(),
        dtype,
        kind: RawKind::Image,
        modality: volume.modality(),
        labels: None,
    };
    let mut data = Vec::with_capacity(volume.data().len() * dtype.size());
    for &v in volume.data() {
        dtype.check(v)?;
        dtype.encode_le(v, &mut data);
    }
    Ok((to_json(&header), data))
}

pub fn serialize_raw_mask(mask: &LabelMask, dtype: Dtype) -> Result<(Vec<u8>, Vec<u8>), ImagingError> {
    if !dtype.is_integer() {
        return Err(ImagingError::MaskDtypeNotInteger);
    }
    let header = RawHeader {
        dims: mask.dims(),
        spacing: mask.spacing(),
        dtype,
        kind: RawKind::Mask,
        modality: Modality::OTHER,
        labels: Some(
            mask.label_table()
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
        ),
    };
    let mut data = Vec::with_capacity(mask.labels().len() * dtype.size());
    for &l in mask.labels() {
        if l > 32767 {
            return Err(ImagingError::NotRepresentable(l as f32));
        }
        dtype.check(l as f32)?;
        dtype.encode_le(l as f32, &mut data);
    }
    Ok((to_json(&header), data))
}

fn to_json(header: &RawHeader) -> Vec<u8> {
    // RawHeader has only string keys and finite numbers, so this cannot fail.
    serde_json::to_vec(header).expect("raw header serializes")
}
