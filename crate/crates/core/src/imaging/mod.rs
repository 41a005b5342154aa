//! Volumetric images, label masks and 2-D label slices.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod nifti;
pub mod raw;

pub use nifti::{parse_nifti, write_nifti_mask, write_nifti_volume, ParseAs, Parsed};
pub use raw::{parse_raw, serialize_raw_mask, serialize_raw_volume, RawHeader};

/// Relative tolerance used when comparing voxel spacings.
pub const SPACING_RTOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImagingError {
    #[error("not a single-file NIfTI-1 image (bad sizeof_hdr or magic)")]
    BadMagic,
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("payload holds {actual} bytes but the header implies {expected}")]
    TruncatedData { expected: usize, actual: usize },
    #[error("voxel spacing must be non-zero on every axis")]
    NonPositiveSpacing,
    #[error("invalid dimensions {0:?}")]
    InvalidDims([i64; 3]),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("data holds {actual} bytes but the header implies {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("masks require an integer datatype")]
    MaskDtypeNotInteger,
    #[error("mask value {0} is negative")]
    NegativeLabel(i64),
    #[error("label {0} is not present in the label table")]
    UnknownLabel(u32),
    #[error("label id 0 is reserved for background")]
    ReservedLabel,
    #[error("value {0} cannot be stored exactly in the requested datatype")]
    NotRepresentable(f32),
    #[error("image dims {image:?} differ from mask dims {mask:?}")]
    DimsMismatch { image: [usize; 3], mask: [usize; 3] },
    #[error("image spacing {image:?} differs from mask spacing {mask:?}")]
    SpacingMismatch { image: [f64; 3], mask: [f64; 3] },
    #[error("slice index {index} outside extent {extent}")]
    IndexOutOfRange { index: usize, extent: usize },
}

impl ImagingError {
    /// Stable variant name, used in service error bodies and CLI messages.
    pub fn name(&self) -> &'static str {
        match self {
            Self::BadMagic => "BadMagic",
            Self::UnsupportedDatatype(_) => "UnsupportedDatatype",
            Self::TruncatedData { .. } => "TruncatedData",
            Self::NonPositiveSpacing => "NonPositiveSpacing",
            Self::InvalidDims(_) => "InvalidDims",
            Self::MalformedHeader(_) => "MalformedHeader",
            Self::LengthMismatch { .. } => "LengthMismatch",
            Self::MaskDtypeNotInteger => "MaskDtypeNotInteger",
            Self::NegativeLabel(_) => "NegativeLabel",
            Self::UnknownLabel(_) => "UnknownLabel",
            Self::ReservedLabel => "ReservedLabel",
            Self::NotRepresentable(_) => "NotRepresentable",
            Self::DimsMismatch { .. } => "DimsMismatch",
            Self::SpacingMismatch { .. } => "SpacingMismatch",
            Self::IndexOutOfRange { .. } => "IndexOutOfRange",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Modality {
    CT,
    XR,
    #[default]
    OTHER,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

impl core::str::FromStr for Axis {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            _ => Err(()),
        }
    }
}

/// On-disk scalar type shared by the NIfTI and raw formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "u8")]
    U8,
    #[serde(rename = "i16")]
    I16,
    #[serde(rename = "f32")]
    F32,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::I16 => 2,
            Dtype::F32 => 4,
        }
    }

    pub fn is_integer(self) -> bool {
        !matches!(self, Dtype::F32)
    }

    fn check(self, value: f32) -> Result<(), ImagingError> {
        let ok = match self {
            Dtype::U8 => libm::truncf(value) == value && (0.0..=255.0).contains(&value),
            Dtype::I16 => libm::truncf(value) == value && (-32768.0..=32767.0).contains(&value),
            Dtype::F32 => true,
        };
        if ok {
            Ok(())
        } else {
            Err(ImagingError::NotRepresentable(value))
        }
    }

    fn encode_le(self, value: f32, out: &mut Vec<u8>) {
        match self {
            Dtype::U8 => out.push(value as u8),
            Dtype::I16 => out.extend_from_slice(&(value as i16).to_le_bytes()),
            Dtype::F32 => out.extend_from_slice(&value.to_le_bytes()),
        }
    }
}

fn checked_len(dims: [usize; 3]) -> Result<usize, ImagingError> {
    if dims.iter().any(|&d| d == 0) {
        return Err(ImagingError::InvalidDims(dims.map(|d| d as i64)));
    }
    dims[0]
        .checked_mul(dims[1])
        .and_then(|n| n.checked_mul(dims[2]))
        .ok_or(ImagingError::InvalidDims(dims.map(|d| d as i64)))
}

fn check_spacing(spacing: [f64; 3]) -> Result<(), ImagingError> {
    if spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(ImagingError::NonPositiveSpacing)
    }
}

/// Scalar image volume, x fastest then y then z.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    modality: Modality,
    data: Vec<f32>,
}

impl VoxelVolume {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        modality: Modality,
        data: Vec<f32>,
    ) -> Result<Self, ImagingError> {
        let len = checked_len(dims)?;
        check_spacing(spacing)?;
        if data.len() != len {
            return Err(ImagingError::LengthMismatch {
                expected: len,
                actual: data.len(),
            });
        }
        Ok(Self {
            dims,
            spacing,
            modality,
            data,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[linear_index(self.dims, x, y, z)]
    }
}

/// Organ label map aligned with a [`VoxelVolume`]; label 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    dims: [usize; 3],
    spacing: [f64; 3],
    labels: Vec<u32>,
    label_table: BTreeMap<u32, String>,
}

impl LabelMask {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        labels: Vec<u32>,
        label_table: BTreeMap<u32, String>,
    ) -> Result<Self, ImagingError> {
        let len = checked_len(dims)?;
        check_spacing(spacing)?;
        if labels.len() != len {
            return Err(ImagingError::LengthMismatch {
                expected: len,
                actual: labels.len(),
            });
        }
        if label_table.contains_key(&0) {
            return Err(ImagingError::ReservedLabel);
        }
        if let Some(&bad) = labels
            .iter()
            .find(|&&l| l != 0 && !label_table.contains_key(&l))
        {
            return Err(ImagingError::UnknownLabel(bad));
        }
        Ok(Self {
            dims,
            spacing,
            labels,
            label_table,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label_table(&self) -> &BTreeMap<u32, String> {
        &self.label_table
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u32 {
        self.labels[linear_index(self.dims, x, y, z)]
    }

    /// Label id registered under `organ`, if any.
    pub fn label_id(&self, organ: &str) -> Option<u32> {
        self.label_table
            .iter()
            .find(|(_, name)| name.as_str() == organ)
            .map(|(&id, _)| id)
    }
}

#[inline]
pub fn linear_index(dims: [usize; 3], x: usize, y: usize, z: usize) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

pub fn validate_alignment(volume: &VoxelVolume, mask: &LabelMask) -> Result<(), ImagingError> {
    if volume.dims != mask.dims {
        return Err(ImagingError::DimsMismatch {
            image: volume.dims,
            mask: mask.dims,
        });
    }
    let close = volume
        .spacing
        .iter()
        .zip(mask.spacing.iter())
        .all(|(a, b)| libm::fabs(a - b) <= SPACING_RTOL * libm::fmax(libm::fabs(*a), libm::fabs(*b)));
    if !close {
        return Err(ImagingError::SpacingMismatch {
            image: volume.spacing,
            mask: mask.spacing,
        });
    }
    Ok(())
}

/// One plane of a label mask. `labels` is row-major with `width` fastest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceRaster {
    pub axis: Axis,
    pub index: usize,
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
}

/// The two in-plane axes for a slice normal to `axis`, lower axis first.
fn plane_axes(axis: Axis) -> (usize, usize) {
    match axis {
        Axis::X => (1, 2),
        Axis::Y => (0, 2),
        Axis::Z => (0, 1),
    }
}

pub fn extract_slice(mask: &LabelMask, axis: Axis, index: usize) -> Result<SliceRaster, ImagingError> {
    let dims = mask.dims;
    let extent = dims[axis.index()];
    if index >= extent {
        return Err(ImagingError::IndexOutOfRange { index, extent });
    }
    let (u_axis, v_axis) = plane_axes(axis);
    let (width, height) = (dims[u_axis], dims[v_axis]);
    let mut labels = Vec::with_capacity(width * height);
    let mut pos = [0usize; 3];
    pos[axis.index()] = index;
    for v in 0..height {
        pos[v_axis] = v;
        for u in 0..width {
            pos[u_axis] = u;
            labels.push(mask.get(pos[0], pos[1], pos[2]));
        }
    }
    Ok(SliceRaster {
        axis,
        index,
        width,
        height,
        labels,
    })
}
