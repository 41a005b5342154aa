//! Per-organ quantitative features from an aligned volume and label mask.
//!
//! Surface area counts exposed voxel faces under 6-connectivity. Faces are
//! tallied per axis as integers and converted to mm² once, so the result is
//! exact and scales exactly with spacing.

use alloc::string::String;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{linear_index, validate_alignment, ImagingError, LabelMask, VoxelVolume};

/// Lower edge of the intensity histogram, HU.
pub const HIST_MIN_HU: f64 = -1024.0;
/// Upper edge (inclusive) of the intensity histogram, HU.
pub const HIST_MAX_HU: f64 = 3071.0;
pub const HIST_BIN_WIDTH_HU: f64 = 25.0;
/// ceil((3071 + 1024 + 1) / 25)
pub const HIST_BINS: usize = 164;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RadiomicsError {
    #[error("label {0} has no voxels in the mask")]
    LabelAbsent(u32),
    #[error("organ {0:?} is not in the label table")]
    OrganAbsent(String),
    #[error("image and mask are not aligned: {0}")]
    MisalignedInputs(ImagingError),
    #[error("volume must be positive for a laterality ratio")]
    ZeroVolume,
}

impl RadiomicsError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::LabelAbsent(_) | Self::OrganAbsent(_) => "LabelAbsent",
            Self::MisalignedInputs(e) => e.name(),
            Self::ZeroVolume => "ZeroVolume",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrganFeatureSet {
    pub organ: String,
    pub label_id: u32,
    pub voxel_count: u64,
    pub volume_cm3: f64,
    pub surface_area_mm2: f64,
    pub sphericity: f64,
    pub bbox_mm: [f64; 3],
    pub intensity_mean: f64,
    pub intensity_std: f64,
    pub intensity_min: f64,
    pub intensity_max: f64,
    pub intensity_entropy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LateralityRatio {
    pub left_volume_cm3: f64,
    pub right_volume_cm3: f64,
    pub ratio: f64,
}

/// Exposed faces per axis: `[x-normal, y-normal, z-normal]`.
pub fn exposed_faces(mask: &LabelMask, label: u32) -> [u64; 3] {
    let dims = mask.dims();
    let labels = mask.labels();
    let mut faces = [0u64; 3];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                if labels[linear_index(dims, x, y, z)] != label {
                    continue;
                }
                let pos = [x, y, z];
                for (axis, count) in faces.iter_mut().enumerate() {
                    for step in [-1i64, 1] {
                        let mut n = pos;
                        let c = pos[axis] as i64 + step;
                        if c < 0 || c >= dims[axis] as i64 {
                            *count += 1;
                            continue;
                        }
                        n[axis] = c as usize;
                        if labels[linear_index(dims, n[0], n[1], n[2])] != label {
                            *count += 1;
                        }
                    }
                }
            }
        }
    }
    faces
}

/// Area in mm² of `faces` exposed faces per axis at the given spacing.
pub fn face_area_mm2(faces: [u64; 3], spacing: [f64; 3]) -> f64 {
    let [sx, sy, sz] = spacing;
    faces[0] as f64 * (sy * sz) + faces[1] as f64 * (sx * sz) + faces[2] as f64 * (sx * sy)
}

/// π^(1/3)·(6V)^(2/3) / A with V in mm³ and A in mm².
pub fn sphericity(volume_mm3: f64, area_mm2: f64) -> f64 {
    libm::cbrt(core::f64::consts::PI) * libm::pow(6.0 * volume_mm3, 2.0 / 3.0) / area_mm2
}

pub fn histogram_bin(hu: f64) -> usize {
    let clamped = hu.clamp(HIST_MIN_HU, HIST_MAX_HU);
    let bin = libm::floor((clamped - HIST_MIN_HU) / HIST_BIN_WIDTH_HU) as usize;
    bin.min(HIST_BINS - 1)
}

pub fn compute_features(
    volume: &VoxelVolume,
    mask: &LabelMask,
    label_id: u32,
) -> Result<OrganFeatureSet, RadiomicsError> {
    validate_alignment(volume, mask).map_err(RadiomicsError::MisalignedInputs)?;
    let organ = mask
        .label_table()
        .get(&label_id)
        .cloned()
        .ok_or(RadiomicsError::LabelAbsent(label_id))?;

    let dims = mask.dims();
    let spacing = mask.spacing();
    let data = volume.data();
    let labels = mask.labels();

    let mut count = 0u64;
    let mut sum = 0.0f64;
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut hist = [0u64; HIST_BINS];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let i = linear_index(dims, x, y, z);
                if labels[i] != label_id {
                    continue;
                }
                let v = data[i] as f64;
                count += 1;
                sum += v;
                min = min.min(v);
                max = max.max(v);
                hist[histogram_bin(v)] += 1;
                for (axis, c) in [x, y, z].into_iter().enumerate() {
                    lo[axis] = lo[axis].min(c);
                    hi[axis] = hi[axis].max(c);
                }
            }
        }
    }
    if count == 0 {
        return Err(RadiomicsError::LabelAbsent(label_id));
    }

    let mean = sum / count as f64;
    let mut sq = 0.0f64;
    for (i, &l) in labels.iter().enumerate() {
        if l == label_id {
            let d = data[i] as f64 - mean;
            sq += d * d;
        }
    }
    let std = libm::sqrt(sq / count as f64);

    let entropy = hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / count as f64;
            -p * libm::log2(p)
        })
        .sum::<f64>()
        // a single occupied bin gives -1·log2(1) = -0.0
        .max(0.0);

    let voxel_mm3 = spacing[0] * spacing[1] * spacing[2];
    let volume_mm3 = count as f64 * voxel_mm3;
    let area = face_area_mm2(exposed_faces(mask, label_id), spacing);

    Ok(OrganFeatureSet {
        organ,
        label_id,
        voxel_count: count,
        volume_cm3: volume_mm3 / 1000.0,
        surface_area_mm2: area,
        sphericity: sphericity(volume_mm3, area),
        bbox_mm: core::array::from_fn(|a| (hi[a] - lo[a] + 1) as f64 * spacing[a]),
        intensity_mean: mean,
        intensity_std: std,
        intensity_min: min,
        intensity_max: max,
        intensity_entropy: entropy,
    })
}

/// Looks the organ up by its label-table name.
pub fn compute_organ(
    volume: &VoxelVolume,
    mask: &LabelMask,
    organ: &str,
) -> Result<OrganFeatureSet, RadiomicsError> {
    let id = mask
        .label_id(organ)
        .ok_or_else(|| RadiomicsError::OrganAbsent(String::from(organ)))?;
    compute_features(volume, mask, id)
}

/// Left over right volume.
pub fn paired_ratio(
    left: &OrganFeatureSet,
    right: &OrganFeatureSet,
) -> Result<LateralityRatio, RadiomicsError> {
    volume_ratio(left.volume_cm3, right.volume_cm3)
}

pub fn volume_ratio(left_cm3: f64, right_cm3: f64) -> Result<LateralityRatio, RadiomicsError> {
    if !(left_cm3 > 0.0 && right_cm3 > 0.0) {
        return Err(RadiomicsError::ZeroVolume);
    }
    Ok(LateralityRatio {
        left_volume_cm3: left_cm3,
        right_volume_cm3: right_cm3,
        ratio: left_cm3 / right_cm3,
    })
}
