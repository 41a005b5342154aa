//! Single-file, uncompressed NIfTI-1 subset: uint8, int16 and float32 payloads.
//!
//! Orientation (qform/sform) is ignored. Both byte orders are accepted on
//! read; files are always written little-endian.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{Dtype, ImagingError, LabelMask, Modality, VoxelVolume};

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
pub const MIN_VOX_OFFSET: usize = 352;
pub const MAGIC: &[u8; 4] = b"n+1\0";

const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_XYZT_UNITS: usize = 123;
const OFF_MAGIC: usize = 344;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
/// NIFTI_UNITS_MM
const UNITS_MM: u8 = 2;

/// What the caller expects the file to hold.
#[derive(Debug, Clone)]
pub enum ParseAs {
    Image(Modality),
    /// Integer label map; the label table travels separately.
    Mask(BTreeMap<u32, String>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Parsed {
    Volume(VoxelVolume),
    Mask(LabelMask),
}

#[derive(Clone, Copy)]
struct Reader<'a> {
    bytes: &'a [u8],
    big_endian: bool,
}

impl Reader<'_> {
    fn i16(&self, at: usize) -> i16 {
        let b = [self.bytes[at], self.bytes[at + 1]];
        if self.big_endian {
            i16::from_be_bytes(b)
        } else {
            i16::from_le_bytes(b)
        }
    }

    fn word(&self, at: usize) -> [u8; 4] {
        let mut b = [0u8; 4];
        b.copy_from_slice(&self.bytes[at..at + 4]);
        if self.big_endian {
            b.reverse();
        }
        b
    }

    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.word(at))
    }
}

struct Header {
    dims: [usize; 3],
    spacing: [f64; 3],
    dtype: Dtype,
    vox_offset: usize,
    slope: f32,
    inter: f32,
}

fn read_header(reader: Reader<'_>) -> Result<Header, ImagingError> {
    let bytes = reader.bytes;
    if &bytes[OFF_MAGIC..OFF_MAGIC + 4] != MAGIC {
        return Err(ImagingError::BadMagic);
    }

    let ndim = reader.i16(OFF_DIM);
    if !(1..=7).contains(&ndim) {
        return Err(ImagingError::MalformedHeader(alloc::format!("dim[0] = {ndim}")));
    }
    let mut dims = [1usize; 3];
    let mut raw_dims = [1i64; 3];
    for axis in 0..(ndim as usize) {
        let d = reader.i16(OFF_DIM + 2 * (axis + 1)) as i64;
        if axis < 3 {
            raw_dims[axis] = d;
        } else if d > 1 {
            return Err(ImagingError::MalformedHeader(String::from(
                "only 3-D volumes are supported",
            )));
        }
    }
    if raw_dims.iter().any(|&d| d < 1) {
        return Err(ImagingError::InvalidDims(raw_dims));
    }
    for (d, raw) in dims.iter_mut().zip(raw_dims) {
        *d = raw as usize;
    }

    let dtype = match reader.i16(OFF_DATATYPE) {
        DT_UINT8 => Dtype::U8,
        DT_INT16 => Dtype::I16,
        DT_FLOAT32 => Dtype::F32,
        other => return Err(ImagingError::UnsupportedDatatype(other)),
    };

    let mut spacing = [1.0f64; 3];
    for (axis, s) in spacing.iter_mut().enumerate() {
        let p = libm::fabs(reader.f32(OFF_PIXDIM + 4 * (axis + 1)) as f64);
        if p == 0.0 || !p.is_finite() {
            return Err(ImagingError::NonPositiveSpacing);
        }
        *s = p;
    }

    let vox = reader.f32(OFF_VOX_OFFSET);
    let vox_offset = if vox.is_finite() && vox >= MIN_VOX_OFFSET as f32 {
        vox as usize
    } else {
        MIN_VOX_OFFSET
    };

    Ok(Header {
        dims,
        spacing,
        dtype,
        vox_offset,
        slope: reader.f32(OFF_SCL_SLOPE),
        inter: reader.f32(OFF_SCL_INTER),
    })
}

/// Parse an in-memory `.nii` file.
///
/// Images get `scl_slope`/`scl_inter` applied when the slope is non-zero.
/// Masks are read as raw integers; scaling is ignored for categorical data.
pub fn parse_nifti(bytes: &[u8], target: ParseAs) -> Result<Parsed, ImagingError> {
    if bytes.len() < HEADER_SIZE {
        return Err(ImagingError::BadMagic);
    }
    let size_le = i32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let size_be = i32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let big_endian = match (size_le, size_be) {
        (348, _) => false,
        (_, 348) => true,
        _ => return Err(ImagingError::BadMagic),
    };
    let reader = Reader { bytes, big_endian };
    let header = read_header(reader)?;

    let count = header.dims[0] * header.dims[1] * header.dims[2];
    let need = count * header.dtype.size();
    let available = bytes.len().saturating_sub(header.vox_offset);
    if available < need {
        return Err(ImagingError::TruncatedData {
            expected: need,
            actual: available,
        });
    }
    let payload = &bytes[header.vox_offset..header.vox_offset + need];
    let payload_reader = Reader {
        bytes: payload,
        big_endian,
    };

    match target {
        ParseAs::Image(modality) => {
            let scale = header.slope != 0.0 && header.slope.is_finite();
            let data = (0..count)
                .map(|i| {
                    let v = match header.dtype {
                        Dtype::U8 => payload[i] as f32,
                        Dtype::I16 => payload_reader.i16(2 * i) as f32,
                        Dtype::F32 => payload_reader.f32(4 * i),
                    };
                    if scale {
                        v * header.slope + header.inter
                    } else {
                        v
                    }
                })
                .collect();
            VoxelVolume::new(header.dims, header.spacing, modality, data).map(Parsed::Volume)
        }
        ParseAs::Mask(table) => {
            let labels = match header.dtype {
                Dtype::U8 => payload.iter().map(|&b| b as u32).collect(),
                Dtype::I16 => (0..count)
                    .map(|i| {
                        let v = payload_reader.i16(2 * i);
                        u32::try_from(v).map_err(|_| ImagingError::NegativeLabel(v as i64))
                    })
                    .collect::<Result<Vec<_>, _>>()?,
                Dtype::F32 => return Err(ImagingError::MaskDtypeNotInteger),
            };
            LabelMask::new(header.dims, header.spacing, labels, table).map(Parsed::Mask)
        }
    }
}

fn header_bytes(dims: [usize; 3], spacing: [f64; 3], dtype: Dtype) -> Result<Vec<u8>, ImagingError> {
    let mut out = vec![0u8; MIN_VOX_OFFSET];
    out[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    let put_i16 = |out: &mut [u8], at: usize, v: i16| out[at..at + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |out: &mut [u8], at: usize, v: f32| out[at..at + 4].copy_from_slice(&v.to_le_bytes());

    put_i16(&mut out, OFF_DIM, 3);
    for (axis, &d) in dims.iter().enumerate() {
        let d = i16::try_from(d).map_err(|_| ImagingError::InvalidDims(dims.map(|d| d as i64)))?;
        put_i16(&mut out, OFF_DIM + 2 * (axis + 1), d);
    }
    for axis in 4..8 {
        put_i16(&mut out, OFF_DIM + 2 * axis, 1);
    }
    let (code, bits) = match dtype {
        Dtype::U8 => (DT_UINT8, 8),
        Dtype::I16 => (DT_INT16, 16),
        Dtype::F32 => (DT_FLOAT32, 32),
    };
    put_i16(&mut out, OFF_DATATYPE, code);
    put_i16(&mut out, OFF_BITPIX, bits);
    put_f32(&mut out, OFF_PIXDIM, 1.0);
    for (axis, &s) in spacing.iter().enumerate() {
        put_f32(&mut out, OFF_PIXDIM + 4 * (axis + 1), s as f32);
    }
    put_f32(&mut out, OFF_VOX_OFFSET, MIN_VOX_OFFSET as f32);
    put_f32(&mut out, OFF_SCL_SLOPE, 1.0);
    out[OFF_XYZT_UNITS] = UNITS_MM;
    out[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(MAGIC);
    Ok(out)
}

/// Spacing is stored as float32 in the header, so it round-trips only for
/// values representable in single precision.
pub fn write_nifti_volume(volume: &VoxelVolume, dtype: Dtype) -> Result<Vec<u8>, ImagingError> {
    let mut out = header_bytes(volume.dims(), volume.spacing(), dtype)?;
    out.reserve(volume.data().len() * dtype.size());
    for &v in volume.data() {
        dtype.check(v)?;
        dtype.encode_le(v, &mut out);
    }
    Ok(out)
}

pub fn write_nifti_mask(mask: &LabelMask, dtype: Dtype) -> Result<Vec<u8>, ImagingError> {
    if !dtype.is_integer() {
        return Err(ImagingError::MaskDtypeNotInteger);
    }
    let mut out = header_bytes(mask.dims(), mask.spacing(), dtype)?;
    for &l in mask.labels() {
        let v = l as f32;
        if l > 32767 {
            return Err(ImagingError::NotRepresentable(v));
        }
        dtype.check(v)?;
        dtype.encode_le(v, &mut out);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(dim: [i16; 4], datatype: i16, payload_len: usize) -> Vec<u8> {
        let mut b = vec![0u8; MIN_VOX_OFFSET + payload_len];
        b[0..4].copy_from_slice(&348i32.to_le_bytes());
        for (i, d) in dim.iter().enumerate() {
            b[OFF_DIM + 2 * i..OFF_DIM + 2 * i + 2].copy_from_slice(&d.to_le_bytes());
        }
        b[OFF_DATATYPE..OFF_DATATYPE + 2].copy_from_slice(&datatype.to_le_bytes());
        for i in 0..4 {
            b[OFF_PIXDIM + 4 * i..OFF_PIXDIM + 4 * i + 4].copy_from_slice(&1.0f32.to_le_bytes());
        }
        b[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(MAGIC);
        b
    }

    #[test]
    fn minimal_float_volume() {
        let bytes = minimal([3, 2, 2, 2], DT_FLOAT32, 32);
        let Parsed::Volume(v) = parse_nifti(&bytes, ParseAs::Image(Modality::CT)).unwrap() else {
            panic!("expected volume");
        };
        assert_eq!(v.dims(), [2, 2, 2]);
        assert_eq!(v.spacing(), [1.0, 1.0, 1.0]);
        assert!(v.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = minimal([3, 2, 2, 2], DT_FLOAT32, 32);
        bytes[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(b"nix0");
        assert_eq!(
            parse_nifti(&bytes, ParseAs::Image(Modality::CT)),
            Err(ImagingError::BadMagic)
        );
        assert_eq!(
            parse_nifti(b"not an image at all", ParseAs::Image(Modality::CT)),
            Err(ImagingError::BadMagic)
        );
    }

    #[test]
    fn truncated_uint8() {
        let bytes = minimal([3, 4, 4, 4], DT_UINT8, 63);
        assert_eq!(
            parse_nifti(&bytes, ParseAs::Image(Modality::CT)),
            Err(ImagingError::TruncatedData { expected: 64, actual: 63 })
        );
    }

    #[test]
    fn unsupported_datatype() {
        let bytes = minimal([3, 1, 1, 1], 64, 8);
        assert_eq!(
            parse_nifti(&bytes, ParseAs::Image(Modality::CT)),
            Err(ImagingError::UnsupportedDatatype(64))
        );
    }

    #[test]
    fn spacing_sign_and_zero() {
        let mut bytes = minimal([3, 1, 1, 1], DT_UINT8, 1);
        bytes[OFF_PIXDIM + 4..OFF_PIXDIM + 8].copy_from_slice(&(-2.5f32).to_le_bytes());
        let Parsed::Volume(v) = parse_nifti(&bytes, ParseAs::Image(Modality::CT)).unwrap() else {
            panic!()
        };
        assert_eq!(v.spacing(), [2.5, 1.0, 1.0]);

        bytes[OFF_PIXDIM + 8..OFF_PIXDIM + 12].copy_from_slice(&0.0f32.to_le_bytes());
        assert_eq!(
            parse_nifti(&bytes, ParseAs::Image(Modality::CT)),
            Err(ImagingError::NonPositiveSpacing)
        );
    }

    #[test]
    fn scaling_applies_to_images_only() {
        let mut bytes = minimal([3, 1, 1, 1], DT_INT16, 2);
        bytes[OFF_SCL_SLOPE..OFF_SCL_SLOPE + 4].copy_from_slice(&2.0f32.to_le_bytes());
        bytes[OFF_SCL_INTER..OFF_SCL_INTER + 4].copy_from_slice(&(-1024.0f32).to_le_bytes());
        bytes[MIN_VOX_OFFSET..].copy_from_slice(&600i16.to_le_bytes());
        let Parsed::Volume(v) = parse_nifti(&bytes, ParseAs::Image(Modality::CT)).unwrap() else {
            panic!()
        };
        assert_eq!(v.data(), &[176.0]);

        let mut table = BTreeMap::new();
        table.insert(600, String::from("liver"));
        let Parsed::Mask(m) = parse_nifti(&bytes, ParseAs::Mask(table)).unwrap() else {
            panic!()
        };
        assert_eq!(m.labels(), &[600]);
    }

    #[test]
    fn float_mask_rejected() {
        let bytes = minimal([3, 1, 1, 1], DT_FLOAT32, 4);
        assert_eq!(
            parse_nifti(&bytes, ParseAs::Mask(BTreeMap::new())),
            Err(ImagingError::MaskDtypeNotInteger)
        );
    }

    #[test]
    fn big_endian_header() {
        let mut b = vec![0u8; MIN_VOX_OFFSET + 2];
        b[0..4].copy_from_slice(&348i32.to_be_bytes());
        for (i, d) in [3i16, 1, 1, 1].iter().enumerate() {
            b[OFF_DIM + 2 * i..OFF_DIM + 2 * i + 2].copy_from_slice(&d.to_be_bytes());
        }
        b[OFF_DATATYPE..OFF_DATATYPE + 2].copy_from_slice(&DT_INT16.to_be_bytes());
        for i in 0..4 {
            b[OFF_PIXDIM + 4 * i..OFF_PIXDIM + 4 * i + 4].copy_from_slice(&0.5f32.to_be_bytes());
        }
        b[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(MAGIC);
        b[MIN_VOX_OFFSET..].copy_from_slice(&(-7i16).to_be_bytes());
        let Parsed::Volume(v) = parse_nifti(&b, ParseAs::Image(Modality::CT)).unwrap() else {
            panic!()
        };
        assert_eq!(v.spacing(), [0.5; 3]);
        assert_eq!(v.data(), &[-7.0]);
    }

    #[test]
    fn write_then_read() {
        let vol = VoxelVolume::new([2, 1, 1], [0.5, 0.75, 2.0], Modality::CT, vec![-1000.0, 42.0]).unwrap();
        let bytes = write_nifti_volume(&vol, Dtype::I16).unwrap();
        assert_eq!(bytes.len(), MIN_VOX_OFFSET + 4);
        let Parsed::Volume(back) = parse_nifti(&bytes, ParseAs::Image(Modality::CT)).unwrap() else {
            panic!()
        };
        assert_eq!(back, vol);
        assert_eq!(
            write_nifti_volume(&vol, Dtype::U8),
            Err(ImagingError::NotRepresentable(-1000.0))
        );
    }
}
