//! Minimal NIfTI-1 single-file (`.nii` / `.nii.gz`) reader and writer.
//!
//! Supports 3D images (a 4th dimension of extent 1 is accepted) with
//! datatypes uint8, int16 and float32. Reads either byte order; always
//! writes little-endian with `vox_offset = 352` and an empty extension block.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::VolumeError;

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_FLOAT32: i16 = 16;

#[derive(Debug, Clone, PartialEq)]
pub enum NiftiData {
    U8(Vec<u8>),
    I16(Vec<i16>),
    F32(Vec<f32>),
}

impl NiftiData {
    fn datatype(&self) -> (i16, i16) {
        match self {
            NiftiData::U8(_) => (DT_UINT8, 8),
            NiftiData::I16(_) => (DT_INT16, 16),
            NiftiData::F32(_) => (DT_FLOAT32, 32),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            NiftiData::U8(v) => v.len(),
            NiftiData::I16(v) => v.len(),
            NiftiData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NiftiImage {
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
    pub data: NiftiData,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub descrip: String,
}

impl NiftiImage {
    /// Stored values with `scl_slope`/`scl_inter` applied. A slope of 0
    /// means "no scaling" per the format.
    pub fn scaled_values(&self) -> Vec<f32> {
        let (slope, inter) = if self.scl_slope == 0.0 || !self.scl_slope.is_finite() {
            (1.0, 0.0)
        } else {
            (self.scl_slope, self.scl_inter)
        };
        let apply = |v: f32| if slope == 1.0 && inter == 0.0 { v } else { v * slope + inter };
        match &self.data {
            NiftiData::U8(v) => v.iter().map(|&x| apply(x as f32)).collect(),
            NiftiData::I16(v) => v.iter().map(|&x| apply(x as f32)).collect(),
            NiftiData::F32(v) => v.iter().map(|&x| apply(x)).collect(),
        }
    }
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

struct Reader<'a> {
    bytes: &'a [u8],
    swap: bool,
}

impl Reader<'_> {
    fn i16(&self, off: usize) -> i16 {
        let b = [self.bytes[off], self.bytes[off + 1]];
        if self.swap {
            i16::from_be_bytes(b)
        } else {
            i16::from_le_bytes(b)
        }
    }

    fn f32(&self, off: usize) -> f32 {
        let b: [u8; 4] = self.bytes[off..off + 4].try_into().unwrap();
        if self.swap {
            f32::from_be_bytes(b)
        } else {
            f32::from_le_bytes(b)
        }
    }
}

pub fn read(path: &Path) -> Result<NiftiImage, VolumeError> {
    let raw = fs::read(path).map_err(|e| VolumeError::Io(path.display().to_string(), e))?;
    let bytes = if is_gzip(&raw) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| VolumeError::Corrupt(format!("gzip: {e}")))?;
        out
    } else {
        raw
    };
    parse(&bytes)
}

pub fn parse(bytes: &[u8]) -> Result<NiftiImage, VolumeError> {
    if bytes.len() < HEADER_SIZE {
        return Err(VolumeError::Unsupported(format!(
            "file too small for a NIfTI-1 header ({} bytes)",
            bytes.len()
        )));
    }
    let size_le = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let size_be = i32::from_be_bytes(bytes[0..4].try_into().unwrap());
    let swap = match (size_le, size_be) {
        (348, _) => false,
        (_, 348) => true,
        _ => return Err(VolumeError::Unsupported("not a NIfTI-1 header".into())),
    };
    if &bytes[344..347] != b"n+1" {
        return Err(VolumeError::Unsupported(
            "only single-file NIfTI-1 (magic n+1) is supported".into(),
        ));
    }
    let r = Reader { bytes, swap };

    let ndim = r.i16(40);
    if !(3..=7).contains(&ndim) {
        return Err(VolumeError::Unsupported(format!("dim[0] = {ndim}")));
    }
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        let v = r.i16(42 + 2 * i);
        if v < 1 {
            return Err(VolumeError::InvalidHeader(format!("dim[{}] = {v}", i + 1)));
        }
        *d = v as usize;
    }
    for i in 3..ndim as usize {
        let v = r.i16(42 + 2 * i);
        if v > 1 {
            return Err(VolumeError::Unsupported(format!(
                "multi-volume images (dim[{}] = {v})",
                i + 1
            )));
        }
    }
    let mut spacing = [0f32; 3];
    for (i, s) in spacing.iter_mut().enumerate() {
        *s = r.f32(80 + 4 * i).abs();
    }
    let datatype = r.i16(70);
    let vox_offset = r.f32(108);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32) {
        return Err(VolumeError::InvalidHeader(format!("vox_offset = {vox_offset}")));
    }
    let offset = vox_offset as usize;
    let scl_slope = r.f32(112);
    let scl_inter = r.f32(116);
    let descrip = {
        let d = &bytes[148..228];
        let end = d.iter().position(|&b| b == 0).unwrap_or(d.len());
        String::from_utf8_lossy(&d[..end]).into_owned()
    };

    let n = dims[0] * dims[1] * dims[2];
    let payload = bytes.get(offset..).unwrap_or(&[]);
    let width = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => {
            return Err(VolumeError::Unsupported(format!("NIfTI datatype code {other}")));
        }
    };
    if payload.len() < n * width {
        return Err(VolumeError::SizeMismatch {
            expected: n,
            found: payload.len() / width,
        });
    }
    let payload = &payload[..n * width];
    let data = match datatype {
        DT_UINT8 => NiftiData::U8(payload.to_vec()),
        DT_INT16 => NiftiData::I16(
            payload
                .chunks_exact(2)
                .map(|c| {
                    let b = [c[0], c[1]];
                    if swap {
                        i16::from_be_bytes(b)
                    } else {
                        i16::from_le_bytes(b)
                    }
                })
                .collect(),
        ),
        _ => NiftiData::F32(
            payload
                .chunks_exact(4)
                .map(|c| {
                    let b = [c[0], c[1], c[2], c[3]];
                    if swap {
                        f32::from_be_bytes(b)
                    } else {
                        f32::from_le_bytes(b)
                    }
                })
                .collect(),
        ),
    };

    Ok(NiftiImage {
        dims,
        spacing,
        data,
        scl_slope,
        scl_inter,
        descrip,
    })
}

pub fn encode(image: &NiftiImage) -> Vec<u8> {
    let mut h = vec![0u8; VOX_OFFSET];
    let put_i16 = |h: &mut [u8], off: usize, v: i16| h[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut [u8], off: usize, v: f32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());

    h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    h[38] = b'r';
    put_i16(&mut h, 40, 3);
    for i in 0..3 {
        put_i16(&mut h, 42 + 2 * i, image.dims[i] as i16);
    }
    for i in 3..7 {
        put_i16(&mut h, 42 + 2 * i, 1);
    }
    let (code, bitpix) = image.data.datatype();
    put_i16(&mut h, 70, code);
    put_i16(&mut h, 72, bitpix);
    put_f32(&mut h, 76, 1.0);
    for i in 0..3 {
        put_f32(&mut h, 80 + 4 * i, image.spacing[i]);
    }
    put_f32(&mut h, 108, VOX_OFFSET as f32);
    put_f32(&mut h, 112, image.scl_slope);
    put_f32(&mut h, 116, image.scl_inter);
    // xyzt_units: mm
    h[123] = 2;
    let desc = image.descrip.as_bytes();
    let n = desc.len().min(79);
    h[148..148 + n].copy_from_slice(&desc[..n]);
    h[344..348].copy_from_slice(b"n+1\0");

    let mut out = h;
    match &image.data {
        NiftiData::U8(v) => out.extend_from_slice(v),
        NiftiData::I16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        NiftiData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

pub fn write(path: &Path, image: &NiftiImage) -> Result<(), VolumeError> {
    let bytes = encode(image);
    let io_err = |e| VolumeError::Io(path.display().to_string(), e);
    if path.to_string_lossy().ends_with(".gz") {
        let file = fs::File::create(path).map_err(io_err)?;
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(&bytes).map_err(io_err)?;
        enc.finish().map_err(io_err)?;
    } else {
        fs::write(path, bytes).map_err(io_err)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> NiftiImage {
        NiftiImage {
            dims: [2, 3, 4],
            spacing: [0.5, 0.75, 2.0],
            data: NiftiData::I16((0..24).map(|v| v as i16 - 12).collect()),
            scl_slope: 1.0,
            scl_inter: 0.0,
            descrip: "brain tumor".into(),
        }
    }

    #[test]
    fn encode_parse_round_trip() {
        let img = sample();
        assert_eq!(parse(&encode(&img)).unwrap(), img);
    }

    #[test]
    fn big_endian_header_is_read() {
        let img = NiftiImage {
            data: NiftiData::F32(vec![1.5; 24]),
            ..sample()
        };
        let le = encode(&img);
        // Rewrite the header and payload fields we read in big-endian order.
        let mut be = le.clone();
        be[0..4].copy_from_slice(&348i32.to_be_bytes());
        for off in (40..56).step_by(2).chain([70, 72]) {
            be.swap(off, off + 1);
        }
        for off in (76..120).step_by(4) {
            be[off..off + 4].reverse();
        }
        for c in be[352..].chunks_exact_mut(4) {
            c.reverse();
        }
        let back = parse(&be).unwrap();
        assert_eq!(back.dims, img.dims);
        assert_eq!(back.spacing, img.spacing);
        assert_eq!(back.data, img.data);
    }

    #[test]
    fn scaling_applied_to_stored_values() {
        let img = NiftiImage {
            data: NiftiData::U8(vec![0, 10]),
            dims: [2, 1, 1],
            scl_slope: 2.0,
            scl_inter: -1.0,
            ..sample()
        };
        assert_eq!(img.scaled_values(), vec![-1.0, 19.0]);
        let zero_slope = NiftiImage {
            scl_slope: 0.0,
            ..img
        };
        assert_eq!(zero_slope.scaled_values(), vec![0.0, 10.0]);
    }

    #[test]
    fn truncated_payload_is_size_mismatch() {
        let img = NiftiImage {
            dims: [4, 4, 4],
            data: NiftiData::F32(vec![0.0; 64]),
            ..sample()
        };
        let bytes = encode(&img);
        let err = parse(&bytes[..bytes.len() - 4]).unwrap_err();
        assert!(matches!(
            err,
            VolumeError::SizeMismatch {
                expected: 64,
                found: 63
            }
        ));
    }

    #[test]
    fn unsupported_datatype() {
        let mut bytes = encode(&sample());
        bytes[70..72].copy_from_slice(&64i16.to_le_bytes());
        assert!(matches!(parse(&bytes), Err(VolumeError::Unsupported(_))));
    }
}
