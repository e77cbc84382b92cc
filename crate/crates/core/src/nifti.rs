//! Read-only support for uncompressed single-file NIfTI-1 volumes.
//!
//! Only the header fields needed to carry pre-registered intensity maps are
//! interpreted: dimensions, voxel sizes, datatype, data offset and the
//! linear intensity scaling. Orientation is ignored.

use crate::error::{Result, UadError};
use crate::volume::Volume;

pub const HEADER_SIZE: usize = 348;

/// Supported voxel storage types.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    Int16,
    Int32,
    Float32,
    Float64,
}

impl Datatype {
    pub fn from_code(code: i16) -> Result<Self> {
        match code {
            4 => Ok(Datatype::Int16),
            8 => Ok(Datatype::Int32),
            16 => Ok(Datatype::Float32),
            64 => Ok(Datatype::Float64),
            other => Err(UadError::UnsupportedDatatype(other)),
        }
    }

    pub fn code(self) -> i16 {
        match self {
            Datatype::Int16 => 4,
            Datatype::Int32 => 8,
            Datatype::Float32 => 16,
            Datatype::Float64 => 64,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Datatype::Int16 => 2,
            Datatype::Int32 | Datatype::Float32 => 4,
            Datatype::Float64 => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Endian {
    Little,
    Big,
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl HeaderReader<'_> {
    fn array<const N: usize>(&self, off: usize) -> [u8; N] {
        self.bytes[off..off + N].try_into().unwrap()
    }

    fn i16(&self, off: usize) -> i16 {
        match self.endian {
            Endian::Little => i16::from_le_bytes(self.array(off)),
            Endian::Big => i16::from_be_bytes(self.array(off)),
        }
    }

    fn f32(&self, off: usize) -> f32 {
        match self.endian {
            Endian::Little => f32::from_le_bytes(self.array(off)),
            Endian::Big => f32::from_be_bytes(self.array(off)),
        }
    }
}

/// Header fields interpreted by [`read_nifti`].
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub dim: [i16; 8],
    pub datatype: Datatype,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub big_endian: bool,
}

pub fn parse_header(bytes: &[u8]) -> Result<NiftiHeader> {
    if bytes.len() < HEADER_SIZE {
        return Err(UadError::MalformedHeader(format!(
            "{} bytes is shorter than the {HEADER_SIZE}-byte header",
            bytes.len()
        )));
    }
    let raw: [u8; 4] = bytes[0..4].try_into().unwrap();
    let endian = if i32::from_le_bytes(raw) == HEADER_SIZE as i32 {
        Endian::Little
    } else if i32::from_be_bytes(raw) == HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(UadError::MalformedHeader(format!(
            "sizeof_hdr is {} (le) / {} (be), expected 348",
            i32::from_le_bytes(raw),
            i32::from_be_bytes(raw)
        )));
    };
    let r = HeaderReader { bytes, endian };
    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = r.i16(40 + 2 * i);
    }
    let mut pixdim = [0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = r.f32(76 + 4 * i);
    }
    Ok(NiftiHeader {
        dim,
        datatype: Datatype::from_code(r.i16(70))?,
        pixdim,
        vox_offset: r.f32(108),
        scl_slope: r.f32(112),
        scl_inter: r.f32(116),
        big_endian: endian == Endian::Big,
    })
}

/// Decodes a single-file NIfTI-1 image into a [`Volume`].
///
/// A 4D image (`dim[0] == 4`) becomes a multi-channel volume with
/// `dim[4]` channels. Values are scaled by `scl_slope`/`scl_inter` unless
/// the slope is zero.
pub fn read_nifti(bytes: &[u8]) -> Result<Volume> {
    let h = parse_header(bytes)?;
    let ndim = h.dim[0];
    if ndim != 3 && ndim != 4 {
        return Err(UadError::MalformedHeader(format!("dim[0] = {ndim}, expected 3 or 4")));
    }
    let positive = |i: usize| -> Result<usize> {
        if h.dim[i] > 0 {
            Ok(h.dim[i] as usize)
        } else {
            Err(UadError::MalformedHeader(format!("dim[{i}] = {}", h.dim[i])))
        }
    };
    let dims = [positive(1)?, positive(2)?, positive(3)?];
    let channels = if ndim == 4 { positive(4)? } else { 1 };
    let mut voxel_size = [0f64; 3];
    for (i, s) in voxel_size.iter_mut().enumerate() {
        let p = h.pixdim[i + 1].abs() as f64;
        if !(p > 0.0 && p.is_finite()) {
            return Err(UadError::MalformedHeader(format!("pixdim[{}] = {}", i + 1, h.pixdim[i + 1])));
        }
        *s = p;
    }

    let offset = if h.vox_offset.is_finite() && h.vox_offset >= HEADER_SIZE as f32 {
        h.vox_offset as usize
    } else {
        HEADER_SIZE
    };
    let n_vox = dims[0] * dims[1] * dims[2];
    let n = n_vox * channels;
    let expected = n * h.datatype.size();
    let body = bytes.get(offset..).unwrap_or(&[]);
    if body.len() < expected {
        return Err(UadError::Truncated {
            expected,
            actual: body.len(),
        });
    }

    let be = h.big_endian;
    let sz = h.datatype.size();
    let decode = |i: usize| -> f64 {
        let b = &body[i * sz..(i + 1) * sz];
        match (h.datatype, be) {
            (Datatype::Int16, false) => i16::from_le_bytes(b.try_into().unwrap()) as f64,
            (Datatype::Int16, true) => i16::from_be_bytes(b.try_into().unwrap()) as f64,
            (Datatype::Int32, false) => i32::from_le_bytes(b.try_into().unwrap()) as f64,
            (Datatype::Int32, true) => i32::from_be_bytes(b.try_into().unwrap()) as f64,
            (Datatype::Float32, false) => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            (Datatype::Float32, true) => f32::from_be_bytes(b.try_into().unwrap()) as f64,
            (Datatype::Float64, false) => f64::from_le_bytes(b.try_into().unwrap()),
            (Datatype::Float64, true) => f64::from_be_bytes(b.try_into().unwrap()),
        }
    };
    let (slope, inter) = if h.scl_slope != 0.0 && h.scl_slope.is_finite() {
        (h.scl_slope as f64, h.scl_inter as f64)
    } else {
        (1.0, 0.0)
    };

    // NIfTI stores the 4th dimension slowest; Volume interleaves channels.
    let mut data = vec![0f64; n];
    for c in 0..channels {
        for v in 0..n_vox {
            data[v * channels + c] = slope * decode(c * n_vox + v) + inter;
        }
    }
    Volume::new(dims, channels, voxel_size, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode(values: &[f32], dims: [i16; 4], slope: f32, inter: f32, big: bool) -> Vec<u8> {
        let mut h = vec![0u8; 352];
        let put = |h: &mut Vec<u8>, off: usize, b: &[u8]| h[off..off + b.len()].copy_from_slice(b);
        let i32b = |v: i32| if big { v.to_be_bytes() } else { v.to_le_bytes() };
        let i16b = |v: i16| if big { v.to_be_bytes() } else { v.to_le_bytes() };
        let f32b = |v: f32| if big { v.to_be_bytes() } else { v.to_le_bytes() };
        put(&mut h, 0, &i32b(348));
        let ndim = if dims[3] > 1 { 4 } else { 3 };
        put(&mut h, 40, &i16b(ndim));
        for (i, d) in dims.iter().enumerate() {
            put(&mut h, 42 + 2 * i, &i16b(*d));
        }
        put(&mut h, 70, &i16b(16));
        put(&mut h, 72, &i16b(32));
        for i in 0..4 {
            put(&mut h, 76 + 4 * i, &f32b(if i == 0 { 1.0 } else { 1.5 }));
        }
        put(&mut h, 108, &f32b(352.0));
        put(&mut h, 112, &f32b(slope));
        put(&mut h, 116, &f32b(inter));
        put(&mut h, 344, b"n+1\0");
        for v in values {
            h.extend_from_slice(&f32b(*v));
        }
        h
    }

    #[test]
    fn identity_when_slope_zero() {
        let vals: Vec<f32> = (0..8).map(|i| i as f32 * 0.25 - 1.0).collect();
        let v = read_nifti(&encode(&vals, [2, 2, 2, 1], 0.0, 5.0, false)).unwrap();
        assert_eq!(v.dims(), [2, 2, 2]);
        assert_eq!(v.channels(), 1);
        assert_eq!(v.voxel_size(), [1.5; 3]);
        let expect: Vec<f64> = vals.iter().map(|&x| x as f64).collect();
        assert_eq!(v.data(), expect.as_slice());
    }

    #[test]
    fn affine_scaling() {
        let vals: Vec<f32> = (0..8).map(|i| i as f32).collect();
        let v = read_nifti(&encode(&vals, [2, 2, 2, 1], 2.0, 1.0, false)).unwrap();
        for (a, b) in v.data().iter().zip(&vals) {
            assert_eq!(*a, 2.0 * *b as f64 + 1.0);
        }
    }

    #[test]
    fn minimal_header_without_offset() {
        let vals: Vec<f32> = (0..8).map(|i| i as f32).collect();
        let mut bytes = encode(&vals, [2, 2, 2, 1], 0.0, 0.0, false);
        bytes.drain(348..352);
        bytes[108..112].copy_from_slice(&0f32.to_le_bytes());
        let v = read_nifti(&bytes).unwrap();
        assert_eq!(v.data()[7], 7.0);
    }

    #[test]
    fn four_d_becomes_channels() {
        // channel-slow on disk
        let vals: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let v = read_nifti(&encode(&vals, [2, 2, 2, 2], 0.0, 0.0, false)).unwrap();
        assert_eq!(v.channels(), 2);
        assert_eq!(v.get(1, 0, 0, 0), 1.0);
        assert_eq!(v.get(1, 0, 0, 1), 9.0);
    }

    #[test]
    fn endian_twins_agree() {
        let vals: Vec<f32> = (0..24).map(|i| (i as f32).sin() * 100.0).collect();
        let le = read_nifti(&encode(&vals, [2, 3, 2, 2], 0.5, -3.0, false)).unwrap();
        let be = read_nifti(&encode(&vals, [2, 3, 2, 2], 0.5, -3.0, true)).unwrap();
        assert_eq!(le, be);
    }

    #[test]
    fn error_paths() {
        let vals = vec![0f32; 8];
        let mut bad = encode(&vals, [2, 2, 2, 1], 0.0, 0.0, false);
        bad[0..4].copy_from_slice(&100i32.to_le_bytes());
        assert!(matches!(read_nifti(&bad), Err(UadError::MalformedHeader(_))));

        let mut dt = encode(&vals, [2, 2, 2, 1], 0.0, 0.0, false);
        dt[70..72].copy_from_slice(&2i16.to_le_bytes());
        assert!(matches!(read_nifti(&dt), Err(UadError::UnsupportedDatatype(2))));

        let mut short = encode(&vals, [2, 2, 2, 1], 0.0, 0.0, false);
        short.truncate(352 + 20);
        match read_nifti(&short) {
            Err(UadError::Truncated { expected, actual }) => {
                assert_eq!(expected, 32);
                assert_eq!(actual, 20);
            }
            other => panic!("{other:?}"),
        }

        let mut nd = encode(&vals, [2, 2, 2, 1], 0.0, 0.0, false);
        nd[40..42].copy_from_slice(&5i16.to_le_bytes());
        assert!(read_nifti(&nd).is_err());
    }

    #[test]
    fn integer_datatypes() {
        let mut bytes = encode(&[], [2, 1, 1, 1], 0.0, 0.0, false);
        bytes[70..72].copy_from_slice(&4i16.to_le_bytes());
        bytes.extend_from_slice(&(-7i16).to_le_bytes());
        bytes.extend_from_slice(&300i16.to_le_bytes());
        let v = read_nifti(&bytes).unwrap();
        assert_eq!(v.data(), &[-7.0, 300.0]);
    }
}
