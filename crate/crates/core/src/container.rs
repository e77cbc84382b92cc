//! Binary containers: the `UADV` volume format and the `UADM` model family.
//!
//! All integers and floats are little-endian.
//!
//! `UADV` layout: magic, `u32` version, three `u32` dims, `u32` channels,
//! three `f64` voxel sizes, then `nx*ny*nz*channels` `f32` values in
//! voxel-major/channel-minor order.
//!
//! `UADM` layout: magic, `u32` version, `u32` model kind, then a
//! kind-specific payload written with [`ByteWriter`].

use crate::error::{Result, UadError};
use crate::volume::Volume;

pub const VOLUME_MAGIC: [u8; 4] = *b"UADV";
pub const MODEL_MAGIC: [u8; 4] = *b"UADM";
pub const VOLUME_VERSION: u32 = 1;
pub const MODEL_VERSION: u32 = 1;

const VOLUME_HEADER_LEN: usize = 4 + 4 + 12 + 4 + 24;

/// Model kinds stored in a `UADM` container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum ModelKind {
    Sae = 1,
    Ocsvm = 2,
    Mmst = 3,
}

impl ModelKind {
    fn from_u32(v: u32) -> Result<Self> {
        match v {
            1 => Ok(ModelKind::Sae),
            2 => Ok(ModelKind::Ocsvm),
            3 => Ok(ModelKind::Mmst),
            k => Err(UadError::Parse(format!("unknown model kind {k}"))),
        }
    }
}

#[derive(Debug, Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn usize(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("size fits in u32"));
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    /// Length-prefixed `f32` array.
    pub fn f32s(&mut self, vals: &[f64]) {
        self.usize(vals.len());
        for &v in vals {
            self.f32(v as f32);
        }
    }

    /// Length-prefixed `f64` array.
    pub fn f64s(&mut self, vals: &[f64]) {
        self.usize(vals.len());
        for &v in vals {
            self.f64(v);
        }
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }
}

pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(UadError::LengthMismatch(format!(
                "need {n} bytes at offset {}, only {} left",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4)?.try_into().unwrap();
        if found != expected {
            return Err(UadError::BadMagic { expected, found });
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| UadError::LengthMismatch("overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect())
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| UadError::LengthMismatch("overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(UadError::LengthMismatch(format!(
                "{} trailing bytes",
                self.remaining()
            )));
        }
        Ok(())
    }
}

/// Encodes a volume in the `UADV` container.
pub fn write_raw(v: &Volume) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(&VOLUME_MAGIC);
    w.u32(VOLUME_VERSION);
    for d in v.dims() {
        w.usize(d);
    }
    w.usize(v.channels());
    for s in v.voxel_size() {
        w.f64(s);
    }
    for &x in v.data() {
        w.f32(x as f32);
    }
    w.into_inner()
}

/// Decodes one `UADV` container from the front of `bytes`, returning the
/// volume and the number of bytes consumed.
pub fn read_raw_prefix(bytes: &[u8]) -> Result<(Volume, usize)> {
    let mut r = ByteReader::new(bytes);
    r.magic(VOLUME_MAGIC)?;
    let version = r.u32()?;
    if version != VOLUME_VERSION {
        return Err(UadError::VersionMismatch {
            expected: VOLUME_VERSION,
            found: version,
        });
    }
    let dims = [r.usize()?, r.usize()?, r.usize()?];
    let channels = r.usize()?;
    let voxel_size = [r.f64()?, r.f64()?, r.f64()?];
    let n = dims
        .iter()
        .try_fold(channels, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| UadError::LengthMismatch("dims overflow".into()))?;
    if r.remaining() < n * 4 {
        return Err(UadError::LengthMismatch(format!(
            "header announces {} data bytes, found {}",
            n * 4,
            r.remaining()
        )));
    }
    let raw = r.take(n * 4)?;
    let data = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok((Volume::new(dims, channels, voxel_size, data)?, VOLUME_HEADER_LEN + n * 4))
}

/// Decodes a complete `UADV` container; trailing bytes are an error.
pub fn read_raw(bytes: &[u8]) -> Result<Volume> {
    let (v, used) = read_raw_prefix(bytes)?;
    if used != bytes.len() {
        return Err(UadError::LengthMismatch(format!(
            "container holds {used} bytes, input has {}",
            bytes.len()
        )));
    }
    Ok(v)
}

pub fn model_header(kind: ModelKind) -> ByteWriter {
    let mut w = ByteWriter::new();
    w.bytes(&MODEL_MAGIC);
    w.u32(MODEL_VERSION);
    w.u32(kind as u32);
    w
}

/// Checks the `UADM` preamble and returns a reader positioned at the payload.
pub fn open_model(bytes: &[u8], kind: ModelKind) -> Result<ByteReader<'_>> {
    let mut r = ByteReader::new(bytes);
    r.magic(MODEL_MAGIC)?;
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(UadError::VersionMismatch {
            expected: MODEL_VERSION,
            found: version,
        });
    }
    let found = ModelKind::from_u32(r.u32()?)?;
    if found != kind {
        return Err(UadError::Parse(format!("expected a {kind:?} model, found {found:?}")));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn volume_strategy() -> impl Strategy<Value = Volume> {
        (1usize..5, 1usize..5, 1usize..5, 1usize..4).prop_flat_map(|(x, y, z, c)| {
            proptest::collection::vec(-1e6f32..1e6f32, x * y * z * c).prop_map(move |vals| {
                let data = vals.into_iter().map(f64::from).collect();
                Volume::new([x, y, z], c, [1.5, 1.5, 2.0], data).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn raw_round_trip_is_bit_exact(v in volume_strategy()) {
            let back = read_raw(&write_raw(&v)).unwrap();
            prop_assert_eq!(back.dims(), v.dims());
            prop_assert_eq!(back.channels(), v.channels());
            prop_assert_eq!(back.voxel_size(), v.voxel_size());
            for (a, b) in back.data().iter().zip(v.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn rejects_bad_magic_version_and_length() {
        let v = Volume::filled([2, 2, 2], 1, 1.0).unwrap();
        let good = write_raw(&v);

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(read_raw(&bad), Err(UadError::BadMagic { .. })));

        let mut ver = good.clone();
        ver[4] = 9;
        assert!(matches!(read_raw(&ver), Err(UadError::VersionMismatch { found: 9, .. })));

        assert!(matches!(read_raw(&good[..good.len() - 1]), Err(UadError::LengthMismatch(_))));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(read_raw(&long), Err(UadError::LengthMismatch(_))));
    }

    #[test]
    fn model_preamble_checks_kind() {
        let mut w = model_header(ModelKind::Ocsvm);
        w.f64s(&[1.0, 2.0]);
        let bytes = w.into_inner();
        let mut r = open_model(&bytes, ModelKind::Ocsvm).unwrap();
        assert_eq!(r.f64s().unwrap(), vec![1.0, 2.0]);
        r.finish().unwrap();
        assert!(open_model(&bytes, ModelKind::Sae).is_err());
    }
}
