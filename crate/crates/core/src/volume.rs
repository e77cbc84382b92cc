//! Dense multi-channel volumes, boolean voxel fields, label atlases and
//! quantile-based intensity normalization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UadError};

/// A dense 3D multi-channel scalar field.
///
/// Data are stored voxel-major then channel: the value of channel `c` at
/// voxel `(x, y, z)` lives at `((z * ny + y) * nx + x) * channels + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    channels: usize,
    voxel_size: [f64; 3],
    data: Vec<f64>,
}

impl Volume {
    pub fn new(
        dims: [usize; 3],
        channels: usize,
        voxel_size: [f64; 3],
        data: Vec<f64>,
    ) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(UadError::InvalidVolume(format!("zero dimension in {dims:?}")));
        }
        if channels == 0 {
            return Err(UadError::InvalidVolume("zero channels".into()));
        }
        if voxel_size.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(UadError::InvalidVolume(format!(
                "voxel sizes must be positive, got {voxel_size:?}"
            )));
        }
        let expected = dims[0] * dims[1] * dims[2] * channels;
        if data.len() != expected {
            return Err(UadError::InvalidVolume(format!(
                "data length {} does not match {dims:?} x {channels} = {expected}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(UadError::InvalidVolume(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            dims,
            channels,
            voxel_size,
            data,
        })
    }

    /// A volume filled with `value`, unit voxel size.
    pub fn filled(dims: [usize; 3], channels: usize, value: f64) -> Result<Self> {
        let n = dims.iter().product::<usize>() * channels;
        Self::new(dims, channels, [1.0; 3], vec![value; n])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        self.voxel_size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn n_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    #[inline]
    pub fn voxel_index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize, c: usize) -> f64 {
        self.data[self.voxel_index(x, y, z) * self.channels + c]
    }

    /// Channel values of one voxel.
    pub fn voxel(&self, x: usize, y: usize, z: usize) -> &[f64] {
        let i = self.voxel_index(x, y, z) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Applies `f(channel, value)` to every element, keeping the geometry.
    pub fn map_values(&self, f: impl Fn(usize, f64) -> f64) -> Result<Self> {
        let ch = self.channels;
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| f(i % ch, v))
            .collect();
        Self::new(self.dims, self.channels, self.voxel_size, data)
    }

    /// All values of one channel in voxel order.
    pub fn channel_values(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(c).step_by(self.channels).copied()
    }
}

/// A boolean field over a voxel grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    dims: [usize; 3],
    data: Vec<bool>,
}

impl Mask {
    pub fn new(dims: [usize; 3], data: Vec<bool>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(UadError::ShapeMismatch(format!(
                "mask of length {} for dims {dims:?}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn empty(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![false; dims.iter().product()],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    /// Voxel-wise conjunction; dims must agree.
    pub fn and(&self, other: &Mask) -> Result<Mask> {
        if self.dims != other.dims {
            return Err(UadError::ShapeMismatch(format!(
                "mask dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect();
        Ok(Mask {
            dims: self.dims,
            data,
        })
    }

    /// Coordinates of the set voxels in index order.
    pub fn coords(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let [nx, ny, _] = self.dims;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| [i % nx, (i / nx) % ny, i / (nx * ny)])
    }
}

/// Integer region labels over a voxel grid with region names.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelAtlas {
    dims: [usize; 3],
    labels: Vec<u32>,
    names: BTreeMap<u32, String>,
}

impl LabelAtlas {
    pub fn new(dims: [usize; 3], labels: Vec<u32>, names: BTreeMap<u32, String>) -> Result<Self> {
        if labels.len() != dims.iter().product::<usize>() {
            return Err(UadError::ShapeMismatch(format!(
                "atlas of length {} for dims {dims:?}",
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l != 0 && !names.contains_key(&l)) {
            return Err(UadError::InvalidParameter(format!("atlas label {l} has no name")));
        }
        Ok(Self { dims, labels, names })
    }

    /// Builds an atlas from a single-channel volume of non-negative integers.
    pub fn from_volume(v: &Volume, names: BTreeMap<u32, String>) -> Result<Self> {
        if v.channels() != 1 {
            return Err(UadError::ShapeMismatch(format!(
                "atlas volume must have 1 channel, has {}",
                v.channels()
            )));
        }
        let labels = v
            .data()
            .iter()
            .map(|&x| {
                if x >= 0.0 && x.fract() == 0.0 && x <= u32::MAX as f64 {
                    Ok(x as u32)
                } else {
                    Err(UadError::InvalidParameter(format!(
                        "atlas value {x} is not a label"
                    )))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(v.dims(), labels, names)
    }

    pub fn to_volume(&self) -> Volume {
        let data = self.labels.iter().map(|&l| l as f64).collect();
        Volume::new(self.dims, 1, [1.0; 3], data).expect("atlas dims are valid")
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn names(&self) -> &BTreeMap<u32, String> {
        &self.names
    }
}

/// Parses a two-column `id<TAB>name` region table. Blank lines and lines
/// starting with `#` are skipped, as is a leading `id` header row.
pub fn parse_names_tsv(text: &str) -> Result<BTreeMap<u32, String>> {
    let mut names = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.splitn(2, '\t');
        let id = cols.next().unwrap_or("").trim();
        let name = cols.next().map(str::trim).unwrap_or("");
        if lineno == 0 && id.eq_ignore_ascii_case("id") {
            continue;
        }
        let id: u32 = id
            .parse()
            .map_err(|_| UadError::Parse(format!("line {}: bad label id {id:?}", lineno + 1)))?;
        if name.is_empty() {
            return Err(UadError::Parse(format!("line {}: missing region name", lineno + 1)));
        }
        names.insert(id, name.to_string());
    }
    Ok(names)
}

pub fn format_names_tsv(names: &BTreeMap<u32, String>) -> String {
    let mut out = String::from("id\tname\n");
    for (id, name) in names {
        out.push_str(&format!("{id}\t{name}\n"));
    }
    out
}

/// Linear-interpolation quantile of an ascending-sorted slice.
///
/// Uses the `(n - 1) * q` order-statistic position, interpolating between
/// neighbours.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Linear-interpolation quantile of unsorted data. Returns `None` when empty.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    Some(quantile_sorted(&v, q))
}

/// Per-channel 1% and 99% intensity quantiles of the training population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub q01: Vec<f64>,
    pub q99: Vec<f64>,
}

impl NormalizationStats {
    pub fn channels(&self) -> usize {
        self.q01.len()
    }
}

/// Fits normalization quantiles on the pooled voxels of all training volumes.
pub fn fit_normalization(train: &[Volume]) -> Result<NormalizationStats> {
    let first = train
        .first()
        .ok_or_else(|| UadError::InvalidParameter("no training volumes".into()))?;
    let ch = first.channels();
    if let Some(v) = train.iter().find(|v| v.channels() != ch) {
        return Err(UadError::ShapeMismatch(format!(
            "channel count {} differs from {ch}",
            v.channels()
        )));
    }
    let mut q01 = Vec::with_capacity(ch);
    let mut q99 = Vec::with_capacity(ch);
    for c in 0..ch {
        let mut pooled: Vec<f64> = train.iter().flat_map(|v| v.channel_values(c)).collect();
        pooled.sort_unstable_by(f64::total_cmp);
        let lo = quantile_sorted(&pooled, 0.01);
        let hi = quantile_sorted(&pooled, 0.99);
        if hi <= lo {
            return Err(UadError::DegenerateChannel { channel: c, value: lo });
        }
        q01.push(lo);
        q99.push(hi);
    }
    Ok(NormalizationStats { q01, q99 })
}

/// Maps every channel through `x -> (x - q01) / (q99 - q01)`, without clipping.
pub fn normalize(v: &Volume, stats: &NormalizationStats) -> Result<Volume> {
    if stats.channels() != v.channels() {
        return Err(UadError::ShapeMismatch(format!(
            "stats have {} channels, volume has {}",
            stats.channels(),
            v.channels()
        )));
    }
    v.map_values(|c, x| (x - stats.q01[c]) / (stats.q99[c] - stats.q01[c]))
}

/// Voxels where any channel exceeds `eps` in absolute value.
pub fn brain_mask(v: &Volume, eps: f64) -> Mask {
    let data = v
        .data()
        .chunks_exact(v.channels())
        .map(|vox| vox.iter().any(|x| x.abs() > eps))
        .collect();
    Mask {
        dims: v.dims(),
        data,
    }
}
