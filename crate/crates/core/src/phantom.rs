//! Synthetic multi-channel phantoms with known anomalies.
//!
//! A normal phantom is an ellipsoidal foreground with an inner core of a
//! second tissue class, textured by Gaussian-filtered white noise. Channels
//! share part of their texture, so a contrast change with mixed signs across
//! channels is atypical of normal tissue. Anomalies add a per-channel offset
//! inside a sphere with a flat core and a cosine taper.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UadError};
use crate::eval::{Role, Sex, SubjectMeta};
use crate::seed::derive_seed;
use crate::volume::{LabelAtlas, Mask, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub voxel_size: [f64; 3],
    /// Foreground semi-axes as fractions of `dims`.
    pub semi_axes: [f64; 3],
    /// Inner core semi-axes as a fraction of the foreground's.
    pub core_scale: f64,
    pub base_outer: Vec<f64>,
    pub base_inner: Vec<f64>,
    /// Texture standard deviation per channel.
    pub amplitude: Vec<f64>,
    /// Lag (voxels) at which the texture autocorrelation falls to 1/e.
    pub correlation_length: f64,
    /// Fraction of texture variance shared by all channels.
    pub channel_correlation: f64,
    /// Lower bound on foreground intensities.
    pub floor: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [40, 48, 24],
            voxel_size: [1.0, 1.0, 1.0],
            semi_axes: [0.42, 0.44, 0.42],
            core_scale: 0.55,
            base_outer: vec![100.0, 80.0, 60.0],
            base_inner: vec![70.0, 110.0, 90.0],
            amplitude: vec![10.0, 10.0, 10.0],
            correlation_length: 3.0,
            channel_correlation: 0.7,
            floor: 1.0,
        }
    }
}

impl PhantomSpec {
    pub fn channels(&self) -> usize {
        self.base_outer.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        if c == 0 || self.base_inner.len() != c || self.amplitude.len() != c {
            return Err(UadError::InvalidParameter(
                "base_outer, base_inner and amplitude need one entry per channel".into(),
            ));
        }
        if self.dims.iter().any(|&d| d == 0) {
            return Err(UadError::InvalidParameter("phantom dims must be positive".into()));
        }
        if self.semi_axes.iter().any(|&a| !(a > 0.0 && a <= 0.5)) {
            return Err(UadError::InvalidParameter("semi_axes must lie in (0, 0.5]".into()));
        }
        if !(0.0..1.0).contains(&self.core_scale) {
            return Err(UadError::InvalidParameter("core_scale must lie in [0, 1)".into()));
        }
        if self.amplitude.iter().any(|&a| a < 0.0) || self.correlation_length < 0.0 {
            return Err(UadError::InvalidParameter("amplitude and correlation_length must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.channel_correlation) {
            return Err(UadError::InvalidParameter("channel_correlation must lie in [0, 1]".into()));
        }
        if !(self.floor > 0.0) {
            return Err(UadError::InvalidParameter("floor must be > 0".into()));
        }
        Ok(())
    }

    fn center(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| (self.dims[i] as f64 - 1.0) / 2.0)
    }

    fn semi(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| self.semi_axes[i] * self.dims[i] as f64)
    }

    /// Ellipsoidal radius of a voxel: < 1 inside the foreground.
    fn ellipsoid_radius(&self, p: [f64; 3]) -> f64 {
        let (c, s) = (self.center(), self.semi());
        (0..3).map(|i| ((p[i] - c[i]) / s[i]).powi(2)).sum::<f64>().sqrt()
    }

    pub fn foreground(&self) -> Mask {
        let [nx, ny, nz] = self.dims;
        let mut m = Mask::empty(self.dims);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if self.ellipsoid_radius([x as f64, y as f64, z as f64]) < 1.0 {
                        m.set(x, y, z, true);
                    }
                }
            }
        }
        m
    }
}

/// Unit-variance texture: white noise filtered by a separable Gaussian of
/// width `correlation_length / 2` (so the autocorrelation is
/// `exp(-r² / L²)`), generated on a padded grid to avoid edge effects.
pub fn texture_field(dims: [usize; 3], correlation_length: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = correlation_length / 2.0;
    if sigma <= 0.0 {
        return (0..dims.iter().product::<usize>()).map(|_| rng.sample(StandardNormal)).collect();
    }
    let r = (4.0 * sigma).ceil() as usize;
    let kernel: Vec<f64> = {
        let k: Vec<f64> = (0..=2 * r)
            .map(|i| {
                let d = i as f64 - r as f64;
                (-d * d / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let s: f64 = k.iter().sum();
        k.into_iter().map(|v| v / s).collect()
    };
    let sd = kernel.iter().map(|w| w * w).sum::<f64>().powf(1.5);
    let mut pd = [dims[0] + 2 * r, dims[1] + 2 * r, dims[2] + 2 * r];
    let mut buf: Vec<f64> = (0..pd.iter().product::<usize>()).map(|_| rng.sample(StandardNormal)).collect();
    // Filter one axis at a time, shrinking that axis to the valid region.
    for axis in 0..3 {
        let mut od = pd;
        od[axis] = dims[axis];
        let mut out = vec![0.0; od.iter().product()];
        let stride_in = [1, pd[0], pd[0] * pd[1]];
        for z in 0..od[2] {
            for y in 0..od[1] {
                for x in 0..od[0] {
                    let base = x * stride_in[0] + y * stride_in[1] + z * stride_in[2];
                    let step = stride_in[axis];
                    let acc: f64 = kernel.iter().enumerate().map(|(k, w)| w * buf[base + k * step]).sum();
                    out[(z * od[1] + y) * od[0] + x] = acc;
                }
            }
        }
        buf = out;
        pd = od;
    }
    buf.iter_mut().for_each(|v| *v /= sd);
    buf
}

/// Normal phantom and its foreground mask.
pub fn generate_normal(spec: &PhantomSpec, seed: u64) -> Result<(Volume, Mask)> {
    spec.validate()?;
    let ch = spec.channels();
    let n: usize = spec.dims.iter().product();
    let rho = spec.channel_correlation;
    let shared = texture_field(spec.dims, spec.correlation_length, derive_seed(seed, "texture", 0));
    let own: Vec<Vec<f64>> = (0..ch)
        .map(|c| texture_field(spec.dims, spec.correlation_length, derive_seed(seed, "texture", 1 + c as u64)))
        .collect();
    let fg = spec.foreground();
    let mut data = vec![0.0; n * ch];
    let [nx, ny, _] = spec.dims;
    for (i, inside) in fg.data().iter().enumerate() {
        if !inside {
            continue;
        }
        let (x, y, z) = (i % nx, (i / nx) % ny, i / (nx * ny));
        let core = spec.ellipsoid_radius([x as f64, y as f64, z as f64]) < spec.core_scale;
        for c in 0..ch {
            let base = if core { spec.base_inner[c] } else { spec.base_outer[c] };
            let t = rho.sqrt() * shared[i] + (1.0 - rho).sqrt() * own[c][i];
            data[i * ch + c] = (base + spec.amplitude[c] * t).max(spec.floor);
        }
    }
    Ok((Volume::new(spec.dims, ch, spec.voxel_size, data)?, fg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    pub center: [f64; 3],
    /// Outer radius in voxels; the taper reaches zero there.
    pub radius: f64,
    /// Radius of the flat core as a fraction of `radius`.
    pub flat_fraction: f64,
    /// Offset in units of the texture standard deviation.
    pub contrast: f64,
    /// Sign (or weight) of the offset per channel.
    pub signs: Vec<f64>,
}

impl AnomalySpec {
    /// Radial profile: 1 in the core, cosine roll-off to 0 at `radius`.
    pub fn taper(&self, r: f64) -> f64 {
        let core = self.flat_fraction * self.radius;
        if r <= core {
            1.0
        } else if r < self.radius {
            0.5 * (1.0 + (std::f64::consts::PI * (r - core) / (self.radius - core)).cos())
        } else {
            0.0
        }
    }

    fn distance(&self, x: usize, y: usize, z: usize) -> f64 {
        let p = [x as f64, y as f64, z as f64];
        (0..3).map(|i| (p[i] - self.center[i]).powi(2)).sum::<f64>().sqrt()
    }
}

/// Adds `contrast * amplitude_c * sign_c * taper(r)` inside the sphere and
/// returns the exact set of modified voxels.
pub fn inject_anomaly(
    v: &Volume,
    foreground: &Mask,
    spec: &PhantomSpec,
    anomaly: &AnomalySpec,
) -> Result<(Volume, Mask)> {
    let ch = v.channels();
    if anomaly.signs.len() != ch || spec.amplitude.len() != ch {
        return Err(UadError::ShapeMismatch(format!("anomaly needs {ch} channel signs")));
    }
    if !(anomaly.radius >= 0.0) || !(0.0..1.0).contains(&anomaly.flat_fraction) {
        return Err(UadError::InvalidParameter("radius must be >= 0 and flat_fraction in [0, 1)".into()));
    }
    if foreground.dims() != v.dims() {
        return Err(UadError::ShapeMismatch("foreground mask does not match the volume".into()));
    }
    let [nx, ny, nz] = v.dims();
    let mut mask = Mask::empty(v.dims());
    let mut data = v.data().to_vec();
    let delta: Vec<f64> = (0..ch).map(|c| anomaly.contrast * spec.amplitude[c] * anomaly.signs[c]).collect();
    let lo = |c: f64| (c - anomaly.radius).floor().max(0.0) as usize;
    let hi = |c: f64, n: usize| ((c + anomaly.radius).ceil().max(0.0) as usize).min(n.saturating_sub(1));
    for z in lo(anomaly.center[2])..=hi(anomaly.center[2], nz) {
        for y in lo(anomaly.center[1])..=hi(anomaly.center[1], ny) {
            for x in lo(anomaly.center[0])..=hi(anomaly.center[0], nx) {
                let t = anomaly.taper(anomaly.distance(x, y, z));
                if t <= 0.0 {
                    continue;
                }
                if !foreground.get(x, y, z) {
                    return Err(UadError::AnomalyOutsideForeground(format!(
                        "voxel ({x}, {y}, {z}) of the sphere at {:?} r={}",
                        anomaly.center, anomaly.radius
                    )));
                }
                mask.set(x, y, z, true);
                let i = v.voxel_index(x, y, z);
                for c in 0..ch {
                    data[i * ch + c] += t * delta[c];
                }
            }
        }
    }
    // a sphere that does not intersect the grid at all is also outside
    if anomaly.radius > 0.0 && mask.count() == 0 {
        return Err(UadError::AnomalyOutsideForeground(format!(
            "sphere at {:?} covers no voxel",
            anomaly.center
        )));
    }
    Ok((Volume::new(v.dims(), ch, v.voxel_size(), data)?, mask))
}

/// Eight regions: the foreground split into octants about its centre.
pub fn synthetic_atlas(spec: &PhantomSpec) -> Result<LabelAtlas> {
    let fg = spec.foreground();
    let c = spec.center();
    let mut labels = vec![0u32; fg.data().len()];
    for [x, y, z] in fg.coords() {
        let bit = |v: usize, ci: f64| u32::from(v as f64 > ci);
        labels[fg.index(x, y, z)] = 1 + bit(x, c[0]) + 2 * bit(y, c[1]) + 4 * bit(z, c[2]);
    }
    let mut names = BTreeMap::new();
    for l in 1..=8u32 {
        let b = l - 1;
        let name = format!(
            "{}_{}_{}",
            if b & 1 == 0 { "right" } else { "left" },
            if b & 2 == 0 { "posterior" } else { "anterior" },
            if b & 4 == 0 { "inferior" } else { "superior" },
        );
        names.insert(l, name);
    }
    LabelAtlas::new(spec.dims, labels, names)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub n_normal: usize,
    pub n_anomalous: usize,
    pub phantom: PhantomSpec,
    pub radius: f64,
    pub flat_fraction: f64,
    pub contrast: f64,
    pub signs: Vec<f64>,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_normal: 20,
            n_anomalous: 20,
            phantom: PhantomSpec::default(),
            radius: 5.0,
            flat_fraction: 0.5,
            contrast: 1.5,
            signs: vec![1.0, -1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhantomSubject {
    pub meta: SubjectMeta,
    pub volume: Volume,
    pub foreground: Mask,
    pub anomaly: Option<(AnomalySpec, Mask)>,
}

/// Uniform anomaly centre among foreground voxels whose whole sphere stays
/// in the foreground.
fn place_anomaly(fg: &Mask, radius: f64, rng: &mut ChaCha8Rng) -> Result<[f64; 3]> {
    let [nx, ny, nz] = fg.dims();
    let reach = radius.ceil() as isize;
    let inside = |x: isize, y: isize, z: isize| {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < nx
            && (y as usize) < ny
            && (z as usize) < nz
            && fg.get(x as usize, y as usize, z as usize)
    };
    let fits = |[x, y, z]: [usize; 3]| {
        for dz in -reach..=reach {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let d = ((dx * dx + dy * dy + dz * dz) as f64).sqrt();
                    if d < radius && !inside(x as isize + dx, y as isize + dy, z as isize + dz) {
                        return false;
                    }
                }
            }
        }
        true
    };
    let candidates: Vec<[usize; 3]> = fg.coords().filter(|&c| fits(c)).collect();
    if candidates.is_empty() {
        return Err(UadError::AnomalyOutsideForeground(format!(
            "no position fits a sphere of radius {radius}"
        )));
    }
    let c = candidates[rng.random_range(0..candidates.len())];
    Ok([c[0] as f64, c[1] as f64, c[2] as f64])
}

/// Normal subjects `ctl000..`, anomalous subjects `pat000..`, with random
/// ages in [50, 80) and balanced-at-random sex.
pub fn generate_cohort(spec: &CohortSpec, seed: u64) -> Result<Vec<PhantomSubject>> {
    spec.phantom.validate()?;
    let mut out = Vec::with_capacity(spec.n_normal + spec.n_anomalous);
    let mut meta_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "metadata", 0));
    let mut place_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "placement", 0));
    for i in 0..spec.n_normal + spec.n_anomalous {
        let anomalous = i >= spec.n_normal;
        let id = if anomalous {
            format!("pat{:03}", i - spec.n_normal)
        } else {
            format!("ctl{i:03}")
        };
        let meta = SubjectMeta {
            id,
            role: if anomalous { Role::Patient } else { Role::Control },
            age: (50.0 + 30.0 * meta_rng.random::<f64>()).round(),
            sex: if meta_rng.random_bool(0.5) { Sex::F } else { Sex::M },
        };
        let (volume, foreground) = generate_normal(&spec.phantom, derive_seed(seed, "subject", i as u64))?;
        if !anomalous {
            out.push(PhantomSubject {
                meta,
                volume,
                foreground,
                anomaly: None,
            });
            continue;
        }
        let a = AnomalySpec {
            center: place_anomaly(&foreground, spec.radius, &mut place_rng)?,
            radius: spec.radius,
            flat_fraction: spec.flat_fraction,
            contrast: spec.contrast,
            signs: spec.signs.clone(),
        };
        let (volume, mask) = inject_anomaly(&volume, &foreground, &spec.phantom, &a)?;
        out.push(PhantomSubject {
            meta,
            volume,
            foreground,
            anomaly: Some((a, mask)),
        });
    }
    Ok(out)
}

pub fn format_manifest(subjects: &[PhantomSubject]) -> String {
    let mut s = String::from("subject_id\tlabel\tcenter_x\tcenter_y\tcenter_z\tradius\tcontrast\n");
    for p in subjects {
        match &p.anomaly {
            Some((a, _)) => s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                p.meta.id, p.meta.role, a.center[0], a.center[1], a.center[2], a.radius, a.contrast
            )),
            None => s.push_str(&format!("{}\t{}\tNA\tNA\tNA\tNA\tNA\n", p.meta.id, p.meta.role)),
        }
    }
    s
}
