//! Voxel-wise anomaly maps, thresholding and per-region summaries.

use rayon::prelude::*;

use crate::error::{Result, UadError};
use crate::mmst::MmstScorer;
use crate::ocsvm::OcsvmEnsemble;
use crate::patching::{eligible_mask, extract_patch, Patch};
use crate::sae::SaeModel;
use crate::volume::{quantile, LabelAtlas, Mask, Volume};

const CHUNK: usize = 256;

/// Per-voxel scores (higher means more anomalous) with the set of voxels
/// that were actually scored.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    pub dims: [usize; 3],
    pub scores: Vec<f64>,
    pub valid: Vec<bool>,
}

impl AnomalyMap {
    pub fn empty(dims: [usize; 3]) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            scores: vec![0.0; n],
            valid: vec![false; n],
        }
    }

    pub fn from_scores(dims: [usize; 3], locations: &[[usize; 3]], scores: &[f64]) -> Result<Self> {
        if locations.len() != scores.len() {
            return Err(UadError::ShapeMismatch(format!(
                "{} locations for {} scores",
                locations.len(),
                scores.len()
            )));
        }
        let mut m = Self::empty(dims);
        for (&loc, &s) in locations.iter().zip(scores) {
            if loc.iter().zip(&dims).any(|(a, b)| a >= b) {
                return Err(UadError::OutOfBounds { loc, side: 1 });
            }
            if !s.is_finite() {
                return Err(UadError::InvalidParameter(format!("non-finite score at {loc:?}")));
            }
            let i = m.index(loc);
            m.scores[i] = s;
            m.valid[i] = true;
        }
        Ok(m)
    }

    pub fn index(&self, [x, y, z]: [usize; 3]) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    pub fn valid_scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.scores.iter().zip(&self.valid).filter(|(_, v)| **v).map(|(s, _)| *s)
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Two channels: the score (zero where unscored) and validity as 0/1.
    pub fn to_volume(&self) -> Volume {
        let mut data = Vec::with_capacity(self.scores.len() * 2);
        for (s, v) in self.scores.iter().zip(&self.valid) {
            data.push(if *v { *s } else { 0.0 });
            data.push(if *v { 1.0 } else { 0.0 });
        }
        Volume::new(self.dims, 2, [1.0; 3], data).expect("consistent map volume")
    }

    pub fn from_volume(v: &Volume) -> Result<Self> {
        if v.channels() != 2 {
            return Err(UadError::ShapeMismatch(format!(
                "anomaly map needs 2 channels, found {}",
                v.channels()
            )));
        }
        let (scores, valid) = v.data().chunks_exact(2).map(|c| (c[0], c[1] != 0.0)).unzip();
        Ok(Self {
            dims: v.dims(),
            scores,
            valid,
        })
    }
}

/// Voxels of `mask` whose `p x p` window fits in the slice.
pub fn scoring_locations(mask: &Mask, p: usize) -> Vec<[usize; 3]> {
    eligible_mask(mask, p / 2).coords().collect()
}

fn patches_at(model: &SaeModel, v: &Volume, locations: &[[usize; 3]]) -> Result<Vec<Patch>> {
    let p = model.architecture().patch_side;
    locations.iter().map(|&loc| extract_patch(v, loc, p, "")).collect()
}

/// Squared reconstruction error of the patch centred at each location.
pub fn recon_errors(model: &SaeModel, v: &Volume, locations: &[[usize; 3]]) -> Result<Vec<f64>> {
    let chunks: Vec<Vec<f64>> = locations
        .par_chunks(CHUNK)
        .map(|locs| {
            let patches = patches_at(model, v, locs)?;
            let refs: Vec<&Patch> = patches.iter().collect();
            let recon = model.reconstruct_batch(&refs)?;
            Ok(patches
                .iter()
                .zip(&recon)
                .map(|(p, r)| p.window.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum())
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

pub fn recon_error_map(model: &SaeModel, v: &Volume, locations: &[[usize; 3]]) -> Result<AnomalyMap> {
    AnomalyMap::from_scores(v.dims(), locations, &recon_errors(model, v, locations)?)
}

/// Latent codes of the patches centred at each location.
pub fn encode_locations(model: &SaeModel, v: &Volume, locations: &[[usize; 3]]) -> Result<Vec<Vec<f64>>> {
    let chunks: Vec<Vec<Vec<f64>>> = locations
        .par_chunks(CHUNK)
        .map(|locs| {
            let patches = patches_at(model, v, locs)?;
            let refs: Vec<&Patch> = patches.iter().collect();
            model.encode_batch(&refs)
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

/// A normality model over latent vectors; higher scores are more anomalous.
pub trait LatentScorer: Sync {
    fn latent_dim(&self) -> usize;
    fn anomaly_score(&self, z: &[f64]) -> f64;
}

impl LatentScorer for OcsvmEnsemble {
    fn latent_dim(&self) -> usize {
        self.dim()
    }

    fn anomaly_score(&self, z: &[f64]) -> f64 {
        OcsvmEnsemble::anomaly_score(self, z)
    }
}

impl LatentScorer for MmstScorer {
    fn latent_dim(&self) -> usize {
        self.params().dim()
    }

    fn anomaly_score(&self, z: &[f64]) -> f64 {
        MmstScorer::anomaly_score(self, z)
    }
}

pub fn score_latents(scorer: &dyn LatentScorer, latents: &[Vec<f64>]) -> Result<Vec<f64>> {
    if let Some(z) = latents.iter().find(|z| z.len() != scorer.latent_dim()) {
        return Err(UadError::ShapeMismatch(format!(
            "latent of length {} for a scorer of dimension {}",
            z.len(),
            scorer.latent_dim()
        )));
    }
    Ok(latents.par_iter().map(|z| scorer.anomaly_score(z)).collect())
}

pub fn latent_score_map(
    scorer: &dyn LatentScorer,
    model: &SaeModel,
    v: &Volume,
    locations: &[[usize; 3]],
) -> Result<AnomalyMap> {
    let latents = encode_locations(model, v, locations)?;
    AnomalyMap::from_scores(v.dims(), locations, &score_latents(scorer, &latents)?)
}

/// Pooled `q`-quantile of all valid scores of the normal training maps.
pub fn abnormality_threshold(train_maps: &[&AnomalyMap], q: f64) -> Result<f64> {
    if !(0.90..1.0).contains(&q) {
        return Err(UadError::InvalidParameter(format!("threshold quantile {q} outside [0.90, 1)")));
    }
    let pooled: Vec<f64> = train_maps.iter().flat_map(|m| m.valid_scores()).collect();
    quantile(&pooled, q).ok_or(UadError::NotEnoughSamples { needed: 1, got: 0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMap {
    pub dims: [usize; 3],
    pub abnormal: Vec<bool>,
    pub valid: Vec<bool>,
}

/// Abnormal iff valid and strictly above the threshold.
pub fn binarize(map: &AnomalyMap, threshold: f64) -> BinaryMap {
    BinaryMap {
        dims: map.dims,
        abnormal: map
            .scores
            .iter()
            .zip(&map.valid)
            .map(|(s, v)| *v && *s > threshold)
            .collect(),
        valid: map.valid.clone(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionRow {
    pub label: u32,
    pub name: String,
    pub n_voxels: usize,
    pub n_abnormal: usize,
    /// `None` when the region has no valid voxel.
    pub pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionReport {
    pub rows: Vec<RegionRow>,
}

pub const WHOLE_BRAIN: u32 = 0;
pub const WHOLE_BRAIN_NAME: &str = "whole_brain";

impl RegionReport {
    pub fn get(&self, label: u32) -> Option<&RegionRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn pct(&self, label: u32) -> Option<f64> {
        self.get(label).and_then(|r| r.pct)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,name,n_voxels,n_abnormal,pct\n");
        for r in &self.rows {
            let pct = r.pct.map_or_else(|| "NA".to_string(), |p| p.to_string());
            s.push_str(&format!("{},{},{},{},{}\n", r.label, r.name, r.n_voxels, r.n_abnormal, pct));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some("label,name,n_voxels,n_abnormal,pct") => {}
            other => return Err(UadError::Parse(format!("bad region report header {other:?}"))),
        }
        let rows = lines
            .map(|line| {
                let bad = || UadError::Parse(format!("bad region report row: {line}"));
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 5 {
                    return Err(bad());
                }
                Ok(RegionRow {
                    label: f[0].parse().map_err(|_| bad())?,
                    name: f[1].to_string(),
                    n_voxels: f[2].parse().map_err(|_| bad())?,
                    n_abnormal: f[3].parse().map_err(|_| bad())?,
                    pct: match f[4] {
                        "NA" => None,
                        v => Some(v.parse().map_err(|_| bad())?),
                    },
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }
}

/// Percentage of abnormal voxels among the valid voxels of each atlas
/// region, plus a whole-brain row (label 0) over every valid voxel.
pub fn region_aggregate(bin: &BinaryMap, atlas: &LabelAtlas) -> Result<RegionReport> {
    if bin.dims != atlas.dims() {
        return Err(UadError::ShapeMismatch(format!(
            "map {:?} vs atlas {:?}",
            bin.dims,
            atlas.dims()
        )));
    }
    let pct = |n: usize, a: usize| (n > 0).then(|| 100.0 * a as f64 / n as f64);
    let mut counts: std::collections::BTreeMap<u32, (usize, usize)> =
        atlas.names().keys().filter(|&&l| l != WHOLE_BRAIN).map(|&l| (l, (0, 0))).collect();
    let (mut n_all, mut a_all) = (0, 0);
    for ((&lab, &valid), &abn) in atlas.labels().iter().zip(&bin.valid).zip(&bin.abnormal) {
        if !valid {
            continue;
        }
        n_all += 1;
        a_all += usize::from(abn);
        if lab != WHOLE_BRAIN {
            let e = counts.entry(lab).or_insert((0, 0));
            e.0 += 1;
            e.1 += usize::from(abn);
        }
    }
    let mut rows = vec![RegionRow {
        label: WHOLE_BRAIN,
        name: WHOLE_BRAIN_NAME.into(),
        n_voxels: n_all,
        n_abnormal: a_all,
        pct: pct(n_all, a_all),
    }];
    for (label, (n, a)) in counts {
        rows.push(RegionRow {
            label,
            name: atlas.names().get(&label).cloned().unwrap_or_else(|| format!("region_{label}")),
            n_voxels: n,
            n_abnormal: a,
            pct: pct(n, a),
        });
    }
    Ok(RegionReport { rows })
}
