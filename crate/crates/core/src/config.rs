//! JSON pipeline configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, UadError};
use crate::eval::FoldConfig;
use crate::mmst::MmstConfig;
use crate::ocsvm::EnsembleConfig;
use crate::phantom::CohortSpec;
use crate::sae::{Architecture, BlockSpec, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Subject volumes as `<id>.uadv` or `<id>.nii`.
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Subject metadata CSV; defaults to `<data_dir>/metadata.csv`.
    pub metadata: Option<PathBuf>,
    /// Label volume; defaults to `<data_dir>/atlas.uadv`.
    pub atlas: Option<PathBuf>,
    /// Region names TSV; defaults to `<data_dir>/atlas_names.tsv`.
    pub atlas_names: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("runs"),
            metadata: None,
            atlas: None,
            atlas_names: None,
        }
    }
}

impl Paths {
    pub fn metadata(&self) -> PathBuf {
        self.metadata.clone().unwrap_or_else(|| self.data_dir.join("metadata.csv"))
    }

    pub fn atlas(&self) -> PathBuf {
        self.atlas.clone().unwrap_or_else(|| self.data_dir.join("atlas.uadv"))
    }

    pub fn atlas_names(&self) -> PathBuf {
        self.atlas_names
            .clone()
            .unwrap_or_else(|| self.data_dir.join("atlas_names.tsv"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub patch_size: usize,
    /// Training patches drawn per train control.
    pub patches_per_subject: usize,
    /// Validation pairs as a fraction of training pairs.
    pub val_fraction: f64,
    pub sae: TrainConfig,
    /// Encoder blocks; the reference four-block encoder when absent.
    pub blocks: Option<Vec<BlockSpec>>,
    pub ocsvm: EnsembleConfig,
    pub mmst: MmstConfig,
    pub threshold_quantile: f64,
    pub folds: FoldConfig,
    /// Voxels with every channel within this of zero are background.
    pub mask_eps: f64,
    /// Cohort written by `phantom-gen`.
    pub phantom: CohortSpec,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            patch_size: 15,
            patches_per_subject: 25_000,
            val_fraction: 0.1,
            sae: TrainConfig::default(),
            blocks: None,
            ocsvm: EnsembleConfig::default(),
            mmst: MmstConfig::default(),
            threshold_quantile: 0.98,
            folds: FoldConfig::default(),
            mask_eps: 1e-6,
            phantom: CohortSpec::default(),
            seed: 0,
        }
    }
}

fn bad(field: &str, reason: impl Into<String>) -> UadError {
    UadError::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| UadError::io(path, e))?;
        Self::from_json(&text).map_err(|e| e.in_stage("config", path))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Encoder architecture for `channels` input channels.
    pub fn architecture(&self, channels: usize) -> Architecture {
        let mut arch = Architecture::reference(channels);
        arch.patch_side = self.patch_size;
        if let Some(blocks) = &self.blocks {
            arch.blocks = blocks.clone();
        }
        arch
    }

    /// Run directory stamped with the seed.
    pub fn run_dir(&self) -> PathBuf {
        self.paths.output_dir.join(format!("seed-{}", self.seed))
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 3 || self.patch_size % 2 == 0 {
            return Err(bad("patch_size", "must be odd and >= 3"));
        }
        if self.patches_per_subject < 2 {
            return Err(bad("patches_per_subject", "must be >= 2"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction <= 1.0) {
            return Err(bad("val_fraction", "must lie in (0, 1]"));
        }
        if self.sae.epochs == 0 {
            return Err(bad("sae.epochs", "must be >= 1"));
        }
        if self.sae.batch_size == 0 {
            return Err(bad("sae.batch_size", "must be >= 1"));
        }
        if !(self.sae.alpha.is_finite() && self.sae.alpha >= 0.0) {
            return Err(bad("sae.alpha", "must be finite and >= 0"));
        }
        if !(self.sae.adam.lr > 0.0 && self.sae.adam.lr.is_finite()) {
            return Err(bad("sae.adam.lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.sae.adam.beta1) {
            return Err(bad("sae.adam.beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.sae.adam.beta2) {
            return Err(bad("sae.adam.beta2", "must lie in [0, 1)"));
        }
        if !(self.sae.adam.eps > 0.0) {
            return Err(bad("sae.adam.eps", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.sae.bn_momentum) {
            return Err(bad("sae.bn_momentum", "must lie in [0, 1)"));
        }
        if self.blocks.as_ref().is_some_and(|b| b.is_empty()) {
            return Err(bad("blocks", "must list at least one block"));
        }
        if let Err(e) = self.architecture(1).latent_dim() {
            return Err(bad("blocks", e.to_string()));
        }
        let o = &self.ocsvm;
        if o.n_models == 0 {
            return Err(bad("ocsvm.n_models", "must be >= 1"));
        }
        if o.n_per_model < 2 {
            return Err(bad("ocsvm.n_per_model", "must be >= 2"));
        }
        if !(o.nu > 0.0 && o.nu <= 1.0) {
            return Err(bad("ocsvm.nu", format!("{} is outside (0, 1]", o.nu)));
        }
        if o.gamma.is_some_and(|g| !(g > 0.0 && g.is_finite())) {
            return Err(bad("ocsvm.gamma", "must be positive"));
        }
        if !(o.solver.tol > 0.0) {
            return Err(bad("ocsvm.solver.tol", "must be positive"));
        }
        if o.solver.max_iter_per_sample == 0 {
            return Err(bad("ocsvm.solver.max_iter_per_sample", "must be >= 1"));
        }
        self.mmst.validate()?;
        if !(0.90..1.0).contains(&self.threshold_quantile) {
            return Err(bad("threshold_quantile", "must lie in [0.90, 1)"));
        }
        self.folds.validate()?;
        if !(self.mask_eps >= 0.0 && self.mask_eps.is_finite()) {
            return Err(bad("mask_eps", "must be finite and >= 0"));
        }
        self.phantom.phantom.validate().map_err(|e| bad("phantom", e.to_string()))?;
        Ok(())
    }
}
