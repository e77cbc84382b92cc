//! Per-fold orchestration. Every stage reads its inputs from and writes its
//! outputs to the run directory, so each one can be rerun in isolation.
//!
//! Layout under `<output_dir>/seed-<seed>/`:
//!
//! ```text
//! config.json  folds.json  results.csv
//! fold-<k>/norm.json  sae.uadm  sae_loss.csv  features.uadv
//!          ocsvm.uadm  mmst.uadm  mmst_diag.csv
//!          maps/<method>/<id>.uadv  thresholds/<method>.json
//!          reports/<method>/<id>.csv  results.csv
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::container::{read_raw, write_raw};
use crate::error::{Result, UadError};
use crate::eval::{
    best_gmean, format_results_csv, make_folds, parse_metadata_csv, parse_results_csv, roc, Fold, ResultRow,
    SubjectMeta, SubjectScore,
};
use crate::maps::{
    abnormality_threshold, binarize, latent_score_map, recon_error_map, region_aggregate, scoring_locations,
    AnomalyMap, LatentScorer, RegionReport, WHOLE_BRAIN, WHOLE_BRAIN_NAME,
};
use crate::mmst::{fit_mmst, format_diagnostics, MmstParams, MmstScorer};
use crate::nifti::read_nifti;
use crate::ocsvm::{fit_ensemble, OcsvmEnsemble};
use crate::patching::{plan_pairs, PairDraw, Subject};
use crate::phantom::{format_manifest, generate_cohort, synthetic_atlas};
use crate::sae::{format_loss_trace, train_sae, LazyPairs, SaeModel};
use crate::seed::derive_seed;
use crate::volume::{
    brain_mask, fit_normalization, format_names_tsv, normalize, parse_names_tsv, LabelAtlas, NormalizationStats,
    Volume,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Recon,
    Ocsvm,
    Mmst,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Recon, Method::Ocsvm, Method::Mmst];

    pub fn name(self) -> &'static str {
        match self {
            Method::Recon => "recon",
            Method::Ocsvm => "ocsvm",
            Method::Mmst => "mmst",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = UadError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| UadError::Parse(format!("unknown method {s:?} (expected recon, ocsvm or mmst)")))
    }
}

/// Per-fold stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    SaeTrain,
    Features,
    FitOcsvm,
    FitMmst,
    Score,
    Threshold,
    Aggregate,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::SaeTrain,
        Stage::Features,
        Stage::FitOcsvm,
        Stage::FitMmst,
        Stage::Score,
        Stage::Threshold,
        Stage::Aggregate,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::SaeTrain => "sae-train",
            Stage::Features => "features",
            Stage::FitOcsvm => "fit-ocsvm",
            Stage::FitMmst => "fit-mmst",
            Stage::Score => "score",
            Stage::Threshold => "threshold",
            Stage::Aggregate => "aggregate",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl FromStr for Stage {
    type Err = UadError;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| UadError::Parse(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRecord {
    pub method: String,
    pub quantile: f64,
    pub threshold: f64,
    pub n_train_maps: usize,
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| UadError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| UadError::io(path, e))
}

/// Writes a file, creating parent directories.
pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| UadError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| UadError::io(path, e))
}

/// Reads a `.nii` file or a raw `UADV` container (any other extension).
pub fn load_volume(path: &Path) -> Result<Volume> {
    let bytes = read_bytes(path)?;
    if path.extension().is_some_and(|e| e == "nii") {
        read_nifti(&bytes)
    } else {
        read_raw(&bytes)
    }
}

/// Phantom cohort written to `data_dir`: one volume per subject, metadata,
/// atlas, anomaly manifest and ground-truth masks.
pub fn phantom_gen(cfg: &PipelineConfig) -> Result<Vec<SubjectMeta>> {
    let stage = "phantom-gen";
    let dir = &cfg.paths.data_dir;
    let cohort = generate_cohort(&cfg.phantom, derive_seed(cfg.seed, "phantom", 0)).map_err(|e| e.in_stage(stage, dir))?;
    for s in &cohort {
        write_file(&dir.join(format!("{}.uadv", s.meta.id)), write_raw(&s.volume))?;
        if let Some((_, truth)) = &s.anomaly {
            let data = truth.data().iter().map(|&b| f64::from(u8::from(b))).collect();
            let v = Volume::new(truth.dims(), 1, s.volume.voxel_size(), data)?;
            write_file(&dir.join(format!("{}_truth.uadv", s.meta.id)), write_raw(&v))?;
        }
    }
    let meta: Vec<SubjectMeta> = cohort.iter().map(|s| s.meta.clone()).collect();
    write_file(&cfg.paths.metadata(), crate::eval::format_metadata_csv(&meta))?;
    write_file(&dir.join("manifest.tsv"), format_manifest(&cohort))?;
    let atlas = synthetic_atlas(&cfg.phantom.phantom).map_err(|e| e.in_stage(stage, dir))?;
    write_file(&cfg.paths.atlas(), write_raw(&atlas.to_volume()))?;
    write_file(&cfg.paths.atlas_names(), format_names_tsv(atlas.names()))?;
    Ok(meta)
}

/// Stage runner bound to one configuration.
pub struct Pipeline {
    pub config: PipelineConfig,
    /// Progress messages on stderr.
    pub verbose: bool,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, verbose: false })
    }

    fn log(&self, msg: impl fmt::Display) {
        if self.verbose {
            eprintln!("[uad] {msg}");
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.config.run_dir()
    }

    pub fn fold_dir(&self, fold: usize) -> PathBuf {
        self.run_dir().join(format!("fold-{fold}"))
    }

    pub fn map_path(&self, fold: usize, method: Method, id: &str) -> PathBuf {
        self.fold_dir(fold).join("maps").join(method.name()).join(format!("{id}.uadv"))
    }

    pub fn report_path(&self, fold: usize, method: Method, id: &str) -> PathBuf {
        self.fold_dir(fold).join("reports").join(method.name()).join(format!("{id}.csv"))
    }

    pub fn threshold_path(&self, fold: usize, method: Method) -> PathBuf {
        self.fold_dir(fold).join("thresholds").join(format!("{}.json", method.name()))
    }

    pub fn results_path(&self) -> PathBuf {
        self.run_dir().join("results.csv")
    }

    pub fn write_config(&self) -> Result<()> {
        write_file(&self.run_dir().join("config.json"), self.config.to_json() + "\n")
    }

    pub fn load_metadata(&self) -> Result<Vec<SubjectMeta>> {
        let path = self.config.paths.metadata();
        parse_metadata_csv(&read_text(&path)?).map_err(|e| e.in_stage("metadata", path))
    }

    /// Raw volume of a subject, from `<id>.uadv` or `<id>.nii`.
    pub fn load_raw(&self, id: &str) -> Result<Volume> {
        let dir = &self.config.paths.data_dir;
        let raw = dir.join(format!("{id}.uadv"));
        let path = if raw.exists() { raw } else { dir.join(format!("{id}.nii")) };
        load_volume(&path).map_err(|e| e.in_stage("load", path))
    }

    pub fn load_atlas(&self) -> Result<LabelAtlas> {
        let (vp, np) = (self.config.paths.atlas(), self.config.paths.atlas_names());
        let names = parse_names_tsv(&read_text(&np)?).map_err(|e| e.in_stage("atlas", &np))?;
        LabelAtlas::from_volume(&load_volume(&vp)?, names).map_err(|e| e.in_stage("atlas", vp))
    }

    /// Stratified folds over the metadata, written to `folds.json`.
    pub fn folds(&self) -> Result<Vec<Fold>> {
        let meta_path = self.config.paths.metadata();
        let path = self.run_dir().join("folds.json");
        let folds = self
            .load_metadata()
            .and_then(|meta| make_folds(&meta, &self.config.folds, derive_seed(self.config.seed, "folds", 0)))
            .map_err(|e| e.in_stage("folds", meta_path))?;
        write_file(&path, serde_json::to_string_pretty(&folds)? + "\n")?;
        self.log(format!("folds: {} written to {}", folds.len(), path.display()));
        Ok(folds)
    }

    pub fn load_fold(&self, fold: usize) -> Result<Fold> {
        let path = self.run_dir().join("folds.json");
        let folds: Vec<Fold> = serde_json::from_str(&read_text(&path)?).map_err(|e| UadError::from(e).in_stage("folds", &path))?;
        folds.into_iter().nth(fold).ok_or_else(|| {
            UadError::InvalidParameter(format!("fold {fold} not in {}", path.display())).in_stage("folds", &path)
        })
    }

    /// Normalized volume and foreground mask of a subject.
    fn subject(&self, id: &str, stats: &NormalizationStats) -> Result<Subject> {
        let raw = self.load_raw(id)?;
        let mask = brain_mask(&raw, self.config.mask_eps);
        Ok(Subject {
            id: id.to_string(),
            volume: normalize(&raw, stats)?,
            mask,
        })
    }

    fn load_stats(&self, fold: usize) -> Result<NormalizationStats> {
        let path = self.fold_dir(fold).join("norm.json");
        serde_json::from_str(&read_text(&path)?).map_err(|e| UadError::from(e).in_stage("load", path))
    }

    fn train_subjects(&self, fold: &Fold, stats: &NormalizationStats) -> Result<Vec<Subject>> {
        fold.train_controls.iter().map(|id| self.subject(id, stats)).collect()
    }

    /// Training and validation pair draws among the train controls.
    fn pair_plans(&self, fold: usize, subjects: &[Subject]) -> Result<(Vec<PairDraw>, Vec<PairDraw>)> {
        let cfg = &self.config;
        let n_train = (cfg.patches_per_subject * subjects.len()).div_ceil(2);
        let n_val = ((n_train as f64 * cfg.val_fraction).round() as usize).max(1);
        let train = plan_pairs(subjects, n_train, cfg.patch_size, derive_seed(cfg.seed, "train-pairs", fold as u64))?;
        let val = plan_pairs(subjects, n_val, cfg.patch_size, derive_seed(cfg.seed, "val-pairs", fold as u64))?;
        Ok((train, val))
    }

    /// Fits normalization on the train controls and trains the auto-encoder.
    pub fn sae_train(&self, fold: usize) -> Result<SaeModel> {
        let stage = "sae-train";
        let dir = self.fold_dir(fold);
        let f = self.load_fold(fold)?;
        let raws: Vec<Volume> = f.train_controls.iter().map(|id| self.load_raw(id)).collect::<Result<_>>()?;
        let stats = fit_normalization(&raws).map_err(|e| e.in_stage(stage, &dir))?;
        drop(raws);
        write_file(&dir.join("norm.json"), serde_json::to_string_pretty(&stats)? + "\n")?;
        let subjects = self.train_subjects(&f, &stats)?;
        let (train, val) = self.pair_plans(fold, &subjects).map_err(|e| e.in_stage(stage, &dir))?;
        let channels = subjects[0].volume.channels();
        let mut tc = self.config.sae.clone();
        tc.seed = derive_seed(self.config.seed, "sae", fold as u64);
        self.log(format!(
            "fold {fold}: training on {} pairs ({} validation) from {} controls",
            train.len(),
            val.len(),
            subjects.len()
        ));
        let p = self.config.patch_size;
        let lazy = |draws| LazyPairs {
            subjects: &subjects,
            draws,
            patch_side: p,
        };
        let out = train_sae(&self.config.architecture(channels), &lazy(&train), &lazy(&val), &tc)
            .map_err(|e| e.in_stage(stage, &dir))?;
        write_file(&dir.join("sae.uadm"), out.model.to_bytes())?;
        write_file(&dir.join("sae_loss.csv"), format_loss_trace(&out.trace))?;
        self.log(format!("fold {fold}: best epoch {}", out.best_epoch));
        SaeModel::from_bytes(&out.model.to_bytes())
    }

    pub fn load_sae(&self, fold: usize) -> Result<SaeModel> {
        let path = self.fold_dir(fold).join("sae.uadm");
        SaeModel::from_bytes(&read_bytes(&path)?).map_err(|e| e.in_stage("load", path))
    }

    /// Latent codes of every training patch, stored as an `n x 1 x 1`
    /// volume with one channel per latent dimension.
    pub fn features(&self, fold: usize) -> Result<Vec<Vec<f64>>> {
        let stage = "features";
        let dir = self.fold_dir(fold);
        let f = self.load_fold(fold)?;
        let stats = self.load_stats(fold)?;
        let model = self.load_sae(fold)?;
        let subjects = self.train_subjects(&f, &stats)?;
        let (train, _) = self.pair_plans(fold, &subjects).map_err(|e| e.in_stage(stage, &dir))?;
        let m = model.latent_dim();
        let mut data = Vec::with_capacity(2 * train.len() * m);
        for (si, s) in subjects.iter().enumerate() {
            let locs: Vec<[usize; 3]> = train
                .iter()
                .flat_map(|d| [(d.a, d.location), (d.b, d.location)])
                .filter(|&(i, _)| i == si)
                .map(|(_, l)| l)
                .collect();
            let z = crate::maps::encode_locations(&model, &s.volume, &locs).map_err(|e| e.in_stage(stage, &dir))?;
            data.extend(z.into_iter().flatten());
        }
        let n = data.len() / m;
        let v = Volume::new([n, 1, 1], m, [1.0; 3], data)?;
        let path = dir.join("features.uadv");
        write_file(&path, write_raw(&v))?;
        self.log(format!("fold {fold}: {n} latent vectors written"));
        self.load_features(fold)
    }

    pub fn load_features(&self, fold: usize) -> Result<Vec<Vec<f64>>> {
        let path = self.fold_dir(fold).join("features.uadv");
        let v = load_volume(&path)?;
        Ok(v.data().chunks_exact(v.channels()).map(<[f64]>::to_vec).collect())
    }

    pub fn fit_ocsvm(&self, fold: usize) -> Result<OcsvmEnsemble> {
        let dir = self.fold_dir(fold);
        let z = self.load_features(fold)?;
        let e = fit_ensemble(&z, &self.config.ocsvm, derive_seed(self.config.seed, "ocsvm", fold as u64))
            .map_err(|e| e.in_stage("fit-ocsvm", dir.join("features.uadv")))?;
        write_file(&dir.join("ocsvm.uadm"), e.to_bytes())?;
        self.log(format!("fold {fold}: OC-SVM ensemble of {} fitted", e.models.len()));
        Ok(e)
    }

    pub fn load_ocsvm(&self, fold: usize) -> Result<OcsvmEnsemble> {
        let path = self.fold_dir(fold).join("ocsvm.uadm");
        OcsvmEnsemble::from_bytes(&read_bytes(&path)?).map_err(|e| e.in_stage("load", path))
    }

    pub fn fit_mmst(&self, fold: usize) -> Result<MmstParams> {
        let dir = self.fold_dir(fold);
        let z = self.load_features(fold)?;
        let (params, diag) = fit_mmst(&z, &self.config.mmst, derive_seed(self.config.seed, "mmst", fold as u64))
            .map_err(|e| e.in_stage("fit-mmst", dir.join("features.uadv")))?;
        write_file(&dir.join("mmst.uadm"), params.to_bytes())?;
        write_file(&dir.join("mmst_diag.csv"), format_diagnostics(&diag))?;
        self.log(format!("fold {fold}: MMST fitted, {} rejected steps", diag.rejected_steps));
        Ok(params)
    }

    pub fn load_mmst(&self, fold: usize) -> Result<MmstParams> {
        let path = self.fold_dir(fold).join("mmst.uadm");
        MmstParams::from_bytes(&read_bytes(&path)?).map_err(|e| e.in_stage("load", path))
    }

    /// Subjects that get a map: train controls (for the threshold) and the
    /// test set.
    fn scored_ids(f: &Fold) -> Vec<&String> {
        f.train_controls.iter().chain(&f.test_controls).chain(&f.test_patients).collect()
    }

    pub fn score(&self, fold: usize, method: Method) -> Result<()> {
        let stage = "score";
        let f = self.load_fold(fold)?;
        let stats = self.load_stats(fold)?;
        let model = self.load_sae(fold)?;
        let scorer: Option<Box<dyn LatentScorer>> = match method {
            Method::Recon => None,
            Method::Ocsvm => Some(Box::new(self.load_ocsvm(fold)?)),
            Method::Mmst => Some(Box::new(MmstScorer::new(self.load_mmst(fold)?))),
        };
        let p = self.config.patch_size;
        for id in Self::scored_ids(&f) {
            let s = self.subject(id, &stats)?;
            let locs = scoring_locations(&s.mask, p);
            let path = self.map_path(fold, method, id);
            let map = match &scorer {
                None => recon_error_map(&model, &s.volume, &locs),
                Some(sc) => latent_score_map(sc.as_ref(), &model, &s.volume, &locs),
            }
            .map_err(|e| e.in_stage(stage, &path))?;
            write_file(&path, write_raw(&map.to_volume()))?;
        }
        self.log(format!("fold {fold}: {method} maps written"));
        Ok(())
    }

    pub fn load_map(&self, fold: usize, method: Method, id: &str) -> Result<AnomalyMap> {
        let path = self.map_path(fold, method, id);
        AnomalyMap::from_volume(&load_volume(&path)?).map_err(|e| e.in_stage("load", path))
    }

    /// Pooled quantile of the train-control maps.
    pub fn threshold(&self, fold: usize, method: Method) -> Result<f64> {
        let f = self.load_fold(fold)?;
        let maps: Vec<AnomalyMap> =
            f.train_controls.iter().map(|id| self.load_map(fold, method, id)).collect::<Result<_>>()?;
        let refs: Vec<&AnomalyMap> = maps.iter().collect();
        let path = self.threshold_path(fold, method);
        let t = abnormality_threshold(&refs, self.config.threshold_quantile).map_err(|e| e.in_stage("threshold", &path))?;
        let rec = ThresholdRecord {
            method: method.name().into(),
            quantile: self.config.threshold_quantile,
            threshold: t,
            n_train_maps: maps.len(),
        };
        write_file(&path, serde_json::to_string_pretty(&rec)? + "\n")?;
        Ok(t)
    }

    pub fn load_threshold(&self, fold: usize, method: Method) -> Result<f64> {
        let path = self.threshold_path(fold, method);
        let rec: ThresholdRecord =
            serde_json::from_str(&read_text(&path)?).map_err(|e| UadError::from(e).in_stage("load", &path))?;
        Ok(rec.threshold)
    }

    /// Binarizes the test maps and writes one region report per subject.
    pub fn aggregate(&self, fold: usize, method: Method) -> Result<()> {
        let f = self.load_fold(fold)?;
        let t = self.load_threshold(fold, method)?;
        let atlas = self.load_atlas()?;
        for id in f.test_controls.iter().chain(&f.test_patients) {
            let path = self.report_path(fold, method, id);
            let map = self.load_map(fold, method, id)?;
            let report = region_aggregate(&binarize(&map, t), &atlas).map_err(|e| e.in_stage("aggregate", &path))?;
            write_file(&path, report.to_csv())?;
        }
        Ok(())
    }

    pub fn load_report(&self, fold: usize, method: Method, id: &str) -> Result<RegionReport> {
        let path = self.report_path(fold, method, id);
        RegionReport::from_csv(&read_text(&path)?).map_err(|e| e.in_stage("load", path))
    }

    /// Best g-mean per method and region over the fold's test subjects.
    /// Regions where a class has no scored subject are skipped.
    pub fn evaluate(&self, fold: usize) -> Result<Vec<ResultRow>> {
        let f = self.load_fold(fold)?;
        let atlas = self.load_atlas()?;
        let mut regions: Vec<(u32, String)> = vec![(WHOLE_BRAIN, WHOLE_BRAIN_NAME.to_string())];
        regions.extend(atlas.names().iter().filter(|(&l, _)| l != WHOLE_BRAIN).map(|(&l, n)| (l, n.clone())));
        let roles: BTreeMap<&String, crate::eval::Role> = f
            .test_controls
            .iter()
            .map(|id| (id, crate::eval::Role::Control))
            .chain(f.test_patients.iter().map(|id| (id, crate::eval::Role::Patient)))
            .collect();
        let mut rows = Vec::new();
        for method in Method::ALL {
            let reports: Vec<(&String, RegionReport)> = roles
                .keys()
                .map(|&id| Ok((id, self.load_report(fold, method, id)?)))
                .collect::<Result<_>>()?;
            for (label, name) in &regions {
                let points: Vec<SubjectScore> = reports
                    .iter()
                    .filter_map(|(id, r)| {
                        r.pct(*label).map(|metric| SubjectScore {
                            subject_id: (*id).clone(),
                            role: roles[id],
                            metric,
                        })
                    })
                    .collect();
                let Ok(curve) = roc(&points) else { continue };
                let (gmean, threshold) = best_gmean(&curve)?;
                rows.push(ResultRow {
                    method: method.name().into(),
                    region: name.clone(),
                    fold,
                    gmean,
                    threshold,
                });
            }
        }
        write_file(&self.fold_dir(fold).join("results.csv"), format_results_csv(&rows))?;
        Ok(rows)
    }

    pub fn load_fold_results(&self, fold: usize) -> Result<Vec<ResultRow>> {
        let path = self.fold_dir(fold).join("results.csv");
        parse_results_csv(&read_text(&path)?).map_err(|e| e.in_stage("load", path))
    }

    pub fn run_stage(&self, fold: usize, stage: Stage) -> Result<()> {
        self.log(format!("fold {fold}: stage {}", stage.name()));
        let out = match stage {
            Stage::SaeTrain => self.sae_train(fold).map(drop),
            Stage::Features => self.features(fold).map(drop),
            Stage::FitOcsvm => self.fit_ocsvm(fold).map(drop),
            Stage::FitMmst => self.fit_mmst(fold).map(drop),
            Stage::Score => Method::ALL.into_iter().try_for_each(|m| self.score(fold, m)),
            Stage::Threshold => Method::ALL.into_iter().try_for_each(|m| self.threshold(fold, m).map(drop)),
            Stage::Aggregate => Method::ALL.into_iter().try_for_each(|m| self.aggregate(fold, m)),
            Stage::Evaluate => self.evaluate(fold).map(drop),
        };
        out.map_err(|e| e.in_stage(stage.name(), self.fold_dir(fold)))
    }

    /// Runs the folds stage, then every (or one) stage for every (or one)
    /// fold, and merges the fold results in fold order.
    pub fn run_all(&self, only_fold: Option<usize>, only_stage: Option<Stage>) -> Result<Vec<ResultRow>> {
        self.write_config()?;
        let n = self.folds()?.len();
        let folds: Vec<usize> = match only_fold {
            Some(k) if k >= n => {
                return Err(UadError::Config {
                    field: "fold".into(),
                    reason: format!("{k} is out of range for {n} folds"),
                })
            }
            Some(k) => vec![k],
            None => (0..n).collect(),
        };
        for &k in &folds {
            for stage in Stage::ALL.into_iter().filter(|s| only_stage.is_none_or(|o| o == *s)) {
                self.run_stage(k, stage)?;
            }
        }
        let mut rows = Vec::new();
        for &k in &folds {
            rows.extend(self.load_fold_results(k)?);
        }
        write_file(&self.results_path(), format_results_csv(&rows))?;
        Ok(rows)
    }
}
