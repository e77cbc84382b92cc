//! Subject-level evaluation: ROC curves over a percentage metric, the best
//! achievable g-mean, and stratified bootstrap folds.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UadError};
use crate::volume::quantile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Control,
    Patient,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Control => "control",
            Role::Patient => "patient",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectMeta {
    pub id: String,
    pub role: Role,
    pub age: f64,
    pub sex: Sex,
}

pub fn parse_metadata_csv(text: &str) -> Result<Vec<SubjectMeta>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| UadError::Parse("empty metadata".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != ["id", "label", "age", "sex"] {
        return Err(UadError::Parse(format!("metadata header must be id,label,age,sex, got {header}")));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = |what: &str| UadError::Parse(format!("metadata row {}: {what}: {line}", i + 1));
            if f.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            let role = match f[1] {
                "control" => Role::Control,
                "patient" => Role::Patient,
                _ => return Err(bad("label must be control or patient")),
            };
            let age: f64 = f[2].parse().map_err(|_| bad("bad age"))?;
            let sex = match f[3] {
                "F" | "f" => Sex::F,
                "M" | "m" => Sex::M,
                _ => return Err(bad("sex must be F or M")),
            };
            Ok(SubjectMeta {
                id: f[0].to_string(),
                role,
                age,
                sex,
            })
        })
        .collect()
}

pub fn format_metadata_csv(meta: &[SubjectMeta]) -> String {
    let mut s = String::from("id,label,age,sex\n");
    for m in meta {
        s.push_str(&format!("{},{},{},{:?}\n", m.id, m.role, m.age, m.sex));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectScore {
    pub subject_id: String,
    pub role: Role,
    pub metric: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Operating points for "patient iff metric > threshold" at `-inf`, at every
/// distinct metric value, and at `+inf`, in increasing threshold order.
pub fn roc(points: &[SubjectScore]) -> Result<Vec<OperatingPoint>> {
    let n_pat = points.iter().filter(|p| p.role == Role::Patient).count();
    let n_ctl = points.len() - n_pat;
    if n_pat == 0 || n_ctl == 0 {
        return Err(UadError::SingleClass(format!("{n_ctl} controls, {n_pat} patients")));
    }
    if let Some(p) = points.iter().find(|p| !p.metric.is_finite()) {
        return Err(UadError::InvalidParameter(format!("non-finite metric for {}", p.subject_id)));
    }
    let mut sorted: Vec<&SubjectScore> = points.iter().collect();
    sorted.sort_by(|a, b| a.metric.total_cmp(&b.metric));
    let mut out = vec![OperatingPoint {
        threshold: f64::NEG_INFINITY,
        sensitivity: 1.0,
        specificity: 0.0,
    }];
    // Sweep: after consuming all subjects with metric <= t, those are
    // called controls.
    let (mut fn_, mut tn) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].metric;
        while i < sorted.len() && sorted[i].metric == t {
            match sorted[i].role {
                Role::Patient => fn_ += 1,
                Role::Control => tn += 1,
            }
            i += 1;
        }
        out.push(OperatingPoint {
            threshold: t,
            sensitivity: (n_pat - fn_) as f64 / n_pat as f64,
            specificity: tn as f64 / n_ctl as f64,
        });
    }
    out.push(OperatingPoint {
        threshold: f64::INFINITY,
        sensitivity: 0.0,
        specificity: 1.0,
    });
    Ok(out)
}

/// Trapezoidal area under the ROC curve.
pub fn auc(roc: &[OperatingPoint]) -> f64 {
    roc.windows(2)
        .map(|w| {
            let (x0, x1) = (1.0 - w[0].specificity, 1.0 - w[1].specificity);
            0.5 * (x0 - x1) * (w[0].sensitivity + w[1].sensitivity)
        })
        .sum()
}

/// Maximum of `sqrt(sens * spec)` with its threshold; ties go to the
/// point with higher specificity.
pub fn best_gmean(roc: &[OperatingPoint]) -> Result<(f64, f64)> {
    let mut best: Option<(f64, OperatingPoint)> = None;
    for p in roc {
        let g = (p.sensitivity * p.specificity).sqrt();
        let better = match best {
            None => true,
            Some((bg, bp)) => g > bg || (g == bg && p.specificity > bp.specificity),
        };
        if better {
            best = Some((g, *p));
        }
    }
    best.map(|(g, p)| (g, p.threshold))
        .ok_or_else(|| UadError::InvalidParameter("empty ROC".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub train_controls: Vec<String>,
    pub test_controls: Vec<String>,
    pub train_patients: Vec<String>,
    pub test_patients: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FoldConfig {
    pub n_folds: usize,
    pub control_train_frac: f64,
    pub patient_train_frac: f64,
}

impl Default for FoldConfig {
    fn default() -> Self {
        Self {
            n_folds: 10,
            control_train_frac: 0.75,
            patient_train_frac: 0.31,
        }
    }
}

impl FoldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| {
            Err(UadError::Config {
                field: format!("folds.{field}"),
                reason: reason.into(),
            })
        };
        if self.n_folds == 0 {
            return bad("n_folds", "must be >= 1");
        }
        if !(self.control_train_frac > 0.0 && self.control_train_frac < 1.0) {
            return bad("control_train_frac", "must lie in (0, 1)");
        }
        if !(self.patient_train_frac >= 0.0 && self.patient_train_frac < 1.0) {
            return bad("patient_train_frac", "must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Sex x age-tercile stratum of a subject, terciles taken over `cuts`.
fn stratum(m: &SubjectMeta, cuts: (f64, f64)) -> (Sex, u8) {
    let t = if m.age <= cuts.0 {
        0
    } else if m.age <= cuts.1 {
        1
    } else {
        2
    };
    (m.sex, t)
}

/// Stratified random split of one role group. The train total is `frac * n`
/// rounded up or down at random (in expectation exact), clamped so that the
/// test set is never empty and the train set has at least `min_train`.
fn split_group(
    group: &[&SubjectMeta],
    frac: f64,
    min_train: usize,
    cuts: (f64, f64),
    name: &str,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<String>, Vec<String>)> {
    let n = group.len();
    if n < min_train + 1 {
        return Err(UadError::StratumTooSmall {
            stratum: name.to_string(),
            size: n,
        });
    }
    let exact = frac * n as f64;
    let mut total = exact.floor() as usize;
    if rng.random::<f64>() < exact - exact.floor() {
        total += 1;
    }
    let total = total.clamp(min_train, n - 1);

    let mut strata: BTreeMap<(Sex, u8), Vec<&SubjectMeta>> = BTreeMap::new();
    for m in group {
        strata.entry(stratum(m, cuts)).or_default().push(m);
    }
    // largest-remainder apportionment with random tie-breaking
    let keys: Vec<(Sex, u8)> = strata.keys().copied().collect();
    let mut quota: Vec<usize> = Vec::with_capacity(keys.len());
    let mut rema: Vec<(f64, f64, usize)> = Vec::with_capacity(keys.len());
    for (i, k) in keys.iter().enumerate() {
        let q = total as f64 * strata[k].len() as f64 / n as f64;
        quota.push(q.floor() as usize);
        rema.push((q - q.floor(), rng.random::<f64>(), i));
    }
    rema.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    let mut left = total - quota.iter().sum::<usize>();
    for &(_, _, i) in rema.iter().cycle() {
        if left == 0 {
            break;
        }
        if quota[i] < strata[&keys[i]].len() {
            quota[i] += 1;
            left -= 1;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, k) in keys.iter().enumerate() {
        let mut members: Vec<&SubjectMeta> = strata[k].clone();
        members.sort_by(|a, b| a.id.cmp(&b.id));
        members.shuffle(rng);
        for (j, m) in members.iter().enumerate() {
            if j < quota[i] {
                train.push(m.id.clone());
            } else {
                test.push(m.id.clone());
            }
        }
    }
    train.sort();
    test.sort();
    Ok((train, test))
}

/// `n_folds` independent stratified splits of controls and patients.
pub fn make_folds(meta: &[SubjectMeta], config: &FoldConfig, seed: u64) -> Result<Vec<Fold>> {
    config.validate()?;
    let ages: Vec<f64> = meta.iter().map(|m| m.age).collect();
    let cuts = (
        quantile(&ages, 1.0 / 3.0).unwrap_or(0.0),
        quantile(&ages, 2.0 / 3.0).unwrap_or(0.0),
    );
    let controls: Vec<&SubjectMeta> = meta.iter().filter(|m| m.role == Role::Control).collect();
    let patients: Vec<&SubjectMeta> = meta.iter().filter(|m| m.role == Role::Patient).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..config.n_folds)
        .map(|_| {
            let (train_controls, test_controls) =
                split_group(&controls, config.control_train_frac, 1, cuts, "controls", &mut rng)?;
            let (train_patients, test_patients) =
                split_group(&patients, config.patient_train_frac, 0, cuts, "patients", &mut rng)?;
            Ok(Fold {
                train_controls,
                test_controls,
                train_patients,
                test_patients,
            })
        })
        .collect()
}

/// Smallest and largest train/test sizes across folds, per role.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FoldSizeRanges {
    pub train_controls: (usize, usize),
    pub test_controls: (usize, usize),
    pub train_patients: (usize, usize),
    pub test_patients: (usize, usize),
}

pub fn fold_size_ranges(folds: &[Fold]) -> FoldSizeRanges {
    let range = |f: &dyn Fn(&Fold) -> usize| {
        let v: Vec<usize> = folds.iter().map(f).collect();
        (v.iter().copied().min().unwrap_or(0), v.iter().copied().max().unwrap_or(0))
    };
    FoldSizeRanges {
        train_controls: range(&|f| f.train_controls.len()),
        test_controls: range(&|f| f.test_controls.len()),
        train_patients: range(&|f| f.train_patients.len()),
        test_patients: range(&|f| f.test_patients.len()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub region: String,
    pub fold: usize,
    pub gmean: f64,
    pub threshold: f64,
}

pub fn format_results_csv(rows: &[ResultRow]) -> String {
    let mut s = String::from("method,region,fold,gmean,threshold\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.method, r.region, r.fold, r.gmean, r.threshold));
    }
    s
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some("method,region,fold,gmean,threshold") => {}
        other => return Err(UadError::Parse(format!("bad results header {other:?}"))),
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || UadError::Parse(format!("bad results row: {line}"));
            if f.len() != 5 {
                return Err(bad());
            }
            Ok(ResultRow {
                method: f[0].to_string(),
                region: f[1].to_string(),
                fold: f[2].parse().map_err(|_| bad())?,
                gmean: f[3].parse().map_err(|_| bad())?,
                threshold: f[4].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}
