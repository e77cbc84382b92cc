mod common;

use std::collections::BTreeMap;

use rand::Rng;
use uad_core::maps::{
    abnormality_threshold, binarize, latent_score_map, recon_error_map, region_aggregate, scoring_locations,
    AnomalyMap, LatentScorer,
};
use uad_core::mmst::{fit_mmst, MmstConfig, MmstScorer};
use uad_core::ocsvm::{fit_ensemble, EnsembleConfig};
use uad_core::patching::{extract_patch, sample_pairs, Subject};
use uad_core::phantom::{generate_normal, inject_anomaly, AnomalySpec, PhantomSpec};
use uad_core::sae::{train_sae, Architecture, BlockSpec, SaeModel, TrainConfig};
use uad_core::volume::{fit_normalization, normalize, LabelAtlas, Mask, Volume};

fn random_map(dims: [usize; 3], seed: u64) -> AnomalyMap {
    let mut r = common::rng(seed);
    let mut m = AnomalyMap::empty(dims);
    for (s, v) in m.scores.iter_mut().zip(m.valid.iter_mut()) {
        *s = r.random_range(-5.0..5.0);
        *v = r.random_bool(0.8);
    }
    m
}

/// Linear-interpolation quantile by sorting.
fn sorted_quantile(mut xs: Vec<f64>, q: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let pos = q * (xs.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    xs[lo] + (pos - lo as f64) * (xs[hi] - xs[lo])
}

#[test]
fn threshold_of_one_to_hundred() {
    let dims = [10, 10, 1];
    let locs: Vec<[usize; 3]> = (0..100).map(|i| [i % 10, i / 10, 0]).collect();
    let scores: Vec<f64> = (1..=100).map(f64::from).collect();
    let m = AnomalyMap::from_scores(dims, &locs, &scores).unwrap();
    let t = abnormality_threshold(&[&m], 0.98).unwrap();
    assert!((t - 98.02).abs() < 1e-12, "{t}");
    assert_eq!(t, sorted_quantile(scores, 0.98));
}

#[test]
fn pooled_threshold_matches_sorted_concatenation() {
    let maps: Vec<AnomalyMap> = (0..3).map(|s| random_map([9, 7, 4], s)).collect();
    let refs: Vec<&AnomalyMap> = maps.iter().collect();
    let pooled: Vec<f64> = maps.iter().flat_map(|m| m.valid_scores().collect::<Vec<_>>()).collect();
    for q in [0.9, 0.95, 0.98, 0.999] {
        let t = abnormality_threshold(&refs, q).unwrap();
        assert!((t - sorted_quantile(pooled.clone(), q)).abs() < 1e-12);
    }
    let mut flat = AnomalyMap::empty([9, 7, 4]);
    flat.valid.iter_mut().for_each(|v| *v = true);
    flat.scores.iter_mut().for_each(|s| *s = 2.5);
    assert_eq!(abnormality_threshold(&[&flat], 0.98).unwrap(), 2.5);
    assert!(abnormality_threshold(&[&AnomalyMap::empty([2, 2, 2])], 0.98).is_err());
    assert!(abnormality_threshold(&refs, 0.5).is_err());
}

fn octant_atlas(dims: [usize; 3], names: BTreeMap<u32, String>, relabel: impl Fn(u32) -> u32) -> LabelAtlas {
    let [nx, ny, nz] = dims;
    let mut labels = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let l = 1 + u32::from(x >= nx / 2) + 2 * u32::from(y >= ny / 2) + 4 * u32::from(z >= nz / 2);
                labels.push(relabel(l));
            }
        }
    }
    LabelAtlas::new(dims, labels, names).unwrap()
}

#[test]
fn region_percentages_match_hand_count() {
    let dims = [8, 6, 4];
    let m = random_map(dims, 30);
    let names: BTreeMap<u32, String> = (1..=8).map(|l| (l, format!("r{l}"))).collect();
    let atlas = octant_atlas(dims, names.clone(), |l| l);
    let t = 1.0;
    let report = region_aggregate(&binarize(&m, t), &atlas).unwrap();
    for l in 1..=8u32 {
        let (mut n, mut a) = (0, 0);
        for (i, &lab) in atlas.labels().iter().enumerate() {
            if lab == l && m.valid[i] {
                n += 1;
                a += usize::from(m.scores[i] > t);
            }
        }
        let row = report.get(l).unwrap();
        assert_eq!((row.n_voxels, row.n_abnormal), (n, a));
        assert_eq!(row.pct, Some(100.0 * a as f64 / n as f64));
    }
    let whole = report.get(0).unwrap();
    assert_eq!(whole.n_voxels, m.valid.iter().filter(|&&v| v).count());

    // permuted ids give the same per-name percentages
    let perm = [0u32, 5, 3, 8, 1, 7, 2, 6, 4];
    let pnames: BTreeMap<u32, String> = (1..=8).map(|l| (perm[l as usize], format!("r{l}"))).collect();
    let patlas = octant_atlas(dims, pnames, |l| perm[l as usize]);
    let preport = region_aggregate(&binarize(&m, t), &patlas).unwrap();
    for l in 1..=8u32 {
        assert_eq!(preport.get(perm[l as usize]).unwrap().pct, report.get(l).unwrap().pct);
    }
}

#[test]
fn raising_threshold_never_raises_percentages() {
    let dims = [8, 6, 4];
    let m = random_map(dims, 31);
    let names: BTreeMap<u32, String> = (1..=8).map(|l| (l, format!("r{l}"))).collect();
    let atlas = octant_atlas(dims, names, |l| l);
    let mut prev: Option<Vec<Option<f64>>> = None;
    for t in [-6.0, -2.0, 0.0, 0.5, 3.0, 6.0] {
        let cur: Vec<Option<f64>> = region_aggregate(&binarize(&m, t), &atlas)
            .unwrap()
            .rows
            .iter()
            .map(|r| r.pct)
            .collect();
        if let Some(p) = &prev {
            for (a, b) in p.iter().zip(&cur) {
                assert!(b.unwrap() <= a.unwrap());
            }
        }
        prev = Some(cur);
    }
    assert!(prev.unwrap().iter().all(|p| *p == Some(0.0)));
}

#[test]
fn training_pool_fraction_is_one_minus_q() {
    let maps: Vec<AnomalyMap> = (0..6).map(|s| random_map([20, 20, 10], 40 + s)).collect();
    let refs: Vec<&AnomalyMap> = maps.iter().collect();
    let t = abnormality_threshold(&refs, 0.98).unwrap();
    let (mut a, mut n) = (0usize, 0usize);
    for m in &maps {
        let b = binarize(m, t);
        a += b.abnormal.iter().filter(|&&x| x).count();
        n += b.valid.iter().filter(|&&x| x).count();
    }
    let frac = a as f64 / n as f64;
    let half = 2.5758 * (0.02 * 0.98 / n as f64).sqrt();
    assert!((frac - 0.02).abs() <= half, "{frac}");
}

struct Constant;

impl LatentScorer for Constant {
    fn latent_dim(&self) -> usize {
        8
    }

    fn anomaly_score(&self, _: &[f64]) -> f64 {
        0.25
    }
}

fn small_arch() -> Architecture {
    Architecture {
        channels: 3,
        patch_side: 7,
        blocks: vec![
            BlockSpec { kernel: (3, 3), stride: (1, 1), filters: 4 },
            BlockSpec { kernel: (5, 5), stride: (1, 1), filters: 8 },
        ],
    }
}

fn spec() -> PhantomSpec {
    PhantomSpec {
        dims: [24, 24, 16],
        ..Default::default()
    }
}

fn normalized_subjects(seeds: &[u64]) -> (Vec<Subject>, uad_core::volume::NormalizationStats) {
    let raw: Vec<(Volume, Mask)> = seeds.iter().map(|&s| generate_normal(&spec(), s).unwrap()).collect();
    let vols: Vec<Volume> = raw.iter().map(|(v, _)| v.clone()).collect();
    let stats = fit_normalization(&vols).unwrap();
    let subjects = raw
        .into_iter()
        .enumerate()
        .map(|(i, (v, mask))| Subject {
            id: format!("n{i}"),
            volume: normalize(&v, &stats).unwrap(),
            mask,
        })
        .collect();
    (subjects, stats)
}

#[test]
fn map_values_match_direct_recomputation() {
    let (subjects, _) = normalized_subjects(&[1]);
    let s = &subjects[0];
    let model = SaeModel::init(&small_arch(), 1e-3, 4).unwrap();
    let locs = scoring_locations(&s.mask, 7);
    assert!(!locs.is_empty());
    let recon = recon_error_map(&model, &s.volume, &locs).unwrap();
    let constant = latent_score_map(&Constant, &model, &s.volume, &locs).unwrap();
    for &loc in locs.iter().step_by(17) {
        let p = extract_patch(&s.volume, loc, 7, "").unwrap();
        let x = model.decode(&model.encode(&p).unwrap()).unwrap();
        let direct: f64 = p.window.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
        let got = recon.scores[recon.index(loc)];
        assert!((got - direct).abs() <= 1e-9 * direct.max(1.0));
        assert_eq!(constant.scores[constant.index(loc)], 0.25);
    }
    assert_eq!(recon.n_valid(), locs.len());
    assert!(constant.valid_scores().all(|v| v == 0.25));
}

#[test]
fn high_contrast_blob_scores_above_background() {
    let (train, stats) = normalized_subjects(&[11, 12, 13]);
    let pairs = sample_pairs(&train, 1500, 7, 1).unwrap();
    let val = sample_pairs(&train, 150, 7, 2).unwrap();
    let cfg = TrainConfig {
        epochs: 6,
        batch_size: 50,
        ..Default::default()
    };
    let model = train_sae(&small_arch(), &pairs, &val, &cfg).unwrap().model;

    let latents: Vec<Vec<f64>> = pairs
        .iter()
        .flat_map(|p| [model.encode(&p.a).unwrap(), model.encode(&p.b).unwrap()])
        .collect();
    let ocsvm = fit_ensemble(&latents, &EnsembleConfig { n_per_model: 300, ..Default::default() }, 3).unwrap();
    let mmst_cfg = MmstConfig {
        k: 2,
        warmup: 300,
        burn_in: 100,
        refresh_period: 200,
        heldout: 100,
        ..Default::default()
    };
    let (mmst, _) = fit_mmst(&latents, &mmst_cfg, 5).unwrap();
    let mmst = MmstScorer::new(mmst);

    let (v, fg) = generate_normal(&spec(), 99).unwrap();
    let blob = AnomalySpec {
        center: [12.0, 12.0, 8.0],
        radius: 6.0,
        flat_fraction: 0.7,
        contrast: 10.0,
        signs: vec![1.0, -1.0, 1.0],
    };
    let (v, truth) = inject_anomaly(&v, &fg, &spec(), &blob).unwrap();
    let v = normalize(&v, &stats).unwrap();
    let locs = scoring_locations(&fg, 7);
    let maps = [
        ("recon", recon_error_map(&model, &v, &locs).unwrap()),
        ("ocsvm", latent_score_map(&ocsvm, &model, &v, &locs).unwrap()),
        ("mmst", latent_score_map(&mmst, &model, &v, &locs).unwrap()),
    ];
    let core = blob.flat_fraction * blob.radius;
    let [nx, ny, _] = fg.dims();
    let interior = |i: usize| {
        let p = [(i % nx) as f64, ((i / nx) % ny) as f64, (i / (nx * ny)) as f64];
        (0..3).map(|k| (p[k] - blob.center[k]).powi(2)).sum::<f64>().sqrt() <= core
    };
    for (name, m) in &maps {
        let (mut si, mut ni, mut so, mut no) = (0.0, 0, 0.0, 0);
        for (i, (&s, &valid)) in m.scores.iter().zip(&m.valid).enumerate() {
            if !valid {
                continue;
            }
            if interior(i) {
                si += s;
                ni += 1;
            } else if !truth.data()[i] {
                so += s;
                no += 1;
            }
        }
        assert!(ni > 0 && no > 0);
        let (inside, outside) = (si / ni as f64, so / no as f64);
        assert!(inside > outside, "{name}: inside {inside} vs outside {outside}");
    }
}
