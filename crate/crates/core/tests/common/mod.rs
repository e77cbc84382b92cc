//! Independent oracles shared by the integration and acceptance suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uad_core::patching::{Patch, PatchPair};
use uad_core::sae::{Architecture, BlockSpec, Layer, Mode, SaeModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Two-block toy auto-encoder on 5x5x2 patches with every parameter and
/// batch-norm statistic randomized.
pub fn toy_model(alpha: f64, seed: u64) -> SaeModel {
    let arch = Architecture {
        channels: 2,
        patch_side: 5,
        blocks: vec![
            BlockSpec { kernel: (3, 3), stride: (1, 1), filters: 3 },
            BlockSpec { kernel: (3, 3), stride: (1, 1), filters: 4 },
        ],
    };
    let mut m = SaeModel::init(&arch, alpha, seed).unwrap();
    let mut r = rng(seed + 1);
    for l in m.layers_mut() {
        if let Layer::BatchNorm(b) = l {
            b.gamma.iter_mut().for_each(|g| *g = r.random_range(0.5..1.5));
            b.beta.iter_mut().for_each(|g| *g = r.random_range(-0.5..0.5));
            b.running_mean.iter_mut().for_each(|g| *g = r.random_range(-0.2..0.2));
            b.running_var.iter_mut().for_each(|g| *g = r.random_range(0.5..2.0));
        }
    }
    m
}

pub fn random_pair(side: usize, ch: usize, seed: u64) -> PatchPair {
    let mut r = rng(seed);
    let mut mk = |id: &str| Patch {
        side,
        channels: ch,
        window: (0..side * side * ch).map(|_| r.random_range(-1.0..1.0)).collect(),
        location: [side / 2, side / 2, 0],
        subject_id: id.into(),
    };
    PatchPair { a: mk("a"), b: mk("b") }
}

/// Worst per-tensor relative error `|g - fd| / max(|g|, |fd|)` between the
/// analytic gradient and central finite differences with step `h`.
pub fn gradient_check(model: &SaeModel, pairs: &[PatchPair], mode: Mode, h: f64) -> f64 {
    let refs: Vec<&PatchPair> = pairs.iter().collect();
    let analytic = model.batch_loss(&refs, mode, true).unwrap().grads.unwrap();
    let n_tensors = analytic.tensors.len();
    let mut worst: f64 = 0.0;
    for t in 0..n_tensors {
        let len = analytic.tensors[t].len();
        let mut fd = vec![0.0; len];
        for k in 0..len {
            let mut plus = model.clone();
            plus.params_mut()[t][k] += h;
            let mut minus = model.clone();
            minus.params_mut()[t][k] -= h;
            let lp = plus.batch_loss(&refs, mode, false).unwrap().loss;
            let lm = minus.batch_loss(&refs, mode, false).unwrap().loss;
            fd[k] = (lp - lm) / (2.0 * h);
        }
        let a = &analytic.tensors[t];
        let diff = a.iter().zip(&fd).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nf = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = na.max(nf);
        if scale > 0.0 {
            worst = worst.max(diff / scale);
        }
    }
    worst
}

/// Draws from the generative model of one multiple-scale t component:
/// `W_m ~ Gamma(alpha_m, rate beta_m)`, `y_m ~ N(0, A_m / W_m)`, `z = mu + D y`.
pub fn sample_mst(p: &uad_core::mmst::MstParams, n: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand_distr::{Distribution, Gamma, StandardNormal};
    let mut r = rng(seed);
    let m = p.mu.len();
    let gammas: Vec<Gamma<f64>> = (0..m).map(|j| Gamma::new(p.alpha[j], 1.0 / p.beta[j]).unwrap()).collect();
    (0..n)
        .map(|_| {
            let y: Vec<f64> = (0..m)
                .map(|j| {
                    let w = gammas[j].sample(&mut r);
                    let g: f64 = r.sample(StandardNormal);
                    g * (p.a[j] / w).sqrt()
                })
                .collect();
            (0..m)
                .map(|i| p.mu[i] + (0..m).map(|j| p.directions[j][i] * y[j]).sum::<f64>())
                .collect()
        })
        .collect()
}

/// Axis-free 2-D component rotated by `theta`.
pub fn mst_2d(mu: [f64; 2], theta: f64, a: [f64; 2], alpha: [f64; 2]) -> uad_core::mmst::MstParams {
    let (s, c) = theta.sin_cos();
    uad_core::mmst::MstParams {
        mu: mu.to_vec(),
        directions: vec![vec![c, s], vec![-s, c]],
        a: a.to_vec(),
        alpha: alpha.to_vec(),
        beta: alpha.to_vec(),
    }
}
