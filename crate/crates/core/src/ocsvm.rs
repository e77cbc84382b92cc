//! ν-one-class SVM with a Gaussian kernel, fitted by SMO on the dual
//!
//! ```text
//! min_a  1/2 aᵀ K a   s.t.  Σ a_i = 1,  0 <= a_i <= 1/(ν n)
//! ```
//!
//! and an ensemble that averages member decision functions.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{model_header, open_model, ByteReader, ByteWriter, ModelKind};
use crate::error::{Result, UadError};

pub fn gaussian_kernel(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// `1 / (M * v)` where `v` is the mean per-coordinate (population) variance.
pub fn default_gamma(samples: &[Vec<f64>]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(UadError::NotEnoughSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let m = samples[0].len();
    let n = samples.len() as f64;
    let mut mean = vec![0.0; m];
    for s in samples {
        mean.iter_mut().zip(s).for_each(|(a, b)| *a += b / n);
    }
    let mut var_sum = 0.0;
    for s in samples {
        var_sum += s.iter().zip(&mean).map(|(x, mu)| (x - mu).powi(2)).sum::<f64>() / n;
    }
    let mean_var = var_sum / m as f64;
    if !(mean_var > 0.0) {
        return Err(UadError::ZeroVariance);
    }
    Ok(1.0 / (m as f64 * mean_var))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub tol: f64,
    /// Iteration cap as a multiple of the sample count.
    pub max_iter_per_sample: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iter_per_sample: 100_000,
        }
    }
}

/// Fitted one-class SVM: `f(z) = Σ a_i k(z_i, z) - rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct OcsvmModel {
    pub support_vectors: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    pub rho: f64,
    pub gamma: f64,
    pub nu: f64,
    /// Training indices of the support vectors.
    pub support_indices: Vec<usize>,
    pub n_train: usize,
    pub iterations: usize,
}

/// Full dual solution, including zero coefficients.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub objective: f64,
    pub iterations: usize,
    pub max_violation: f64,
}

/// SMO with maximal-violating-pair selection on a precomputed kernel
/// matrix (row-major `n x n`).
pub fn solve_dual(kernel: &[f64], n: usize, nu: f64, config: &SolverConfig) -> Result<DualSolution> {
    if n < 2 {
        return Err(UadError::NotEnoughSamples { needed: 2, got: n });
    }
    if !(nu > 0.0 && nu < 1.0) {
        return Err(UadError::InvalidParameter(format!("nu must lie in (0, 1), got {nu}")));
    }
    if nu * (n as f64) < 1.0 {
        return Err(UadError::InvalidParameter(format!(
            "nu * n = {} must be >= 1",
            nu * n as f64
        )));
    }
    let c = 1.0 / (nu * n as f64);
    let k = |i: usize, j: usize| kernel[i * n + j];

    // Fill the first floor(ν n) coefficients at the bound, the remainder on
    // the next one.
    let mut alpha = vec![0.0; n];
    let mut left = 1.0;
    for a in alpha.iter_mut() {
        let v = c.min(left);
        *a = v;
        left -= v;
        if left <= 0.0 {
            break;
        }
    }
    let mut grad = vec![0.0; n];
    for (j, &aj) in alpha.iter().enumerate() {
        if aj != 0.0 {
            for (i, g) in grad.iter_mut().enumerate() {
                *g += aj * k(i, j);
            }
        }
    }

    let max_iter = config.max_iter_per_sample.saturating_mul(n).max(1);
    let mut iterations = 0;
    let mut violation;
    loop {
        // i: can increase (a_i < C) with the smallest gradient;
        // j: can decrease (a_j > 0) with the largest gradient.
        let mut i_sel = usize::MAX;
        let mut g_min = f64::INFINITY;
        let mut j_sel = usize::MAX;
        let mut g_max = f64::NEG_INFINITY;
        for t in 0..n {
            if alpha[t] < c && grad[t] < g_min {
                g_min = grad[t];
                i_sel = t;
            }
            if alpha[t] > 0.0 && grad[t] > g_max {
                g_max = grad[t];
                j_sel = t;
            }
        }
        violation = g_max - g_min;
        if violation <= config.tol || i_sel == usize::MAX || j_sel == usize::MAX {
            break;
        }
        if iterations >= max_iter {
            return Err(UadError::NotConverged {
                iterations,
                violation,
            });
        }
        iterations += 1;
        let (i, j) = (i_sel, j_sel);
        let curv = (k(i, i) + k(j, j) - 2.0 * k(i, j)).max(1e-12);
        let mut delta = (grad[j] - grad[i]) / curv;
        delta = delta.min(c - alpha[i]).min(alpha[j]);
        if delta <= 0.0 {
            // numerical stall on a pair that is already optimal
            break;
        }
        alpha[i] += delta;
        alpha[j] -= delta;
        if c - alpha[i] < 1e-15 * c {
            alpha[i] = c;
        }
        if alpha[j] < 1e-15 * c {
            alpha[j] = 0.0;
        }
        for (t, g) in grad.iter_mut().enumerate() {
            *g += delta * (k(t, i) - k(t, j));
        }
    }

    // ρ: mean gradient over free vectors, else the midpoint of the bounds.
    let free: Vec<f64> = (0..n).filter(|&t| alpha[t] > 0.0 && alpha[t] < c).map(|t| grad[t]).collect();
    let rho = if free.is_empty() {
        let ub = (0..n).filter(|&t| alpha[t] < c).map(|t| grad[t]).fold(f64::INFINITY, f64::min);
        let lb = (0..n).filter(|&t| alpha[t] > 0.0).map(|t| grad[t]).fold(f64::NEG_INFINITY, f64::max);
        match (ub.is_finite(), lb.is_finite()) {
            (true, true) => 0.5 * (ub + lb),
            (false, true) => lb,
            (true, false) => ub,
            _ => 0.0,
        }
    } else {
        free.iter().sum::<f64>() / free.len() as f64
    };
    let objective = 0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * g).sum::<f64>();
    Ok(DualSolution {
        alpha,
        rho,
        objective,
        iterations,
        max_violation: violation.max(0.0),
    })
}

pub fn kernel_matrix(samples: &[Vec<f64>], gamma: f64) -> Vec<f64> {
    let n = samples.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = 1.0;
        for j in 0..i {
            let v = gaussian_kernel(&samples[i], &samples[j], gamma);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

pub fn fit_ocsvm(samples: &[Vec<f64>], nu: f64, gamma: f64, config: &SolverConfig) -> Result<OcsvmModel> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(UadError::InvalidParameter(format!("gamma must be > 0, got {gamma}")));
    }
    if let Some(s) = samples.iter().find(|s| s.len() != samples[0].len()) {
        return Err(UadError::ShapeMismatch(format!(
            "sample of length {} vs {}",
            s.len(),
            samples[0].len()
        )));
    }
    let n = samples.len();
    let k = kernel_matrix(samples, gamma);
    let sol = solve_dual(&k, n, nu, config)?;
    let support_indices: Vec<usize> = (0..n).filter(|&i| sol.alpha[i] > 0.0).collect();
    Ok(OcsvmModel {
        support_vectors: support_indices.iter().map(|&i| samples[i].clone()).collect(),
        alphas: support_indices.iter().map(|&i| sol.alpha[i]).collect(),
        rho: sol.rho,
        gamma,
        nu,
        support_indices,
        n_train: n,
        iterations: sol.iterations,
    })
}

impl OcsvmModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.first().map_or(0, Vec::len)
    }

    /// `Σ a_i k(z_i, z) - rho`; positive inside the estimated support.
    pub fn decision(&self, z: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.alphas)
            .map(|(sv, a)| a * gaussian_kernel(sv, z, self.gamma))
            .sum::<f64>()
            - self.rho
    }

    fn write(&self, w: &mut ByteWriter) {
        w.f64(self.rho);
        w.f64(self.gamma);
        w.f64(self.nu);
        w.usize(self.n_train);
        w.usize(self.iterations);
        w.usize(self.dim());
        w.usize(self.alphas.len());
        for ((sv, a), idx) in self.support_vectors.iter().zip(&self.alphas).zip(&self.support_indices) {
            w.usize(*idx);
            w.f64(*a);
            for &v in sv {
                w.f64(v);
            }
        }
    }

    fn read(r: &mut ByteReader) -> Result<Self> {
        let rho = r.f64()?;
        let gamma = r.f64()?;
        let nu = r.f64()?;
        let n_train = r.usize()?;
        let iterations = r.usize()?;
        let dim = r.usize()?;
        let n_sv = r.usize()?;
        let mut model = OcsvmModel {
            support_vectors: Vec::with_capacity(n_sv),
            alphas: Vec::with_capacity(n_sv),
            rho,
            gamma,
            nu,
            support_indices: Vec::with_capacity(n_sv),
            n_train,
            iterations,
        };
        for _ in 0..n_sv {
            model.support_indices.push(r.usize()?);
            model.alphas.push(r.f64()?);
            model.support_vectors.push((0..dim).map(|_| r.f64()).collect::<Result<_>>()?);
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub n_models: usize,
    pub n_per_model: usize,
    pub nu: f64,
    /// Kernel width; `None` applies [`default_gamma`] to each subsample.
    pub gamma: Option<f64>,
    pub solver: SolverConfig,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n_models: 5,
            n_per_model: 500,
            nu: 0.03,
            gamma: None,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcsvmEnsemble {
    pub models: Vec<OcsvmModel>,
}

/// Fits each member on its own seeded subsample (without replacement)
/// of the latent pool.
pub fn fit_ensemble(latents: &[Vec<f64>], config: &EnsembleConfig, seed: u64) -> Result<OcsvmEnsemble> {
    if config.n_models == 0 {
        return Err(UadError::InvalidParameter("n_models must be >= 1".into()));
    }
    if latents.len() < config.n_per_model {
        return Err(UadError::NotEnoughSamples {
            needed: config.n_per_model,
            got: latents.len(),
        });
    }
    let mut models = Vec::with_capacity(config.n_models);
    for m in 0..config.n_models {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(m as u64));
        let idx = sample(&mut rng, latents.len(), config.n_per_model);
        let subset: Vec<Vec<f64>> = idx.iter().map(|i| latents[i].clone()).collect();
        let gamma = match config.gamma {
            Some(g) => g,
            None => default_gamma(&subset)?,
        };
        models.push(fit_ocsvm(&subset, config.nu, gamma, &config.solver)?);
    }
    OcsvmEnsemble::new(models)
}

impl OcsvmEnsemble {
    pub fn new(models: Vec<OcsvmModel>) -> Result<Self> {
        let first = models
            .first()
            .ok_or_else(|| UadError::InvalidParameter("empty ensemble".into()))?;
        if models.iter().any(|m| m.dim() != first.dim()) {
            return Err(UadError::ShapeMismatch("ensemble members differ in dimension".into()));
        }
        Ok(Self { models })
    }

    pub fn dim(&self) -> usize {
        self.models[0].dim()
    }

    /// Mean of the member decision functions.
    pub fn decision(&self, z: &[f64]) -> f64 {
        self.models.iter().map(|m| m.decision(z)).sum::<f64>() / self.models.len() as f64
    }

    /// Negated mean decision: higher means more anomalous.
    pub fn anomaly_score(&self, z: &[f64]) -> f64 {
        -self.decision(z)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = model_header(ModelKind::Ocsvm);
        w.usize(self.models.len());
        for m in &self.models {
            m.write(&mut w);
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = open_model(bytes, ModelKind::Ocsvm)?;
        let n = r.usize()?;
        let models = (0..n).map(|_| OcsvmModel::read(&mut r)).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Self::new(models)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian_samples(n: usize, m: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..m).map(|_| rng.sample(StandardNormal)).collect()).collect()
    }

    #[test]
    fn kernel_basics() {
        let a = [0.3, -1.0, 2.0];
        assert_eq!(gaussian_kernel(&a, &a, 0.7), 1.0);
        assert!((gaussian_kernel(&[0.0, 0.0], &[1.0, 0.0], 1.0) - (-1f64).exp()).abs() < 1e-15);
        let b = [1.0, 0.5, -0.2];
        assert_eq!(gaussian_kernel(&a, &b, 0.4), gaussian_kernel(&b, &a, 0.4));
        let k = gaussian_kernel(&a, &b, 0.4);
        assert!(k > 0.0 && k <= 1.0);
    }

    #[test]
    fn default_gamma_cases() {
        // coordinates ±1 → population variance 1 each
        let s = vec![vec![1.0, -1.0], vec![-1.0, 1.0], vec![1.0, 1.0], vec![-1.0, -1.0]];
        assert!((default_gamma(&s).unwrap() - 0.5).abs() < 1e-15);
        let scaled: Vec<Vec<f64>> = s.iter().map(|v| v.iter().map(|x| 3.0 * x).collect()).collect();
        let ratio = (1.0 / default_gamma(&scaled).unwrap()) / (1.0 / default_gamma(&s).unwrap());
        assert!((ratio - 9.0).abs() < 1e-12);
        assert!(matches!(default_gamma(&[vec![1.0], vec![1.0]]), Err(UadError::ZeroVariance)));
        assert!(default_gamma(&[vec![1.0]]).is_err());
    }

    #[test]
    fn default_gamma_matches_direct_variance() {
        let s = gaussian_samples(50, 4, 3);
        let n = s.len() as f64;
        let mut total = 0.0;
        for j in 0..4 {
            let mu = s.iter().map(|v| v[j]).sum::<f64>() / n;
            total += s.iter().map(|v| (v[j] - mu).powi(2)).sum::<f64>() / n;
        }
        let expect = 1.0 / (4.0 * (total / 4.0));
        assert!((default_gamma(&s).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn two_points_split_evenly() {
        let s = vec![vec![0.0, 0.0], vec![1.0, 2.0]];
        let m = fit_ocsvm(&s, 0.9, 0.5, &SolverConfig::default()).unwrap();
        assert_eq!(m.alphas.len(), 2);
        for a in &m.alphas {
            assert!((a - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_validation() {
        let s = gaussian_samples(10, 2, 1);
        let cfg = SolverConfig::default();
        assert!(fit_ocsvm(&s, 0.0, 1.0, &cfg).is_err());
        assert!(fit_ocsvm(&s, 1.0, 1.0, &cfg).is_err());
        assert!(fit_ocsvm(&s, 0.05, 1.0, &cfg).is_err()); // ν n < 1
        assert!(fit_ocsvm(&s, 0.5, 0.0, &cfg).is_err());
    }

    #[test]
    fn feasibility_and_kkt() {
        let s = gaussian_samples(200, 3, 7);
        let nu = 0.1;
        let cfg = SolverConfig::default();
        let m = fit_ocsvm(&s, nu, default_gamma(&s).unwrap(), &cfg).unwrap();
        let c = 1.0 / (nu * 200.0);
        assert!((m.alphas.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!(m.alphas.iter().all(|&a| a > 0.0 && a <= c));
        for (i, z) in s.iter().enumerate() {
            let f = m.decision(z);
            let a = m.support_indices.iter().position(|&k| k == i).map_or(0.0, |p| m.alphas[p]);
            if a == 0.0 {
                assert!(f >= -cfg.tol, "non-SV inside margin: f = {f}");
            } else if a < c {
                assert!(f.abs() <= cfg.tol, "free SV off the boundary: f = {f}");
            } else {
                assert!(f <= cfg.tol, "bounded SV outside: f = {f}");
            }
        }
    }

    #[test]
    fn far_point_decision_tends_to_minus_rho() {
        let s = gaussian_samples(40, 2, 2);
        let m = fit_ocsvm(&s, 0.2, 1.0, &SolverConfig::default()).unwrap();
        assert!((m.decision(&[1e3, -1e3]) + m.rho).abs() < 1e-12);
    }

    #[test]
    fn permutation_invariance() {
        let s = gaussian_samples(60, 2, 5);
        let mut rev = s.clone();
        rev.reverse();
        let cfg = SolverConfig { tol: 1e-10, ..Default::default() };
        let a = fit_ocsvm(&s, 0.2, 0.5, &cfg).unwrap();
        let b = fit_ocsvm(&rev, 0.2, 0.5, &cfg).unwrap();
        for z in gaussian_samples(10, 2, 99) {
            assert!((a.decision(&z) - b.decision(&z)).abs() < 1e-7);
        }
    }

    #[test]
    fn ensemble_mean_and_serialization() {
        let lat = gaussian_samples(300, 3, 4);
        let cfg = EnsembleConfig {
            n_models: 3,
            n_per_model: 100,
            nu: 0.05,
            ..Default::default()
        };
        let e = fit_ensemble(&lat, &cfg, 17).unwrap();
        let z = [0.4, -0.1, 2.0];
        let mean = e.models.iter().map(|m| m.decision(&z)).sum::<f64>() / 3.0;
        assert!((e.decision(&z) - mean).abs() < 1e-15);
        assert_eq!(e.anomaly_score(&z), -e.decision(&z));
        assert_eq!(OcsvmEnsemble::from_bytes(&e.to_bytes()).unwrap(), e);
        assert_eq!(fit_ensemble(&lat, &cfg, 17).unwrap(), e);

        let single = OcsvmEnsemble::new(vec![e.models[0].clone()]).unwrap();
        assert_eq!(single.decision(&z), e.models[0].decision(&z));
        let same = OcsvmEnsemble::new(vec![e.models[1].clone(); 4]).unwrap();
        assert!((same.decision(&z) - e.models[1].decision(&z)).abs() < 1e-15);

        assert!(matches!(
            fit_ensemble(&lat[..50], &cfg, 1),
            Err(UadError::NotEnoughSamples { .. })
        ));
    }
}
