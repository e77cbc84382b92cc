//! Initialization and stochastic-approximation (online) EM.

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::special::solve_shape;
use super::{MmstParams, MmstScorer, MstParams, Posterior};
use crate::error::{Result, UadError};

const A_FLOOR: f64 = 1e-8;
const INIT_A_FLOOR: f64 = 1e-6;
const MIN_MASS: f64 = 1e-12;
const KMEANS_SUBSAMPLE: usize = 10_000;
const LLOYD_ITERS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MmstConfig {
    pub k: usize,
    pub kappa: f64,
    pub t0: f64,
    /// Online steps before the first M-step.
    pub burn_in: usize,
    /// Direction refresh period in steps.
    pub refresh_period: usize,
    /// Size of the initialization buffer.
    pub warmup: usize,
    /// Held-out samples for the log-likelihood trace (capped at a tenth of the data).
    pub heldout: usize,
    pub passes: usize,
    pub diag_every: usize,
}

impl Default for MmstConfig {
    fn default() -> Self {
        Self {
            k: 9,
            kappa: 0.6,
            t0: 100.0,
            burn_in: 500,
            refresh_period: 1000,
            warmup: 2000,
            heldout: 1000,
            passes: 1,
            diag_every: 1000,
        }
    }
}

impl MmstConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| {
            Err(UadError::Config {
                field: format!("mmst.{field}"),
                reason: reason.into(),
            })
        };
        if self.k == 0 {
            return bad("k", "must be >= 1");
        }
        if !(self.kappa > 0.5 && self.kappa <= 1.0) {
            return bad("kappa", "must lie in (0.5, 1]");
        }
        if !(self.t0 >= 0.0 && self.t0.is_finite()) {
            return bad("t0", "must be finite and >= 0");
        }
        if self.refresh_period == 0 {
            return bad("refresh_period", "must be >= 1");
        }
        if self.passes == 0 {
            return bad("passes", "must be >= 1");
        }
        if self.diag_every == 0 {
            return bad("diag_every", "must be >= 1");
        }
        if self.warmup == 0 {
            return bad("warmup", "must be >= 1");
        }
        Ok(())
    }
}

/// `(t + t0)^-kappa`.
pub fn step_size(t: usize, kappa: f64, t0: f64) -> f64 {
    (t as f64 + t0).powf(-kappa)
}

/// Running averages for one component. `s1..s4` are per direction of the
/// current basis; `sz`/`szz` are raw first and second moments used to
/// refresh the basis.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentStats {
    pub s0: f64,
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
    pub s3: Vec<f64>,
    pub s4: Vec<f64>,
    pub sz: Vec<f64>,
    /// Row-major `M x M`.
    pub szz: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    pub components: Vec<ComponentStats>,
}

/// Direction-wise statistics of one sample, before mixing into the averages.
struct SmallStats {
    s0: f64,
    s1: Vec<f64>,
    s2: Vec<f64>,
    s3: Vec<f64>,
    s4: Vec<f64>,
}

fn sample_stats(params: &MmstParams, post: &Posterior, z: &[f64]) -> Vec<SmallStats> {
    params
        .components
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let r = post.resp[k];
            let m = c.dim();
            let mut s = SmallStats {
                s0: r,
                s1: vec![0.0; m],
                s2: vec![0.0; m],
                s3: vec![0.0; m],
                s4: vec![0.0; m],
            };
            for j in 0..m {
                let x: f64 = c.directions[j].iter().zip(z).map(|(d, zi)| d * zi).sum();
                let rw = r * post.w_mean[k][j];
                s.s1[j] = rw * x;
                s.s2[j] = rw * x * x;
                s.s3[j] = rw;
                s.s4[j] = r * post.w_logmean[k][j];
            }
            s
        })
        .collect()
}

impl SuffStats {
    pub fn zeros(k: usize, m: usize) -> Self {
        Self {
            components: (0..k)
                .map(|_| ComponentStats {
                    s0: 0.0,
                    s1: vec![0.0; m],
                    s2: vec![0.0; m],
                    s3: vec![0.0; m],
                    s4: vec![0.0; m],
                    sz: vec![0.0; m],
                    szz: vec![0.0; m * m],
                })
                .collect(),
        }
    }

    /// Batch E-step: averages of the sample statistics over `samples`.
    pub fn from_batch(scorer: &MmstScorer, samples: &[Vec<f64>]) -> Self {
        let p = scorer.params();
        let mut s = Self::zeros(p.k(), p.dim());
        let w = 1.0 / samples.len() as f64;
        for z in samples {
            let post = scorer.posterior(z);
            let small = sample_stats(p, &post, z);
            s.mix(&small, z, w, 1.0);
        }
        s
    }

    /// `self <- keep * self + w * stats(z)`.
    fn mix(&mut self, small: &[SmallStats], z: &[f64], w: f64, keep: f64) {
        let m = z.len();
        for (cs, ss) in self.components.iter_mut().zip(small) {
            let rw = w * ss.s0;
            cs.s0 = keep * cs.s0 + rw;
            for j in 0..m {
                cs.s1[j] = keep * cs.s1[j] + w * ss.s1[j];
                cs.s2[j] = keep * cs.s2[j] + w * ss.s2[j];
                cs.s3[j] = keep * cs.s3[j] + w * ss.s3[j];
                cs.s4[j] = keep * cs.s4[j] + w * ss.s4[j];
                cs.sz[j] = keep * cs.sz[j] + rw * z[j];
                let row = &mut cs.szz[j * m..(j + 1) * m];
                for (i, v) in row.iter_mut().enumerate() {
                    *v = keep * *v + rw * z[j] * z[i];
                }
            }
        }
    }
}

/// M-step for one component from its averaged statistics. `None` if the
/// component carries no mass.
fn m_step(c: &MstParams, s0: f64, s1: &[f64], s2: &[f64], s3: &[f64], s4: &[f64]) -> Option<MstParams> {
    if s0 < MIN_MASS {
        return None;
    }
    let m = c.dim();
    let mut out = c.clone();
    let mut mu_y = vec![0.0; m];
    for j in 0..m {
        if s3[j] <= 0.0 {
            mu_y[j] = c.directions[j].iter().zip(&c.mu).map(|(d, x)| d * x).sum();
            continue;
        }
        mu_y[j] = s1[j] / s3[j];
        out.a[j] = ((s2[j] - s1[j] * s1[j] / s3[j]) / s0).max(A_FLOOR);
        let shape = solve_shape((s3[j] - s4[j]) / s0);
        out.alpha[j] = shape;
        out.beta[j] = shape;
    }
    for i in 0..m {
        out.mu[i] = (0..m).map(|j| mu_y[j] * c.directions[j][i]).sum();
    }
    Some(out)
}

/// Eigenpairs of a symmetric row-major matrix, eigenvalues descending,
/// each vector signed so its largest-magnitude entry is positive.
fn sorted_eigen(s: &[f64], m: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut mat = DMatrix::from_row_slice(m, m, s);
    let t = mat.transpose();
    mat = (mat + t) * 0.5;
    let eig = mat.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let big = v.iter().cloned().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if big < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    (values, vectors)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Re-estimates the basis of each component from its scatter and carries
/// the direction-wise parameters and statistics over to the new basis.
fn refresh_directions(params: &mut MmstParams, stats: &mut SuffStats) {
    for (c, cs) in params.components.iter_mut().zip(stats.components.iter_mut()) {
        if cs.s0 < MIN_MASS {
            continue;
        }
        let m = c.dim();
        let mean: Vec<f64> = cs.sz.iter().map(|v| v / cs.s0).collect();
        let scatter: Vec<f64> = (0..m * m)
            .map(|idx| cs.szz[idx] / cs.s0 - mean[idx / m] * mean[idx % m])
            .collect();
        let (_, dirs) = sorted_eigen(&scatter, m);
        let weights: Vec<Vec<f64>> = dirs
            .iter()
            .map(|dn| c.directions.iter().map(|d| dot(dn, d).powi(2)).collect())
            .collect();
        let remix = |v: &[f64]| -> Vec<f64> { weights.iter().map(|w| dot(w, v)).collect() };
        let a = remix(&c.a);
        let alpha = remix(&c.alpha);
        let s3 = remix(&cs.s3);
        let s4 = remix(&cs.s4);
        let s1: Vec<f64> = (0..m).map(|j| s3[j] * dot(&dirs[j], &c.mu)).collect();
        let s2: Vec<f64> = (0..m)
            .map(|j| if s3[j] > 0.0 { s1[j] * s1[j] / s3[j] } else { 0.0 } + cs.s0 * a[j])
            .collect();
        c.directions = dirs;
        c.a = a.into_iter().map(|x| x.max(A_FLOOR)).collect();
        c.beta = alpha.clone();
        c.alpha = alpha;
        cs.s1 = s1;
        cs.s2 = s2;
        cs.s3 = s3;
        cs.s4 = s4;
    }
}

/// Mutable state of the online recursion.
#[derive(Debug, Clone)]
pub struct OnlineState {
    pub scorer: MmstScorer,
    pub stats: SuffStats,
    /// Accepted steps so far.
    pub t: usize,
    pub rejected: usize,
}

impl OnlineState {
    pub fn new(params: MmstParams, stats: SuffStats) -> Self {
        Self {
            scorer: MmstScorer::new(params),
            stats,
            t: 0,
            rejected: 0,
        }
    }

    /// Initial statistics from a batch E-step over `warmup`.
    pub fn from_warmup(params: MmstParams, warmup: &[Vec<f64>]) -> Self {
        let scorer = MmstScorer::new(params);
        let stats = SuffStats::from_batch(&scorer, warmup);
        Self {
            scorer,
            stats,
            t: 0,
            rejected: 0,
        }
    }

    pub fn params(&self) -> &MmstParams {
        self.scorer.params()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Accepted,
    Rejected,
}

/// One stochastic-approximation EM step on `z`. A step that would produce
/// non-finite statistics or parameters leaves the state unchanged and is
/// counted in `state.rejected`.
pub fn online_em_step(state: &mut OnlineState, z: &[f64], config: &MmstConfig) -> StepOutcome {
    let params = state.scorer.params();
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    if z.len() != params.dim() || !finite(z) {
        state.rejected += 1;
        return StepOutcome::Rejected;
    }
    let post = state.scorer.posterior(z);
    let ok_post = finite(&post.resp)
        && post.w_mean.iter().all(|v| finite(v))
        && post.w_logmean.iter().all(|v| finite(v));
    if !ok_post {
        state.rejected += 1;
        return StepOutcome::Rejected;
    }
    let small = sample_stats(params, &post, z);
    let t = state.t + 1;
    let gamma = step_size(t, config.kappa, config.t0).min(1.0);
    let keep = 1.0 - gamma;

    // Candidate direction-wise statistics, then the candidate M-step.
    let mut cand: Vec<SmallStats> = Vec::with_capacity(small.len());
    for (cs, ss) in state.stats.components.iter().zip(&small) {
        let mixv = |old: &[f64], new: &[f64]| -> Vec<f64> {
            old.iter().zip(new).map(|(o, n)| keep * o + gamma * n).collect()
        };
        cand.push(SmallStats {
            s0: keep * cs.s0 + gamma * ss.s0,
            s1: mixv(&cs.s1, &ss.s1),
            s2: mixv(&cs.s2, &ss.s2),
            s3: mixv(&cs.s3, &ss.s3),
            s4: mixv(&cs.s4, &ss.s4),
        });
    }
    if !cand
        .iter()
        .all(|c| c.s0.is_finite() && finite(&c.s1) && finite(&c.s2) && finite(&c.s3) && finite(&c.s4))
    {
        state.rejected += 1;
        return StepOutcome::Rejected;
    }
    let mut new_params = None;
    if t >= config.burn_in {
        let total: f64 = cand.iter().map(|c| c.s0).sum();
        let mut comps = Vec::with_capacity(cand.len());
        for (c, s) in params.components.iter().zip(&cand) {
            let next = m_step(c, s.s0, &s.s1, &s.s2, &s.s3, &s.s4).unwrap_or_else(|| c.clone());
            comps.push(next);
        }
        let pi: Vec<f64> = cand.iter().map(|c| c.s0 / total).collect();
        let ok = total > 0.0
            && finite(&pi)
            && comps.iter().all(|c| {
                finite(&c.mu) && finite(&c.a) && finite(&c.alpha) && c.a.iter().all(|&a| a > 0.0)
            });
        if !ok {
            state.rejected += 1;
            return StepOutcome::Rejected;
        }
        new_params = Some(MmstParams { pi, components: comps });
    }

    state.stats.mix(&small, z, gamma, keep);
    state.t = t;
    if let Some(mut p) = new_params {
        if t % config.refresh_period == 0 {
            refresh_directions(&mut p, &mut state.stats);
        }
        state.scorer = MmstScorer::new(p);
    }
    StepOutcome::Accepted
}

/// k-means++ seeding and Lloyd iterations on a subsample, then per-cluster
/// mean and scatter eigensystem over all samples.
pub fn init_params(samples: &[Vec<f64>], k: usize, seed: u64) -> Result<MmstParams> {
    if k == 0 {
        return Err(UadError::InvalidParameter("K must be >= 1".into()));
    }
    if samples.len() < k {
        return Err(UadError::NotEnoughSamples {
            needed: k,
            got: samples.len(),
        });
    }
    let m = samples[0].len();
    if m == 0 || samples.iter().any(|s| s.len() != m) {
        return Err(UadError::ShapeMismatch("samples must share a non-zero dimension".into()));
    }
    if samples.iter().any(|s| !s.iter().all(|x| x.is_finite())) {
        return Err(UadError::InvalidParameter("non-finite sample".into()));
    }
    let distinct = count_distinct(samples.iter());
    if distinct < k {
        return Err(UadError::TooFewDistinct { distinct, k });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sub: Vec<&Vec<f64>> = if samples.len() > KMEANS_SUBSAMPLE {
        rand::seq::index::sample(&mut rng, samples.len(), KMEANS_SUBSAMPLE)
            .iter()
            .map(|i| &samples[i])
            .collect()
    } else {
        samples.iter().collect()
    };
    if count_distinct(sub.iter().copied()) < k {
        sub = samples.iter().collect();
    }

    let mut centers: Vec<Vec<f64>> = vec![sub[rng.random_range(0..sub.len())].clone()];
    let mut d2: Vec<f64> = sub.iter().map(|s| sq_dist(s, &centers[0])).collect();
    while centers.len() < k {
        let pick = WeightedIndex::new(&d2)
            .map_err(|e| UadError::InvalidParameter(format!("k-means++ seeding: {e}")))?
            .sample(&mut rng);
        let c = sub[pick].clone();
        for (d, s) in d2.iter_mut().zip(&sub) {
            *d = d.min(sq_dist(s, &c));
        }
        centers.push(c);
    }
    for _ in 0..LLOYD_ITERS {
        let mut sums = vec![vec![0.0; m]; k];
        let mut counts = vec![0usize; k];
        for s in &sub {
            let j = nearest(&centers, s);
            counts[j] += 1;
            sums[j].iter_mut().zip(s.iter()).for_each(|(a, b)| *a += b);
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|v| v / counts[j] as f64).collect();
            }
        }
    }

    let global = moments(samples.iter(), m);
    let mut groups: Vec<Vec<&Vec<f64>>> = vec![Vec::new(); k];
    for s in samples {
        groups[nearest(&centers, s)].push(s);
    }
    let mut components = Vec::with_capacity(k);
    for (j, g) in groups.iter().enumerate() {
        let (mean, scatter) = if g.len() > m {
            moments(g.iter().copied(), m)
        } else {
            (centers[j].clone(), global.1.clone())
        };
        let (values, directions) = sorted_eigen(&scatter, m);
        components.push(MstParams {
            mu: mean,
            directions,
            a: values.iter().map(|&v| v.max(INIT_A_FLOOR)).collect(),
            alpha: vec![1.0; m],
            beta: vec![1.0; m],
        });
    }
    MmstParams::new(vec![1.0 / k as f64; k], components)
}

fn nearest(centers: &[Vec<f64>], z: &[f64]) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(c, z);
        if d < bd {
            bd = d;
            best = j;
        }
    }
    best
}

/// Mean and population scatter (row-major).
fn moments<'a>(it: impl Iterator<Item = &'a Vec<f64>> + Clone, m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut n = 0usize;
    let mut mean = vec![0.0; m];
    for s in it.clone() {
        n += 1;
        mean.iter_mut().zip(s).for_each(|(a, b)| *a += b);
    }
    mean.iter_mut().for_each(|a| *a /= n as f64);
    let mut scatter = vec![0.0; m * m];
    for s in it {
        for i in 0..m {
            let di = s[i] - mean[i];
            for j in 0..m {
                scatter[i * m + j] += di * (s[j] - mean[j]);
            }
        }
    }
    scatter.iter_mut().for_each(|v| *v /= n as f64);
    (mean, scatter)
}

fn count_distinct<'a>(it: impl Iterator<Item = &'a Vec<f64>>) -> usize {
    let mut keys: Vec<Vec<u64>> = it.map(|s| s.iter().map(|x| x.to_bits()).collect()).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticRow {
    pub step: usize,
    pub heldout_loglik: f64,
    pub rejected_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MmstDiagnostics {
    pub trace: Vec<DiagnosticRow>,
    /// Held-out mean log-likelihood at the end of each pass.
    pub pass_loglik: Vec<f64>,
    pub rejected_steps: usize,
}

pub fn format_diagnostics(d: &MmstDiagnostics) -> String {
    let mut s = String::from("step,heldout_loglik,rejected_steps\n");
    for r in &d.trace {
        s.push_str(&format!("{},{},{}\n", r.step, r.heldout_loglik, r.rejected_steps));
    }
    s
}

fn mean_loglik(scorer: &MmstScorer, held: &[Vec<f64>]) -> f64 {
    if held.is_empty() {
        return f64::NAN;
    }
    held.iter().map(|z| scorer.logpdf(z)).sum::<f64>() / held.len() as f64
}

/// Initializes on a warm-up buffer and runs the online recursion over a
/// shuffled stream of latents for `config.passes` passes.
pub fn fit_mmst(latents: &[Vec<f64>], config: &MmstConfig, seed: u64) -> Result<(MmstParams, MmstDiagnostics)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..latents.len()).collect();
    order.shuffle(&mut rng);
    let n_held = config.heldout.min(latents.len() / 10);
    let held: Vec<Vec<f64>> = order[..n_held].iter().map(|&i| latents[i].clone()).collect();
    let mut train: Vec<usize> = order[n_held..].to_vec();
    if train.len() < config.burn_in.max(config.k) {
        return Err(UadError::NotEnoughSamples {
            needed: config.burn_in.max(config.k),
            got: train.len(),
        });
    }
    let warm: Vec<Vec<f64>> = train[..config.warmup.min(train.len())]
        .iter()
        .map(|&i| latents[i].clone())
        .collect();
    let params = init_params(&warm, config.k, rng.random())?;
    let mut state = OnlineState::from_warmup(params, &warm);

    let mut diag = MmstDiagnostics::default();
    diag.trace.push(DiagnosticRow {
        step: 0,
        heldout_loglik: mean_loglik(&state.scorer, &held),
        rejected_steps: 0,
    });
    let mut steps = 0usize;
    for _ in 0..config.passes {
        train.shuffle(&mut rng);
        for &i in &train {
            online_em_step(&mut state, &latents[i], config);
            steps += 1;
            if steps % config.diag_every == 0 {
                diag.trace.push(DiagnosticRow {
                    step: steps,
                    heldout_loglik: mean_loglik(&state.scorer, &held),
                    rejected_steps: state.rejected,
                });
            }
        }
        diag.pass_loglik.push(mean_loglik(&state.scorer, &held));
    }
    if steps % config.diag_every != 0 {
        diag.trace.push(DiagnosticRow {
            step: steps,
            heldout_loglik: *diag.pass_loglik.last().unwrap(),
            rejected_steps: state.rejected,
        });
    }
    diag.rejected_steps = state.rejected;
    Ok((state.scorer.into_params(), diag))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_size_base_case() {
        assert_eq!(step_size(1, 0.6, 0.0), 1.0);
        assert!((step_size(1, 0.6, 100.0) - 101f64.powf(-0.6)).abs() < 1e-15);
    }

    #[test]
    fn first_step_with_unit_gain_copies_sample_stats() {
        let params = MmstParams::new(vec![1.0], vec![MstParams::isotropic(vec![0.0, 0.0], 1.0, 2.0)]).unwrap();
        let mut state = OnlineState::new(params.clone(), SuffStats::zeros(1, 2));
        let cfg = MmstConfig {
            t0: 0.0,
            burn_in: 10,
            ..Default::default()
        };
        let z = vec![0.7, -1.2];
        assert_eq!(online_em_step(&mut state, &z, &cfg), StepOutcome::Accepted);
        let expect = SuffStats::from_batch(&MmstScorer::new(params), &[z]);
        assert_eq!(state.stats, expect);
    }

    #[test]
    fn non_finite_sample_is_rejected() {
        let params = MmstParams::new(vec![1.0], vec![MstParams::isotropic(vec![0.0], 1.0, 2.0)]).unwrap();
        let mut state = OnlineState::from_warmup(params, &[vec![0.1], vec![-0.3]]);
        let before = state.stats.clone();
        assert_eq!(online_em_step(&mut state, &[f64::NAN], &MmstConfig::default()), StepOutcome::Rejected);
        assert_eq!(state.rejected, 1);
        assert_eq!(state.t, 0);
        assert_eq!(state.stats, before);
    }

    #[test]
    fn identical_stream_collapses_to_point() {
        let zstar = vec![1.5, -0.5];
        let params = MmstParams::new(vec![1.0], vec![MstParams::isotropic(vec![0.0, 0.0], 1.0, 1.0)]).unwrap();
        let mut state = OnlineState::from_warmup(params, &[zstar.clone()]);
        let cfg = MmstConfig {
            burn_in: 1,
            refresh_period: 50,
            ..Default::default()
        };
        for _ in 0..20_000 {
            online_em_step(&mut state, &zstar, &cfg);
        }
        let c = &state.params().components[0];
        for i in 0..2 {
            assert!((c.mu[i] - zstar[i]).abs() < 1e-6, "mu = {:?}", c.mu);
        }
        assert!(c.a.iter().all(|&a| a < 1e-4), "A = {:?}", c.a);
    }

    #[test]
    fn init_errors_and_k1() {
        let dup = vec![vec![1.0, 1.0]; 10];
        assert!(matches!(init_params(&dup, 2, 0), Err(UadError::TooFewDistinct { distinct: 1, k: 2 })));
        let pts: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * i % 7) as f64]).collect();
        let p = init_params(&pts, 1, 3).unwrap();
        let (mean, scatter) = moments(pts.iter(), 2);
        let c = &p.components[0];
        assert!((c.mu[0] - mean[0]).abs() < 1e-12 && (c.mu[1] - mean[1]).abs() < 1e-12);
        let (vals, _) = sorted_eigen(&scatter, 2);
        assert!((c.a[0] - vals[0]).abs() < 1e-9 && (c.a[1] - vals[1]).abs() < 1e-9);
        for (j, d) in c.directions.iter().enumerate() {
            let sd: Vec<f64> = (0..2).map(|i| (0..2).map(|l| scatter[i * 2 + l] * d[l]).sum()).collect();
            for i in 0..2 {
                assert!((sd[i] - vals[j] * d[i]).abs() < 1e-9);
            }
        }
        assert_eq!(init_params(&pts, 3, 9).unwrap(), init_params(&pts, 3, 9).unwrap());
    }

    #[test]
    fn config_validation_names_field() {
        let cfg = MmstConfig {
            kappa: 0.4,
            ..Default::default()
        };
        match cfg.validate() {
            Err(UadError::Config { field, .. }) => assert_eq!(field, "mmst.kappa"),
            other => panic!("{other:?}"),
        }
    }
}
