//! Mixture of multiple-scale t-distributions (MMST) over latent vectors.
//!
//! Each component has a location `mu`, an orthonormal basis `D`, and per
//! direction `m` a scale `A_m` and Gamma shape/rate `alpha_m`, `beta_m`.
//! In the eigenbasis `y = Dᵀ(z - mu)` the directions are independent:
//!
//! ```text
//! y_m | W_m ~ N(0, A_m / W_m),   W_m ~ Gamma(alpha_m, beta_m)
//! ```
//!
//! Abnormality is measured through the posterior scale means `E[W_m | z]`,
//! which shrink as `z` moves away from the bulk of a component.

mod fit;
pub mod special;

pub use fit::{
    fit_mmst, format_diagnostics, init_params, online_em_step, step_size, DiagnosticRow, MmstConfig,
    MmstDiagnostics, OnlineState, StepOutcome, SuffStats,
};

use statrs::function::gamma::{digamma, ln_gamma};

use crate::container::{model_header, open_model, ModelKind};
use crate::error::{Result, UadError};

#[derive(Debug, Clone, PartialEq)]
pub struct MstParams {
    pub mu: Vec<f64>,
    /// Unit directions `d_m` (the columns of `D`).
    pub directions: Vec<Vec<f64>>,
    pub a: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl MstParams {
    /// Axis-aligned component with `alpha = beta = shape`.
    pub fn isotropic(mu: Vec<f64>, a: f64, shape: f64) -> Self {
        let m = mu.len();
        let directions = (0..m)
            .map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self {
            mu,
            directions,
            a: vec![a; m],
            alpha: vec![shape; m],
            beta: vec![shape; m],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `y = Dᵀ(z - mu)`.
    pub fn project(&self, z: &[f64]) -> Vec<f64> {
        self.directions
            .iter()
            .map(|d| d.iter().zip(z).zip(&self.mu).map(|((di, zi), mi)| di * (zi - mi)).sum())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.dim();
        if m == 0 {
            return Err(UadError::InvalidParameter("empty component".into()));
        }
        if self.directions.len() != m
            || self.directions.iter().any(|d| d.len() != m)
            || self.a.len() != m
            || self.alpha.len() != m
            || self.beta.len() != m
        {
            return Err(UadError::ShapeMismatch(format!("component fields disagree with M = {m}")));
        }
        for i in 0..m {
            for j in 0..m {
                let dot: f64 = self.directions[i].iter().zip(&self.directions[j]).map(|(a, b)| a * b).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-8 {
                    return Err(UadError::InvalidParameter(format!(
                        "directions not orthonormal: d{i}·d{j} = {dot}"
                    )));
                }
            }
        }
        let positive = |v: &[f64]| v.iter().all(|&x| x > 0.0 && x.is_finite());
        if !positive(&self.a) || !positive(&self.alpha) || !positive(&self.beta) {
            return Err(UadError::InvalidParameter("A, alpha and beta must be positive".into()));
        }
        if !self.mu.iter().all(|x| x.is_finite()) {
            return Err(UadError::InvalidParameter("non-finite location".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmstParams {
    pub pi: Vec<f64>,
    pub components: Vec<MstParams>,
}

impl MmstParams {
    pub fn new(pi: Vec<f64>, components: Vec<MstParams>) -> Result<Self> {
        let p = Self { pi, components };
        p.validate()?;
        Ok(p)
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() || self.pi.len() != self.components.len() {
            return Err(UadError::ShapeMismatch("need one weight per component, K >= 1".into()));
        }
        let m = self.components[0].dim();
        for c in &self.components {
            c.validate()?;
            if c.dim() != m {
                return Err(UadError::ShapeMismatch("components differ in dimension".into()));
            }
        }
        if self.pi.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (self.pi.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(UadError::InvalidParameter("mixture weights are not a simplex vector".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = model_header(ModelKind::Mmst);
        w.usize(self.k());
        w.usize(self.dim());
        w.f64s(&self.pi);
        for c in &self.components {
            w.f64s(&c.mu);
            for d in &c.directions {
                w.f64s(d);
            }
            w.f64s(&c.a);
            w.f64s(&c.alpha);
            w.f64s(&c.beta);
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = open_model(bytes, ModelKind::Mmst)?;
        let k = r.usize()?;
        let m = r.usize()?;
        let pi = r.f64s()?;
        let mut components = Vec::with_capacity(k);
        for _ in 0..k {
            let mu = r.f64s()?;
            let directions = (0..m).map(|_| r.f64s()).collect::<Result<Vec<_>>>()?;
            components.push(MstParams {
                mu,
                directions,
                a: r.f64s()?,
                alpha: r.f64s()?,
                beta: r.f64s()?,
            });
        }
        r.finish()?;
        Self::new(pi, components)
    }
}

/// Parameters with the per-direction constants of the density cached.
#[derive(Debug, Clone)]
pub struct MmstScorer {
    params: MmstParams,
    log_pi: Vec<f64>,
    /// `lnΓ(α+½) - lnΓ(α) - ½ln(2πA) + α ln β` per component and direction.
    log_norm: Vec<Vec<f64>>,
    /// `ψ(α+½)` per component and direction.
    digamma_post: Vec<Vec<f64>>,
}

/// Per-sample posterior quantities for every component.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub log_density: f64,
    pub resp: Vec<f64>,
    /// `y` per component.
    pub y: Vec<Vec<f64>>,
    /// `E[W_m | z, k]`.
    pub w_mean: Vec<Vec<f64>>,
    /// `E[ln W_m | z, k]`.
    pub w_logmean: Vec<Vec<f64>>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

impl MmstScorer {
    pub fn new(params: MmstParams) -> Self {
        let log_pi = params.pi.iter().map(|p| p.ln()).collect();
        let log_norm = params
            .components
            .iter()
            .map(|c| {
                (0..c.dim())
                    .map(|m| {
                        let (al, be, a) = (c.alpha[m], c.beta[m], c.a[m]);
                        ln_gamma(al + 0.5) - ln_gamma(al) - 0.5 * (2.0 * std::f64::consts::PI * a).ln() + al * be.ln()
                    })
                    .collect()
            })
            .collect();
        let digamma_post = params
            .components
            .iter()
            .map(|c| c.alpha.iter().map(|&al| digamma(al + 0.5)).collect())
            .collect();
        Self {
            params,
            log_pi,
            log_norm,
            digamma_post,
        }
    }

    pub fn params(&self) -> &MmstParams {
        &self.params
    }

    pub fn into_params(self) -> MmstParams {
        self.params
    }

    fn component_logpdf(&self, k: usize, y: &[f64]) -> f64 {
        let c = &self.params.components[k];
        y.iter()
            .enumerate()
            .map(|(m, &ym)| {
                let q = c.beta[m] + ym * ym / (2.0 * c.a[m]);
                self.log_norm[k][m] - (c.alpha[m] + 0.5) * q.ln()
            })
            .sum()
    }

    pub fn component_logpdfs(&self, z: &[f64]) -> Vec<f64> {
        (0..self.params.k())
            .map(|k| self.component_logpdf(k, &self.params.components[k].project(z)))
            .collect()
    }

    pub fn logpdf(&self, z: &[f64]) -> f64 {
        let terms: Vec<f64> = self.component_logpdfs(z).iter().zip(&self.log_pi).map(|(l, p)| l + p).collect();
        log_sum_exp(&terms)
    }

    pub fn responsibilities(&self, z: &[f64]) -> Vec<f64> {
        self.posterior(z).resp
    }

    pub fn posterior(&self, z: &[f64]) -> Posterior {
        let k_n = self.params.k();
        let mut y = Vec::with_capacity(k_n);
        let mut w_mean = Vec::with_capacity(k_n);
        let mut w_logmean = Vec::with_capacity(k_n);
        let mut terms = Vec::with_capacity(k_n);
        for (k, c) in self.params.components.iter().enumerate() {
            let yk = c.project(z);
            let mut lp = 0.0;
            let mut wm = Vec::with_capacity(yk.len());
            let mut wl = Vec::with_capacity(yk.len());
            for (m, &ym) in yk.iter().enumerate() {
                let q = c.beta[m] + ym * ym / (2.0 * c.a[m]);
                let lq = q.ln();
                lp += self.log_norm[k][m] - (c.alpha[m] + 0.5) * lq;
                wm.push((c.alpha[m] + 0.5) / q);
                wl.push(self.digamma_post[k][m] - lq);
            }
            terms.push(lp + self.log_pi[k]);
            y.push(yk);
            w_mean.push(wm);
            w_logmean.push(wl);
        }
        let log_density = log_sum_exp(&terms);
        let mut resp: Vec<f64> = terms.iter().map(|t| (t - log_density).exp()).collect();
        let s: f64 = resp.iter().sum();
        resp.iter_mut().for_each(|r| *r /= s);
        Posterior {
            log_density,
            resp,
            y,
            w_mean,
            w_logmean,
        }
    }

    /// `w̄_m = Σ_k r_k E[W_m | z, k]`.
    pub fn scale_expectation(&self, z: &[f64]) -> Vec<f64> {
        let post = self.posterior(z);
        let mut out = vec![0.0; self.params.dim()];
        for (r, wm) in post.resp.iter().zip(&post.w_mean) {
            out.iter_mut().zip(wm).for_each(|(o, w)| *o += r * w);
        }
        out
    }

    /// `max_m w̄_m`; large when some direction is well explained.
    pub fn proximity(&self, z: &[f64]) -> f64 {
        self.scale_expectation(z).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn anomaly_score(&self, z: &[f64]) -> f64 {
        -self.proximity(z)
    }
}

pub fn mst_logpdf(p: &MstParams, z: &[f64]) -> Result<f64> {
    check_input(p.dim(), z)?;
    let params = MmstParams {
        pi: vec![1.0],
        components: vec![p.clone()],
    };
    Ok(MmstScorer::new(params).logpdf(z))
}

pub fn mmst_logpdf(p: &MmstParams, z: &[f64]) -> Result<f64> {
    check_input(p.dim(), z)?;
    Ok(MmstScorer::new(p.clone()).logpdf(z))
}

pub fn responsibilities(p: &MmstParams, z: &[f64]) -> Result<Vec<f64>> {
    check_input(p.dim(), z)?;
    Ok(MmstScorer::new(p.clone()).responsibilities(z))
}

pub fn scale_expectation(p: &MmstParams, z: &[f64]) -> Result<Vec<f64>> {
    check_input(p.dim(), z)?;
    Ok(MmstScorer::new(p.clone()).scale_expectation(z))
}

pub fn proximity(p: &MmstParams, z: &[f64]) -> Result<f64> {
    check_input(p.dim(), z)?;
    Ok(MmstScorer::new(p.clone()).proximity(z))
}

pub fn anomaly_score(p: &MmstParams, z: &[f64]) -> Result<f64> {
    Ok(-proximity(p, z)?)
}

fn check_input(m: usize, z: &[f64]) -> Result<()> {
    if z.len() != m {
        return Err(UadError::ShapeMismatch(format!("latent of length {} for M = {m}", z.len())));
    }
    if !z.iter().all(|x| x.is_finite()) {
        return Err(UadError::InvalidParameter("non-finite latent vector".into()));
    }
    Ok(())
}
