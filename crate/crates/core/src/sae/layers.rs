//! Convolution, transposed convolution, batch normalization and GeLU with
//! hand-written backward passes over NCHW tensors.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use libm::erf;

/// Dense NCHW activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data length");
        Self { n, c, h, w, data }
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let s = self.sample_len();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    ConvTranspose,
    BatchNorm,
    Gelu,
}

impl LayerKind {
    pub fn code(self) -> u32 {
        match self {
            LayerKind::Conv => 1,
            LayerKind::ConvTranspose => 2,
            LayerKind::BatchNorm => 3,
            LayerKind::Gelu => 4,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Some(match code {
            1 => LayerKind::Conv,
            2 => LayerKind::ConvTranspose,
            3 => LayerKind::BatchNorm,
            4 => LayerKind::Gelu,
            _ => return None,
        })
    }
}

/// Structural description of one layer. Convolutions never pad.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    /// Input channels (convolutions) or channel count (batch norm).
    pub in_channels: usize,
    /// Output filters; equals `in_channels` for batch norm and GeLU.
    pub filters: usize,
}

/// Whether batch normalization uses batch statistics or running averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub in_c: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    /// `[out][in][kh][kw]` for convolution, `[in][out][kh][kw]` for the
    /// transposed form.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv {
    pub fn zeros(in_c: usize, out_c: usize, kernel: (usize, usize), stride: (usize, usize)) -> Self {
        Self {
            in_c,
            out_c,
            kh: kernel.0,
            kw: kernel.1,
            sh: stride.0,
            sw: stride.1,
            weight: vec![0.0; in_c * out_c * kernel.0 * kernel.1],
            bias: vec![0.0; out_c],
        }
    }

    pub fn conv_out(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        if h < self.kh || w < self.kw {
            return None;
        }
        Some(((h - self.kh) / self.sh + 1, (w - self.kw) / self.sw + 1))
    }

    pub fn convt_out(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - 1) * self.sh + self.kh, (w - 1) * self.sw + self.kw)
    }

    /// Window geometry of this layer applied to an `h x w` input.
    fn windows(&self, c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Windows {
        Windows {
            c,
            h,
            w,
            kh: self.kh,
            kw: self.kw,
            sh: self.sh,
            sw: self.sw,
            oh,
            ow,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (oh, ow) = self.conv_out(x.h, x.w).expect("input smaller than kernel");
        let g = self.windows(self.in_c, x.h, x.w, oh, ow);
        let (k, p) = (g.rows(), oh * ow);
        let mut out = Tensor::zeros(x.n, self.out_c, oh, ow);
        let mut col = Vec::new();
        let mut tmp = Vec::new();
        for (s0, nb) in chunks(x.n, k.max(self.out_c) * p) {
            let q = nb * p;
            g.im2col(&x.data[s0 * x.sample_len()..], nb, &mut col);
            tmp.resize(self.out_c * q, 0.0);
            gemm(self.out_c, k, q, &self.weight, (k, 1), &col, (q, 1), &mut tmp, q, false);
            let dst = &mut out.data[s0 * self.out_c * p..(s0 + nb) * self.out_c * p];
            scatter_cm(&tmp, self.out_c, p, nb, dst, Some(&self.bias));
        }
        out
    }

    /// Returns `(dx, dweight, dbias)`.
    pub fn backward(&self, x: &Tensor, g: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
        let (dx, dw, db) = self.backward_impl(x, g, true);
        (dx.unwrap(), dw, db)
    }

    /// Parameter gradients only, skipping the input gradient.
    pub fn param_grads(&self, x: &Tensor, g: &Tensor) -> (Vec<f64>, Vec<f64>) {
        let (_, dw, db) = self.backward_impl(x, g, false);
        (dw, db)
    }

    fn backward_impl(&self, x: &Tensor, g: &Tensor, need_dx: bool) -> (Option<Tensor>, Vec<f64>, Vec<f64>) {
        let (oh, ow) = (g.h, g.w);
        let geo = self.windows(self.in_c, x.h, x.w, oh, ow);
        let (k, p) = (geo.rows(), oh * ow);
        let mut dx = need_dx.then(|| Tensor::zeros(x.n, x.c, x.h, x.w));
        let mut dw = vec![0.0; self.weight.len()];
        let mut db = vec![0.0; self.out_c];
        let (mut col, mut gm, mut dcol) = (Vec::new(), Vec::new(), Vec::new());
        for (s0, nb) in chunks(x.n, k.max(self.out_c) * p) {
            let q = nb * p;
            geo.im2col(&x.data[s0 * x.sample_len()..], nb, &mut col);
            gather_cm(&g.data[s0 * self.out_c * p..], self.out_c, p, nb, &mut gm);
            for (o, d) in db.iter_mut().enumerate() {
                *d += gm[o * q..(o + 1) * q].iter().sum::<f64>();
            }
            gemm(self.out_c, q, k, &gm, (q, 1), &col, (1, q), &mut dw, k, true);
            if let Some(dx) = dx.as_mut() {
                dcol.resize(k * q, 0.0);
                gemm(k, self.out_c, q, &self.weight, (1, k), &gm, (q, 1), &mut dcol, q, false);
                let len = x.sample_len();
                geo.col2im(&dcol, nb, &mut dx.data[s0 * len..(s0 + nb) * len]);
            }
        }
        (dx, dw, db)
    }

    pub fn forward_transposed(&self, x: &Tensor) -> Tensor {
        let (oh, ow) = self.convt_out(x.h, x.w);
        // windows live on the output grid, one per input position
        let geo = self.windows(self.out_c, oh, ow, x.h, x.w);
        let (k, p) = (geo.rows(), x.h * x.w);
        let out_len = self.out_c * oh * ow;
        let mut out = Tensor::zeros(x.n, self.out_c, oh, ow);
        let (mut xm, mut dcol) = (Vec::new(), Vec::new());
        for (s0, nb) in chunks(x.n, k.max(self.in_c) * p) {
            let q = nb * p;
            gather_cm(&x.data[s0 * x.sample_len()..], self.in_c, p, nb, &mut xm);
            dcol.resize(k * q, 0.0);
            gemm(k, self.in_c, q, &self.weight, (1, k), &xm, (q, 1), &mut dcol, q, false);
            let dst = &mut out.data[s0 * out_len..(s0 + nb) * out_len];
            for sample in dst.chunks_exact_mut(out_len) {
                for (o, plane) in sample.chunks_exact_mut(oh * ow).enumerate() {
                    plane.fill(self.bias[o]);
                }
            }
            geo.col2im(&dcol, nb, dst);
        }
        out
    }

    pub fn backward_transposed(&self, x: &Tensor, g: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
        let geo = self.windows(self.out_c, g.h, g.w, x.h, x.w);
        let (k, p) = (geo.rows(), x.h * x.w);
        let out_plane = g.h * g.w;
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        let mut dw = vec![0.0; self.weight.len()];
        let mut db = vec![0.0; self.out_c];
        for sample in g.data.chunks_exact(self.out_c * out_plane) {
            for (o, plane) in sample.chunks_exact(out_plane).enumerate() {
                db[o] += plane.iter().sum::<f64>();
            }
        }
        let (mut gcol, mut xm, mut dxm) = (Vec::new(), Vec::new(), Vec::new());
        for (s0, nb) in chunks(x.n, k.max(self.in_c) * p) {
            let q = nb * p;
            geo.im2col(&g.data[s0 * g.sample_len()..], nb, &mut gcol);
            gather_cm(&x.data[s0 * x.sample_len()..], self.in_c, p, nb, &mut xm);
            dxm.resize(self.in_c * q, 0.0);
            gemm(self.in_c, k, q, &self.weight, (k, 1), &gcol, (q, 1), &mut dxm, q, false);
            gemm(self.in_c, q, k, &xm, (q, 1), &gcol, (1, q), &mut dw, k, true);
            let dst = &mut dx.data[s0 * x.sample_len()..(s0 + nb) * x.sample_len()];
            scatter_cm(&dxm, self.in_c, p, nb, dst, None);
        }
        (dx, dw, db)
    }
}

/// Column buffers hold at most about this many values per chunk.
const COL_BUDGET: usize = 1 << 18;

/// `(first sample, count)` chunks whose column buffers fit the budget.
fn chunks(n: usize, per_sample: usize) -> impl Iterator<Item = (usize, usize)> {
    let nb = (COL_BUDGET / per_sample.max(1)).clamp(1, n.max(1));
    (0..n).step_by(nb).map(move |s| (s, nb.min(n - s)))
}

/// `c (m x n, row stride rsc) = a (m x k) · b (k x n)`, plus `c` when
/// `accumulate`. Strides are `(row, column)` in elements.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    rsc: usize,
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |r: usize, rs: usize, cc: usize, cs: usize| (r - 1) * rs + (cc - 1) * cs;
    if k > 0 {
        assert!(a.len() > last(m, rsa, k, csa) && b.len() > last(k, rsb, n, csb));
    }
    assert!(c.len() > last(m, rsc, n, 1));
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: every accessed element lies within the slices (checked above).
    unsafe {
        if m < 8 && n > m {
            // few rows pack poorly into the micro-kernel; compute c^T = b^T a^T
            matrixmultiply::dgemm(
                n,
                k,
                m,
                1.0,
                b.as_ptr(),
                csb as isize,
                rsb as isize,
                a.as_ptr(),
                csa as isize,
                rsa as isize,
                beta,
                c.as_mut_ptr(),
                1,
                rsc as isize,
            );
        } else {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa as isize,
                csa as isize,
                b.as_ptr(),
                rsb as isize,
                csb as isize,
                beta,
                c.as_mut_ptr(),
                rsc as isize,
                1,
            );
        }
    }
}

/// NCHW samples -> channel-major matrix `c x (nb * plane)`.
fn gather_cm(src: &[f64], c: usize, plane: usize, nb: usize, dst: &mut Vec<f64>) {
    let q = nb * plane;
    dst.resize(c * q, 0.0);
    for s in 0..nb {
        for ch in 0..c {
            let from = &src[(s * c + ch) * plane..(s * c + ch + 1) * plane];
            dst[ch * q + s * plane..ch * q + (s + 1) * plane].copy_from_slice(from);
        }
    }
}

/// Inverse of [`gather_cm`], optionally adding a per-channel bias.
fn scatter_cm(src: &[f64], c: usize, plane: usize, nb: usize, dst: &mut [f64], bias: Option<&[f64]>) {
    let q = nb * plane;
    for s in 0..nb {
        for ch in 0..c {
            let b = bias.map_or(0.0, |b| b[ch]);
            let from = &src[ch * q + s * plane..ch * q + (s + 1) * plane];
            let to = &mut dst[(s * c + ch) * plane..(s * c + ch + 1) * plane];
            for (t, f) in to.iter_mut().zip(from) {
                *t = f + b;
            }
        }
    }
}

/// `kh x kw` windows with stride `(sh, sw)` over a `c x h x w` grid, at
/// `oh x ow` positions.
struct Windows {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    oh: usize,
    ow: usize,
}

impl Windows {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    /// Column matrix with row `(ch, u, v)` and column `(sample, i, j)`.
    fn im2col(&self, src: &[f64], nb: usize, col: &mut Vec<f64>) {
        let p = self.oh * self.ow;
        let q = nb * p;
        let plane = self.h * self.w;
        col.resize(self.rows() * q, 0.0);
        for s in 0..nb {
            for ch in 0..self.c {
                let xp = &src[(s * self.c + ch) * plane..(s * self.c + ch + 1) * plane];
                for u in 0..self.kh {
                    for v in 0..self.kw {
                        let r = (ch * self.kh + u) * self.kw + v;
                        let row = &mut col[r * q + s * p..r * q + (s + 1) * p];
                        for i in 0..self.oh {
                            let xrow = &xp[(i * self.sh + u) * self.w + v..];
                            let out = &mut row[i * self.ow..(i + 1) * self.ow];
                            if self.sw == 1 {
                                out.copy_from_slice(&xrow[..self.ow]);
                            } else {
                                for (j, o) in out.iter_mut().enumerate() {
                                    *o = xrow[j * self.sw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adds the column matrix back onto the grid (adjoint of `im2col`).
    fn col2im(&self, col: &[f64], nb: usize, dst: &mut [f64]) {
        let p = self.oh * self.ow;
        let q = nb * p;
        let plane = self.h * self.w;
        for s in 0..nb {
            for ch in 0..self.c {
                let xp = &mut dst[(s * self.c + ch) * plane..(s * self.c + ch + 1) * plane];
                for u in 0..self.kh {
                    for v in 0..self.kw {
                        let r = (ch * self.kh + u) * self.kw + v;
                        let row = &col[r * q + s * p..r * q + (s + 1) * p];
                        for i in 0..self.oh {
                            let base = (i * self.sh + u) * self.w + v;
                            let src = &row[i * self.ow..(i + 1) * self.ow];
                            for (j, val) in src.iter().enumerate() {
                                xp[base + j * self.sw] += val;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
}

/// Per-channel batch statistics and normalized activations kept for the
/// backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub const BN_EPS: f64 = 1e-5;

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: BN_EPS,
        }
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> (Tensor, Option<BnCache>) {
        let plane = x.h * x.w;
        let c_n = x.c;
        let count = (x.n * plane) as f64;
        let (mean, var) = match mode {
            Mode::Infer => (self.running_mean.clone(), self.running_var.clone()),
            Mode::Train => {
                let mut mean = vec![0.0; c_n];
                let mut var = vec![0.0; c_n];
                for (k, pl) in x.data.chunks_exact(plane).enumerate() {
                    mean[k % c_n] += pl.iter().sum::<f64>();
                }
                mean.iter_mut().for_each(|m| *m /= count);
                for (k, pl) in x.data.chunks_exact(plane).enumerate() {
                    let m = mean[k % c_n];
                    var[k % c_n] += pl.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
                }
                var.iter_mut().for_each(|v| *v /= count);
                (mean, var)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(x.n, x.c, x.h, x.w);
        let mut y = Tensor::zeros(x.n, x.c, x.h, x.w);
        let planes = x.data.chunks_exact(plane).zip(xhat.data.chunks_exact_mut(plane));
        for (k, ((xp, hp), yp)) in planes.zip(y.data.chunks_exact_mut(plane)).enumerate() {
            let c = k % c_n;
            let (m, is, g, b) = (mean[c], inv_std[c], self.gamma[c], self.beta[c]);
            for ((xv, h), yv) in xp.iter().zip(hp.iter_mut()).zip(yp.iter_mut()) {
                *h = (xv - m) * is;
                *yv = g * *h + b;
            }
        }
        let cache = (mode == Mode::Train).then_some(BnCache {
            xhat,
            inv_std,
            mean,
            var,
        });
        (y, cache)
    }

    /// Backward through the training-mode transform. Returns
    /// `(dx, dgamma, dbeta)`.
    pub fn backward_train(&self, cache: &BnCache, g: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
        let plane = g.h * g.w;
        let c_n = g.c;
        let count = (g.n * plane) as f64;
        let mut dgamma = vec![0.0; self.channels];
        let mut dbeta = vec![0.0; self.channels];
        let planes = || g.data.chunks_exact(plane).zip(cache.xhat.data.chunks_exact(plane));
        for (k, (gp, hp)) in planes().enumerate() {
            let c = k % c_n;
            dbeta[c] += gp.iter().sum::<f64>();
            dgamma[c] += gp.iter().zip(hp).map(|(a, b)| a * b).sum::<f64>();
        }
        let mut dx = Tensor::zeros(g.n, g.c, g.h, g.w);
        for (k, ((gp, hp), dp)) in planes().zip(dx.data.chunks_exact_mut(plane)).enumerate() {
            let c = k % c_n;
            let scale = self.gamma[c] * cache.inv_std[c] / count;
            let (db, dg) = (dbeta[c], dgamma[c]);
            for ((gv, h), d) in gp.iter().zip(hp).zip(dp.iter_mut()) {
                *d = scale * (count * gv - db - h * dg);
            }
        }
        (dx, dgamma, dbeta)
    }

    /// Backward through the inference-mode (fixed statistics) transform.
    pub fn backward_infer(&self, x: &Tensor, g: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
        let plane = g.h * g.w;
        let mut dgamma = vec![0.0; self.channels];
        let mut dbeta = vec![0.0; self.channels];
        let mut dx = g.clone();
        for n in 0..g.n {
            for c in 0..g.c {
                let inv = 1.0 / (self.running_var[c] + self.eps).sqrt();
                let off = (n * g.c + c) * plane;
                for k in off..off + plane {
                    let xh = (x.data[k] - self.running_mean[c]) * inv;
                    dbeta[c] += g.data[k];
                    dgamma[c] += g.data[k] * xh;
                    dx.data[k] = g.data[k] * self.gamma[c] * inv;
                }
            }
        }
        (dx, dgamma, dbeta)
    }

    /// Exponential moving average update of the running statistics.
    pub fn update_running(&mut self, cache: &BnCache, momentum: f64) {
        for c in 0..self.channels {
            self.running_mean[c] = momentum * self.running_mean[c] + (1.0 - momentum) * cache.mean[c];
            self.running_var[c] = momentum * self.running_var[c] + (1.0 - momentum) * cache.var[c];
        }
    }
}

#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x * FRAC_1_SQRT_2))
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

pub fn gelu_forward(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data.iter_mut().for_each(|v| *v = gelu(*v));
    y
}

pub fn gelu_backward(x: &Tensor, g: &Tensor) -> Tensor {
    let mut dx = g.clone();
    dx.data.iter_mut().zip(&x.data).for_each(|(d, &xv)| *d *= gelu_grad(xv));
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn rand_conv(in_c: usize, out_c: usize, k: (usize, usize), s: (usize, usize), rng: &mut impl Rng) -> Conv {
        let mut c = Conv::zeros(in_c, out_c, k, s);
        c.weight = rand_vec(c.weight.len(), rng);
        c.bias = rand_vec(out_c, rng);
        c
    }

    // Direct-definition oracle for a strided valid convolution.
    fn conv_oracle(conv: &Conv, x: &Tensor) -> Tensor {
        let (oh, ow) = conv.conv_out(x.h, x.w).unwrap();
        let mut out = Tensor::zeros(x.n, conv.out_c, oh, ow);
        for n in 0..x.n {
            for o in 0..conv.out_c {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut s = conv.bias[o];
                        for c in 0..conv.in_c {
                            for u in 0..conv.kh {
                                for v in 0..conv.kw {
                                    let xi = ((n * x.c + c) * x.h + i * conv.sh + u) * x.w + j * conv.sw + v;
                                    s += conv.weight[((o * conv.in_c + c) * conv.kh + u) * conv.kw + v] * x.data[xi];
                                }
                            }
                        }
                        out.data[((n * conv.out_c + o) * oh + i) * ow + j] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = rand_conv(3, 4, (3, 3), (3, 3), &mut rng);
        let x = Tensor::from_vec(2, 3, 9, 9, rand_vec(2 * 3 * 81, &mut rng));
        let a = conv.forward(&x);
        let b = conv_oracle(&conv, &x);
        assert_eq!(a.shape(), [2, 4, 3, 3]);
        for (p, q) in a.data.iter().zip(&b.data) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> with the same weights and zero bias.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = rand_conv(3, 4, (3, 3), (3, 3), &mut rng);
        conv.bias.fill(0.0);
        let mut convt = Conv::zeros(4, 3, (3, 3), (3, 3));
        // [out][in] of conv is [in][out] of the transpose
        convt.weight = conv.weight.clone();
        let x = Tensor::from_vec(1, 3, 9, 9, rand_vec(243, &mut rng));
        let y = Tensor::from_vec(1, 4, 3, 3, rand_vec(36, &mut rng));
        let cx = conv.forward(&x);
        let ty = convt.forward_transposed(&y);
        assert_eq!(ty.shape(), [1, 3, 9, 9]);
        let lhs: f64 = cx.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&ty.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn batch_norm_train_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..8 * 3 * 5 * 5).map(|_| 40.0 * rng.random::<f64>() + 7.0).collect();
        let x = Tensor::from_vec(8, 3, 5, 5, data);
        let bn = BatchNorm::new(3);
        let (y, cache) = bn.forward(&x, Mode::Train);
        assert!(cache.is_some());
        let plane = 25;
        for c in 0..3 {
            let vals: Vec<f64> = (0..8)
                .flat_map(|n| y.data[(n * 3 + c) * plane..(n * 3 + c + 1) * plane].to_vec())
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0), 0.0);
        let g1 = gelu(1.0);
        assert!((g1 - 0.841_344_746_068_542_9).abs() < 1e-12, "{g1}");
        let h = 1e-6;
        for &x in &[-2.0, -0.3, 0.0, 0.7, 3.0] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
