use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    gelu_backward, gelu_forward, BatchNorm, BnCache, Conv, LayerKind, LayerSpec, Mode, Tensor,
};
use crate::container::{model_header, open_model, ModelKind};
use crate::error::{Result, UadError};
use crate::patching::{Patch, PatchPair};

/// One encoder block: convolution, GeLU, then batch normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub filters: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub channels: usize,
    pub patch_side: usize,
    pub blocks: Vec<BlockSpec>,
}

impl Architecture {
    /// Four blocks with kernels 5,3,3,3, strides 1,1,3,1 and 3,4,12,16
    /// filters on 15x15 patches.
    pub fn reference(channels: usize) -> Self {
        let b = |k: usize, s: usize, f: usize| BlockSpec {
            kernel: (k, k),
            stride: (s, s),
            filters: f,
        };
        Self {
            channels,
            patch_side: 15,
            blocks: vec![b(5, 1, 3), b(3, 1, 4), b(3, 3, 12), b(3, 1, 16)],
        }
    }

    /// Spatial side after each encoder block, starting with the input side.
    /// Fails unless every block tiles its input exactly, which is what lets
    /// the transposed decoder restore the input size.
    pub fn spatial_sizes(&self) -> Result<Vec<(usize, usize)>> {
        let mut sizes = vec![(self.patch_side, self.patch_side)];
        for (i, b) in self.blocks.iter().enumerate() {
            let (h, w) = *sizes.last().unwrap();
            let fits = |n: usize, k: usize, s: usize| n >= k && s >= 1 && (n - k) % s == 0;
            if !fits(h, b.kernel.0, b.stride.0) || !fits(w, b.kernel.1, b.stride.1) || b.filters == 0 {
                return Err(UadError::ShapeMismatch(format!(
                    "block {i} ({b:?}) does not tile a {h}x{w} input"
                )));
            }
            sizes.push(((h - b.kernel.0) / b.stride.0 + 1, (w - b.kernel.1) / b.stride.1 + 1));
        }
        Ok(sizes)
    }

    pub fn latent_dim(&self) -> Result<usize> {
        let (h, w) = *self.spatial_sizes()?.last().unwrap();
        Ok(h * w * self.blocks.last().map_or(self.channels, |b| b.filters))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv),
    ConvTranspose(Conv),
    BatchNorm(BatchNorm),
    Gelu(usize),
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv(c) | Layer::ConvTranspose(c) => LayerSpec {
                kind: if matches!(self, Layer::Conv(_)) {
                    LayerKind::Conv
                } else {
                    LayerKind::ConvTranspose
                },
                kernel: (c.kh, c.kw),
                stride: (c.sh, c.sw),
                in_channels: c.in_c,
                filters: c.out_c,
            },
            Layer::BatchNorm(b) => LayerSpec {
                kind: LayerKind::BatchNorm,
                kernel: (1, 1),
                stride: (1, 1),
                in_channels: b.channels,
                filters: b.channels,
            },
            Layer::Gelu(c) => LayerSpec {
                kind: LayerKind::Gelu,
                kernel: (1, 1),
                stride: (1, 1),
                in_channels: *c,
                filters: *c,
            },
        }
    }

    fn params(&self) -> Vec<&Vec<f64>> {
        match self {
            Layer::Conv(c) | Layer::ConvTranspose(c) => vec![&c.weight, &c.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            Layer::Gelu(_) => vec![],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Conv(c) | Layer::ConvTranspose(c) => vec![&mut c.weight, &mut c.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::Gelu(_) => vec![],
        }
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> (Tensor, Option<BnCache>) {
        match self {
            Layer::Conv(c) => (c.forward(x), None),
            Layer::ConvTranspose(c) => (c.forward_transposed(x), None),
            Layer::BatchNorm(b) => b.forward(x, mode),
            Layer::Gelu(_) => (gelu_forward(x), None),
        }
    }

    fn backward(&self, x: &Tensor, cache: Option<&BnCache>, g: &Tensor) -> (Tensor, Vec<Vec<f64>>) {
        match self {
            Layer::Conv(c) => {
                let (dx, dw, db) = c.backward(x, g);
                (dx, vec![dw, db])
            }
            Layer::ConvTranspose(c) => {
                let (dx, dw, db) = c.backward_transposed(x, g);
                (dx, vec![dw, db])
            }
            Layer::BatchNorm(b) => {
                let (dx, dg, db) = match cache {
                    Some(cache) => b.backward_train(cache, g),
                    None => b.backward_infer(x, g),
                };
                (dx, vec![dg, db])
            }
            Layer::Gelu(_) => (gelu_backward(x, g), vec![]),
        }
    }
}

/// Per-parameter-tensor gradients, ordered like [`SaeModel::param_names`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

/// Activations recorded during a forward pass.
struct Trace {
    inputs: Vec<Tensor>,
    caches: Vec<Option<BnCache>>,
}

fn run(layers: &[Layer], x: Tensor, mode: Mode, keep: bool) -> (Tensor, Option<Trace>) {
    let mut trace = keep.then(|| Trace {
        inputs: Vec::with_capacity(layers.len()),
        caches: Vec::with_capacity(layers.len()),
    });
    let mut cur = x;
    for layer in layers {
        let (out, cache) = layer.forward(&cur, mode);
        if let Some(t) = trace.as_mut() {
            t.inputs.push(cur);
            t.caches.push(cache);
        }
        cur = out;
    }
    (cur, trace)
}

/// Backpropagates through `layers`. The input gradient is only returned
/// when `input_grad` is set.
fn back(layers: &[Layer], trace: &Trace, g: Tensor, input_grad: bool) -> (Option<Tensor>, Vec<Vec<f64>>) {
    let mut grads: Vec<Vec<Vec<f64>>> = vec![Vec::new(); layers.len()];
    let mut cur = g;
    for (i, layer) in layers.iter().enumerate().rev() {
        if i == 0 && !input_grad {
            if let Layer::Conv(c) = layer {
                let (dw, db) = c.param_grads(&trace.inputs[0], &cur);
                grads[0] = vec![dw, db];
                return (None, grads.into_iter().flatten().collect());
            }
        }
        let (dx, pg) = layer.backward(&trace.inputs[i], trace.caches[i].as_ref(), &cur);
        grads[i] = pg;
        cur = dx;
    }
    (Some(cur), grads.into_iter().flatten().collect())
}

/// Loss value, its parts, and optionally gradients for a batch of pairs.
#[derive(Debug, Clone)]
pub struct LossOutput {
    /// Mean over pairs of `|x1 - x1'|^2 + |x2 - x2'|^2 - alpha * cos(z1, z2)`.
    pub loss: f64,
    /// Mean over pairs of the summed squared reconstruction errors.
    pub recon: f64,
    /// Mean cosine similarity between paired latents.
    pub cosine: f64,
    pub grads: Option<Gradients>,
    /// Batch statistics of every batch-norm layer (training mode only), in
    /// encoder-then-decoder order.
    pub bn_batches: Vec<BnCache>,
}

/// Guard added under the square root of latent norms in the cosine term.
pub const COSINE_EPS: f64 = 1e-12;

/// Siamese convolutional auto-encoder with a mirrored transposed decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    arch: Architecture,
    pub encoder: Vec<Layer>,
    pub decoder: Vec<Layer>,
    pub alpha: f64,
    latent_shape: (usize, usize, usize),
}

impl SaeModel {
    /// Builds a model with all weights zero and identity batch norms.
    pub fn zeros(arch: &Architecture, alpha: f64) -> Result<Self> {
        if alpha < 0.0 || !alpha.is_finite() {
            return Err(UadError::InvalidParameter(format!("alpha must be >= 0, got {alpha}")));
        }
        let sizes = arch.spatial_sizes()?;
        let mut encoder = Vec::new();
        let mut in_c = arch.channels;
        for b in &arch.blocks {
            encoder.push(Layer::Conv(Conv::zeros(in_c, b.filters, b.kernel, b.stride)));
            encoder.push(Layer::Gelu(b.filters));
            encoder.push(Layer::BatchNorm(BatchNorm::new(b.filters)));
            in_c = b.filters;
        }
        let mut decoder = Vec::new();
        for (i, b) in arch.blocks.iter().enumerate().rev() {
            let out_c = if i == 0 { arch.channels } else { arch.blocks[i - 1].filters };
            decoder.push(Layer::ConvTranspose(Conv::zeros(b.filters, out_c, b.kernel, b.stride)));
            if i > 0 {
                decoder.push(Layer::Gelu(out_c));
                decoder.push(Layer::BatchNorm(BatchNorm::new(out_c)));
            }
        }
        let (h, w) = *sizes.last().unwrap();
        Ok(Self {
            arch: arch.clone(),
            encoder,
            decoder,
            alpha,
            latent_shape: (in_c, h, w),
        })
    }

    /// Uniform fan-in initialization `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// for convolution weights and biases.
    pub fn init(arch: &Architecture, alpha: f64, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(arch, alpha)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in m.encoder.iter_mut().chain(m.decoder.iter_mut()) {
            if let Layer::Conv(c) | Layer::ConvTranspose(c) = layer {
                let bound = 1.0 / ((c.in_c * c.kh * c.kw) as f64).sqrt();
                c.weight.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
                c.bias.iter_mut().for_each(|b| *b = rng.random_range(-bound..bound));
            }
        }
        Ok(m)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn latent_dim(&self) -> usize {
        let (c, h, w) = self.latent_shape;
        c * h * w
    }

    pub fn patch_len(&self) -> usize {
        self.arch.channels * self.arch.patch_side * self.arch.patch_side
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.encoder.iter().chain(self.decoder.iter())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.encoder.iter_mut().chain(self.decoder.iter_mut())
    }

    /// Names of all trainable tensors, e.g. `encoder.0.weight`.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (part, layers) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            for (i, l) in layers.iter().enumerate() {
                let tags: &[&str] = match l {
                    Layer::Conv(_) | Layer::ConvTranspose(_) => &["weight", "bias"],
                    Layer::BatchNorm(_) => &["gamma", "beta"],
                    Layer::Gelu(_) => &[],
                };
                names.extend(tags.iter().map(|t| format!("{part}.{i}.{t}")));
            }
        }
        names
    }

    pub fn params(&self) -> Vec<&Vec<f64>> {
        self.layers().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers_mut().flat_map(|l| l.params_mut()).collect()
    }

    fn check_patch(&self, p: &Patch) -> Result<()> {
        if p.side != self.arch.patch_side || p.channels != self.arch.channels {
            return Err(UadError::ShapeMismatch(format!(
                "patch {}x{}x{} vs model input {}x{}x{}",
                p.side, p.side, p.channels, self.arch.patch_side, self.arch.patch_side, self.arch.channels
            )));
        }
        Ok(())
    }

    fn stack(&self, patches: &[&Patch]) -> Result<Tensor> {
        let s = self.arch.patch_side;
        let mut data = Vec::with_capacity(patches.len() * self.patch_len());
        for p in patches {
            self.check_patch(p)?;
            data.extend_from_slice(&p.window);
        }
        Ok(Tensor::from_vec(patches.len(), self.arch.channels, s, s, data))
    }

    /// Latent vectors of a batch of patches (inference mode).
    pub fn encode_batch(&self, patches: &[&Patch]) -> Result<Vec<Vec<f64>>> {
        let x = self.stack(patches)?;
        let (z, _) = run(&self.encoder, x, Mode::Infer, false);
        Ok(z.data.chunks_exact(self.latent_dim()).map(<[f64]>::to_vec).collect())
    }

    pub fn encode(&self, patch: &Patch) -> Result<Vec<f64>> {
        Ok(self.encode_batch(&[patch])?.pop().unwrap())
    }

    /// Decodes a latent vector to a channel-major patch window.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim() {
            return Err(UadError::ShapeMismatch(format!(
                "latent of length {} vs {}",
                z.len(),
                self.latent_dim()
            )));
        }
        let (c, h, w) = self.latent_shape;
        let (out, _) = run(&self.decoder, Tensor::from_vec(1, c, h, w, z.to_vec()), Mode::Infer, false);
        Ok(out.data)
    }

    /// Reconstructions of a batch of patches (inference mode).
    pub fn reconstruct_batch(&self, patches: &[&Patch]) -> Result<Vec<Vec<f64>>> {
        let x = self.stack(patches)?;
        let (z, _) = run(&self.encoder, x, Mode::Infer, false);
        let (out, _) = run(&self.decoder, z, Mode::Infer, false);
        Ok(out.data.chunks_exact(self.patch_len()).map(<[f64]>::to_vec).collect())
    }

    /// Siamese loss of a single pair, with gradients.
    pub fn sae_loss(&self, pair: &PatchPair, mode: Mode) -> Result<LossOutput> {
        self.batch_loss(&[pair], mode, true)
    }

    /// Mean siamese loss over a batch of pairs. Both replicas share one
    /// forward pass, so training-mode batch statistics cover all `2B`
    /// patches.
    pub fn batch_loss(&self, pairs: &[&PatchPair], mode: Mode, with_grads: bool) -> Result<LossOutput> {
        let b = pairs.len();
        if b == 0 {
            return Err(UadError::InvalidParameter("empty batch".into()));
        }
        let patches: Vec<&Patch> = pairs.iter().map(|p| &p.a).chain(pairs.iter().map(|p| &p.b)).collect();
        let x = self.stack(&patches)?;
        let (z, enc_trace) = run(&self.encoder, x.clone(), mode, with_grads || mode == Mode::Train);
        let (xr, dec_trace) = run(&self.decoder, z.clone(), mode, with_grads || mode == Mode::Train);

        let m = self.latent_dim();
        let scale = 1.0 / b as f64;
        let mut recon = 0.0;
        let mut dxr = Tensor::zeros(xr.n, xr.c, xr.h, xr.w);
        for (k, (r, t)) in xr.data.iter().zip(&x.data).enumerate() {
            let d = r - t;
            recon += d * d;
            dxr.data[k] = 2.0 * d * scale;
        }
        let mut cos_sum = 0.0;
        let mut dz = Tensor::zeros(z.n, z.c, z.h, z.w);
        for i in 0..b {
            let (za, zb) = (&z.data[i * m..(i + 1) * m], &z.data[(b + i) * m..(b + i + 1) * m]);
            let dot: f64 = za.iter().zip(zb).map(|(p, q)| p * q).sum();
            let na = (za.iter().map(|v| v * v).sum::<f64>() + COSINE_EPS * COSINE_EPS).sqrt();
            let nb = (zb.iter().map(|v| v * v).sum::<f64>() + COSINE_EPS * COSINE_EPS).sqrt();
            let cos = dot / (na * nb);
            cos_sum += cos;
            let g = -self.alpha * scale;
            for j in 0..m {
                dz.data[i * m + j] = g * (zb[j] / (na * nb) - cos * za[j] / (na * na));
                dz.data[(b + i) * m + j] = g * (za[j] / (na * nb) - cos * zb[j] / (nb * nb));
            }
        }
        let loss = (recon - self.alpha * cos_sum) * scale;

        let bn_batches = |t: &Option<Trace>| -> Vec<BnCache> {
            t.as_ref()
                .map(|t| t.caches.iter().flatten().cloned().collect())
                .unwrap_or_default()
        };
        let mut batches = bn_batches(&enc_trace);
        batches.extend(bn_batches(&dec_trace));

        let grads = if with_grads {
            let dec_trace = dec_trace.as_ref().unwrap();
            let (dz_rec, dec_grads) = back(&self.decoder, dec_trace, dxr, true);
            let dz_rec = dz_rec.expect("input gradient requested");
            let mut gz = dz;
            gz.data.iter_mut().zip(&dz_rec.data).for_each(|(a, b)| *a += b);
            let (_, enc_grads) = back(&self.encoder, enc_trace.as_ref().unwrap(), gz, false);
            let mut tensors = enc_grads;
            tensors.extend(dec_grads);
            Some(Gradients { tensors })
        } else {
            None
        };
        Ok(LossOutput {
            loss,
            recon: recon * scale,
            cosine: cos_sum * scale,
            grads,
            bn_batches: batches,
        })
    }

    /// Folds training-mode batch statistics into the running averages.
    pub fn update_running_stats(&mut self, batches: &[BnCache], momentum: f64) {
        let bns = self.layers_mut().filter_map(|l| match l {
            Layer::BatchNorm(b) => Some(b),
            _ => None,
        });
        for (bn, cache) in bns.zip(batches) {
            bn.update_running(cache, momentum);
        }
    }

    /// Serializes to the `UADM` container with `f32` weights.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = model_header(ModelKind::Sae);
        w.usize(self.arch.channels);
        w.usize(self.arch.patch_side);
        w.f64(self.alpha);
        w.usize(self.arch.blocks.len());
        for b in &self.arch.blocks {
            for v in [b.kernel.0, b.kernel.1, b.stride.0, b.stride.1, b.filters] {
                w.usize(v);
            }
        }
        w.usize(self.encoder.len() + self.decoder.len());
        for l in self.layers() {
            let s = l.spec();
            w.u32(s.kind.code());
            for v in [s.kernel.0, s.kernel.1, s.stride.0, s.stride.1, s.in_channels, s.filters] {
                w.usize(v);
            }
            match l {
                Layer::Conv(c) | Layer::ConvTranspose(c) => {
                    w.f32s(&c.weight);
                    w.f32s(&c.bias);
                }
                Layer::BatchNorm(b) => {
                    w.f32s(&b.gamma);
                    w.f32s(&b.beta);
                    w.f32s(&b.running_mean);
                    w.f32s(&b.running_var);
                }
                Layer::Gelu(_) => {}
            }
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = open_model(bytes, ModelKind::Sae)?;
        let channels = r.usize()?;
        let patch_side = r.usize()?;
        let alpha = r.f64()?;
        let n_blocks = r.usize()?;
        let mut blocks = Vec::with_capacity(n_blocks);
        for _ in 0..n_blocks {
            let v: Vec<usize> = (0..5).map(|_| r.usize()).collect::<Result<_>>()?;
            blocks.push(BlockSpec {
                kernel: (v[0], v[1]),
                stride: (v[2], v[3]),
                filters: v[4],
            });
        }
        let arch = Architecture {
            channels,
            patch_side,
            blocks,
        };
        let mut model = Self::zeros(&arch, alpha)?;
        let n_layers = r.usize()?;
        if n_layers != model.encoder.len() + model.decoder.len() {
            return Err(UadError::Parse(format!("checkpoint lists {n_layers} layers")));
        }
        for (i, layer) in model.layers_mut().enumerate() {
            let kind = LayerKind::from_code(r.u32()?)
                .ok_or_else(|| UadError::Parse(format!("layer {i}: unknown kind")))?;
            let v: Vec<usize> = (0..6).map(|_| r.usize()).collect::<Result<_>>()?;
            let spec = LayerSpec {
                kind,
                kernel: (v[0], v[1]),
                stride: (v[2], v[3]),
                in_channels: v[4],
                filters: v[5],
            };
            if spec != layer.spec() {
                return Err(UadError::Parse(format!("layer {i}: spec {spec:?} does not match architecture")));
            }
            let mut fill = |dst: &mut Vec<f64>| -> Result<()> {
                let src = r.f32s()?;
                if src.len() != dst.len() {
                    return Err(UadError::LengthMismatch(format!(
                        "layer {i}: {} values for a tensor of {}",
                        src.len(),
                        dst.len()
                    )));
                }
                *dst = src;
                Ok(())
            };
            match layer {
                Layer::Conv(c) | Layer::ConvTranspose(c) => {
                    fill(&mut c.weight)?;
                    fill(&mut c.bias)?;
                }
                Layer::BatchNorm(b) => {
                    fill(&mut b.gamma)?;
                    fill(&mut b.beta)?;
                    fill(&mut b.running_mean)?;
                    fill(&mut b.running_var)?;
                }
                Layer::Gelu(_) => {}
            }
        }
        r.finish()?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch(side: usize, ch: usize, f: impl Fn(usize) -> f64) -> Patch {
        Patch {
            side,
            channels: ch,
            window: (0..side * side * ch).map(f).collect(),
            location: [0, 0, 0],
            subject_id: "s".into(),
        }
    }

    #[test]
    fn reference_shapes() {
        let arch = Architecture::reference(3);
        let sizes: Vec<usize> = arch.spatial_sizes().unwrap().iter().map(|s| s.0).collect();
        assert_eq!(sizes, vec![15, 11, 9, 3, 1]);
        assert_eq!(arch.latent_dim().unwrap(), 16);
        let m = SaeModel::init(&arch, 1e-3, 0).unwrap();
        let p = patch(15, 3, |i| (i as f64 * 0.37).sin());
        assert_eq!(m.encode(&p).unwrap().len(), 16);
        assert_eq!(m.decode(&[0.1; 16]).unwrap().len(), 15 * 15 * 3);
    }

    #[test]
    fn decoder_sizes_invert_encoder() {
        let arch = Architecture::reference(3);
        let m = SaeModel::zeros(&arch, 0.0).unwrap();
        let mut sizes = arch.spatial_sizes().unwrap();
        sizes.reverse();
        let mut h = 1;
        let mut k = 1;
        for l in &m.decoder {
            if let Layer::ConvTranspose(c) = l {
                h = c.convt_out(h, h).0;
                assert_eq!(h, sizes[k].0);
                k += 1;
            }
        }
        assert_eq!(h, 15);
    }

    #[test]
    fn zero_model_encodes_to_zero_and_decodes_to_bias() {
        let arch = Architecture::reference(3);
        let mut m = SaeModel::zeros(&arch, 0.0).unwrap();
        let p = patch(15, 3, |i| i as f64);
        assert!(m.encode(&p).unwrap().iter().all(|&v| v == 0.0));
        if let Some(Layer::ConvTranspose(c)) = m.decoder.last_mut() {
            c.bias = vec![0.5, -1.0, 2.0];
        }
        let out = m.decode(&[0.3; 16]).unwrap();
        for (i, v) in out.iter().enumerate() {
            assert_eq!(*v, [0.5, -1.0, 2.0][i / 225]);
        }
    }

    #[test]
    fn encode_is_deterministic_and_shape_checked() {
        let m = SaeModel::init(&Architecture::reference(3), 1e-3, 5).unwrap();
        let p = patch(15, 3, |i| (i % 7) as f64);
        assert_eq!(m.encode(&p).unwrap(), m.encode(&p).unwrap());
        let bad = patch(13, 3, |_| 0.0);
        assert!(matches!(m.encode(&bad), Err(UadError::ShapeMismatch(_))));
        assert!(m.decode(&[0.0; 3]).is_err());
        let rec = m.reconstruct_batch(&[&p]).unwrap();
        assert_eq!(rec[0], m.decode(&m.encode(&p).unwrap()).unwrap());
    }

    #[test]
    fn loss_without_cosine_is_reconstruction_error() {
        let m = SaeModel::init(&Architecture::reference(3), 0.0, 2).unwrap();
        let a = patch(15, 3, |i| (i as f64 * 0.1).cos());
        let b = patch(15, 3, |i| (i as f64 * 0.2).sin());
        let pair = PatchPair { a: a.clone(), b: b.clone() };
        let out = m.sae_loss(&pair, Mode::Infer).unwrap();
        let err = |p: &Patch| {
            let r = m.decode(&m.encode(p).unwrap()).unwrap();
            r.iter().zip(&p.window).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
        };
        assert!((out.loss - (err(&a) + err(&b))).abs() < 1e-9);
        assert!(out.loss >= 0.0);
    }

    #[test]
    fn perfect_reconstruction_gives_zero_loss() {
        // decoder outputs its bias; inputs equal that constant
        let arch = Architecture::reference(1);
        let mut m = SaeModel::zeros(&arch, 0.0).unwrap();
        if let Some(Layer::ConvTranspose(c)) = m.decoder.last_mut() {
            c.bias = vec![0.25];
        }
        let p = patch(15, 1, |_| 0.25);
        let out = m.sae_loss(&PatchPair { a: p.clone(), b: p }, Mode::Train).unwrap();
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = SaeModel::init(&Architecture::reference(3), 1e-3, 11).unwrap();
        let bytes = m.to_bytes();
        let back = SaeModel::from_bytes(&bytes).unwrap();
        assert_eq!(back.param_names(), m.param_names());
        for (a, b) in back.params().iter().zip(m.params()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
        // f32 weights are a fixed point of the round trip
        assert_eq!(SaeModel::from_bytes(&back.to_bytes()).unwrap(), back);
        assert!(SaeModel::from_bytes(&bytes[..bytes.len() - 2]).is_err());
    }
}
