use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::layers::Mode;
use super::model::{Architecture, SaeModel};
use crate::error::{Result, UadError};
use crate::patching::{extract_pair, PairDraw, PatchPair, Subject};

/// Indexed collection of training pairs.
pub trait PairSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The pairs at `indices`, in order.
    fn fetch(&self, indices: &[usize]) -> Result<Vec<PatchPair>>;
}

impl PairSource for [PatchPair] {
    fn len(&self) -> usize {
        <[PatchPair]>::len(self)
    }

    fn fetch(&self, indices: &[usize]) -> Result<Vec<PatchPair>> {
        Ok(indices.iter().map(|&i| self[i].clone()).collect())
    }
}

impl PairSource for Vec<PatchPair> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn fetch(&self, indices: &[usize]) -> Result<Vec<PatchPair>> {
        self.as_slice().fetch(indices)
    }
}

impl<const N: usize> PairSource for [PatchPair; N] {
    fn len(&self) -> usize {
        N
    }

    fn fetch(&self, indices: &[usize]) -> Result<Vec<PatchPair>> {
        self.as_slice().fetch(indices)
    }
}

/// Pairs extracted from subject volumes on demand.
pub struct LazyPairs<'a> {
    pub subjects: &'a [Subject],
    pub draws: &'a [PairDraw],
    pub patch_side: usize,
}

impl PairSource for LazyPairs<'_> {
    fn len(&self) -> usize {
        self.draws.len()
    }

    fn fetch(&self, indices: &[usize]) -> Result<Vec<PatchPair>> {
        indices
            .iter()
            .map(|&i| extract_pair(self.subjects, &self.draws[i], self.patch_side))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the cosine-similarity term.
    pub alpha: f64,
    pub adam: AdamConfig,
    /// Running-statistics momentum of batch normalization.
    pub bn_momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 1000,
            alpha: 1e-3,
            adam: AdamConfig::default(),
            bn_momentum: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot with the lowest validation loss.
    pub model: SaeModel,
    pub best_epoch: usize,
    pub trace: Vec<EpochLoss>,
    /// Weights after the last epoch.
    pub last: SaeModel,
}

/// Mean inference-mode loss over a set of pairs.
pub fn evaluate_loss<S: PairSource + ?Sized>(model: &SaeModel, pairs: &S, batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    let all: Vec<usize> = (0..pairs.len()).collect();
    for chunk in all.chunks(batch_size.max(1)) {
        let batch = pairs.fetch(chunk)?;
        let refs: Vec<&PatchPair> = batch.iter().collect();
        total += model.batch_loss(&refs, Mode::Infer, false)?.loss * chunk.len() as f64;
    }
    Ok(total / pairs.len() as f64)
}

/// Trains a freshly initialized model with Adam on mini-batches of pairs
/// and keeps the epoch snapshot with minimal validation loss.
pub fn train_sae<S: PairSource + ?Sized, V: PairSource + ?Sized>(
    arch: &Architecture,
    train: &S,
    val: &V,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let model = SaeModel::init(arch, config.alpha, config.seed)?;
    train_from(model, train, val, config)
}

pub fn train_from<S: PairSource + ?Sized, V: PairSource + ?Sized>(
    mut model: SaeModel,
    train: &S,
    val: &V,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(UadError::InvalidParameter("training and validation pairs must be non-empty".into()));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(UadError::InvalidParameter("epochs and batch_size must be >= 1".into()));
    }
    model.alpha = config.alpha;
    let names = model.param_names();
    let shapes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let mut adam = AdamState::new(config.adam, &shapes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5a3e);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut trace = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, SaeModel)> = None;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let pairs = train.fetch(chunk)?;
            let batch: Vec<&PatchPair> = pairs.iter().collect();
            let out = model.batch_loss(&batch, Mode::Train, true)?;
            if !out.loss.is_finite() {
                return Err(UadError::Diverged { epoch, loss: out.loss });
            }
            let grads = out.grads.expect("gradients requested");
            adam.step(&mut model.params_mut(), &grads.tensors, &names)?;
            model.update_running_stats(&out.bn_batches, config.bn_momentum);
            sum += out.loss * chunk.len() as f64;
        }
        let train_loss = sum / train.len() as f64;
        let val_loss = evaluate_loss(&model, val, config.batch_size)?;
        if !val_loss.is_finite() {
            return Err(UadError::Diverged { epoch, loss: val_loss });
        }
        trace.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, model.clone()));
        }
    }
    let (_, best_epoch, best_model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model: best_model,
        best_epoch,
        trace,
        last: model,
    })
}

pub fn format_loss_trace(trace: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss\n");
    for e in trace {
        s.push_str(&format!("{},{:.9e},{:.9e}\n", e.epoch, e.train_loss, e.val_loss));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patching::Patch;
    use crate::sae::model::BlockSpec;

    fn tiny_arch() -> Architecture {
        Architecture {
            channels: 2,
            patch_side: 5,
            blocks: vec![
                BlockSpec {
                    kernel: (3, 3),
                    stride: (1, 1),
                    filters: 3,
                },
                BlockSpec {
                    kernel: (3, 3),
                    stride: (1, 1),
                    filters: 4,
                },
            ],
        }
    }

    fn pair(seed: usize) -> PatchPair {
        let mk = |off: usize, id: &str| Patch {
            side: 5,
            channels: 2,
            window: (0..50).map(|i| (((i + off) * 7919 + seed * 31) % 97) as f64 / 97.0).collect(),
            location: [2, 2, 0],
            subject_id: id.into(),
        };
        PatchPair {
            a: mk(0, "a"),
            b: mk(3, "b"),
        }
    }

    #[test]
    fn repeated_pair_loss_decreases() {
        let p = pair(1);
        let train = vec![p.clone(); 8];
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 4,
            alpha: 0.0,
            seed: 3,
            ..Default::default()
        };
        let out = train_sae(&tiny_arch(), &train, &[p], &cfg).unwrap();
        for w in out.trace.windows(2) {
            assert!(w[1].train_loss < w[0].train_loss, "{:?}", out.trace);
        }
    }

    #[test]
    fn best_snapshot_and_determinism() {
        let train: Vec<PatchPair> = (0..12).map(pair).collect();
        let val: Vec<PatchPair> = (20..24).map(pair).collect();
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 5,
            seed: 9,
            ..Default::default()
        };
        let a = train_sae(&tiny_arch(), &train, &val, &cfg).unwrap();
        let b = train_sae(&tiny_arch(), &train, &val, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.last, b.last);
        let best_val = evaluate_loss(&a.model, &val, 5).unwrap();
        let last_val = evaluate_loss(&a.last, &val, 5).unwrap();
        assert!(best_val <= last_val);
        let min = a.trace.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(a.trace[a.best_epoch - 1].val_loss, min);
        let csv = format_loss_trace(&a.trace);
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn rejects_empty_sets() {
        assert!(train_sae(&tiny_arch(), &[], &[pair(0)], &TrainConfig::default()).is_err());
        assert!(train_sae(&tiny_arch(), &[pair(0)], &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn divergence_reports_epoch() {
        let train = vec![pair(2); 4];
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            adam: AdamConfig {
                lr: f64::INFINITY,
                ..Default::default()
            },
            ..Default::default()
        };
        match train_sae(&tiny_arch(), &train, &train[..1], &cfg) {
            Err(UadError::Diverged { epoch, .. }) => assert!(epoch >= 1),
            Err(UadError::NonFiniteGradient { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
