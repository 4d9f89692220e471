//! The frame classifier: a small residual 1D CNN mapping a normalised frame
//! to one of the control-filter indices.
//!
//! ```text
//! frame (1, L)
//!   stem: conv(k80, s4, p38) -> BN -> ReLU -> maxpool 4
//!   block 1: [conv k3 -> BN -> ReLU -> conv k3 -> BN] + x -> ReLU
//!   maxpool 4
//!   block 2: same, with a 1x1 projection on the shortcut (32 -> 64 channels)
//!   global average pool -> dense -> logits
//! ```
//!
//! Gradients are written by hand; see `backward` on [`CnnModel`].

mod io;
pub mod layers;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use io::{decode_model, encode_model, load_model, save_model};
pub use layers::{softmax, ParamKind, Tensor};
pub use train::{
    accuracy, batch_tensor, confusion_matrix, evaluate, train, train_entries, Adam, EpochMetrics,
    TrainConfig, TrainReport,
};

use crate::error::{Error, Result};
use layers::{
    cross_entropy, global_avg_pool, global_avg_pool_backward, max_pool, max_pool_backward, relu,
    relu_backward, BatchNorm1d, BnCache, Conv1d, ConvCache, Dense, PoolCache, TensorMut, TensorRef,
};

/// Upper bound on learnable parameters.
pub const MAX_PARAMS: usize = 250_000;
/// Convolutional plus fully connected layers; shortcut projections are not counted.
pub const COUNTED_LAYERS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_len: usize,
    pub num_classes: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_padding: usize,
    pub block1_channels: usize,
    pub block2_channels: usize,
    /// Odd kernel of the block convolutions ("same" padding).
    pub block_kernel: usize,
    pub pool: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_len: 16_000,
            num_classes: crate::NUM_CONTROL_FILTERS,
            stem_channels: 32,
            stem_kernel: 80,
            stem_stride: 4,
            stem_padding: 38,
            block1_channels: 32,
            block2_channels: 64,
            block_kernel: 3,
            pool: 4,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// A few-hundred-parameter variant for gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            input_len: 64,
            num_classes: 3,
            stem_channels: 2,
            stem_kernel: 8,
            stem_stride: 2,
            stem_padding: 3,
            block1_channels: 2,
            block2_channels: 4,
            block_kernel: 3,
            pool: 2,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("model config: {m}")));
        if self.num_classes < 2 {
            return bad("need at least two classes");
        }
        if [self.stem_channels, self.block1_channels, self.block2_channels, self.stem_kernel, self.stem_stride, self.pool]
            .contains(&0)
        {
            return bad("channel counts, kernels, stride and pool must be positive");
        }
        if self.block_kernel % 2 == 0 {
            return bad("block kernel must be odd");
        }
        if self.stem_channels != self.block1_channels {
            return bad("block 1 keeps the stem width");
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) || !(self.bn_eps > 0.0) {
            return bad("batch-norm momentum must lie in (0, 1) and epsilon be positive");
        }
        let stem = self.input_len + 2 * self.stem_padding;
        if stem < self.stem_kernel {
            return bad("input shorter than the stem kernel");
        }
        let l1 = (stem - self.stem_kernel) / self.stem_stride + 1;
        if l1 / self.pool / self.pool == 0 {
            return bad("input too short for two pooling stages");
        }
        Ok(())
    }
}

/// Two convolutions with batch norm and an additive shortcut.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub conv1: Conv1d,
    pub bn1: BatchNorm1d,
    pub conv2: Conv1d,
    pub bn2: BatchNorm1d,
    /// 1x1 projection when the channel count changes.
    pub shortcut: Option<Conv1d>,
}

/// Intermediate values of one block's training-mode forward pass.
pub struct BlockCache {
    c1: ConvCache,
    b1: BnCache,
    a1: Tensor,
    c2: ConvCache,
    b2: BnCache,
    sc: Option<ConvCache>,
    out: Tensor,
}

impl ResidualBlock {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        cfg: &ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let pad = kernel / 2;
        let bn = || BatchNorm1d::new(out_channels, cfg.bn_momentum, cfg.bn_eps);
        ResidualBlock {
            conv1: Conv1d::new(in_channels, out_channels, kernel, 1, pad, rng),
            bn1: bn(),
            conv2: Conv1d::new(out_channels, out_channels, kernel, 1, pad, rng),
            bn2: bn(),
            shortcut: (in_channels != out_channels)
                .then(|| Conv1d::new(in_channels, out_channels, 1, 1, 0, rng)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ResidualBlock {
            conv1: self.conv1.zeros_like(),
            bn1: self.bn1.zeros_like(),
            conv2: self.conv2.zeros_like(),
            bn2: self.bn2.zeros_like(),
            shortcut: self.shortcut.as_ref().map(Conv1d::zeros_like),
        }
    }

    pub fn forward_train(&self, name: &str, x: &Tensor) -> Result<(Tensor, BlockCache)> {
        let (h, c1) = self.conv1.forward(&format!("{name}.conv1"), x)?;
        let (h, b1) = self.bn1.forward_train(&format!("{name}.bn1"), &h)?;
        let a1 = relu(h);
        let (h, c2) = self.conv2.forward(&format!("{name}.conv2"), &a1)?;
        let (mut h, b2) = self.bn2.forward_train(&format!("{name}.bn2"), &h)?;
        let sc = match &self.shortcut {
            Some(p) => {
                let (s, cache) = p.forward(&format!("{name}.shortcut"), x)?;
                add_into(name, &mut h, &s)?;
                Some(cache)
            }
            None => {
                add_into(name, &mut h, x)?;
                None
            }
        };
        let out = relu(h);
        Ok((
            out.clone(),
            BlockCache {
                c1,
                b1,
                a1,
                c2,
                b2,
                sc,
                out,
            },
        ))
    }

    pub fn forward_infer(&self, name: &str, x: &Tensor) -> Result<Tensor> {
        let (h, _) = self.conv1.forward(&format!("{name}.conv1"), x)?;
        let a1 = relu(self.bn1.forward_infer(&format!("{name}.bn1"), &h)?);
        let (h, _) = self.conv2.forward(&format!("{name}.conv2"), &a1)?;
        let mut h = self.bn2.forward_infer(&format!("{name}.bn2"), &h)?;
        match &self.shortcut {
            Some(p) => {
                let (s, _) = p.forward(&format!("{name}.shortcut"), x)?;
                add_into(name, &mut h, &s)?;
            }
            None => add_into(name, &mut h, x)?,
        }
        Ok(relu(h))
    }

    /// Accumulates parameter gradients into `grad`; returns the input gradient.
    pub fn backward(&self, cache: &BlockCache, dout: Tensor, grad: &mut ResidualBlock) -> Tensor {
        let dh = relu_backward(&cache.out, dout);
        let mut dx = match (&self.shortcut, &cache.sc) {
            (Some(p), Some(sc)) => p
                .backward(sc, &dh, grad.shortcut.as_mut().expect("same architecture"), true)
                .expect("input gradient requested"),
            _ => dh.clone(),
        };
        let d = self.bn2.backward(&cache.b2, &dh, &mut grad.bn2);
        let d = self
            .conv2
            .backward(&cache.c2, &d, &mut grad.conv2, true)
            .expect("input gradient requested");
        let d = relu_backward(&cache.a1, d);
        let d = self.bn1.backward(&cache.b1, &d, &mut grad.bn1);
        let d = self
            .conv1
            .backward(&cache.c1, &d, &mut grad.conv1, true)
            .expect("input gradient requested");
        for (a, b) in dx.data.iter_mut().zip(&d.data) {
            *a += b;
        }
        dx
    }

    fn update_running(&mut self, cache: &BlockCache) {
        self.bn1.update_running(&cache.b1);
        self.bn2.update_running(&cache.b2);
    }

    pub fn tensors<'a>(&'a self, p: &str) -> Vec<TensorRef<'a>> {
        let mut v = self.conv1.tensors(&format!("{p}.conv1"));
        v.extend(self.bn1.tensors(&format!("{p}.bn1")));
        v.extend(self.conv2.tensors(&format!("{p}.conv2")));
        v.extend(self.bn2.tensors(&format!("{p}.bn2")));
        if let Some(s) = &self.shortcut {
            v.extend(s.tensors(&format!("{p}.shortcut")));
        }
        v
    }

    pub fn tensors_mut<'a>(&'a mut self, p: &str) -> Vec<TensorMut<'a>> {
        let mut v = self.conv1.tensors_mut(&format!("{p}.conv1"));
        v.extend(self.bn1.tensors_mut(&format!("{p}.bn1")));
        v.extend(self.conv2.tensors_mut(&format!("{p}.conv2")));
        v.extend(self.bn2.tensors_mut(&format!("{p}.bn2")));
        if let Some(s) = &mut self.shortcut {
            v.extend(s.tensors_mut(&format!("{p}.shortcut")));
        }
        v
    }
}

fn add_into(name: &str, acc: &mut Tensor, x: &Tensor) -> Result<()> {
    if !acc.same_shape(x) {
        return Err(Error::Shape {
            layer: format!("{name}.add"),
            detail: format!(
                "shortcut ({}, {}, {}) vs branch ({}, {}, {})",
                x.n, x.c, x.l, acc.n, acc.c, acc.l
            ),
        });
    }
    for (a, b) in acc.data.iter_mut().zip(&x.data) {
        *a += b;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub config: ModelConfig,
    pub stem: Conv1d,
    pub stem_bn: BatchNorm1d,
    pub block1: ResidualBlock,
    pub block2: ResidualBlock,
    pub head: Dense,
}

/// Everything the backward pass needs from a training-mode forward pass.
pub struct ForwardCache {
    stem: ConvCache,
    stem_bn: BnCache,
    stem_act: Tensor,
    pool1: PoolCache,
    block1: BlockCache,
    pool2: PoolCache,
    block2: BlockCache,
    gap_in_len: usize,
    features: Tensor,
}

impl CnnModel {
    /// Glorot-initialised model; fails if the architecture breaks the
    /// parameter or layer budget.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let stem = Conv1d::new(1, c.stem_channels, c.stem_kernel, c.stem_stride, c.stem_padding, &mut rng);
        let block1 = ResidualBlock::new(c.stem_channels, c.block1_channels, c.block_kernel, c, &mut rng);
        let block2 = ResidualBlock::new(c.block1_channels, c.block2_channels, c.block_kernel, c, &mut rng);
        let head = Dense::new(c.block2_channels, c.num_classes, &mut rng);
        let model = CnnModel {
            config,
            stem,
            stem_bn: BatchNorm1d::new(c.stem_channels, c.bn_momentum, c.bn_eps),
            block1,
            block2,
            head,
        };
        if model.param_count() > MAX_PARAMS {
            return Err(Error::InvalidArgument(format!(
                "model has {} parameters, budget is {MAX_PARAMS}",
                model.param_count()
            )));
        }
        debug_assert_eq!(model.layer_count(), COUNTED_LAYERS);
        Ok(model)
    }

    /// Same architecture with every tensor zeroed; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        CnnModel {
            config: self.config,
            stem: self.stem.zeros_like(),
            stem_bn: self.stem_bn.zeros_like(),
            block1: self.block1.zeros_like(),
            block2: self.block2.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    /// Learnable parameters (weights, biases, batch-norm scale and shift).
    pub fn param_count(&self) -> usize {
        self.tensors()
            .iter()
            .filter(|(_, k, _)| *k != ParamKind::Buffer)
            .map(|(_, _, t)| t.len())
            .sum()
    }

    pub fn layer_count(&self) -> usize {
        // stem + two convolutions per block + dense head
        1 + 2 + 2 + 1
    }

    /// Named tensors in a fixed order: the persistence and optimiser layout.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut v = self.stem.tensors("stem");
        v.extend(self.stem_bn.tensors("stem_bn"));
        v.extend(self.block1.tensors("block1"));
        v.extend(self.block2.tensors("block2"));
        v.extend(self.head.tensors("head"));
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut v = self.stem.tensors_mut("stem");
        v.extend(self.stem_bn.tensors_mut("stem_bn"));
        v.extend(self.block1.tensors_mut("block1"));
        v.extend(self.block2.tensors_mut("block2"));
        v.extend(self.head.tensors_mut("head"));
        v
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.c != 1 || x.l != self.config.input_len {
            return Err(Error::Shape {
                layer: "input".into(),
                detail: format!(
                    "expected (1, {}) frames, got ({}, {})",
                    self.config.input_len, x.c, x.l
                ),
            });
        }
        if !x.data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: "input frame".into(),
            });
        }
        Ok(())
    }

    /// Batch-statistics forward pass. Running statistics are not touched;
    /// call [`CnnModel::update_running_stats`] with the returned cache.
    pub fn forward_train(&self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.check_input(x)?;
        let (h, stem) = self.stem.forward("stem", x)?;
        let (h, stem_bn) = self.stem_bn.forward_train("stem_bn", &h)?;
        let stem_act = relu(h);
        let (h, pool1) = max_pool("pool1", &stem_act, self.config.pool)?;
        let (h, block1) = self.block1.forward_train("block1", &h)?;
        let (h, pool2) = max_pool("pool2", &h, self.config.pool)?;
        let (h, block2) = self.block2.forward_train("block2", &h)?;
        let gap_in_len = h.l;
        let features = global_avg_pool(&h);
        let logits = self.head.forward("head", &features)?;
        Ok((
            logits,
            ForwardCache {
                stem,
                stem_bn,
                stem_act,
                pool1,
                block1,
                pool2,
                block2,
                gap_in_len,
                features,
            },
        ))
    }

    /// Running-statistics forward pass over a batch.
    pub fn forward_infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let (h, _) = self.stem.forward("stem", x)?;
        let h = relu(self.stem_bn.forward_infer("stem_bn", &h)?);
        let (h, _) = max_pool("pool1", &h, self.config.pool)?;
        let h = self.block1.forward_infer("block1", &h)?;
        let (h, _) = max_pool("pool2", &h, self.config.pool)?;
        let h = self.block2.forward_infer("block2", &h)?;
        let logits = self.head.forward("head", &global_avg_pool(&h))?;
        if !logits.data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: "logits".into(),
            });
        }
        Ok(logits)
    }

    /// Logits for one normalised frame.
    pub fn logits(&self, frame: &[f64]) -> Result<Vec<f64>> {
        let x = Tensor::from_vec(1, 1, frame.len(), frame.to_vec())?;
        Ok(self.forward_infer(&x)?.data)
    }

    /// Index of the largest logit; ties go to the lowest index.
    pub fn predict(&self, frame: &[f64]) -> Result<usize> {
        Ok(crate::bank::argmin_first(
            &self.logits(frame)?.iter().map(|v| -v).collect::<Vec<_>>(),
        ))
    }

    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        self.stem_bn.update_running(&cache.stem_bn);
        self.block1.update_running(&cache.block1);
        self.block2.update_running(&cache.block2);
    }

    /// Gradients of the mean cross-entropy w.r.t. every tensor, given the
    /// logits gradient. Buffer slots of the result stay zero.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Tensor) -> CnnModel {
        let mut g = self.zeros_like();
        let d = self.head.backward(&cache.features, dlogits, &mut g.head);
        let d = global_avg_pool_backward(&d, cache.gap_in_len);
        let d = self.block2.backward(&cache.block2, d, &mut g.block2);
        let d = max_pool_backward(&cache.pool2, &d);
        let d = self.block1.backward(&cache.block1, d, &mut g.block1);
        let d = max_pool_backward(&cache.pool1, &d);
        let d = relu_backward(&cache.stem_act, d);
        let d = self.stem_bn.backward(&cache.stem_bn, &d, &mut g.stem_bn);
        self.stem.backward(&cache.stem, &d, &mut g.stem, false);
        g
    }

    /// `sum over weight tensors of ||W||^2`.
    pub fn weight_norm_sq(&self) -> f64 {
        self.tensors()
            .iter()
            .filter(|(_, k, _)| *k == ParamKind::Weight)
            .map(|(_, _, t)| t.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// Loss `CE + l2 * ||W||^2` and its gradient for a labelled batch, plus
    /// the forward cache (for running statistics).
    pub fn loss_and_gradients(
        &self,
        x: &Tensor,
        labels: &[usize],
        l2: f64,
    ) -> Result<(f64, CnnModel, ForwardCache)> {
        let (logits, cache) = self.forward_train(x)?;
        let (ce, dlogits) = cross_entropy(&logits, labels)?;
        let mut grads = self.backward(&cache, &dlogits);
        let loss = ce + l2 * self.weight_norm_sq();
        if l2 != 0.0 {
            for ((_, kind, w), (_, _, g)) in self.tensors().into_iter().zip(grads.tensors_mut()) {
                if kind == ParamKind::Weight {
                    for (gi, wi) in g.iter_mut().zip(w) {
                        *gi += 2.0 * l2 * wi;
                    }
                }
            }
        }
        for (name, _, g) in grads.tensors() {
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { what: name });
            }
        }
        Ok((loss, grads, cache))
    }
}
