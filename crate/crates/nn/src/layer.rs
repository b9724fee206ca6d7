use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::activation::Act;
use crate::param::Param;
use crate::tensor::Tensor;

/// Per-call state for a training-mode forward pass.
pub struct Ctx {
    /// Keep activations for a later `backward`.
    pub cache: bool,
    /// Fold batch statistics into batch-norm running estimates.
    pub update_stats: bool,
    /// Source of dropout masks. Two passes created from the same seed draw
    /// identical masks.
    pub rng: ChaCha8Rng,
    /// Replaces every batch-norm layer's own momentum when set.
    pub bn_momentum: Option<f32>,
}

impl Ctx {
    pub fn train(seed: u64) -> Self {
        Self {
            cache: true,
            update_stats: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            bn_momentum: None,
        }
    }

    /// Forward pass whose outputs are only read, never differentiated.
    pub fn no_cache(mut self) -> Self {
        self.cache = false;
        self
    }

    pub fn frozen_stats(mut self) -> Self {
        self.update_stats = false;
        self
    }

    pub fn with_bn_momentum(mut self, momentum: Option<f32>) -> Self {
        self.bn_momentum = momentum;
        self
    }
}

/// What a layer computes, in enough detail to price it.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
    },
    Linear {
        in_features: usize,
        out_features: usize,
        bias: bool,
    },
    BatchNorm {
        channels: usize,
    },
    Activation(Act),
    MaxPool {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    GlobalAvgPool,
    Dropout {
        rate: f32,
    },
    /// Per-channel rescaling by a gate (squeeze-excitation output).
    ChannelScale,
    ResidualAdd,
    ChannelSplit,
    ChannelConcat,
    ChannelShuffle {
        groups: usize,
    },
    /// Anything a cost model has no rule for.
    Opaque {
        op: String,
    },
}

/// One entry of a layer-by-layer walk over a network.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerDesc {
    pub name: String,
    pub kind: LayerKind,
    /// Per-sample input shape (no batch axis).
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    /// Trainable scalars owned directly by this layer.
    pub params: usize,
}

pub trait Layer: Send + Sync {
    /// Training-mode forward pass.
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Tensor;

    /// Back-propagate `grad` (same shape as the last cached output),
    /// accumulating into parameter gradients and returning the input
    /// gradient. Consumes the cache.
    fn backward(&mut self, grad: Tensor) -> Tensor;

    /// Eval-mode forward pass: running statistics, no dropout, no caching.
    fn infer(&self, x: Tensor) -> Tensor;

    fn visit(&self, _prefix: &str, _f: &mut dyn FnMut(&str, &Param)) {}

    fn visit_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Param)) {}

    /// Append this layer's description(s) for a per-sample `input` shape and
    /// return the per-sample output shape.
    fn describe(&self, name: &str, input: &[usize], out: &mut Vec<LayerDesc>) -> Vec<usize>;

    /// Drop any cached activations.
    fn clear_cache(&mut self) {}
}

/// Join a parent prefix and a child name with a dot.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn take_cache<T>(slot: &mut Option<T>, layer: &str) -> T {
    slot.take()
        .unwrap_or_else(|| panic!("{layer}: backward called without a cached forward pass"))
}
