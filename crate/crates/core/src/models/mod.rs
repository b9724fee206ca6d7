//! The two regression networks: an ImageNet-style backbone, global average
//! pooling and a small MLP head producing one quality score per image.
//!
//! | backbone            | feature dim | head                                   |
//! |---------------------|-------------|----------------------------------------|
//! | MobileNetV3-Small   | 576         | 576→288, ReLU, Dropout(0.2), 288→1     |
//! | ShuffleNetV2 (x0.5) | 1024        | 1024→512, ReLU, Dropout(0.2), 512→256, ReLU, Dropout(0.2), 256→1 |
//!
//! Backbone parameters keep their torchvision state-dict names so ImageNet
//! checkpoints exported from torchvision load directly; head parameters live
//! under `head.`.

pub mod checkpoint;
pub mod mobilenet;
pub mod shufflenet;

use std::fmt;
use std::path::{Path, PathBuf};

use fiqa_nn::layer::{join, Ctx, Layer, LayerDesc};
use fiqa_nn::{Act, Activation, Dropout, GlobalAvgPool, Linear, Param, Sequential, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::INPUT_SIZE;

pub const HEAD_DROPOUT: f32 = 0.2;
const HEAD_PREFIX: &str = "head";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("inconsistent model spec: {0}")]
    InconsistentSpec(String),
    #[error("missing pretrained weights: {0}")]
    MissingPretrainedWeights(String),
    #[error("input shape mismatch: expected [N, 3, {expected_h}, {expected_w}], got {got:?}")]
    ShapeMismatch {
        expected_h: usize,
        expected_w: usize,
        got: Vec<usize>,
    },
    #[error("empty batch")]
    EmptyBatch,
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Backbone {
    MobilenetV3Small,
    ShufflenetV2,
}

impl Backbone {
    pub const ALL: [Backbone; 2] = [Backbone::MobilenetV3Small, Backbone::ShufflenetV2];

    /// Stable identifier used for file names.
    pub fn id(self) -> &'static str {
        match self {
            Backbone::MobilenetV3Small => "mobilenet_v3_small",
            Backbone::ShufflenetV2 => "shufflenet_v2",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Backbone::MobilenetV3Small => "MobileNet",
            Backbone::ShufflenetV2 => "ShuffleNet",
        }
    }

    pub fn feature_dim(self) -> usize {
        match self {
            Backbone::MobilenetV3Small => mobilenet::FEATURE_DIM,
            Backbone::ShufflenetV2 => shufflenet::FEATURE_DIM,
        }
    }

    pub fn head_widths(self) -> &'static [usize] {
        match self {
            Backbone::MobilenetV3Small => &[288],
            Backbone::ShufflenetV2 => &[512, 256],
        }
    }

    /// File expected in the weight directory for ImageNet initialisation.
    pub fn pretrained_file(self) -> &'static str {
        match self {
            Backbone::MobilenetV3Small => "mobilenet_v3_small.safetensors",
            Backbone::ShufflenetV2 => "shufflenet_v2_x0_5.safetensors",
        }
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub backbone: Backbone,
    pub feature_dim: usize,
    pub head_widths: Vec<usize>,
    pub dropout_rate: f32,
    pub pretrained: bool,
}

impl ModelSpec {
    pub fn new(backbone: Backbone, pretrained: bool) -> Self {
        Self {
            backbone,
            feature_dim: backbone.feature_dim(),
            head_widths: backbone.head_widths().to_vec(),
            dropout_rate: HEAD_DROPOUT,
            pretrained,
        }
    }

    pub fn mobilenet_v3_small() -> Self {
        Self::new(Backbone::MobilenetV3Small, true)
    }

    pub fn shufflenet_v2() -> Self {
        Self::new(Backbone::ShufflenetV2, true)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let b = self.backbone;
        if self.feature_dim != b.feature_dim() {
            return Err(ModelError::InconsistentSpec(format!(
                "{b} produces {}-d features, spec says {}",
                b.feature_dim(),
                self.feature_dim
            )));
        }
        if self.head_widths != b.head_widths() {
            return Err(ModelError::InconsistentSpec(format!(
                "{b} head widths are {:?}, spec says {:?}",
                b.head_widths(),
                self.head_widths
            )));
        }
        if self.dropout_rate != HEAD_DROPOUT {
            return Err(ModelError::InconsistentSpec(format!(
                "head dropout must be {HEAD_DROPOUT}, spec says {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Knobs of a model build that are not part of the architecture.
#[derive(Clone, Debug)]
pub struct BuildOptions {
    /// Seeds every randomly initialised weight.
    pub seed: u64,
    /// `(height, width)` the network will be fed.
    pub input_size: (usize, usize),
    /// Directory holding `<backbone>.safetensors` ImageNet checkpoints.
    pub weights_dir: Option<PathBuf>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            input_size: INPUT_SIZE,
            weights_dir: None,
        }
    }
}

/// Which half of the parameter partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Backbone,
    Head,
}

impl Group {
    pub fn of(name: &str) -> Group {
        if name == HEAD_PREFIX || name.starts_with("head.") {
            Group::Head
        } else {
            Group::Backbone
        }
    }
}

/// Trainable parameter names with their sizes, split by group.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterGroups {
    pub backbone: Vec<(String, usize)>,
    pub head: Vec<(String, usize)>,
}

impl ParameterGroups {
    pub fn backbone_count(&self) -> usize {
        self.backbone.iter().map(|(_, n)| n).sum()
    }

    pub fn head_count(&self) -> usize {
        self.head.iter().map(|(_, n)| n).sum()
    }
}

fn build_head(feature_dim: usize, widths: &[usize], rate: f32, rng: &mut ChaCha8Rng) -> Sequential {
    let mut head = Sequential::new();
    let mut prev = feature_dim;
    for &w in widths {
        head = head
            .push(Linear::new(prev, w, rng))
            .push(Activation::new(Act::Relu))
            .push(Dropout::new(rate));
        prev = w;
    }
    head.push(Linear::new(prev, 1, rng))
}

/// Backbone + global average pool + regression head.
pub struct QualityModel {
    spec: ModelSpec,
    input_size: (usize, usize),
    backbone: Sequential,
    pool: GlobalAvgPool,
    head: Sequential,
}

/// Build a model for `spec`. With `spec.pretrained` the backbone is loaded
/// from `<weights_dir>/<backbone file>`; the head is always freshly
/// initialised (uniform fan-in, zero bias) from `opts.seed`.
pub fn build_model(spec: &ModelSpec, opts: &BuildOptions) -> Result<QualityModel, ModelError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let backbone = match spec.backbone {
        Backbone::MobilenetV3Small => mobilenet::features(&mut rng),
        Backbone::ShufflenetV2 => shufflenet::features(&mut rng),
    };
    let head = build_head(spec.feature_dim, &spec.head_widths, spec.dropout_rate, &mut rng);
    let mut model = QualityModel {
        spec: spec.clone(),
        input_size: opts.input_size,
        backbone,
        pool: GlobalAvgPool::new(),
        head,
    };
    if spec.pretrained {
        let dir = opts.weights_dir.as_ref().ok_or_else(|| {
            ModelError::MissingPretrainedWeights(format!(
                "{} requested pretrained weights but no weight directory is configured",
                spec.backbone
            ))
        })?;
        let file = dir.join(spec.backbone.pretrained_file());
        checkpoint::load_backbone_weights(&mut model, &file)?;
    }
    Ok(model)
}

impl QualityModel {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn input_size(&self) -> (usize, usize) {
        self.input_size
    }

    fn check_input(&self, batch: &Tensor) -> Result<(), ModelError> {
        let shape = batch.shape();
        let (h, w) = self.input_size;
        if shape.len() != 4 || shape[1] != 3 || shape[2] != h || shape[3] != w {
            return Err(ModelError::ShapeMismatch {
                expected_h: h,
                expected_w: w,
                got: shape.to_vec(),
            });
        }
        if shape[0] == 0 {
            return Err(ModelError::EmptyBatch);
        }
        Ok(())
    }

    /// Eval-mode scores, one per image of `batch` (`[N, 3, H, W]`).
    pub fn predict(&self, batch: Tensor) -> Result<Vec<f32>, ModelError> {
        self.check_input(&batch)?;
        Ok(self.infer(batch).into_vec())
    }

    /// Training-mode scores (batch statistics, dropout active). Activations
    /// are kept for [`QualityModel::backward`] when `ctx.cache` is set.
    pub fn forward_train(&mut self, batch: Tensor, ctx: &mut Ctx) -> Result<Vec<f32>, ModelError> {
        self.check_input(&batch)?;
        Ok(self.forward(batch, ctx).into_vec())
    }

    /// Accumulate parameter gradients for `d loss / d score`.
    pub fn backward_scores(&mut self, grad: &[f32]) {
        self.backward(Tensor::from_vec(&[grad.len(), 1], grad.to_vec()));
    }

    /// Pooled backbone features, `[N, feature_dim]`.
    pub fn features(&self, batch: Tensor) -> Result<Tensor, ModelError> {
        self.check_input(&batch)?;
        Ok(self.pool.infer(self.backbone.infer(batch)))
    }

    /// Eval-mode head applied to pooled features.
    pub fn head_infer(&self, features: Tensor) -> Tensor {
        self.head.infer(features)
    }

    pub fn head_mut(&mut self) -> &mut Sequential {
        &mut self.head
    }

    pub fn head(&self) -> &Sequential {
        &self.head
    }

    pub fn parameter_groups(&self) -> ParameterGroups {
        let mut groups = ParameterGroups::default();
        self.visit("", &mut |name, p| {
            if !p.trainable {
                return;
            }
            let entry = (name.to_string(), p.len());
            match Group::of(name) {
                Group::Backbone => groups.backbone.push(entry),
                Group::Head => groups.head.push(entry),
            }
        });
        groups
    }

    /// Mark every parameter of `group` as frozen (excluded from training).
    pub fn freeze(&mut self, group: Group) {
        self.visit_mut("", &mut |name, p| {
            if Group::of(name) == group && p.trainable {
                p.trainable = false;
                p.grad = Vec::new();
            }
        });
    }

    /// All tensors, trainable or not, by name.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, p| out.push((name.to_string(), p.value.clone())));
        out
    }

    /// Overwrite tensors by name, as produced by [`QualityModel::named_tensors`].
    /// Panics on a shape mismatch.
    pub fn load_named_tensors(&mut self, tensors: &[(String, Tensor)]) {
        let by_name: std::collections::HashMap<&str, &Tensor> =
            tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        self.visit_mut("", &mut |name, p| {
            if let Some(t) = by_name.get(name) {
                assert_eq!(t.shape(), p.value.shape(), "shape mismatch for {name}");
                p.value = (*t).clone();
            }
        });
    }

    /// Layer-by-layer description for one `[3, H, W]` input.
    pub fn describe_layers(&self) -> Vec<LayerDesc> {
        let (h, w) = self.input_size;
        let mut out = Vec::new();
        self.describe("", &[3, h, w], &mut out);
        out
    }

    pub fn weights_path_hint(dir: &Path, backbone: Backbone) -> PathBuf {
        dir.join(backbone.pretrained_file())
    }
}

impl Layer for QualityModel {
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Tensor {
        let f = self.backbone.forward(x, ctx);
        let f = self.pool.forward(f, ctx);
        self.head.forward(f, ctx)
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let g = self.head.backward(grad);
        let g = self.pool.backward(g);
        self.backbone.backward(g)
    }

    fn infer(&self, x: Tensor) -> Tensor {
        let f = self.backbone.infer(x);
        let f = self.pool.infer(f);
        self.head.infer(f)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.backbone.visit(prefix, f);
        self.head.visit(&join(prefix, HEAD_PREFIX), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.backbone.visit_mut(prefix, f);
        self.head.visit_mut(&join(prefix, HEAD_PREFIX), f);
    }

    fn describe(&self, name: &str, input: &[usize], out: &mut Vec<LayerDesc>) -> Vec<usize> {
        let f = self.backbone.describe(name, input, out);
        let f = self.pool.describe(&join(name, "avgpool"), &f, out);
        self.head.describe(&join(name, HEAD_PREFIX), &f, out)
    }

    fn clear_cache(&mut self) {
        self.backbone.clear_cache();
        self.pool.clear_cache();
        self.head.clear_cache();
    }
}
