use std::collections::BTreeSet;
use std::path::Path;

use fiqa_nn::layer::{Ctx, Layer};
use fiqa_nn::{Adam, AdamConfig, ParamGroup, Tensor};
use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, TrainConfig, TrainError};
use crate::data::{load_and_preprocess, DataError, ManifestEntry, PreprocessedImage};
use crate::inference::{ensemble_predict_batch, PredictionRecord, Scorer, TtaPolicy};
use crate::loss::{batch_loss, BatchScores};
use crate::metrics::{self, MetricsReport};
use crate::models::{build_model, BuildOptions, Group, ModelSpec, QualityModel};

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;
const INIT_STREAM: u64 = 3;

/// Preprocessed images held in memory with their labels.
pub struct Dataset {
    pub images: Vec<PreprocessedImage>,
    pub mos: Vec<f64>,
    /// Manifest position of each image.
    pub indices: Vec<usize>,
}

impl Dataset {
    /// Load `entries[i]` for every `i` in `indices`.
    pub fn load(
        entries: &[ManifestEntry],
        indices: &[usize],
        size: (usize, usize),
    ) -> Result<Self, DataError> {
        let mut images = Vec::with_capacity(indices.len());
        let mut mos = Vec::with_capacity(indices.len());
        for &i in indices {
            images.push(load_and_preprocess(&entries[i], size)?);
            mos.push(entries[i].mos);
        }
        Ok(Self {
            images,
            mos,
            indices: indices.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_srcc: f64,
    pub val_plcc: f64,
    pub val_final: f64,
    /// Head learning rate used during the epoch.
    pub lr_current: f64,
}

pub fn write_log_csv(path: &Path, log: &[TrainLogEntry]) -> Result<(), TrainError> {
    let io = |e: csv::Error| TrainError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for row in log {
        w.serialize(row).map_err(io)?;
    }
    w.flush().map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub struct TrainRun {
    /// Weights of the best validation epoch.
    pub model: QualityModel,
    pub log: Vec<TrainLogEntry>,
    /// 1-based epoch whose weights `model` holds.
    pub best_epoch: usize,
    pub best_val: Option<MetricsReport>,
    /// Manifest positions that appeared in a training batch.
    pub trained_indices: BTreeSet<usize>,
    /// Batches whose correlation term was dropped.
    pub degenerate_batches: usize,
}

/// Score `data` with `models` and compute metrics against its labels.
/// Metrics are `None` when the predictions or labels are constant.
pub fn evaluate_models(
    models: &[&QualityModel],
    data: &Dataset,
    policy: &TtaPolicy,
    batch_size: usize,
) -> Result<(Vec<PredictionRecord>, Option<MetricsReport>), TrainError> {
    let scorers: Vec<&dyn Scorer> = models.iter().map(|m| *m as &dyn Scorer).collect();
    let mut records = Vec::with_capacity(data.len());
    for chunk in data.images.chunks(batch_size.max(1)) {
        records.extend(ensemble_predict_batch(&scorers, chunk, policy)?);
    }
    let pred: Vec<f64> = records.iter().map(|r| r.fused).collect();
    let report = match metrics::evaluate(&pred, &data.mos) {
        Ok(r) => Some(r),
        Err(e) => {
            warn!("validation metrics unavailable: {e}");
            None
        }
    };
    Ok((records, report))
}

/// Split `n` items into `ceil(n / max)` nearly equal consecutive chunks.
fn even_chunks(n: usize, max: usize) -> Vec<std::ops::Range<usize>> {
    let parts = n.div_ceil(max);
    let (base, extra) = (n / parts, n % parts);
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

fn stack(data: &Dataset, idx: &[usize]) -> Tensor {
    let refs: Vec<&Tensor> = idx.iter().map(|&i| &data.images[i].pixels).collect();
    Tensor::stack(&refs)
}

/// Fine-tune one model on `train`, validating on `val` after every epoch.
///
/// Each optimizer step sees one batch. Batches larger than
/// `micro_batch_size` are processed in chunks: a first pass without
/// activation caching collects every prediction so the batch loss and its
/// gradient can be formed, then each chunk is re-run with the same dropout
/// masks and back-propagated.
pub fn train_model(
    spec: &ModelSpec,
    cfg: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<TrainRun, TrainError> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(TrainError::EmptyTrainSet);
    }
    if let Some(i) = train.indices.iter().find(|i| val.indices.contains(i)) {
        return Err(TrainError::InvalidConfig(format!(
            "manifest row {i} is in both the training and validation sets"
        )));
    }
    let tag = spec.backbone as u64;
    let opts = BuildOptions {
        seed: derive_seed(&[cfg.seed, INIT_STREAM, tag]),
        input_size: cfg.input_size(),
        weights_dir: cfg.weights_dir.clone(),
    };
    let mut model = build_model(spec, &opts)?;
    let mut adam = Adam::new(AdamConfig {
        weight_decay: cfg.weight_decay as f32,
        ..AdamConfig::default()
    });
    let loss_cfg = cfg.loss_config();
    let policy = if cfg.tta_in_validation {
        TtaPolicy::default()
    } else {
        TtaPolicy::none()
    };
    let bn_momentum = cfg.bn_momentum.map(|m| m as f32);
    let is_head = |n: &str| Group::of(n) == Group::Head;
    let is_backbone = |n: &str| Group::of(n) == Group::Backbone;

    let mut log = Vec::with_capacity(cfg.max_epochs);
    // (score, epoch, weights, metrics) of the best epoch so far.
    type Best = (f64, usize, Vec<(String, Tensor)>, Option<MetricsReport>);
    let mut best: Option<Best> = None;
    let mut trained_indices = BTreeSet::new();
    let mut degenerate_batches = 0;

    for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr_at(epoch);
        let groups = [
            ParamGroup { lr: lr as f32, member: &is_head },
            ParamGroup { lr: cfg.backbone_lr_at(epoch) as f32, member: &is_backbone },
        ];
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[
            cfg.seed,
            SHUFFLE_STREAM,
            tag,
            epoch as u64,
        ])));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut last_batch = 0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            if batch.len() < 2 {
                continue;
            }
            let target: Vec<f64> = batch.iter().map(|&i| train.mos[i]).collect();
            let chunks = even_chunks(batch.len(), cfg.micro_batch_size);
            let mask_seed = |c: usize| derive_seed(&[cfg.seed, DROPOUT_STREAM, tag, epoch as u64, b as u64, c as u64]);
            let diverged = || TrainError::DivergedLoss {
                backbone: spec.backbone,
                epoch: epoch + 1,
                batch: b,
            };

            let single = chunks.len() == 1;
            let mut pred = Vec::with_capacity(batch.len());
            for (c, r) in chunks.iter().enumerate() {
                let mut ctx = Ctx::train(mask_seed(c)).with_bn_momentum(bn_momentum);
                if !single {
                    ctx = ctx.no_cache();
                }
                let out = model.forward_train(stack(train, &batch[r.clone()]), &mut ctx)?;
                pred.extend(out.iter().map(|&v| v as f64));
            }
            let scores = BatchScores::new(&pred, &target).map_err(|_| diverged())?;
            let out = batch_loss(cfg.loss, &scores, &loss_cfg);
            if !out.value.is_finite() || out.grad.iter().any(|g| !g.is_finite()) {
                return Err(diverged());
            }
            degenerate_batches += usize::from(out.degenerate);
            let grad: Vec<f32> = out.grad.iter().map(|&g| g as f32).collect();
            if single {
                model.backward_scores(&grad);
            } else {
                for (c, r) in chunks.iter().enumerate() {
                    let mut ctx = Ctx::train(mask_seed(c)).frozen_stats();
                    model.forward_train(stack(train, &batch[r.clone()]), &mut ctx)?;
                    model.backward_scores(&grad[r.clone()]);
                }
            }
            adam.step(&mut model, &groups);
            trained_indices.extend(batch.iter().map(|&i| train.indices[i]));
            loss_sum += out.value;
            batches += 1;
            last_batch = b;
        }
        let train_loss = if batches > 0 { loss_sum / batches as f64 } else { f64::NAN };

        let (records, report) = evaluate_models(&[&model], val, &policy, cfg.eval_batch_size)?;
        if records.iter().any(|r| !r.fused.is_finite()) {
            return Err(TrainError::DivergedLoss {
                backbone: spec.backbone,
                epoch: epoch + 1,
                batch: last_batch,
            });
        }
        let (srcc, plcc, fin) = report.map_or((f64::NAN, f64::NAN, f64::NAN), |r| (r.srcc, r.plcc, r.final_score));
        info!(
            "{} epoch {}/{}: loss {train_loss:.5} val srcc {srcc:.4} plcc {plcc:.4} final {fin:.4} lr {lr:.3e}",
            spec.backbone,
            epoch + 1,
            cfg.max_epochs
        );
        log.push(TrainLogEntry {
            epoch: epoch + 1,
            train_loss,
            val_srcc: srcc,
            val_plcc: plcc,
            val_final: fin,
            lr_current: lr,
        });
        let improved = match &best {
            None => true,
            Some((score, ..)) => fin > *score || (score.is_nan() && !fin.is_nan()),
        };
        if improved {
            best = Some((fin, epoch + 1, model.named_tensors(), report));
        }
    }

    let (_, best_epoch, tensors, best_val) = best.ok_or(TrainError::InvalidConfig("max_epochs must be > 0".into()))?;
    model.load_named_tensors(&tensors);
    model.clear_cache();
    Ok(TrainRun {
        model,
        log,
        best_epoch,
        best_val,
        trained_indices,
        degenerate_batches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_chunks_cover_and_balance() {
        let r = even_chunks(33, 16);
        assert_eq!(r, vec![0..11, 11..22, 22..33]);
        assert_eq!(even_chunks(16, 16), vec![0..16]);
        assert_eq!(even_chunks(17, 16), vec![0..9, 9..17]);
    }
}
