//! Test-time augmentation and two-level score fusion: each model's scores are
//! averaged over its views, then the per-model means are averaged.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fiqa_nn::Tensor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{load_and_preprocess, ManifestEntry, PreprocessedImage, IMAGENET_MEAN, IMAGENET_STD};
use crate::models::{ModelError, QualityModel};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("ensemble has no models")]
    EmptyEnsemble,
    #[error("TTA policy has no views")]
    EmptyPolicy,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("prediction file {path}: {reason}")]
    BadPredictions { path: PathBuf, reason: String },
}

/// A deterministic transform of a standardized `[3, H, W]` image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum View {
    Identity,
    HorizontalFlip,
    VerticalFlip,
    /// Multiply raw intensities by `1 + brightness`.
    ColorJitter { brightness: f32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtaPolicy {
    pub views: Vec<View>,
}

impl Default for TtaPolicy {
    fn default() -> Self {
        Self {
            views: vec![View::Identity, View::HorizontalFlip, View::VerticalFlip],
        }
    }
}

impl TtaPolicy {
    /// Single untouched view.
    pub fn none() -> Self {
        Self {
            views: vec![View::Identity],
        }
    }

    /// The default flips plus one brightness-jittered view.
    pub fn with_color_jitter(brightness: f32) -> Self {
        let mut p = Self::default();
        p.views.push(View::ColorJitter { brightness });
        p
    }

    pub fn count(&self) -> usize {
        self.views.len()
    }
}

/// Apply `view` to one `[3, H, W]` image or a `[N, 3, H, W]` batch.
pub fn apply_view(x: &Tensor, view: View) -> Tensor {
    let shape = x.shape().to_vec();
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let plane = h * w;
    let mut out = x.clone();
    match view {
        View::Identity => {}
        View::HorizontalFlip => {
            for (dst, src) in out.data_mut().chunks_mut(w).zip(x.data().chunks(w)) {
                for (d, s) in dst.iter_mut().zip(src.iter().rev()) {
                    *d = *s;
                }
            }
        }
        View::VerticalFlip => {
            for (dst, src) in out.data_mut().chunks_mut(plane).zip(x.data().chunks(plane)) {
                for (d_row, s_row) in dst.chunks_mut(w).zip(src.chunks(w).rev()) {
                    d_row.copy_from_slice(s_row);
                }
            }
        }
        View::ColorJitter { brightness } => {
            let factor = 1.0 + brightness;
            for (i, chan) in out.data_mut().chunks_mut(plane).enumerate() {
                let c = i % 3;
                let (m, s) = (IMAGENET_MEAN[c], IMAGENET_STD[c]);
                for v in chan {
                    let raw = (*v * s + m) * factor;
                    *v = (raw.clamp(0.0, 1.0) - m) / s;
                }
            }
        }
    }
    out
}

pub fn make_views(image: &PreprocessedImage, policy: &TtaPolicy) -> Vec<Tensor> {
    policy.views.iter().map(|&v| apply_view(&image.pixels, v)).collect()
}

/// Anything that maps a `[N, 3, H, W]` batch to `N` scores.
pub trait Scorer: Sync {
    fn score(&self, batch: Tensor) -> Result<Vec<f32>, ModelError>;
}

impl Scorer for QualityModel {
    fn score(&self, batch: Tensor) -> Result<Vec<f32>, ModelError> {
        self.predict(batch)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRecord {
    pub image_id: String,
    /// `grid[m][t]`: model `m` on view `t`.
    pub grid: Vec<Vec<f64>>,
    pub per_model: Vec<f64>,
    pub fused: f64,
}

/// Mean with a canonical (sorted) summation order, so any permutation of
/// `v` gives the same bits.
fn canonical_mean(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.iter().sum::<f64>() / s.len() as f64
}

/// Per-model view means and the fused score of an `M x T` grid.
pub fn fuse(grid: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let per_model: Vec<f64> = grid.iter().map(|row| canonical_mean(row)).collect();
    let lo = grid.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    // Rounding can push a mean of near-equal values one ulp outside the range.
    let mean = canonical_mean(&per_model);
    let fused = if lo <= hi { mean.clamp(lo, hi) } else { mean };
    (per_model, fused)
}

/// Score one image with every model under every view of `policy`.
pub fn ensemble_predict(
    models: &[&dyn Scorer],
    image: &PreprocessedImage,
    policy: &TtaPolicy,
) -> Result<PredictionRecord, InferenceError> {
    let mut out = ensemble_predict_batch(models, std::slice::from_ref(image), policy)?;
    Ok(out.remove(0))
}

/// [`ensemble_predict`] for several images, with one forward pass per model
/// over all `images x views`.
pub fn ensemble_predict_batch(
    models: &[&dyn Scorer],
    images: &[PreprocessedImage],
    policy: &TtaPolicy,
) -> Result<Vec<PredictionRecord>, InferenceError> {
    if models.is_empty() {
        return Err(InferenceError::EmptyEnsemble);
    }
    if policy.views.is_empty() {
        return Err(InferenceError::EmptyPolicy);
    }
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let t = policy.count();
    let views: Vec<Tensor> = images.iter().flat_map(|img| make_views(img, policy)).collect();
    let refs: Vec<&Tensor> = views.iter().collect();
    let batch = Tensor::stack(&refs);
    let mut grids = vec![Vec::with_capacity(models.len()); images.len()];
    for model in models {
        let scores = model.score(batch.clone())?;
        for (i, grid) in grids.iter_mut().enumerate() {
            grid.push(scores[i * t..(i + 1) * t].iter().map(|&s| s as f64).collect());
        }
    }
    Ok(images
        .iter()
        .zip(grids)
        .map(|(img, grid)| {
            let (per_model, fused) = fuse(&grid);
            PredictionRecord {
                image_id: img.source_id.clone(),
                grid,
                per_model,
                fused,
            }
        })
        .collect())
}

pub fn csv_header(m: usize, t: usize) -> Vec<String> {
    let mut h = vec!["image_id".to_string(), "fused".to_string()];
    h.extend((1..=m).map(|k| format!("model_{k}_mean")));
    for k in 1..=m {
        h.extend((1..=t).map(|v| format!("model_{k}_view_{v}")));
    }
    h.push("error".into());
    h
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchSummary {
    pub scored: usize,
    pub failed: usize,
}

/// Score every manifest entry and write one CSV row per entry, in manifest
/// order. Images that fail to load get empty score cells and the reason in
/// the `error` column.
pub fn batch_predict(
    models: &[&QualityModel],
    entries: &[ManifestEntry],
    policy: &TtaPolicy,
    out: &Path,
    batch_size: usize,
) -> Result<BatchSummary, InferenceError> {
    let first = models.first().ok_or(InferenceError::EmptyEnsemble)?;
    let size = first.input_size();
    let scorers: Vec<&dyn Scorer> = models.iter().map(|m| *m as &dyn Scorer).collect();
    let (m, t) = (models.len(), policy.count());
    let io = |source| InferenceError::Io {
        path: out.to_path_buf(),
        source,
    };
    let file = File::create(out).map_err(io)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| InferenceError::Io {
        path: out.to_path_buf(),
        source: e.into(),
    };
    w.write_record(csv_header(m, t)).map_err(csv_err)?;
    let mut summary = BatchSummary { scored: 0, failed: 0 };
    for chunk in entries.chunks(batch_size.max(1)) {
        let loaded: Vec<_> = chunk.iter().map(|e| load_and_preprocess(e, size)).collect();
        let ok: Vec<PreprocessedImage> = loaded.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
        let mut records = ensemble_predict_batch(&scorers, &ok, policy)?.into_iter();
        for (entry, result) in chunk.iter().zip(&loaded) {
            let mut row = vec![entry.image_id.clone()];
            match result {
                Ok(_) => {
                    let rec = records.next().expect("one record per decoded image");
                    row.push(rec.fused.to_string());
                    row.extend(rec.per_model.iter().map(f64::to_string));
                    row.extend(rec.grid.iter().flatten().map(f64::to_string));
                    row.push(String::new());
                    summary.scored += 1;
                }
                Err(e) => {
                    row.extend(std::iter::repeat_n(String::new(), 1 + m + m * t));
                    row.push(e.to_string());
                    summary.failed += 1;
                }
            }
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    let mut inner = w.into_inner().map_err(|e| io(e.into_error()))?;
    inner.flush().map_err(io)?;
    Ok(summary)
}

/// `image_id -> fused` from a prediction CSV; rows with an error have `None`.
pub fn read_predictions(path: &Path) -> Result<Vec<(String, Option<f64>)>, InferenceError> {
    let bad = |reason: String| InferenceError::BadPredictions {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("missing column {name}")))
    };
    let (id_col, fused_col) = (col("image_id")?, col("fused")?);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let id = rec.get(id_col).unwrap_or_default().to_string();
        let cell = rec.get(fused_col).unwrap_or_default();
        let fused = if cell.is_empty() {
            None
        } else {
            Some(cell.parse::<f64>().map_err(|_| bad(format!("row {}: bad fused value {cell:?}", i + 2)))?)
        };
        out.push((id, fused));
    }
    Ok(out)
}

/// Pair fused predictions with manifest MOS by `image_id`. Returns
/// `(predicted, ground_truth)`; unscored rows are skipped, ids missing from
/// the manifest are an error.
pub fn join_with_manifest(
    predictions: &[(String, Option<f64>)],
    entries: &[ManifestEntry],
    path: &Path,
) -> Result<(Vec<f64>, Vec<f64>), InferenceError> {
    let mos: HashMap<&str, f64> = entries.iter().map(|e| (e.image_id.as_str(), e.mos)).collect();
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for (id, fused) in predictions {
        let Some(f) = fused else { continue };
        let g = mos.get(id.as_str()).ok_or_else(|| InferenceError::BadPredictions {
            path: path.to_path_buf(),
            reason: format!("image_id {id:?} is not in the manifest"),
        })?;
        pred.push(*f);
        gt.push(*g);
    }
    Ok((pred, gt))
}
