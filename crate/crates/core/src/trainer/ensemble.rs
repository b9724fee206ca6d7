use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use super::{evaluate_models, train_model, write_log_csv, Dataset, TrainConfig, TrainError, TrainRun};
use crate::data::{split_dataset, ManifestEntry, Split};
use crate::inference::TtaPolicy;
use crate::metrics::MetricsReport;
use crate::models::checkpoint::{self, CheckpointMeta};
use crate::models::{Backbone, ModelSpec, QualityModel};

pub const ENSEMBLE_FILE: &str = "ensemble.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub backbone: Backbone,
    /// Weight file, relative to the manifest's directory.
    pub checkpoint: PathBuf,
    pub best_epoch: usize,
    pub validation: Option<MetricsReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub config_hash: String,
    pub input_size: [usize; 2],
    pub tta: TtaPolicy,
    pub members: Vec<EnsembleMember>,
    /// Validation metrics of the fused ensemble with and without TTA.
    pub validation: Option<MetricsReport>,
    pub validation_tta: Option<MetricsReport>,
}

pub struct EnsembleRun {
    pub runs: Vec<TrainRun>,
    pub split: Split,
    pub validation: Option<MetricsReport>,
    pub validation_tta: Option<MetricsReport>,
}

impl EnsembleRun {
    pub fn models(&self) -> Vec<&QualityModel> {
        self.runs.iter().map(|r| &r.model).collect()
    }
}

/// Train `backbones` with `cfg` on the same data, sequentially or on one
/// thread each.
pub(super) fn train_all(
    backbones: &[Backbone],
    cfg: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<Vec<TrainRun>, TrainError> {
    let specs: Vec<ModelSpec> = backbones.iter().map(|&b| ModelSpec::new(b, cfg.pretrained)).collect();
    if cfg.parallel_models {
        std::thread::scope(|s| {
            let handles: Vec<_> = specs
                .iter()
                .map(|spec| s.spawn(move || train_model(spec, cfg, train, val)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("training thread panicked"))
                .collect()
        })
    } else {
        specs.iter().map(|spec| train_model(spec, cfg, train, val)).collect()
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), TrainError> {
    let text = serde_json::to_string_pretty(value).expect("plain data");
    fs::write(path, text + "\n").map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Split `entries`, train both models and score the fused ensemble on the
/// validation split. With `out_dir`, writes per-model checkpoints and
/// training logs plus [`ENSEMBLE_FILE`].
pub fn train_ensemble(
    cfg: &TrainConfig,
    entries: &[ManifestEntry],
    out_dir: Option<&Path>,
) -> Result<EnsembleRun, TrainError> {
    cfg.validate()?;
    let split = split_dataset(entries, &cfg.split())?;
    info!("split: {} train / {} validation", split.train.len(), split.val.len());
    let train = Dataset::load(entries, &split.train_indices, cfg.input_size())?;
    let val = Dataset::load(entries, &split.val_indices, cfg.input_size())?;
    let runs = train_all(&Backbone::ALL, cfg, &train, &val)?;

    let models: Vec<&QualityModel> = runs.iter().map(|r| &r.model).collect();
    let (_, validation) = evaluate_models(&models, &val, &TtaPolicy::none(), cfg.eval_batch_size)?;
    let (_, validation_tta) = evaluate_models(&models, &val, &TtaPolicy::default(), cfg.eval_batch_size)?;

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|source| TrainError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut members = Vec::new();
        for run in &runs {
            let id = run.model.spec().backbone.id();
            let file = PathBuf::from(format!("{id}.safetensors"));
            let meta = CheckpointMeta {
                spec: run.model.spec().clone(),
                input_size: [cfg.input_height, cfg.input_width],
                epoch: run.best_epoch,
                config_hash: cfg.hash(),
                seed: cfg.seed,
                val_final: run.best_val.map(|r| r.final_score),
            };
            checkpoint::save(&run.model, &dir.join(&file), &meta)?;
            write_log_csv(&dir.join(format!("{id}_train_log.csv")), &run.log)?;
            members.push(EnsembleMember {
                backbone: run.model.spec().backbone,
                checkpoint: file,
                best_epoch: run.best_epoch,
                validation: run.best_val,
            });
        }
        let manifest = EnsembleManifest {
            config_hash: cfg.hash(),
            input_size: [cfg.input_height, cfg.input_width],
            tta: TtaPolicy::default(),
            members,
            validation,
            validation_tta,
        };
        write_json(&dir.join(ENSEMBLE_FILE), &manifest)?;
    }
    Ok(EnsembleRun {
        runs,
        split,
        validation,
        validation_tta,
    })
}

/// Load every checkpoint listed in an ensemble manifest. `path` may be the
/// manifest itself or the directory holding it.
pub fn load_ensemble(path: &Path) -> Result<(EnsembleManifest, Vec<QualityModel>), TrainError> {
    let file = if path.is_dir() { path.join(ENSEMBLE_FILE) } else { path.to_path_buf() };
    let bad = |reason: String| TrainError::BadEnsemble {
        path: file.clone(),
        reason,
    };
    let text = fs::read_to_string(&file).map_err(|e| bad(e.to_string()))?;
    let manifest: EnsembleManifest = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if manifest.members.is_empty() {
        return Err(bad("no members".into()));
    }
    let dir = file.parent().unwrap_or(Path::new(""));
    let models = manifest
        .members
        .iter()
        .map(|m| checkpoint::load(&dir.join(&m.checkpoint)).map(|(model, _)| model))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((manifest, models))
}
