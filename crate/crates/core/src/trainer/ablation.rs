use std::collections::BTreeMap;

use log::info;
use serde::{Deserialize, Serialize};

use super::ensemble::train_all;
use super::{evaluate_models, Dataset, TrainConfig, TrainError, TrainRun};
use crate::data::{split_dataset, ManifestEntry};
use crate::inference::TtaPolicy;
use crate::loss::LossKind;
use crate::metrics::{format_4dp, MetricsReport};
use crate::models::{Backbone, QualityModel};

#[derive(Clone, Debug, PartialEq)]
pub struct AblationOptions {
    /// Corr-loss weights trained as extra ensemble rows. Include 0.0 to
    /// check the reduction to plain MSE.
    pub alpha_sweep: Vec<f64>,
    /// Backbone learning-rate multipliers trained as extra ensemble rows.
    pub backbone_lr_sweep: Vec<f64>,
}

impl Default for AblationOptions {
    fn default() -> Self {
        Self {
            alpha_sweep: vec![0.0],
            backbone_lr_sweep: Vec::new(),
        }
    }
}

impl AblationOptions {
    pub fn full_alpha_sweep() -> Vec<f64> {
        vec![0.0, 0.25, 0.5, 1.0]
    }

    pub fn full_backbone_lr_sweep() -> Vec<f64> {
        vec![0.01, 0.1, 1.0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub models: Vec<Backbone>,
    pub loss: LossKind,
    pub alpha: f64,
    pub backbone_lr_multiplier: f64,
    pub tta: bool,
    pub metrics: Option<MetricsReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    /// Baseline A, Baseline B, + Ensemble, + Corr-Aware Loss, + TTA.
    pub rows: Vec<AblationRow>,
    pub alpha_sweep: Vec<AblationRow>,
    pub backbone_lr_sweep: Vec<AblationRow>,
}

impl AblationReport {
    /// Fixed-width table with four-decimal metrics.
    pub fn table(&self) -> String {
        let mut s = format!("{:<40} {:>7} {:>7} {:>7}\n", "Variant", "SRCC", "PLCC", "Final");
        let sections = [("", &self.rows), ("alpha sweep", &self.alpha_sweep), ("backbone lr sweep", &self.backbone_lr_sweep)];
        for (title, rows) in sections {
            if rows.is_empty() {
                continue;
            }
            if !title.is_empty() {
                s.push_str(&format!("-- {title}\n"));
            }
            for r in rows {
                let cell = |f: fn(&MetricsReport) -> f64| r.metrics.as_ref().map_or("n/a".to_string(), |m| format_4dp(f(m)));
                s.push_str(&format!(
                    "{:<40} {:>7} {:>7} {:>7}\n",
                    r.variant,
                    cell(|m| m.srcc),
                    cell(|m| m.plcc),
                    cell(|m| m.final_score)
                ));
            }
        }
        s
    }
}

/// Identifies one trained model so identical settings are trained once.
type RunKey = (Backbone, LossKind, u64, u64);

struct Grid<'a> {
    base: &'a TrainConfig,
    train: Dataset,
    val: Dataset,
    runs: BTreeMap<RunKey, TrainRun>,
}

impl Grid<'_> {
    fn key(b: Backbone, loss: LossKind, alpha: f64, mult: f64) -> RunKey {
        let alpha = if loss == LossKind::Mse { 0.0 } else { alpha };
        (b, loss, alpha.to_bits(), mult.to_bits())
    }

    fn ensure(&mut self, backbones: &[Backbone], loss: LossKind, alpha: f64, mult: f64) -> Result<(), TrainError> {
        let missing: Vec<Backbone> = backbones
            .iter()
            .copied()
            .filter(|&b| !self.runs.contains_key(&Self::key(b, loss, alpha, mult)))
            .collect();
        if missing.is_empty() {
            return Ok(());
        }
        let cfg = TrainConfig {
            loss,
            alpha,
            backbone_lr_multiplier: mult,
            ..self.base.clone()
        };
        info!("ablation: training {missing:?} with {loss:?}, alpha {alpha}, backbone lr x{mult}");
        for run in train_all(&missing, &cfg, &self.train, &self.val)? {
            let b = run.model.spec().backbone;
            self.runs.insert(Self::key(b, loss, alpha, mult), run);
        }
        Ok(())
    }

    fn row(
        &mut self,
        variant: String,
        backbones: &[Backbone],
        loss: LossKind,
        alpha: f64,
        mult: f64,
        tta: bool,
    ) -> Result<AblationRow, TrainError> {
        self.ensure(backbones, loss, alpha, mult)?;
        let models: Vec<&QualityModel> = backbones
            .iter()
            .map(|&b| &self.runs[&Self::key(b, loss, alpha, mult)].model)
            .collect();
        let policy = if tta { TtaPolicy::default() } else { TtaPolicy::none() };
        let (_, metrics) = evaluate_models(&models, &self.val, &policy, self.base.eval_batch_size)?;
        Ok(AblationRow {
            variant,
            models: backbones.to_vec(),
            loss,
            alpha: if loss == LossKind::Mse { 0.0 } else { alpha },
            backbone_lr_multiplier: mult,
            tta,
            metrics,
        })
    }
}

/// Train and evaluate the ablation grid on `cfg`'s validation split. Every
/// variant uses the same split and seeds; models with identical settings
/// are trained once and shared between rows.
pub fn run_ablation(
    cfg: &TrainConfig,
    entries: &[ManifestEntry],
    opts: &AblationOptions,
) -> Result<AblationReport, TrainError> {
    cfg.validate()?;
    for &a in &opts.alpha_sweep {
        if !(a.is_finite() && a >= 0.0) {
            return Err(TrainError::InvalidConfig(format!("alpha sweep value {a} must be >= 0")));
        }
    }
    for &m in &opts.backbone_lr_sweep {
        if !(m > 0.0 && m <= 1.0) {
            return Err(TrainError::InvalidConfig(format!("backbone lr multiplier {m} must lie in (0, 1]")));
        }
    }
    let split = split_dataset(entries, &cfg.split())?;
    let mut grid = Grid {
        base: cfg,
        train: Dataset::load(entries, &split.train_indices, cfg.input_size())?,
        val: Dataset::load(entries, &split.val_indices, cfg.input_size())?,
        runs: BTreeMap::new(),
    };
    let (mnv, snv) = (Backbone::MobilenetV3Small, Backbone::ShufflenetV2);
    let both = [mnv, snv];
    let (alpha, mult) = (cfg.alpha, cfg.backbone_lr_multiplier);
    use LossKind::{Mse, MseCorr};

    let rows = vec![
        grid.row("Baseline A (MobileNet + MSE)".into(), &[mnv], Mse, 0.0, mult, false)?,
        grid.row("Baseline B (ShuffleNet + MSE)".into(), &[snv], Mse, 0.0, mult, false)?,
        grid.row("+ Ensemble (MSE)".into(), &both, Mse, 0.0, mult, false)?,
        grid.row("+ Corr-Aware Loss".into(), &both, MseCorr, alpha, mult, false)?,
        grid.row("+ TTA".into(), &both, MseCorr, alpha, mult, true)?,
    ];
    let mut alpha_sweep = Vec::new();
    for &a in &opts.alpha_sweep {
        alpha_sweep.push(grid.row(format!("Ensemble + MSECorr (alpha={a})"), &both, MseCorr, a, mult, false)?);
    }
    let mut backbone_lr_sweep = Vec::new();
    for &m in &opts.backbone_lr_sweep {
        backbone_lr_sweep.push(grid.row(
            format!("Ensemble + MSECorr (backbone lr x{m})"),
            &both,
            MseCorr,
            alpha,
            m,
            false,
        )?);
    }
    Ok(AblationReport {
        rows,
        alpha_sweep,
        backbone_lr_sweep,
    })
}
