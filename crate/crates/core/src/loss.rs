//! Regression objectives over a mini-batch: mean squared error, a Pearson
//! correlation penalty, and their weighted sum.
//!
//! With `a = q - mean(q)` (targets) and `b = p - mean(p)` (predictions):
//!
//! ```text
//! r     = Σab / (sqrt(Σaa + ε) · sqrt(Σbb + ε))
//! L     = mean((p - q)²) + α · (1 - r)
//! dr/dp = a / (sqrt(Σaa + ε) · sqrt(Σbb + ε)) - Σab · b / (sqrt(Σaa + ε) · (Σbb + ε)^1.5)
//! ```
//!
//! Everything is computed in `f64`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_VARIANCE_EPSILON: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("length mismatch: {predicted} predictions vs {target} targets")]
    LengthMismatch { predicted: usize, target: usize },
    #[error("non-finite input at index {0}")]
    NonFiniteInput(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("degenerate batch: correlation needs N >= 2 and non-constant vectors")]
    DegenerateBatch,
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub variance_epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            variance_epsilon: DEFAULT_VARIANCE_EPSILON,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(LossError::InvalidConfig(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.variance_epsilon.is_finite() && self.variance_epsilon > 0.0) {
            return Err(LossError::InvalidConfig(format!(
                "variance_epsilon must be > 0, got {}",
                self.variance_epsilon
            )));
        }
        Ok(())
    }
}

/// Which objective a model is trained with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    MseCorr,
}

/// Validated predictions `p` and targets `q` of one batch.
#[derive(Clone, Copy, Debug)]
pub struct BatchScores<'a> {
    predicted: &'a [f64],
    target: &'a [f64],
}

impl<'a> BatchScores<'a> {
    pub fn new(predicted: &'a [f64], target: &'a [f64]) -> Result<Self, LossError> {
        if predicted.len() != target.len() {
            return Err(LossError::LengthMismatch {
                predicted: predicted.len(),
                target: target.len(),
            });
        }
        if predicted.is_empty() {
            return Err(LossError::EmptyBatch);
        }
        if let Some(i) = predicted
            .iter()
            .zip(target)
            .position(|(p, q)| !p.is_finite() || !q.is_finite())
        {
            return Err(LossError::NonFiniteInput(i));
        }
        Ok(Self { predicted, target })
    }

    pub fn predicted(&self) -> &[f64] {
        self.predicted
    }

    pub fn target(&self) -> &[f64] {
        self.target
    }

    pub fn len(&self) -> usize {
        self.predicted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted.is_empty()
    }
}

pub fn mse_loss(s: &BatchScores<'_>) -> f64 {
    let sum: f64 = s
        .predicted
        .iter()
        .zip(s.target)
        .map(|(p, q)| (p - q) * (p - q))
        .sum();
    sum / s.len() as f64
}

fn mse_grad(s: &BatchScores<'_>) -> Vec<f64> {
    let n = s.len() as f64;
    s.predicted.iter().zip(s.target).map(|(p, q)| 2.0 * (p - q) / n).collect()
}

fn centred(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mean).collect()
}

/// Centred sums shared by the value and the gradient of the correlation.
struct Moments {
    a: Vec<f64>,
    b: Vec<f64>,
    sab: f64,
    saa: f64,
    sbb: f64,
}

fn moments(s: &BatchScores<'_>, eps: f64) -> Result<Moments, LossError> {
    let n = s.len();
    if n < 2 {
        return Err(LossError::DegenerateBatch);
    }
    let a = centred(s.target);
    let b = centred(s.predicted);
    let saa: f64 = a.iter().map(|x| x * x).sum();
    let sbb: f64 = b.iter().map(|x| x * x).sum();
    if saa / (n as f64) < eps || sbb / (n as f64) < eps {
        return Err(LossError::DegenerateBatch);
    }
    let sab = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    Ok(Moments { a, b, sab, saa, sbb })
}

fn r_of(m: &Moments, eps: f64) -> f64 {
    m.sab / ((m.saa + eps).sqrt() * (m.sbb + eps).sqrt())
}

/// Pearson correlation with `eps` added inside each square root of the
/// denominator. Fails when either vector's variance is below `eps`.
pub fn pearson(s: &BatchScores<'_>, eps: f64) -> Result<f64, LossError> {
    Ok(r_of(&moments(s, eps)?, eps))
}

/// `1 - pearson`, in [0, 2].
pub fn corr_loss(s: &BatchScores<'_>, eps: f64) -> Result<f64, LossError> {
    pearson(s, eps).map(|r| 1.0 - r)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// d value / d predicted.
    pub grad: Vec<f64>,
    pub mse: f64,
    /// `None` when the correlation term was dropped.
    pub corr: Option<f64>,
    /// Correlation was requested but the batch was degenerate.
    pub degenerate: bool,
}

/// `mse + alpha * (1 - r)` with its gradient. On a degenerate batch the
/// correlation term is dropped and `degenerate` is set.
pub fn msecorr_loss(s: &BatchScores<'_>, cfg: &LossConfig) -> LossOutput {
    let mse = mse_loss(s);
    let mut grad = mse_grad(s);
    let eps = cfg.variance_epsilon;
    match moments(s, eps) {
        Ok(m) => {
            let r = r_of(&m, eps);
            let da = (m.saa + eps).sqrt();
            let db = (m.sbb + eps).sqrt();
            let k1 = 1.0 / (da * db);
            let k2 = m.sab / (da * db * (m.sbb + eps));
            for ((g, a), b) in grad.iter_mut().zip(&m.a).zip(&m.b) {
                let dr = a * k1 - b * k2;
                *g += -cfg.alpha * dr;
            }
            LossOutput {
                value: mse + cfg.alpha * (1.0 - r),
                grad,
                mse,
                corr: Some(1.0 - r),
                degenerate: false,
            }
        }
        Err(_) => LossOutput {
            value: mse,
            grad,
            mse,
            corr: None,
            degenerate: true,
        },
    }
}

/// Value and gradient of the objective selected by `kind`.
pub fn batch_loss(kind: LossKind, s: &BatchScores<'_>, cfg: &LossConfig) -> LossOutput {
    match kind {
        LossKind::Mse => {
            let mse = mse_loss(s);
            LossOutput {
                value: mse,
                grad: mse_grad(s),
                mse,
                corr: None,
                degenerate: false,
            }
        }
        LossKind::MseCorr => msecorr_loss(s, cfg),
    }
}
