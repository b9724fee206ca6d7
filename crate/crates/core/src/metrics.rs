//! SRCC, PLCC and their average over a prediction set.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {pred} predictions vs {gt} ground-truth values")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("degenerate input: a constant vector has no correlation")]
    DegenerateInput,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub srcc: f64,
    pub plcc: f64,
    #[serde(rename = "final")]
    pub final_score: f64,
    pub n: usize,
}

impl MetricsReport {
    /// `SRCC  PLCC  Final` at four decimals.
    pub fn table_row(&self) -> String {
        format!(
            "{}  {}  {}",
            format_4dp(self.srcc),
            format_4dp(self.plcc),
            format_4dp(self.final_score)
        )
    }
}

fn check(pred: &[f64], gt: &[f64]) -> Result<(), MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    if pred.len() < 2 {
        return Err(MetricsError::TooFewSamples(pred.len()));
    }
    if let Some(i) = pred.iter().zip(gt).position(|(p, g)| !p.is_finite() || !g.is_finite()) {
        return Err(MetricsError::NonFinite(i));
    }
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if constant(pred) || constant(gt) {
        return Err(MetricsError::DegenerateInput);
    }
    Ok(())
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// Pearson linear correlation coefficient.
pub fn plcc(pred: &[f64], gt: &[f64]) -> Result<f64, MetricsError> {
    check(pred, gt)?;
    Ok(pearson_unchecked(pred, gt))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        // Ranks start+1 ..= end, averaged.
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn srcc(pred: &[f64], gt: &[f64]) -> Result<f64, MetricsError> {
    check(pred, gt)?;
    Ok(pearson_unchecked(&average_ranks(pred), &average_ranks(gt)))
}

pub fn final_score(srcc: f64, plcc: f64, n: usize) -> MetricsReport {
    MetricsReport {
        srcc,
        plcc,
        final_score: (srcc + plcc) / 2.0,
        n,
    }
}

pub fn evaluate(pred: &[f64], gt: &[f64]) -> Result<MetricsReport, MetricsError> {
    Ok(final_score(srcc(pred, gt)?, plcc(pred, gt)?, pred.len()))
}

/// Four-decimal display rounding. The value is first printed at 12
/// decimals, which absorbs binary representation error (0.98615 is stored
/// as 0.98614999...), and then rounded half to even.
pub fn format_4dp(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let s = format!("{:.12}", x.abs());
    let (int, frac) = s.split_once('.').expect("fixed-point format has a dot");
    let int: i128 = int.parse().expect("digits");
    let kept: i128 = frac[..4].parse().expect("digits");
    let rest = &frac[4..];
    let half = format!("5{}", "0".repeat(rest.len() - 1));
    let mut scaled = int * 10_000 + kept;
    let round_up = match rest.cmp(half.as_str()) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => scaled % 2 == 1,
    };
    if round_up {
        scaled += 1;
    }
    let sign = if x < 0.0 && scaled != 0 { "-" } else { "" };
    format!("{sign}{}.{:04}", scaled / 10_000, scaled % 10_000)
}

/// [`format_4dp`] parsed back to a number.
pub fn round_4dp(x: f64) -> f64 {
    format_4dp(x).parse().unwrap_or(x)
}
