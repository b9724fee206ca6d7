//! Reference implementations and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use fiqa_core::data::synthetic::{generate, SynthConfig};
use fiqa_core::data::ManifestEntry;
use fiqa_core::trainer::TrainConfig;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite input")
}

/// Centred cross and square sums, in exact arithmetic.
pub fn exact_moments(x: &[f64], y: &[f64]) -> (BigRational, BigRational, BigRational) {
    assert_eq!(x.len(), y.len());
    let n = BigRational::from_integer(BigInt::from(x.len()));
    let xs: Vec<BigRational> = x.iter().map(|&v| exact(v)).collect();
    let ys: Vec<BigRational> = y.iter().map(|&v| exact(v)).collect();
    let sum = |v: &[BigRational]| v.iter().fold(BigRational::zero(), |acc, t| acc + t);
    let dot = |a: &[BigRational], b: &[BigRational]| a.iter().zip(b).fold(BigRational::zero(), |acc, (p, q)| acc + p * q);
    let (sx, sy) = (sum(&xs), sum(&ys));
    let sxy = dot(&xs, &ys) - &sx * &sy / &n;
    let sxx = dot(&xs, &xs) - &sx * &sx / &n;
    let syy = dot(&ys, &ys) - &sy * &sy / &n;
    (sxy, sxx, syy)
}

/// `sum((x - mean x)(y - mean y)) / (sqrt(sum((x - mean x)^2) + eps) *
/// sqrt(sum((y - mean y)^2) + eps))`, with every sum exact and a single
/// rounding before the square root.
pub fn exact_pearson(x: &[f64], y: &[f64], eps: f64) -> f64 {
    let (sxy, sxx, syy) = exact_moments(x, y);
    let e = exact(eps);
    let den = (sxx + &e) * (syy + &e);
    assert!(!den.is_zero(), "zero denominator");
    let r2 = (&sxy * &sxy / den).to_f64().expect("finite");
    let r = r2.sqrt();
    if sxy.is_negative() {
        -r
    } else {
        r
    }
}

/// Exact population variance of `v`.
pub fn exact_variance(v: &[f64]) -> f64 {
    let (_, s, _) = exact_moments(v, v);
    (s / BigRational::from_integer(BigInt::from(v.len()))).to_f64().unwrap()
}

/// Rank of each element: 1 + number of smaller elements + half the number of
/// other elements equal to it.
pub fn brute_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let less = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn brute_plcc(p: &[f64], g: &[f64]) -> f64 {
    exact_pearson(p, g, 0.0)
}

pub fn brute_srcc(p: &[f64], g: &[f64]) -> f64 {
    exact_pearson(&brute_ranks(p), &brute_ranks(g), 0.0)
}

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `|a - b|_2 / max(|a|_2, |b|_2)`; zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// `x W^T + b` in f64 for a row-major `[out, in]` weight.
pub fn affine(x: &[f64], weight: &[f32], bias: &[f32]) -> Vec<f64> {
    let inputs = x.len();
    bias.iter()
        .enumerate()
        .map(|(o, &b)| {
            let row = &weight[o * inputs..(o + 1) * inputs];
            b as f64 + row.iter().zip(x).map(|(&w, &v)| w as f64 * v).sum::<f64>()
        })
        .collect()
}

/// Synthetic labelled set at `(height, width)` in `dir`.
pub fn synthetic_set(dir: &Path, count: usize, height: u32, width: u32, seed: u64) -> Vec<ManifestEntry> {
    generate(
        dir,
        &SynthConfig {
            count,
            seed,
            width,
            height,
        },
    )
    .expect("synthetic set")
}

/// Small from-scratch training setup that finishes in seconds.
pub fn tiny_config(height: usize, width: usize, epochs: usize) -> TrainConfig {
    TrainConfig {
        input_height: height,
        input_width: width,
        max_epochs: epochs,
        batch_size: 8,
        micro_batch_size: 8,
        eval_batch_size: 8,
        pretrained: false,
        ..TrainConfig::default()
    }
}
