//! Face image quality assessment with a two-backbone CNN ensemble.
//!
//! - [`data`]: manifests, the train/validation split, preprocessing and a
//!   synthetic dataset generator
//! - [`models`]: MobileNetV3-Small and ShuffleNetV2 regressors, checkpoints
//! - [`loss`]: MSE plus a Pearson correlation penalty
//! - [`inference`]: test-time views and score fusion
//! - [`metrics`]: SRCC, PLCC and their mean
//! - [`trainer`]: fine-tuning, ensemble training and the ablation grid
//! - [`efficiency`]: parameter and FLOP audit

pub mod data;
pub mod efficiency;
pub mod inference;
pub mod loss;
pub mod metrics;
pub mod models;
pub mod trainer;
