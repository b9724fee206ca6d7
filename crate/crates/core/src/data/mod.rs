//! Labelled image manifests, the train/validation split and conversion of
//! images into standardized network input tensors.

mod manifest;
mod preprocess;
mod split;
pub mod synthetic;

use std::path::PathBuf;

use thiserror::Error;

pub use manifest::{load_manifest, write_manifest, ManifestEntry};
pub use preprocess::{
    load_and_preprocess, preprocess_rgb, resize_bilinear, PreprocessedImage, IMAGENET_MEAN,
    IMAGENET_STD,
};
pub use split::{split_dataset, Split, SplitSpec};

/// Network input `(height, width)`.
pub const INPUT_SIZE: (usize, usize) = (600, 416);

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed manifest row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("duplicate image_id {0:?}")]
    DuplicateId(String),
    #[error("non-finite MOS for image_id {0:?}")]
    NonFiniteScore(String),
    #[error("manifest has no entries")]
    EmptyManifest,
    #[error("train_fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("cannot decode image {image_id:?}: {reason}")]
    DecodeFailure { image_id: String, reason: String },
    #[error("image {0:?} has zero area")]
    ZeroAreaImage(String),
}
