//! Weight files: safetensors (little-endian f32) plus a JSON sidecar with the
//! model spec and training provenance.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use fiqa_nn::layer::Layer;
use fiqa_nn::Tensor;
use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use super::{build_model, BuildOptions, Group, ModelError, ModelSpec, QualityModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub spec: ModelSpec,
    /// `[height, width]` the model was trained at.
    pub input_size: [usize; 2],
    pub epoch: usize,
    /// Hex SHA-256 of the training configuration.
    pub config_hash: String,
    pub seed: u64,
    pub val_final: Option<f64>,
}

/// Sidecar path for a weight file: `x.safetensors` -> `x.json`.
pub fn sidecar_path(weights: &Path) -> PathBuf {
    weights.with_extension("json")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn ckpt_err(path: &Path, reason: impl Into<String>) -> ModelError {
    ModelError::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn to_bytes(t: &Tensor) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Write `weights` (every parameter and buffer) and its sidecar.
pub fn save(model: &QualityModel, weights: &Path, meta: &CheckpointMeta) -> Result<(), ModelError> {
    let tensors = model.named_tensors();
    let bytes: Vec<(String, Vec<u8>, Vec<usize>)> = tensors
        .iter()
        .map(|(n, t)| (n.clone(), to_bytes(t), t.shape().to_vec()))
        .collect();
    let views: Vec<(String, TensorView<'_>)> = bytes
        .iter()
        .map(|(n, b, s)| {
            let view = TensorView::new(Dtype::F32, s.clone(), b)
                .expect("byte length always matches the shape");
            (n.clone(), view)
        })
        .collect();
    let encoded = safetensors::serialize(views, &None)
        .map_err(|e| ckpt_err(weights, format!("serialize: {e}")))?;
    if let Some(dir) = weights.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
    }
    fs::write(weights, encoded).map_err(io_err(weights))?;
    let side = sidecar_path(weights);
    let json = serde_json::to_string_pretty(meta).expect("meta is plain data");
    fs::write(&side, json).map_err(io_err(&side))?;
    Ok(())
}

pub fn read_meta(weights: &Path) -> Result<CheckpointMeta, ModelError> {
    let side = sidecar_path(weights);
    let text = fs::read_to_string(&side).map_err(io_err(&side))?;
    serde_json::from_str(&text).map_err(|e| ckpt_err(&side, e.to_string()))
}

/// Rebuild a model from a weight file and its sidecar. Every tensor of the
/// architecture must be present with the right shape.
pub fn load(weights: &Path) -> Result<(QualityModel, CheckpointMeta), ModelError> {
    let meta = read_meta(weights)?;
    let mut spec = meta.spec.clone();
    spec.pretrained = false;
    let opts = BuildOptions {
        input_size: (meta.input_size[0], meta.input_size[1]),
        ..BuildOptions::default()
    };
    let mut model = build_model(&spec, &opts)?;
    model.spec.pretrained = meta.spec.pretrained;
    let bytes = fs::read(weights).map_err(io_err(weights))?;
    let file = SafeTensors::deserialize(&bytes).map_err(|e| ckpt_err(weights, e.to_string()))?;
    let missing = assign(&mut model, &file, weights, |_| true)?;
    if let Some(name) = missing.first() {
        return Err(ckpt_err(weights, format!("missing tensor {name}")));
    }
    let known: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
    if let Some(extra) = file.names().into_iter().find(|n| !known.contains(n)) {
        return Err(ckpt_err(weights, format!("unexpected tensor {extra}")));
    }
    Ok((model, meta))
}

/// Copy backbone tensors from an ImageNet checkpoint with torchvision names.
/// Classifier tensors and integer bookkeeping buffers in the file are
/// ignored.
pub fn load_backbone_weights(model: &mut QualityModel, file: &Path) -> Result<(), ModelError> {
    let bytes = fs::read(file).map_err(|e| {
        ModelError::MissingPretrainedWeights(format!("{}: {e}", file.display()))
    })?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| ckpt_err(file, e.to_string()))?;
    let missing = assign(model, &st, file, |n| Group::of(n) == Group::Backbone)?;
    if !missing.is_empty() {
        return Err(ModelError::MissingPretrainedWeights(format!(
            "{} lacks {} backbone tensors (first: {})",
            file.display(),
            missing.len(),
            missing[0]
        )));
    }
    Ok(())
}

/// Overwrite every selected tensor found in `file`; return the names of
/// selected tensors that were absent.
fn assign(
    model: &mut QualityModel,
    file: &SafeTensors<'_>,
    path: &Path,
    select: impl Fn(&str) -> bool,
) -> Result<Vec<String>, ModelError> {
    let available: HashMap<String, TensorView<'_>> = file.tensors().into_iter().collect();
    let mut missing = Vec::new();
    let mut failure = None;
    model.visit_mut("", &mut |name, p| {
        if failure.is_some() || !select(name) {
            return;
        }
        let Some(view) = available.get(name) else {
            missing.push(name.to_string());
            return;
        };
        if view.dtype() != Dtype::F32 {
            failure = Some(format!("{name}: expected F32, found {:?}", view.dtype()));
            return;
        }
        if view.shape() != p.value.shape() {
            failure = Some(format!(
                "{name}: expected shape {:?}, found {:?}",
                p.value.shape(),
                view.shape()
            ));
            return;
        }
        for (dst, chunk) in p.value.data_mut().iter_mut().zip(view.data().chunks_exact(4)) {
            *dst = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
    });
    match failure {
        Some(reason) => Err(ckpt_err(path, reason)),
        None => Ok(missing),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Backbone;

    fn meta(spec: ModelSpec) -> CheckpointMeta {
        CheckpointMeta {
            spec,
            input_size: [32, 32],
            epoch: 3,
            config_hash: "abc".into(),
            seed: 9,
            val_final: Some(0.5),
        }
    }

    #[test]
    fn save_load_round_trip_preserves_outputs() {
        let dir = tempfile::tempdir().unwrap();
        for b in Backbone::ALL {
            let spec = ModelSpec::new(b, false);
            let opts = BuildOptions {
                seed: 5,
                input_size: (32, 32),
                weights_dir: None,
            };
            let m = build_model(&spec, &opts).unwrap();
            let path = dir.path().join(format!("{b}.safetensors"));
            save(&m, &path, &meta(spec)).unwrap();
            let (back, md) = load(&path).unwrap();
            assert_eq!(md.epoch, 3);
            let x = Tensor::full(&[2, 3, 32, 32], 0.3);
            assert_eq!(m.predict(x.clone()).unwrap(), back.predict(x).unwrap());
        }
    }

    #[test]
    fn backbone_weights_load_but_head_is_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ModelSpec::new(Backbone::MobilenetV3Small, false);
        let opts = |seed| BuildOptions {
            seed,
            input_size: (32, 32),
            weights_dir: None,
        };
        let donor = build_model(&spec, &opts(1)).unwrap();
        let path = dir.path().join("donor.safetensors");
        save(&donor, &path, &meta(spec.clone())).unwrap();
        let mut m = build_model(&spec, &opts(2)).unwrap();
        let head_before: Vec<_> = m.head().clone_tensors();
        load_backbone_weights(&mut m, &path).unwrap();
        assert_eq!(m.head().clone_tensors(), head_before);
        let x = Tensor::full(&[1, 3, 32, 32], 0.1);
        assert_eq!(
            donor.features(x.clone()).unwrap(),
            m.features(x).unwrap()
        );
    }

    #[test]
    fn missing_file_is_missing_pretrained() {
        let spec = ModelSpec::new(Backbone::ShufflenetV2, false);
        let mut m = build_model(&spec, &BuildOptions { input_size: (32, 32), ..Default::default() }).unwrap();
        let err = load_backbone_weights(&mut m, Path::new("/no/such.safetensors")).unwrap_err();
        assert!(matches!(err, ModelError::MissingPretrainedWeights(_)));
    }

    trait CloneTensors {
        fn clone_tensors(&self) -> Vec<Tensor>;
    }

    impl<L: Layer> CloneTensors for L {
        fn clone_tensors(&self) -> Vec<Tensor> {
            let mut v = Vec::new();
            self.visit("", &mut |_, p| v.push(p.value.clone()));
            v
        }
    }
}
