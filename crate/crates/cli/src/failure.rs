use std::fmt;

use fiqa_core::data::DataError;
use fiqa_core::inference::InferenceError;
use fiqa_core::metrics::MetricsError;
use fiqa_core::models::ModelError;
use fiqa_core::trainer::TrainError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    Config,
    Data,
    Divergence,
    Internal,
}

impl Category {
    pub fn exit_code(self) -> u8 {
        match self {
            Category::Config => 2,
            Category::Data => 3,
            Category::Divergence => 4,
            Category::Internal => 5,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::Config => "CONFIG_ERROR",
            Category::Data => "DATA_ERROR",
            Category::Divergence => "TRAINING_DIVERGENCE",
            Category::Internal => "INTERNAL_ERROR",
        }
    }
}

/// An error tagged with the exit category it maps to.
#[derive(Debug)]
pub struct Failure {
    pub category: Category,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(category: Category, error: impl Into<anyhow::Error>) -> Self {
        Self {
            category,
            error: error.into(),
        }
    }

    pub fn config(msg: impl fmt::Display) -> Self {
        Self::new(Category::Config, anyhow::anyhow!("{msg}"))
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        Self::new(Category::Data, anyhow::anyhow!("{msg}"))
    }

    /// `CATEGORY: message` on one line.
    pub fn line(&self) -> String {
        let msg = format!("{:#}", self.error).replace(['\n', '\r'], " ");
        format!("{}: {msg}", self.category.label())
    }
}

fn model_category(e: &ModelError) -> Category {
    match e {
        ModelError::InconsistentSpec(_) | ModelError::MissingPretrainedWeights(_) => Category::Config,
        ModelError::ShapeMismatch { .. } | ModelError::Checkpoint { .. } | ModelError::Io { .. } => Category::Data,
        ModelError::EmptyBatch => Category::Internal,
    }
}

fn inference_category(e: &InferenceError) -> Category {
    match e {
        InferenceError::EmptyEnsemble | InferenceError::EmptyPolicy => Category::Config,
        InferenceError::Model(m) => model_category(m),
        InferenceError::Io { .. } | InferenceError::BadPredictions { .. } => Category::Data,
    }
}

fn train_category(e: &TrainError) -> Category {
    match e {
        TrainError::InvalidConfig(_) => Category::Config,
        TrainError::DivergedLoss { .. } => Category::Divergence,
        TrainError::Model(m) => model_category(m),
        TrainError::Inference(i) => inference_category(i),
        TrainError::EmptyTrainSet
        | TrainError::Data(_)
        | TrainError::Io { .. }
        | TrainError::BadEnsemble { .. } => Category::Data,
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        Self::new(train_category(&e), e)
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Self::new(model_category(&e), e)
    }
}

impl From<InferenceError> for Failure {
    fn from(e: InferenceError) -> Self {
        Self::new(inference_category(&e), e)
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Self::new(Category::Data, e)
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        Self::new(Category::Data, e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divergence_and_config_map_to_their_codes() {
        let f: Failure = TrainError::DivergedLoss {
            backbone: fiqa_core::models::Backbone::ShufflenetV2,
            epoch: 1,
            batch: 0,
        }
        .into();
        assert_eq!(f.category.exit_code(), 4);
        let f: Failure = TrainError::InvalidConfig("x".into()).into();
        assert_eq!(f.category.exit_code(), 2);
        assert!(f.line().starts_with("CONFIG_ERROR: "));
    }
}
