//! Convolutional node classifier: stacked same-padded convolutions with
//! ReLU, fully connected layers, and a softmax head, trained with SGD plus
//! momentum. Everything runs in `f64`.

mod net;
mod train;

use thiserror::Error;

use crate::imaging::ImagingError;

pub use net::{init_params, ConvNet, ConvNetParams, Dense};
pub use train::{
    classification_metrics, evaluate, load_checkpoint, probabilities, save_checkpoint, train, ClassificationMetrics,
    EpochRecord, TrainReport,
};

#[derive(Debug, Error)]
pub enum CnnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),
    #[error("label {label} outside {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

/// Architecture and optimizer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNetConfig {
    pub input_side: usize,
    pub input_channels: usize,
    pub conv_layers: usize,
    pub kernel: usize,
    pub filters: usize,
    pub fc_sizes: Vec<usize>,
    pub classes: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl ConvNetConfig {
    /// Four 5x5 convolutions with 16 filters, FC 768 and 512, lr 3e-4,
    /// momentum 0.9, batches of 32 for 20 epochs.
    pub fn new(input_side: usize, input_channels: usize, classes: usize) -> Self {
        Self {
            input_side,
            input_channels,
            conv_layers: 4,
            kernel: 5,
            filters: 16,
            fc_sizes: vec![768, 512],
            classes,
            learning_rate: 3e-4,
            momentum: 0.9,
            batch_size: 32,
            max_epochs: 20,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), CnnError> {
        let bad = |msg: &str| Err(CnnError::InvalidConfig(msg.to_string()));
        if self.input_side == 0 || self.input_channels == 0 {
            return bad("input side and channel count must be positive");
        }
        if self.conv_layers > 0 && (self.filters == 0 || self.kernel == 0) {
            return bad("filters and kernel must be positive");
        }
        if self.kernel.is_multiple_of(2) {
            return bad("kernel must be odd for same padding");
        }
        if self.fc_sizes.contains(&0) {
            return bad("fully connected sizes must be positive");
        }
        if self.classes < 2 {
            return bad("need at least two classes");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        Ok(())
    }

    /// Values per input image (`channels * side^2`).
    pub fn input_len(&self) -> usize {
        self.input_channels * self.input_side * self.input_side
    }

    pub(crate) fn conv_in_channels(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_channels
        } else {
            self.filters
        }
    }

    /// Width of the flattened convolutional output.
    pub fn flatten_len(&self) -> usize {
        let channels = if self.conv_layers == 0 { self.input_channels } else { self.filters };
        channels * self.input_side * self.input_side
    }

    /// Width of the last hidden layer, the embedding handed to downstream analyses.
    pub fn embedding_len(&self) -> usize {
        self.fc_sizes.last().copied().unwrap_or_else(|| self.flatten_len())
    }
}
