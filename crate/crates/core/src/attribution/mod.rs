//! Pixel-level Shapley attribution for the image classifier, class-level
//! aggregation, mapping of cell scores back to named features, and
//! average-linkage clustering of the resulting profiles.

mod dendrogram;
mod hvf;
mod importance;
mod shapley;

use std::path::PathBuf;

use thiserror::Error;

use crate::cnn::{CnnError, ConvNet};

pub use dendrogram::{cluster_profiles, Dendrogram, Merge};
pub use hvf::select_hvf;
pub use importance::{
    class_global_importance, map_to_features, player_cells, AttributionMap, FeatureImportanceTable, ImportanceRow,
    StructuralImportance,
};
pub use shapley::{mean_image, permutation_contributions, shapley_exact, shapley_sample, EXACT_MAX_PLAYERS};

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("no players to attribute")]
    NoPlayers,
    #[error("exhaustive Shapley limited to {max} players, got {players}")]
    TooManyPlayers { players: usize, max: usize },
    #[error("empty background set")]
    EmptyBackground,
    #[error("invalid attribution request: {0}")]
    Invalid(String),
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error(transparent)]
    Model(#[from] CnnError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// A model whose per-class score can be queried on flattened images.
pub trait ClassScorer {
    /// Values per image.
    fn input_len(&self) -> usize;
    /// Score of `class` for each of the `n` images in `batch`.
    fn class_scores(&self, batch: &[f64], n: usize, class: usize) -> Result<Vec<f64>, AttributionError>;
}

impl ClassScorer for ConvNet {
    fn input_len(&self) -> usize {
        self.config.input_len()
    }

    fn class_scores(&self, batch: &[f64], n: usize, class: usize) -> Result<Vec<f64>, AttributionError> {
        let probs = self.forward(batch, n)?;
        Ok((0..n).map(|i| probs[(i, class)]).collect())
    }
}

/// Settings for class-level attribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapConfig {
    /// Features kept as players per modality.
    pub n_hvf: usize,
    /// Sampled orderings per explained image.
    pub n_permutations: usize,
    /// Image indices whose mean image serves as the baseline.
    pub background: Vec<usize>,
    pub seed: u64,
    /// Also treat the structural-channel cells as players.
    pub include_structure: bool,
}

impl ShapConfig {
    pub fn new(background: Vec<usize>, seed: u64) -> Self {
        Self { n_hvf: 1000, n_permutations: 10, background, seed, include_structure: false }
    }
}
