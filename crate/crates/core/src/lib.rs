//! Turns an attributed graph into one multi-channel image per node, trains a
//! small CNN on the images for node classification, and explains the
//! predictions with sampled Shapley values mapped back to feature names.
//!
//! The pipeline stages live in separate modules:
//!
//! - [`graph`]: ingestion, stratified splits, SBM fixtures
//! - [`community`]: k-means++ communities over adjacency rows, z-scored centroid distances
//! - [`transport`]: Gromov-Wasserstein layout of items on a 2D lattice
//! - [`imaging`]: feature/structure layouts, per-node rendering, the `G2IM` tensor container
//! - [`cnn`]: the convolutional classifier and its SGD-with-momentum trainer
//! - [`attribution`]: HVF selection, Shapley sampling, class-level tables, dendrograms
//! - [`metrics`]: ARI, NMI, homogeneity, completeness, V-measure, silhouette
//! - [`cli`]: configuration and stage orchestration behind the `g2i` binary

// NaN-rejecting checks are written as negated comparisons on purpose, and the
// numeric kernels index several parallel arrays in one loop.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod attribution;
pub mod cli;
pub mod cnn;
pub mod community;
pub mod graph;
pub mod imaging;
pub mod matrix;
pub mod metrics;
pub mod rng;
pub mod transport;

pub use matrix::Matrix;
