//! Structural and feature layouts, per-node image rendering, and the `G2IM`
//! binary tensor container.

mod layout;
mod render;
mod tensor_io;

use std::path::PathBuf;

use thiserror::Error;

use crate::transport::TransportError;

pub use layout::{
    build_feature_layout, build_structural_layout, feature_association, feature_distance, FeatureLayout,
    StructuralLayout,
};
pub use render::{render_all, render_node, Renderer};
pub use tensor_io::{read_tensor, read_tensor_file, write_tensor, write_tensor_file, TensorFile, TensorRecord, MAGIC, VERSION};

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("file truncated while reading {0}")]
    TruncatedFile(&'static str),
    #[error("shape overflow: {0}")]
    ShapeOverflow(String),
    #[error("malformed tensor file: {0}")]
    Malformed(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// A `rows x cols x channels` single-precision tensor stored channel-major,
/// then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Tensor3 {
    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Self {
        Self { rows, cols, channels, data: vec![0.0; rows * cols * channels] }
    }

    pub fn from_vec(rows: usize, cols: usize, channels: usize, data: Vec<f32>) -> Result<Self, ImagingError> {
        let expected = rows
            .checked_mul(cols)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| ImagingError::ShapeOverflow(format!("{rows}x{cols}x{channels}")))?;
        if expected != data.len() {
            return Err(ImagingError::Malformed(format!(
                "{} values for a {rows}x{cols}x{channels} tensor",
                data.len()
            )));
        }
        Ok(Self { rows, cols, channels, data })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.channels)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn offset(&self, channel: usize, row: usize, col: usize) -> usize {
        debug_assert!(channel < self.channels && row < self.rows && col < self.cols);
        (channel * self.rows + row) * self.cols + col
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.data[self.offset(channel, row, col)]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: f32) {
        let o = self.offset(channel, row, col);
        self.data[o] = value;
    }

    pub fn channel(&self, channel: usize) -> &[f32] {
        let plane = self.rows * self.cols;
        &self.data[channel * plane..(channel + 1) * plane]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }
}

/// One node's image. Channel 0 is the structural channel.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeImage {
    pub node_id: String,
    pub label: Option<usize>,
    pub tensor: Tensor3,
}

/// Images for a set of nodes, all of one shape, sharing channel names.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub channel_names: Vec<String>,
    pub images: Vec<NodeImage>,
}

impl ImageSet {
    pub fn new(channel_names: Vec<String>, images: Vec<NodeImage>) -> Result<Self, ImagingError> {
        if let Some(first) = images.first() {
            let shape = first.tensor.shape();
            if let Some(bad) = images.iter().find(|img| img.tensor.shape() != shape) {
                return Err(ImagingError::Malformed(format!(
                    "image {} has shape {:?}, expected {shape:?}",
                    bad.node_id,
                    bad.tensor.shape()
                )));
            }
            if shape.2 != channel_names.len() {
                return Err(ImagingError::Malformed(format!(
                    "{} channel names for {} channels",
                    channel_names.len(),
                    shape.2
                )));
            }
        }
        Ok(Self { channel_names, images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// `(rows, cols, channels)` of every image, or `None` for an empty set.
    pub fn shape(&self) -> Option<(usize, usize, usize)> {
        self.images.first().map(|img| img.tensor.shape())
    }

    pub fn labels(&self) -> Vec<Option<usize>> {
        self.images.iter().map(|img| img.label).collect()
    }

    pub fn to_file(&self) -> TensorFile {
        TensorFile {
            records: self
                .images
                .iter()
                .map(|img| TensorRecord {
                    name: img.node_id.clone(),
                    label: img.label.map_or(-1, |l| l as i32),
                    tensor: img.tensor.clone(),
                })
                .collect(),
            channel_names: self.channel_names.clone(),
        }
    }

    pub fn from_file(file: TensorFile) -> Result<Self, ImagingError> {
        let images = file
            .records
            .into_iter()
            .map(|r| {
                let label = match r.label {
                    -1 => Ok(None),
                    l if l >= 0 => Ok(Some(l as usize)),
                    l => Err(ImagingError::Malformed(format!("negative label {l} for {}", r.name))),
                }?;
                Ok(NodeImage { node_id: r.name, label, tensor: r.tensor })
            })
            .collect::<Result<Vec<_>, ImagingError>>()?;
        Self::new(file.channel_names, images)
    }
}
