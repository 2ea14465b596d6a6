//! Attributed graph ingestion, stratified splitting and synthetic SBM fixtures.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::rng::rng_from_seed;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{path}:{line}: malformed line: {reason}")]
    MalformedLine { path: PathBuf, line: usize, reason: String },
    #[error("{path}:{line}: edge {a} -- {b} listed twice with different weights")]
    AsymmetricDuplicate { path: PathBuf, line: usize, a: String, b: String },
    #[error("{path}:{line}: duplicate edge {a} -- {b}")]
    DuplicateEdge { path: PathBuf, line: usize, a: String, b: String },
    #[error("{path}:{line}: unknown node id {id:?}")]
    UnknownNodeId { path: PathBuf, line: usize, id: String },
    #[error("{path}:{line}: self loop on node {id:?}")]
    SelfLoop { path: PathBuf, line: usize, id: String },
    #[error("duplicate node id {0:?} in feature file")]
    DuplicateNode(String),
    #[error("node {0:?} has no label")]
    MissingLabel(String),
    #[error("class {0:?} has fewer than 3 members")]
    ClassTooSmall(String),
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GraphError + '_ {
    move |source| GraphError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> GraphError + '_ {
    move |source| GraphError::Csv { path: path.to_path_buf(), source }
}

/// Undirected weighted graph with a node feature matrix and optional labels.
///
/// Immutable once built; [`AttributedGraph::new`] enforces symmetry, a zero
/// diagonal, non-negative weights and shape agreement.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributedGraph {
    node_ids: Vec<String>,
    adjacency: Matrix,
    features: Matrix,
    feature_names: Vec<String>,
    labels: Option<Vec<usize>>,
    class_names: Option<Vec<String>>,
}

impl AttributedGraph {
    pub fn new(
        node_ids: Vec<String>,
        adjacency: Matrix,
        features: Matrix,
        feature_names: Vec<String>,
        labels: Option<Vec<usize>>,
        class_names: Option<Vec<String>>,
    ) -> Result<Self, GraphError> {
        let n = node_ids.len();
        if adjacency.rows() != n || adjacency.cols() != n {
            return Err(GraphError::Invalid(format!(
                "adjacency is {}x{} for {n} nodes",
                adjacency.rows(),
                adjacency.cols()
            )));
        }
        if features.rows() != n || features.cols() != feature_names.len() {
            return Err(GraphError::Invalid(format!(
                "features are {}x{} for {n} nodes and {} feature names",
                features.rows(),
                features.cols(),
                feature_names.len()
            )));
        }
        for i in 0..n {
            if adjacency[(i, i)] != 0.0 {
                return Err(GraphError::Invalid(format!("nonzero diagonal at node {i}")));
            }
            for j in 0..n {
                let w = adjacency[(i, j)];
                if !(w >= 0.0) || !w.is_finite() {
                    return Err(GraphError::Invalid(format!("invalid weight {w} at ({i},{j})")));
                }
                if w != adjacency[(j, i)] {
                    return Err(GraphError::Invalid(format!("asymmetric weight at ({i},{j})")));
                }
            }
        }
        if features.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(GraphError::Invalid("non-finite feature value".into()));
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(GraphError::Invalid(format!("{} labels for {n} nodes", labels.len())));
            }
            let n_classes = match &class_names {
                Some(names) => names.len(),
                None => labels.iter().max().map_or(0, |m| m + 1),
            };
            if let Some(bad) = labels.iter().find(|&&l| l >= n_classes) {
                return Err(GraphError::Invalid(format!("label {bad} out of range")));
            }
        }
        Ok(Self { node_ids, adjacency, features, feature_names, labels, class_names })
    }

    pub fn n(&self) -> usize {
        self.node_ids.len()
    }

    pub fn k(&self) -> usize {
        self.feature_names.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn n_classes(&self) -> usize {
        match (&self.class_names, &self.labels) {
            (Some(names), _) => names.len(),
            (None, Some(labels)) => labels.iter().max().map_or(0, |m| m + 1),
            _ => 0,
        }
    }

    /// Weighted degree of every node (adjacency row sums).
    pub fn degrees(&self) -> Vec<f64> {
        self.adjacency.row_sums()
    }

    pub fn node_index(&self) -> HashMap<&str, usize> {
        self.node_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }

    /// Relabels nodes so that new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> AttributedGraph {
        let n = self.n();
        assert_eq!(perm.len(), n);
        let features = Matrix::from_fn(n, self.k(), |i, j| self.features[(perm[i], j)]);
        AttributedGraph {
            node_ids: perm.iter().map(|&p| self.node_ids[p].clone()).collect(),
            adjacency: self.adjacency.permuted(perm),
            features,
            feature_names: self.feature_names.clone(),
            labels: self.labels.as_ref().map(|l| perm.iter().map(|&p| l[p]).collect()),
            class_names: self.class_names.clone(),
        }
    }
}

/// A node-by-feature matrix keyed by node id, as read from a feature CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub node_ids: Vec<String>,
    pub feature_names: Vec<String>,
    pub values: Matrix,
}

/// Reads a feature CSV with header `node_id,<feat_1>,...,<feat_k>`.
pub fn load_feature_table(path: &Path) -> Result<FeatureTable, GraphError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err(path))?;
    let header = reader.headers().map_err(csv_err(path))?.clone();
    if header.len() < 2 {
        return Err(GraphError::MalformedLine {
            path: path.into(),
            line: 1,
            reason: "header needs node_id and at least one feature column".into(),
        });
    }
    let feature_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let k = feature_names.len();
    let mut node_ids = Vec::new();
    let mut seen = HashSet::new();
    let mut data = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| GraphError::MalformedLine {
            path: path.into(),
            line,
            reason: e.to_string(),
        })?;
        if record.len() != k + 1 {
            return Err(GraphError::MalformedLine {
                path: path.into(),
                line,
                reason: format!("expected {} fields, found {}", k + 1, record.len()),
            });
        }
        let id = record[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(GraphError::DuplicateNode(id));
        }
        for field in record.iter().skip(1) {
            let v: f64 = field.parse().map_err(|_| GraphError::MalformedLine {
                path: path.into(),
                line,
                reason: format!("bad feature value {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(GraphError::MalformedLine {
                    path: path.into(),
                    line,
                    reason: format!("non-finite feature value {field:?}"),
                });
            }
            data.push(v);
        }
        node_ids.push(id);
    }
    let n = node_ids.len();
    Ok(FeatureTable { node_ids, feature_names, values: Matrix::from_vec(n, k, data) })
}

/// Reorders a feature table's rows to match `node_ids`. Every node must be present.
pub fn align_feature_table(table: &FeatureTable, node_ids: &[String]) -> Result<Matrix, GraphError> {
    let index: HashMap<&str, usize> =
        table.node_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let k = table.feature_names.len();
    let mut out = Matrix::zeros(node_ids.len(), k);
    for (i, id) in node_ids.iter().enumerate() {
        let &src = index
            .get(id.as_str())
            .ok_or_else(|| GraphError::Invalid(format!("node {id:?} missing from modality table")))?;
        out.row_mut(i).copy_from_slice(table.values.row(src));
    }
    Ok(out)
}

fn parse_edge_line(line: &str) -> Option<(&str, &str, &str)> {
    let mut parts: Vec<&str> = if line.contains('\t') {
        line.split('\t').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    };
    parts.retain(|p| !p.is_empty());
    match parts.as_slice() {
        [a, b, w] => Some((a, b, w)),
        _ => None,
    }
}

/// Loads and validates a graph from an edge list, a feature CSV and an optional label CSV.
///
/// Node order follows the feature file. Edges are mirrored; zero-weight edges
/// are dropped; any repeated pair is rejected.
pub fn load_graph(
    edge_path: &Path,
    feature_path: &Path,
    label_path: Option<&Path>,
) -> Result<AttributedGraph, GraphError> {
    let table = load_feature_table(feature_path)?;
    let n = table.node_ids.len();
    let index: HashMap<&str, usize> =
        table.node_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();

    let text = fs::read_to_string(edge_path).map_err(io_err(edge_path))?;
    let mut adjacency = Matrix::zeros(n, n);
    let mut seen: HashMap<(usize, usize), f64> = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let malformed = |reason: String| GraphError::MalformedLine { path: edge_path.into(), line, reason };
        let (a, b, w) = parse_edge_line(trimmed)
            .ok_or_else(|| malformed("expected <src>\\t<dst>\\t<weight>".into()))?;
        let weight: f64 = w.parse().map_err(|_| malformed(format!("bad weight {w:?}")))?;
        if !weight.is_finite() || weight < 0.0 {
            return Err(malformed(format!("weight must be finite and non-negative, got {w}")));
        }
        let lookup = |id: &str| {
            index.get(id).copied().ok_or_else(|| GraphError::UnknownNodeId {
                path: edge_path.into(),
                line,
                id: id.to_string(),
            })
        };
        let (i, j) = (lookup(a)?, lookup(b)?);
        if i == j {
            return Err(GraphError::SelfLoop { path: edge_path.into(), line, id: a.to_string() });
        }
        let key = (i.min(j), i.max(j));
        if let Some(&previous) = seen.get(&key) {
            let (a, b) = (a.to_string(), b.to_string());
            return Err(if previous == weight {
                GraphError::DuplicateEdge { path: edge_path.into(), line, a, b }
            } else {
                GraphError::AsymmetricDuplicate { path: edge_path.into(), line, a, b }
            });
        }
        seen.insert(key, weight);
        if weight > 0.0 {
            adjacency[(i, j)] = weight;
            adjacency[(j, i)] = weight;
        }
    }

    let (labels, class_names) = match label_path {
        Some(path) => {
            let (labels, names) = load_labels(path, &table.node_ids)?;
            (Some(labels), Some(names))
        }
        None => (None, None),
    };

    AttributedGraph::new(
        table.node_ids,
        adjacency,
        table.values,
        table.feature_names,
        labels,
        class_names,
    )
}

/// Reads `node_id,label`; label strings become indices in first-seen order.
fn load_labels(path: &Path, node_ids: &[String]) -> Result<(Vec<usize>, Vec<String>), GraphError> {
    let index: HashMap<&str, usize> =
        node_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err(path))?;
    let mut labels: Vec<Option<usize>> = vec![None; node_ids.len()];
    let mut class_names: Vec<String> = Vec::new();
    let mut class_index: HashMap<String, usize> = HashMap::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| GraphError::MalformedLine {
            path: path.into(),
            line,
            reason: e.to_string(),
        })?;
        if record.len() != 2 {
            return Err(GraphError::MalformedLine {
                path: path.into(),
                line,
                reason: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let &node = index.get(&record[0]).ok_or_else(|| GraphError::UnknownNodeId {
            path: path.into(),
            line,
            id: record[0].to_string(),
        })?;
        let name = record[1].to_string();
        let next = class_names.len();
        let class = *class_index.entry(name.clone()).or_insert_with(|| {
            class_names.push(name);
            next
        });
        if labels[node].replace(class).is_some() {
            return Err(GraphError::MalformedLine {
                path: path.into(),
                line,
                reason: format!("node {:?} labelled twice", &record[0]),
            });
        }
    }
    let labels = labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| GraphError::MissingLabel(node_ids[i].clone())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((labels, class_names))
}

/// Writes the graph back out in the ingestion formats. Returns the edge,
/// feature and (when labelled) label paths inside `dir`.
pub fn write_graph(
    graph: &AttributedGraph,
    dir: &Path,
) -> Result<(PathBuf, PathBuf, Option<PathBuf>), GraphError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let edge_path = dir.join("edges.tsv");
    let feature_path = dir.join("features.csv");

    let file = fs::File::create(&edge_path).map_err(io_err(&edge_path))?;
    let mut out = BufWriter::new(file);
    let ids = graph.node_ids();
    let adjacency = graph.adjacency();
    for i in 0..graph.n() {
        for j in i + 1..graph.n() {
            let w = adjacency[(i, j)];
            if w != 0.0 {
                writeln!(out, "{}\t{}\t{}", ids[i], ids[j], w).map_err(io_err(&edge_path))?;
            }
        }
    }
    out.flush().map_err(io_err(&edge_path))?;

    let mut header = vec!["node_id".to_string()];
    header.extend(graph.feature_names().iter().cloned());
    write_feature_csv(&feature_path, &header, ids, graph.features())?;

    let label_path = match (graph.labels(), graph.class_names()) {
        (Some(labels), names) => {
            let path = dir.join("labels.csv");
            let mut writer = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
            writer.write_record(["node_id", "label"]).map_err(csv_err(&path))?;
            // Rows go out grouped by class so first-seen order on reload
            // reproduces the class indices.
            let mut order: Vec<usize> = (0..graph.n()).collect();
            order.sort_by_key(|&i| (labels[i], i));
            for i in order {
                let name = names.map_or_else(|| labels[i].to_string(), |n| n[labels[i]].clone());
                writer.write_record([ids[i].as_str(), name.as_str()]).map_err(csv_err(&path))?;
            }
            writer.flush().map_err(io_err(&path))?;
            Some(path)
        }
        _ => None,
    };
    Ok((edge_path, feature_path, label_path))
}

pub fn write_feature_csv(
    path: &Path,
    header: &[String],
    node_ids: &[String],
    values: &Matrix,
) -> Result<(), GraphError> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_err(path))?;
    writer.write_record(header).map_err(csv_err(path))?;
    for (i, id) in node_ids.iter().enumerate() {
        let mut record = vec![id.clone()];
        record.extend(values.row(i).iter().map(|v| v.to_string()));
        writer.write_record(&record).map_err(csv_err(path))?;
    }
    writer.flush().map_err(io_err(path))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitSet {
    Train,
    Val,
    Test,
}

impl SplitSet {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitSet::Train => "train",
            SplitSet::Val => "val",
            SplitSet::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn membership(&self, n: usize) -> Vec<Option<SplitSet>> {
        let mut out = vec![None; n];
        for (set, idx) in [(SplitSet::Train, &self.train), (SplitSet::Val, &self.val), (SplitSet::Test, &self.test)] {
            for &i in idx {
                out[i] = Some(set);
            }
        }
        out
    }
}

/// Stratified train/val/test split.
///
/// Per class: train takes `ceil(n_c * r_train)` (fractions go to train), but
/// never so many that val or test would be left empty when their ratio is
/// positive. The remainder is shared between val and test by cumulative
/// rounding across classes so the global val/test totals stay balanced.
pub fn split_dataset(labels: &[usize], ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit, GraphError> {
    let (r_train, r_val, r_test) = ratios;
    if [r_train, r_val, r_test].iter().any(|r| !(*r >= 0.0)) || r_train + r_val + r_test <= 0.0 {
        return Err(GraphError::Invalid(format!("bad split ratios {ratios:?}")));
    }
    let total = r_train + r_val + r_test;
    let (r_train, r_val, r_test) = (r_train / total, r_val / total, r_test / total);
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let mut rng = rng_from_seed(seed);
    let mut split = DatasetSplit { train: vec![], val: vec![], test: vec![], seed };
    let need_val = usize::from(r_val > 0.0);
    let need_test = usize::from(r_test > 0.0);
    let val_share = if r_val + r_test > 0.0 { r_val / (r_val + r_test) } else { 0.0 };
    let mut cum_share = 0.0f64;
    let mut cum_val = 0usize;
    for (class, mut idx) in members.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let n = idx.len();
        if n < 3 {
            return Err(GraphError::ClassTooSmall(class.to_string()));
        }
        idx.shuffle(&mut rng);
        let n_train = ((n as f64 * r_train - 1e-9).ceil() as usize).min(n - need_val - need_test);
        let rest = n - n_train;
        cum_share += rest as f64 * val_share;
        let target = (cum_share + 0.5 - 1e-9).floor() as usize;
        let mut n_val = target.saturating_sub(cum_val).min(rest);
        n_val = n_val.max(need_val).min(rest - need_test);
        cum_val += n_val;
        split.train.extend_from_slice(&idx[..n_train]);
        split.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        split.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Coordinates that carry the planted signal for `block` when `k` features
/// are shared among `n_blocks` blocks: a contiguous chunk of `k / n_blocks`
/// columns, or a single wrapped column when there are fewer features than blocks.
pub fn signal_coordinates(n_blocks: usize, k: usize, block: usize) -> Vec<usize> {
    if k == 0 || n_blocks == 0 {
        return Vec::new();
    }
    if k < n_blocks {
        return vec![block % k];
    }
    let chunk = k / n_blocks;
    (block * chunk..(block + 1) * chunk).collect()
}

/// Stochastic block model with unit weights, noisy features carrying a
/// block-specific signal, and labels equal to the block index.
pub fn generate_sbm(
    blocks: &[usize],
    p_in: f64,
    p_out: f64,
    feature_dim: usize,
    signal: f64,
    seed: u64,
) -> Result<AttributedGraph, GraphError> {
    if !(0.0..=1.0).contains(&p_in) || !(0.0..=1.0).contains(&p_out) {
        return Err(GraphError::Invalid(format!("probabilities must lie in [0,1], got {p_in}, {p_out}")));
    }
    if !(signal >= 0.0) {
        return Err(GraphError::Invalid(format!("signal must be non-negative, got {signal}")));
    }
    let block_of: Vec<usize> =
        blocks.iter().enumerate().flat_map(|(b, &size)| std::iter::repeat_n(b, size)).collect();
    let n = block_of.len();
    let mut rng = rng_from_seed(seed);
    let mut adjacency = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let p = if block_of[i] == block_of[j] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                adjacency[(i, j)] = 1.0;
                adjacency[(j, i)] = 1.0;
            }
        }
    }
    let mut features = Matrix::zeros(n, feature_dim);
    for i in 0..n {
        for v in features.row_mut(i) {
            *v = StandardNormal.sample(&mut rng);
        }
        for c in signal_coordinates(blocks.len(), feature_dim, block_of[i]) {
            features[(i, c)] += signal;
        }
    }
    let width = n.max(1).to_string().len();
    AttributedGraph::new(
        (0..n).map(|i| format!("n{i:0width$}")).collect(),
        adjacency,
        features,
        (0..feature_dim).map(|j| format!("f{j}")).collect(),
        Some(block_of),
        Some((0..blocks.len()).map(|b| format!("block{b}")).collect()),
    )
}
