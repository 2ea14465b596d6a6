use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use super::net::argmax;
use super::{CnnError, ConvNet, ConvNetConfig, ConvNetParams};
use crate::graph::DatasetSplit;
use crate::imaging::{read_tensor_file, write_tensor_file, ImageSet, Tensor3, TensorFile, TensorRecord};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, rng_from_seed};

/// Images per forward pass when only predictions are needed.
const EVAL_CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub test: Option<ClassificationMetrics>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_acc\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.val_acc);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), CnnError> {
        fs::write(path, self.to_csv()).map_err(|source| CnnError::Io { path: path.into(), source })
    }
}

/// Accuracy plus macro-averaged precision, recall and F1.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Per-class scores are averaged without weights over all `classes`. A
/// precision or recall with an empty denominator counts as 0, and so does
/// the F1 of a class whose precision and recall are both 0.
pub fn classification_metrics(
    truth: &[usize],
    predicted: &[usize],
    classes: usize,
) -> Result<ClassificationMetrics, CnnError> {
    if truth.is_empty() {
        return Err(CnnError::EmptySplit("evaluation"));
    }
    if truth.len() != predicted.len() {
        return Err(CnnError::ShapeMismatch(format!("{} labels for {} predictions", truth.len(), predicted.len())));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= classes || p >= classes {
            return Err(CnnError::BadLabel { label: t.max(p), classes });
        }
        confusion[t][p] += 1;
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let (mut precision, mut recall, mut f1) = (0.0, 0.0, 0.0);
    for c in 0..classes {
        let tp = confusion[c][c];
        let predicted_c: usize = (0..classes).map(|t| confusion[t][c]).sum();
        let actual_c: usize = confusion[c].iter().sum();
        let p = ratio(tp, predicted_c);
        let r = ratio(tp, actual_c);
        precision += p;
        recall += r;
        f1 += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let k = classes as f64;
    Ok(ClassificationMetrics {
        accuracy: correct as f64 / truth.len() as f64,
        precision: precision / k,
        recall: recall / k,
        f1: f1 / k,
        confusion,
    })
}

fn check_shape(images: &ImageSet, config: &ConvNetConfig) -> Result<(), CnnError> {
    let expected = (config.input_side, config.input_side, config.input_channels);
    match images.shape() {
        Some(shape) if shape != expected => Err(CnnError::ShapeMismatch(format!(
            "images are {shape:?}, network expects {expected:?}"
        ))),
        _ => Ok(()),
    }
}

/// Concatenated `f64` pixels of the selected images.
pub(crate) fn gather(images: &ImageSet, indices: &[usize]) -> Result<Vec<f64>, CnnError> {
    let mut out = Vec::new();
    for &i in indices {
        let img = images
            .images
            .get(i)
            .ok_or_else(|| CnnError::ShapeMismatch(format!("image index {i} out of range for {}", images.len())))?;
        out.extend(img.tensor.as_slice().iter().map(|&v| f64::from(v)));
    }
    Ok(out)
}

fn labels_of(images: &ImageSet, indices: &[usize]) -> Result<Vec<usize>, CnnError> {
    indices
        .iter()
        .map(|&i| {
            images
                .images
                .get(i)
                .and_then(|img| img.label)
                .ok_or_else(|| CnnError::ShapeMismatch(format!("image {i} is missing or unlabeled")))
        })
        .collect()
}

/// Class probabilities for the selected images, one row each.
pub fn probabilities(net: &ConvNet, images: &ImageSet, indices: &[usize]) -> Result<Matrix, CnnError> {
    check_shape(images, &net.config)?;
    let classes = net.config.classes;
    let mut out = Vec::with_capacity(indices.len() * classes);
    for chunk in indices.chunks(EVAL_CHUNK) {
        out.extend_from_slice(net.forward(&gather(images, chunk)?, chunk.len())?.as_slice());
    }
    Ok(Matrix::from_vec(indices.len(), classes, out))
}

/// Mean cross-entropy and accuracy over the selected images.
fn loss_and_accuracy(net: &ConvNet, images: &ImageSet, indices: &[usize]) -> Result<(f64, f64), CnnError> {
    let labels = labels_of(images, indices)?;
    let mut total = 0.0;
    let mut correct = 0;
    for (chunk, ys) in indices.chunks(EVAL_CHUNK).zip(labels.chunks(EVAL_CHUNK)) {
        let batch = gather(images, chunk)?;
        total += net.loss(&batch, ys)? * chunk.len() as f64;
        let pred = net.predict(&batch, chunk.len())?;
        correct += pred.iter().zip(ys).filter(|(p, y)| p == y).count();
    }
    let n = indices.len() as f64;
    Ok((total / n, correct as f64 / n))
}

/// Scores the network on the selected labelled images.
pub fn evaluate(net: &ConvNet, images: &ImageSet, indices: &[usize]) -> Result<ClassificationMetrics, CnnError> {
    if indices.is_empty() {
        return Err(CnnError::EmptySplit("evaluation"));
    }
    let truth = labels_of(images, indices)?;
    let probs = probabilities(net, images, indices)?;
    let predicted: Vec<usize> = (0..indices.len()).map(|i| argmax(probs.row(i))).collect();
    classification_metrics(&truth, &predicted, net.config.classes)
}

/// Mini-batch SGD with momentum (`v = momentum * v - lr * g; w += v`).
/// Training images are reshuffled every epoch and the last short batch is
/// kept. Validation loss is measured after each epoch and the parameters
/// with the lowest value are returned.
pub fn train(images: &ImageSet, split: &DatasetSplit, config: &ConvNetConfig) -> Result<(ConvNet, TrainReport), CnnError> {
    config.validate()?;
    check_shape(images, config)?;
    if split.train.is_empty() {
        return Err(CnnError::EmptySplit("train"));
    }
    if split.val.is_empty() {
        return Err(CnnError::EmptySplit("validation"));
    }
    let train_labels = labels_of(images, &split.train)?;
    let mut net = ConvNet::new(config.clone())?;
    let mut velocity = net.params.zeros_like();
    let mut rng = rng_from_seed(derive_seed(config.seed, "shuffle"));
    let mut order: Vec<usize> = (0..split.train.len()).collect();

    let mut best = net.clone();
    let mut best_epoch = 0;
    let mut best_val_loss = f64::INFINITY;
    let mut epochs = Vec::with_capacity(config.max_epochs);
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let idx: Vec<usize> = chunk.iter().map(|&o| split.train[o]).collect();
            let ys: Vec<usize> = chunk.iter().map(|&o| train_labels[o]).collect();
            let (loss, grads) = net.loss_and_grad(&gather(images, &idx)?, &ys)?;
            total += loss * chunk.len() as f64;
            step(&mut net.params, &mut velocity, &grads, config.learning_rate, config.momentum);
        }
        let train_loss = total / split.train.len() as f64;
        let (val_loss, val_acc) = loss_and_accuracy(&net, images, &split.val)?;
        log::info!("epoch {epoch}: train loss {train_loss:.5}, val loss {val_loss:.5}, val acc {val_acc:.4}");
        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            best_epoch = epoch;
            best = net.clone();
        }
        epochs.push(EpochRecord { epoch, train_loss, val_loss, val_acc });
    }
    let test = if split.test.is_empty() { None } else { Some(evaluate(&best, images, &split.test)?) };
    Ok((best, TrainReport { epochs, best_epoch, best_val_loss, test }))
}

fn step(params: &mut ConvNetParams, velocity: &mut ConvNetParams, grads: &ConvNetParams, lr: f64, momentum: f64) {
    for (((_, w), (_, v)), (_, g)) in params.groups_mut().into_iter().zip(velocity.groups_mut()).zip(grads.groups()) {
        for ((w, v), g) in w.iter_mut().zip(v.iter_mut()).zip(g) {
            *v = momentum * *v - lr * g;
            *w += *v;
        }
    }
}

const CONFIG_RECORD: &str = "config";

/// Stores every parameter array as a single-channel tensor (weights
/// `out x in`, biases `1 x out`) plus a `config` record holding the
/// architecture. Values are narrowed to `f32`.
pub fn save_checkpoint(net: &ConvNet, path: &Path) -> Result<(), CnnError> {
    let cfg = &net.config;
    let mut arch = vec![cfg.input_side, cfg.input_channels, cfg.conv_layers, cfg.kernel, cfg.filters, cfg.classes];
    arch.extend(&cfg.fc_sizes);
    let arch: Vec<f32> = arch.iter().map(|&v| v as f32).collect();
    let mut records = vec![TensorRecord {
        name: CONFIG_RECORD.into(),
        label: -1,
        tensor: Tensor3::from_vec(1, arch.len(), 1, arch)?,
    }];
    let layers: Vec<_> = net.params.conv.iter().chain(&net.params.fc).collect();
    for ((name, values), pos) in net.params.groups().into_iter().zip(0..) {
        let d = layers[pos / 2];
        let (rows, cols) = if pos % 2 == 0 { (d.weight.rows(), d.weight.cols()) } else { (1, d.bias.len()) };
        let data = values.iter().map(|&v| v as f32).collect();
        records.push(TensorRecord { name, label: -1, tensor: Tensor3::from_vec(rows, cols, 1, data)? });
    }
    write_tensor_file(&TensorFile { records, channel_names: Vec::new() }, path)?;
    Ok(())
}

/// Restores a network written by [`save_checkpoint`]. Optimizer settings in
/// the returned config are the defaults.
pub fn load_checkpoint(path: &Path) -> Result<ConvNet, CnnError> {
    let file = read_tensor_file(path)?;
    let bad = |msg: String| CnnError::Checkpoint(format!("{}: {msg}", path.display()));
    let arch = file.find(CONFIG_RECORD).ok_or_else(|| bad("missing config record".into()))?;
    let arch: Vec<usize> = arch.tensor.as_slice().iter().map(|&v| v as usize).collect();
    if arch.len() < 6 {
        return Err(bad("config record too short".into()));
    }
    let config = ConvNetConfig {
        conv_layers: arch[2],
        kernel: arch[3],
        filters: arch[4],
        fc_sizes: arch[6..].to_vec(),
        ..ConvNetConfig::new(arch[0], arch[1], arch[5])
    };
    config.validate()?;
    let mut params = ConvNetParams::zeros(&config);
    for (name, values) in params.groups_mut() {
        let record = file.find(&name).ok_or_else(|| bad(format!("missing {name}")))?;
        let stored = record.tensor.as_slice();
        if stored.len() != values.len() {
            return Err(bad(format!("{name} has {} values, expected {}", stored.len(), values.len())));
        }
        for (v, &s) in values.iter_mut().zip(stored) {
            *v = f64::from(s);
        }
    }
    ConvNet::from_params(config, params)
}
