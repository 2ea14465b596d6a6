use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::StageError;
use crate::cnn::ConvNetConfig;

/// Which images form the Shapley baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Background {
    All,
    Train,
}

/// Every setting a stage can read. A config file and `--set` flags override
/// the defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub edges: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Name of the modality read from `features`.
    pub feature_modality: String,
    /// Extra modalities, aligned to the graph's nodes by id.
    pub modalities: Vec<(String, PathBuf)>,
    pub out: Option<PathBuf>,
    pub seed: u64,

    pub communities: Option<usize>,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub epsilon: f64,
    pub gw_restarts: usize,
    pub gw_max_iter: usize,

    pub split: (f64, f64, f64),
    pub conv_layers: usize,
    pub kernel: usize,
    pub filters: usize,
    pub fc_sizes: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,

    pub n_hvf: usize,
    pub n_permutations: usize,
    pub shap_structure: bool,
    pub background: Background,

    pub synth_blocks: Vec<usize>,
    pub synth_p_in: f64,
    pub synth_p_out: f64,
    pub synth_k: usize,
    pub synth_signal: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let cnn = ConvNetConfig::new(1, 1, 2);
        Self {
            edges: None,
            features: None,
            labels: None,
            feature_modality: "features".into(),
            modalities: Vec::new(),
            out: None,
            seed: 0,
            communities: None,
            kmeans_restarts: 10,
            kmeans_max_iter: crate::community::DEFAULT_MAX_ITER,
            epsilon: 0.0,
            gw_restarts: 20,
            gw_max_iter: 1000,
            split: (0.70, 0.15, 0.15),
            conv_layers: cnn.conv_layers,
            kernel: cnn.kernel,
            filters: cnn.filters,
            fc_sizes: cnn.fc_sizes,
            learning_rate: cnn.learning_rate,
            momentum: cnn.momentum,
            batch_size: cnn.batch_size,
            epochs: cnn.max_epochs,
            n_hvf: 1000,
            n_permutations: 10,
            shap_structure: false,
            background: Background::All,
            synth_blocks: vec![60, 60, 60, 60],
            synth_p_in: 0.3,
            synth_p_out: 0.02,
            synth_k: 64,
            synth_signal: 1.5,
        }
    }
}

fn bad(key: &str, value: &str, why: &str) -> StageError {
    StageError::new("config", format!("{key} = {value:?}: {why}"))
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, StageError> {
    value.trim().parse().map_err(|_| bad(key, value, "not a valid number"))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, StageError> {
    value.split(',').filter(|s| !s.trim().is_empty()).map(|s| num(key, s)).collect()
}

fn flag(key: &str, value: &str) -> Result<bool, StageError> {
    match value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, value, "expected true or false")),
    }
}

/// Splits `name=path`.
pub fn parse_modality(spec: &str) -> Result<(String, PathBuf), StageError> {
    match spec.split_once('=') {
        Some((name, path)) if !name.trim().is_empty() && !path.trim().is_empty() => {
            Ok((name.trim().to_string(), PathBuf::from(path.trim())))
        }
        _ => Err(StageError::new("config", format!("modality {spec:?} is not name=path"))),
    }
}

impl PipelineConfig {
    /// Applies one `key = value` setting. Relative paths resolve against `base`.
    pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<(), StageError> {
        let path = |v: &str| {
            let p = PathBuf::from(v.trim());
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };
        match key.trim() {
            "edges" => self.edges = Some(path(value)),
            "features" => self.features = Some(path(value)),
            "labels" => self.labels = Some(path(value)),
            "feature_modality" => self.feature_modality = value.trim().to_string(),
            "modality" => {
                let (name, p) = parse_modality(value)?;
                self.modalities.push((name, path(p.to_str().unwrap_or_default())));
            }
            "out" => self.out = Some(path(value)),
            "seed" => self.seed = num(key, value)?,
            "communities" => self.communities = Some(num(key, value)?),
            "kmeans_restarts" => self.kmeans_restarts = num(key, value)?,
            "kmeans_max_iter" => self.kmeans_max_iter = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "gw_restarts" => self.gw_restarts = num(key, value)?,
            "gw_max_iter" => self.gw_max_iter = num(key, value)?,
            "split" => {
                let r: Vec<f64> = list(key, value)?;
                if r.len() != 3 {
                    return Err(bad(key, value, "expected three ratios"));
                }
                self.split = (r[0], r[1], r[2]);
            }
            "conv_layers" => self.conv_layers = num(key, value)?,
            "kernel" => self.kernel = num(key, value)?,
            "filters" => self.filters = num(key, value)?,
            "fc_sizes" => self.fc_sizes = list(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "n_hvf" => self.n_hvf = num(key, value)?,
            "n_permutations" => self.n_permutations = num(key, value)?,
            "shap_structure" => self.shap_structure = flag(key, value)?,
            "background" => {
                self.background = match value.trim() {
                    "all" => Background::All,
                    "train" => Background::Train,
                    _ => return Err(bad(key, value, "expected all or train")),
                }
            }
            "synth_blocks" => self.synth_blocks = list(key, value)?,
            "synth_p_in" => self.synth_p_in = num(key, value)?,
            "synth_p_out" => self.synth_p_out = num(key, value)?,
            "synth_k" => self.synth_k = num(key, value)?,
            "synth_signal" => self.synth_signal = num(key, value)?,
            other => return Err(StageError::new("config", format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` file: one entry per line, `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), StageError> {
        let text = fs::read_to_string(path)
            .map_err(|e| StageError::new("config", format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf);
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                StageError::new("config", format!("{}:{}: expected key=value", path.display(), idx + 1))
            })?;
            self.set(key, value, base.as_deref())?;
        }
        Ok(())
    }

    pub fn out_dir(&self) -> Result<&Path, StageError> {
        self.out.as_deref().ok_or_else(|| StageError::new("config", "--out is required"))
    }

    pub fn cnn_config(&self, side: usize, channels: usize, classes: usize, seed: u64) -> ConvNetConfig {
        ConvNetConfig {
            conv_layers: self.conv_layers,
            kernel: self.kernel,
            filters: self.filters,
            fc_sizes: self.fc_sizes.clone(),
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            max_epochs: self.epochs,
            seed,
            ..ConvNetConfig::new(side, channels, classes)
        }
    }
}
