use rand::Rng;

use super::{CnnError, ConvNetConfig};
use crate::matrix::{gemm, Matrix};
use crate::rng::rng_from_seed;

/// Weights (`out x in`) and biases of one layer. Convolution weights are
/// stored flattened as `filters x (in_channels * kernel^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(out: usize, inp: usize) -> Self {
        Self { weight: Matrix::zeros(out, inp), bias: vec![0.0; out] }
    }
}

/// All trainable arrays, convolutions first.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNetParams {
    pub conv: Vec<Dense>,
    pub fc: Vec<Dense>,
}

impl ConvNetParams {
    pub fn zeros(config: &ConvNetConfig) -> Self {
        let k2 = config.kernel * config.kernel;
        let conv = (0..config.conv_layers)
            .map(|l| Dense::zeros(config.filters, config.conv_in_channels(l) * k2))
            .collect();
        let mut fc = Vec::with_capacity(config.fc_sizes.len() + 1);
        let mut inp = config.flatten_len();
        for &out in config.fc_sizes.iter().chain(std::iter::once(&config.classes)) {
            fc.push(Dense::zeros(out, inp));
            inp = out;
        }
        Self { conv, fc }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |d: &Dense| Dense::zeros(d.weight.rows(), d.weight.cols());
        Self { conv: self.conv.iter().map(z).collect(), fc: self.fc.iter().map(z).collect() }
    }

    /// Named parameter arrays in a fixed order (`conv0.weight`, `conv0.bias`, ..., `fc0.weight`, ...).
    pub fn groups(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (prefix, layers) in [("conv", &self.conv), ("fc", &self.fc)] {
            for (i, d) in layers.iter().enumerate() {
                out.push((format!("{prefix}{i}.weight"), d.weight.as_slice()));
                out.push((format!("{prefix}{i}.bias"), d.bias.as_slice()));
            }
        }
        out
    }

    pub fn groups_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (prefix, layers) in [("conv", &mut self.conv), ("fc", &mut self.fc)] {
            for (i, d) in layers.iter_mut().enumerate() {
                out.push((format!("{prefix}{i}.weight"), d.weight.as_mut_slice()));
                out.push((format!("{prefix}{i}.bias"), d.bias.as_mut_slice()));
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.groups().iter().map(|(_, g)| g.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|(_, g)| g.iter().all(|v| v.is_finite()))
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        self.conv.iter().chain(&self.fc).map(|d| (d.weight.rows(), d.weight.cols())).collect()
    }

    fn check(&self, config: &ConvNetConfig) -> Result<(), CnnError> {
        let expected = Self::zeros(config).shapes();
        let bias_ok = self.conv.iter().chain(&self.fc).all(|d| d.bias.len() == d.weight.rows());
        if self.conv.len() != config.conv_layers || self.shapes() != expected || !bias_ok {
            return Err(CnnError::ShapeMismatch("parameter shapes do not match the configuration".into()));
        }
        Ok(())
    }
}

/// Weights uniform in `+-sqrt(6 / fan_in)`, biases zero. Draw order is
/// layer by layer, row-major.
pub fn init_params(config: &ConvNetConfig, seed: u64) -> ConvNetParams {
    let mut params = ConvNetParams::zeros(config);
    let mut rng = rng_from_seed(seed);
    for d in params.conv.iter_mut().chain(params.fc.iter_mut()) {
        let a = (6.0 / d.weight.cols() as f64).sqrt();
        for w in d.weight.as_mut_slice() {
            *w = a * (2.0 * rng.random::<f64>() - 1.0);
        }
    }
    params
}

/// A configured network with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    pub config: ConvNetConfig,
    pub params: ConvNetParams,
}

/// Intermediate values of one forward pass.
struct Trace {
    /// Per convolution: the unfolded input patches, `(in * k^2) x (n * side^2)`.
    cols: Vec<Vec<f64>>,
    /// Per convolution: post-ReLU output, `filters x (n * side^2)`.
    conv_out: Vec<Vec<f64>>,
    /// Input of each fully connected layer, `n x in`.
    fc_in: Vec<Matrix>,
    logits: Matrix,
}

impl ConvNet {
    pub fn new(config: ConvNetConfig) -> Result<Self, CnnError> {
        config.validate()?;
        let params = init_params(&config, config.seed);
        Ok(Self { config, params })
    }

    pub fn from_params(config: ConvNetConfig, params: ConvNetParams) -> Result<Self, CnnError> {
        config.validate()?;
        params.check(&config)?;
        Ok(Self { config, params })
    }

    /// Class probabilities for `n` images laid out back to back, each
    /// `channels x side x side` (channel-major, row-major).
    pub fn forward(&self, batch: &[f64], n: usize) -> Result<Matrix, CnnError> {
        let trace = self.run(batch, n, false)?;
        Ok(softmax_rows(&trace.logits))
    }

    pub fn predict(&self, batch: &[f64], n: usize) -> Result<Vec<usize>, CnnError> {
        let probs = self.forward(batch, n)?;
        Ok((0..n).map(|i| argmax(probs.row(i))).collect())
    }

    /// Activations of the last hidden layer, one row per image.
    pub fn embed(&self, batch: &[f64], n: usize) -> Result<Matrix, CnnError> {
        let trace = self.run(batch, n, false)?;
        Ok(trace.fc_in.last().expect("at least the output layer").clone())
    }

    /// Mean cross-entropy of the batch.
    pub fn loss(&self, batch: &[f64], labels: &[usize]) -> Result<f64, CnnError> {
        self.check_labels(labels)?;
        let trace = self.run(batch, labels.len(), false)?;
        Ok(cross_entropy(&trace.logits, labels).0)
    }

    /// Mean cross-entropy and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, batch: &[f64], labels: &[usize]) -> Result<(f64, ConvNetParams), CnnError> {
        self.check_labels(labels)?;
        let n = labels.len();
        let trace = self.run(batch, n, true)?;
        let (loss, mut dz) = cross_entropy(&trace.logits, labels);
        let mut grads = self.params.zeros_like();
        let cfg = &self.config;

        for l in (0..self.params.fc.len()).rev() {
            let layer = &self.params.fc[l];
            let x = &trace.fc_in[l];
            let (out, inp) = (layer.weight.rows(), layer.weight.cols());
            let g = &mut grads.fc[l];
            gemm(out, n, inp, 1.0, dz.as_slice(), true, x.as_slice(), false, 0.0, g.weight.as_mut_slice());
            g.bias = dz.col_sums();
            if l == 0 && cfg.conv_layers == 0 {
                break;
            }
            let mut dx = Matrix::zeros(n, inp);
            gemm(n, out, inp, 1.0, dz.as_slice(), false, layer.weight.as_slice(), false, 0.0, dx.as_mut_slice());
            relu_mask(dx.as_mut_slice(), x.as_slice());
            dz = dx;
        }
        if cfg.conv_layers == 0 {
            return Ok((loss, grads));
        }

        let hw = cfg.input_side * cfg.input_side;
        let width = n * hw;
        let mut dconv = unflatten(dz.as_slice(), n, cfg.filters, hw);
        for l in (0..cfg.conv_layers).rev() {
            let layer = &self.params.conv[l];
            let patch = layer.weight.cols();
            let g = &mut grads.conv[l];
            gemm(cfg.filters, width, patch, 1.0, &dconv, false, &trace.cols[l], true, 0.0, g.weight.as_mut_slice());
            g.bias = dconv.chunks(width).map(|row| row.iter().sum()).collect();
            if l == 0 {
                break;
            }
            let mut dcols = vec![0.0; patch * width];
            gemm(patch, cfg.filters, width, 1.0, layer.weight.as_slice(), true, &dconv, false, 0.0, &mut dcols);
            let mut din = col2im(&dcols, cfg.conv_in_channels(l), cfg.input_side, n, cfg.kernel);
            relu_mask(&mut din, &trace.conv_out[l - 1]);
            dconv = din;
        }
        Ok((loss, grads))
    }

    fn check_labels(&self, labels: &[usize]) -> Result<(), CnnError> {
        match labels.iter().find(|&&y| y >= self.config.classes) {
            Some(&label) => Err(CnnError::BadLabel { label, classes: self.config.classes }),
            None => Ok(()),
        }
    }

    fn run(&self, batch: &[f64], n: usize, keep: bool) -> Result<Trace, CnnError> {
        let cfg = &self.config;
        if batch.len() != n * cfg.input_len() {
            return Err(CnnError::ShapeMismatch(format!(
                "batch of {} values is not {n} images of {}x{}x{}",
                batch.len(),
                cfg.input_channels,
                cfg.input_side,
                cfg.input_side
            )));
        }
        let side = cfg.input_side;
        let hw = side * side;
        let width = n * hw;
        let mut cols_kept = Vec::new();
        let mut outs_kept = Vec::new();
        let flat = if cfg.conv_layers == 0 {
            Matrix::from_vec(n, cfg.input_len(), batch.to_vec())
        } else {
            let mut act = to_channel_major(batch, n, cfg.input_channels, hw);
            for (l, layer) in self.params.conv.iter().enumerate() {
                let cin = cfg.conv_in_channels(l);
                let cols = im2col(&act, cin, side, n, cfg.kernel);
                let mut out = vec![0.0; cfg.filters * width];
                gemm(cfg.filters, layer.weight.cols(), width, 1.0, layer.weight.as_slice(), false, &cols, false, 0.0, &mut out);
                for (row, &b) in out.chunks_mut(width).zip(&layer.bias) {
                    for v in row {
                        *v = (*v + b).max(0.0);
                    }
                }
                if keep {
                    cols_kept.push(cols);
                    outs_kept.push(out.clone());
                }
                act = out;
            }
            flatten(&act, n, cfg.filters, hw)
        };

        let mut fc_in = Vec::with_capacity(self.params.fc.len());
        let mut x = flat;
        let last = self.params.fc.len() - 1;
        for (l, layer) in self.params.fc.iter().enumerate() {
            let (out, inp) = (layer.weight.rows(), layer.weight.cols());
            let mut z = Matrix::zeros(n, out);
            gemm(n, inp, out, 1.0, x.as_slice(), false, layer.weight.as_slice(), true, 0.0, z.as_mut_slice());
            for i in 0..n {
                for (v, &b) in z.row_mut(i).iter_mut().zip(&layer.bias) {
                    *v += b;
                    if l != last {
                        *v = v.max(0.0);
                    }
                }
            }
            fc_in.push(x);
            x = z;
        }
        Ok(Trace { cols: cols_kept, conv_out: outs_kept, fc_in, logits: x })
    }
}

fn to_channel_major(batch: &[f64], n: usize, channels: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; batch.len()];
    for s in 0..n {
        for c in 0..channels {
            let src = &batch[(s * channels + c) * hw..][..hw];
            out[(c * n + s) * hw..][..hw].copy_from_slice(src);
        }
    }
    out
}

/// `channels x (n * hw)` activations to `n x (channels * hw)` rows.
fn flatten(act: &[f64], n: usize, channels: usize, hw: usize) -> Matrix {
    Matrix::from_vec(n, channels * hw, to_channel_major(act, channels, n, hw))
}

fn unflatten(rows: &[f64], n: usize, channels: usize, hw: usize) -> Vec<f64> {
    to_channel_major(rows, n, channels, hw)
}

/// Unfolds same-padded `k x k` patches: row `(c * k + ki) * k + kj`, column
/// `sample * hw + pixel`.
fn im2col(input: &[f64], channels: usize, side: usize, n: usize, k: usize) -> Vec<f64> {
    let hw = side * side;
    let width = n * hw;
    let pad = k / 2;
    let mut out = vec![0.0; channels * k * k * width];
    for c in 0..channels {
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut out[((c * k + ki) * k + kj) * width..][..width];
                for s in 0..n {
                    let src = &input[(c * n + s) * hw..][..hw];
                    let dst = &mut row[s * hw..][..hw];
                    for r in 0..side {
                        let Some(rr) = (r + ki).checked_sub(pad).filter(|&v| v < side) else { continue };
                        for col in 0..side {
                            if let Some(cc) = (col + kj).checked_sub(pad).filter(|&v| v < side) {
                                dst[r * side + col] = src[rr * side + cc];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
fn col2im(cols: &[f64], channels: usize, side: usize, n: usize, k: usize) -> Vec<f64> {
    let hw = side * side;
    let width = n * hw;
    let pad = k / 2;
    let mut out = vec![0.0; channels * width];
    for c in 0..channels {
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((c * k + ki) * k + kj) * width..][..width];
                for s in 0..n {
                    let src = &row[s * hw..][..hw];
                    let dst = &mut out[(c * n + s) * hw..][..hw];
                    for r in 0..side {
                        let Some(rr) = (r + ki).checked_sub(pad).filter(|&v| v < side) else { continue };
                        for col in 0..side {
                            if let Some(cc) = (col + kj).checked_sub(pad).filter(|&v| v < side) {
                                dst[rr * side + cc] += src[r * side + col];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn relu_mask(grad: &mut [f64], activation: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

pub(crate) fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

/// Mean cross-entropy and its gradient with respect to the logits.
fn cross_entropy(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let n = labels.len();
    let mut grad = softmax_rows(logits);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        grad[(i, y)] -= 1.0;
    }
    let scale = 1.0 / n.max(1) as f64;
    (loss * scale, grad.map(|v| v * scale))
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn tiny_config() -> ConvNetConfig {
        ConvNetConfig {
            conv_layers: 2,
            filters: 4,
            fc_sizes: vec![10, 8],
            ..ConvNetConfig::new(6, 2, 3)
        }
    }

    fn random_batch(cfg: &ConvNetConfig, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        (0..n * cfg.input_len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn init_is_deterministic_with_expected_shapes() {
        let cfg = ConvNetConfig::new(8, 2, 4);
        let a = init_params(&cfg, 7);
        assert_eq!(a, init_params(&cfg, 7));
        assert_ne!(a, init_params(&cfg, 8));
        // conv0 weight is (16, C, 5, 5) flattened.
        assert_eq!((a.conv[0].weight.rows(), a.conv[0].weight.cols()), (16, 50));
        assert_eq!((a.fc[0].weight.rows(), a.fc[0].weight.cols()), (768, 16 * 64));
        assert_eq!((a.fc[2].weight.rows(), a.fc[2].weight.cols()), (4, 512));
        assert!(a.conv.iter().chain(&a.fc).all(|d| d.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn init_moment_matches_uniform_variance() {
        // fc0 has 768 * 1024 weights with fan_in 1024.
        let p = init_params(&ConvNetConfig::new(8, 2, 4), 3);
        let w = p.fc[0].weight.as_slice();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let sd = (w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w.len() as f64).sqrt();
        let expected = (2.0f64 / 1024.0).sqrt();
        assert!((sd / expected - 1.0).abs() < 0.1, "sd {sd} vs {expected}");
    }

    #[test]
    fn zero_weights_give_uniform_output_and_log_loss() {
        let cfg = tiny_config();
        let net = ConvNet::from_params(cfg.clone(), ConvNetParams::zeros(&cfg)).unwrap();
        let probs = net.forward(&vec![0.0; 2 * cfg.input_len()], 2).unwrap();
        assert!(probs.as_slice().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
        let loss = net.loss(&random_batch(&cfg, 3, 1), &[0, 2, 1]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_head() {
        // 1x1 input, no convolutions, a single 2-class affine layer.
        let cfg = ConvNetConfig { conv_layers: 0, fc_sizes: vec![], ..ConvNetConfig::new(1, 2, 2) };
        let mut params = ConvNetParams::zeros(&cfg);
        params.fc[0].weight = Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]);
        params.fc[0].bias = vec![0.25, -1.0];
        let net = ConvNet::from_params(cfg, params).unwrap();
        let p = net.forward(&[2.0, 1.0], 1).unwrap();
        let (z0, z1) = (2.0 - 2.0 + 0.25, 1.0 + 3.0 - 1.0);
        let e = 1.0 / (1.0 + f64::exp(z1 - z0));
        assert!((p[(0, 0)] - e).abs() < 1e-15);
        assert!((p[(0, 1)] - (1.0 - e)).abs() < 1e-15);
    }

    #[test]
    fn logit_gradient_is_probs_minus_onehot() {
        let logits = Matrix::from_rows(&[[0.3, -1.0, 2.0], [1.0, 1.0, 1.0]]);
        let (_, g) = cross_entropy(&logits, &[2, 0]);
        let p = softmax_rows(&logits);
        for (i, &y) in [2usize, 0].iter().enumerate() {
            for j in 0..3 {
                let expected = (p[(i, j)] - if j == y { 1.0 } else { 0.0 }) / 2.0;
                assert!((g[(i, j)] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn im2col_adjoint() {
        // <im2col(x), y> == <x, col2im(y)>
        let (c, side, n, k) = (2, 4, 3, 3);
        let mut rng = rng_from_seed(5);
        let x: Vec<f64> = (0..c * side * side * n).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..c * k * k * side * side * n).map(|_| rng.random()).collect();
        let lhs: f64 = im2col(&x, c, side, n, k).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&y, c, side, n, k)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let cfg = tiny_config();
        let net = ConvNet::new(ConvNetConfig { seed: 11, ..cfg.clone() }).unwrap();
        let batch = random_batch(&cfg, 50, 2).iter().map(|v| v * 20.0).collect::<Vec<_>>();
        let p = net.forward(&batch, 50).unwrap();
        for i in 0..50 {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_results_do_not_depend_on_batching() {
        let cfg = tiny_config();
        let net = ConvNet::new(cfg.clone()).unwrap();
        let batch = random_batch(&cfg, 4, 9);
        let all = net.forward(&batch, 4).unwrap();
        let one = net.forward(&batch[2 * cfg.input_len()..3 * cfg.input_len()], 1).unwrap();
        for j in 0..3 {
            assert!((all[(2, j)] - one[(0, j)]).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_and_label_errors() {
        let cfg = tiny_config();
        let net = ConvNet::new(cfg.clone()).unwrap();
        assert!(matches!(net.forward(&[0.0; 5], 1), Err(CnnError::ShapeMismatch(_))));
        let batch = random_batch(&cfg, 1, 0);
        assert!(matches!(net.loss(&batch, &[3]), Err(CnnError::BadLabel { .. })));
        assert!(ConvNet::new(ConvNetConfig { kernel: 4, ..cfg }).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = tiny_config();
        let net = ConvNet::new(ConvNetConfig { seed: 3, ..cfg.clone() }).unwrap();
        let batch = random_batch(&cfg, 3, 4);
        let labels = [0, 2, 1];
        let (_, grads) = net.loss_and_grad(&batch, &labels).unwrap();
        let h = 1e-4;
        let mut worst = 0.0f64;
        let analytic: Vec<Vec<f64>> = grads.groups().into_iter().map(|(_, g)| g.to_vec()).collect();
        for (gi, analytic) in analytic.iter().enumerate() {
            for idx in 0..analytic.len() {
                let mut plus = net.clone();
                plus.params.groups_mut()[gi].1[idx] += h;
                let mut minus = net.clone();
                minus.params.groups_mut()[gi].1[idx] -= h;
                let numeric = (plus.loss(&batch, &labels).unwrap() - minus.loss(&batch, &labels).unwrap()) / (2.0 * h);
                let denom = analytic[idx].abs().max(numeric.abs()).max(1e-8);
                worst = worst.max((analytic[idx] - numeric).abs() / denom);
            }
        }
        assert!(worst < 1e-3, "max relative error {worst}");
    }
}
