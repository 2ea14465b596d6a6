use crate::matrix::Matrix;

/// Highly variable features: each column is shifted to a minimum of 0 and
/// passed through `ln(1 + x)`, a least-squares line of variance on mean is
/// fitted across columns, and columns are ranked by how far their variance
/// sits above that line. Returns the top `min(m, k)` indices, best first,
/// ties going to the lower index.
pub fn select_hvf(features: &Matrix, m: usize) -> Vec<usize> {
    let (n, k) = (features.rows(), features.cols());
    let mut means = vec![0.0; k];
    let mut vars = vec![0.0; k];
    for j in 0..k {
        let col = features.column(j);
        let min = col.iter().copied().fold(f64::INFINITY, f64::min);
        let t: Vec<f64> = col.iter().map(|v| (v - min).ln_1p()).collect();
        let mean = t.iter().sum::<f64>() / n.max(1) as f64;
        means[j] = mean;
        vars[j] = t.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n.max(1) as f64;
    }
    let residuals = detrend(&means, &vars);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| residuals[b].total_cmp(&residuals[a]).then(a.cmp(&b)));
    order.truncate(m.min(k));
    order
}

/// `y - (a + b x)` for the least-squares line through `(x, y)`.
fn detrend(x: &[f64], y: &[f64]) -> Vec<f64> {
    let k = x.len().max(1) as f64;
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    // Means that agree up to rounding give a flat trend rather than a slope
    // fitted to noise.
    let scale: f64 = x.iter().map(|v| v * v).sum();
    let slope = if sxx > 1e-12 * scale { sxy / sxx } else { 0.0 };
    x.iter().zip(y).map(|(a, b)| b - (my + slope * (a - mx))).collect()
}
