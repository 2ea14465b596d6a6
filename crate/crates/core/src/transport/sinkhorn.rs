use crate::matrix::Matrix;

use super::TransportError;

pub const DEFAULT_SINKHORN_ITER: usize = 100_000;
pub const DEFAULT_SINKHORN_TOL: f64 = 1e-10;

/// Entropic transport by Sinkhorn scaling: returns
/// `diag(u) * exp(-cost / epsilon) * diag(v)` whose row and column sums match
/// `p` and `q` to within `tol` (max-abs residual).
pub fn sinkhorn(
    cost: &Matrix,
    p: &[f64],
    q: &[f64],
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<Matrix, TransportError> {
    let (n, m) = (cost.rows(), cost.cols());
    if p.len() != n || q.len() != m {
        return Err(TransportError::DimensionMismatch(format!(
            "cost is {n}x{m}, marginals have lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(TransportError::Invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if p.iter().chain(q).any(|&x| !(x > 0.0)) {
        return Err(TransportError::Invalid("marginals must be strictly positive".into()));
    }
    let kernel = cost.map(|c| (-c / epsilon).exp());
    if kernel.row_sums().iter().chain(kernel.col_sums().iter()).any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(TransportError::NumericalUnderflow { epsilon });
    }
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    for _ in 0..max_iter {
        // v <- q / K^T u
        for (j, vj) in v.iter_mut().enumerate() {
            let s: f64 = (0..n).map(|i| kernel[(i, j)] * u[i]).sum();
            *vj = q[j] / s;
        }
        // Columns are exact after the v update; check rows.
        let mut residual = 0.0f64;
        let mut row_sums = vec![0.0; n];
        for (i, rs) in row_sums.iter_mut().enumerate() {
            *rs = kernel.row(i).iter().zip(&v).map(|(k, vj)| k * vj).sum::<f64>();
            residual = residual.max((u[i] * *rs - p[i]).abs());
        }
        if !residual.is_finite() || u.iter().chain(&v).any(|x| !x.is_finite() || *x == 0.0) {
            return Err(TransportError::NumericalUnderflow { epsilon });
        }
        if residual <= tol {
            return Ok(Matrix::from_fn(n, m, |i, j| u[i] * kernel[(i, j)] * v[j]));
        }
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = p[i] / row_sums[i];
        }
    }
    Err(TransportError::NonConvergence { iterations: max_iter })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_cost_gives_outer_product() {
        let p = [0.25; 4];
        let plan = sinkhorn(&Matrix::zeros(4, 4), &p, &p, 0.3, 100, 1e-12).unwrap();
        for v in plan.as_slice() {
            assert!((v - 1.0 / 16.0).abs() < 1e-15);
        }
    }

    #[test]
    fn lower_cost_attracts_mass() {
        let cost = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        let plan = sinkhorn(&cost, &[0.5, 0.5], &[0.5, 0.5], 1.0, 1000, 1e-12).unwrap();
        assert!((plan[(0, 1)] - plan[(1, 0)]).abs() < 1e-15);
        assert!(plan[(0, 0)] > plan[(0, 1)]);
    }

    #[test]
    fn residuals_after_convergence() {
        use rand::Rng;
        let mut rng = crate::rng::rng_from_seed(3);
        let cost = Matrix::from_fn(3, 3, |_, _| rng.random::<f64>());
        let p = [1.0 / 3.0; 3];
        let plan = sinkhorn(&cost, &p, &p, 0.5, 10_000, 1e-12).unwrap();
        for (r, c) in plan.row_sums().iter().zip(plan.col_sums()) {
            assert!((r - 1.0 / 3.0).abs() <= 1e-8);
            assert!((c - 1.0 / 3.0).abs() <= 1e-8);
        }
    }

    #[test]
    fn tiny_epsilon_underflows() {
        let cost = Matrix::from_rows(&[[1000.0, 2000.0], [3000.0, 1000.0]]);
        assert!(matches!(
            sinkhorn(&cost, &[0.5, 0.5], &[0.5, 0.5], 1e-3, 100, 1e-9),
            Err(TransportError::NumericalUnderflow { .. })
        ));
    }
}
