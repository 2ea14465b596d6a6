//! Square-loss Gromov-Wasserstein with uniform marginals, solved by
//! conditional gradient (Frank-Wolfe) on the quartic objective.
//!
//! For a plan `T` with marginals `p = T1`, `q = T'1`, the objective is
//!
//! ```text
//! f(T) = sum_{i,j,k,l} (A[i][k] - B[j][l])^2 T[i][j] T[k][l]
//!      = <T, L(T)>,   L(T) = a2 p 1' + 1 q' b2' - 2 A T B'
//! ```
//!
//! where `a2`/`b2` hold the squared entries of `A`/`B`. Each iteration
//! linearizes `f` at the current plan, solves the linear problem over the
//! transport polytope (an exact assignment when `epsilon = 0`, Sinkhorn
//! otherwise) and moves towards it with an exact line search, which is
//! closed-form because `f` is quadratic along any segment.

use rand::seq::SliceRandom;
use rand::Rng;

use super::assignment::solve_min;
use super::sinkhorn::{sinkhorn, DEFAULT_SINKHORN_ITER, DEFAULT_SINKHORN_TOL};
use super::{resolve_assignment, TransportError};
use crate::matrix::Matrix;
use crate::rng::rng_from_seed;

pub const BRUTE_FORCE_MAX: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct GwOptions {
    /// Entropic regularization of the inner linear problem; 0 selects exact assignment.
    pub epsilon: f64,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop once an accepted step improves the objective by less than this fraction.
    pub rel_tol: f64,
}

impl Default for GwOptions {
    fn default() -> Self {
        Self { epsilon: 0.0, seed: 0, restarts: 20, max_iter: 1000, rel_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub matrix: Matrix,
    pub row_marginal: Vec<f64>,
    pub col_marginal: Vec<f64>,
    pub objective: f64,
    /// Objective after every accepted line-search step of the winning restart.
    pub objective_history: Vec<f64>,
    /// False when the winning restart hit the iteration cap.
    pub converged: bool,
}

impl TransportPlan {
    /// Shannon entropy `-sum T log T` of the plan.
    pub fn entropy(&self) -> f64 {
        self.matrix.as_slice().iter().filter(|&&t| t > 0.0).map(|&t| -t * t.ln()).sum()
    }
}

fn check_dims(c_item: &Matrix, c_grid: &Matrix) -> Result<usize, TransportError> {
    let m = c_item.rows();
    if !c_item.is_square() || !c_grid.is_square() || c_grid.rows() != m {
        return Err(TransportError::DimensionMismatch(format!(
            "item cost {}x{}, grid cost {}x{}",
            c_item.rows(),
            c_item.cols(),
            c_grid.rows(),
            c_grid.cols()
        )));
    }
    Ok(m)
}

/// `L(T) = a2 p 1' + 1 q' b2' - 2 A T B'` for an arbitrary matrix `T`.
fn linearized(a: &Matrix, b: &Matrix, t: &Matrix) -> Matrix {
    let m = a.rows();
    let p = t.row_sums();
    let q = t.col_sums();
    let row_term: Vec<f64> = (0..m).map(|i| (0..m).map(|k| a[(i, k)] * a[(i, k)] * p[k]).sum()).collect();
    let col_term: Vec<f64> = (0..m).map(|j| (0..m).map(|l| b[(j, l)] * b[(j, l)] * q[l]).sum()).collect();
    let cross = a.matmul(t).matmul(&b.transpose());
    Matrix::from_fn(m, m, |i, j| row_term[i] + col_term[j] - 2.0 * cross[(i, j)])
}

/// Quadratic form `sum (A[i][k] - B[j][l])^2 T[i][j] T[k][l]` for any matrix `T`.
fn quadratic(a: &Matrix, b: &Matrix, t: &Matrix) -> f64 {
    t.dot(&linearized(a, b, t))
}

/// Gradient of the quadratic form at `T`.
fn gradient(a: &Matrix, b: &Matrix, t: &Matrix) -> Matrix {
    let forward = linearized(a, b, t);
    if a.is_symmetric(0.0) && b.is_symmetric(0.0) {
        return forward.map(|v| 2.0 * v);
    }
    let backward = linearized(&a.transpose(), &b.transpose(), t);
    Matrix::from_fn(t.rows(), t.cols(), |i, j| forward[(i, j)] + backward[(i, j)])
}

/// Gromov-Wasserstein objective of a plan.
pub fn gw_objective(c_item: &Matrix, c_grid: &Matrix, plan: &Matrix) -> Result<f64, TransportError> {
    let m = check_dims(c_item, c_grid)?;
    if plan.rows() != m || plan.cols() != m {
        return Err(TransportError::DimensionMismatch(format!(
            "plan is {}x{}, costs are {m}x{m}",
            plan.rows(),
            plan.cols()
        )));
    }
    // Exact value is non-negative for non-negative plans; the decomposition
    // can cancel to a tiny negative number.
    let value = quadratic(c_item, c_grid, plan);
    Ok(if plan.as_slice().iter().all(|&t| t >= 0.0) { value.max(0.0) } else { value })
}

/// Objective of the plan `P_perm / m` that sends item `i` to cell `perm[i]`.
pub fn permutation_objective(c_item: &Matrix, c_grid: &Matrix, perm: &[usize]) -> f64 {
    let m = perm.len();
    let mut total = 0.0;
    for i in 0..m {
        for k in 0..m {
            let d = c_item[(i, k)] - c_grid[(perm[i], perm[k])];
            total += d * d;
        }
    }
    total / (m * m) as f64
}

/// Change in `m^2 * permutation_objective` from swapping the cells of items `i` and `j`.
fn swap_delta(a: &Matrix, b: &Matrix, perm: &mut [usize], i: usize, j: usize) -> f64 {
    let touched = |perm: &[usize]| {
        let term = |x: usize, y: usize| {
            let d = a[(x, y)] - b[(perm[x], perm[y])];
            d * d
        };
        let mut s = 0.0;
        for k in 0..perm.len() {
            s += term(i, k) + term(k, i) + term(j, k) + term(k, j);
        }
        s - term(i, i) - term(j, j) - term(i, j) - term(j, i)
    };
    let before = touched(perm);
    perm.swap(i, j);
    let after = touched(perm);
    perm.swap(i, j);
    after - before
}

/// Pairwise-swap descent on a permutation until no swap strictly improves.
fn polish_by_swaps(a: &Matrix, b: &Matrix, perm: &mut [usize]) {
    let m = perm.len();
    let scale = 1e-12 * (1.0 + a.max_abs() + b.max_abs()).powi(2);
    for _ in 0..(100 * m.max(1)) {
        let mut improved = false;
        for i in 0..m {
            for j in i + 1..m {
                if swap_delta(a, b, perm, i, j) < -scale {
                    perm.swap(i, j);
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
}

pub fn permutation_plan(perm: &[usize]) -> Matrix {
    let m = perm.len();
    let mut t = Matrix::zeros(m, m);
    for (i, &j) in perm.iter().enumerate() {
        t[(i, j)] = 1.0 / m as f64;
    }
    t
}

fn initial_plan(m: usize, restart: usize, rng: &mut impl Rng) -> Matrix {
    let uniform = 1.0 / (m * m) as f64;
    if restart == 0 {
        return Matrix::filled(m, m, uniform);
    }
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(rng);
    let weight: f64 = rng.random_range(0.25..1.0);
    let mut t = Matrix::filled(m, m, (1.0 - weight) * uniform);
    for (i, &j) in perm.iter().enumerate() {
        t[(i, j)] += weight / m as f64;
    }
    t
}

/// Linear minimization oracle over the transport polytope with uniform marginals.
fn direction(grad: &Matrix, epsilon: f64, marginal: &[f64]) -> Matrix {
    if epsilon > 0.0 {
        // Row and column shifts of the cost leave the entropic plan unchanged.
        // The shifted cost is then scaled to [0, 1], so epsilon acts as a
        // temperature relative to the spread of the linearized cost.
        let m = grad.rows();
        let mut shifted = grad.clone();
        for i in 0..m {
            let lo = shifted.row(i).iter().copied().fold(f64::INFINITY, f64::min);
            shifted.row_mut(i).iter_mut().for_each(|v| *v -= lo);
        }
        for j in 0..m {
            let lo = (0..m).map(|i| shifted[(i, j)]).fold(f64::INFINITY, f64::min);
            (0..m).for_each(|i| shifted[(i, j)] -= lo);
        }
        let spread = shifted.max_abs();
        if spread > 0.0 {
            shifted = shifted.map(|v| v / spread);
        }
        match sinkhorn(&shifted, marginal, marginal, epsilon, DEFAULT_SINKHORN_ITER, DEFAULT_SINKHORN_TOL) {
            Ok(plan) => return plan,
            Err(e) => log::warn!("sinkhorn failed inside GW step ({e}); using exact assignment"),
        }
    }
    permutation_plan(&solve_min(grad).row_to_col)
}

struct RestartResult {
    plan: Matrix,
    objective: f64,
    history: Vec<f64>,
    converged: bool,
}

fn frank_wolfe(a: &Matrix, b: &Matrix, mut t: Matrix, opts: &GwOptions) -> RestartResult {
    let m = a.rows();
    let marginal = vec![1.0 / m as f64; m];
    let mut objective = quadratic(a, b, &t);
    let mut history = vec![objective];
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let grad = gradient(a, b, &t);
        let target = direction(&grad, opts.epsilon, &marginal);
        let step = Matrix::from_fn(m, m, |i, j| target[(i, j)] - t[(i, j)]);
        let slope = grad.dot(&step);
        let curvature = quadratic(a, b, &step);
        if !(slope < 0.0) {
            converged = true;
            break;
        }
        let alpha = if curvature > 0.0 {
            (-slope / (2.0 * curvature)).clamp(0.0, 1.0)
        } else {
            1.0
        };
        let candidate = Matrix::from_fn(m, m, |i, j| t[(i, j)] + alpha * step[(i, j)]);
        let next = quadratic(a, b, &candidate);
        if !(next < objective) {
            converged = true;
            break;
        }
        let improvement = objective - next;
        t = candidate;
        objective = next;
        history.push(objective);
        if improvement <= opts.rel_tol * objective.abs() || objective == 0.0 {
            converged = true;
            break;
        }
    }
    RestartResult { plan: t, objective, history, converged }
}

/// [`solve_gw_with`] using the default iteration cap and tolerance.
pub fn solve_gw(
    c_item: &Matrix,
    c_grid: &Matrix,
    epsilon: f64,
    seed: u64,
    restarts: usize,
) -> Result<TransportPlan, TransportError> {
    solve_gw_with(c_item, c_grid, &GwOptions { epsilon, seed, restarts, ..GwOptions::default() })
}

/// Multi-start Frank-Wolfe for the GW problem with uniform marginals.
///
/// Restart 0 starts from the uniform plan, the others from the uniform plan
/// mixed with a random permutation. With `epsilon = 0` every restart's final
/// iterate is rounded to a permutation and refined by pairwise swaps, so the
/// returned plan is a scaled permutation matrix. The lowest objective wins;
/// ties go to the earliest restart.
pub fn solve_gw_with(c_item: &Matrix, c_grid: &Matrix, opts: &GwOptions) -> Result<TransportPlan, TransportError> {
    let m = check_dims(c_item, c_grid)?;
    if !(opts.epsilon >= 0.0) || !opts.epsilon.is_finite() {
        return Err(TransportError::Invalid(format!("epsilon must be >= 0, got {}", opts.epsilon)));
    }
    let marginal = vec![1.0 / m.max(1) as f64; m];
    if m == 0 {
        return Ok(TransportPlan {
            matrix: Matrix::zeros(0, 0),
            row_marginal: vec![],
            col_marginal: vec![],
            objective: 0.0,
            objective_history: vec![0.0],
            converged: true,
        });
    }
    let mut rng = rng_from_seed(opts.seed);
    let mut best: Option<RestartResult> = None;
    for restart in 0..opts.restarts.max(1) {
        let start = initial_plan(m, restart, &mut rng);
        let mut result = frank_wolfe(c_item, c_grid, start, opts);
        if opts.epsilon == 0.0 {
            let mut perm = resolve_assignment(&result.plan)?;
            polish_by_swaps(c_item, c_grid, &mut perm);
            result.plan = permutation_plan(&perm);
            result.objective = permutation_objective(c_item, c_grid, &perm);
        }
        if best.as_ref().is_none_or(|b| result.objective < b.objective) {
            best = Some(result);
        }
    }
    let best = best.expect("at least one restart");
    if !best.converged {
        log::warn!("GW solver hit the iteration cap ({}) without reaching stationarity", opts.max_iter);
    }
    Ok(TransportPlan {
        matrix: best.plan,
        row_marginal: marginal.clone(),
        col_marginal: marginal,
        objective: best.objective,
        objective_history: best.history,
        converged: best.converged,
    })
}

/// Exhaustive search over all `m!` permutation plans (`m <= 8`). Returns the
/// lexicographically first minimizer and its objective.
pub fn brute_force_gw(c_item: &Matrix, c_grid: &Matrix) -> Result<(Vec<usize>, f64), TransportError> {
    let m = check_dims(c_item, c_grid)?;
    if m > BRUTE_FORCE_MAX {
        return Err(TransportError::TooLarge { m, max: BRUTE_FORCE_MAX });
    }
    let mut perm: Vec<usize> = (0..m).collect();
    let mut best = (perm.clone(), if m == 0 { 0.0 } else { permutation_objective(c_item, c_grid, &perm) });
    while next_permutation(&mut perm) {
        let value = permutation_objective(c_item, c_grid, &perm);
        if value < best.1 {
            best = (perm.clone(), value);
        }
    }
    Ok(best)
}

pub(crate) fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::GridTemplate;

    /// Direct four-index evaluation of the objective.
    fn objective_by_definition(a: &Matrix, b: &Matrix, t: &Matrix) -> f64 {
        let m = a.rows();
        let mut total = 0.0;
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    for l in 0..m {
                        let d = a[(i, k)] - b[(j, l)];
                        total += d * d * t[(i, j)] * t[(k, l)];
                    }
                }
            }
        }
        total
    }

    fn random_symmetric(m: usize, rng: &mut impl Rng) -> Matrix {
        let mut c = Matrix::zeros(m, m);
        for i in 0..m {
            for j in i + 1..m {
                let v = rng.random_range(0.0..5.0);
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        c
    }

    #[test]
    fn hand_expanded_two_by_two() {
        let a = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        let b = Matrix::from_rows(&[[0.0, 4.0], [4.0, 0.0]]);
        let t = Matrix::identity(2).map(|v| v / 2.0);
        assert_eq!(gw_objective(&a, &b, &t).unwrap(), 4.5);
        assert_eq!(objective_by_definition(&a, &b, &t), 4.5);
    }

    #[test]
    fn decomposition_matches_definition() {
        let mut rng = rng_from_seed(5);
        for m in 1..=5 {
            let a = random_symmetric(m, &mut rng);
            let b = Matrix::from_fn(m, m, |_, _| rng.random_range(0.0..3.0));
            let t = Matrix::from_fn(m, m, |_, _| rng.random::<f64>());
            let fast = gw_objective(&a, &b, &t).unwrap();
            let slow = objective_by_definition(&a, &b, &t);
            assert!((fast - slow).abs() <= 1e-10 * (1.0 + slow.abs()));
            // Swapping the two spaces and transposing the plan is a symmetry.
            let swapped = gw_objective(&b, &a, &t.transpose()).unwrap();
            assert!((fast - swapped).abs() <= 1e-10 * (1.0 + slow.abs()));
        }
    }

    #[test]
    fn identical_costs_have_zero_objective() {
        let grid = GridTemplate::new(3);
        let t = Matrix::identity(9).map(|v| v / 9.0);
        assert_eq!(gw_objective(&grid.cost, &grid.cost, &t).unwrap(), 0.0);
        assert!(objective_by_definition(&grid.cost, &grid.cost, &t).abs() <= 1e-12);
        let plan = solve_gw(&grid.cost, &grid.cost, 0.0, 1, 4).unwrap();
        assert!(plan.objective <= 1e-12);
        let (_, brute) = brute_force_gw(&GridTemplate::new(2).cost, &GridTemplate::new(2).cost).unwrap();
        assert_eq!(brute, 0.0);
    }

    #[test]
    fn brute_force_line_order() {
        let a = Matrix::from_rows(&[[0.0, 1.0, 4.0], [1.0, 0.0, 1.0], [4.0, 1.0, 0.0]]);
        let line = Matrix::from_fn(3, 3, |i, j| (i as f64 - j as f64).powi(2));
        let (perm, value) = brute_force_gw(&a, &line).unwrap();
        assert_eq!(value, 0.0);
        assert!(perm == vec![0, 1, 2] || perm == vec![2, 1, 0]);
        assert_eq!(brute_force_gw(&Matrix::zeros(1, 1), &Matrix::zeros(1, 1)).unwrap(), (vec![0], 0.0));
        assert!(matches!(
            brute_force_gw(&Matrix::zeros(9, 9), &Matrix::zeros(9, 9)),
            Err(TransportError::TooLarge { m: 9, .. })
        ));
    }

    #[test]
    fn solver_matches_brute_force_small() {
        let mut rng = rng_from_seed(99);
        for m in 2..=5 {
            for _ in 0..5 {
                let a = random_symmetric(m, &mut rng);
                let b = random_symmetric(m, &mut rng);
                let plan = solve_gw(&a, &b, 0.0, 3, 20).unwrap();
                let (_, brute) = brute_force_gw(&a, &b).unwrap();
                assert!((plan.objective - brute).abs() <= 1e-9, "m={m}: {} vs {brute}", plan.objective);
            }
        }
    }

    #[test]
    fn history_is_monotone_and_marginals_hold() {
        let mut rng = rng_from_seed(4);
        let a = random_symmetric(9, &mut rng);
        let grid = GridTemplate::new(3);
        for eps in [0.0, 0.5] {
            let plan = solve_gw(&a, &grid.cost, eps, 2, 3).unwrap();
            for w in plan.objective_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
            for (r, c) in plan.matrix.row_sums().iter().zip(plan.matrix.col_sums()) {
                assert!((r - 1.0 / 9.0).abs() <= 1e-6 && (c - 1.0 / 9.0).abs() <= 1e-6);
            }
            assert!(plan.matrix.as_slice().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn entropic_plan_is_smoother_than_exact() {
        let mut rng = rng_from_seed(8);
        let a = random_symmetric(4, &mut rng);
        let grid = GridTemplate::new(2);
        let exact = solve_gw(&a, &grid.cost, 0.0, 0, 20).unwrap();
        let smooth = solve_gw(&a, &grid.cost, 0.1, 0, 20).unwrap();
        for (r, c) in smooth.matrix.row_sums().iter().zip(smooth.matrix.col_sums()) {
            assert!((r - 0.25).abs() <= 1e-6 && (c - 0.25).abs() <= 1e-6);
        }
        assert!(smooth.entropy() > exact.entropy());
    }
}
