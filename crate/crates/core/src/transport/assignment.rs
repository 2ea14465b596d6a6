//! Exact linear sum assignment (shortest augmenting paths with potentials)
//! and a lexicographic tie-break over the set of optimal permutations.

use crate::matrix::Matrix;

/// Optimal permutation for a square cost matrix together with dual
/// potentials satisfying `u[i] + v[j] <= cost[i][j]`, tight on the matching.
pub(crate) struct AssignmentSolution {
    pub row_to_col: Vec<usize>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Minimizes `sum_i cost[i][perm[i]]` in O(m^3).
pub(crate) fn solve_min(cost: &Matrix) -> AssignmentSolution {
    let n = cost.rows();
    assert!(cost.is_square());
    // 1-based arrays; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        if col_owner[j] > 0 {
            row_to_col[col_owner[j] - 1] = j - 1;
        }
    }
    AssignmentSolution { row_to_col, u: u[1..].to_vec(), v: v[1..].to_vec() }
}

/// Minimum-cost permutation; among optimal permutations (up to a small
/// relative tolerance) the lexicographically smallest one is returned.
pub(crate) fn lexicographic_min_assignment(cost: &Matrix) -> Vec<usize> {
    let n = cost.rows();
    if n == 0 {
        return Vec::new();
    }
    let sol = solve_min(cost);
    let tol = 1e-12 * (1.0 + cost.max_abs()) * n as f64;
    // Any optimal permutation uses only edges with zero reduced cost under an
    // optimal dual, so the search is over perfect matchings of this graph.
    let tight = |i: usize, j: usize| cost[(i, j)] - sol.u[i] - sol.v[j] <= tol;

    let mut row_to_col = sol.row_to_col;
    let mut col_to_row = vec![0usize; n];
    for (i, &j) in row_to_col.iter().enumerate() {
        col_to_row[j] = i;
    }
    let mut locked = vec![false; n];
    for i in 0..n {
        let current = row_to_col[i];
        for j in 0..current {
            if locked[j] || !tight(i, j) {
                continue;
            }
            // Force i -> j: column `current` becomes free and row `r` (the old
            // owner of j) must reach it along an alternating path.
            let r = col_to_row[j];
            let mut visited = vec![false; n];
            visited[j] = true;
            let mut trial_r2c = row_to_col.clone();
            let mut trial_c2r = col_to_row.clone();
            trial_r2c[i] = j;
            trial_c2r[j] = i;
            if augment(r, current, &tight, &locked, &mut visited, &mut trial_r2c, &mut trial_c2r, i) {
                row_to_col = trial_r2c;
                col_to_row = trial_c2r;
                break;
            }
        }
        locked[row_to_col[i]] = true;
    }
    row_to_col
}

#[allow(clippy::too_many_arguments)]
fn augment(
    row: usize,
    free_col: usize,
    tight: &impl Fn(usize, usize) -> bool,
    locked: &[bool],
    visited: &mut [bool],
    r2c: &mut [usize],
    c2r: &mut [usize],
    pinned_row: usize,
) -> bool {
    let n = r2c.len();
    for c in 0..n {
        if locked[c] || visited[c] || !tight(row, c) {
            continue;
        }
        visited[c] = true;
        if c == free_col {
            r2c[row] = c;
            c2r[c] = row;
            return true;
        }
        let owner = c2r[c];
        if owner == pinned_row {
            continue;
        }
        if augment(owner, free_col, tight, locked, visited, r2c, c2r, pinned_row) {
            r2c[row] = c;
            c2r[c] = row;
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_min(cost: &Matrix) -> f64 {
        let n = cost.rows();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        loop {
            best = best.min((0..n).map(|i| cost[(i, perm[i])]).sum());
            if !next_permutation(&mut perm) {
                break;
            }
        }
        best
    }

    fn next_permutation(p: &mut [usize]) -> bool {
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

    #[test]
    fn matches_brute_force_on_random_costs() {
        use rand::Rng;
        let mut rng = crate::rng::rng_from_seed(17);
        for n in 1..=6 {
            for _ in 0..20 {
                let c = Matrix::from_fn(n, n, |_, _| rng.random_range(-3.0..3.0));
                let perm = lexicographic_min_assignment(&c);
                let total: f64 = (0..n).map(|i| c[(i, perm[i])]).sum();
                assert!((total - brute_force_min(&c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ties_resolve_to_lexicographic_minimum() {
        assert_eq!(lexicographic_min_assignment(&Matrix::zeros(4, 4)), vec![0, 1, 2, 3]);
        // Rows 0 and 1 are interchangeable; row 2 must take column 0.
        let c = Matrix::from_rows(&[[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 5.0, 5.0]]);
        assert_eq!(lexicographic_min_assignment(&c), vec![1, 2, 0]);
    }
}
