//! Gromov-Wasserstein alignment of an item cost matrix with a 2D lattice,
//! and resolution of the resulting plan into a discrete cell layout.

mod assignment;
mod gw;
mod sinkhorn;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::matrix::Matrix;

pub use gw::{
    brute_force_gw, gw_objective, permutation_objective, permutation_plan, solve_gw, solve_gw_with, GwOptions,
    TransportPlan, BRUTE_FORCE_MAX,
};
pub use sinkhorn::{sinkhorn, DEFAULT_SINKHORN_ITER, DEFAULT_SINKHORN_TOL};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{items} items do not fit on a {side}x{side} grid")]
    GridTooSmall { items: usize, side: usize },
    #[error("brute force limited to {max} items, got {m}")]
    TooLarge { m: usize, max: usize },
    #[error("kernel underflow at epsilon = {epsilon}; fall back to exact assignment")]
    NumericalUnderflow { epsilon: f64 },
    #[error("no convergence after {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("invalid transport input: {0}")]
    Invalid(String),
    #[error("{path}: {message}")]
    Layout { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// A `side x side` unit lattice, cells numbered row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTemplate {
    pub side: usize,
    pub coordinates: Vec<(usize, usize)>,
    /// Pairwise squared Euclidean distances between cells.
    pub cost: Matrix,
}

impl GridTemplate {
    pub fn new(side: usize) -> Self {
        let coordinates: Vec<(usize, usize)> =
            (0..side * side).map(|c| (c / side, c % side)).collect();
        let cells = coordinates.len();
        let cost = Matrix::from_fn(cells, cells, |a, b| {
            let (r1, c1) = coordinates[a];
            let (r2, c2) = coordinates[b];
            let dr = r1 as f64 - r2 as f64;
            let dc = c1 as f64 - c2 as f64;
            dr * dr + dc * dc
        });
        Self { side, coordinates, cost }
    }

    pub fn cells(&self) -> usize {
        self.side * self.side
    }
}

/// Extends an `m x m` item cost matrix with `side^2 - m` dummy items at zero
/// distance from everything. Returns the padded matrix and the dummy count.
pub fn pad_to_square(c_item: &Matrix, side: usize) -> Result<(Matrix, usize), TransportError> {
    let m = c_item.rows();
    if !c_item.is_square() {
        return Err(TransportError::DimensionMismatch(format!(
            "item cost must be square, got {}x{}",
            c_item.rows(),
            c_item.cols()
        )));
    }
    let cells = side * side;
    if cells < m {
        return Err(TransportError::GridTooSmall { items: m, side });
    }
    let padded = Matrix::from_fn(cells, cells, |i, j| if i < m && j < m { c_item[(i, j)] } else { 0.0 });
    Ok((padded, cells - m))
}

/// Resolves a plan into the permutation maximizing `sum_i plan[i][perm[i]]`,
/// breaking ties towards the lexicographically smallest permutation.
pub fn resolve_assignment(plan: &Matrix) -> Result<Vec<usize>, TransportError> {
    if !plan.is_square() {
        return Err(TransportError::DimensionMismatch(format!(
            "plan must be square, got {}x{}",
            plan.rows(),
            plan.cols()
        )));
    }
    Ok(assignment::lexicographic_min_assignment(&plan.map(|v| -v)))
}

/// Injective map from real items to lattice cells; cells not hit by a real
/// item belong to dummies and stay empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutPermutation {
    pub item_to_cell: Vec<(usize, usize)>,
    pub n_items: usize,
    pub n_dummy: usize,
    pub grid_side: usize,
}

impl LayoutPermutation {
    /// Builds a layout from an assignment over the padded item set; only the
    /// first `n_items` entries of `perm` are real items.
    pub fn from_assignment(perm: &[usize], n_items: usize, grid_side: usize) -> Result<Self, TransportError> {
        let cells = grid_side * grid_side;
        if perm.len() != cells || n_items > cells {
            return Err(TransportError::DimensionMismatch(format!(
                "assignment of length {} for {n_items} items on a {grid_side}x{grid_side} grid",
                perm.len()
            )));
        }
        let mut used = vec![false; cells];
        for &c in perm {
            if c >= cells || std::mem::replace(&mut used[c], true) {
                return Err(TransportError::Invalid("assignment is not a permutation".into()));
            }
        }
        Ok(Self {
            item_to_cell: perm[..n_items].iter().map(|&c| (c / grid_side, c % grid_side)).collect(),
            n_items,
            n_dummy: cells - n_items,
            grid_side,
        })
    }

    pub fn identity(n_items: usize, grid_side: usize) -> Self {
        let perm: Vec<usize> = (0..grid_side * grid_side).collect();
        Self::from_assignment(&perm, n_items, grid_side).expect("identity layout")
    }

    /// For every row-major cell, the real item placed there (if any).
    pub fn cell_to_item(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.grid_side * self.grid_side];
        for (item, &(r, c)) in self.item_to_cell.iter().enumerate() {
            out[r * self.grid_side + c] = Some(item);
        }
        out
    }

    /// Writes `item_name,row,col`, one line per real item.
    pub fn write_csv(&self, path: &Path, names: &[String]) -> Result<(), TransportError> {
        if names.len() != self.n_items {
            return Err(TransportError::DimensionMismatch(format!(
                "{} names for {} items",
                names.len(),
                self.n_items
            )));
        }
        let mut body = String::from("item_name,row,col\n");
        for (name, &(r, c)) in names.iter().zip(&self.item_to_cell) {
            body.push_str(&format!("{name},{r},{c}\n"));
        }
        fs::write(path, body).map_err(|source| TransportError::Io { path: path.into(), source })
    }

    /// Reads a layout CSV, ordering items by `names`.
    pub fn read_csv(path: &Path, names: &[String], grid_side: usize) -> Result<Self, TransportError> {
        let text = fs::read_to_string(path).map_err(|source| TransportError::Io { path: path.into(), source })?;
        let bad = |message: String| TransportError::Layout { path: path.into(), message };
        let mut cells: HashMap<&str, (usize, usize)> = HashMap::new();
        for (idx, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.rsplitn(3, ',').collect();
            if parts.len() != 3 {
                return Err(bad(format!("line {}: expected item_name,row,col", idx + 1)));
            }
            let parse = |s: &str| s.trim().parse::<usize>().map_err(|_| bad(format!("line {}: bad index {s:?}", idx + 1)));
            let (r, c) = (parse(parts[1])?, parse(parts[0])?);
            if r >= grid_side || c >= grid_side {
                return Err(bad(format!("line {}: cell ({r},{c}) outside {grid_side}x{grid_side} grid", idx + 1)));
            }
            cells.insert(parts[2], (r, c));
        }
        let mut item_to_cell = Vec::with_capacity(names.len());
        let mut used = vec![false; grid_side * grid_side];
        for name in names {
            let &(r, c) = cells.get(name.as_str()).ok_or_else(|| bad(format!("item {name:?} missing")))?;
            if std::mem::replace(&mut used[r * grid_side + c], true) {
                return Err(bad(format!("cell ({r},{c}) used twice")));
            }
            item_to_cell.push((r, c));
        }
        Ok(Self { item_to_cell, n_items: names.len(), n_dummy: grid_side * grid_side - names.len(), grid_side })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_cost_is_squared_distance() {
        let g = GridTemplate::new(3);
        assert_eq!(g.cost[(0, 8)], 8.0);
        assert_eq!(g.cost[(1, 3)], 2.0);
        assert!(g.cost.is_symmetric(0.0));
        assert!((0..9).all(|i| g.cost[(i, i)] == 0.0));
    }

    #[test]
    fn pad_examples() {
        let c = Matrix::from_rows(&[[0.0, 1.0, 2.0], [1.0, 0.0, 3.0], [2.0, 3.0, 0.0]]);
        let (p, dummy) = pad_to_square(&c, 2).unwrap();
        assert_eq!(dummy, 1);
        assert_eq!(p.rows(), 4);
        assert_eq!(p[(1, 2)], 3.0);
        assert!((0..4).all(|i| p[(3, i)] == 0.0 && p[(i, 3)] == 0.0));
        let c4 = Matrix::identity(4);
        assert_eq!(pad_to_square(&c4, 2).unwrap(), (c4.clone(), 0));
        assert!(matches!(pad_to_square(&c4, 1), Err(TransportError::GridTooSmall { .. })));
    }

    #[test]
    fn resolve_examples() {
        let id = Matrix::identity(5).map(|v| v / 5.0);
        assert_eq!(resolve_assignment(&id).unwrap(), vec![0, 1, 2, 3, 4]);
        let swap = Matrix::from_rows(&[[0.1, 0.4], [0.4, 0.1]]);
        assert_eq!(resolve_assignment(&swap).unwrap(), vec![1, 0]);
    }

    #[test]
    fn layout_csv_round_trip() {
        let layout = LayoutPermutation::from_assignment(&[3, 0, 2, 1], 3, 2).unwrap();
        assert_eq!(layout.item_to_cell, vec![(1, 1), (0, 0), (1, 0)]);
        assert_eq!(layout.cell_to_item(), vec![Some(1), None, Some(2), Some(0)]);
        let names: Vec<String> = ["a,b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("layout.csv");
        layout.write_csv(&path, &names).unwrap();
        assert_eq!(LayoutPermutation::read_csv(&path, &names, 2).unwrap(), layout);
    }
}
