use crate::community::{community_count, AssociationMatrix};
use crate::matrix::Matrix;
use crate::transport::{pad_to_square, resolve_assignment, solve_gw_with, GridTemplate, GwOptions, LayoutPermutation};

use super::ImagingError;

/// Pearson correlation between feature columns. Pairs involving a constant
/// column are 0; the diagonal is always 1.
pub fn feature_association(features: &Matrix) -> Matrix {
    let (n, k) = (features.rows(), features.cols());
    let mut centered = Matrix::zeros(k, n);
    let mut norms = vec![0.0; k];
    for j in 0..k {
        let mean = (0..n).map(|i| features[(i, j)]).sum::<f64>() / n.max(1) as f64;
        let row = centered.row_mut(j);
        for i in 0..n {
            row[i] = features[(i, j)] - mean;
        }
        norms[j] = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    let mut assoc = Matrix::identity(k);
    for j in 0..k {
        for l in j + 1..k {
            let r = if norms[j] > 0.0 && norms[l] > 0.0 {
                let dot: f64 = centered.row(j).iter().zip(centered.row(l)).map(|(a, b)| a * b).sum();
                (dot / (norms[j] * norms[l])).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            assoc[(j, l)] = r;
            assoc[(l, j)] = r;
        }
    }
    assoc
}

/// Correlation distance `1 - r` used as the feature-space cost for the GW layout.
pub fn feature_distance(assoc: &Matrix) -> Matrix {
    assoc.map(|r| 1.0 - r)
}

/// Placement of one modality's features on its square grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLayout {
    pub modality: String,
    pub feature_names: Vec<String>,
    pub assoc: Matrix,
    pub layout: LayoutPermutation,
    pub grid_side: usize,
}

/// Lays the `k` feature columns out on a `side x side` grid (default
/// `ceil(sqrt(k))`) by GW alignment of their correlation distances with the
/// lattice geometry.
pub fn build_feature_layout(
    features: &Matrix,
    feature_names: &[String],
    modality: &str,
    side: Option<usize>,
    options: &GwOptions,
) -> Result<FeatureLayout, ImagingError> {
    let k = features.cols();
    if k == 0 {
        return Err(ImagingError::LayoutMismatch("modality has no features".into()));
    }
    if feature_names.len() != k {
        return Err(ImagingError::LayoutMismatch(format!("{} names for {k} features", feature_names.len())));
    }
    let grid_side = side.unwrap_or_else(|| community_count(k));
    let assoc = feature_association(features);
    let layout = solve_layout(&feature_distance(&assoc), grid_side, options)?;
    Ok(FeatureLayout {
        modality: modality.to_string(),
        feature_names: feature_names.to_vec(),
        assoc,
        layout,
        grid_side,
    })
}

/// The master community-to-cell map shared by every node's structural channel.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralLayout {
    pub layout: LayoutPermutation,
    pub grid_side: usize,
    pub association: AssociationMatrix,
}

/// Places the `P` communities on a `ceil(sqrt(P)) x ceil(sqrt(P))` grid by GW
/// alignment of the z-scored centroid distances with the lattice.
pub fn build_structural_layout(
    association: &AssociationMatrix,
    options: &GwOptions,
) -> Result<StructuralLayout, ImagingError> {
    let p = association.p();
    if p == 0 {
        return Err(ImagingError::LayoutMismatch("no communities".into()));
    }
    let grid_side = community_count(p);
    let layout = solve_layout(&association.values, grid_side, options)?;
    Ok(StructuralLayout { layout, grid_side, association: association.clone() })
}

fn solve_layout(c_item: &Matrix, grid_side: usize, options: &GwOptions) -> Result<LayoutPermutation, ImagingError> {
    let items = c_item.rows();
    let (padded, _) = pad_to_square(c_item, grid_side)?;
    let grid = GridTemplate::new(grid_side);
    let plan = solve_gw_with(&padded, &grid.cost, options)?;
    let perm = resolve_assignment(&plan.matrix)?;
    Ok(LayoutPermutation::from_assignment(&perm, items, grid_side)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::community::association_matrix;
    use crate::transport::{brute_force_gw, permutation_objective};

    fn opts(seed: u64) -> GwOptions {
        GwOptions { seed, ..GwOptions::default() }
    }

    #[test]
    fn pearson_examples() {
        let f = Matrix::from_rows(&[[1.0, 2.0, -1.0, 5.0], [2.0, 4.0, -2.0, 5.0], [3.0, 6.0, -3.0, 5.0]]);
        let c = feature_association(&f);
        assert!((c[(0, 1)] - 1.0).abs() < 1e-15);
        assert!((c[(0, 2)] + 1.0).abs() < 1e-15);
        assert_eq!(c[(0, 3)], 0.0);
        assert_eq!(c[(3, 3)], 1.0);
        assert_eq!(c[(1, 1)], 1.0);
        assert!(c.is_symmetric(0.0));
    }

    #[test]
    fn correlated_pairs_land_adjacent() {
        // Columns 0/2 and 1/3 are perfectly correlated, the pairs independent.
        let f = Matrix::from_rows(&[
            [1.0, 1.0, 2.0, 3.0],
            [-1.0, 1.0, -2.0, 3.0],
            [1.0, -1.0, 2.0, -3.0],
            [-1.0, -1.0, -2.0, -3.0],
        ]);
        let names: Vec<String> = (0..4).map(|j| format!("g{j}")).collect();
        let fl = build_feature_layout(&f, &names, "expr", None, &opts(1)).unwrap();
        assert_eq!(fl.grid_side, 2);
        let cells = &fl.layout.item_to_cell;
        let adjacent = |a: (usize, usize), b: (usize, usize)| a.0.abs_diff(b.0) + a.1.abs_diff(b.1) == 1;
        assert!(adjacent(cells[0], cells[2]));
        assert!(adjacent(cells[1], cells[3]));
        // Agrees with exhaustive search over all 24 layouts.
        let dist = feature_distance(&fl.assoc);
        let grid = GridTemplate::new(2);
        let (_, best) = brute_force_gw(&dist, &grid.cost).unwrap();
        let perm: Vec<usize> = cells.iter().map(|&(r, c)| r * 2 + c).collect();
        assert!((permutation_objective(&dist, &grid.cost, &perm) - best).abs() < 1e-12);
    }

    #[test]
    fn small_feature_counts() {
        let names = vec!["only".to_string()];
        let fl = build_feature_layout(&Matrix::from_rows(&[[1.0], [2.0]]), &names, "m", None, &opts(0)).unwrap();
        assert_eq!((fl.grid_side, fl.layout.item_to_cell.clone()), (1, vec![(0, 0)]));

        let f = Matrix::from_rows(&[[1.0, 0.0, 2.0], [0.0, 1.0, 5.0], [3.0, 3.0, 1.0]]);
        let names: Vec<String> = (0..3).map(|j| j.to_string()).collect();
        let fl = build_feature_layout(&f, &names, "m", None, &opts(0)).unwrap();
        assert_eq!((fl.grid_side, fl.layout.n_dummy), (2, 1));
        assert_eq!(fl.layout.cell_to_item().iter().filter(|c| c.is_none()).count(), 1);
    }

    #[test]
    fn structural_layout_single_and_line() {
        let a = association_matrix(&Matrix::from_rows(&[[1.0, 2.0]]));
        let s = build_structural_layout(&a, &opts(0)).unwrap();
        assert_eq!((s.grid_side, s.layout.item_to_cell.clone()), (1, vec![(0, 0)]));

        // Four centroids on a line.
        let centroids = Matrix::from_rows(&[[0.0], [1.0], [2.0], [3.0]]);
        let a = association_matrix(&centroids);
        let s = build_structural_layout(&a, &opts(3)).unwrap();
        let perm: Vec<usize> = s.layout.item_to_cell.iter().map(|&(r, c)| r * 2 + c).collect();
        let grid = GridTemplate::new(2);
        let (_, best) = brute_force_gw(&a.values, &grid.cost).unwrap();
        assert!((permutation_objective(&a.values, &grid.cost, &perm) - best).abs() < 1e-12);
        assert_eq!(build_structural_layout(&a, &opts(3)).unwrap(), s);
    }
}
