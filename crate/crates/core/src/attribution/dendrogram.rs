use std::fmt::Write as _;

use super::AttributionError;
use crate::matrix::Matrix;

/// One agglomeration step. Leaves are `0..n`; the cluster formed by merge
/// `i` gets id `n + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub merges: Vec<Merge>,
    pub labels: Vec<String>,
}

/// Unweighted average linkage on Euclidean distances between rows. Among
/// equally close pairs the one with the lowest (left, right) slot wins.
pub fn cluster_profiles(profiles: &Matrix, labels: &[String]) -> Result<Dendrogram, AttributionError> {
    let n = profiles.rows();
    if n < 2 {
        return Err(AttributionError::Invalid(format!("need at least 2 items to cluster, got {n}")));
    }
    if labels.len() != n {
        return Err(AttributionError::Invalid(format!("{} labels for {n} items", labels.len())));
    }
    let mut dist = Matrix::from_fn(n, n, |i, j| {
        profiles.row(i).iter().zip(profiles.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    });
    // Slot i holds cluster `id[i]` of `size[i]` items while `active[i]`.
    let mut id: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut best: Option<(usize, usize)> = None;
        for i in (0..n).filter(|&i| active[i]) {
            for j in (i + 1..n).filter(|&j| active[j]) {
                if best.is_none_or(|(bi, bj)| dist[(i, j)] < dist[(bi, bj)]) {
                    best = Some((i, j));
                }
            }
        }
        let (i, j) = best.expect("two active clusters remain");
        let (si, sj) = (size[i] as f64, size[j] as f64);
        for k in (0..n).filter(|&k| active[k] && k != i && k != j) {
            let d = (si * dist[(i, k)] + sj * dist[(j, k)]) / (si + sj);
            dist[(i, k)] = d;
            dist[(k, i)] = d;
        }
        merges.push(Merge { left: id[i], right: id[j], height: dist[(i, j)], size: size[i] + size[j] });
        active[j] = false;
        size[i] += size[j];
        id[i] = n + step;
    }
    Ok(Dendrogram { merges, labels: labels.to_vec() })
}

impl Dendrogram {
    /// Newick text with branch lengths equal to height differences.
    pub fn to_newick(&self) -> String {
        let n = self.labels.len();
        let mut out = String::new();
        if n == 1 {
            out.push_str(&escape(&self.labels[0]));
        } else if n > 1 {
            self.write_node(2 * n - 2, &mut out);
        }
        out.push_str(";\n");
        out
    }

    fn height(&self, node: usize) -> f64 {
        let n = self.labels.len();
        if node < n {
            0.0
        } else {
            self.merges[node - n].height
        }
    }

    fn write_node(&self, node: usize, out: &mut String) {
        let n = self.labels.len();
        if node < n {
            out.push_str(&escape(&self.labels[node]));
            return;
        }
        let m = &self.merges[node - n];
        out.push('(');
        for (k, child) in [m.left, m.right].into_iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            self.write_node(child, out);
            let _ = write!(out, ":{}", m.height - self.height(child));
        }
        out.push(')');
    }
}

fn escape(label: &str) -> String {
    label.chars().map(|c| if "(),:;[] \t\n'".contains(c) { '_' } else { c }).collect()
}
