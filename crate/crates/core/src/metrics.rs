//! Partition-agreement scores (ARI, NMI, homogeneity, completeness,
//! V-measure) and the silhouette coefficient. Entropies use natural logs
//! with `0 ln 0 = 0`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::community::{kmeans_restarts, CommunityError, DEFAULT_MAX_ITER};
use crate::matrix::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{0} labels against {1}")]
    LengthMismatch(usize, usize),
    #[error("no items to score")]
    Empty,
    #[error("silhouette needs at least two clusters")]
    SingleCluster,
    #[error(transparent)]
    Community(#[from] CommunityError),
}

/// Counts `n_ij` of items in true class `i` and predicted cluster `j`.
/// Labels are compacted in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub total: u64,
}

fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut ids = BTreeMap::new();
    for &l in labels {
        let next = ids.len();
        ids.entry(l).or_insert(next);
    }
    // Re-number in ascending label order.
    for (rank, v) in ids.values_mut().enumerate() {
        *v = rank;
    }
    (labels.iter().map(|l| ids[l]).collect(), ids.len())
}

impl ContingencyTable {
    pub fn new(truth: &[usize], predicted: &[usize]) -> Result<Self, MetricsError> {
        if truth.len() != predicted.len() {
            return Err(MetricsError::LengthMismatch(truth.len(), predicted.len()));
        }
        if truth.is_empty() {
            return Err(MetricsError::Empty);
        }
        let (u, r) = compact(truth);
        let (v, c) = compact(predicted);
        let mut counts = vec![vec![0u64; c]; r];
        for (&i, &j) in u.iter().zip(&v) {
            counts[i][j] += 1;
        }
        Ok(Self::from_counts(counts))
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Self {
        let cols = counts.first().map_or(0, Vec::len);
        let row_sums: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums: Vec<u64> = (0..cols).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        let total = row_sums.iter().sum();
        Self { counts, row_sums, col_sums, total }
    }

    pub fn transpose(&self) -> Self {
        let cols = self.col_sums.len();
        Self::from_counts((0..cols).map(|j| self.counts.iter().map(|r| r[j]).collect()).collect())
    }

    /// Every non-empty row and column holds exactly one non-zero cell.
    fn is_matching(&self) -> bool {
        let rows_ok = self.counts.iter().all(|r| r.iter().filter(|&&v| v > 0).count() <= 1);
        let cols_ok = (0..self.col_sums.len()).all(|j| self.counts.iter().filter(|r| r[j] > 0).count() <= 1);
        rows_ok && cols_ok
    }
}

fn pairs(n: u64) -> u128 {
    let n = u128::from(n);
    n * n.saturating_sub(1) / 2
}

/// Adjusted Rand index. Pair counts are exact integers, so the score is
/// symmetric bit for bit. When the expected index equals its maximum the
/// score is 1 for identical partitions and 0 otherwise.
pub fn ari(table: &ContingencyTable) -> f64 {
    let index: u128 = table.counts.iter().flatten().map(|&v| pairs(v)).sum();
    let sum_a: u128 = table.row_sums.iter().map(|&v| pairs(v)).sum();
    let sum_b: u128 = table.col_sums.iter().map(|&v| pairs(v)).sum();
    let total = pairs(table.total);
    let identical = table.is_matching();
    if total == 0 {
        return if identical { 1.0 } else { 0.0 };
    }
    let expected = (sum_a as f64) * (sum_b as f64) / total as f64;
    let max = (sum_a + sum_b) as f64 / 2.0;
    if max == expected {
        return if identical { 1.0 } else { 0.0 };
    }
    (index as f64 - expected) / (max - expected)
}

fn entropy(sums: &[u64], total: u64) -> f64 {
    let n = total as f64;
    -sums.iter().filter(|&&v| v > 0).map(|&v| (v as f64 / n) * (v as f64 / n).ln()).sum::<f64>()
}

fn mutual_information(table: &ContingencyTable) -> f64 {
    let n = table.total as f64;
    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v > 0 {
                let v = v as f64;
                mi += v / n * (n * v / (table.row_sums[i] as f64 * table.col_sums[j] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Arithmetic-mean normalized mutual information.
pub fn nmi(table: &ContingencyTable) -> f64 {
    let hu = entropy(&table.row_sums, table.total);
    let hv = entropy(&table.col_sums, table.total);
    match (hu == 0.0, hv == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (2.0 * mutual_information(table) / (hu + hv)).clamp(0.0, 1.0),
    }
}

/// `H(rows | cols)`.
fn conditional_entropy(table: &ContingencyTable) -> f64 {
    let n = table.total as f64;
    let mut h = 0.0;
    for row in &table.counts {
        for (j, &v) in row.iter().enumerate() {
            if v > 0 {
                h -= v as f64 / n * (v as f64 / table.col_sums[j] as f64).ln();
            }
        }
    }
    h.max(0.0)
}

/// Homogeneity, completeness and their harmonic mean, with rows as the true
/// classes and columns as the predicted clusters.
pub fn homogeneity_completeness_v(table: &ContingencyTable) -> (f64, f64, f64) {
    let hu = entropy(&table.row_sums, table.total);
    let hv = entropy(&table.col_sums, table.total);
    let h = if hu == 0.0 { 1.0 } else { (1.0 - conditional_entropy(table) / hu).clamp(0.0, 1.0) };
    let c = if hv == 0.0 { 1.0 } else { (1.0 - conditional_entropy(&table.transpose()) / hv).clamp(0.0, 1.0) };
    let v = if h + c == 0.0 { 0.0 } else { 2.0 * h * c / (h + c) };
    (h, c, v)
}

/// Mean silhouette over all points with Euclidean distance; points in
/// singleton clusters score 0.
pub fn silhouette(points: &Matrix, assignment: &[usize]) -> Result<f64, MetricsError> {
    let n = points.rows();
    if assignment.len() != n {
        return Err(MetricsError::LengthMismatch(assignment.len(), n));
    }
    let (labels, k) = compact(assignment);
    if k < 2 {
        return Err(MetricsError::SingleCluster);
    }
    let mut sizes = vec![0usize; k];
    for &l in &labels {
        sizes[l] += 1;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                let d = points.row(i).iter().zip(points.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                sums[labels[j]] += d;
            }
        }
        let own = labels[i];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k).filter(|&c| c != own).map(|c| sums[c] / sizes[c] as f64).fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringScores {
    pub ari: f64,
    pub nmi: f64,
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_measure: f64,
    pub silhouette: f64,
}

/// Clusters `points` by k-means with as many clusters as true classes and
/// scores the result against `truth`.
pub fn score_embedding(points: &Matrix, truth: &[usize], seed: u64) -> Result<ClusteringScores, MetricsError> {
    if points.rows() != truth.len() {
        return Err(MetricsError::LengthMismatch(truth.len(), points.rows()));
    }
    let (_, k) = compact(truth);
    let model = kmeans_restarts(points, k, seed, DEFAULT_MAX_ITER, 10)?;
    let table = ContingencyTable::new(truth, &model.assignment)?;
    let (homogeneity, completeness, v_measure) = homogeneity_completeness_v(&table);
    Ok(ClusteringScores {
        ari: ari(&table),
        nmi: nmi(&table),
        homogeneity,
        completeness,
        v_measure,
        silhouette: silhouette(points, &model.assignment)?,
    })
}

/// `model,ari,nmi,homogeneity,completeness,v_measure,silhouette` rows.
pub fn scores_csv(rows: &[(String, ClusteringScores)]) -> String {
    let mut out = String::from("model,ari,nmi,homogeneity,completeness,v_measure,silhouette\n");
    for (name, s) in rows {
        let _ = writeln!(
            out,
            "{name},{},{},{},{},{},{}",
            s.ari, s.nmi, s.homogeneity, s.completeness, s.v_measure, s.silhouette
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn table(u: &[usize], v: &[usize]) -> ContingencyTable {
        ContingencyTable::new(u, v).unwrap()
    }

    fn pair_counting_ari(u: &[usize], v: &[usize]) -> f64 {
        let n = u.len();
        let (mut both, mut only_u, mut only_v, mut neither) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                match (u[i] == u[j], v[i] == v[j]) {
                    (true, true) => both += 1.0,
                    (true, false) => only_u += 1.0,
                    (false, true) => only_v += 1.0,
                    (false, false) => neither += 1.0,
                }
            }
        }
        let total: f64 = both + only_u + only_v + neither;
        let expected = (both + only_u) * (both + only_v) / total;
        let max = ((both + only_u) + (both + only_v)) / 2.0;
        (both - expected) / (max - expected)
    }

    #[test]
    fn ari_examples() {
        assert_eq!(ari(&table(&[0, 0, 1, 1], &[5, 5, 2, 2])), 1.0);
        assert_eq!(ari(&table(&[0, 0, 0], &[1, 1, 1])), 1.0);
        assert_eq!(ari(&table(&[0, 1, 2], &[0, 1, 2])), 1.0);
        assert_eq!(ari(&table(&[0, 0, 0], &[0, 1, 2])), 0.0);
        let mut rng = rng_from_seed(1);
        let u: Vec<usize> = (0..12).map(|_| rng.random_range(0..3)).collect();
        let v: Vec<usize> = (0..12).map(|_| rng.random_range(0..3)).collect();
        let t = table(&u, &v);
        assert!((ari(&t) - pair_counting_ari(&u, &v)).abs() < 1e-12);
        assert_eq!(ari(&t), ari(&t.transpose()));
    }

    #[test]
    fn nmi_examples() {
        assert_eq!(nmi(&table(&[0, 0, 1, 1, 2], &[1, 1, 0, 0, 3])), 1.0);
        // Product table: independent partitions.
        let t = ContingencyTable::from_counts(vec![vec![2, 4], vec![3, 6]]);
        assert!(nmi(&t).abs() < 1e-15);
        assert_eq!(nmi(&table(&[0, 0], &[1, 1])), 1.0);
        assert_eq!(nmi(&table(&[0, 0], &[0, 1])), 0.0);
    }

    #[test]
    fn homogeneity_and_completeness() {
        // Each true class split in two.
        let (h, c, v) = homogeneity_completeness_v(&table(&[0, 0, 1, 1], &[0, 1, 2, 3]));
        assert_eq!(h, 1.0);
        assert!(c < 1.0);
        assert!((v - 2.0 * c / (1.0 + c)).abs() < 1e-15);
        assert_eq!(homogeneity_completeness_v(&table(&[3, 3, 1], &[0, 0, 2])), (1.0, 1.0, 1.0));

        // Rows are true classes: [[2, 0], [1, 1], [0, 2]], N = 6.
        let t = ContingencyTable::from_counts(vec![vec![2, 0], vec![1, 1], vec![0, 2]]);
        let (h, c, _) = homogeneity_completeness_v(&t);
        let l = |x: f64| x.ln();
        let h_u = -3.0 * (1.0 / 3.0) * l(1.0 / 3.0);
        let h_u_given_v = -2.0 * ((2.0 / 6.0) * l(2.0 / 3.0) + (1.0 / 6.0) * l(1.0 / 3.0));
        let h_v = l(2.0);
        let h_v_given_u = -2.0 * (1.0 / 6.0) * l(0.5);
        assert!((h - (1.0 - h_u_given_v / h_u)).abs() < 1e-12);
        assert!((c - (1.0 - h_v_given_u / h_v)).abs() < 1e-12);
    }

    #[test]
    fn silhouette_hand_case() {
        // Points 0, 1 in cluster A and 4, 6 in cluster B on a line.
        let pts = Matrix::from_rows(&[[0.0], [1.0], [4.0], [6.0]]);
        let s = silhouette(&pts, &[0, 0, 1, 1]).unwrap();
        let s0 = (5.0 - 1.0) / 5.0;
        let s1 = (4.0 - 1.0) / 4.0;
        let s2 = (3.5 - 2.0) / 3.5;
        let s3 = (5.5 - 2.0) / 5.5;
        assert!((s - (s0 + s1 + s2 + s3) / 4.0).abs() < 1e-12);
        assert_eq!(silhouette(&pts, &[0, 0, 0, 0]), Err(MetricsError::SingleCluster));
        // Singletons contribute 0.
        let s = silhouette(&Matrix::from_rows(&[[0.0], [1.0], [9.0]]), &[0, 0, 1]).unwrap();
        let expected = ((9.0 - 1.0) / 9.0 + (8.0 - 1.0) / 8.0) / 3.0;
        assert!((s - expected).abs() < 1e-12);
    }

    #[test]
    fn silhouette_limits() {
        let mut rng = rng_from_seed(2);
        let far = Matrix::from_fn(40, 2, |i, _| if i < 20 { 0.0 } else { 100.0 } + rng.random::<f64>());
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        assert!(silhouette(&far, &labels).unwrap() >= 0.99);
        let null = Matrix::from_fn(200, 2, |_, _| rng.random::<f64>());
        let labels: Vec<usize> = (0..200).map(|i| i % 2).collect();
        assert!(silhouette(&null, &labels).unwrap().abs() < 0.1);
    }

    #[test]
    fn relabeling_changes_nothing() {
        let u = [0, 0, 1, 2, 2, 1, 0];
        let v = [1, 1, 0, 0, 2, 2, 1];
        let v2: Vec<usize> = v.iter().map(|&x| [7, 3, 9][x]).collect();
        let (a, b) = (table(&u, &v), table(&u, &v2));
        assert_eq!(ari(&a), ari(&b));
        assert_eq!(nmi(&a), nmi(&b));
        assert_eq!(homogeneity_completeness_v(&a), homogeneity_completeness_v(&b));
    }

    #[test]
    fn embedding_scores_on_separated_blobs() {
        let truth: Vec<usize> = (0..30).map(|i| i / 10).collect();
        let mut rng = rng_from_seed(4);
        let pts = Matrix::from_fn(30, 2, |i, j| (truth[i] * 10 + j) as f64 + 0.1 * rng.random::<f64>());
        let s = score_embedding(&pts, &truth, 0).unwrap();
        assert_eq!(s.ari, 1.0);
        assert!((s.nmi - 1.0).abs() < 1e-12);
        assert!(s.silhouette > 0.9);
        assert!(scores_csv(&[("x".into(), s)]).starts_with("model,ari,nmi,homogeneity,completeness,v_measure,silhouette\nx,1,"));
    }
}
