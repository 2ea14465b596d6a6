//! Community detection over adjacency-row connectivity profiles (k-means++
//! seeding followed by Lloyd iterations) and the z-scored inter-community
//! distance matrix derived from the fitted centroids.

use std::collections::HashSet;

use rand::Rng;
use thiserror::Error;

use crate::graph::AttributedGraph;
use crate::matrix::Matrix;
use crate::rng::rng_from_seed;

pub const DEFAULT_MAX_ITER: usize = 300;

#[derive(Debug, Error, PartialEq)]
pub enum CommunityError {
    #[error("need at least {requested} distinct rows, found {distinct}")]
    DegenerateData { requested: usize, distinct: usize },
    #[error("invalid community request: {0}")]
    Invalid(String),
}

/// `ceil(sqrt(k))`, computed exactly in integers.
pub fn community_count(k: usize) -> usize {
    let mut p = (k as f64).sqrt() as usize;
    while p * p < k {
        p += 1;
    }
    while p > 0 && (p - 1) * (p - 1) >= k {
        p -= 1;
    }
    p
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn distinct_rows(points: &Matrix) -> usize {
    let mut seen = HashSet::new();
    for i in 0..points.rows() {
        // +0.0 and -0.0 compare equal, so normalize before hashing bits.
        seen.insert(points.row(i).iter().map(|v| (v + 0.0).to_bits()).collect::<Vec<_>>());
    }
    seen.len()
}

/// k-means++ seeding: the first centroid is a uniformly chosen row, each
/// further centroid a row drawn with probability proportional to its squared
/// distance to the nearest centroid chosen so far.
pub fn kmeanspp_init(points: &Matrix, p: usize, seed: u64) -> Result<Matrix, CommunityError> {
    let n = points.rows();
    if p == 0 || p > n {
        return Err(CommunityError::Invalid(format!("cannot seed {p} centroids from {n} rows")));
    }
    let distinct = distinct_rows(points);
    if distinct < p {
        return Err(CommunityError::DegenerateData { requested: p, distinct });
    }
    let mut rng = rng_from_seed(seed);
    let mut centroids = Matrix::zeros(p, points.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| squared_distance(points.row(i), points.row(first))).collect();
    for c in 1..p {
        let total: f64 = nearest.iter().sum();
        if !(total > 0.0) {
            return Err(CommunityError::DegenerateData { requested: p, distinct });
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (i, &d) in nearest.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            acc += d;
            chosen = Some(i);
            if acc > target {
                break;
            }
        }
        let chosen = chosen.expect("positive total implies a positive weight");
        centroids.row_mut(c).copy_from_slice(points.row(chosen));
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(squared_distance(points.row(i), points.row(chosen)));
        }
    }
    Ok(centroids)
}

/// Fitted partition of the rows of a point matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CommunityModel {
    pub centroids: Matrix,
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step.
    pub inertia_history: Vec<f64>,
    pub seed: u64,
    pub converged: bool,
}

impl CommunityModel {
    pub fn p(&self) -> usize {
        self.centroids.rows()
    }

    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }

    pub fn members(&self, community: usize) -> Vec<usize> {
        self.assignment.iter().enumerate().filter(|(_, &c)| c == community).map(|(i, _)| i).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.p()];
        for &c in &self.assignment {
            sizes[c] += 1;
        }
        sizes
    }
}

/// Nearest-centroid assignment with ties to the lowest index, followed by
/// repair of empty clusters: an empty cluster takes over the point lying
/// farthest from its own centroid (among clusters that can spare a member)
/// and is re-centred on it. Returns the resulting within-cluster sum of squares.
fn assign(points: &Matrix, centroids: &mut Matrix, assignment: &mut [usize]) -> f64 {
    let p = centroids.rows();
    let mut dist = vec![0.0; points.rows()];
    for i in 0..points.rows() {
        let row = points.row(i);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for c in 0..p {
            let d = squared_distance(row, centroids.row(c));
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        assignment[i] = best;
        dist[i] = best_d;
    }
    let mut sizes = vec![0usize; p];
    for &c in assignment.iter() {
        sizes[c] += 1;
    }
    for empty in 0..p {
        if sizes[empty] > 0 {
            continue;
        }
        let donor = (0..points.rows())
            .filter(|&i| sizes[assignment[i]] > 1)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if dist[b] >= dist[i] => Some(b),
                _ => Some(i),
            });
        if let Some(i) = donor {
            sizes[assignment[i]] -= 1;
            sizes[empty] += 1;
            assignment[i] = empty;
            dist[i] = 0.0;
            centroids.row_mut(empty).copy_from_slice(points.row(i));
        }
    }
    dist.iter().sum()
}

fn update_centroids(points: &Matrix, assignment: &[usize], p: usize) -> Matrix {
    let mut sums = Matrix::zeros(p, points.cols());
    let mut counts = vec![0usize; p];
    for (i, &c) in assignment.iter().enumerate() {
        counts[c] += 1;
        for (s, v) in sums.row_mut(c).iter_mut().zip(points.row(i)) {
            *s += v;
        }
    }
    for c in 0..p {
        if counts[c] > 0 {
            let inv = 1.0 / counts[c] as f64;
            for s in sums.row_mut(c) {
                *s *= inv;
            }
        }
    }
    sums
}

/// Lloyd's algorithm from k-means++ seeds over the rows of `points`.
///
/// Stops when an assignment step changes nothing or after `max_iter`
/// assignment steps. The returned centroids are the ones the final
/// assignment was computed against.
pub fn kmeans(points: &Matrix, p: usize, seed: u64, max_iter: usize) -> Result<CommunityModel, CommunityError> {
    if max_iter == 0 {
        return Err(CommunityError::Invalid("max_iter must be at least 1".into()));
    }
    let mut centroids = kmeanspp_init(points, p, seed)?;
    let mut assignment = vec![usize::MAX; points.rows()];
    let mut next = vec![0usize; points.rows()];
    let mut inertia_history = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter {
        let inertia = assign(points, &mut centroids, &mut next);
        inertia_history.push(inertia);
        if next == assignment {
            converged = true;
            break;
        }
        assignment.copy_from_slice(&next);
        if inertia_history.len() == max_iter {
            break;
        }
        centroids = update_centroids(points, &assignment, p);
    }
    Ok(CommunityModel { centroids, assignment, inertia_history, seed, converged })
}

/// Best of `restarts` seeded k-means runs by final inertia (ties keep the earliest run).
pub fn kmeans_restarts(
    points: &Matrix,
    p: usize,
    seed: u64,
    max_iter: usize,
    restarts: usize,
) -> Result<CommunityModel, CommunityError> {
    let mut best: Option<CommunityModel> = None;
    for r in 0..restarts.max(1) as u64 {
        let model = kmeans(points, p, seed.wrapping_add(r), max_iter)?;
        if best.as_ref().is_none_or(|b| model.inertia() < b.inertia()) {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one run"))
}

/// Partitions the graph's nodes by their adjacency rows.
pub fn fit_communities(
    graph: &AttributedGraph,
    p: usize,
    seed: u64,
    max_iter: usize,
) -> Result<CommunityModel, CommunityError> {
    kmeans(graph.adjacency(), p, seed, max_iter)
}

/// Euclidean distances between community centroids and their z-scores.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationMatrix {
    pub values: Matrix,
    pub raw_distances: Matrix,
    pub mu: f64,
    pub sigma: f64,
}

impl AssociationMatrix {
    pub fn p(&self) -> usize {
        self.values.rows()
    }
}

/// `D[k][l] = |c_k - c_l|`, standardized with the mean and population
/// standard deviation over all `P^2` entries (diagonal included). When every
/// distance is equal the standardized matrix is all zeros.
pub fn association_matrix(centroids: &Matrix) -> AssociationMatrix {
    let p = centroids.rows();
    let mut raw = Matrix::zeros(p, p);
    for k in 0..p {
        for l in k + 1..p {
            let d = squared_distance(centroids.row(k), centroids.row(l)).sqrt();
            raw[(k, l)] = d;
            raw[(l, k)] = d;
        }
    }
    let count = (p * p) as f64;
    let mu = raw.sum() / count;
    let var = raw.as_slice().iter().map(|d| (d - mu) * (d - mu)).sum::<f64>() / count;
    let sigma = var.sqrt();
    let values = if sigma > 0.0 { raw.map(|d| (d - mu) / sigma) } else { Matrix::zeros(p, p) };
    AssociationMatrix { values, raw_distances: raw, mu, sigma }
}
