use rand::seq::SliceRandom;

use super::{AttributionError, ClassScorer};
use crate::imaging::ImageSet;
use crate::rng::rng_from_seed;

/// Largest player count accepted by [`shapley_exact`].
pub const EXACT_MAX_PLAYERS: usize = 8;

/// Images scored per model call.
const SCORE_CHUNK: usize = 256;

/// Pixel-wise mean of the selected images, flattened like a tensor.
pub fn mean_image(images: &ImageSet, indices: &[usize]) -> Result<Vec<f64>, AttributionError> {
    if indices.is_empty() {
        return Err(AttributionError::EmptyBackground);
    }
    let mut sum: Vec<f64> = Vec::new();
    for &i in indices {
        let img = images
            .images
            .get(i)
            .ok_or_else(|| AttributionError::Invalid(format!("background index {i} out of range")))?;
        let values = img.tensor.as_slice();
        if sum.is_empty() {
            sum = vec![0.0; values.len()];
        }
        for (s, &v) in sum.iter_mut().zip(values) {
            *s += f64::from(v);
        }
    }
    let n = indices.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

fn check_inputs<M: ClassScorer + ?Sized>(
    model: &M,
    image: &[f64],
    background: &[f64],
    players: &[usize],
) -> Result<(), AttributionError> {
    let len = model.input_len();
    if image.len() != len || background.len() != len {
        return Err(AttributionError::Invalid(format!(
            "image of {} and background of {} values for a model taking {len}",
            image.len(),
            background.len()
        )));
    }
    if players.is_empty() {
        return Err(AttributionError::NoPlayers);
    }
    let mut seen = vec![false; len];
    for &p in players {
        if p >= len || std::mem::replace(&mut seen[p], true) {
            return Err(AttributionError::Invalid(format!("player cell {p} out of range or repeated")));
        }
    }
    Ok(())
}

fn score_all<M: ClassScorer + ?Sized>(
    model: &M,
    batch: &[f64],
    n: usize,
    class: usize,
) -> Result<Vec<f64>, AttributionError> {
    let len = model.input_len();
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(SCORE_CHUNK) {
        let end = (start + SCORE_CHUNK).min(n);
        out.extend(model.class_scores(&batch[start * len..end * len], end - start, class)?);
    }
    Ok(out)
}

/// Marginal contribution of every player along one ordering, starting from
/// the background and switching players to their image values in `order`.
/// The contributions sum to `f(image restricted to players) - f(background)`.
pub fn permutation_contributions<M: ClassScorer + ?Sized>(
    model: &M,
    image: &[f64],
    class: usize,
    background: &[f64],
    players: &[usize],
    order: &[usize],
) -> Result<Vec<f64>, AttributionError> {
    check_inputs(model, image, background, players)?;
    let p = players.len();
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != (0..p).collect::<Vec<_>>() {
        return Err(AttributionError::Invalid("ordering is not a permutation of the players".into()));
    }
    let len = image.len();
    let mut batch = Vec::with_capacity((p + 1) * len);
    let mut current = background.to_vec();
    batch.extend_from_slice(&current);
    for &j in order {
        let cell = players[j];
        current[cell] = image[cell];
        batch.extend_from_slice(&current);
    }
    let scores = score_all(model, &batch, p + 1, class)?;
    let mut out = vec![0.0; p];
    for (t, &j) in order.iter().enumerate() {
        out[j] = scores[t + 1] - scores[t];
    }
    Ok(out)
}

/// Permutation-sampling estimate of each player's Shapley value (aligned
/// with `players`) for the score of `class`. Cells outside `players` stay at
/// their background values throughout.
pub fn shapley_sample<M: ClassScorer + ?Sized>(
    model: &M,
    image: &[f64],
    class: usize,
    background: &[f64],
    players: &[usize],
    n_permutations: usize,
    seed: u64,
) -> Result<Vec<f64>, AttributionError> {
    if n_permutations == 0 {
        return Err(AttributionError::Invalid("need at least one permutation".into()));
    }
    check_inputs(model, image, background, players)?;
    let mut rng = rng_from_seed(seed);
    let mut order: Vec<usize> = (0..players.len()).collect();
    let mut total = vec![0.0; players.len()];
    for _ in 0..n_permutations {
        order.shuffle(&mut rng);
        let contrib = permutation_contributions(model, image, class, background, players, &order)?;
        for (t, c) in total.iter_mut().zip(contrib) {
            *t += c;
        }
    }
    Ok(total.into_iter().map(|t| t / n_permutations as f64).collect())
}

/// Exact Shapley values by enumerating all `2^p` coalitions.
pub fn shapley_exact<M: ClassScorer + ?Sized>(
    model: &M,
    image: &[f64],
    class: usize,
    background: &[f64],
    players: &[usize],
) -> Result<Vec<f64>, AttributionError> {
    check_inputs(model, image, background, players)?;
    let p = players.len();
    if p > EXACT_MAX_PLAYERS {
        return Err(AttributionError::TooManyPlayers { players: p, max: EXACT_MAX_PLAYERS });
    }
    let len = image.len();
    let coalitions = 1usize << p;
    let mut batch = Vec::with_capacity(coalitions * len);
    for mask in 0..coalitions {
        let mut img = background.to_vec();
        for (j, &cell) in players.iter().enumerate() {
            if mask >> j & 1 == 1 {
                img[cell] = image[cell];
            }
        }
        batch.extend_from_slice(&img);
    }
    let v = score_all(model, &batch, coalitions, class)?;
    // weight[s] = s! (p - s - 1)! / p!
    let factorial = |n: usize| (1..=n).map(|v| v as f64).product::<f64>();
    let weight: Vec<f64> = (0..p).map(|s| factorial(s) * factorial(p - s - 1) / factorial(p)).collect();
    let mut phi = vec![0.0; p];
    for (j, value) in phi.iter_mut().enumerate() {
        let bit = 1 << j;
        for mask in (0..coalitions).filter(|m| m & bit == 0) {
            *value += weight[mask.count_ones() as usize] * (v[mask | bit] - v[mask]);
        }
    }
    Ok(phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    /// `f(x) = sum_j w_j x_j + c`, with the class index ignored.
    struct Linear {
        w: Vec<f64>,
        c: f64,
    }

    impl ClassScorer for Linear {
        fn input_len(&self) -> usize {
            self.w.len()
        }

        fn class_scores(&self, batch: &[f64], n: usize, _class: usize) -> Result<Vec<f64>, AttributionError> {
            Ok((0..n)
                .map(|i| batch[i * self.w.len()..][..self.w.len()].iter().zip(&self.w).map(|(x, w)| x * w).sum::<f64>() + self.c)
                .collect())
        }
    }

    /// Nonlinear game symmetric in cells 0 and 1: `x0 * x1 + x2^2 + 0 * x3`.
    struct Symmetric;

    impl ClassScorer for Symmetric {
        fn input_len(&self) -> usize {
            4
        }

        fn class_scores(&self, batch: &[f64], n: usize, _class: usize) -> Result<Vec<f64>, AttributionError> {
            Ok((0..n).map(|i| batch[4 * i] * batch[4 * i + 1] + batch[4 * i + 2].powi(2)).collect())
        }
    }

    #[test]
    fn linear_game_is_exact_per_permutation() {
        let model = Linear { w: vec![2.0, -1.0, 0.5, 0.0], c: 3.0 };
        let x = [1.0, 2.0, -3.0, 4.0];
        let b = [0.5, 0.0, 1.0, -1.0];
        let players = [0, 1, 2, 3];
        let phi = shapley_exact(&model, &x, 0, &b, &players).unwrap();
        let est = shapley_sample(&model, &x, 0, &b, &players, 5, 1).unwrap();
        for j in 0..4 {
            let closed = model.w[j] * (x[j] - b[j]);
            assert!((phi[j] - closed).abs() < 1e-12);
            assert!((est[j] - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn axioms_on_a_nonlinear_game() {
        let x = [2.0, 2.0, 1.5, 7.0];
        let b = [0.5, 0.5, -1.0, 1.0];
        let players = [0, 1, 2, 3];
        let phi = shapley_exact(&Symmetric, &x, 0, &b, &players).unwrap();
        let f = |v: &[f64]| v[0] * v[1] + v[2] * v[2];
        assert!((phi.iter().sum::<f64>() - (f(&x) - f(&b))).abs() < 1e-12);
        assert!((phi[0] - phi[1]).abs() < 1e-12);
        assert_eq!(phi[3], 0.0);
    }

    #[test]
    fn every_ordering_is_efficient_and_null_cells_get_zero() {
        let mut rng = rng_from_seed(8);
        let x: Vec<f64> = (0..4).map(|_| rng.random()).collect();
        let mut b: Vec<f64> = (0..4).map(|_| rng.random()).collect();
        b[2] = x[2];
        let f = |v: &[f64]| v[0] * v[1] + v[2] * v[2];
        let mut order = vec![0, 1, 2, 3];
        for _ in 0..100 {
            order.shuffle(&mut rng);
            let c = permutation_contributions(&Symmetric, &x, 0, &b, &[0, 1, 2, 3], &order).unwrap();
            assert!((c.iter().sum::<f64>() - (f(&x) - f(&b))).abs() < 1e-12);
            assert_eq!(c[2], 0.0);
            assert_eq!(c[3], 0.0);
        }
    }

    #[test]
    fn non_players_stay_at_background() {
        let model = Linear { w: vec![1.0, 1.0, 1.0], c: 0.0 };
        let phi = shapley_sample(&model, &[5.0, 6.0, 7.0], 0, &[0.0; 3], &[1], 3, 0).unwrap();
        assert_eq!(phi, vec![6.0]);
    }

    #[test]
    fn input_validation() {
        let model = Linear { w: vec![1.0; 3], c: 0.0 };
        let x = [0.0; 3];
        assert!(matches!(shapley_sample(&model, &x, 0, &x, &[], 1, 0), Err(AttributionError::NoPlayers)));
        assert!(shapley_sample(&model, &x, 0, &x, &[0, 0], 1, 0).is_err());
        assert!(shapley_sample(&model, &x, 0, &x, &[3], 1, 0).is_err());
        assert!(shapley_sample(&model, &x, 0, &x, &[0], 0, 0).is_err());
        let wide = Linear { w: vec![1.0; 9], c: 0.0 };
        let z = [0.0; 9];
        assert!(matches!(
            shapley_exact(&wide, &z, 0, &z, &(0..9).collect::<Vec<_>>()),
            Err(AttributionError::TooManyPlayers { .. })
        ));
    }
}
