//! Metric kernels for decomposed evaluation: retrieval precision, Fréchet
//! distance, diversity, multimodality and matched-pair similarity.
//!
//! Features are rows of equal width. Reductions run in a fixed order so the
//! results do not depend on how features were produced.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};

/// Retrieval pool size.
pub const POOL_SIZE: usize = 32;
/// Pairs drawn for diversity.
pub const DIVERSITY_PAIRS: usize = 300;
/// Generations per prompt for multimodality.
pub const MULTIMODALITY_REPEATS: usize = 10;
/// Ridge added to both covariances.
pub const COVARIANCE_SHRINKAGE: f64 = 1e-6;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let n = norm(a) * norm(b);
    if n == 0.0 {
        0.0
    } else {
        dot(a, b) / n
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Fraction of sample rows whose own text ranks within the top `k` of the
/// pool by cosine similarity. Ties are resolved in the row's favor.
pub fn r_precision(text_feats: &[Vec<f64>], sample_feats: &[Vec<f64>], k: usize) -> Result<f64> {
    Ok(r_precision_ranks(text_feats, sample_feats)?
        .iter()
        .filter(|&&r| r <= k)
        .count() as f64
        / POOL_SIZE as f64)
}

/// Top-1, top-2 and top-3 precision of one pool.
pub fn r_precision_top3(text_feats: &[Vec<f64>], sample_feats: &[Vec<f64>]) -> Result<[f64; 3]> {
    let ranks = r_precision_ranks(text_feats, sample_feats)?;
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        *o = ranks.iter().filter(|&&r| r <= k + 1).count() as f64 / POOL_SIZE as f64;
    }
    Ok(out)
}

fn r_precision_ranks(text_feats: &[Vec<f64>], sample_feats: &[Vec<f64>]) -> Result<Vec<usize>> {
    if text_feats.len() != POOL_SIZE {
        return Err(Error::PoolSizeError(text_feats.len()));
    }
    if sample_feats.len() != POOL_SIZE {
        return Err(Error::PoolSizeError(sample_feats.len()));
    }
    Ok(sample_feats
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let own = cosine(s, &text_feats[i]);
            1 + text_feats
                .iter()
                .enumerate()
                .filter(|(j, t)| *j != i && cosine(s, t) > own)
                .count()
        })
        .collect())
}

fn mean_and_cov(feats: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if feats.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            available: feats.len(),
        });
    }
    let d = feats[0].len();
    let n = feats.len();
    let x = DMatrix::from_fn(n, d, |i, j| feats[i][j]);
    let mean = x.row_mean().transpose();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
    for i in 0..d {
        cov[(i, i)] += COVARIANCE_SHRINKAGE;
    }
    Ok((mean, cov))
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| libm::sqrt(l.max(0.0)));
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussian fits of two feature sets:
/// `|mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2)`.
pub fn frechet_distance(feats_a: &[Vec<f64>], feats_b: &[Vec<f64>]) -> Result<f64> {
    let (mu1, s1) = mean_and_cov(feats_a)?;
    let (mu2, s2) = mean_and_cov(feats_b)?;
    let root1 = sym_sqrt(&s1);
    let inner = &root1 * &s2 * &root1;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|l| libm::sqrt(l.max(0.0)))
        .sum();
    let diff = (mu1 - mu2).norm_squared();
    Ok((diff + s1.trace() + s2.trace() - 2.0 * tr_cross).max(0.0))
}

/// Mean distance between `n_pairs` random pairs, each side drawn without
/// replacement from the feature set.
pub fn diversity<R: Rng + ?Sized>(feats: &[Vec<f64>], n_pairs: usize, rng: &mut R) -> Result<f64> {
    if n_pairs == 0 || feats.len() < n_pairs {
        return Err(Error::InsufficientSamples {
            needed: n_pairs.max(1),
            available: feats.len(),
        });
    }
    let first = sample(rng, feats.len(), n_pairs);
    let second = sample(rng, feats.len(), n_pairs);
    let total: f64 = first
        .iter()
        .zip(second.iter())
        .map(|(a, b)| euclidean(&feats[a], &feats[b]))
        .sum();
    Ok(total / n_pairs as f64)
}

/// Diversity within each prompt's repeated generations, averaged over prompts.
pub fn multimodality<R: Rng + ?Sized>(
    per_prompt_feats: &[Vec<Vec<f64>>],
    n_pairs: usize,
    rng: &mut R,
) -> Result<f64> {
    if per_prompt_feats.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, available: 0 });
    }
    let mut total = 0.0;
    for group in per_prompt_feats {
        total += diversity(group, n_pairs, rng)?;
    }
    Ok(total / per_prompt_feats.len() as f64)
}

/// Mean cosine similarity of matched rows.
pub fn similarity(text_feats: &[Vec<f64>], sample_feats: &[Vec<f64>]) -> Result<f64> {
    if text_feats.len() != sample_feats.len() || text_feats.is_empty() {
        return Err(Error::LengthMismatch {
            expected: text_feats.len(),
            got: sample_feats.len(),
        });
    }
    let s: f64 = text_feats.iter().zip(sample_feats).map(|(t, s)| cosine(t, s)).sum();
    Ok(s / text_feats.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, mean: f64, std: f64) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        mean + std * z
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn fid_of_identical_sets_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = gaussian_rows(&mut rng, 200, 8, 0.3, 1.2);
        assert!(frechet_distance(&a, &a).unwrap() <= 1e-8);
    }

    #[test]
    fn fid_one_dimensional_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = gaussian_rows(&mut rng, 10_000, 1, 0.0, 1.0);
        let b = gaussian_rows(&mut rng, 10_000, 1, 1.0, 1.0);
        let f = frechet_distance(&a, &b).unwrap();
        // (mu1 - mu2)^2 + (s1 - s2)^2 = 1
        assert!((f - 1.0).abs() < 0.05, "{f}");
    }

    /// Feature set whose sample mean is `m` and whose sample covariance is
    /// exactly `diag(v)`: coordinate `j` deviates by `+-s` in its own pair of
    /// rows and nowhere else.
    fn diagonal_set(m: &[f64], v: &[f64]) -> Vec<Vec<f64>> {
        let d = m.len();
        let n = 2 * d;
        let mut rows = vec![m.to_vec(); n];
        for j in 0..d {
            let s = (v[j] * (n as f64 - 1.0) / 2.0).sqrt();
            rows[2 * j][j] += s;
            rows[2 * j + 1][j] -= s;
        }
        rows
    }

    #[test]
    fn fid_diagonal_matches_elementwise_form() {
        let (ma, va) = ([0.0f64, 1.0, -2.0], [1.0, 0.25, 4.0]);
        let (mb, vb) = ([0.5f64, 1.0, 0.0], [2.0, 0.25, 1.0]);
        let oracle: f64 = (0..3)
            .map(|j| {
                let (a, b) = (va[j] + COVARIANCE_SHRINKAGE, vb[j] + COVARIANCE_SHRINKAGE);
                (ma[j] - mb[j]).powi(2) + a + b - 2.0 * (a * b).sqrt()
            })
            .sum();
        let f = frechet_distance(&diagonal_set(&ma, &va), &diagonal_set(&mb, &vb)).unwrap();
        assert!((f - oracle).abs() < 1e-6, "{f} vs {oracle}");
    }

    #[test]
    fn fid_is_symmetric_and_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = gaussian_rows(&mut rng, 60, 4, 0.0, 1.0);
        let b = gaussian_rows(&mut rng, 80, 4, 0.2, 0.7);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-8);
        let mut rev = a.clone();
        rev.reverse();
        assert!((frechet_distance(&rev, &b).unwrap() - ab).abs() < 1e-8);
    }

    #[test]
    fn r_precision_self_retrieval() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = gaussian_rows(&mut rng, 32, 16, 0.0, 1.0);
        assert_eq!(r_precision(&f, &f, 1).unwrap(), 1.0);
        let t = r_precision_top3(&f, &f).unwrap();
        assert_eq!(t, [1.0, 1.0, 1.0]);
    }

    #[test]
    fn r_precision_random_features_is_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pools = 1000;
        let mut top1 = 0.0;
        for _ in 0..pools {
            let t = gaussian_rows(&mut rng, 32, 64, 0.0, 1.0);
            let s = gaussian_rows(&mut rng, 32, 64, 0.0, 1.0);
            let r = r_precision_top3(&t, &s).unwrap();
            assert!(r[0] <= r[1] && r[1] <= r[2]);
            top1 += r[0];
        }
        let top1 = top1 / pools as f64;
        assert!((top1 - 1.0 / 32.0).abs() < 0.01, "{top1}");
    }

    #[test]
    fn r_precision_requires_full_pool() {
        let f = vec![vec![1.0, 0.0]; 31];
        assert_eq!(r_precision(&f, &f, 1), Err(Error::PoolSizeError(31)));
    }

    #[test]
    fn diversity_of_identical_features_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = vec![vec![0.5, -0.25, 1.0]; 400];
        assert_eq!(diversity(&f, 300, &mut rng).unwrap(), 0.0);
        assert!(matches!(diversity(&f[..10], 300, &mut rng), Err(Error::InsufficientSamples { .. })));
    }

    #[test]
    fn diversity_two_point_set() {
        // {u, -u}: both index draws are uniform permutations, so the pair
        // distance is 0 or 2 with equal probability and the mean is 1
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = vec![vec![0.6, 0.8], vec![-0.6, -0.8]];
        let trials = 20_000;
        let mean: f64 = (0..trials).map(|_| diversity(&f, 2, &mut rng).unwrap()).sum::<f64>() / trials as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn multimodality_of_deterministic_generator_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let groups: Vec<Vec<Vec<f64>>> = (0..5).map(|i| vec![vec![i as f64, 1.0]; 10]).collect();
        assert_eq!(multimodality(&groups, 10, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn similarity_extremes() {
        let a = vec![vec![1.0, 0.0], vec![0.0, 2.0]];
        assert!((similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let o = vec![vec![0.0, 3.0], vec![1.0, 0.0]];
        assert_eq!(similarity(&a, &o).unwrap(), 0.0);
        let n: Vec<Vec<f64>> = a.iter().map(|r| r.iter().map(|x| -x).collect()).collect();
        assert!((similarity(&a, &n).unwrap() + 1.0).abs() < 1e-12);
    }
}
