//! Inception Score from a matrix of class posteriors.
//!
//! Natural logarithms throughout; `p ln p` is taken as 0 at `p = 0`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;

/// Row sums must be within this distance of 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// `N x K` row-stochastic matrix of class posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    probs: Matrix,
}

impl PosteriorMatrix {
    pub fn new(probs: Matrix) -> Result<Self> {
        if probs.rows() == 0 {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        if probs.cols() < 2 {
            return Err(Error::Shape(format!(
                "posteriors need at least 2 classes, got {}",
                probs.cols()
            )));
        }
        for (i, row) in probs.iter_rows().enumerate() {
            let sum: f64 = row.iter().sum();
            let min = row.iter().copied().fold(f64::INFINITY, f64::min);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let in_range = min >= 0.0 && max <= 1.0;
            let normalized = (sum - 1.0).abs() <= ROW_SUM_TOLERANCE;
            if !in_range || !normalized {
                return Err(Error::InvalidPosterior { row: i, sum, min });
            }
        }
        Ok(Self { probs })
    }

    pub fn n(&self) -> usize {
        self.probs.rows()
    }

    pub fn k(&self) -> usize {
        self.probs.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.probs
    }
}

#[inline]
fn xlogy_ratio(p: f64, q: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * (p / q).ln()
    }
}

fn score_rows<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, k: usize) -> f64 {
    let mut marginal = vec![0.0; k];
    let mut n = 0usize;
    for row in rows.clone() {
        for (m, &p) in marginal.iter_mut().zip(row) {
            *m += p;
        }
        n += 1;
    }
    marginal.iter_mut().for_each(|m| *m /= n as f64);
    let mean_kl = rows
        .map(|row| {
            row.iter()
                .zip(&marginal)
                .map(|(&p, &q)| {
                    debug_assert!(p == 0.0 || q > 0.0, "marginal is the row mean");
                    xlogy_ratio(p, q)
                })
                .sum::<f64>()
        })
        .sum::<f64>()
        / n as f64;
    mean_kl.exp()
}

/// `exp(mean_i KL(p(y|x_i) || p_hat(y)))` with `p_hat` the column mean of the
/// same rows.
pub fn inception_score(posteriors: &PosteriorMatrix) -> f64 {
    score_rows(posteriors.probs.iter_rows(), posteriors.k())
}

/// Score of the given rows only.
pub(crate) fn score_of_rows(posteriors: &PosteriorMatrix, rows: &[usize]) -> f64 {
    score_rows(rows.iter().map(|&i| posteriors.probs.row(i)), posteriors.k())
}

/// Inception Score of a seeded random subset of `n` rows.
pub fn is_at_n(posteriors: &PosteriorMatrix, n: usize, permutation_seed: u64) -> Result<f64> {
    if n == 0 || n > posteriors.n() {
        return Err(Error::Config(format!(
            "subset size {n} must be in 1..={}",
            posteriors.n()
        )));
    }
    let order = seed::permutation(posteriors.n(), permutation_seed);
    Ok(score_of_rows(posteriors, &order[..n]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitScore {
    pub mean: f64,
    pub std: f64,
}

/// Shuffles the rows once, cuts them into `splits` contiguous blocks (the last
/// block takes the remainder) and reports the mean and sample standard
/// deviation of the per-block scores.
pub fn is_with_splits(posteriors: &PosteriorMatrix, splits: usize, seed: u64) -> Result<SplitScore> {
    let n = posteriors.n();
    if splits == 0 || splits * 2 > n {
        return Err(Error::Config(format!(
            "splits must be in 1..={} for {n} rows",
            n / 2
        )));
    }
    let order = seed::permutation(n, seed);
    let size = n / splits;
    let scores: Vec<f64> = (0..splits)
        .map(|s| {
            let end = if s + 1 == splits { n } else { (s + 1) * size };
            score_of_rows(posteriors, &order[s * size..end])
        })
        .collect();
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let std = if splits == 1 {
        0.0
    } else {
        (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (splits as f64 - 1.0)).sqrt()
    };
    Ok(SplitScore { mean, std })
}
