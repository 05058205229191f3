//! Extrapolation of finite-sample scores to `N = infinity`.
//!
//! A score computed from `N` samples behaves like `score_inf + K / N` plus
//! higher-order terms. Scores are evaluated on a schedule of batch sizes
//! drawn from one pool of samples, regressed on `1/N`, and the intercept is
//! reported as the effectively unbiased score.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frechet::{FeatureMatrix, PreparedReference};
use crate::inception::{self, PosteriorMatrix};
use crate::seed;

/// Fits with an R^2 below this are flagged in the result.
pub const LOW_R_SQUARED: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Fid,
    Is,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BatchScheme {
    /// Batch sizes evenly spaced in `N`.
    #[default]
    RegularInN,
    /// Batch sizes evenly spaced in `1/N`.
    RegularInInvN,
}

/// How each batch is drawn from the pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Resample {
    /// Reshuffle the pool and take a prefix (no repeats inside a batch).
    #[default]
    Shuffle,
    /// Draw batch rows uniformly with replacement.
    WithReplacement,
}

/// `(n, score)` pairs with strictly increasing `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub metric: Metric,
    pub entries: Vec<(usize, f64)>,
}

impl ScoreSeries {
    pub fn new(metric: Metric, entries: Vec<(usize, f64)>) -> Result<Self> {
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Config("series batch sizes must be strictly increasing".into()));
        }
        if entries.iter().any(|&(n, s)| n == 0 || !s.is_finite()) {
            return Err(Error::Config("series entries need n >= 1 and finite scores".into()));
        }
        Ok(Self { metric, entries })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationFit {
    /// Predicted score at `1/N = 0`.
    pub intercept: f64,
    /// Coefficient of `1/N` (the bias constant).
    pub slope: f64,
    /// 1 when the scores have zero variance.
    pub r_squared: f64,
    pub residual_std: f64,
    pub intercept_se: f64,
    pub slope_se: f64,
    pub weighted: bool,
    pub scheme: Option<BatchScheme>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfinityConfig {
    pub pool_size: usize,
    pub num_points: usize,
    pub min_batch: usize,
    pub scheme: BatchScheme,
    pub replicates: usize,
    pub weighted: bool,
    pub resample: Resample,
}

impl Default for InfinityConfig {
    fn default() -> Self {
        Self {
            pool_size: 50_000,
            num_points: 15,
            min_batch: 5_000,
            scheme: BatchScheme::RegularInN,
            replicates: 1,
            weighted: false,
            resample: Resample::Shuffle,
        }
    }
}

impl InfinityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_points < 3 {
            return Err(Error::Config(format!(
                "need at least 3 batch sizes, got {}",
                self.num_points
            )));
        }
        if self.min_batch < 2 {
            return Err(Error::Config("min_batch must be at least 2".into()));
        }
        if self.min_batch >= self.pool_size {
            return Err(Error::Config(format!(
                "min_batch {} must be below pool_size {}",
                self.min_batch, self.pool_size
            )));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        Ok(())
    }
}

/// Batch sizes between `min_batch` and `pool_size` (inclusive), rounded to
/// integers and deduplicated.
pub fn batch_schedule(config: &InfinityConfig) -> Result<Vec<usize>> {
    config.validate()?;
    let t = config.num_points;
    let (lo, hi) = (config.min_batch as f64, config.pool_size as f64);
    let step = |i: usize| i as f64 / (t - 1) as f64;
    let mut sizes: Vec<usize> = (0..t)
        .map(|i| match config.scheme {
            BatchScheme::RegularInN => lo + (hi - lo) * step(i),
            BatchScheme::RegularInInvN => 1.0 / (1.0 / lo + (1.0 / hi - 1.0 / lo) * step(i)),
        })
        .map(|x| x.round() as usize)
        .collect();
    sizes.dedup();
    if sizes.len() < 3 {
        return Err(Error::Config(format!(
            "schedule collapses to {} distinct batch sizes",
            sizes.len()
        )));
    }
    Ok(sizes)
}

/// Least squares of score on `1/n`; `weighted` uses weights proportional to
/// `n` (score variance shrinks like `1/n`).
pub fn fit_inverse_n(series: &ScoreSeries, weighted: bool) -> Result<ExtrapolationFit> {
    let m = series.entries.len();
    if m < 3 {
        return Err(Error::Config(format!("need at least 3 points to fit, got {m}")));
    }
    let pts: Vec<(f64, f64, f64)> = series
        .entries
        .iter()
        .map(|&(n, y)| (1.0 / n as f64, y, if weighted { n as f64 } else { 1.0 }))
        .collect();
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let xbar = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let ybar = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - xbar).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - xbar) * (p.1 - ybar)).sum();
    let syy: f64 = pts.iter().map(|p| p.2 * (p.1 - ybar).powi(2)).sum();
    if sxx.is_nan() || sxx <= f64::EPSILON * sw * xbar * xbar {
        return Err(Error::SingularFit);
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ssr: f64 = pts
        .iter()
        .map(|p| p.2 * (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (1.0 - ssr / syy).clamp(0.0, 1.0)
    };
    let sigma2 = ssr / (m as f64 - 2.0);
    Ok(ExtrapolationFit {
        intercept,
        slope,
        r_squared,
        residual_std: sigma2.sqrt(),
        intercept_se: (sigma2 * (1.0 / sw + xbar * xbar / sxx)).sqrt(),
        slope_se: (sigma2 / sxx).sqrt(),
        weighted,
        scheme: None,
    })
}

/// Samples to be scored: generated features against reference statistics,
/// or class posteriors.
#[derive(Clone, Copy)]
pub enum ScorePool<'a> {
    Fid {
        features: &'a FeatureMatrix,
        reference: &'a PreparedReference,
    },
    Is {
        posteriors: &'a PosteriorMatrix,
    },
}

impl ScorePool<'_> {
    pub fn metric(&self) -> Metric {
        match self {
            ScorePool::Fid { .. } => Metric::Fid,
            ScorePool::Is { .. } => Metric::Is,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ScorePool::Fid { features, .. } => features.n(),
            ScorePool::Is { posteriors } => posteriors.n(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Score of the given rows.
    pub fn score_rows(&self, rows: &[usize]) -> Result<f64> {
        match self {
            ScorePool::Fid {
                features,
                reference,
            } => reference.fid_of_rows(features.matrix(), rows),
            ScorePool::Is { posteriors } => Ok(inception::score_of_rows(posteriors, rows)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFit {
    pub seed: u64,
    pub fit: ExtrapolationFit,
    pub series: ScoreSeries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfinityResult {
    /// Fit of the first replicate.
    pub fit: ExtrapolationFit,
    pub series: ScoreSeries,
    pub replicates: Vec<ReplicateFit>,
    pub replicate_mean: f64,
    /// Sample standard deviation of the replicate intercepts (0 for one
    /// replicate).
    pub replicate_std: f64,
    /// Set when any replicate fit has R^2 below [`LOW_R_SQUARED`].
    pub low_fit_quality: bool,
}

fn batch_rows(pool_len: usize, batch: usize, resample: Resample, seed: u64) -> Vec<usize> {
    match resample {
        Resample::Shuffle => {
            let mut order = seed::permutation(pool_len, seed);
            order.truncate(batch);
            order
        }
        Resample::WithReplacement => {
            let mut rng = seed::rng(seed);
            (0..batch).map(|_| rng.random_range(0..pool_len)).collect()
        }
    }
}

/// Scores the pool at every scheduled batch size (reshuffling before each
/// batch) and fits the series.
pub fn score_series(pool: ScorePool<'_>, config: &InfinityConfig, seed: u64) -> Result<ScoreSeries> {
    let schedule = batch_schedule(config)?;
    if pool.len() < config.pool_size {
        return Err(Error::InsufficientSamples {
            needed: config.pool_size,
            got: pool.len(),
        });
    }
    let entries = schedule
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let rows = batch_rows(
                pool.len(),
                n,
                config.resample,
                seed::derive_seed(seed, &[i as u64]),
            );
            Ok((n, pool.score_rows(&rows)?))
        })
        .collect::<Result<Vec<_>>>()?;
    ScoreSeries::new(pool.metric(), entries)
}

/// Effectively unbiased score of a sample pool. Replicate `r` uses the seed
/// `derive_seed(run_seed, [r])`.
pub fn score_infinity(pool: ScorePool<'_>, config: &InfinityConfig, run_seed: u64) -> Result<InfinityResult> {
    config.validate()?;
    let replicates = (0..config.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let seed = seed::derive_seed(run_seed, &[r]);
            let series = score_series(pool, config, seed)?;
            let mut fit = fit_inverse_n(&series, config.weighted)?;
            fit.scheme = Some(config.scheme);
            Ok(ReplicateFit { seed, fit, series })
        })
        .collect::<Result<Vec<_>>>()?;
    let intercepts: Vec<f64> = replicates.iter().map(|r| r.fit.intercept).collect();
    let (replicate_mean, replicate_std) = mean_std(&intercepts);
    let low_fit_quality = replicates.iter().any(|r| r.fit.r_squared < LOW_R_SQUARED);
    Ok(InfinityResult {
        fit: replicates[0].fit,
        series: replicates[0].series.clone(),
        replicate_mean,
        replicate_std,
        low_fit_quality,
        replicates,
    })
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
