//! Effectively unbiased FID and Inception Score.
//!
//! Finite-sample FID and IS are biased, and the bias depends on the generator.
//! This crate removes it by scoring a sample pool at several batch sizes and
//! extrapolating linearly in `1/N` ([`extrapolate`]). Scrambled Sobol points
//! pushed through the normal quantile ([`lds`], [`gaussianize`]) replace IID
//! latent draws to reduce the variance of every score. The [`oracles`]
//! module supplies synthetic generators whose limiting scores are known,
//! which is how the bias and variance behaviour is checked.

pub mod cli;
pub mod error;
pub mod extrapolate;
pub mod frechet;
pub mod gaussianize;
pub mod inception;
pub mod io;
pub mod lds;
pub mod matrix;
pub mod oracles;
pub mod seed;

pub use error::{Error, Result};
pub use extrapolate::{
    batch_schedule, fit_inverse_n, score_infinity, BatchScheme, ExtrapolationFit, InfinityConfig,
    InfinityResult, Metric, Resample, ScorePool, ScoreSeries,
};
pub use frechet::{fid_at_n, frechet_distance, gaussian_stats, FeatureMatrix, GaussianStats, PreparedReference};
pub use gaussianize::{box_muller, icdf_normal, normal_points, CachedSampler, NormalPointSet, Transform};
pub use inception::{inception_score, is_at_n, is_with_splits, PosteriorMatrix};
pub use lds::{centered_l2_discrepancy, sobol_points, uniform_points, SamplerKind, SamplerSpec, UnitPointSet};
pub use matrix::Matrix;
