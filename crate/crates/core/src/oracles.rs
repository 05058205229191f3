//! Synthetic generators with known limiting scores, and the replicated
//! studies built on them.
//!
//! [`AffineGaussianGenerator`] maps latent normals `z` to `A z + b`, so its
//! feature distribution is exactly `N(b, A A^T)` and its FID against any
//! Gaussian reference is available in closed form. [`TwoClassPosteriorOracle`]
//! draws two-class posteriors `(p, 1 - p)` with `p ~ Beta(alpha, beta)`; its
//! limiting Inception Score is estimated by brute force.

use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};

use crate::error::{Error, Result};
use crate::extrapolate::{self, fit_inverse_n, ExtrapolationFit, Metric, ScoreSeries};
use crate::frechet::{self, FeatureMatrix, GaussianStats, PreparedReference};
use crate::gaussianize::{self, Transform};
use crate::inception::{self, PosteriorMatrix};
use crate::lds::{self, SamplerSpec, DEFAULT_START_INDEX};
use crate::matrix::Matrix;
use crate::seed;

/// A unit-cube sampler plus the transform that makes it Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentSampler {
    pub spec: SamplerSpec,
    pub transform: Transform,
}

impl LatentSampler {
    pub fn normal_points(&self, start_index: u64, n: usize) -> Result<Matrix> {
        Ok(gaussianize::normal_points(&self.spec, self.transform, start_index, n)?.points)
    }
}

/// Sampler recipe used by the studies; dimension and seed are filled in per
/// cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerChoice {
    /// IID uniforms through the normal quantile (plain Monte Carlo).
    Normal,
    /// Scrambled Sobol through the normal quantile.
    SobolInv,
    /// Scrambled Sobol through Box-Muller.
    SobolBm,
}

impl SamplerChoice {
    pub const ALL: [SamplerChoice; 3] = [Self::Normal, Self::SobolInv, Self::SobolBm];

    pub fn name(self) -> &'static str {
        match self {
            Self::Normal => "normal",
            Self::SobolInv => "sobol_inv",
            Self::SobolBm => "sobol_bm",
        }
    }

    pub fn is_sobol(self) -> bool {
        !matches!(self, Self::Normal)
    }

    pub fn latent(self, dimension: usize, seed: u64) -> LatentSampler {
        let spec = match self {
            Self::Normal => SamplerSpec::iid(dimension, seed),
            Self::SobolInv | Self::SobolBm => SamplerSpec::sobol(dimension, seed),
        };
        let transform = match self {
            Self::SobolBm => Transform::BoxMuller,
            _ => Transform::Icdf,
        };
        LatentSampler { spec, transform }
    }
}

/// `x = A z + b` with `z ~ N(0, I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineGaussianGenerator {
    /// `d_out x d_in`, row-major.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl AffineGaussianGenerator {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weight.rows() != bias.len() || weight.cols() == 0 {
            return Err(Error::Shape(format!(
                "weight is {}x{} but bias has {} entries",
                weight.rows(),
                weight.cols(),
                bias.len()
            )));
        }
        if weight.first_non_finite().is_some() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("generator parameters must be finite".into()));
        }
        Ok(Self { weight, bias })
    }

    /// `scale * I` in `d` dimensions with the given bias.
    pub fn scaled_identity(d: usize, scale: f64, bias: Vec<f64>) -> Result<Self> {
        let mut w = Matrix::zeros(d, d);
        for i in 0..d {
            w.row_mut(i)[i] = scale;
        }
        Self::new(w, bias)
    }

    /// Diagonal weight `diag(scales)`.
    pub fn diagonal(scales: &[f64], bias: Vec<f64>) -> Result<Self> {
        let d = scales.len();
        let mut w = Matrix::zeros(d, d);
        for (i, &s) in scales.iter().enumerate() {
            w.row_mut(i)[i] = s;
        }
        Self::new(w, bias)
    }

    /// `A = I_embed + noise * G / sqrt(d_in)` with `G` standard normal
    /// (seeded); `I_embed` is the identity on the leading `min(d_out, d_in)`
    /// coordinates.
    pub fn random(d_out: usize, d_in: usize, noise: f64, bias_scale: f64, seed_value: u64) -> Result<Self> {
        let mut rng = seed::rng(seed_value);
        let mut w = Matrix::zeros(d_out, d_in);
        for i in 0..d_out {
            for j in 0..d_in {
                let g: f64 = StandardNormal.sample(&mut rng);
                w.row_mut(i)[j] = if i == j { 1.0 } else { 0.0 } + noise * g / (d_in as f64).sqrt();
            }
        }
        let bias = (0..d_out)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                bias_scale * g
            })
            .collect::<Vec<f64>>();
        Self::new(w, bias)
    }

    pub fn latent_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.rows()
    }

    /// Exact feature distribution `N(b, A A^T)`.
    pub fn pushforward(&self) -> GaussianStats {
        let d = self.feature_dim();
        let mut cov = Matrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let v: f64 = self
                    .weight
                    .row(i)
                    .iter()
                    .zip(self.weight.row(j))
                    .map(|(a, b)| a * b)
                    .sum();
                cov.row_mut(i)[j] = v;
                cov.row_mut(j)[i] = v;
            }
        }
        GaussianStats {
            mean: self.bias.clone(),
            cov,
            n_source: 0,
        }
    }

    /// Applies the generator to latent rows.
    pub fn apply(&self, latent: &Matrix) -> Result<FeatureMatrix> {
        if latent.cols() != self.latent_dim() {
            return Err(Error::Shape(format!(
                "latent points have dimension {}, generator expects {}",
                latent.cols(),
                self.latent_dim()
            )));
        }
        let d = self.feature_dim();
        let mut out = Matrix::zeros(latent.rows(), d);
        for (r, z) in latent.iter_rows().enumerate() {
            let row = out.row_mut(r);
            for (i, x) in row.iter_mut().enumerate() {
                *x = self.bias[i]
                    + self
                        .weight
                        .row(i)
                        .iter()
                        .zip(z)
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
            }
        }
        FeatureMatrix::new(out)
    }
}

/// Features `A z_i + b` for normal points `z_i` from `sampler`.
pub fn generate_features(
    generator: &AffineGaussianGenerator,
    sampler: &LatentSampler,
    start_index: u64,
    n: usize,
) -> Result<FeatureMatrix> {
    if sampler.spec.dimension != generator.latent_dim() {
        return Err(Error::Shape(format!(
            "sampler dimension {} does not match latent dimension {}",
            sampler.spec.dimension,
            generator.latent_dim()
        )));
    }
    generator.apply(&sampler.normal_points(start_index, n)?)
}

/// FID between the generator's exact feature distribution and a reference
/// Gaussian; no sampling involved.
pub fn true_fid(generator: &AffineGaussianGenerator, reference: &GaussianStats) -> Result<f64> {
    frechet::frechet_distance(&generator.pushforward(), reference)
}

/// Two-class posteriors `(p, 1 - p)` with `p ~ Beta(alpha, beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoClassPosteriorOracle {
    pub alpha: f64,
    pub beta: f64,
}

impl TwoClassPosteriorOracle {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::Config(format!(
                "Beta parameters must be positive, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }
}

/// Quantile of `Beta(alpha, beta)`: a bracketing search on the regularized
/// incomplete beta function that takes Newton steps when they stay inside
/// the bracket and bisects otherwise. Stops once the bracket or step is
/// below `1e-12` (at most 100 iterations).
pub fn beta_icdf(u: f64, alpha: f64, beta: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let log_norm = ln_beta(alpha, beta);
    let mut x = alpha / (alpha + beta);
    for _ in 0..100 {
        let f = beta_reg(alpha, beta, x) - u;
        if f == 0.0 {
            return x;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let density = ((alpha - 1.0) * x.ln() + (beta - 1.0) * (1.0 - x).ln() - log_norm).exp();
        let newton = x - f / density;
        let next = if density.is_finite() && density > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let step = (next - x).abs();
        x = next;
        if step < 1e-12 || hi - lo < 1e-12 {
            break;
        }
    }
    x
}

/// Posterior rows `(p_i, 1 - p_i)` with `p_i` the Beta quantile of the
/// sampler's 1-D uniforms.
pub fn generate_posteriors(
    oracle: &TwoClassPosteriorOracle,
    sampler: &SamplerSpec,
    start_index: u64,
    n: usize,
) -> Result<PosteriorMatrix> {
    if sampler.dimension != 1 {
        return Err(Error::Shape(format!(
            "posterior oracle draws 1-D uniforms, sampler has dimension {}",
            sampler.dimension
        )));
    }
    if n == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let u = lds::unit_points(sampler, start_index, n)?.points;
    let mut rows = Matrix::zeros(n, 2);
    for (i, &ui) in u.as_slice().iter().enumerate() {
        let p = beta_icdf(ui, oracle.alpha, oracle.beta);
        rows.row_mut(i).copy_from_slice(&[p, 1.0 - p]);
    }
    PosteriorMatrix::new(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueIs {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

pub const DEFAULT_ORACLE_SAMPLES: usize = 10_000_000;
const ORACLE_CHUNK: usize = 1_000_000;

#[inline]
fn neg_entropy(p: f64) -> f64 {
    let xlx = |x: f64| if x > 0.0 { x * x.ln() } else { 0.0 };
    xlx(p) + xlx(1.0 - p)
}

/// Limiting Inception Score `exp(E[p ln p + (1-p) ln(1-p)] + H(p_bar))`,
/// with the expectation estimated from `samples` Beta draws and the
/// marginal `p_bar = alpha / (alpha + beta)` exact. The standard error comes
/// from the delta method.
pub fn true_is(oracle: &TwoClassPosteriorOracle, samples: usize, seed_value: u64) -> Result<TrueIs> {
    if samples < 1_000_000 {
        return Err(Error::Config(format!(
            "brute-force IS needs at least 10^6 samples, got {samples}"
        )));
    }
    let dist = Beta::new(oracle.alpha, oracle.beta)
        .map_err(|e| Error::Config(format!("invalid Beta parameters: {e}")))?;
    let chunks = samples.div_ceil(ORACLE_CHUNK);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = ORACLE_CHUNK.min(samples - c * ORACLE_CHUNK);
            let mut rng = seed::rng(seed::derive_seed(seed_value, &[c as u64]));
            (0..len).fold((0.0, 0.0), |(s, s2), _| {
                let g = neg_entropy(dist.sample(&mut rng));
                (s + g, s2 + g * g)
            })
        })
        .collect();
    let (s, s2) = sums
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    let m = samples as f64;
    let mean = s / m;
    let var = ((s2 - m * mean * mean) / (m - 1.0)).max(0.0);
    let value = (mean - neg_entropy(oracle.mean())).exp();
    Ok(TrueIs {
        value,
        std_error: value * (var / m).sqrt(),
        samples,
    })
}

/// What a study scores.
#[derive(Debug, Clone)]
pub enum StudyOracle {
    Gaussian {
        generator: AffineGaussianGenerator,
        reference: GaussianStats,
    },
    Posterior {
        oracle: TwoClassPosteriorOracle,
    },
}

impl StudyOracle {
    pub fn metric(&self) -> Metric {
        match self {
            Self::Gaussian { .. } => Metric::Fid,
            Self::Posterior { .. } => Metric::Is,
        }
    }

    fn latent_dim(&self) -> usize {
        match self {
            Self::Gaussian { generator, .. } => generator.latent_dim(),
            Self::Posterior { .. } => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub samplers: Vec<SamplerChoice>,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    /// Points per set for the discrepancy summary (0 disables it).
    #[serde(default = "default_discrepancy_points")]
    pub discrepancy_points: usize,
}

fn default_discrepancy_points() -> usize {
    256
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samplers.is_empty() {
            return Err(Error::Config("a study needs at least one sampler".into()));
        }
        if self.n_grid.len() < 3 || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "n_grid needs at least 3 strictly increasing sizes".into(),
            ));
        }
        if self.replicates < 2 {
            return Err(Error::Config("a study needs at least 2 replicates".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCell {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancySummary {
    pub points: usize,
    pub sets: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSeries {
    pub sampler: SamplerChoice,
    pub cells: Vec<StudyCell>,
    /// Fit of the mean score against `1/n`.
    pub mean_fit: ExtrapolationFit,
    /// Mean and standard error of the per-replicate slopes.
    pub slope_mean: f64,
    pub slope_se: f64,
    /// Mean and standard error of the per-replicate intercepts.
    pub intercept_mean: f64,
    pub intercept_se: f64,
    pub discrepancy: Option<DiscrepancySummary>,
}

/// Variance ratio of a baseline sampler over another sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FValues {
    pub sampler: SamplerChoice,
    pub baseline: SamplerChoice,
    /// `(n, var_baseline / var_sampler)` per grid cell.
    pub per_cell: Vec<(usize, f64)>,
    /// Mean of the per-cell ratios.
    pub mean_per_cell: f64,
    /// Summed baseline variance over summed sampler variance.
    pub pooled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub metric: Metric,
    pub replicates: usize,
    pub seed: u64,
    pub series: Vec<SamplerSeries>,
    pub f_values: Vec<FValues>,
}

impl StudyReport {
    pub fn series_for(&self, sampler: SamplerChoice) -> Option<&SamplerSeries> {
        self.series.iter().find(|s| s.sampler == sampler)
    }

    pub fn f_values_for(&self, sampler: SamplerChoice) -> Option<&FValues> {
        self.f_values.iter().find(|f| f.sampler == sampler)
    }
}

/// Seed for one study cell: `derive_seed(run_seed, [sampler, replicate, n])`.
pub fn cell_seed(run_seed: u64, sampler: usize, replicate: usize, n_index: usize) -> u64 {
    seed::derive_seed(run_seed, &[sampler as u64, replicate as u64, n_index as u64])
}

/// One fresh score for the oracle at sample size `n`.
pub fn oracle_score(
    oracle: &StudyOracle,
    reference: Option<&PreparedReference>,
    sampler: SamplerChoice,
    n: usize,
    seed_value: u64,
) -> Result<f64> {
    match oracle {
        StudyOracle::Gaussian { generator, .. } => {
            let latent = sampler.latent(generator.latent_dim(), seed_value);
            let features = generate_features(generator, &latent, DEFAULT_START_INDEX, n)?;
            let reference = reference.expect("Gaussian studies prepare their reference");
            reference.distance_to_sample(&frechet::gaussian_stats(&features)?)
        }
        StudyOracle::Posterior { oracle } => {
            let spec = sampler.latent(1, seed_value).spec;
            let posteriors = generate_posteriors(oracle, &spec, DEFAULT_START_INDEX, n)?;
            Ok(inception::inception_score(&posteriors))
        }
    }
}

fn discrepancy_summary(
    sampler: SamplerChoice,
    dimension: usize,
    points: usize,
    sets: usize,
    run_seed: u64,
    sampler_index: usize,
) -> Result<DiscrepancySummary> {
    let values = (0..sets)
        .into_par_iter()
        .map(|r| {
            let spec = sampler
                .latent(dimension, cell_seed(run_seed, sampler_index, r, usize::MAX))
                .spec;
            Ok(lds::centered_l2_discrepancy(&lds::unit_points(
                &spec,
                DEFAULT_START_INDEX,
                points,
            )?))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(DiscrepancySummary {
        points,
        sets,
        mean: values.iter().sum::<f64>() / sets as f64,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Replicated scores on fresh points for every sampler and grid size, with
/// per-sampler `1/n` fits and variance ratios against the IID sampler.
///
/// Every cell draws its own points; Sobol cells use their cell seed as the
/// scramble seed.
pub fn bias_study(oracle: &StudyOracle, config: &StudyConfig) -> Result<StudyReport> {
    config.validate()?;
    let reference = match oracle {
        StudyOracle::Gaussian { reference, generator } => {
            if reference.dim() != generator.feature_dim() {
                return Err(Error::Shape(format!(
                    "reference dimension {} does not match feature dimension {}",
                    reference.dim(),
                    generator.feature_dim()
                )));
            }
            Some(PreparedReference::new(reference.clone())?)
        }
        StudyOracle::Posterior { .. } => None,
    };
    let grid = &config.n_grid;
    let tasks: Vec<(usize, usize, usize)> = (0..config.samplers.len())
        .flat_map(|s| (0..config.replicates).flat_map(move |r| (0..grid.len()).map(move |i| (s, r, i))))
        .collect();
    let scores = tasks
        .par_iter()
        .map(|&(s, r, i)| {
            oracle_score(
                oracle,
                reference.as_ref(),
                config.samplers[s],
                grid[i],
                cell_seed(config.seed, s, r, i),
            )
        })
        .collect::<Result<Vec<f64>>>()?;

    let per_sampler = config.replicates * grid.len();
    let mut series = Vec::with_capacity(config.samplers.len());
    for (s, &sampler) in config.samplers.iter().enumerate() {
        let block = &scores[s * per_sampler..(s + 1) * per_sampler];
        let at = |r: usize, i: usize| block[r * grid.len() + i];
        let cells: Vec<StudyCell> = grid
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let values: Vec<f64> = (0..config.replicates).map(|r| at(r, i)).collect();
                let (mean, std) = extrapolate::mean_std(&values);
                StudyCell {
                    n,
                    mean,
                    std,
                    scores: values,
                }
            })
            .collect();
        let means = ScoreSeries::new(oracle.metric(), cells.iter().map(|c| (c.n, c.mean)).collect())?;
        let mean_fit = fit_inverse_n(&means, false)?;
        let replicate_fits = (0..config.replicates)
            .map(|r| {
                let series = ScoreSeries::new(
                    oracle.metric(),
                    grid.iter().enumerate().map(|(i, &n)| (n, at(r, i))).collect(),
                )?;
                fit_inverse_n(&series, false)
            })
            .collect::<Result<Vec<_>>>()?;
        let root_r = (config.replicates as f64).sqrt();
        let (slope_mean, slope_sd) =
            extrapolate::mean_std(&replicate_fits.iter().map(|f| f.slope).collect::<Vec<_>>());
        let (intercept_mean, intercept_sd) =
            extrapolate::mean_std(&replicate_fits.iter().map(|f| f.intercept).collect::<Vec<_>>());
        let discrepancy = if config.discrepancy_points > 0 {
            Some(discrepancy_summary(
                sampler,
                oracle.latent_dim(),
                config.discrepancy_points,
                config.replicates.min(10),
                config.seed,
                s,
            )?)
        } else {
            None
        };
        series.push(SamplerSeries {
            sampler,
            cells,
            mean_fit,
            slope_mean,
            slope_se: slope_sd / root_r,
            intercept_mean,
            intercept_se: intercept_sd / root_r,
            discrepancy,
        });
    }

    let f_values = match series.iter().find(|s| s.sampler == SamplerChoice::Normal) {
        Some(baseline) => series
            .iter()
            .filter(|s| s.sampler != SamplerChoice::Normal)
            .map(|s| f_values(baseline, s))
            .collect(),
        None => Vec::new(),
    };
    Ok(StudyReport {
        metric: oracle.metric(),
        replicates: config.replicates,
        seed: config.seed,
        series,
        f_values,
    })
}

fn f_values(baseline: &SamplerSeries, other: &SamplerSeries) -> FValues {
    let per_cell: Vec<(usize, f64)> = baseline
        .cells
        .iter()
        .zip(&other.cells)
        .map(|(b, o)| (b.n, b.std.powi(2) / o.std.powi(2)))
        .collect();
    let mean_per_cell = per_cell.iter().map(|c| c.1).sum::<f64>() / per_cell.len() as f64;
    let pooled = baseline.cells.iter().map(|c| c.std.powi(2)).sum::<f64>()
        / other.cells.iter().map(|c| c.std.powi(2)).sum::<f64>();
    FValues {
        sampler: other.sampler,
        baseline: baseline.sampler,
        per_cell,
        mean_per_cell,
        pooled,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingConfig {
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub sampler: SamplerChoice,
    /// Drive both generators with the same latent points in a replicate.
    pub common_latents: bool,
}

impl Default for CrossingConfig {
    fn default() -> Self {
        Self {
            n_grid: vec![500, 1000, 2000, 3000, 4000, 6000, 8000, 12_000, 16_000, 20_000],
            replicates: 50,
            seed: 0,
            sampler: SamplerChoice::SobolInv,
            common_latents: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingReport {
    pub true_fid_a: f64,
    pub true_fid_b: f64,
    pub n_grid: Vec<usize>,
    pub mean_fid_a: Vec<f64>,
    pub mean_fid_b: Vec<f64>,
    /// First grid size at which the ranking by mean FID differs from the
    /// ranking at the smallest size.
    pub crossing_n: Option<usize>,
    pub intercepts_a: Vec<f64>,
    pub intercepts_b: Vec<f64>,
    /// Fraction of replicates whose intercept ranking matches the true-FID
    /// ranking.
    pub intercept_agreement: f64,
    /// Fraction of replicates whose FID ranking at the smallest size differs
    /// from the ranking at the largest size.
    pub replicate_flip_fraction: f64,
}

type ReplicateFits = (f64, f64, Vec<f64>, Vec<f64>);

/// Scores two generators on the same grid. Each replicate draws one pool of
/// `max(n_grid)` points per generator and evaluates every grid size on a
/// reshuffled prefix of it, then extrapolates each generator's series.
pub fn crossing_study(
    gen_a: &AffineGaussianGenerator,
    gen_b: &AffineGaussianGenerator,
    reference: &GaussianStats,
    config: &CrossingConfig,
) -> Result<CrossingReport> {
    if config.n_grid.len() < 3 || config.n_grid.windows(2).any(|w| w[0] >= w[1]) || config.n_grid[0] < 2 {
        return Err(Error::Config("n_grid needs at least 3 strictly increasing sizes >= 2".into()));
    }
    if config.replicates == 0 {
        return Err(Error::Config("replicates must be at least 1".into()));
    }
    if gen_a.latent_dim() != gen_b.latent_dim() && config.common_latents {
        return Err(Error::Shape("common latents need equal latent dimensions".into()));
    }
    let true_fid_a = true_fid(gen_a, reference)?;
    let true_fid_b = true_fid(gen_b, reference)?;
    let prepared = PreparedReference::new(reference.clone())?;
    let pool = *config.n_grid.last().expect("non-empty grid");

    let per_replicate = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let seed_a = seed::derive_seed(config.seed, &[r as u64, 0]);
            let seed_b = if config.common_latents {
                seed_a
            } else {
                seed::derive_seed(config.seed, &[r as u64, 1])
            };
            let fa = generate_features(gen_a, &config.sampler.latent(gen_a.latent_dim(), seed_a), DEFAULT_START_INDEX, pool)?;
            let fb = generate_features(gen_b, &config.sampler.latent(gen_b.latent_dim(), seed_b), DEFAULT_START_INDEX, pool)?;
            let mut a = Vec::with_capacity(config.n_grid.len());
            let mut b = Vec::with_capacity(config.n_grid.len());
            for (i, &n) in config.n_grid.iter().enumerate() {
                let order = seed::permutation(pool, seed::derive_seed(seed_a, &[i as u64, 7]));
                a.push(prepared.fid_of_rows(fa.matrix(), &order[..n])?);
                let order_b = if config.common_latents {
                    order
                } else {
                    seed::permutation(pool, seed::derive_seed(seed_b, &[i as u64, 7]))
                };
                b.push(prepared.fid_of_rows(fb.matrix(), &order_b[..n])?);
            }
            let fit = |v: &[f64]| -> Result<f64> {
                let s = ScoreSeries::new(Metric::Fid, config.n_grid.iter().copied().zip(v.iter().copied()).collect())?;
                Ok(fit_inverse_n(&s, false)?.intercept)
            };
            Ok((fit(&a)?, fit(&b)?, a, b))
        })
        .collect::<Result<Vec<_>>>()?;

    let m = config.n_grid.len();
    let reps = config.replicates as f64;
    let mean_of = |pick: &dyn Fn(&ReplicateFits) -> f64| {
        per_replicate.iter().map(pick).sum::<f64>() / reps
    };
    let mean_fid_a: Vec<f64> = (0..m).map(|i| mean_of(&|t| t.2[i])).collect();
    let mean_fid_b: Vec<f64> = (0..m).map(|i| mean_of(&|t| t.3[i])).collect();
    let a_better = |a: f64, b: f64| a < b;
    let first = a_better(mean_fid_a[0], mean_fid_b[0]);
    let crossing_n = (1..m)
        .find(|&i| a_better(mean_fid_a[i], mean_fid_b[i]) != first)
        .map(|i| config.n_grid[i]);
    let truth = a_better(true_fid_a, true_fid_b);
    let agree = per_replicate
        .iter()
        .filter(|t| a_better(t.0, t.1) == truth)
        .count();
    let flips = per_replicate
        .iter()
        .filter(|t| a_better(t.2[0], t.3[0]) != a_better(t.2[m - 1], t.3[m - 1]))
        .count();
    Ok(CrossingReport {
        true_fid_a,
        true_fid_b,
        n_grid: config.n_grid.clone(),
        mean_fid_a,
        mean_fid_b,
        crossing_n,
        intercepts_a: per_replicate.iter().map(|t| t.0).collect(),
        intercepts_b: per_replicate.iter().map(|t| t.1).collect(),
        intercept_agreement: agree as f64 / reps,
        replicate_flip_fraction: flips as f64 / reps,
    })
}

/// [`crossing_study`] that fails when the mean-FID ranking never flips.
pub fn crossing_demo(
    gen_a: &AffineGaussianGenerator,
    gen_b: &AffineGaussianGenerator,
    reference: &GaussianStats,
    config: &CrossingConfig,
) -> Result<CrossingReport> {
    let report = crossing_study(gen_a, gen_b, reference, config)?;
    if report.crossing_n.is_none() {
        return Err(Error::Construction(format!(
            "true FIDs {:.4} vs {:.4}; mean FID at n={} is {:.4} vs {:.4} and at n={} is {:.4} vs {:.4}",
            report.true_fid_a,
            report.true_fid_b,
            report.n_grid[0],
            report.mean_fid_a[0],
            report.mean_fid_b[0],
            report.n_grid[report.n_grid.len() - 1],
            report.mean_fid_a[report.n_grid.len() - 1],
            report.mean_fid_b[report.n_grid.len() - 1],
        )));
    }
    Ok(report)
}

/// Standard normal reference `N(0, I_d)`.
pub fn standard_reference(d: usize) -> GaussianStats {
    let mut cov = Matrix::zeros(d, d);
    for i in 0..d {
        cov.row_mut(i)[i] = 1.0;
    }
    GaussianStats {
        mean: vec![0.0; d],
        cov,
        n_source: 0,
    }
}

/// Dimension of [`default_crossing_pair`].
pub const CROSSING_DIM: usize = 16;

/// Two generators against `N(0, I_16)`: `A = 1.05 I` has the smaller true FID
/// (0.04 vs 0.0576 for `B = 0.94 I`) but the larger `1/n` bias, so `A` looks
/// worse at small `n` and better at large `n`.
pub fn default_crossing_pair() -> (AffineGaussianGenerator, AffineGaussianGenerator, GaussianStats) {
    let d = CROSSING_DIM;
    let a = AffineGaussianGenerator::scaled_identity(d, 1.05, vec![0.0; d]).expect("valid generator");
    let b = AffineGaussianGenerator::scaled_identity(d, 0.94, vec![0.0; d]).expect("valid generator");
    (a, b, standard_reference(d))
}
