//! Gaussian statistics of feature sets and the Fréchet distance between them.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;

/// Relative eigenvalue tolerance below which a covariance is rejected.
pub const PSD_TOLERANCE: f64 = 1e-6;
/// Absolute slack on the trace term before it is reported as a failure.
pub const TRACE_TOLERANCE: f64 = 1e-6;
/// Relative asymmetry accepted in a stored covariance.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// `N x d` feature vectors (one row per sample), all finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Matrix,
}

impl FeatureMatrix {
    pub fn new(data: Matrix) -> Result<Self> {
        if data.rows() == 0 {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        if let Some((r, c)) = data.first_non_finite() {
            return Err(Error::Domain(format!(
                "feature matrix has a non-finite value at row {r}, column {c}"
            )));
        }
        Ok(Self { data })
    }

    pub fn n(&self) -> usize {
        self.data.rows()
    }

    pub fn d(&self) -> usize {
        self.data.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.data
    }

    pub fn into_matrix(self) -> Matrix {
        self.data
    }
}

/// Mean vector and covariance matrix of a feature distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major `d x d`.
    pub cov: Matrix,
    /// Number of samples behind the estimate; 0 for analytic moments.
    pub n_source: u64,
}

impl GaussianStats {
    pub fn new(mean: Vec<f64>, cov: Matrix, n_source: u64) -> Result<Self> {
        let s = Self {
            mean,
            cov,
            n_source,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Checks shape, finiteness and symmetry of the covariance.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.cov.rows() != d || self.cov.cols() != d {
            return Err(Error::Shape(format!(
                "mean has {d} entries but covariance is {}x{}",
                self.cov.rows(),
                self.cov.cols()
            )));
        }
        if self.mean.iter().any(|m| !m.is_finite()) || self.cov.first_non_finite().is_some() {
            return Err(Error::Domain("statistics contain non-finite values".into()));
        }
        let scale = self
            .cov
            .as_slice()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..d {
            for j in (i + 1)..d {
                let gap = (self.cov.get(i, j) - self.cov.get(j, i)).abs();
                if gap > SYMMETRY_TOLERANCE * scale {
                    return Err(Error::Domain(format!(
                        "covariance is not symmetric at ({i}, {j}): asymmetry {gap:e}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Adds `eps * I` to the covariance.
    pub fn with_jitter(mut self, eps: f64) -> Self {
        let d = self.dim();
        for i in 0..d {
            self.cov.row_mut(i)[i] += eps;
        }
        self
    }

    pub(crate) fn cov_dmatrix(&self) -> DMatrix<f64> {
        self.cov.to_dmatrix()
    }
}

/// Sample mean and unbiased (`1/(N-1)`) sample covariance of the rows.
pub fn gaussian_stats(features: &FeatureMatrix) -> Result<GaussianStats> {
    stats_of_matrix(features.matrix())
}

pub(crate) fn stats_of_matrix(m: &Matrix) -> Result<GaussianStats> {
    let (n, d) = (m.rows(), m.cols());
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let mut mean = vec![0.0; d];
    for row in m.iter_rows() {
        for (acc, &x) in mean.iter_mut().zip(row) {
            *acc += x;
        }
    }
    mean.iter_mut().for_each(|x| *x /= n as f64);

    let mut centered = DMatrix::<f64>::zeros(n, d);
    for (i, row) in m.iter_rows().enumerate() {
        for j in 0..d {
            centered[(i, j)] = row[j] - mean[j];
        }
    }
    let scatter = centered.tr_mul(&centered) / (n as f64 - 1.0);
    let mut cov = Matrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v = 0.5 * (scatter[(i, j)] + scatter[(j, i)]);
            cov.row_mut(i)[j] = v;
            cov.row_mut(j)[i] = v;
        }
    }
    Ok(GaussianStats {
        mean,
        cov,
        n_source: n as u64,
    })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn check_psd(eigenvalues: &[f64]) -> Result<()> {
    let max = eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    // the 1e-12 floor keeps an all-zero covariance from failing on round-off
    if min < -(PSD_TOLERANCE * max.max(0.0)).max(1e-12) {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
            max_eigenvalue: max,
        });
    }
    Ok(())
}

/// PSD square root `V sqrt(max(L, 0)) V^T`; rejects matrices with
/// significantly negative eigenvalues.
fn psd_sqrt(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m);
    check_psd(eig.eigenvalues.as_slice())?;
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let scaled = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
    Ok(&scaled * eig.eigenvectors.transpose())
}

/// `Tr((A B)^{1/2})` computed as the trace of the PSD root of the symmetric
/// matrix `A^{1/2} B A^{1/2}`.
fn sqrt_product_trace(sqrt_a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut s = sqrt_a * b * sqrt_a;
    symmetrize(&mut s);
    let eig = SymmetricEigen::new(s);
    eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum()
}

fn assemble(mean_a: &[f64], mean_b: &[f64], trace_a: f64, trace_b: f64, root_trace: f64) -> Result<f64> {
    let mean_term: f64 = mean_a
        .iter()
        .zip(mean_b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let trace_term = trace_a + trace_b - 2.0 * root_trace;
    if trace_term < -TRACE_TOLERANCE {
        return Err(Error::Numerical(format!(
            "trace term {trace_term:e} is negative beyond tolerance"
        )));
    }
    Ok((mean_term + trace_term).max(0.0))
}

fn trace(m: &Matrix) -> f64 {
    (0..m.rows()).map(|i| m.get(i, i)).sum()
}

/// `||m_a - m_b||^2 + Tr(C_a + C_b - 2 (C_a C_b)^{1/2})`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "statistics dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let sqrt_a = psd_sqrt(a.cov_dmatrix())?;
    let cov_b = b.cov_dmatrix();
    check_psd(SymmetricEigen::new(cov_b.clone()).eigenvalues.as_slice())?;
    let root_trace = sqrt_product_trace(&sqrt_a, &cov_b);
    assemble(&a.mean, &b.mean, trace(&a.cov), trace(&b.cov), root_trace)
}

/// Reference statistics with their covariance square root precomputed, for
/// scoring many sample sets against the same target.
#[derive(Debug, Clone)]
pub struct PreparedReference {
    stats: GaussianStats,
    sqrt_cov: DMatrix<f64>,
    trace: f64,
    jitter: f64,
}

impl PreparedReference {
    pub fn new(stats: GaussianStats) -> Result<Self> {
        stats.validate()?;
        let sqrt_cov = psd_sqrt(stats.cov_dmatrix())?;
        let trace = trace(&stats.cov);
        Ok(Self {
            stats,
            sqrt_cov,
            trace,
            jitter: 0.0,
        })
    }

    /// Adds `eps * I` to the reference covariance and to every sample
    /// covariance scored against it.
    pub fn with_jitter(stats: GaussianStats, eps: f64) -> Result<Self> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::Config(format!("jitter must be finite and non-negative, got {eps}")));
        }
        let mut prepared = Self::new(stats.with_jitter(eps))?;
        prepared.jitter = eps;
        Ok(prepared)
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn stats(&self) -> &GaussianStats {
        &self.stats
    }

    /// Fréchet distance to sample statistics. Sample covariances are PSD by
    /// construction, so only the reference is eigen-checked.
    pub fn distance_to_sample(&self, sample: &GaussianStats) -> Result<f64> {
        if sample.dim() != self.stats.dim() {
            return Err(Error::Shape(format!(
                "statistics dimensions differ: {} vs {}",
                sample.dim(),
                self.stats.dim()
            )));
        }
        let mut cov = sample.cov_dmatrix();
        for i in 0..cov.nrows() {
            cov[(i, i)] += self.jitter;
        }
        let root_trace = sqrt_product_trace(&self.sqrt_cov, &cov);
        assemble(
            &sample.mean,
            &self.stats.mean,
            trace(&sample.cov) + self.jitter * sample.dim() as f64,
            self.trace,
            root_trace,
        )
    }

    /// FID of the first `n` rows of `rows` (already permuted) against the
    /// reference.
    pub(crate) fn fid_of_rows(&self, features: &Matrix, rows: &[usize]) -> Result<f64> {
        let subset = features.select_rows(rows);
        self.distance_to_sample(&stats_of_matrix(&subset)?)
    }
}

fn check_subset(n: usize, available: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    if n > available {
        return Err(Error::Config(format!(
            "requested {n} rows but only {available} are available"
        )));
    }
    Ok(())
}

/// FID of a seeded random subset of `n` generated rows against `reference`.
pub fn fid_at_n(
    gen_features: &FeatureMatrix,
    reference: &GaussianStats,
    n: usize,
    permutation_seed: u64,
) -> Result<f64> {
    fid_at_n_prepared(
        gen_features,
        &PreparedReference::new(reference.clone())?,
        n,
        permutation_seed,
    )
}

pub fn fid_at_n_prepared(
    gen_features: &FeatureMatrix,
    reference: &PreparedReference,
    n: usize,
    permutation_seed: u64,
) -> Result<f64> {
    check_subset(n, gen_features.n())?;
    let order = seed::permutation(gen_features.n(), permutation_seed);
    reference.fid_of_rows(gen_features.matrix(), &order[..n])
}
