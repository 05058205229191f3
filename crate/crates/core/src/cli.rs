//! Command-line front end.
//!
//! Exit status is 0 on success, 1 for usage errors and 2 for data or
//! numerical errors. Every command logs its resolved configuration as one
//! JSON line on stderr, and every `--json FILE` output carries `"schema": 1`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::extrapolate::{score_infinity, BatchScheme, InfinityConfig, InfinityResult, Resample, ScorePool};
use crate::frechet::{self, PreparedReference};
use crate::gaussianize::{self, Transform};
use crate::inception;
use crate::io::{self, Dtype};
use crate::lds::{self, SamplerSpec, DEFAULT_START_INDEX};
use crate::matrix::Matrix;
use crate::oracles::{
    self, AffineGaussianGenerator, CrossingConfig, SamplerChoice, StudyConfig, StudyOracle,
    TwoClassPosteriorOracle, DEFAULT_ORACLE_SAMPLES,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const THREADS_ENV: &str = "QMC_METRICS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "qmc-metrics", version, about = "Effectively unbiased FID and Inception Score")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Kind {
    Uniform,
    Sobol,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum PointTransform {
    /// Unit-cube points as generated.
    Unit,
    /// Standard normal through the normal quantile.
    Icdf,
    /// Standard normal through Box-Muller.
    Bm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SchemeArg {
    N,
    InvN,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ResampleArg {
    Shuffle,
    Replacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DtypeArg {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OracleArg {
    Gaussian,
    Posterior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SamplerArg {
    Normal,
    SobolInv,
    SobolBm,
}

impl From<SamplerArg> for SamplerChoice {
    fn from(s: SamplerArg) -> Self {
        match s {
            SamplerArg::Normal => SamplerChoice::Normal,
            SamplerArg::SobolInv => SamplerChoice::SobolInv,
            SamplerArg::SobolBm => SamplerChoice::SobolBm,
        }
    }
}

impl From<DtypeArg> for Dtype {
    fn from(d: DtypeArg) -> Self {
        match d {
            DtypeArg::F32 => Dtype::F32,
            DtypeArg::F64 => Dtype::F64,
        }
    }
}

/// Flags shared by `fid-infinity` and `is-infinity`.
#[derive(Debug, clap::Args)]
struct InfinityArgs {
    /// Largest batch size; defaults to the number of rows in the file.
    #[arg(long)]
    pool_size: Option<usize>,
    /// Number of batch sizes in the schedule.
    #[arg(long, default_value_t = 15)]
    points: usize,
    #[arg(long, default_value_t = 5000)]
    min_batch: usize,
    #[arg(long, value_enum, default_value = "n")]
    scheme: SchemeArg,
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    /// Weight the fit by batch size.
    #[arg(long)]
    weighted: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "shuffle")]
    resample: ResampleArg,
    #[arg(long)]
    json: Option<PathBuf>,
}

impl InfinityArgs {
    fn config(&self, rows: usize) -> InfinityConfig {
        InfinityConfig {
            pool_size: self.pool_size.unwrap_or(rows),
            num_points: self.points,
            min_batch: self.min_batch,
            scheme: match self.scheme {
                SchemeArg::N => BatchScheme::RegularInN,
                SchemeArg::InvN => BatchScheme::RegularInInvN,
            },
            replicates: self.replicates,
            weighted: self.weighted,
            resample: match self.resample {
                ResampleArg::Shuffle => Resample::Shuffle,
                ResampleArg::Replacement => Resample::WithReplacement,
            },
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write unit-cube or normal points to an FMAT file.
    Sample {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Plain (unscrambled) Sobol points.
        #[arg(long)]
        no_scramble: bool,
        #[arg(long, value_enum, default_value = "unit")]
        transform: PointTransform,
        /// Index of the first point (Sobol only).
        #[arg(long, default_value_t = DEFAULT_START_INDEX)]
        start: u64,
        #[arg(long, value_enum, default_value = "f64")]
        dtype: DtypeArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Mean and covariance of a feature file, written as GSTA.
    Stats {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// FID of generated features against reference statistics.
    Fid {
        #[arg(long = "gen")]
        generated: PathBuf,
        #[arg(long)]
        ref_stats: PathBuf,
        /// Score a seeded random subset of this many rows.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Add EPS * I to both covariances.
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Inception Score of a posterior matrix.
    Is {
        #[arg(long)]
        posteriors: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        /// Report mean and std over this many disjoint blocks.
        #[arg(long)]
        splits: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Extrapolated FID at infinitely many samples.
    FidInfinity {
        #[arg(long = "gen")]
        generated: PathBuf,
        #[arg(long)]
        ref_stats: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        #[command(flatten)]
        args: InfinityArgs,
    },
    /// Extrapolated Inception Score at infinitely many samples.
    IsInfinity {
        #[arg(long)]
        posteriors: PathBuf,
        #[command(flatten)]
        args: InfinityArgs,
    },
    /// Replicated oracle study of bias and variance per sampler.
    BiasStudy {
        #[arg(long, value_enum)]
        oracle: OracleArg,
        /// JSON study description; every field is optional.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_csv: Option<PathBuf>,
        #[arg(long)]
        out_json: Option<PathBuf>,
    },
    /// Generator pair whose FID_n ranking flips with n.
    CrossingDemo {
        #[arg(long)]
        out_csv: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        replicates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "sobol-inv")]
        sampler: SamplerArg,
        /// Draw separate latents for the two generators.
        #[arg(long)]
        independent_latents: bool,
    },
}

/// Generator recipe in a study file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    /// `I_embed + noise * G / sqrt(d_in)` with a Gaussian bias of scale `bias_scale`.
    Random {
        d_out: usize,
        d_in: usize,
        noise: f64,
        bias_scale: f64,
        seed: u64,
    },
    ScaledIdentity {
        dim: usize,
        scale: f64,
    },
    Diagonal {
        scales: Vec<f64>,
    },
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec::Random {
            d_out: 16,
            d_in: 16,
            noise: 0.3,
            bias_scale: 0.05,
            seed: 1,
        }
    }
}

impl GeneratorSpec {
    pub fn build(&self) -> Result<AffineGaussianGenerator> {
        match self {
            GeneratorSpec::Random {
                d_out,
                d_in,
                noise,
                bias_scale,
                seed,
            } => AffineGaussianGenerator::random(*d_out, *d_in, *noise, *bias_scale, *seed),
            GeneratorSpec::ScaledIdentity { dim, scale } => {
                AffineGaussianGenerator::scaled_identity(*dim, *scale, vec![0.0; *dim])
            }
            GeneratorSpec::Diagonal { scales } => AffineGaussianGenerator::diagonal(scales, vec![0.0; scales.len()]),
        }
    }
}

/// Contents of a `bias-study --config` file. The reference is always
/// `N(0, I)` in the generator's feature dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyFile {
    pub samplers: Vec<SamplerChoice>,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub discrepancy_points: usize,
    pub generator: GeneratorSpec,
    pub alpha: f64,
    pub beta: f64,
    /// Beta draws behind the brute-force limiting IS.
    pub oracle_samples: usize,
}

impl Default for StudyFile {
    fn default() -> Self {
        Self {
            samplers: SamplerChoice::ALL.to_vec(),
            n_grid: vec![500, 1000, 2000, 3000, 5000, 7500, 10_000, 15_000, 20_000],
            replicates: 50,
            seed: 0,
            discrepancy_points: 256,
            generator: GeneratorSpec::default(),
            alpha: 2.0,
            beta: 5.0,
            oracle_samples: DEFAULT_ORACLE_SAMPLES,
        }
    }
}

impl StudyFile {
    pub fn study_config(&self) -> StudyConfig {
        StudyConfig {
            samplers: self.samplers.clone(),
            n_grid: self.n_grid.clone(),
            replicates: self.replicates,
            seed: self.seed,
            discrepancy_points: self.discrepancy_points,
        }
    }
}

/// Runs the CLI on `args` (program name first) and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return 1;
    }
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got {raw:?}"))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn log_config(command: &str, config: Value) {
    eprintln!("{}", json!({ "command": command, "config": config }));
}

fn write_json(path: &Path, command: &str, mut body: Value) -> Result<()> {
    if let Value::Object(map) = &mut body {
        map.insert("schema".into(), json!(SCHEMA_VERSION));
        map.insert("command".into(), json!(command));
    }
    let mut text = serde_json::to_string_pretty(&body).expect("JSON values serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn maybe_json(path: &Option<PathBuf>, command: &str, body: impl FnOnce() -> Value) -> Result<()> {
    match path {
        Some(p) => write_json(p, command, body()),
        None => Ok(()),
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Sample {
            kind,
            dim,
            n,
            seed,
            no_scramble,
            transform,
            start,
            dtype,
            out,
            json,
        } => {
            let spec = match kind {
                Kind::Uniform => SamplerSpec::iid(dim, seed),
                Kind::Sobol if no_scramble => SamplerSpec::sobol_unscrambled(dim),
                Kind::Sobol => SamplerSpec::sobol(dim, seed),
            };
            let config = json!({
                "kind": kind, "dim": dim, "n": n, "seed": seed, "scrambled": spec.scrambled,
                "transform": transform, "start": start, "dtype": Dtype::from(dtype), "out": out,
            });
            log_config("sample", config.clone());
            let points = match transform {
                PointTransform::Unit => lds::unit_points(&spec, start, n)?.points,
                PointTransform::Icdf => gaussianize::normal_points(&spec, Transform::Icdf, start, n)?.points,
                PointTransform::Bm => gaussianize::normal_points(&spec, Transform::BoxMuller, start, n)?.points,
            };
            io::save_fmat(&out, &points, dtype.into())?;
            println!("wrote {}x{} points to {}", points.rows(), points.cols(), out.display());
            maybe_json(&json, "sample", || {
                json!({ "rows": points.rows(), "cols": points.cols(), "config": config })
            })
        }
        Command::Stats { features, out, json } => {
            let config = json!({ "features": features, "out": out });
            log_config("stats", config.clone());
            let f = io::load_features(&features)?;
            let stats = frechet::gaussian_stats(&f)?;
            io::save_stats(&out, &stats)?;
            println!("wrote statistics of {} rows in dimension {} to {}", stats.n_source, stats.dim(), out.display());
            maybe_json(&json, "stats", || json!({ "stats": stats, "config": config }))
        }
        Command::Fid {
            generated,
            ref_stats,
            n,
            seed,
            jitter,
            json,
        } => {
            let config = json!({ "gen": generated, "ref_stats": ref_stats, "n": n, "seed": seed, "jitter": jitter });
            log_config("fid", config.clone());
            let features = io::load_features(&generated)?;
            let reference = io::load_stats(&ref_stats)?;
            let prepared = PreparedReference::with_jitter(reference, jitter)?;
            let score = match n {
                Some(n) => frechet::fid_at_n_prepared(&features, &prepared, n, seed)?,
                None => prepared.distance_to_sample(&frechet::gaussian_stats(&features)?)?,
            };
            println!("{score}");
            maybe_json(&json, "fid", || {
                json!({ "fid": score, "n": n.unwrap_or(features.n()), "config": config })
            })
        }
        Command::Is {
            posteriors,
            n,
            splits,
            seed,
            json,
        } => {
            let config = json!({ "posteriors": posteriors, "n": n, "splits": splits, "seed": seed });
            log_config("is", config.clone());
            let p = io::load_posteriors(&posteriors)?;
            let body = match (splits, n) {
                (Some(_), Some(_)) => {
                    return Err(Error::Config("--n and --splits cannot be combined".into()));
                }
                (Some(s), None) => {
                    let r = inception::is_with_splits(&p, s, seed)?;
                    println!("{} {}", r.mean, r.std);
                    json!({ "mean": r.mean, "std": r.std, "splits": s })
                }
                (None, n) => {
                    let score = match n {
                        Some(n) => inception::is_at_n(&p, n, seed)?,
                        None => inception::inception_score(&p),
                    };
                    println!("{score}");
                    json!({ "is": score, "n": n.unwrap_or(p.n()) })
                }
            };
            maybe_json(&json, "is", || with_config(body, config))
        }
        Command::FidInfinity {
            generated,
            ref_stats,
            jitter,
            args,
        } => {
            let features = io::load_features(&generated)?;
            let infinity = args.config(features.n());
            let config = json!({
                "gen": generated, "ref_stats": ref_stats, "jitter": jitter,
                "seed": args.seed, "infinity": infinity,
            });
            log_config("fid-infinity", config.clone());
            let prepared = PreparedReference::with_jitter(io::load_stats(&ref_stats)?, jitter)?;
            let result = score_infinity(
                ScorePool::Fid {
                    features: &features,
                    reference: &prepared,
                },
                &infinity,
                args.seed,
            )?;
            report_infinity("fid-infinity", &result, &args.json, config)
        }
        Command::IsInfinity { posteriors, args } => {
            let p = io::load_posteriors(&posteriors)?;
            let infinity = args.config(p.n());
            let config = json!({ "posteriors": posteriors, "seed": args.seed, "infinity": infinity });
            log_config("is-infinity", config.clone());
            let result = score_infinity(ScorePool::Is { posteriors: &p }, &infinity, args.seed)?;
            report_infinity("is-infinity", &result, &args.json, config)
        }
        Command::BiasStudy {
            oracle,
            config,
            out_csv,
            out_json,
        } => bias_study(oracle, config.as_deref(), out_csv.as_deref(), out_json.as_deref()),
        Command::CrossingDemo {
            out_csv,
            json,
            replicates,
            seed,
            sampler,
            independent_latents,
        } => {
            let config = CrossingConfig {
                replicates,
                seed,
                sampler: sampler.into(),
                common_latents: !independent_latents,
                ..Default::default()
            };
            let (gen_a, gen_b, reference) = oracles::default_crossing_pair();
            log_config(
                "crossing-demo",
                json!({ "crossing": config, "generator_a": gen_a, "generator_b": gen_b }),
            );
            let report = oracles::crossing_demo(&gen_a, &gen_b, &reference, &config)?;
            println!(
                "true FID a={:.6} b={:.6}; mean-FID ranking flips at n={}; intercept ranking agrees in {:.1}% of replicates",
                report.true_fid_a,
                report.true_fid_b,
                report.crossing_n.expect("crossing_demo guarantees a crossing"),
                100.0 * report.intercept_agreement
            );
            if let Some(path) = &out_csv {
                let rows: Vec<[f64; 3]> = (0..report.n_grid.len())
                    .map(|i| [report.n_grid[i] as f64, report.mean_fid_a[i], report.mean_fid_b[i]])
                    .collect();
                io::save_csv(path, Some(&["n", "mean_fid_a", "mean_fid_b"]), &Matrix::from_rows(&rows)?)?;
            }
            maybe_json(&json, "crossing-demo", || {
                json!({ "report": report, "config": config, "generator_a": gen_a, "generator_b": gen_b })
            })
        }
    }
}

fn with_config(mut body: Value, config: Value) -> Value {
    if let Value::Object(map) = &mut body {
        map.insert("config".into(), config);
    }
    body
}

fn report_infinity(command: &str, result: &InfinityResult, path: &Option<PathBuf>, config: Value) -> Result<()> {
    println!("{}", result.replicate_mean);
    if result.low_fit_quality {
        eprintln!("warning: at least one replicate fit has R^2 below {}", crate::extrapolate::LOW_R_SQUARED);
    }
    maybe_json(path, command, || {
        let intercepts: Vec<f64> = result.replicates.iter().map(|r| r.fit.intercept).collect();
        json!({
            "intercept": result.fit.intercept,
            "slope": result.fit.slope,
            "r_squared": result.fit.r_squared,
            "intercept_se": result.fit.intercept_se,
            "slope_se": result.fit.slope_se,
            "series": result.series.entries,
            "replicate_intercepts": intercepts,
            "replicate_slopes": result.replicates.iter().map(|r| r.fit.slope).collect::<Vec<_>>(),
            "replicate_mean": result.replicate_mean,
            "replicate_std": result.replicate_std,
            "low_fit_quality": result.low_fit_quality,
            "config": config,
        })
    })
}

fn bias_study(oracle: OracleArg, config: Option<&Path>, out_csv: Option<&Path>, out_json: Option<&Path>) -> Result<()> {
    let file = match config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<StudyFile>(&text).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: e.line(),
                message: e.to_string(),
            })?
        }
        None => StudyFile::default(),
    };
    let (study_oracle, truth) = match oracle {
        OracleArg::Gaussian => {
            let generator = file.generator.build()?;
            let reference = oracles::standard_reference(generator.feature_dim());
            let truth = oracles::true_fid(&generator, &reference)?;
            (StudyOracle::Gaussian { generator, reference }, json!({ "true_fid": truth }))
        }
        OracleArg::Posterior => {
            let o = TwoClassPosteriorOracle::new(file.alpha, file.beta)?;
            let t = oracles::true_is(&o, file.oracle_samples, file.seed)?;
            (StudyOracle::Posterior { oracle: o }, json!({ "true_is": t }))
        }
    };
    let oracle_name = match oracle {
        OracleArg::Gaussian => "gaussian",
        OracleArg::Posterior => "posterior",
    };
    log_config("bias-study", json!({ "oracle": oracle_name, "study": file }));
    let report = oracles::bias_study(&study_oracle, &file.study_config())?;
    for s in &report.series {
        println!(
            "{}: slope {:.6} (se {:.6}), intercept {:.6} (se {:.6}), R^2 of mean fit {:.4}",
            s.sampler.name(),
            s.slope_mean,
            s.slope_se,
            s.intercept_mean,
            s.intercept_se,
            s.mean_fit.r_squared
        );
    }
    for f in &report.f_values {
        println!("{}: F pooled {:.3}, mean per cell {:.3}", f.sampler.name(), f.pooled, f.mean_per_cell);
    }
    if let Some(path) = out_csv {
        let mut w = csv::Writer::from_writer(Vec::new());
        let to_err = |e: csv::Error| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        w.write_record(["sampler", "n", "replicate", "score"]).map_err(to_err)?;
        for s in &report.series {
            for c in &s.cells {
                for (r, score) in c.scores.iter().enumerate() {
                    w.write_record([s.sampler.name().to_string(), c.n.to_string(), r.to_string(), score.to_string()])
                        .map_err(to_err)?;
                }
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    }
    if let Some(path) = out_json {
        write_json(
            path,
            "bias-study",
            json!({ "oracle": oracle_name, "truth": truth, "report": report, "config": file }),
        )?;
    }
    Ok(())
}
