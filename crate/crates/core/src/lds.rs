//! Unit-cube point generation: IID uniform streams and (scrambled) Sobol
//! sequences, plus the centered L2 discrepancy used to check their quality.
//!
//! Sobol points are produced as 32-bit integer lattices in Gray-code order
//! from the Joe–Kuo direction numbers. Scrambling is a random linear matrix
//! scramble (a lower-triangular binary matrix applied to every direction
//! number) followed by a random digital shift; both are drawn per dimension
//! from the spec seed. A lattice value `k` maps to the float `(k + 1/2) / 2^32`,
//! so every coordinate lies strictly inside `(0, 1)`.

use std::sync::OnceLock;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;

/// Largest dimension covered by the embedded direction-number table.
pub const MAX_DIMENSION: usize = 4096;

/// Default first index of a Sobol stream. Index 0 is the origin, which the
/// normal quantile maps to minus infinity in the unscrambled case.
pub const DEFAULT_START_INDEX: u64 = 1;

/// Sobol indices are 32-bit: a stream holds at most `2^32` points.
pub const MAX_POINTS: u64 = 1 << 32;

const BITS: usize = 32;
const LATTICE_SCALE: f64 = 1.0 / 4_294_967_296.0;

static JOE_KUO: &str = include_str!("../data/new-joe-kuo-6.4096");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    IidUniform,
    Sobol,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    pub dimension: usize,
    pub seed: u64,
    /// Only meaningful for Sobol.
    pub scrambled: bool,
}

impl SamplerSpec {
    pub fn sobol(dimension: usize, seed: u64) -> Self {
        Self {
            kind: SamplerKind::Sobol,
            dimension,
            seed,
            scrambled: true,
        }
    }

    pub fn sobol_unscrambled(dimension: usize) -> Self {
        Self {
            kind: SamplerKind::Sobol,
            dimension,
            seed: 0,
            scrambled: false,
        }
    }

    pub fn iid(dimension: usize, seed: u64) -> Self {
        Self {
            kind: SamplerKind::IidUniform,
            dimension,
            seed,
            scrambled: false,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(Error::Config("sampler dimension must be at least 1".into()));
        }
        if self.kind == SamplerKind::Sobol && self.dimension > MAX_DIMENSION {
            return Err(Error::UnsupportedDimension {
                requested: self.dimension,
                max: MAX_DIMENSION,
            });
        }
        Ok(())
    }
}

/// `n x d` block of points in the open unit cube.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitPointSet {
    pub points: Matrix,
    pub spec: SamplerSpec,
    pub start_index: u64,
}

impl UnitPointSet {
    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

struct Polynomial {
    degree: usize,
    coefficients: u32,
    initial: Vec<u32>,
}

fn direction_table() -> &'static [Polynomial] {
    static TABLE: OnceLock<Vec<Polynomial>> = OnceLock::new();
    TABLE.get_or_init(|| {
        JOE_KUO
            .lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                let fields: Vec<u32> = line
                    .split_whitespace()
                    .map(|t| t.parse().expect("direction-number table is numeric"))
                    .collect();
                let degree = fields[1] as usize;
                Polynomial {
                    degree,
                    coefficients: fields[2],
                    initial: fields[3..3 + degree].to_vec(),
                }
            })
            .collect()
    })
}

/// Unscrambled direction numbers `v_k` for dimension `dim` (0-based), with
/// `v_k` stored left-aligned in a 32-bit word.
fn direction_numbers(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1 << (BITS - 1 - k);
        }
        return v;
    }
    let poly = &direction_table()[dim - 1];
    let s = poly.degree;
    for (k, vk) in v.iter_mut().enumerate().take(s.min(BITS)) {
        *vk = poly.initial[k] << (BITS - 1 - k);
    }
    for k in s..BITS {
        let mut next = v[k - s] ^ (v[k - s] >> s);
        for l in 1..s {
            if (poly.coefficients >> (s - 1 - l)) & 1 == 1 {
                next ^= v[k - l];
            }
        }
        v[k] = next;
    }
    v
}

/// Applies a lower-triangular binary matrix with unit diagonal to the digits
/// of `x` (most significant digit first). `masks[r]` selects which of the
/// more significant digits are added into digit `r`.
fn linear_scramble(x: u32, masks: &[u32; BITS]) -> u32 {
    let mut out = 0u32;
    for (r, &mask) in masks.iter().enumerate() {
        let pos = BITS - 1 - r;
        let bit = ((x >> pos) & 1) ^ ((x & mask).count_ones() & 1);
        out |= bit << pos;
    }
    out
}

/// A (possibly scrambled) Sobol sequence ready for generation.
#[derive(Debug, Clone)]
pub struct SobolSequence {
    directions: Vec<[u32; BITS]>,
    shifts: Vec<u32>,
}

impl SobolSequence {
    pub fn new(spec: &SamplerSpec) -> Result<Self> {
        spec.validate()?;
        let mut directions: Vec<[u32; BITS]> =
            (0..spec.dimension).map(direction_numbers).collect();
        let mut shifts = vec![0u32; spec.dimension];
        if spec.scrambled {
            let mut rng = seed::rng(spec.seed);
            for (v, shift) in directions.iter_mut().zip(shifts.iter_mut()) {
                let mut masks = [0u32; BITS];
                for (r, mask) in masks.iter_mut().enumerate() {
                    // digits strictly more significant than digit r
                    let above = if r == 0 { 0 } else { !0u32 << (BITS - r) };
                    *mask = rng.next_u32() & above;
                }
                for vk in v.iter_mut() {
                    *vk = linear_scramble(*vk, &masks);
                }
                *shift = rng.next_u32();
            }
        }
        Ok(Self { directions, shifts })
    }

    pub fn dimension(&self) -> usize {
        self.directions.len()
    }

    /// Integer lattice of points `start..start + n`, row-major.
    pub fn lattice(&self, start: u64, n: usize) -> Result<Vec<u32>> {
        let end = start
            .checked_add(n as u64)
            .filter(|&e| e <= MAX_POINTS)
            .ok_or_else(|| {
                Error::Config(format!(
                    "Sobol indices {start}..{start}+{n} exceed the 2^32-point range"
                ))
            })?;
        let d = self.dimension();
        let mut out = Vec::with_capacity(n * d);
        if n == 0 {
            return Ok(out);
        }
        let gray = start ^ (start >> 1);
        let mut state: Vec<u32> = self
            .directions
            .iter()
            .zip(&self.shifts)
            .map(|(v, &shift)| {
                (0..BITS)
                    .filter(|&k| (gray >> k) & 1 == 1)
                    .fold(shift, |acc, k| acc ^ v[k])
            })
            .collect();
        out.extend_from_slice(&state);
        for i in (start + 1)..end {
            let k = i.trailing_zeros() as usize;
            for (x, v) in state.iter_mut().zip(&self.directions) {
                *x ^= v[k];
            }
            out.extend_from_slice(&state);
        }
        Ok(out)
    }

    pub fn points(&self, start: u64, n: usize) -> Result<Matrix> {
        let data = self
            .lattice(start, n)?
            .into_iter()
            .map(lattice_to_unit)
            .collect();
        Matrix::from_vec(n, self.dimension(), data)
    }
}

#[inline]
pub fn lattice_to_unit(k: u32) -> f64 {
    (k as f64 + 0.5) * LATTICE_SCALE
}

/// Points `start_index..start_index + n` of the Sobol sequence described by
/// `spec`.
pub fn sobol_points(spec: &SamplerSpec, start_index: u64, n: usize) -> Result<UnitPointSet> {
    if spec.kind != SamplerKind::Sobol {
        return Err(Error::Config("sobol_points needs a Sobol sampler spec".into()));
    }
    let points = SobolSequence::new(spec)?.points(start_index, n)?;
    Ok(UnitPointSet {
        points,
        spec: *spec,
        start_index,
    })
}

/// Uniform draw in `(0, 1)`: the top 53 bits of a Xoshiro256++ output,
/// offset by half a unit in the last place.
#[inline]
pub(crate) fn open_unit(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// `n` IID uniform points. The stream is Xoshiro256++ seeded through
/// SplitMix64 from `spec.seed`, filled row by row.
pub fn uniform_points(spec: &SamplerSpec, n: usize) -> Result<UnitPointSet> {
    if spec.kind != SamplerKind::IidUniform {
        return Err(Error::Config("uniform_points needs an IID sampler spec".into()));
    }
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let data = (0..n * spec.dimension).map(|_| open_unit(&mut rng)).collect();
    Ok(UnitPointSet {
        points: Matrix::from_vec(n, spec.dimension, data)?,
        spec: *spec,
        start_index: 0,
    })
}

/// Generates a point set for either sampler kind. IID sets ignore
/// `start_index`.
pub fn unit_points(spec: &SamplerSpec, start_index: u64, n: usize) -> Result<UnitPointSet> {
    match spec.kind {
        SamplerKind::Sobol => sobol_points(spec, start_index, n),
        SamplerKind::IidUniform => uniform_points(spec, n),
    }
}

enum Cursor {
    Sobol { seq: SobolSequence, next: u64 },
    Iid { rng: seed::StreamRng },
}

/// Stateful sampler handle that hands out consecutive batches.
pub struct PointSampler {
    spec: SamplerSpec,
    cursor: Cursor,
}

impl PointSampler {
    pub fn new(spec: SamplerSpec, start_index: u64) -> Result<Self> {
        spec.validate()?;
        let cursor = match spec.kind {
            SamplerKind::Sobol => Cursor::Sobol {
                seq: SobolSequence::new(&spec)?,
                next: start_index,
            },
            SamplerKind::IidUniform => Cursor::Iid {
                rng: seed::rng(spec.seed),
            },
        };
        Ok(Self { spec, cursor })
    }

    pub fn spec(&self) -> &SamplerSpec {
        &self.spec
    }

    pub fn next_batch(&mut self, n: usize) -> Result<UnitPointSet> {
        let d = self.spec.dimension;
        let (points, start_index) = match &mut self.cursor {
            Cursor::Sobol { seq, next } => {
                let start = *next;
                let m = seq.points(start, n)?;
                *next += n as u64;
                (m, start)
            }
            Cursor::Iid { rng } => {
                let data = (0..n * d).map(|_| open_unit(rng)).collect();
                (Matrix::from_vec(n, d, data)?, 0)
            }
        };
        Ok(UnitPointSet {
            points,
            spec: self.spec,
            start_index,
        })
    }
}

/// Centered L2 discrepancy (the square root of Hickernell's closed-form
/// double sum). Depends only on the empirical measure of the rows.
pub fn centered_l2_discrepancy(points: &UnitPointSet) -> f64 {
    centered_l2_discrepancy_of(&points.points)
}

pub fn centered_l2_discrepancy_of(points: &Matrix) -> f64 {
    let n = points.rows();
    let d = points.cols();
    assert!(n >= 1, "discrepancy of an empty point set");
    let dev: Vec<f64> = points.as_slice().iter().map(|x| (x - 0.5).abs()).collect();
    let row_dev = |i: usize| &dev[i * d..(i + 1) * d];

    let first = (13.0f64 / 12.0).powi(d as i32);
    let single: f64 = (0..n)
        .map(|i| {
            row_dev(i)
                .iter()
                .map(|&a| 1.0 + 0.5 * a - 0.5 * a * a)
                .product::<f64>()
        })
        .sum();

    let pair = |i: usize, j: usize| -> f64 {
        let (xi, xj) = (points.row(i), points.row(j));
        let (ai, aj) = (row_dev(i), row_dev(j));
        (0..d)
            .map(|k| 1.0 + 0.5 * ai[k] + 0.5 * aj[k] - 0.5 * (xi[k] - xj[k]).abs())
            .product::<f64>()
    };
    let mut double = 0.0;
    for i in 0..n {
        double += pair(i, i);
        for j in (i + 1)..n {
            double += 2.0 * pair(i, j);
        }
    }
    let nf = n as f64;
    let squared = first - 2.0 / nf * single + double / (nf * nf);
    squared.max(0.0).sqrt()
}
