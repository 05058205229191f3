//! Maps unit-cube points to standard normal points.
//!
//! Two transforms are available: the elementwise normal quantile (`Icdf`) and
//! pairwise Box-Muller (`BoxMuller`). The Box-Muller pairing uses dimension
//! `2k` as the radius input and `2k + 1` as the angle input.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lds::{self, SamplerSpec, UnitPointSet};
use crate::matrix::Matrix;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    Icdf,
    BoxMuller,
}

/// Normal draws together with the sampler that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalPointSet {
    pub points: Matrix,
    pub transform: Transform,
    pub source_spec: SamplerSpec,
    pub start_index: u64,
}

impl NormalPointSet {
    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

// Wichura's AS241 (PPND16) coefficients.
#[allow(clippy::excessive_precision)]
const A: [f64; 8] = [
    3.387_132_872_796_366_608e0,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
#[allow(clippy::excessive_precision)]
const B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
#[allow(clippy::excessive_precision)]
const C: [f64; 8] = [
    1.423_437_110_749_683_577_34e0,
    4.630_337_846_156_545_295_9e0,
    5.769_497_221_460_691_405_5e0,
    3.647_848_324_763_204_605_04e0,
    1.270_458_252_452_368_382_58e0,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
#[allow(clippy::excessive_precision)]
const D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87e0,
    1.676_384_830_183_803_849_4e0,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
#[allow(clippy::excessive_precision)]
const E: [f64; 8] = [
    6.657_904_643_501_103_777_2e0,
    5.463_784_911_164_114_369_9e0,
    1.784_826_539_917_291_335_8e0,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
#[allow(clippy::excessive_precision)]
const F: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

#[inline]
fn horner(c: &[f64; 8], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

/// Standard normal quantile `sqrt(2) * erfinv(2u - 1)` via AS241.
pub fn icdf_normal(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!(
            "normal quantile needs 0 < u < 1, got {u}"
        )));
    }
    let q = u - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return Ok(q * horner(&A, r) / horner(&B, r));
    }
    let tail = if q < 0.0 { u } else { 1.0 - u };
    let r = (-tail.ln()).sqrt();
    let z = if r <= 5.0 {
        let r = r - 1.6;
        horner(&C, r) / horner(&D, r)
    } else {
        let r = r - 5.0;
        horner(&E, r) / horner(&F, r)
    };
    Ok(if q < 0.0 { -z } else { z })
}

/// Box-Muller pair: radius `sqrt(-2 ln u_even)`, angle `2 pi u_odd`.
pub fn box_muller(u_even: f64, u_odd: f64) -> Result<(f64, f64)> {
    if !(u_even > 0.0 && u_even <= 1.0) {
        return Err(Error::Domain(format!(
            "Box-Muller radius input must lie in (0, 1], got {u_even}"
        )));
    }
    if !(0.0..1.0).contains(&u_odd) {
        return Err(Error::Domain(format!(
            "Box-Muller angle input must lie in [0, 1), got {u_odd}"
        )));
    }
    let radius = (-2.0 * u_even.ln()).sqrt();
    let (s, c) = (2.0 * PI * u_odd).sin_cos();
    Ok((radius * c, radius * s))
}

/// Applies `transform` to every row of `unit`.
pub fn gaussianize(unit: &Matrix, transform: Transform) -> Result<Matrix> {
    let d = unit.cols();
    let mut out = Matrix::zeros(unit.rows(), d);
    match transform {
        Transform::Icdf => {
            for (src, dst) in unit.iter_rows().zip(0..) {
                for (o, &u) in out.row_mut(dst).iter_mut().zip(src) {
                    *o = icdf_normal(u)?;
                }
            }
        }
        Transform::BoxMuller => {
            if !d.is_multiple_of(2) {
                return Err(Error::Shape(format!(
                    "Box-Muller pairs dimensions and needs an even dimension, got {d}"
                )));
            }
            for (src, dst) in unit.iter_rows().zip(0..) {
                let row = out.row_mut(dst);
                for k in 0..d / 2 {
                    let (z0, z1) = box_muller(src[2 * k], src[2 * k + 1])?;
                    row[2 * k] = z0;
                    row[2 * k + 1] = z1;
                }
            }
        }
    }
    Ok(out)
}

pub fn to_normal(unit: &UnitPointSet, transform: Transform) -> Result<NormalPointSet> {
    Ok(NormalPointSet {
        points: gaussianize(&unit.points, transform)?,
        transform,
        source_spec: unit.spec,
        start_index: unit.start_index,
    })
}

/// Standard normal points drawn through `spec`. An IID spec with the
/// quantile transform is the plain Monte Carlo baseline.
pub fn normal_points(
    spec: &SamplerSpec,
    transform: Transform,
    start_index: u64,
    n: usize,
) -> Result<NormalPointSet> {
    if transform == Transform::BoxMuller && !spec.dimension.is_multiple_of(2) {
        return Err(Error::Shape(format!(
            "Box-Muller needs an even dimension, got {}",
            spec.dimension
        )));
    }
    to_normal(&lds::unit_points(spec, start_index, n)?, transform)
}

pub const DEFAULT_CACHE_CAPACITY: usize = 1_000_000;

/// Pool of pre-generated normal points handed out in shuffled order.
///
/// Each refill generates the next `capacity` points of the underlying
/// sequence and permutes them with a stream derived from `shuffle_seed` and
/// the refill count. Rows left over when a request no longer fits are
/// discarded.
#[derive(Debug, Clone)]
pub struct CachedSampler {
    spec: SamplerSpec,
    transform: Transform,
    capacity: usize,
    shuffle_seed: u64,
    refill_count: u64,
    next_index: u64,
    cache: Matrix,
    cursor: usize,
}

impl CachedSampler {
    pub fn new(
        spec: SamplerSpec,
        transform: Transform,
        capacity: usize,
        shuffle_seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        if capacity == 0 {
            return Err(Error::Config("cache capacity must be positive".into()));
        }
        if transform == Transform::BoxMuller && !spec.dimension.is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "Box-Muller needs an even dimension, got {}",
                spec.dimension
            )));
        }
        Ok(Self {
            spec,
            transform,
            capacity,
            shuffle_seed,
            refill_count: 0,
            next_index: lds::DEFAULT_START_INDEX,
            cache: Matrix::zeros(0, spec.dimension),
            cursor: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn refill_count(&self) -> u64 {
        self.refill_count
    }

    pub fn remaining(&self) -> usize {
        self.cache.rows() - self.cursor
    }

    fn refill(&mut self) -> Result<()> {
        let fresh = normal_points(&self.spec, self.transform, self.next_index, self.capacity)?;
        self.next_index += self.capacity as u64;
        let order = seed::permutation(
            self.capacity,
            seed::derive_seed(self.shuffle_seed, &[self.refill_count]),
        );
        self.cache = fresh.points.select_rows(&order);
        self.cursor = 0;
        self.refill_count += 1;
        Ok(())
    }

    /// Next `batch` rows of the shuffled cache, without replacement.
    pub fn draw(&mut self, batch: usize) -> Result<NormalPointSet> {
        if batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if batch > self.capacity {
            return Err(Error::Config(format!(
                "batch {batch} exceeds cache capacity {}",
                self.capacity
            )));
        }
        if self.remaining() < batch {
            self.refill()?;
        }
        let rows: Vec<usize> = (self.cursor..self.cursor + batch).collect();
        self.cursor += batch;
        Ok(NormalPointSet {
            points: self.cache.select_rows(&rows),
            transform: self.transform,
            source_spec: self.spec,
            start_index: self.next_index - self.capacity as u64,
        })
    }
}
