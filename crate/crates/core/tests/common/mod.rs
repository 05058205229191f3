//! Independent oracles shared by the numerics and acceptance targets.
#![allow(dead_code)]
#![allow(clippy::excessive_precision)]

use libm::erfc;
use qmc_metrics::icdf_normal;

/// Normal quantile by Newton iteration on the erfc-based CDF, evaluating the
/// upper tail directly so that `u` near 1 keeps its precision.
pub fn quantile_oracle(u: f64) -> f64 {
    let mut x = icdf_normal(u).unwrap();
    for _ in 0..3 {
        let residual = if u < 0.5 {
            0.5 * erfc(-x / std::f64::consts::SQRT_2) - u
        } else {
            (1.0 - u) - 0.5 * erfc(x / std::f64::consts::SQRT_2)
        };
        let density = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        x -= residual / density;
    }
    x
}

// 40-digit reference values
pub const QUANTILE_VALUES: [(f64, f64); 8] = [
    (5e-6, -4.417_173_413_469_022_089_1),
    (1e-10, -6.361_340_902_404_056_199_1),
    (0.025, -1.959_963_984_540_054_211_8),
    (0.3, -0.524_400_512_708_040_815_97),
    (0.5, 0.0),
    (0.975, 1.959_963_984_540_053_855_6),
    (0.99999, 4.264_890_793_923_840_769_9),
    (0.999_999_999_999_090_5, 7.047_700_256_664_408_725_4),
];

/// Van der Corput value of the Gray code of `k`.
pub fn gray_radical_inverse(k: u64) -> f64 {
    let mut k = k ^ (k >> 1);
    let (mut value, mut scale) = (0.0, 0.5);
    while k > 0 {
        if k & 1 == 1 {
            value += scale;
        }
        k >>= 1;
        scale *= 0.5;
    }
    value
}

