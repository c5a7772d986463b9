//! Real spherical harmonics up to degree 3, in the ordering used by 3DGS exports.

use nalgebra::Vector3;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const MAX_SH_DEGREE: usize = 3;

/// Number of coefficients per color channel for a given degree.
pub fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Inverse of [`coeff_count`].
pub fn degree_for_count(count: usize) -> Option<usize> {
    (0..=MAX_SH_DEGREE).find(|&d| coeff_count(d) == count)
}

/// View-dependent color for unit direction `dir` (camera center towards the Gaussian).
///
/// Follows the usual `+0.5` offset; the result is clamped to `[0, 1]` per channel.
pub fn eval_color(coeffs: &[[f64; 3]], degree: usize, dir: &Vector3<f64>) -> [f64; 3] {
    let mut out = [0.0; 3];
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    for (c, o) in out.iter_mut().enumerate() {
        let sh = |i: usize| coeffs[i][c];
        let mut v = SH_C0 * sh(0);
        if degree > 0 {
            v += -SH_C1 * y * sh(1) + SH_C1 * z * sh(2) - SH_C1 * x * sh(3);
        }
        if degree > 1 {
            v += SH_C2[0] * xy * sh(4)
                + SH_C2[1] * yz * sh(5)
                + SH_C2[2] * (2.0 * zz - xx - yy) * sh(6)
                + SH_C2[3] * xz * sh(7)
                + SH_C2[4] * (xx - yy) * sh(8);
        }
        if degree > 2 {
            v += SH_C3[0] * y * (3.0 * xx - yy) * sh(9)
                + SH_C3[1] * xy * z * sh(10)
                + SH_C3[2] * y * (4.0 * zz - xx - yy) * sh(11)
                + SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * sh(12)
                + SH_C3[4] * x * (4.0 * zz - xx - yy) * sh(13)
                + SH_C3[5] * z * (xx - yy) * sh(14)
                + SH_C3[6] * x * (xx - 3.0 * yy) * sh(15);
        }
        *o = (v + 0.5).clamp(0.0, 1.0);
    }
    out
}

/// DC coefficient that reproduces `rgb` in every direction.
pub fn dc_from_rgb(rgb: [f64; 3]) -> [f64; 3] {
    [
        (rgb[0] - 0.5) / SH_C0,
        (rgb[1] - 0.5) / SH_C0,
        (rgb[2] - 0.5) / SH_C0,
    ]
}
