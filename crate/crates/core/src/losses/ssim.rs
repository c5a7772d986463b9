//! SSIM with an 11×11 Gaussian window (σ = 1.5) and zero padding, for images in [0,1].

use crate::model::Image;

pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn kernel_1d() -> [f64; WINDOW] {
    let half = (WINDOW / 2) as f64;
    let mut k = [0.0; WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-(d * d) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "same" convolution of a single plane, zero outside the image.
fn blur(plane: &[f64], width: usize, height: usize) -> Vec<f64> {
    let k = kernel_1d();
    let half = WINDOW as isize / 2;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (i, w) in k.iter().enumerate() {
                let sx = x as isize + i as isize - half;
                if sx >= 0 && (sx as usize) < width {
                    acc += w * plane[y * width + sx as usize];
                }
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (i, w) in k.iter().enumerate() {
                let sy = y as isize + i as isize - half;
                if sy >= 0 && (sy as usize) < height {
                    acc += w * tmp[sy as usize * width + x];
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Mean SSIM over all pixels and channels.
pub fn ssim(a: &Image, b: &Image) -> f64 {
    assert!(a.same_shape(b), "ssim needs equal shapes");
    let (w, h) = (a.width, a.height);
    let mut total = 0.0;
    for c in 0..a.channels {
        let x = a.channel(c).data;
        let y = b.channel(c).data;
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, my) = (blur(&x, w, h), blur(&y, w, h));
        let (sxx, syy, sxy) = (blur(&xx, w, h), blur(&yy, w, h), blur(&xy, w, h));
        for i in 0..w * h {
            let (m1, m2) = (mx[i], my[i]);
            let v1 = sxx[i] - m1 * m1;
            let v2 = syy[i] - m2 * m2;
            let cov = sxy[i] - m1 * m2;
            total += ((2.0 * m1 * m2 + C1) * (2.0 * cov + C2))
                / ((m1 * m1 + m2 * m2 + C1) * (v1 + v2 + C2));
        }
    }
    total / (w * h * a.channels) as f64
}
