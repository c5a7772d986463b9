//! Brute-force reference renderer and random scene generators shared by test targets.

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use splatprop::model::{CameraView, Gaussian, GaussianCloud, Intrinsics};
use splatprop::render::ProjectedGaussian;

/// Alpha from the screen covariance, inverted here rather than taken from the projection.
pub fn oracle_alpha(g: &ProjectedGaussian, x: f64, y: f64) -> f64 {
    let [a, b, c] = g.cov2d;
    let det = a * c - b * b;
    let (ia, ib, ic) = (c / det, -b / det, a / det);
    let (dx, dy) = (x - g.mean2d[0], y - g.mean2d[1]);
    let power = -0.5 * (ia * dx * dx + 2.0 * ib * dx * dy + ic * dy * dy);
    if power > 0.0 {
        return 0.0;
    }
    let alpha = (g.opacity * power.exp()).min(0.99);
    if alpha < 1.0 / 255.0 {
        0.0
    } else {
        alpha
    }
}

pub struct OracleBuffers {
    pub rgb: Vec<f64>,
    pub depth: Vec<f64>,
    pub normal: Vec<f64>,
    pub feature: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// Every Gaussian at every pixel, one global depth sort.
pub fn brute_force(projected: &[ProjectedGaussian], features: &[f64], dim: usize, w: usize, h: usize, bg: [f64; 3]) -> OracleBuffers {
    let mut order: Vec<&ProjectedGaussian> = projected.iter().collect();
    order.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.index.cmp(&b.index)));
    let mut out = OracleBuffers {
        rgb: vec![0.0; w * h * 3],
        depth: vec![0.0; w * h],
        normal: vec![0.0; w * h * 3],
        feature: vec![0.0; w * h * dim],
        alpha: vec![0.0; w * h],
    };
    for py in 0..h {
        for px in 0..w {
            let p = py * w + px;
            let mut t = 1.0;
            for g in &order {
                let a = oracle_alpha(g, px as f64 + 0.5, py as f64 + 0.5);
                if a == 0.0 {
                    continue;
                }
                let wgt = t * a;
                for c in 0..3 {
                    out.rgb[3 * p + c] += wgt * g.color[c];
                    out.normal[3 * p + c] += wgt * g.normal_cam[c];
                }
                out.depth[p] += wgt * g.depth;
                for k in 0..dim {
                    out.feature[dim * p + k] += wgt * features[g.index * dim + k];
                }
                t *= 1.0 - a;
                if t < 1.0 / 255.0 {
                    break;
                }
            }
            for c in 0..3 {
                out.rgb[3 * p + c] += t * bg[c];
            }
            out.alpha[p] = 1.0 - t;
        }
    }
    out
}

pub fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> GaussianCloud {
    let gaussians = (0..n)
        .map(|_| {
            let center = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let rot = UnitQuaternion::from_euler_angles(
                rng.random_range(-3.1..3.1),
                rng.random_range(-1.5..1.5),
                rng.random_range(-3.1..3.1),
            );
            let scales = Vector3::from_fn(|_, _| rng.random_range(0.005..0.15));
            let rgb = [rng.random(), rng.random(), rng.random()];
            Gaussian::new(center, rot, scales, rng.random_range(0.05..1.0), rgb)
        })
        .collect();
    GaussianCloud::new(gaussians).unwrap()
}

pub fn random_view(rng: &mut ChaCha8Rng) -> CameraView {
    let w = rng.random_range(32..=64);
    let h = rng.random_range(32..=64);
    let f = rng.random_range(30.0..70.0);
    let intr = Intrinsics { fx: f, fy: f * rng.random_range(0.9..1.1), cx: w as f64 / 2.0, cy: h as f64 / 2.0 };
    let dir: Vector3<f64> = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
    let eye = dir * rng.random_range(2.5..4.0);
    let up = if dir.y.abs() > 0.9 { Vector3::x() } else { Vector3::y() };
    CameraView::look_at("v.png", intr, w, h, eye, Vector3::zeros(), up)
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
