//! Depth–normal consistency weighted by image edges.

use serde::{Deserialize, Serialize};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::model::{CameraView, Image};
use crate::render::RenderBuffers;

/// How the normalized image gradient turns into a per-pixel weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EdgeWeightMode {
    /// `ḡ⁵`: edges weigh most.
    #[default]
    AsPrinted,
    /// `(1 − ḡ)⁵`: flat regions weigh most.
    Inverted,
}

/// Pixels below this accumulated alpha are ignored.
pub const VALID_ALPHA: f64 = 0.5;
/// Fewer valid pixels than this fraction marks the view as degenerate.
pub const MIN_VALID_FRACTION: f64 = 0.01;

/// Sobel gradient magnitude of the luminance, normalized by its maximum, raised to the 5th
/// power. Borders replicate the edge pixel. A constant image yields all zeros.
pub fn image_gradient_weight(image: &Image) -> Image {
    let gray = if image.channels == 3 { image.luminance() } else { image.channel(0) };
    let (w, h) = (gray.width, gray.height);
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        gray.data[y * w + x]
    };
    let mut mag = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            mag[y as usize * w + x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    let max = mag.iter().copied().fold(0.0, f64::max);
    let data = if max > 0.0 {
        mag.iter().map(|m| (m / max).powi(5)).collect()
    } else {
        vec![0.0; w * h]
    };
    Image {
        width: w,
        height: h,
        channels: 1,
        data,
    }
}

fn edge_weights(image: &Image, mode: EdgeWeightMode) -> Image {
    let mut w = image_gradient_weight(image);
    if mode == EdgeWeightMode::Inverted {
        // (1 - g)^5 with g the normalized gradient
        for v in w.data.iter_mut() {
            *v = (1.0 - v.powf(0.2)).powi(5);
        }
    }
    w
}

/// Normals from the local plane through back-projected neighbors (central differences),
/// unit length and facing the camera. `None` where any neighbor is invalid or at the border.
pub fn depth_normals(depth: &Image, alpha: &Image, view: &CameraView) -> Vec<Option<Vector3<f64>>> {
    let (w, h) = (depth.width, depth.height);
    let valid = |x: usize, y: usize| alpha.data[y * w + x] >= VALID_ALPHA;
    // expected depth: undo the (1 - T) attenuation of the composited z
    let point = |x: usize, y: usize| {
        let p = y * w + x;
        let z = depth.data[p] / alpha.data[p];
        view.backproject_camera(x as f64 + 0.5, y as f64 + 0.5, z)
    };
    let mut out = vec![None; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            if !(valid(x, y) && valid(x - 1, y) && valid(x + 1, y) && valid(x, y - 1) && valid(x, y + 1)) {
                continue;
            }
            let dx = point(x + 1, y) - point(x - 1, y);
            let dy = point(x, y + 1) - point(x, y - 1);
            let n = dx.cross(&dy);
            let len = n.norm();
            if !(len > 0.0) {
                continue;
            }
            let mut n = n / len;
            if n.dot(&point(x, y)) > 0.0 {
                n = -n;
            }
            out[y * w + x] = Some(n);
        }
    }
    out
}

/// Mean over valid pixels of `weight · ‖N_d − N‖₁`, both normals in camera space.
///
/// The edge weight comes from `guide` (normally the ground-truth image of the view).
pub fn geometry_loss(buffers: &RenderBuffers, view: &CameraView, guide: &Image, mode: EdgeWeightMode) -> Result<f64> {
    let depth = buffers
        .depth
        .as_ref()
        .ok_or_else(|| Error::Validation("geometry loss needs a depth buffer".into()))?;
    let normal = buffers
        .normal
        .as_ref()
        .ok_or_else(|| Error::Validation("geometry loss needs a normal buffer".into()))?;
    if guide.width != buffers.width || guide.height != buffers.height {
        return Err(Error::Validation("guide image does not match render size".into()));
    }
    let weights = edge_weights(guide, mode);
    let normals_d = depth_normals(depth, &buffers.alpha, view);
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, nd) in normals_d.iter().enumerate() {
        let Some(nd) = nd else { continue };
        let rendered = Vector3::from_column_slice(normal.pixel(p));
        let len = rendered.norm();
        let n = if len > 0.0 { rendered / len } else { rendered };
        sum += weights.data[p] * (nd - n).abs().sum();
        count += 1;
    }
    let total = buffers.width * buffers.height;
    if (count as f64) < MIN_VALID_FRACTION * total as f64 || count == 0 {
        return Err(Error::DegenerateView(format!(
            "only {count} of {total} pixels usable for the geometry loss"
        )));
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_zero_weight() {
        let img = Image::filled(9, 7, 3, 0.4);
        assert!(image_gradient_weight(&img).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_edge_peaks_on_edge_columns() {
        let img = Image::from_fn(10, 6, 3, |x, _, _| if x < 5 { 0.0 } else { 1.0 });
        let w = image_gradient_weight(&img);
        for y in 0..6 {
            assert_eq!(w.get(4, y, 0), 1.0);
            assert_eq!(w.get(5, y, 0), 1.0);
            assert_eq!(w.get(0, y, 0), 0.0);
            assert_eq!(w.get(9, y, 0), 0.0);
        }
    }

    #[test]
    fn inverted_mode_flips_weights() {
        let img = Image::from_fn(10, 6, 3, |x, _, _| if x < 5 { 0.0 } else { 1.0 });
        let w = edge_weights(&img, EdgeWeightMode::Inverted);
        assert!(w.get(4, 2, 0).abs() < 1e-12);
        assert!((w.get(0, 2, 0) - 1.0).abs() < 1e-12);
    }
}
