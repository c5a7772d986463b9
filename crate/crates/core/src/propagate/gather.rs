//! Visibility-tested projection of source points into the views and embedding gathering.

use rayon::prelude::*;

use crate::error::Result;
use crate::model::{CameraView, GaussianCloud};
use crate::numeric::normalized;
use crate::propagate::embedding::{EmbeddingProvider, PatchKey, PatchRequest};
use crate::propagate::source::SourcePoint;
use crate::render::{render, Channels, RenderBuffers, RenderSettings};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatherSettings {
    /// Odd patch side in pixels.
    pub patch_size: u32,
    /// Slack on the depth test, in world units.
    pub depth_tolerance: f64,
}

/// Depth and alpha buffers for every view.
pub fn render_depth_buffers(cloud: &GaussianCloud, views: &[CameraView]) -> Vec<RenderBuffers> {
    let settings = RenderSettings { channels: Channels::DEPTH, ..Default::default() };
    views.par_iter().map(|v| render(cloud, v, &settings)).collect()
}

/// Expected surface depth at pixel `p` (composited depth over alpha); infinite where nothing was drawn.
pub fn surface_depth(buffers: &RenderBuffers, p: usize) -> f64 {
    let alpha = buffers.alpha.data[p];
    match &buffers.depth {
        Some(d) if alpha > 0.0 => d.data[p] / alpha,
        _ => f64::INFINITY,
    }
}

/// Patch key of `point` in `view` if it passes the depth test and the patch fits.
pub fn observe(point: &SourcePoint, view: &CameraView, buffers: &RenderBuffers, settings: &GatherSettings) -> Option<PatchKey> {
    let (u, v, z) = view.project(&point.position())?;
    let (cx, cy) = (u.floor() as i64, v.floor() as i64);
    if !PatchKey::fits(cx, cy, settings.patch_size, view.width, view.height) {
        return None;
    }
    let p = cy as usize * view.width + cx as usize;
    if z > surface_depth(buffers, p) + settings.depth_tolerance {
        return None;
    }
    Some(PatchKey { view: view.stem().to_string(), cx: cx as u32, cy: cy as u32, p: settings.patch_size })
}

/// Keys observed for each source point, in view order.
pub fn plan_observations(
    points: &[SourcePoint],
    views: &[CameraView],
    buffers: &[RenderBuffers],
    settings: &GatherSettings,
) -> Vec<Vec<(usize, PatchKey)>> {
    points
        .par_iter()
        .map(|s| {
            views
                .iter()
                .zip(buffers)
                .enumerate()
                .filter_map(|(i, (v, b))| observe(s, v, b, settings).map(|k| (i, k)))
                .collect()
        })
        .collect()
}

/// Patch requests for every planned observation.
pub fn patch_requests(plan: &[Vec<(usize, PatchKey)>], views: &[CameraView]) -> Vec<PatchRequest> {
    plan.iter()
        .flatten()
        .map(|(i, k)| PatchRequest {
            key: k.to_string(),
            image: views[*i].name.clone(),
            view: k.view.clone(),
            cx: k.cx,
            cy: k.cy,
            p: k.p,
        })
        .collect()
}

/// Fill each point's embedding with the renormalized mean over the views that see it.
///
/// Returns the number of points seen by no view; those keep `embedding = None`.
pub fn project_and_gather(
    points: &mut [SourcePoint],
    views: &[CameraView],
    buffers: &[RenderBuffers],
    settings: &GatherSettings,
    provider: &dyn EmbeddingProvider,
) -> Result<usize> {
    let plan = plan_observations(points, views, buffers, settings);
    let gathered: Vec<Result<Option<(Vec<f64>, usize)>>> = plan
        .par_iter()
        .map(|keys| {
            if keys.is_empty() {
                return Ok(None);
            }
            let mut sum: Vec<f64> = Vec::new();
            for (_, k) in keys {
                let e = provider.embedding(&k.to_string())?;
                if sum.is_empty() {
                    sum = vec![0.0; e.len()];
                }
                if e.len() != sum.len() {
                    return Err(crate::Error::Validation(format!("embedding `{k}` has dimension {}, expected {}", e.len(), sum.len())));
                }
                sum.iter_mut().zip(&e).for_each(|(s, x)| *s += x);
            }
            Ok(Some((normalized(&sum), keys.len())))
        })
        .collect();
    let mut invisible = 0;
    for (p, g) in points.iter_mut().zip(gathered) {
        match g? {
            Some((e, n)) => {
                p.embedding = Some(e);
                p.visible_views = n;
            }
            None => {
                p.embedding = None;
                p.visible_views = 0;
                invisible += 1;
            }
        }
    }
    Ok(invisible)
}
