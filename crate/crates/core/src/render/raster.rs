//! Tile-based front-to-back alpha compositing.

use rayon::prelude::*;

use crate::model::{CameraView, GaussianCloud, Image};
use crate::render::project::{project, ProjectedGaussian};

pub const TILE_SIZE: usize = 16;
/// A pixel stops accumulating once its transmittance drops below this.
pub const TRANSMITTANCE_MIN: f64 = 1.0 / 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Channels {
    pub rgb: bool,
    pub depth: bool,
    pub normal: bool,
    pub feature: bool,
}

impl Channels {
    pub const ALL: Channels = Channels { rgb: true, depth: true, normal: true, feature: true };
    pub const RGB: Channels = Channels { rgb: true, depth: false, normal: false, feature: false };
    pub const DEPTH: Channels = Channels { rgb: false, depth: true, normal: false, feature: false };
    pub const GEOMETRY: Channels = Channels { rgb: false, depth: true, normal: true, feature: false };
}

impl Default for Channels {
    fn default() -> Self {
        Channels::ALL
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    pub channels: Channels,
    pub background: [f64; 3],
    pub near_clip: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            channels: Channels::ALL,
            background: [0.0; 3],
            near_clip: 0.01,
        }
    }
}

/// Per-Gaussian feature rows (`N × dim`, row-major, indexed by cloud index).
#[derive(Debug, Clone, Copy)]
pub struct FeatureTable<'a> {
    pub data: &'a [f64],
    pub dim: usize,
}

impl<'a> FeatureTable<'a> {
    pub fn row(&self, index: usize) -> &'a [f64] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderBuffers {
    pub width: usize,
    pub height: usize,
    pub rgb: Option<Image>,
    /// Alpha-composited camera-space z; 0 where nothing was hit.
    pub depth: Option<Image>,
    /// Alpha-composited camera-space normals (not renormalized).
    pub normal: Option<Image>,
    pub feature: Option<Image>,
    /// Accumulated opacity, `1 - final transmittance`.
    pub alpha: Image,
}

/// Depth-ascending order with ties broken by cloud index.
pub fn depth_order(projected: &[ProjectedGaussian]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..projected.len() as u32).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&projected[a as usize], &projected[b as usize]);
        pa.depth.total_cmp(&pb.depth).then(pa.index.cmp(&pb.index))
    });
    order
}

struct TileGrid {
    tiles_x: usize,
    tiles_y: usize,
    /// Per tile, positions into `projected` in depth order.
    bins: Vec<Vec<u32>>,
}

fn bin_tiles(projected: &[ProjectedGaussian], width: usize, height: usize) -> TileGrid {
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let mut bins = vec![Vec::new(); tiles_x * tiles_y];
    for id in depth_order(projected) {
        let g = &projected[id as usize];
        // pixel (i, j) is sampled at (i + 0.5, j + 0.5); one pixel of slack on each side
        let x0 = (g.mean2d[0] - g.extent[0] - 1.5).floor().max(0.0) as usize;
        let y0 = (g.mean2d[1] - g.extent[1] - 1.5).floor().max(0.0) as usize;
        let x1 = (g.mean2d[0] + g.extent[0] + 0.5).ceil().min(width as f64 - 1.0);
        let y1 = (g.mean2d[1] + g.extent[1] + 0.5).ceil().min(height as f64 - 1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        let (x1, y1) = (x1 as usize, y1 as usize);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
            for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                bins[ty * tiles_x + tx].push(id);
            }
        }
    }
    TileGrid { tiles_x, tiles_y, bins }
}

/// Composite one pixel front to back, reporting each `(position, weight = T·α)`.
/// Returns the final transmittance.
#[inline]
fn composite_pixel(
    px: usize,
    py: usize,
    list: &[u32],
    projected: &[ProjectedGaussian],
    mut visit: impl FnMut(&ProjectedGaussian, f64),
) -> f64 {
    let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
    let mut transmittance = 1.0;
    for &id in list {
        let g = &projected[id as usize];
        let alpha = g.alpha_at(x, y);
        if alpha == 0.0 {
            continue;
        }
        visit(g, transmittance * alpha);
        transmittance *= 1.0 - alpha;
        if transmittance < TRANSMITTANCE_MIN {
            break;
        }
    }
    transmittance
}

/// Run `per_pixel` over every pixel, tile by tile in parallel; results come back in
/// row-major pixel order.
fn for_each_pixel<T: Send>(
    projected: &[ProjectedGaussian],
    width: usize,
    height: usize,
    per_pixel: impl Fn(usize, usize, &[u32]) -> T + Sync,
) -> Vec<T> {
    let grid = bin_tiles(projected, width, height);
    let tiles: Vec<(usize, Vec<(usize, T)>)> = (0..grid.tiles_x * grid.tiles_y)
        .into_par_iter()
        .map(|t| {
            let (tx, ty) = (t % grid.tiles_x, t / grid.tiles_x);
            let list = &grid.bins[t];
            let mut out = Vec::with_capacity(TILE_SIZE * TILE_SIZE);
            for py in ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(height) {
                for px in tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(width) {
                    out.push((py * width + px, per_pixel(px, py, list)));
                }
            }
            (t, out)
        })
        .collect();
    let mut slots: Vec<Option<T>> = (0..width * height).map(|_| None).collect();
    for (_, pixels) in tiles {
        for (p, v) in pixels {
            slots[p] = Some(v);
        }
    }
    slots.into_iter().map(|v| v.expect("every pixel belongs to a tile")).collect()
}

struct PixelSample {
    rgb: [f64; 3],
    depth: f64,
    normal: [f64; 3],
    feature: Vec<f64>,
    alpha: f64,
}

/// Composite all requested channels for a projected set.
pub fn rasterize(
    projected: &[ProjectedGaussian],
    features: Option<FeatureTable<'_>>,
    width: usize,
    height: usize,
    settings: &RenderSettings,
) -> RenderBuffers {
    let ch = settings.channels;
    let fdim = if ch.feature { features.map_or(0, |f| f.dim) } else { 0 };
    let samples = for_each_pixel(projected, width, height, |px, py, list| {
        let mut s = PixelSample {
            rgb: [0.0; 3],
            depth: 0.0,
            normal: [0.0; 3],
            feature: vec![0.0; fdim],
            alpha: 0.0,
        };
        let t = composite_pixel(px, py, list, projected, |g, w| {
            for c in 0..3 {
                s.rgb[c] += w * g.color[c];
                s.normal[c] += w * g.normal_cam[c];
            }
            s.depth += w * g.depth;
            if fdim > 0 {
                let row = features.expect("feature table").row(g.index);
                for (acc, f) in s.feature.iter_mut().zip(row) {
                    *acc += w * f;
                }
            }
        });
        for c in 0..3 {
            s.rgb[c] += t * settings.background[c];
        }
        s.alpha = 1.0 - t;
        s
    });

    let mut rgb = ch.rgb.then(|| Image::new(width, height, 3));
    let mut depth = ch.depth.then(|| Image::new(width, height, 1));
    let mut normal = ch.normal.then(|| Image::new(width, height, 3));
    let mut feature = (ch.feature && fdim > 0).then(|| Image::new(width, height, fdim));
    let mut alpha = Image::new(width, height, 1);
    for (p, s) in samples.into_iter().enumerate() {
        if let Some(img) = rgb.as_mut() {
            img.pixel_mut(p).copy_from_slice(&s.rgb);
        }
        if let Some(img) = depth.as_mut() {
            img.data[p] = s.depth;
        }
        if let Some(img) = normal.as_mut() {
            img.pixel_mut(p).copy_from_slice(&s.normal);
        }
        if let Some(img) = feature.as_mut() {
            img.pixel_mut(p).copy_from_slice(&s.feature);
        }
        alpha.data[p] = s.alpha;
    }
    RenderBuffers {
        width,
        height,
        rgb,
        depth,
        normal,
        feature,
        alpha,
    }
}

/// Project and rasterize a cloud from one view, using the cloud's own features.
pub fn render(cloud: &GaussianCloud, view: &CameraView, settings: &RenderSettings) -> RenderBuffers {
    let projected = project(cloud, view, settings.near_clip);
    let features = cloud.feature_matrix();
    let table = (cloud.feature_dim > 0).then_some(FeatureTable {
        data: &features,
        dim: cloud.feature_dim,
    });
    rasterize(&projected, table, view.width, view.height, settings)
}

/// Sparse per-pixel blend weights `T_i α_i`, keyed by cloud index (CSR layout).
#[derive(Debug, Clone, PartialEq)]
pub struct PixelWeights {
    pub width: usize,
    pub height: usize,
    offsets: Vec<usize>,
    entries: Vec<(u32, f64)>,
}

impl PixelWeights {
    pub fn pixel(&self, p: usize) -> &[(u32, f64)] {
        &self.entries[self.offsets[p]..self.offsets[p + 1]]
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Sum of weights at `p`, which equals the rendered alpha.
    pub fn alpha(&self, p: usize) -> f64 {
        self.pixel(p).iter().map(|e| e.1).sum()
    }

    pub fn alpha_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: (0..self.pixel_count()).map(|p| self.alpha(p)).collect(),
        }
    }

    /// `F(p) = Σ w_i f_i` written into `out` (length `dim`).
    pub fn blend_into(&self, p: usize, features: FeatureTable<'_>, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for &(i, w) in self.pixel(p) {
            for (o, f) in out.iter_mut().zip(features.row(i as usize)) {
                *o += w * f;
            }
        }
    }

    pub fn feature_map(&self, features: FeatureTable<'_>) -> Image {
        let mut img = Image::new(self.width, self.height, features.dim);
        for p in 0..self.pixel_count() {
            self.blend_into(p, features, img.pixel_mut(p));
        }
        img
    }

    /// Total weight each Gaussian receives over the image.
    pub fn coverage(&self, gaussian_count: usize) -> Vec<f64> {
        let mut cov = vec![0.0; gaussian_count];
        for &(i, w) in &self.entries {
            cov[i as usize] += w;
        }
        cov
    }
}

pub fn render_feature_weights(projected: &[ProjectedGaussian], width: usize, height: usize) -> PixelWeights {
    let lists = for_each_pixel(projected, width, height, |px, py, list| {
        let mut entries = Vec::new();
        composite_pixel(px, py, list, projected, |g, w| entries.push((g.index as u32, w)));
        entries
    });
    let mut offsets = Vec::with_capacity(lists.len() + 1);
    let mut entries = Vec::new();
    offsets.push(0);
    for l in lists {
        entries.extend(l);
        offsets.push(entries.len());
    }
    PixelWeights {
        width,
        height,
        offsets,
        entries,
    }
}
