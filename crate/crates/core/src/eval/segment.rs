//! Material segmentation outputs: a recolored splat and per-view renders.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sh, CameraView, GaussianCloud, PropertyLabel};
use crate::render::{render, save_rgb_png, Channels, RenderBuffers, RenderSettings};

const BASE_PALETTE: [[u8; 3]; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

/// Fixed color of material `k`: ten base colors, then golden-ratio hues.
pub fn palette_color(k: usize) -> [f64; 3] {
    if let Some(c) = BASE_PALETTE.get(k) {
        return c.map(|v| v as f64 / 255.0);
    }
    let h = (k as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [0.15 + 0.7 * r, 0.15 + 0.7 * g, 0.15 + 0.7 * b]
}

/// Copy of `cloud` with each Gaussian's color replaced by its material's palette color.
pub fn colorize(cloud: &GaussianCloud, materials: &[usize], values: &[f64]) -> Result<GaussianCloud> {
    if materials.len() != cloud.len() || values.len() != cloud.len() {
        return Err(Error::Validation("assignment length does not match the cloud".into()));
    }
    let mut out = cloud.clone();
    for (g, &m) in out.gaussians.iter_mut().zip(materials) {
        g.sh = vec![sh::dc_from_rgb(palette_color(m))];
    }
    out.sh_degree = 0;
    out.labels = Some(
        materials
            .iter()
            .zip(values)
            .map(|(&m, &v)| PropertyLabel { material_id: m as u32, value: v })
            .collect(),
    );
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaletteEntry {
    pub material_id: usize,
    pub name: String,
    pub rgb: [u8; 3],
    pub gaussians: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationSummary {
    pub ply: PathBuf,
    pub renders: Vec<PathBuf>,
    pub palette: Vec<PaletteEntry>,
}

/// Write `segmented.ply`, `<view>.png` renders and `palette.json` into `out_dir`.
pub fn material_segmentation_export(
    cloud: &GaussianCloud,
    materials: &[usize],
    values: &[f64],
    names: &[&str],
    views: &[CameraView],
    out_dir: &Path,
) -> Result<(SegmentationSummary, Vec<RenderBuffers>)> {
    let colored = colorize(cloud, materials, values)?;
    let ply = out_dir.join("segmented.ply");
    crate::model::save_gaussian_ply(&ply, &colored)?;
    let settings = RenderSettings { channels: Channels::RGB, ..Default::default() };
    let mut renders = Vec::with_capacity(views.len());
    let mut buffers = Vec::with_capacity(views.len());
    for v in views {
        let b = render(&colored, v, &settings);
        let path = out_dir.join(format!("{}.png", v.stem()));
        save_rgb_png(&path, b.rgb.as_ref().expect("rgb requested"))?;
        renders.push(path);
        buffers.push(b);
    }
    let palette = names
        .iter()
        .enumerate()
        .map(|(k, name)| PaletteEntry {
            material_id: k,
            name: name.to_string(),
            rgb: palette_color(k).map(|c| (c * 255.0).round() as u8),
            gaussians: materials.iter().filter(|&&m| m == k).count(),
        })
        .collect();
    let summary = SegmentationSummary { ply, renders, palette };
    crate::io_util::write_json(&out_dir.join("palette.json"), &summary.palette)?;
    Ok((summary, buffers))
}
