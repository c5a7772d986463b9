//! Per-Gaussian assignment from fused source points: feature argmax or spatial nearest neighbor.

use std::collections::HashMap;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GaussianCloud;
use crate::numeric::{dot, norm};
use crate::propagate::source::SourcePoint;

/// Material index, value and chosen source for every Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub material: Vec<usize>,
    pub value: Vec<f64>,
    /// Index into the source-point list.
    pub source: Vec<usize>,
    /// Gaussians with a zero feature that fell back to the spatially nearest source.
    pub fallback_count: usize,
}

impl Assignment {
    pub fn len(&self) -> usize {
        self.material.len()
    }

    pub fn is_empty(&self) -> bool {
        self.material.is_empty()
    }

    fn from_sources(points: &[SourcePoint], chosen: Vec<(usize, bool)>) -> Self {
        let fallback_count = chosen.iter().filter(|c| c.1).count();
        let source: Vec<usize> = chosen.into_iter().map(|c| c.0).collect();
        Self {
            material: source.iter().map(|&s| points[s].material.expect("fused")).collect(),
            value: source.iter().map(|&s| points[s].property_value.expect("fused")).collect(),
            source,
            fallback_count,
        }
    }
}

fn fused_indices(points: &[SourcePoint]) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..points.len()).filter(|&i| points[i].is_fused()).collect();
    if idx.is_empty() {
        return Err(Error::Empty("fused source points"));
    }
    Ok(idx)
}

/// Uniform hash grid over source positions for nearest-neighbor queries.
pub struct SpatialGrid {
    cell: f64,
    origin: Vector3<f64>,
    cells: HashMap<[i64; 3], Vec<usize>>,
    lo: [i64; 3],
    hi: [i64; 3],
    positions: Vec<Vector3<f64>>,
    /// Caller-facing ids of the stored points.
    ids: Vec<usize>,
}

impl SpatialGrid {
    pub fn new(positions: Vec<Vector3<f64>>, ids: Vec<usize>) -> Self {
        assert!(!positions.is_empty() && positions.len() == ids.len());
        let mut lo = positions[0];
        let mut hi = positions[0];
        for p in &positions {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let diag = (hi - lo).norm();
        let cell = if diag > 0.0 { diag / (positions.len() as f64).cbrt().max(1.0) } else { 1.0 };
        let mut grid = Self {
            cell,
            origin: lo,
            cells: HashMap::new(),
            lo: [i64::MAX; 3],
            hi: [i64::MIN; 3],
            positions,
            ids,
        };
        for i in 0..grid.positions.len() {
            let k = grid.key(&grid.positions[i]);
            for a in 0..3 {
                grid.lo[a] = grid.lo[a].min(k[a]);
                grid.hi[a] = grid.hi[a].max(k[a]);
            }
            grid.cells.entry(k).or_default().push(i);
        }
        grid
    }

    fn key(&self, p: &Vector3<f64>) -> [i64; 3] {
        let r = (p - self.origin) / self.cell;
        [r.x.floor() as i64, r.y.floor() as i64, r.z.floor() as i64]
    }

    /// Caller id of the nearest point; equal distances go to the lower id.
    pub fn nearest(&self, q: &Vector3<f64>) -> usize {
        let c = self.key(q);
        let mut best: Option<(f64, usize)> = None;
        let max_ring = (0..3)
            .map(|a| (c[a] - self.lo[a]).abs().max((self.hi[a] - c[a]).abs()))
            .max()
            .unwrap_or(0);
        for r in 0..=max_ring {
            for dx in -r..=r {
                for dy in -r..=r {
                    for dz in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        let Some(members) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else { continue };
                        for &m in members {
                            let d = (self.positions[m] - q).norm_squared();
                            let id = self.ids[m];
                            if best.is_none_or(|(bd, bid)| d < bd || (d == bd && id < bid)) {
                                best = Some((d, id));
                            }
                        }
                    }
                }
            }
            // every unvisited cell is at least r·cell away along some axis
            if let Some((bd, _)) = best {
                let reach = r as f64 * self.cell;
                if bd < reach * reach {
                    break;
                }
            }
        }
        best.expect("nonempty grid").1
    }
}

fn nearest_fused(points: &[SourcePoint], fused: &[usize]) -> SpatialGrid {
    SpatialGrid::new(fused.iter().map(|&i| points[i].position()).collect(), fused.to_vec())
}

/// Each Gaussian takes the fused source whose region feature has the highest cosine similarity.
///
/// Ties go to the lowest source index. Gaussians with a zero feature use the spatially nearest
/// fused source and are counted in `fallback_count`.
pub fn propagate(cloud: &GaussianCloud, points: &[SourcePoint]) -> Result<Assignment> {
    cloud.require_nonempty()?;
    if cloud.feature_dim == 0 {
        return Err(Error::Validation("cloud has no region features".into()));
    }
    let fused = fused_indices(points)?;
    let dim = cloud.feature_dim;
    let feats = cloud.feature_matrix();
    let unit = |i: usize| -> Option<Vec<f64>> {
        let f = &feats[i * dim..(i + 1) * dim];
        let n = norm(f);
        (n > 0.0).then(|| f.iter().map(|v| v / n).collect())
    };
    let source_feats: Vec<Option<Vec<f64>>> = fused.iter().map(|&s| unit(points[s].gaussian_index)).collect();
    let grid = nearest_fused(points, &fused);
    let chosen: Vec<(usize, bool)> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let Some(f) = unit(i) else {
                return (grid.nearest(&cloud.gaussians[i].center), true);
            };
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for (k, sf) in source_feats.iter().enumerate() {
                let s = sf.as_ref().map_or(0.0, |sf| dot(&f, sf));
                if s > best.0 {
                    best = (s, fused[k]);
                }
            }
            (best.1, false)
        })
        .collect();
    Ok(Assignment::from_sources(points, chosen))
}

/// Each Gaussian takes the Euclidean-nearest fused source (lowest index on ties).
pub fn propagate_nn_baseline(cloud: &GaussianCloud, points: &[SourcePoint]) -> Result<Assignment> {
    cloud.require_nonempty()?;
    let fused = fused_indices(points)?;
    let grid = nearest_fused(points, &fused);
    let chosen = cloud
        .gaussians
        .par_iter()
        .map(|g| (grid.nearest(&g.center), false))
        .collect();
    Ok(Assignment::from_sources(points, chosen))
}
