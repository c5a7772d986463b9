//! Voxel down-sampling of Gaussian centers into source points.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GaussianCloud;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourcePoint {
    pub position: [f64; 3],
    pub gaussian_index: usize,
    /// Unit-norm mean of the patch embeddings from the views that see this point.
    pub embedding: Option<Vec<f64>>,
    pub visible_views: usize,
    /// Cosine similarity to each material's text embedding (ω).
    pub material_similarity: Vec<f64>,
    /// Fused property value ρ(s); `None` until fused or when the point was never seen.
    pub property_value: Option<f64>,
    pub material: Option<usize>,
}

impl SourcePoint {
    pub fn new(position: Vector3<f64>, gaussian_index: usize) -> Self {
        Self {
            position: position.into(),
            gaussian_index,
            embedding: None,
            visible_views: 0,
            material_similarity: Vec::new(),
            property_value: None,
            material: None,
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }

    pub fn is_fused(&self) -> bool {
        self.property_value.is_some()
    }
}

/// One source point per occupied voxel: the member center nearest the members' centroid.
///
/// Voxels are anchored at the minimum corner of the cloud's bounds. Output is ordered by
/// Gaussian index.
pub fn sample_source_points(cloud: &GaussianCloud, voxel_size: f64) -> Result<Vec<SourcePoint>> {
    cloud.require_nonempty()?;
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::Config(format!("voxel size must be positive, got {voxel_size}")));
    }
    let (lo, _) = cloud.bounds().expect("nonempty");
    let mut voxels: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, g) in cloud.gaussians.iter().enumerate() {
        let rel = (g.center - lo) / voxel_size;
        let key = [rel.x.floor() as i64, rel.y.floor() as i64, rel.z.floor() as i64];
        voxels.entry(key).or_default().push(i);
    }
    let mut out: Vec<SourcePoint> = voxels
        .values()
        .map(|members| {
            let centroid = members.iter().map(|&i| cloud.gaussians[i].center).sum::<Vector3<f64>>() / members.len() as f64;
            let best = members
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    let da = (cloud.gaussians[a].center - centroid).norm_squared();
                    let db = (cloud.gaussians[b].center - centroid).norm_squared();
                    da.total_cmp(&db).then(a.cmp(&b))
                })
                .expect("nonempty voxel");
            SourcePoint::new(cloud.gaussians[best].center, best)
        })
        .collect();
    out.sort_by_key(|s| s.gaussian_index);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Gaussian;

    fn cloud_at(points: &[[f64; 3]]) -> GaussianCloud {
        GaussianCloud::new(points.iter().map(|p| Gaussian::isotropic(Vector3::from(*p), 0.1, 0.5, [0.5; 3])).collect()).unwrap()
    }

    #[test]
    fn same_voxel_collapses() {
        let c = cloud_at(&[[0.0, 0.0, 0.0], [0.1, 0.1, 0.1]]);
        assert_eq!(sample_source_points(&c, 1.0).unwrap().len(), 1);
    }

    #[test]
    fn tiny_voxels_keep_everything() {
        let c = cloud_at(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.5]]);
        let s = sample_source_points(&c, 0.01).unwrap();
        assert_eq!(s.iter().map(|s| s.gaussian_index).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn representative_is_nearest_centroid() {
        let c = cloud_at(&[[0.0, 0.0, 0.0], [0.45, 0.0, 0.0], [0.9, 0.0, 0.0]]);
        let s = sample_source_points(&c, 1.0).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].gaussian_index, 1);
    }

    #[test]
    fn invalid_inputs() {
        assert!(sample_source_points(&GaussianCloud::default(), 1.0).is_err());
        assert!(sample_source_points(&cloud_at(&[[0.0; 3]]), 0.0).is_err());
    }
}
