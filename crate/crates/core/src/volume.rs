//! Object-level integration over Gaussians and the pure-volume correction.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gaussian, GaussianCloud};
use crate::numeric::CompensatedSum;

/// Ellipsoid radius, in standard deviations, used when none is configured.
pub const DEFAULT_K_SIGMA: f64 = 1.0;
/// Mean caliper width of a unit cube: occupied voxels per unit surface area are `1.5 / v²`.
pub const VOXEL_CROSSING_FACTOR: f64 = 1.5;

/// `σ · (4/3)π (k s_x)(k s_y)(k s_z)` with activated scales and opacity.
pub fn gaussian_volume(g: &Gaussian, k_sigma: f64) -> f64 {
    let s = g.scales();
    g.opacity() * 4.0 / 3.0 * PI * k_sigma.powi(3) * s.x * s.y * s.z
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectIntegral {
    /// `Σ V_i ρ_i`, with `V_i` from [`gaussian_volume`].
    pub m_hat: f64,
    /// `Σ V_i`.
    pub c: f64,
}

const CHUNK: usize = 4096;

/// Compensated sums in fixed-size chunks, merged in chunk order so the result is independent of
/// thread scheduling.
pub fn integrate_object(cloud: &GaussianCloud, property: &[f64], k_sigma: f64) -> Result<ObjectIntegral> {
    cloud.require_nonempty()?;
    if property.len() != cloud.len() {
        return Err(Error::Validation(format!("{} property values for {} gaussians", property.len(), cloud.len())));
    }
    if !(k_sigma > 0.0) {
        return Err(Error::Config(format!("k_sigma must be > 0, got {k_sigma}")));
    }
    let partial: Vec<(CompensatedSum, CompensatedSum)> = cloud
        .gaussians
        .par_chunks(CHUNK)
        .zip(property.par_chunks(CHUNK))
        .map(|(gs, rho)| {
            let mut m = CompensatedSum::new();
            let mut c = CompensatedSum::new();
            for (g, &r) in gs.iter().zip(rho) {
                let v = gaussian_volume(g, k_sigma);
                m.add(v * r);
                c.add(v);
            }
            (m, c)
        })
        .collect();
    let mut m = CompensatedSum::new();
    let mut c = CompensatedSum::new();
    for (pm, pc) in &partial {
        m.merge(pm);
        c.merge(pc);
    }
    Ok(ObjectIntegral { m_hat: m.value(), c: c.value() })
}

/// `m = v · m̂ / c`.
pub fn pure_volume_correction(m_hat: f64, c: f64, v: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::DegenerateObject(format!("total weighted volume is {c}")));
    }
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Validation(format!("pure volume must be positive, got {v}")));
    }
    Ok(v * (m_hat / c))
}

/// Surface area estimated from the number of occupied voxels of edge `voxel_size`.
pub fn surface_area_proxy(voxel_count: usize, voxel_size: f64) -> f64 {
    voxel_count as f64 * voxel_size * voxel_size / VOXEL_CROSSING_FACTOR
}

/// `Σ_s (A/|S|) · t_s · ρ_s` over the given points.
pub fn thickness_baseline(property: &[f64], thickness: &[f64], surface_area: f64) -> Result<f64> {
    if property.is_empty() {
        return Err(Error::Empty("source points"));
    }
    if property.len() != thickness.len() {
        return Err(Error::Validation("thickness and property lists differ in length".into()));
    }
    let share = surface_area / property.len() as f64;
    Ok(property
        .iter()
        .zip(thickness)
        .map(|(r, t)| share * t * r)
        .collect::<CompensatedSum>()
        .value())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationMode {
    #[default]
    Gaussian,
    Thickness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VolumeConfig {
    pub k_sigma: f64,
    pub mode: IntegrationMode,
    /// Shell thickness in meters for the thickness baseline.
    pub thickness_m: f64,
    /// Per-material thickness overrides.
    pub thickness_per_material: std::collections::BTreeMap<String, f64>,
}

impl Default for VolumeConfig {
    fn default() -> Self {
        Self {
            k_sigma: DEFAULT_K_SIGMA,
            mode: IntegrationMode::Gaussian,
            thickness_m: 0.005,
            thickness_per_material: Default::default(),
        }
    }
}

impl VolumeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_sigma > 0.0) || !(self.thickness_m > 0.0) || self.thickness_per_material.values().any(|t| !(*t > 0.0)) {
            return Err(Error::Config("k_sigma and thicknesses must be > 0".into()));
        }
        Ok(())
    }

    pub fn thickness_for(&self, material: &str) -> f64 {
        self.thickness_per_material.get(material).copied().unwrap_or(self.thickness_m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn g(scale: f64, opacity: f64) -> Gaussian {
        Gaussian::isotropic(Vector3::zeros(), scale, opacity, [0.5; 3])
    }

    #[test]
    fn unit_ellipsoid() {
        let mut u = g(1.0, 0.5);
        u.opacity_logit = f64::INFINITY;
        assert!((gaussian_volume(&u, 1.0) - 4.0 * PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_opacity_and_scaling() {
        let mut z = g(1.0, 0.5);
        z.opacity_logit = f64::NEG_INFINITY;
        assert_eq!(gaussian_volume(&z, 1.0), 0.0);
        let a = gaussian_volume(&g(0.3, 0.7), 1.0);
        let b = gaussian_volume(&g(0.6, 0.7), 1.0);
        assert!((b / a - 8.0).abs() < 1e-12);
    }

    #[test]
    fn correction_cases() {
        assert!((pure_volume_correction(3.2, 0.004, 0.002).unwrap() - 1.6).abs() < 1e-12);
        assert_eq!(pure_volume_correction(5.0, 2.0, 2.0).unwrap(), 5.0);
        assert!(matches!(pure_volume_correction(1.0, 0.0, 1.0), Err(Error::DegenerateObject(_))));
    }

    #[test]
    fn thickness_is_linear() {
        let a = thickness_baseline(&[2.0, 2.0], &[0.1, 0.1], 3.0).unwrap();
        assert!((a - 3.0 * 0.1 * 2.0).abs() < 1e-12);
        let b = thickness_baseline(&[2.0, 2.0], &[0.2, 0.2], 3.0).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12);
    }
}
