use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::model::sh;
use crate::numeric::logistic;

/// One 3D Gaussian with raw (pre-activation) parameters, as stored in 3DGS PLY files.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub center: Vector3<f64>,
    /// Quaternion `(w, x, y, z)`; not necessarily unit length on disk.
    pub rotation: [f64; 4],
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    /// Spherical-harmonic coefficients, one RGB triple per basis function.
    pub sh: Vec<[f64; 3]>,
    pub feature: Option<Vec<f64>>,
}

impl Gaussian {
    /// Isotropic Gaussian with a constant color. Convenience for fixtures and tests.
    pub fn isotropic(center: Vector3<f64>, scale: f64, opacity: f64, rgb: [f64; 3]) -> Self {
        Self::new(center, UnitQuaternion::identity(), Vector3::repeat(scale), opacity, rgb)
    }

    /// Build from activated quantities; the color is stored as a degree-0 SH coefficient.
    pub fn new(
        center: Vector3<f64>,
        rotation: UnitQuaternion<f64>,
        scales: Vector3<f64>,
        opacity: f64,
        rgb: [f64; 3],
    ) -> Self {
        let q = rotation.quaternion();
        Self {
            center,
            rotation: [q.w, q.i, q.j, q.k],
            log_scale: scales.map(f64::ln),
            opacity_logit: crate::numeric::logit(opacity),
            sh: vec![sh::dc_from_rgb(rgb)],
            feature: None,
        }
    }

    pub fn opacity(&self) -> f64 {
        logistic(self.opacity_logit)
    }

    pub fn scales(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn unit_rotation(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.rotation;
        UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z))
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.unit_rotation().to_rotation_matrix().into_inner()
    }

    /// World-space covariance `R S Sᵀ Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s = Matrix3::from_diagonal(&self.scales());
        r * s * s.transpose() * r.transpose()
    }

    /// World-space unit axis of the smallest scale (ties resolved towards the lower axis index).
    pub fn min_scale_axis(&self) -> Vector3<f64> {
        let s = self.log_scale;
        let mut axis = 0;
        for k in 1..3 {
            if s[k] < s[axis] {
                axis = k;
            }
        }
        self.rotation_matrix().column(axis).into_owned()
    }

    pub fn sh_degree(&self) -> Option<usize> {
        sh::degree_for_count(self.sh.len())
    }

    /// Color seen from `camera_center`.
    pub fn color_from(&self, camera_center: &Vector3<f64>) -> [f64; 3] {
        let d = self.center - camera_center;
        let n = d.norm();
        let dir = if n > 0.0 { d / n } else { Vector3::z() };
        sh::eval_color(&self.sh, self.sh_degree().unwrap_or(0), &dir)
    }

    fn check_finite(&self, index: usize) -> Result<()> {
        let mut values = self
            .center
            .iter()
            .chain(self.rotation.iter())
            .chain(self.log_scale.iter())
            .chain(std::iter::once(&self.opacity_logit))
            .chain(self.sh.iter().flatten());
        if values.any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("gaussian {index}: non-finite parameter")));
        }
        if let Some(f) = &self.feature {
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("gaussian {index}: non-finite feature")));
            }
        }
        let qn = self.rotation.iter().map(|v| v * v).sum::<f64>();
        if qn == 0.0 {
            return Err(Error::Validation(format!("gaussian {index}: zero quaternion")));
        }
        Ok(())
    }
}

/// Per-Gaussian material assignment carried alongside a cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropertyLabel {
    pub material_id: u32,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianCloud {
    pub gaussians: Vec<Gaussian>,
    pub sh_degree: usize,
    /// 0 when the cloud carries no region features.
    pub feature_dim: usize,
    pub labels: Option<Vec<PropertyLabel>>,
}

impl GaussianCloud {
    pub fn new(gaussians: Vec<Gaussian>) -> Result<Self> {
        let sh_degree = gaussians.first().and_then(Gaussian::sh_degree).unwrap_or(0);
        let feature_dim = gaussians
            .first()
            .and_then(|g| g.feature.as_ref().map(Vec::len))
            .unwrap_or(0);
        let cloud = Self {
            gaussians,
            sh_degree,
            feature_dim,
            labels: None,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let count = sh::coeff_count(self.sh_degree);
        for (i, g) in self.gaussians.iter().enumerate() {
            g.check_finite(i)?;
            if g.sh.len() != count {
                return Err(Error::Validation(format!(
                    "gaussian {i}: {} SH coefficients, expected {count}",
                    g.sh.len()
                )));
            }
            let dim = g.feature.as_ref().map_or(0, Vec::len);
            if dim != self.feature_dim {
                return Err(Error::Validation(format!(
                    "gaussian {i}: feature dimension {dim}, expected {}",
                    self.feature_dim
                )));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.gaussians.len() {
                return Err(Error::Validation("label count does not match gaussian count".into()));
            }
        }
        Ok(())
    }

    pub fn require_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::Empty("gaussian cloud"))
        } else {
            Ok(())
        }
    }

    /// Axis-aligned bounds of the centers.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = self.gaussians.first()?.center;
        Some(self.gaussians.iter().fold((first, first), |(lo, hi), g| {
            (lo.inf(&g.center), hi.sup(&g.center))
        }))
    }

    pub fn bounds_diagonal(&self) -> f64 {
        self.bounds().map_or(0.0, |(lo, hi)| (hi - lo).norm())
    }

    /// Features as one flat row-major `N × D` buffer (zeros for Gaussians without a feature).
    pub fn feature_matrix(&self) -> Vec<f64> {
        let d = self.feature_dim;
        let mut out = vec![0.0; self.len() * d];
        for (row, g) in out.chunks_mut(d.max(1)).zip(&self.gaussians) {
            if let Some(f) = &g.feature {
                row[..d].copy_from_slice(f);
            }
        }
        out
    }

    /// Replace all features with rows of `features` (`N × dim`).
    pub fn set_features(&mut self, features: &[f64], dim: usize) {
        assert_eq!(features.len(), self.len() * dim);
        for (g, row) in self.gaussians.iter_mut().zip(features.chunks(dim.max(1))) {
            g.feature = if dim == 0 { None } else { Some(row.to_vec()) };
        }
        self.feature_dim = dim;
    }
}
