//! EWA projection of 3D Gaussians into screen-space ellipses.

use nalgebra::{Matrix2x3, Matrix3, Vector3};

use crate::model::{CameraView, GaussianCloud};

/// Added to the diagonal of every 2D covariance (pixels²).
pub const COV2D_DILATION: f64 = 0.3;
/// Upper clip on per-splat alpha.
pub const ALPHA_MAX: f64 = 0.99;
/// Splat contributions below this alpha are skipped.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedGaussian {
    /// Index of the source Gaussian in its cloud.
    pub index: usize,
    /// Continuous pixel coordinates of the projected center.
    pub mean2d: [f64; 2],
    /// Dilated screen covariance `(xx, xy, yy)`.
    pub cov2d: [f64; 3],
    /// Inverse of `cov2d`, same layout.
    pub conic: [f64; 3],
    /// Camera-space z of the center.
    pub depth: f64,
    pub color: [f64; 3],
    /// Activated opacity.
    pub opacity: f64,
    /// Camera-space unit normal, facing the camera.
    pub normal_cam: Vector3<f64>,
    /// Half-widths (pixels) of the box outside which alpha stays below [`ALPHA_MIN`].
    pub extent: [f64; 2],
}

impl ProjectedGaussian {
    /// Unclipped `opacity * exp(-½ dᵀ Σ⁻¹ d)` at continuous pixel position `(x, y)`.
    #[inline]
    pub fn raw_alpha_at(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.mean2d[0];
        let dy = y - self.mean2d[1];
        let [a, b, c] = self.conic;
        let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
        if power > 0.0 {
            return 0.0;
        }
        self.opacity * power.exp()
    }

    /// Compositing alpha at `(x, y)`: clipped at [`ALPHA_MAX`], zero below [`ALPHA_MIN`].
    #[inline]
    pub fn alpha_at(&self, x: f64, y: f64) -> f64 {
        let a = self.raw_alpha_at(x, y).min(ALPHA_MAX);
        if a < ALPHA_MIN {
            0.0
        } else {
            a
        }
    }
}

/// Screen-space covariance `J W Σ Wᵀ Jᵀ` for a camera-space center `t`, before dilation.
pub fn screen_covariance(cov_world: &Matrix3<f64>, world_rot: &Matrix3<f64>, t: &Vector3<f64>, fx: f64, fy: f64) -> [f64; 3] {
    let z = t.z;
    let j = Matrix2x3::new(
        fx / z,
        0.0,
        -fx * t.x / (z * z),
        0.0,
        fy / z,
        -fy * t.y / (z * z),
    );
    let cov_cam = world_rot * cov_world * world_rot.transpose();
    let c = j * cov_cam * j.transpose();
    [c[(0, 0)], 0.5 * (c[(0, 1)] + c[(1, 0)]), c[(1, 1)]]
}

/// Project every Gaussian in front of `near_clip` whose visible footprint touches the image.
pub fn project(cloud: &GaussianCloud, view: &CameraView, near_clip: f64) -> Vec<ProjectedGaussian> {
    assert!(near_clip > 0.0, "near_clip must be positive");
    let world_rot = view.world_to_camera.rotation.to_rotation_matrix().into_inner();
    let cam_center = view.camera_center();
    let k = view.intrinsics;
    let (w, h) = (view.width as f64, view.height as f64);

    let mut out = Vec::new();
    for (index, g) in cloud.gaussians.iter().enumerate() {
        let t = view.to_camera(&g.center);
        if t.z <= near_clip {
            continue;
        }
        let opacity = g.opacity();
        // alpha >= ALPHA_MIN requires dᵀΣ⁻¹d <= 2 ln(opacity / ALPHA_MIN)
        let reach = 2.0 * (opacity / ALPHA_MIN).ln();
        if !(reach > 0.0) {
            continue;
        }
        let [xx, xy, yy] = screen_covariance(&g.covariance(), &world_rot, &t, k.fx, k.fy);
        let cov2d = [xx + COV2D_DILATION, xy, yy + COV2D_DILATION];
        let det = cov2d[0] * cov2d[2] - cov2d[1] * cov2d[1];
        if !(det > 0.0) {
            continue;
        }
        let conic = [cov2d[2] / det, -cov2d[1] / det, cov2d[0] / det];
        let mean2d = [k.fx * t.x / t.z + k.cx, k.fy * t.y / t.z + k.cy];
        let r = reach.sqrt();
        let extent = [r * cov2d[0].sqrt(), r * cov2d[2].sqrt()];
        // pixel centers span [0.5, size - 0.5]
        if mean2d[0] + extent[0] < 0.5
            || mean2d[0] - extent[0] > w - 0.5
            || mean2d[1] + extent[1] < 0.5
            || mean2d[1] - extent[1] > h - 0.5
        {
            continue;
        }
        let mut normal_cam = world_rot * g.min_scale_axis();
        if normal_cam.dot(&t) > 0.0 {
            normal_cam = -normal_cam;
        }
        out.push(ProjectedGaussian {
            index,
            mean2d,
            cov2d,
            conic,
            depth: t.z,
            color: g.color_from(&cam_center),
            opacity,
            normal_cam,
            extent,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Gaussian, Intrinsics};
    use nalgebra::{Isometry3, UnitQuaternion};

    fn view() -> CameraView {
        CameraView::new(
            "v",
            Intrinsics { fx: 200.0, fy: 200.0, cx: 32.0, cy: 32.0 },
            Isometry3::identity(),
            64,
            64,
        )
    }

    #[test]
    fn gaussian_at_camera_origin_is_culled() {
        let cloud = GaussianCloud::new(vec![Gaussian::isotropic(Vector3::zeros(), 0.1, 0.9, [1.0; 3])]).unwrap();
        assert!(project(&cloud, &view(), 0.01).is_empty());
    }

    #[test]
    fn isotropic_on_axis_matches_pinhole_scaling() {
        let (s, z, f) = (0.05, 4.0, 200.0);
        let cloud = GaussianCloud::new(vec![Gaussian::isotropic(Vector3::new(0.0, 0.0, z), s, 0.9, [1.0; 3])]).unwrap();
        let p = &project(&cloud, &view(), 0.01)[0];
        let expected = (f * s / z).powi(2) + COV2D_DILATION;
        assert!((p.cov2d[0] - expected).abs() < 1e-12);
        assert!((p.cov2d[2] - expected).abs() < 1e-12);
        assert!(p.cov2d[1].abs() < 1e-12);
        assert_eq!(p.mean2d, [32.0, 32.0]);
    }

    #[test]
    fn normal_faces_camera_and_ignores_spin() {
        let make = |angle: f64| {
            let rot = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 0.3)
                * UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle);
            Gaussian::new(Vector3::new(0.0, 0.0, 3.0), rot, Vector3::new(0.2, 0.1, 0.001), 0.9, [0.5; 3])
        };
        let cloud = GaussianCloud::new(vec![make(0.0), make(std::f64::consts::FRAC_PI_2)]).unwrap();
        let p = project(&cloud, &view(), 0.01);
        assert_eq!(p.len(), 2);
        for g in &p {
            assert!(g.normal_cam.dot(&Vector3::new(0.0, 0.0, 3.0)) < 0.0);
        }
        assert!((p[0].normal_cam - p[1].normal_cam).norm() < 1e-12);
    }

    #[test]
    fn far_off_screen_is_culled() {
        let cloud = GaussianCloud::new(vec![Gaussian::isotropic(Vector3::new(50.0, 0.0, 1.0), 0.01, 0.9, [1.0; 3])]).unwrap();
        assert!(project(&cloud, &view(), 0.01).is_empty());
    }
}
