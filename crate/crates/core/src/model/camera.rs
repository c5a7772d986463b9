//! Pinhole cameras and the two supported calibration formats.
//!
//! Camera space follows the OpenCV convention: +x right, +y down, +z forward.
//! Continuous pixel coordinates put the center of pixel `(i, j)` at `(i + 0.5, j + 0.5)`.

use std::path::{Path, PathBuf};

use nalgebra::{Isometry3, Matrix3, Matrix4, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::image::Image;
use crate::model::mask::MaskMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

#[derive(Debug, Clone)]
pub struct CameraView {
    /// Image name (file name as written in the calibration file).
    pub name: String,
    pub intrinsics: Intrinsics,
    pub world_to_camera: Isometry3<f64>,
    pub width: usize,
    pub height: usize,
    pub image: Option<Image>,
    pub mask: Option<MaskMap>,
}

impl CameraView {
    pub fn new(name: impl Into<String>, intrinsics: Intrinsics, world_to_camera: Isometry3<f64>, width: usize, height: usize) -> Self {
        Self {
            name: name.into(),
            intrinsics,
            world_to_camera,
            width,
            height,
            image: None,
            mask: None,
        }
    }

    /// Camera at `eye` looking at `target`, with image-up roughly along `up`.
    pub fn look_at(
        name: impl Into<String>,
        intrinsics: Intrinsics,
        width: usize,
        height: usize,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        // rows of the world->camera rotation are the camera axes in world coordinates
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot));
        let translation = -(rotation * eye);
        Self::new(
            name,
            intrinsics,
            Isometry3::from_parts(Translation3::from(translation), rotation),
            width,
            height,
        )
    }

    pub fn stem(&self) -> &str {
        Path::new(&self.name)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(&self.name)
    }

    pub fn camera_center(&self) -> Vector3<f64> {
        self.world_to_camera.inverse().translation.vector
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        (self.world_to_camera * Point3::from(*world)).coords
    }

    /// Continuous pixel coordinates and camera-space depth; `None` if not in front of the camera.
    pub fn project(&self, world: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let p = self.to_camera(world);
        if p.z <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        Some((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy, p.z))
    }

    /// Camera-space point at continuous pixel `(u, v)` and depth `z`.
    pub fn backproject_camera(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        let k = &self.intrinsics;
        Vector3::new((u - k.cx) / k.fx * z, (v - k.cy) / k.fy * z, z)
    }

    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        let p = self.backproject_camera(u, v, z);
        (self.world_to_camera.inverse() * Point3::from(p)).coords
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0) {
            return Err(Error::Validation(format!("view {}: non-positive focal length", self.name)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation(format!("view {}: empty image size", self.name)));
        }
        if let Some(img) = &self.image {
            if img.width != self.width || img.height != self.height {
                return Err(Error::Validation(format!(
                    "view {}: image is {}x{}, calibration says {}x{}",
                    self.name, img.width, img.height, self.width, self.height
                )));
            }
        }
        if let Some(mask) = &self.mask {
            if mask.width != self.width || mask.height != self.height {
                return Err(Error::Validation(format!("view {}: mask resolution mismatch", self.name)));
            }
        }
        Ok(())
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_num<T: std::str::FromStr>(tok: &str, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::Parse(format!("cannot parse {what} from `{tok}`")))
}

/// Load cameras from a COLMAP text model directory, a directory holding `transforms.json`,
/// or a `.json` transforms file.
pub fn load_cameras(path: &Path) -> Result<Vec<CameraView>> {
    if path.is_file() {
        return load_transforms_json(path);
    }
    let transforms = path.join("transforms.json");
    if transforms.is_file() {
        return load_transforms_json(&transforms);
    }
    for dir in [path.join("sparse").join("0"), path.join("sparse"), path.to_path_buf()] {
        if dir.join("cameras.txt").is_file() {
            return load_colmap_text(&dir);
        }
    }
    Err(Error::MissingAsset(format!(
        "no cameras.txt or transforms.json under {}",
        path.display()
    )))
}

/// COLMAP text model: `cameras.txt` + `images.txt`. Image poses are world→camera with
/// quaternions in `(w, x, y, z)` order.
pub fn load_colmap_text(dir: &Path) -> Result<Vec<CameraView>> {
    let cameras_path = dir.join("cameras.txt");
    let images_path = dir.join("images.txt");
    if !images_path.is_file() {
        return Err(Error::MissingAsset(images_path.display().to_string()));
    }
    let mut cameras = std::collections::HashMap::new();
    for line in read_text(&cameras_path)?.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() < 4 {
            return Err(Error::Parse(format!("short camera line `{line}`")));
        }
        let id: u32 = parse_num(t[0], "camera id")?;
        let width: usize = parse_num(t[2], "width")?;
        let height: usize = parse_num(t[3], "height")?;
        let params: Vec<f64> = t[4..]
            .iter()
            .map(|s| parse_num(s, "camera parameter"))
            .collect::<Result<_>>()?;
        let intr = match (t[1], params.as_slice()) {
            ("SIMPLE_PINHOLE", [f, cx, cy]) => Intrinsics { fx: *f, fy: *f, cx: *cx, cy: *cy },
            ("PINHOLE", [fx, fy, cx, cy]) => Intrinsics { fx: *fx, fy: *fy, cx: *cx, cy: *cy },
            ("SIMPLE_PINHOLE" | "PINHOLE", _) => {
                return Err(Error::Parse(format!("wrong parameter count for {}", t[1])))
            }
            (model, _) => return Err(Error::UnsupportedModel(model.to_string())),
        };
        cameras.insert(id, (intr, width, height));
    }

    let mut views = Vec::new();
    let text = read_text(&images_path)?;
    let mut lines = text.lines().filter(|l| !l.trim_start().starts_with('#'));
    while let Some(line) = lines.next() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() < 10 {
            return Err(Error::Parse(format!("short image line `{line}`")));
        }
        let q: Vec<f64> = t[1..5].iter().map(|s| parse_num(s, "quaternion")).collect::<Result<_>>()?;
        let tr: Vec<f64> = t[5..8].iter().map(|s| parse_num(s, "translation")).collect::<Result<_>>()?;
        let cam_id: u32 = parse_num(t[8], "camera id")?;
        let (intr, w, h) = *cameras
            .get(&cam_id)
            .ok_or_else(|| Error::Validation(format!("image `{}` references unknown camera {cam_id}", t[9])))?;
        let rotation = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
        let pose = Isometry3::from_parts(Translation3::new(tr[0], tr[1], tr[2]), rotation);
        let view = CameraView::new(t[9..].join(" "), intr, pose, w, h);
        view.validate()?;
        views.push(view);
        // the following line lists 2D points; skip it
        lines.next();
    }
    Ok(views)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AxisConvention {
    /// Camera looks down -z with +y up (NeRF / Blender style).
    #[default]
    Opengl,
    /// Camera looks down +z with +y down.
    Opencv,
}

#[derive(Debug, Serialize, Deserialize)]
struct TransformsFrame {
    file_path: String,
    transform_matrix: [[f64; 4]; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fl_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fl_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    h: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TransformsFile {
    #[serde(default)]
    camera_convention: AxisConvention,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fl_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fl_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    h: Option<usize>,
    frames: Vec<TransformsFrame>,
}

fn flip_yz() -> Matrix4<f64> {
    Matrix4::from_diagonal(&nalgebra::Vector4::new(1.0, -1.0, -1.0, 1.0))
}

fn isometry_from_matrix(m: &Matrix4<f64>) -> Result<Isometry3<f64>> {
    let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    if ((r.transpose() * r) - Matrix3::identity()).norm() > 1e-4 || (r.determinant() - 1.0).abs() > 1e-4 {
        return Err(Error::Validation("transform_matrix is not a rigid transform".into()));
    }
    let rotation = UnitQuaternion::from_matrix(&r);
    let t = Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
    Ok(Isometry3::from_parts(Translation3::from(t), rotation))
}

pub fn load_transforms_json(path: &Path) -> Result<Vec<CameraView>> {
    let file: TransformsFile = serde_json::from_str(&read_text(path)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut views = Vec::with_capacity(file.frames.len());
    for frame in &file.frames {
        let pick = |a: Option<f64>, b: Option<f64>, what: &str| {
            a.or(b).ok_or_else(|| Error::Parse(format!("frame {}: missing {what}", frame.file_path)))
        };
        let intr = Intrinsics {
            fx: pick(frame.fl_x, file.fl_x, "fl_x")?,
            fy: pick(frame.fl_y.or(frame.fl_x), file.fl_y.or(file.fl_x), "fl_y")?,
            cx: pick(frame.cx, file.cx, "cx")?,
            cy: pick(frame.cy, file.cy, "cy")?,
        };
        let w = frame.w.or(file.w).ok_or_else(|| Error::Parse("missing w".into()))?;
        let h = frame.h.or(file.h).ok_or_else(|| Error::Parse("missing h".into()))?;
        let rows = frame.transform_matrix;
        let mut c2w = Matrix4::from_fn(|i, j| rows[i][j]);
        if file.camera_convention == AxisConvention::Opengl {
            c2w *= flip_yz();
        }
        let pose = isometry_from_matrix(&c2w)?.inverse();
        let view = CameraView::new(frame.file_path.clone(), intr, pose, w, h);
        view.validate()?;
        views.push(view);
    }
    Ok(views)
}

/// Write views as a transforms JSON (camera-to-world matrices in the given convention).
pub fn save_transforms_json(path: &Path, views: &[CameraView], convention: AxisConvention) -> Result<()> {
    let frames = views
        .iter()
        .map(|v| {
            let mut c2w = v.world_to_camera.inverse().to_homogeneous();
            if convention == AxisConvention::Opengl {
                c2w *= flip_yz();
            }
            TransformsFrame {
                file_path: v.name.clone(),
                transform_matrix: std::array::from_fn(|i| std::array::from_fn(|j| c2w[(i, j)])),
                fl_x: Some(v.intrinsics.fx),
                fl_y: Some(v.intrinsics.fy),
                cx: Some(v.intrinsics.cx),
                cy: Some(v.intrinsics.cy),
                w: Some(v.width),
                h: Some(v.height),
            }
        })
        .collect();
    let file = TransformsFile {
        camera_convention: convention,
        fl_x: None,
        fl_y: None,
        cx: None,
        cy: None,
        w: None,
        h: None,
        frames,
    };
    let text = serde_json::to_string_pretty(&file).expect("transforms serialize");
    crate::io_util::write_file(path, text.as_bytes())
}

/// Write a COLMAP text model (`cameras.txt`, `images.txt`, empty `points3D.txt`).
pub fn save_colmap_text(dir: &Path, views: &[CameraView]) -> Result<()> {
    let mut cams = String::from("# Camera list with one line of data per camera:\n");
    let mut imgs = String::from("# Image list with two lines of data per image:\n");
    for (i, v) in views.iter().enumerate() {
        let k = &v.intrinsics;
        cams.push_str(&format!(
            "{} PINHOLE {} {} {} {} {} {}\n",
            i + 1,
            v.width,
            v.height,
            k.fx,
            k.fy,
            k.cx,
            k.cy
        ));
        let q = v.world_to_camera.rotation.quaternion();
        let t = v.world_to_camera.translation.vector;
        imgs.push_str(&format!(
            "{} {} {} {} {} {} {} {} {} {}\n\n",
            i + 1,
            q.w,
            q.i,
            q.j,
            q.k,
            t.x,
            t.y,
            t.z,
            i + 1,
            v.name
        ));
    }
    crate::io_util::write_file(&dir.join("cameras.txt"), cams.as_bytes())?;
    crate::io_util::write_file(&dir.join("images.txt"), imgs.as_bytes())?;
    crate::io_util::write_file(&dir.join("points3D.txt"), b"")
}

/// Where the mask for a given image lives: `<dir>/<stem>.mask.png`.
pub fn mask_path_for(dir: &Path, view: &CameraView) -> PathBuf {
    dir.join(format!("{}.mask.png", view.stem()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple_view() -> CameraView {
        CameraView::new(
            "a.png",
            Intrinsics { fx: 100.0, fy: 100.0, cx: 50.0, cy: 50.0 },
            Isometry3::identity(),
            100,
            100,
        )
    }

    #[test]
    fn principal_point_projection() {
        let (u, v, z) = simple_view().project(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((u, v, z), (50.0, 50.0, 1.0));
    }

    #[test]
    fn points_behind_camera_do_not_project() {
        assert!(simple_view().project(&Vector3::new(0.0, 0.0, -1.0)).is_none());
    }

    #[test]
    fn look_at_centers_target() {
        let v = CameraView::look_at(
            "x",
            Intrinsics { fx: 80.0, fy: 80.0, cx: 32.0, cy: 24.0 },
            64,
            48,
            Vector3::new(3.0, 1.0, -2.0),
            Vector3::new(0.1, 0.2, 0.3),
            Vector3::z(),
        );
        let (u, w, _) = v.project(&Vector3::new(0.1, 0.2, 0.3)).unwrap();
        assert!((u - 32.0).abs() < 1e-9 && (w - 24.0).abs() < 1e-9);
        assert!((v.camera_center() - Vector3::new(3.0, 1.0, -2.0)).norm() < 1e-12);
    }

    #[test]
    fn unknown_model_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("cameras.txt"), "1 OPENCV 10 10 1 1 5 5 0 0 0 0\n").unwrap();
        std::fs::write(dir.path().join("images.txt"), "").unwrap();
        assert!(matches!(load_colmap_text(dir.path()), Err(Error::UnsupportedModel(m)) if m == "OPENCV"));
    }

    #[test]
    fn missing_images_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("cameras.txt"), "1 PINHOLE 10 10 1 1 5 5\n").unwrap();
        assert!(matches!(load_cameras(dir.path()), Err(Error::MissingAsset(_))));
    }
}
