//! Asset round trips and activation / projection properties.

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use splatprop::model::camera::{load_colmap_text, load_transforms_json, save_colmap_text, save_transforms_json};
use splatprop::model::ply::{encode_gaussian_ply, parse_gaussian_ply};
use splatprop::model::{AxisConvention, CameraView, Gaussian, GaussianCloud, Intrinsics, PropertyLabel};

fn f32v() -> impl Strategy<Value = f64> {
    (-50.0f32..50.0).prop_map(f64::from)
}

fn gaussian(degree: usize, dim: usize) -> impl Strategy<Value = Gaussian> {
    let coeffs = (degree + 1) * (degree + 1);
    (
        prop::array::uniform3(f32v()),
        prop::array::uniform4(0.1f32..1.0),
        prop::array::uniform3(-5.0f32..1.0),
        -8.0f32..8.0,
        prop::collection::vec(prop::array::uniform3(-2.0f32..2.0), coeffs),
        prop::collection::vec(-1.0f32..1.0, dim),
    )
        .prop_map(move |(c, q, s, o, sh, f)| Gaussian {
            center: Vector3::new(c[0], c[1], c[2]),
            rotation: q.map(f64::from),
            log_scale: Vector3::new(s[0].into(), s[1].into(), s[2].into()),
            opacity_logit: o.into(),
            sh: sh.into_iter().map(|c| c.map(f64::from)).collect(),
            feature: (dim > 0).then(|| f.into_iter().map(f64::from).collect()),
        })
}

fn cloud() -> impl Strategy<Value = GaussianCloud> {
    (0usize..=3, prop_oneof![Just(0usize), Just(4)], any::<bool>())
        .prop_flat_map(|(deg, dim, labelled)| (prop::collection::vec(gaussian(deg, dim), 1..20), Just(labelled)))
        .prop_map(|(g, labelled)| {
            let mut c = GaussianCloud::new(g).unwrap();
            if labelled {
                c.labels = Some((0..c.len()).map(|i| PropertyLabel { material_id: i as u32 % 3, value: 700.0 + i as f64 }).collect());
            }
            c
        })
}

proptest! {
    #[test]
    fn ply_round_trip_is_field_exact(c in cloud()) {
        let first = parse_gaussian_ply(&encode_gaussian_ply(&c).unwrap()).unwrap();
        let second = parse_gaussian_ply(&encode_gaussian_ply(&first).unwrap()).unwrap();
        prop_assert_eq!(&first, &second);
        prop_assert_eq!(first.sh_degree, c.sh_degree);
        for g in &first.gaussians {
            prop_assert!((g.unit_rotation().into_inner().norm() - 1.0).abs() < 1e-6);
            prop_assert!(g.scales().iter().all(|s| *s > 0.0));
            prop_assert!(g.opacity() > 0.0 && g.opacity() < 1.0);
        }
    }

    #[test]
    fn opacity_increases_with_logit(a in -30.0f64..30.0, d in 1e-3f64..5.0) {
        let mut g = Gaussian::isotropic(Vector3::zeros(), 1.0, 0.5, [0.5; 3]);
        g.opacity_logit = a;
        let lo = g.opacity();
        g.opacity_logit = a + d;
        prop_assert!(g.opacity() > lo);
    }

    #[test]
    fn unproject_inverts_project(
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in -3.0f64..3.0,
        t in prop::array::uniform3(-5.0f64..5.0),
        p in prop::array::uniform3(-3.0f64..3.0),
        depth in 0.5f64..20.0,
        f in 20.0f64..2000.0,
    ) {
        let axis = Vector3::from(axis);
        prop_assume!(axis.norm() > 1e-3);
        let pose = Isometry3::from_parts(Translation3::new(t[0], t[1], t[2]), UnitQuaternion::from_scaled_axis(axis.normalize() * angle));
        let view = CameraView::new("x.png", Intrinsics { fx: f, fy: f * 1.1, cx: 320.0, cy: 240.0 }, pose, 640, 480);
        // place the point in front of the camera
        let world = pose.inverse_transform_point(&nalgebra::Point3::new(p[0], p[1], depth)).coords;
        let (u, v, z) = view.project(&world).unwrap();
        let back = view.unproject(u, v, z);
        prop_assert!((back - world).norm() < 1e-6);
    }
}

#[test]
fn calibration_formats_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let views: Vec<CameraView> = (0..4)
        .map(|i| {
            let a = i as f64 * 1.3;
            CameraView::look_at(
                format!("img_{i}.png"),
                Intrinsics { fx: 500.0, fy: 510.0, cx: 320.0, cy: 240.0 },
                640,
                480,
                Vector3::new(3.0 * a.cos(), 0.5 * i as f64, 3.0 * a.sin()),
                Vector3::zeros(),
                Vector3::new(0.0, -1.0, 0.0),
            )
        })
        .collect();
    let probe = Vector3::new(0.2, -0.1, 0.3);
    let check = |loaded: &[CameraView]| {
        assert_eq!(loaded.len(), views.len());
        for (a, b) in loaded.iter().zip(&views) {
            assert_eq!(a.name, b.name);
            assert_eq!((a.width, a.height), (b.width, b.height));
            let (pa, pb) = (a.project(&probe).unwrap(), b.project(&probe).unwrap());
            assert!((pa.0 - pb.0).abs() < 1e-6 && (pa.1 - pb.1).abs() < 1e-6 && (pa.2 - pb.2).abs() < 1e-9);
        }
    };
    for convention in [AxisConvention::Opengl, AxisConvention::Opencv] {
        let path = dir.path().join("transforms.json");
        save_transforms_json(&path, &views, convention).unwrap();
        check(&load_transforms_json(&path).unwrap());
    }
    let colmap = dir.path().join("sparse");
    save_colmap_text(&colmap, &views).unwrap();
    check(&load_colmap_text(&colmap).unwrap());
}
