use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatprop::model::{CameraView, Gaussian, GaussianCloud, Intrinsics};
use splatprop::render::{project, rasterize, render, render_feature_weights, FeatureTable, RenderSettings};

#[path = "support/raster_oracle.rs"]
mod oracle;

use oracle::*;

#[test]
fn tile_renderer_matches_brute_force_on_random_scenes() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let dim = 4;
    let mut worst: f64 = 0.0;
    for scene in 0..20 {
        let n = rng.random_range(1..=500);
        let mut cloud = random_scene(&mut rng, n);
        let feats: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        cloud.set_features(&feats, dim);
        let view = random_view(&mut rng);
        let settings = RenderSettings { background: [0.1, 0.2, 0.3], ..Default::default() };
        let projected = project(&cloud, &view, settings.near_clip);
        let table = FeatureTable { data: &feats, dim };
        let tiled = rasterize(&projected, Some(table), view.width, view.height, &settings);
        let oracle = brute_force(&projected, &feats, dim, view.width, view.height, settings.background);
        let diffs = [
            max_diff(&tiled.rgb.as_ref().unwrap().data, &oracle.rgb),
            max_diff(&tiled.depth.as_ref().unwrap().data, &oracle.depth),
            max_diff(&tiled.normal.as_ref().unwrap().data, &oracle.normal),
            max_diff(&tiled.feature.as_ref().unwrap().data, &oracle.feature),
            max_diff(&tiled.alpha.data, &oracle.alpha),
        ];
        let d = diffs.iter().copied().fold(0.0, f64::max);
        assert!(d < 1e-5, "scene {scene}: {diffs:?}");
        worst = worst.max(d);
    }
    let elapsed = start.elapsed();
    println!("worst diff {worst:e}, {elapsed:?}");
    assert!(elapsed.as_secs_f64() < 10.0);
}

#[test]
fn two_half_alpha_splats_composite_in_closed_form() {
    // opacity 0.5 centered exactly on the pixel center gives alpha 0.5 there
    let view = CameraView::look_at(
        "v.png",
        Intrinsics { fx: 50.0, fy: 50.0, cx: 8.5, cy: 8.5 },
        17,
        17,
        Vector3::new(0.0, 0.0, -5.0),
        Vector3::zeros(),
        Vector3::new(0.0, -1.0, 0.0),
    );
    let c1 = [0.9, 0.1, 0.3];
    let c2 = [0.2, 0.7, 0.5];
    let cloud = GaussianCloud::new(vec![
        Gaussian::isotropic(Vector3::new(0.0, 0.0, 0.0), 0.05, 0.5, c1),
        Gaussian::isotropic(Vector3::new(0.0, 0.0, 1.0), 0.05, 0.5, c2),
    ])
    .unwrap();
    let b = render(&cloud, &view, &RenderSettings::default());
    let rgb = b.rgb.unwrap();
    let center = 8 * 17 + 8;
    for c in 0..3 {
        let expected = 0.5 * c1[c] + 0.25 * c2[c];
        assert!((rgb.pixel(center)[c] - expected).abs() < 1e-7, "{c}: {} vs {expected}", rgb.pixel(center)[c]);
    }
    assert!((b.alpha.data[center] - 0.75).abs() < 1e-7);
}

#[test]
fn single_opaque_splat_is_clipped() {
    let view = CameraView::look_at(
        "v.png",
        Intrinsics { fx: 50.0, fy: 50.0, cx: 4.5, cy: 4.5 },
        9,
        9,
        Vector3::new(0.0, 0.0, -5.0),
        Vector3::zeros(),
        Vector3::new(0.0, -1.0, 0.0),
    );
    let c = [0.3, 0.6, 0.9];
    let cloud = GaussianCloud::new(vec![Gaussian::isotropic(Vector3::zeros(), 0.05, 1.0 - 1e-12, c)]).unwrap();
    let b = render(&cloud, &view, &RenderSettings::default());
    let p = 4 * 9 + 4;
    assert!((b.alpha.data[p] - 0.99).abs() < 1e-9);
    for k in 0..3 {
        assert!((b.rgb.as_ref().unwrap().pixel(p)[k] - 0.99 * c[k]).abs() < 1e-9);
    }
}

#[test]
fn blend_weights_reconstruct_feature_buffer() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let n = 200;
        let dim = 3;
        let mut cloud = random_scene(&mut rng, n);
        let feats: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        cloud.set_features(&feats, dim);
        let view = random_view(&mut rng);
        let projected = project(&cloud, &view, 0.01);
        let buffers = render(&cloud, &view, &RenderSettings::default());
        let weights = render_feature_weights(&projected, view.width, view.height);
        let rebuilt = weights.feature_map(FeatureTable { data: &feats, dim });
        assert!(max_diff(&rebuilt.data, &buffers.feature.unwrap().data) < 1e-6);
        for p in 0..weights.pixel_count() {
            let s: f64 = weights.pixel(p).iter().map(|(_, w)| w).sum();
            assert!((s - buffers.alpha.data[p]).abs() < 1e-6);
        }
    }
}

#[test]
fn permuting_input_leaves_buffers_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cloud = random_scene(&mut rng, 150);
    let view = random_view(&mut rng);
    let mut perm: Vec<usize> = (0..cloud.len()).collect();
    for i in (1..perm.len()).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let shuffled = GaussianCloud::new(perm.iter().map(|&i| cloud.gaussians[i].clone()).collect()).unwrap();
    let settings = RenderSettings::default();
    let a = render(&cloud, &view, &settings);
    let b = render(&shuffled, &view, &settings);
    assert!(max_diff(&a.rgb.unwrap().data, &b.rgb.unwrap().data) < 1e-12);
    assert!(max_diff(&a.alpha.data, &b.alpha.data) < 1e-12);
}
