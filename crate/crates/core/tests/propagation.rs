use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatprop::model::{Gaussian, GaussianCloud};
use splatprop::propagate::*;

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

#[test]
fn fused_value_stays_in_hull_for_random_dictionaries() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..1000 {
        let k = rng.random_range(1..=8);
        let values: Vec<f64> = (0..k).map(|_| 10f64.powf(rng.random_range(-2.0..4.0))).collect();
        let sims: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = 10f64.powf(rng.random_range(-4.0..2.0));
        let (rho, w) = softmax_fuse(&sims, &values, t);
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo <= rho && rho <= hi, "{rho} outside [{lo}, {hi}]");
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn cold_limit_selects_argmax_material() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..1000 {
        let k = rng.random_range(2..=8);
        let values: Vec<f64> = (0..k).map(|_| rng.random_range(1.0..10000.0)).collect();
        let sims: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let best = argmax(&sims);
        let spread = values.iter().map(|y| (y - values[best]).abs()).fold(0.0, f64::max);
        let mut last_bound = f64::INFINITY;
        for t in [1.0, 0.1, 0.001] {
            let (rho, w) = softmax_fuse(&sims, &values, t);
            let bound = (1.0 - w[best]) * spread;
            assert!((rho - values[best]).abs() <= bound + 1e-9, "trial {trial}");
            assert!(bound <= last_bound + 1e-12);
            last_bound = bound;
        }
        let (rho, _) = softmax_fuse(&sims, &values, 1e-12);
        assert_eq!(rho, values[best], "trial {trial}");
    }
}

fn fused_point(pos: Vector3<f64>, g: usize, material: usize, value: f64) -> SourcePoint {
    let mut s = SourcePoint::new(pos, g);
    s.embedding = Some(vec![1.0]);
    s.material = Some(material);
    s.property_value = Some(value);
    s
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> GaussianCloud {
    let g = (0..n)
        .map(|_| Gaussian::isotropic(Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)), 0.02, 0.5, [0.5; 3]))
        .collect();
    let mut cloud = GaussianCloud::new(g).unwrap();
    let feats: Vec<f64> = (0..n).flat_map(|_| unit(rng, dim)).collect();
    cloud.set_features(&feats, dim);
    cloud
}

#[test]
fn every_gaussian_a_source_gives_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cloud = random_cloud(&mut rng, 400, 16);
    let points: Vec<SourcePoint> = cloud
        .gaussians
        .iter()
        .enumerate()
        .map(|(i, g)| fused_point(g.center, i, i % 3, i as f64))
        .collect();
    let a = propagate(&cloud, &points).unwrap();
    assert_eq!(a.source, (0..400).collect::<Vec<_>>());
    assert_eq!(a.fallback_count, 0);
}

#[test]
fn single_source_takes_everything() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cloud = random_cloud(&mut rng, 50, 8);
    let points = vec![fused_point(cloud.gaussians[7].center, 7, 2, 5.5)];
    let a = propagate(&cloud, &points).unwrap();
    assert!(a.value.iter().all(|&v| v == 5.5));
    assert!(a.material.iter().all(|&m| m == 2));
}

#[test]
fn nearest_neighbor_matches_all_pairs_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let cloud = random_cloud(&mut rng, 3000, 2);
    let mut points: Vec<SourcePoint> = (0..300)
        .map(|i| fused_point(Vector3::from_fn(|_, _| rng.random_range(-1.2..1.2)), i, i % 4, i as f64))
        .collect();
    // a few unfused points must be ignored
    for p in points.iter_mut().step_by(17) {
        p.property_value = None;
        p.material = None;
    }
    // exact duplicates exercise the tie rule
    let dup = points[5].clone();
    points.push(dup);
    let a = propagate_nn_baseline(&cloud, &points).unwrap();
    for (i, g) in cloud.gaussians.iter().enumerate() {
        let mut best = (f64::INFINITY, usize::MAX);
        for (k, p) in points.iter().enumerate() {
            if !p.is_fused() {
                continue;
            }
            let d = (p.position() - g.center).norm_squared();
            if d < best.0 {
                best = (d, k);
            }
        }
        assert_eq!(a.source[i], best.1, "gaussian {i}");
    }
}

#[test]
fn grid_down_sampling_counts() {
    let s = 0.25;
    let mut g = Vec::new();
    for i in 0..10 {
        for j in 0..10 {
            for k in 0..10 {
                g.push(Gaussian::isotropic(Vector3::new(i as f64 * s, j as f64 * s, k as f64 * s), 0.01, 0.5, [0.5; 3]));
            }
        }
    }
    let cloud = GaussianCloud::new(g).unwrap();
    assert_eq!(sample_source_points(&cloud, 2.0 * s).unwrap().len(), 125);
    assert_eq!(sample_source_points(&cloud, 0.5 * s).unwrap().len(), 1000);
    let pair = GaussianCloud::new(vec![
        Gaussian::isotropic(Vector3::new(0.0, 0.0, 0.0), 0.01, 0.5, [0.5; 3]),
        Gaussian::isotropic(Vector3::new(0.01, 0.0, 0.0), 0.01, 0.5, [0.5; 3]),
    ])
    .unwrap();
    assert_eq!(sample_source_points(&pair, 1.0).unwrap().len(), 1);
}

#[test]
fn two_orthogonal_views_average_to_diagonal() {
    let e1 = vec![1.0, 0.0];
    let e2 = vec![0.0, 1.0];
    let mean: Vec<f64> = e1.iter().zip(&e2).map(|(a, b)| (a + b) / 2.0).collect();
    let n = (mean[0] * mean[0] + mean[1] * mean[1]).sqrt();
    let mut points = vec![SourcePoint::new(Vector3::zeros(), 0)];
    points[0].embedding = Some(mean.iter().map(|v| v / n).collect());
    fuse_properties(&mut points, &[1.0, 3.0], &[e1, e2], 1.0).unwrap();
    for s in &points[0].material_similarity {
        assert!((s - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    }
    assert!((points[0].property_value.unwrap() - 2.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn scaling_features_changes_no_assignment(seed in any::<u64>(), k in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cloud = random_cloud(&mut rng, 60, 6);
        let points: Vec<SourcePoint> = (0..60).step_by(7)
            .map(|i| fused_point(cloud.gaussians[i].center, i, i % 3, i as f64))
            .collect();
        let before = propagate(&cloud, &points).unwrap();
        let scaled: Vec<f64> = cloud.feature_matrix().iter().map(|f| f * k).collect();
        cloud.set_features(&scaled, 6);
        let after = propagate(&cloud, &points).unwrap();
        prop_assert_eq!(before.source, after.source);
    }

    #[test]
    fn every_gaussian_gets_one_dictionary_material(seed in any::<u64>(), n_src in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cloud = random_cloud(&mut rng, 80, 4);
        let k = 3;
        let points: Vec<SourcePoint> = (0..n_src)
            .map(|i| fused_point(cloud.gaussians[i].center, i, rng.random_range(0..k), 1.0))
            .collect();
        for a in [propagate(&cloud, &points).unwrap(), propagate_nn_baseline(&cloud, &points).unwrap()] {
            prop_assert_eq!(a.len(), cloud.len());
            prop_assert!(a.material.iter().all(|&m| m < k));
        }
    }

    #[test]
    fn fusion_is_convex(sims in prop::collection::vec(-1.0f64..1.0, 1..10), seed in any::<u64>(), t in 1e-3f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = sims.iter().map(|_| rng.random_range(0.1..9000.0)).collect();
        let (rho, _) = softmax_fuse(&sims, &values, t);
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= rho && rho <= hi);
    }
}
