//! Synthetic scenes with known structure, used by tests, the acceptance suite and the `synth` command.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{Config, EmbeddingBackend};
use crate::error::Result;
use crate::eval::harness::GroundTruth;
use crate::model::camera::{mask_path_for, save_transforms_json, AxisConvention};
use crate::model::mask::save_mask_map;
use crate::model::material::{save_material_dictionary, MaterialEntry, PropertyKind, PropertyValue};
use crate::model::{save_gaussian_ply, save_png, CameraView, Gaussian, GaussianCloud, Image, Intrinsics, MaskMap, MaterialDictionary};
use crate::propagate::{
    patch_requests, plan_observations, render_depth_buffers, sample_source_points, text_key, EmbeddingArchive,
    EmbeddingProvider, SyntheticEmbeddings,
};
use crate::render::{project, render, render_feature_weights, Channels, RenderSettings};

#[derive(Debug, Clone, PartialEq)]
pub struct TwoClusterSpec {
    pub per_cluster: usize,
    /// Distance between the two blob centers along x.
    pub separation: f64,
    pub radius: f64,
    pub scale: f64,
    pub opacity: f64,
    pub resolution: usize,
    pub focal: f64,
    pub camera_distance: f64,
    pub seed: u64,
}

impl Default for TwoClusterSpec {
    fn default() -> Self {
        Self {
            per_cluster: 40,
            separation: 1.2,
            radius: 0.25,
            scale: 0.07,
            opacity: 0.6,
            resolution: 64,
            focal: 55.0,
            camera_distance: 3.0,
            seed: 7,
        }
    }
}

pub const CLUSTER_COLORS: [[f64; 3]; 2] = [[0.8, 0.3, 0.2], [0.2, 0.4, 0.8]];

/// Two separated blobs of isotropic Gaussians seen from four views with rendered images and masks.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub cloud: GaussianCloud,
    pub views: Vec<CameraView>,
    /// Cluster index (0 or 1) of every Gaussian.
    pub cluster_of: Vec<usize>,
}

fn sample_ball(rng: &mut ChaCha8Rng, radius: f64) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm_squared() <= 1.0 {
            return v * radius;
        }
    }
}

/// Four cameras on both sides of the x axis so the blobs never overlap on screen.
pub fn ring_views(resolution: usize, focal: f64, distance: f64) -> Vec<CameraView> {
    let c = resolution as f64 / 2.0;
    let intr = Intrinsics { fx: focal, fy: focal, cx: c, cy: c };
    let poses = [
        ("front", Vector3::new(0.3, 0.2, -1.0), Vector3::new(0.0, -1.0, 0.0)),
        ("back", Vector3::new(-0.3, 0.2, 1.0), Vector3::new(0.0, -1.0, 0.0)),
        ("top", Vector3::new(0.2, -1.0, 0.3), Vector3::new(0.0, 0.0, 1.0)),
        ("bottom", Vector3::new(-0.2, 1.0, -0.3), Vector3::new(0.0, 0.0, 1.0)),
    ];
    poses
        .iter()
        .map(|(name, dir, up)| {
            let eye = dir.normalize() * distance;
            CameraView::look_at(format!("{name}.png"), intr, resolution, resolution, eye, Vector3::zeros(), *up)
        })
        .collect()
}

/// Mask ids from per-group blend weights: `1 + argmax_group` where alpha ≥ 0.5, else 0.
pub fn masks_from_groups(cloud: &GaussianCloud, view: &CameraView, group_of: &[usize], groups: usize) -> MaskMap {
    let projected = project(cloud, view, RenderSettings::default().near_clip);
    let weights = render_feature_weights(&projected, view.width, view.height);
    let mut mask = MaskMap::new(view.width, view.height);
    let mut acc = vec![0.0; groups];
    for p in 0..weights.pixel_count() {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for &(i, w) in weights.pixel(p) {
            acc[group_of[i as usize]] += w;
        }
        if acc.iter().sum::<f64>() >= 0.5 {
            let best = (0..groups).fold(0, |b, g| if acc[g] > acc[b] { g } else { b });
            mask.ids[p] = best as u16 + 1;
        }
    }
    mask
}

pub fn two_cluster_scene(spec: &TwoClusterSpec) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut gaussians = Vec::with_capacity(2 * spec.per_cluster);
    let mut cluster_of = Vec::with_capacity(2 * spec.per_cluster);
    for (c, sign) in [-1.0, 1.0].into_iter().enumerate() {
        let center = Vector3::new(sign * spec.separation / 2.0, 0.0, 0.0);
        for _ in 0..spec.per_cluster {
            let pos = center + sample_ball(&mut rng, spec.radius);
            gaussians.push(Gaussian::isotropic(pos, spec.scale, spec.opacity, CLUSTER_COLORS[c]));
            cluster_of.push(c);
        }
    }
    let cloud = GaussianCloud::new(gaussians).expect("finite synthetic cloud");
    let mut views = ring_views(spec.resolution, spec.focal, spec.camera_distance);
    let settings = RenderSettings { channels: Channels::RGB, ..Default::default() };
    for v in &mut views {
        let buffers = render(&cloud, v, &settings);
        v.image = buffers.rgb;
        v.mask = Some(masks_from_groups(&cloud, v, &cluster_of, 2));
    }
    SyntheticScene { cloud, views, cluster_of }
}

/// Background-only image used when a view needs a placeholder.
pub fn blank_image(width: usize, height: usize) -> Image {
    Image::new(width, height, 3)
}

/// A two-cluster object directory with known materials and ground-truth mass.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub scene: TwoClusterSpec,
    /// Material name and density (kg/m³) of each cluster. Equal entries give a single-material object.
    pub materials: [(String, f64); 2],
    pub embedding_dim: usize,
    /// Length of the random offset added to each unit patch embedding.
    pub embedding_noise: f64,
    /// Position jitter of the geometry-ablated splat, relative to the cluster radius.
    pub no_garl_jitter: f64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            scene: TwoClusterSpec::default(),
            materials: [("oak".into(), 700.0), ("steel".into(), 7850.0)],
            embedding_dim: 64,
            embedding_noise: 0.5,
            no_garl_jitter: 0.3,
        }
    }
}

impl FixtureSpec {
    pub fn single_material(name: &str, density: f64) -> Self {
        Self { materials: [(name.into(), density), (name.into(), density)], ..Self::default() }
    }

    /// Volume of one cluster's solid ball.
    pub fn cluster_volume(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * self.scene.radius.powi(3)
    }

    pub fn true_volume(&self) -> f64 {
        2.0 * self.cluster_volume()
    }

    pub fn true_mass(&self) -> f64 {
        self.materials.iter().map(|(_, rho)| rho * self.cluster_volume()).sum()
    }
}

/// Configuration sized for fixture objects: small patches for 64-pixel images and a short training run.
pub fn fixture_config() -> Config {
    let mut c = Config::default();
    c.features.iterations = 300;
    c.features.pairs_per_iteration = 2048;
    c.propagation.patch_size = 15;
    c.embeddings.backend = EmbeddingBackend::Archive;
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureInfo {
    pub gaussians: usize,
    pub views: usize,
    pub materials: BTreeMap<String, f64>,
    pub true_volume_m3: f64,
    pub mass_kg: f64,
    pub archive_entries: usize,
}

fn jittered(cloud: &GaussianCloud, amount: f64, seed: u64) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, amount).expect("finite jitter");
    let mut out = cloud.clone();
    for g in &mut out.gaussians {
        g.center += Vector3::from_fn(|_, _| normal.sample(&mut rng));
    }
    out
}

/// Patch embeddings that point at the text embedding of the cluster each source point belongs to.
fn semantic_archive(
    clouds: &[&GaussianCloud],
    cluster_of: &[usize],
    views: &[CameraView],
    spec: &FixtureSpec,
    config: &Config,
) -> Result<EmbeddingArchive> {
    let text = SyntheticEmbeddings { dim: spec.embedding_dim, seed: spec.scene.seed };
    let noise = SyntheticEmbeddings { dim: spec.embedding_dim, seed: spec.scene.seed ^ 0x5eed };
    let mut archive = EmbeddingArchive::new(Some("synthetic".into()));
    for (name, _) in &spec.materials {
        archive.insert(text_key(name), &text.text_embedding(name)?)?;
    }
    let prop = &config.propagation;
    for cloud in clouds {
        let extent = cloud.bounds_diagonal();
        let points = sample_source_points(cloud, prop.voxel_size_for(extent))?;
        let buffers = render_depth_buffers(cloud, views);
        let plan = plan_observations(&points, views, &buffers, &prop.gather_settings(extent));
        for (point, obs) in points.iter().zip(&plan) {
            let material = &spec.materials[cluster_of[point.gaussian_index]].0;
            let base = text.text_embedding(material)?;
            for (_, key) in obs {
                let key = key.to_string();
                let n = noise.vector(&key);
                let v: Vec<f64> = base.iter().zip(&n).map(|(b, e)| b + spec.embedding_noise * e).collect();
                archive.insert(key, &v)?;
            }
        }
        debug_assert_eq!(patch_requests(&plan, views).len(), plan.iter().map(Vec::len).sum::<usize>());
    }
    Ok(archive)
}

/// Write a complete object directory: both splats, cameras, images, masks, embedding archive,
/// dictionary with the true pure volume, and ground truth.
pub fn write_fixture_object(dir: &Path, spec: &FixtureSpec, config: &Config) -> Result<FixtureInfo> {
    let scene = two_cluster_scene(&spec.scene);
    let paths = &config.paths;
    save_gaussian_ply(&dir.join(&paths.splat), &scene.cloud)?;
    let no_garl = jittered(&scene.cloud, spec.no_garl_jitter * spec.scene.radius, spec.scene.seed.wrapping_add(1));
    save_gaussian_ply(&dir.join(&paths.splat_no_garl), &no_garl)?;

    let cam_dir = dir.join(&paths.cameras);
    save_transforms_json(&cam_dir.join("transforms.json"), &scene.views, AxisConvention::Opencv)?;
    let images = dir.join(&paths.images);
    let masks = dir.join(&paths.masks);
    for v in &scene.views {
        save_png(&images.join(&v.name), v.image.as_ref().expect("rendered"))?;
        save_mask_map(&mask_path_for(&masks, v), v.mask.as_ref().expect("masked"))?;
    }

    let archive = semantic_archive(&[&scene.cloud, &no_garl], &scene.cluster_of, &scene.views, spec, config)?;
    archive.save(&dir.join(&paths.embeddings))?;

    let materials: BTreeMap<String, f64> = spec.materials.iter().cloned().collect();
    let entries = materials
        .iter()
        .map(|(name, rho)| MaterialEntry { name: name.clone(), value: PropertyValue::Point(*rho) })
        .collect();
    let mut dict = MaterialDictionary::new(PropertyKind::Density, entries)?;
    dict.pure_volume = Some(spec.true_volume());
    save_material_dictionary(&dir.join(&paths.dictionary), &dict)?;

    let mass_kg = spec.true_mass();
    crate::io_util::write_json(&dir.join(&paths.ground_truth), &GroundTruth { mass_kg })?;
    Ok(FixtureInfo {
        gaussians: scene.cloud.len(),
        views: scene.views.len(),
        materials,
        true_volume_m3: spec.true_volume(),
        mass_kg,
        archive_entries: archive.len(),
    })
}
