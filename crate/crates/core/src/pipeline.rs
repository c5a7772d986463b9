//! Per-object pipeline stages. Each stage reads its inputs from the object directory or from
//! earlier stage outputs and writes its own outputs, so running the stages one by one gives the
//! same files as [`run_pipeline`].

use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Ablation, Config, DictionarySource, EmbeddingBackend, RunMetadata};
use crate::error::{Error, Result};
use crate::eval::{material_segmentation_export, SegmentationSummary};
use crate::features::{train_features, TrainRecord};
use crate::losses::{total_loss, LossRecord};
use crate::model::camera::mask_path_for;
use crate::model::material::save_material_dictionary;
use crate::model::{
    encode_png, load_cameras, load_gaussian_ply, load_mask_map, load_material_dictionary, load_rgb_png,
    save_gaussian_ply, CameraView, GaussianCloud, MaterialDictionary, PropertyLabel,
};
use crate::predict::{select_view, sha256_hex, HttpTransport, PredictionRecord, ResponseCache, Transport, VlmClient};
use crate::propagate::{
    fuse_properties, patch_requests, plan_observations, project_and_gather, propagate, propagate_nn_baseline,
    render_depth_buffers, sample_source_points, EmbeddingArchive, EmbeddingProvider, HttpEmbeddings, RequestsManifest,
    SourcePoint, SyntheticEmbeddings,
};
use crate::render::{render, save_alpha_png, save_pfm, save_rgb_png, RenderSettings};
use crate::volume::{integrate_object, pure_volume_correction, surface_area_proxy, thickness_baseline, IntegrationMode};

pub const RENDERS_DIR: &str = "renders";
pub const LOSSES_FILE: &str = "losses.jsonl";
pub const FEATURES_PLY: &str = "features.ply";
pub const FEATURES_SUMMARY: &str = "features.json";
pub const TRAIN_HISTORY: &str = "train_history.jsonl";
pub const DICTIONARY_FILE: &str = "dictionary.json";
pub const PREDICTION_FILE: &str = "prediction.json";
pub const REQUESTS_FILE: &str = "requests.json";
pub const SOURCES_FILE: &str = "source_points.json";
pub const ASSIGNMENTS_PLY: &str = "assignments.ply";
pub const PROPAGATION_FILE: &str = "propagation.json";
pub const MASS_FILE: &str = "mass.json";
pub const SEGMENTATION_DIR: &str = "segmentation";

/// An object directory together with the effective configuration.
#[derive(Debug, Clone)]
pub struct ObjectDir {
    pub root: PathBuf,
    pub config: Config,
}

impl ObjectDir {
    pub fn new(root: impl Into<PathBuf>, config: &Config) -> Self {
        Self { root: root.into(), config: config.effective() }
    }

    pub fn name(&self) -> String {
        self.root.file_name().map_or_else(|| self.root.display().to_string(), |n| n.to_string_lossy().into_owned())
    }

    pub fn input(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.root.join(&self.config.paths.output)
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.output_dir().join(name)
    }

    fn metadata(&self) -> RunMetadata {
        RunMetadata::new(&self.config)
    }

    fn require(&self, path: PathBuf, what: &str) -> Result<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(Error::MissingAsset(format!("{what} ({})", path.display())))
        }
    }

    /// The input splat; the geometry-ablated one under the `garl` ablation.
    pub fn splat_path(&self) -> PathBuf {
        let p = &self.config.paths;
        self.input(if self.config.has(Ablation::Garl) { &p.splat_no_garl } else { &p.splat })
    }

    pub fn load_cloud(&self) -> Result<GaussianCloud> {
        let cloud = load_gaussian_ply(&self.require(self.splat_path(), "splat")?)?;
        cloud.require_nonempty()?;
        Ok(cloud)
    }

    fn image_path(&self, view: &CameraView) -> PathBuf {
        let direct = self.root.join(&view.name);
        if direct.is_file() {
            return direct;
        }
        let file = Path::new(&view.name).file_name().map(PathBuf::from).unwrap_or_default();
        self.input(&self.config.paths.images).join(file)
    }

    /// Cameras with images attached when present and, if `masks`, their mask maps.
    pub fn load_views(&self, masks: bool) -> Result<Vec<CameraView>> {
        let mut views = load_cameras(&self.input(&self.config.paths.cameras))?;
        if views.is_empty() {
            return Err(Error::Empty("camera list"));
        }
        let mask_dir = self.input(&self.config.paths.masks);
        for v in &mut views {
            let img_path = self.image_path(v);
            if img_path.is_file() {
                let img = load_rgb_png(&img_path)?;
                if img.width != v.width || img.height != v.height {
                    return Err(Error::Validation(format!(
                        "{}: image is {}×{}, camera declares {}×{}",
                        img_path.display(),
                        img.width,
                        img.height,
                        v.width,
                        v.height
                    )));
                }
                v.image = Some(img);
            }
            if masks {
                let mp = mask_path_for(&mask_dir, v);
                if mp.is_file() {
                    v.mask = Some(load_mask_map(&mp, v)?);
                }
            }
        }
        Ok(views)
    }

    fn load_output_dictionary(&self) -> Result<MaterialDictionary> {
        load_material_dictionary(&self.require(self.output(DICTIONARY_FILE), "predicted dictionary; run predict-properties first")?)
    }

    fn load_assigned_cloud(&self) -> Result<GaussianCloud> {
        let cloud = load_gaussian_ply(&self.require(self.output(ASSIGNMENTS_PLY), "assignments; run propagate first")?)?;
        if cloud.labels.is_none() {
            return Err(Error::Validation(format!("{} carries no material labels", ASSIGNMENTS_PLY)));
        }
        Ok(cloud)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    crate::io_util::write_json(path, value)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewLoss {
    pub view: String,
    pub loss: Option<LossRecord>,
    pub error: Option<String>,
}

/// Render every view to PNG/PFM and evaluate the reconstruction losses where an image exists.
pub fn render_stage(obj: &ObjectDir) -> Result<Vec<ViewLoss>> {
    let cloud = obj.load_cloud()?;
    let views = obj.load_views(false)?;
    let settings = RenderSettings {
        background: obj.config.render.background,
        near_clip: obj.config.render.near_clip,
        ..Default::default()
    };
    let dir = obj.output(RENDERS_DIR);
    let results: Vec<Result<ViewLoss>> = views
        .par_iter()
        .map(|v| {
            let b = render(&cloud, v, &settings);
            let stem = v.stem();
            save_rgb_png(&dir.join(format!("{stem}.rgb.png")), b.rgb.as_ref().expect("rgb"))?;
            save_alpha_png(&dir.join(format!("{stem}.alpha.png")), &b.alpha)?;
            save_pfm(&dir.join(format!("{stem}.depth.pfm")), b.depth.as_ref().expect("depth"))?;
            save_pfm(&dir.join(format!("{stem}.normal.pfm")), b.normal.as_ref().expect("normal"))?;
            if v.image.is_none() {
                return Ok(ViewLoss { view: v.name.clone(), loss: None, error: Some("no image".into()) });
            }
            Ok(match total_loss(&b, v, &cloud, &obj.config.losses) {
                Ok(breakdown) => ViewLoss {
                    view: v.name.clone(),
                    loss: Some(LossRecord { iteration: 0, view: v.name.clone(), breakdown }),
                    error: None,
                },
                Err(e) => ViewLoss { view: v.name.clone(), loss: None, error: Some(e.to_string()) },
            })
        })
        .collect();
    let losses: Vec<ViewLoss> = results.into_iter().collect::<Result<_>>()?;
    let records: Vec<&LossRecord> = losses.iter().filter_map(|l| l.loss.as_ref()).collect();
    crate::io_util::write_json_lines(&obj.output(LOSSES_FILE), &records)?;
    Ok(losses)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeaturesSummary {
    pub metadata: RunMetadata,
    pub gaussians: usize,
    pub feature_dim: usize,
    pub iterations: usize,
    pub masked_views: usize,
    pub first_loss: Option<f64>,
    pub last_loss: Option<f64>,
}

pub fn train_stage(obj: &ObjectDir) -> Result<FeaturesSummary> {
    let cloud = obj.load_cloud()?;
    let views = obj.load_views(true)?;
    let trained = train_features(&cloud, &views, &obj.config.features)?;
    save_gaussian_ply(&obj.output(FEATURES_PLY), &trained.cloud)?;
    crate::io_util::write_json_lines::<TrainRecord>(&obj.output(TRAIN_HISTORY), &trained.history)?;
    let summary = FeaturesSummary {
        metadata: obj.metadata(),
        gaussians: cloud.len(),
        feature_dim: trained.cloud.feature_dim,
        iterations: obj.config.features.iterations,
        masked_views: views.iter().filter(|v| v.mask.is_some()).count(),
        first_loss: trained.history.first().map(|r| r.loss),
        last_loss: trained.history.last().map(|r| r.loss),
    };
    write_json(&obj.output(FEATURES_SUMMARY), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub metadata: RunMetadata,
    /// `file` or `vlm`.
    pub source: String,
    pub record: Option<PredictionRecord>,
    pub materials: usize,
    pub pure_volume_m3: Option<f64>,
}

/// HTTP transport when an endpoint is configured.
pub fn make_transport(config: &Config) -> Result<Option<HttpTransport>> {
    let vlm = &config.prediction.vlm;
    if vlm.endpoint.is_empty() || vlm.offline {
        return Ok(None);
    }
    HttpTransport::new(vlm).map(Some)
}

/// Obtain the dictionary (file or model) and write it to the output directory.
pub fn predict_stage(obj: &ObjectDir, transport: Option<&dyn Transport>) -> Result<PredictionSummary> {
    let cfg = &obj.config.prediction;
    let dict_path = obj.input(&obj.config.paths.dictionary);
    let use_file = match cfg.source {
        DictionarySource::File => true,
        DictionarySource::Vlm => false,
        DictionarySource::Auto => dict_path.is_file(),
    };
    let cache_dir = cfg.vlm.cache_dir.clone().unwrap_or_else(|| obj.input(&obj.config.paths.vlm_cache));
    let client = VlmClient::new(transport, ResponseCache::new(Some(cache_dir)), cfg.vlm.offline);

    let (mut dict, record, source) = if use_file {
        let dict = load_material_dictionary(&obj.require(dict_path, "material dictionary")?)?;
        if dict.property != cfg.property {
            return Err(Error::Validation(format!(
                "dictionary holds {} but the configuration asks for {}",
                dict.property, cfg.property
            )));
        }
        (dict, None, "file")
    } else {
        let views = obj.load_views(false)?;
        let index = select_view(views.len(), obj.config.seed)?;
        let view = &views[index];
        let image = view
            .image
            .as_ref()
            .ok_or_else(|| Error::MissingAsset(format!("image for view {}", view.name)))?;
        let png = encode_png(image)?;
        let mut dict = client.material_dictionary(cfg.property, &png)?;
        dict.pure_volume = Some(client.pure_volume(&png)?);
        let record = PredictionRecord {
            prompt_version: crate::predict::PROMPT_VERSION.into(),
            seed: obj.config.seed,
            view_index: index,
            view_name: view.name.clone(),
            image_sha256: sha256_hex(&png),
            property: cfg.property,
            pure_volume_m3: dict.pure_volume,
        };
        (dict, Some(record), "vlm")
    };
    if dict.pure_volume.is_none() && use_file && (transport.is_some() || !cfg.vlm.offline) {
        // the dictionary file has no volume; ask the model if one can be reached
        let views = obj.load_views(false)?;
        let index = select_view(views.len(), obj.config.seed)?;
        if let Some(img) = &views[index].image {
            match client.pure_volume(&encode_png(img)?) {
                Ok(v) => dict.pure_volume = Some(v),
                Err(e) if e.is_io() => log::warn!("no pure volume available: {e}"),
                Err(e) => return Err(e),
            }
        }
    }
    save_material_dictionary(&obj.output(DICTIONARY_FILE), &dict)?;
    let summary = PredictionSummary {
        metadata: obj.metadata(),
        source: source.into(),
        record,
        materials: dict.len(),
        pure_volume_m3: dict.pure_volume,
    };
    write_json(&obj.output(PREDICTION_FILE), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourcePointsFile {
    pub metadata: RunMetadata,
    pub voxel_size: f64,
    pub points: Vec<SourcePoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaterialCount {
    pub material_id: usize,
    pub name: String,
    pub gaussians: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropagationSummary {
    pub metadata: RunMetadata,
    /// `region_features` or `nearest_neighbor`.
    pub method: String,
    pub property: String,
    pub unit: String,
    pub gaussians: usize,
    pub source_points: usize,
    pub fused_source_points: usize,
    pub invisible_source_points: usize,
    pub fallback_count: usize,
    pub materials: Vec<MaterialCount>,
    pub material: Vec<usize>,
    pub value: Vec<f64>,
    pub source: Vec<usize>,
}

#[derive(Debug, Clone)]
pub enum PropagateOutcome {
    Requests(RequestsManifest),
    Assigned(Box<PropagationSummary>),
}

fn embedding_provider(obj: &ObjectDir, views: &[CameraView]) -> Result<Box<dyn EmbeddingProvider>> {
    let e = &obj.config.embeddings;
    Ok(match e.backend {
        EmbeddingBackend::Archive => {
            let path = obj.require(obj.input(&obj.config.paths.embeddings), "embedding archive")?;
            Box::new(EmbeddingArchive::load(&path)?)
        }
        EmbeddingBackend::Http => {
            if e.endpoint.is_empty() {
                return Err(Error::Config("embeddings.endpoint is not set".into()));
            }
            Box::new(HttpEmbeddings::new(
                &e.endpoint,
                views,
                &obj.config.propagation.text_template,
                Duration::from_secs(e.timeout_secs),
            ))
        }
        EmbeddingBackend::Synthetic => Box::new(SyntheticEmbeddings { dim: e.synthetic_dim, seed: obj.config.seed }),
    })
}

/// Source sampling, embedding gathering, fusion and per-Gaussian assignment.
///
/// With `emit_requests` only the embedding requests manifest is written.
pub fn propagate_stage(obj: &ObjectDir, emit_requests: bool) -> Result<PropagateOutcome> {
    let cfg = &obj.config.propagation;
    let cloud = load_gaussian_ply(&obj.require(obj.output(FEATURES_PLY), "trained features; run train-features first")?)?;
    let dict = obj.load_output_dictionary()?;
    let needs_images = obj.config.embeddings.backend == EmbeddingBackend::Http;
    let views = obj.load_views(false)?;
    if needs_images && views.iter().any(|v| v.image.is_none()) {
        return Err(Error::MissingAsset("images are required by the HTTP embedding backend".into()));
    }
    let extent = cloud.bounds_diagonal();
    let voxel_size = cfg.voxel_size_for(extent);
    let mut points = sample_source_points(&cloud, voxel_size)?;
    let buffers = render_depth_buffers(&cloud, &views);
    let settings = cfg.gather_settings(extent);

    if emit_requests {
        let plan = plan_observations(&points, &views, &buffers, &settings);
        let manifest = RequestsManifest::new(cfg.patch_size, &cfg.text_template, patch_requests(&plan, &views), &dict.names());
        manifest.save(&obj.output(REQUESTS_FILE))?;
        return Ok(PropagateOutcome::Requests(manifest));
    }

    let provider = embedding_provider(obj, &views)?;
    let invisible = project_and_gather(&mut points, &views, &buffers, &settings, provider.as_ref())?;
    let text: Vec<Vec<f64>> = dict.names().iter().map(|m| provider.text_embedding(m)).collect::<Result<_>>()?;
    let values = dict.scalars(obj.config.prediction.collapse_rule());
    fuse_properties(&mut points, &values, &text, cfg.temperature)?;

    let nn = obj.config.has(Ablation::Raft);
    let assignment = if nn { propagate_nn_baseline(&cloud, &points)? } else { propagate(&cloud, &points)? };

    let mut labeled = cloud.clone();
    labeled.labels = Some(
        assignment
            .material
            .iter()
            .zip(&assignment.value)
            .map(|(&m, &v)| PropertyLabel { material_id: m as u32, value: v })
            .collect(),
    );
    save_gaussian_ply(&obj.output(ASSIGNMENTS_PLY), &labeled)?;
    let fused = points.iter().filter(|p| p.is_fused()).count();
    write_json(&obj.output(SOURCES_FILE), &SourcePointsFile { metadata: obj.metadata(), voxel_size, points })?;

    let names = dict.names();
    let summary = PropagationSummary {
        metadata: obj.metadata(),
        method: if nn { "nearest_neighbor" } else { "region_features" }.into(),
        property: dict.property.to_string(),
        unit: dict.unit.clone(),
        gaussians: cloud.len(),
        source_points: fused + invisible,
        fused_source_points: fused,
        invisible_source_points: invisible,
        fallback_count: assignment.fallback_count,
        materials: names
            .iter()
            .enumerate()
            .map(|(k, n)| MaterialCount {
                material_id: k,
                name: n.to_string(),
                gaussians: assignment.material.iter().filter(|&&m| m == k).count(),
            })
            .collect(),
        material: assignment.material,
        value: assignment.value,
        source: assignment.source,
    };
    write_json(&obj.output(PROPAGATION_FILE), &summary)?;
    Ok(PropagateOutcome::Assigned(Box::new(summary)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MassCounts {
    pub gaussians: usize,
    pub source_points: usize,
    pub fused_source_points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MassReport {
    pub metadata: RunMetadata,
    pub property: String,
    pub unit: String,
    pub mode: IntegrationMode,
    pub m_hat: f64,
    /// Total weighted Gaussian volume; absent for the thickness baseline.
    pub c: Option<f64>,
    pub v: Option<f64>,
    pub m: f64,
    pub k_sigma: f64,
    pub counts: MassCounts,
    pub config_hash: String,
}

pub fn integrate_stage(obj: &ObjectDir) -> Result<MassReport> {
    let cloud = obj.load_assigned_cloud()?;
    let dict = obj.load_output_dictionary()?;
    let labels = cloud.labels.as_ref().expect("checked");
    let vcfg = &obj.config.volume;
    let sources: Option<SourcePointsFile> = {
        let p = obj.output(SOURCES_FILE);
        p.is_file().then(|| crate::io_util::read_json(&p)).transpose()?
    };
    let (m_hat, c, v, m) = match vcfg.mode {
        IntegrationMode::Gaussian => {
            let values: Vec<f64> = labels.iter().map(|l| l.value).collect();
            let integral = integrate_object(&cloud, &values, vcfg.k_sigma)?;
            let v = dict
                .pure_volume
                .ok_or_else(|| Error::Validation("the dictionary carries no pure volume estimate".into()))?;
            let m = pure_volume_correction(integral.m_hat, integral.c, v)?;
            (integral.m_hat, Some(integral.c), Some(v), m)
        }
        IntegrationMode::Thickness => {
            let src = sources.as_ref().ok_or_else(|| Error::MissingAsset(format!("{SOURCES_FILE}; run propagate first")))?;
            let names = dict.names();
            let fused: Vec<&SourcePoint> = src.points.iter().filter(|p| p.is_fused()).collect();
            let rho: Vec<f64> = fused.iter().map(|p| p.property_value.expect("fused")).collect();
            let t: Vec<f64> = fused
                .iter()
                .map(|p| vcfg.thickness_for(names[p.material.expect("fused")]))
                .collect();
            let area = surface_area_proxy(src.points.len(), src.voxel_size);
            let m_hat = thickness_baseline(&rho, &t, area)?;
            (m_hat, None, None, m_hat)
        }
    };
    let report = MassReport {
        metadata: obj.metadata(),
        property: dict.property.to_string(),
        unit: dict.unit.clone(),
        mode: vcfg.mode,
        m_hat,
        c,
        v,
        m,
        k_sigma: vcfg.k_sigma,
        counts: MassCounts {
            gaussians: cloud.len(),
            source_points: sources.as_ref().map_or(0, |s| s.points.len()),
            fused_source_points: sources.as_ref().map_or(0, |s| s.points.iter().filter(|p| p.is_fused()).count()),
        },
        config_hash: obj.config.hash(),
    };
    write_json(&obj.output(MASS_FILE), &report)?;
    Ok(report)
}

pub fn segment_stage(obj: &ObjectDir) -> Result<SegmentationSummary> {
    let cloud = obj.load_assigned_cloud()?;
    let dict = obj.load_output_dictionary()?;
    let views = obj.load_views(false)?;
    let labels = cloud.labels.as_ref().expect("checked");
    let materials: Vec<usize> = labels.iter().map(|l| l.material_id as usize).collect();
    let values: Vec<f64> = labels.iter().map(|l| l.value).collect();
    let dir = obj.output(SEGMENTATION_DIR);
    let (mut summary, _) = material_segmentation_export(&cloud, &materials, &values, &dict.names(), &views, &dir)?;
    // paths relative to the output directory keep the summary stable across machines
    let base = obj.output_dir();
    summary.ply = summary.ply.strip_prefix(&base).map(Path::to_path_buf).unwrap_or(summary.ply);
    summary.renders = summary
        .renders
        .into_iter()
        .map(|p| p.strip_prefix(&base).map(Path::to_path_buf).unwrap_or(p))
        .collect();
    Ok(summary)
}

/// Every stage in order; returns the mass report.
pub fn run_pipeline(obj: &ObjectDir, transport: Option<&dyn Transport>) -> Result<MassReport> {
    render_stage(obj)?;
    train_stage(obj)?;
    predict_stage(obj, transport)?;
    match propagate_stage(obj, false)? {
        PropagateOutcome::Assigned(_) => {}
        PropagateOutcome::Requests(_) => unreachable!("requests are only emitted on demand"),
    }
    let mass = integrate_stage(obj)?;
    segment_stage(obj)?;
    Ok(mass)
}

/// Stage order as run by [`run_pipeline`].
pub const STAGES: [&str; 6] = ["render", "train-features", "predict-properties", "propagate", "integrate", "segment"];

/// The stage that writes an output file, given its path relative to the output directory.
pub fn stage_of(rel: &str) -> Option<&'static str> {
    let rel = rel.replace('\\', "/");
    Some(match rel.as_str() {
        LOSSES_FILE => "render",
        FEATURES_PLY | FEATURES_SUMMARY | TRAIN_HISTORY => "train-features",
        DICTIONARY_FILE | PREDICTION_FILE => "predict-properties",
        REQUESTS_FILE | SOURCES_FILE | ASSIGNMENTS_PLY | PROPAGATION_FILE => "propagate",
        MASS_FILE => "integrate",
        r if r.starts_with(&format!("{RENDERS_DIR}/")) => "render",
        r if r.starts_with(&format!("{SEGMENTATION_DIR}/")) => "segment",
        _ => return None,
    })
}

/// File contents with run metadata removed, so outputs of differently configured runs compare
/// on substance only.
pub fn comparable_content(rel: &str, bytes: &[u8]) -> Vec<u8> {
    if !rel.ends_with(".json") {
        return bytes.to_vec();
    }
    match serde_json::from_slice::<serde_json::Value>(bytes) {
        Ok(mut v) => {
            if let Some(o) = v.as_object_mut() {
                o.remove("metadata");
                o.remove("config_hash");
            }
            serde_json::to_vec(&v).expect("json value serialize")
        }
        Err(_) => bytes.to_vec(),
    }
}
