//! Patch and text embeddings: keys, the requests manifest, the on-disk archive and providers.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::time::Duration;

use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{encode_png, CameraView, Image};
use crate::numeric::{norm, normalized};

pub const ARCHIVE_FORMAT: &str = "splatprop-embeddings/1";
pub const REQUESTS_FORMAT: &str = "splatprop-requests/1";
pub const DEFAULT_TEXT_TEMPLATE: &str = "a photo of {material}";
/// Tolerance on the norm of stored vectors.
pub const UNIT_NORM_TOL: f64 = 1e-5;

/// A `p × p` patch centered on pixel `(cx, cy)` of a view, keyed `"{view}:{cx}:{cy}:{p}"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchKey {
    /// Image stem of the view.
    pub view: String,
    pub cx: u32,
    pub cy: u32,
    pub p: u32,
}

impl fmt::Display for PatchKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}:{}", self.view, self.cx, self.cy, self.p)
    }
}

impl PatchKey {
    pub fn parse(key: &str) -> Result<Self> {
        let parts: Vec<&str> = key.rsplitn(4, ':').collect();
        let bad = || Error::Parse(format!("malformed patch key `{key}`"));
        if parts.len() != 4 {
            return Err(bad());
        }
        Ok(Self {
            view: parts[3].to_string(),
            cx: parts[2].parse().map_err(|_| bad())?,
            cy: parts[1].parse().map_err(|_| bad())?,
            p: parts[0].parse().map_err(|_| bad())?,
        })
    }

    /// Whether the whole patch lies inside a `width × height` image.
    pub fn fits(cx: i64, cy: i64, p: u32, width: usize, height: usize) -> bool {
        let h = (p / 2) as i64;
        cx - h >= 0 && cy - h >= 0 && cx + h < width as i64 && cy + h < height as i64
    }

    /// Crop the patch out of `image`.
    pub fn crop(&self, image: &Image) -> Result<Image> {
        if !Self::fits(self.cx as i64, self.cy as i64, self.p, image.width, image.height) {
            return Err(Error::Validation(format!("patch {self} exceeds the {}×{} image", image.width, image.height)));
        }
        let h = self.p as usize / 2;
        let (x0, y0) = (self.cx as usize - h, self.cy as usize - h);
        Ok(Image::from_fn(self.p as usize, self.p as usize, image.channels, |x, y, c| image.get(x0 + x, y0 + y, c)))
    }
}

pub fn text_key(material: &str) -> String {
    format!("text:{material}")
}

pub fn text_prompt(template: &str, material: &str) -> String {
    template.replace("{material}", material)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRequest {
    pub key: String,
    /// Image file name of the view, relative to the images directory.
    pub image: String,
    pub view: String,
    pub cx: u32,
    pub cy: u32,
    pub p: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRequest {
    pub key: String,
    pub material: String,
    pub prompt: String,
}

/// Everything the exporter must embed so propagation can run offline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestsManifest {
    pub format: String,
    pub patch_size: u32,
    pub text_template: String,
    pub patches: Vec<PatchRequest>,
    pub texts: Vec<TextRequest>,
}

impl RequestsManifest {
    /// Deduplicated and sorted by key.
    pub fn new(patch_size: u32, text_template: &str, patches: Vec<PatchRequest>, materials: &[&str]) -> Self {
        let patches: BTreeMap<String, PatchRequest> = patches.into_iter().map(|p| (p.key.clone(), p)).collect();
        let texts: BTreeMap<String, TextRequest> = materials
            .iter()
            .map(|m| {
                let key = text_key(m);
                (key.clone(), TextRequest { key, material: m.to_string(), prompt: text_prompt(text_template, m) })
            })
            .collect();
        Self {
            format: REQUESTS_FORMAT.into(),
            patch_size,
            text_template: text_template.into(),
            patches: patches.into_values().collect(),
            texts: texts.into_values().collect(),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.patches.iter().map(|p| p.key.as_str()).chain(self.texts.iter().map(|t| t.key.as_str()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = crate::io_util::read_json(path)?;
        if m.format != REQUESTS_FORMAT {
            return Err(Error::Parse(format!("{}: unknown requests format `{}`", path.display(), m.format)));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io_util::write_json(path, self)
    }
}

/// Resolves keys to unit-norm embedding vectors.
pub trait EmbeddingProvider: Sync {
    /// Vector for `key`; a key the provider cannot serve is a missing-asset error naming it.
    fn embedding(&self, key: &str) -> Result<Vec<f64>>;

    fn text_embedding(&self, material: &str) -> Result<Vec<f64>> {
        self.embedding(&text_key(material))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub key: String,
    /// Byte offset into the blob.
    pub offset: u64,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub format: String,
    /// Blob file name, relative to the manifest.
    pub blob: String,
    #[serde(default)]
    pub model: Option<String>,
    pub entries: Vec<ArchiveEntry>,
}

/// Manifest JSON plus a little-endian float32 blob.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingArchive {
    pub model: Option<String>,
    vectors: BTreeMap<String, Vec<f32>>,
}

impl EmbeddingArchive {
    pub fn new(model: Option<String>) -> Self {
        Self { model, vectors: BTreeMap::new() }
    }

    /// Insert after normalizing; a later insert with the same key replaces the earlier one.
    pub fn insert(&mut self, key: impl Into<String>, vector: &[f64]) -> Result<()> {
        let key = key.into();
        if norm(vector) == 0.0 || vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("embedding `{key}` is zero or non-finite")));
        }
        self.vectors.insert(key, normalized(vector).iter().map(|&v| v as f32).collect());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.vectors.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    /// Manifest and blob bytes for `blob_name`.
    pub fn encode(&self, blob_name: &str) -> (ArchiveManifest, Vec<u8>) {
        let mut blob = Vec::new();
        let mut entries = Vec::with_capacity(self.vectors.len());
        for (key, v) in &self.vectors {
            entries.push(ArchiveEntry { key: key.clone(), offset: blob.len() as u64, dim: v.len() });
            for x in v {
                blob.extend_from_slice(&x.to_le_bytes());
            }
        }
        let manifest = ArchiveManifest {
            format: ARCHIVE_FORMAT.into(),
            blob: blob_name.into(),
            model: self.model.clone(),
            entries,
        };
        (manifest, blob)
    }

    /// Write `<manifest_path>` and its blob next to it (same stem, `.f32`).
    pub fn save(&self, manifest_path: &Path) -> Result<()> {
        let blob_name = format!(
            "{}.f32",
            manifest_path.file_stem().and_then(|s| s.to_str()).unwrap_or("embeddings")
        );
        let (manifest, blob) = self.encode(&blob_name);
        let blob_path = manifest_path.with_file_name(&blob_name);
        crate::io_util::write_file(&blob_path, &blob)?;
        crate::io_util::write_json(manifest_path, &manifest)
    }

    pub fn decode(manifest: &ArchiveManifest, blob: &[u8]) -> Result<Self> {
        if manifest.format != ARCHIVE_FORMAT {
            return Err(Error::Parse(format!("unknown embedding archive format `{}`", manifest.format)));
        }
        let mut vectors = BTreeMap::new();
        for e in &manifest.entries {
            let start = e.offset as usize;
            let end = start + 4 * e.dim;
            if e.offset % 4 != 0 || end > blob.len() {
                return Err(Error::Parse(format!("entry `{}` lies outside the {}-byte blob", e.key, blob.len())));
            }
            let v: Vec<f32> = blob[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let n = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::Validation(format!("entry `{}` has norm {n}, expected 1", e.key)));
            }
            vectors.insert(e.key.clone(), v);
        }
        Ok(Self { model: manifest.model.clone(), vectors })
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest: ArchiveManifest = crate::io_util::read_json(manifest_path)?;
        let blob_path = manifest_path.with_file_name(&manifest.blob);
        let blob = std::fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        Self::decode(&manifest, &blob)
    }
}

impl EmbeddingProvider for EmbeddingArchive {
    fn embedding(&self, key: &str) -> Result<Vec<f64>> {
        self.vectors
            .get(key)
            .map(|v| v.iter().map(|&x| x as f64).collect())
            .ok_or_else(|| Error::MissingAsset(format!("embedding `{key}`")))
    }
}

/// Deterministic unit vectors seeded by a hash of the key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticEmbeddings {
    pub dim: usize,
    pub seed: u64,
}

impl SyntheticEmbeddings {
    pub fn vector(&self, key: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(key.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalized(&v)
    }
}

impl EmbeddingProvider for SyntheticEmbeddings {
    fn embedding(&self, key: &str) -> Result<Vec<f64>> {
        Ok(self.vector(key))
    }
}

/// Client for an embedding service: `POST {"image": <base64 PNG>}` or `{"text": ...}`, reply
/// `{"embedding": [...]}`.
pub struct HttpEmbeddings {
    endpoint: String,
    agent: ureq::Agent,
    images: HashMap<String, Image>,
    text_template: String,
}

impl HttpEmbeddings {
    pub fn new(endpoint: &str, views: &[CameraView], text_template: &str, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        Self {
            endpoint: endpoint.into(),
            agent,
            images: views
                .iter()
                .filter_map(|v| v.image.clone().map(|img| (v.stem().to_string(), img)))
                .collect(),
            text_template: text_template.into(),
        }
    }

    fn post(&self, body: serde_json::Value) -> Result<Vec<f64>> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(|e| Error::Transport(format!("{}: {e}", self.endpoint)))?;
        let v: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Transport(format!("{}: unreadable body: {e}", self.endpoint)))?;
        let vec: Option<Vec<f64>> = v["embedding"].as_array().and_then(|a| a.iter().map(|x| x.as_f64()).collect());
        match vec {
            Some(e) if norm(&e) > 0.0 => Ok(normalized(&e)),
            _ => Err(Error::Response { message: "no usable `embedding` array".into(), raw: v.to_string() }),
        }
    }
}

impl EmbeddingProvider for HttpEmbeddings {
    fn embedding(&self, key: &str) -> Result<Vec<f64>> {
        if let Some(material) = key.strip_prefix("text:") {
            return self.post(serde_json::json!({"text": text_prompt(&self.text_template, material)}));
        }
        let pk = PatchKey::parse(key)?;
        let image = self
            .images
            .get(&pk.view)
            .ok_or_else(|| Error::MissingAsset(format!("image for view `{}` (key `{key}`)", pk.view)))?;
        let png = encode_png(&pk.crop(image)?)?;
        self.post(serde_json::json!({"image": base64::engine::general_purpose::STANDARD.encode(png)}))
    }
}
