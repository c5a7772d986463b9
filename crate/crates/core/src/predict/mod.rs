//! Candidate-material and pure-volume prediction through a vision-language model.

pub mod parse;
pub mod prompt;
pub mod transport;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MaterialDictionary, PropertyKind};

pub use parse::{parse_material_response, parse_pure_volume, strip_code_fences};
pub use prompt::{build_property_prompt, build_property_prompt_for, build_repair_prompt, build_volume_prompt, PROMPT_VERSION};
pub use transport::{sha256_hex, HttpTransport, ResponseCache, Transport, VlmConfig, API_KEY_ENV};

/// Cache-first access to a transport.
pub struct VlmClient<'a> {
    transport: Option<&'a dyn Transport>,
    cache: ResponseCache,
    offline: bool,
}

impl<'a> VlmClient<'a> {
    pub fn new(transport: Option<&'a dyn Transport>, cache: ResponseCache, offline: bool) -> Self {
        Self { transport, cache, offline }
    }

    /// Cached reply if present, otherwise one transport call whose reply is cached.
    pub fn query(&self, prompt: &str, image_png: &[u8]) -> Result<String> {
        if let Some(hit) = self.cache.get(prompt, image_png)? {
            log::debug!("vlm cache hit {}", ResponseCache::key(prompt, image_png));
            return Ok(hit);
        }
        if self.offline {
            return Err(Error::Transport("offline mode and no cached reply for this prompt and image".into()));
        }
        let transport = self
            .transport
            .ok_or_else(|| Error::Transport("no transport configured and no cached reply".into()))?;
        let reply = transport.complete(prompt, image_png)?;
        self.cache.put(prompt, image_png, &reply)?;
        Ok(reply)
    }

    /// Query and parse, with one repair round trip when the first reply does not parse.
    fn query_parsed<T>(&self, prompt: &str, image_png: &[u8], parse: impl Fn(&str) -> Result<T>) -> Result<T> {
        let first = self.query(prompt, image_png)?;
        match parse(&first) {
            Err(Error::Parse(msg)) => {
                log::warn!("vlm reply did not parse ({msg}); sending repair request");
                let second = self.query(&build_repair_prompt(prompt, &first), image_png)?;
                parse(&second).map_err(|e| match e {
                    Error::Parse(message) => Error::Response { message, raw: second.clone() },
                    other => other,
                })
            }
            other => other,
        }
    }

    pub fn material_dictionary(&self, kind: PropertyKind, image_png: &[u8]) -> Result<MaterialDictionary> {
        self.query_parsed(&build_property_prompt(kind), image_png, |r| parse_material_response(r, kind))
    }

    pub fn pure_volume(&self, image_png: &[u8]) -> Result<f64> {
        // a reply without a usable number is retried like a malformed one
        self.query_parsed(&build_volume_prompt(), image_png, |r| {
            parse_pure_volume(r).map_err(|e| match e {
                Error::Validation(m) if !m.contains("positive") => Error::Parse(m),
                other => other,
            })
        })
    }
}

/// Seeded choice of the single input view.
pub fn select_view(view_count: usize, seed: u64) -> Result<usize> {
    if view_count == 0 {
        return Err(Error::Empty("view list"));
    }
    Ok(ChaCha8Rng::seed_from_u64(seed).random_range(0..view_count))
}

/// Provenance written next to a predicted dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub prompt_version: String,
    pub seed: u64,
    pub view_index: usize,
    pub view_name: String,
    pub image_sha256: String,
    pub property: PropertyKind,
    pub pure_volume_m3: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::{Cell, RefCell};

    struct Stub {
        replies: RefCell<Vec<String>>,
        calls: Cell<usize>,
    }

    impl Stub {
        fn new(replies: &[&str]) -> Self {
            Self { replies: RefCell::new(replies.iter().rev().map(|s| s.to_string()).collect()), calls: Cell::new(0) }
        }
    }

    impl Transport for Stub {
        fn complete(&self, _prompt: &str, _image: &[u8]) -> Result<String> {
            self.calls.set(self.calls.get() + 1);
            self.replies.borrow_mut().pop().ok_or_else(|| Error::Transport("stub exhausted".into()))
        }
    }

    const THREE: &str = r#"{"description": "a lamp", "unit": "kg/m^3",
        "materials": {"glass": 2500, "brass": [8400, 8700], "cotton": 1540}}"#;

    #[test]
    fn stub_reply_parses_to_three_entries() {
        let stub = Stub::new(&[THREE]);
        let client = VlmClient::new(Some(&stub), ResponseCache::default(), false);
        let d = client.material_dictionary(PropertyKind::Density, b"img").unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(stub.calls.get(), 1);
    }

    #[test]
    fn cache_hit_skips_transport() {
        let dir = tempfile::tempdir().unwrap();
        let stub = Stub::new(&[THREE]);
        let cache = ResponseCache::new(Some(dir.path().to_path_buf()));
        let client = VlmClient::new(Some(&stub), cache.clone(), false);
        let a = client.material_dictionary(PropertyKind::Density, b"img").unwrap();
        let b = client.material_dictionary(PropertyKind::Density, b"img").unwrap();
        assert_eq!(a, b);
        assert_eq!(stub.calls.get(), 1);
        let offline = VlmClient::new(None, cache, true);
        assert_eq!(offline.material_dictionary(PropertyKind::Density, b"img").unwrap(), a);
    }

    #[test]
    fn offline_cold_cache_is_a_transport_error() {
        let client = VlmClient::new(None, ResponseCache::default(), true);
        assert!(matches!(client.query("p", b"i"), Err(Error::Transport(_))));
    }

    #[test]
    fn one_repair_retry_then_raw_text_error() {
        let stub = Stub::new(&["not json", THREE]);
        let client = VlmClient::new(Some(&stub), ResponseCache::default(), false);
        assert_eq!(client.material_dictionary(PropertyKind::Density, b"x").unwrap().len(), 3);
        assert_eq!(stub.calls.get(), 2);

        let stub = Stub::new(&["nope", "still nope", THREE]);
        let client = VlmClient::new(Some(&stub), ResponseCache::default(), false);
        match client.material_dictionary(PropertyKind::Density, b"x") {
            Err(Error::Response { raw, .. }) => assert_eq!(raw, "still nope"),
            other => panic!("{other:?}"),
        }
        assert_eq!(stub.calls.get(), 2);
    }

    #[test]
    fn volume_query_converts_liters() {
        let stub = Stub::new(&["2 L"]);
        let client = VlmClient::new(Some(&stub), ResponseCache::default(), false);
        assert!((client.pure_volume(b"x").unwrap() - 0.002).abs() < 1e-15);
    }

    #[test]
    fn view_selection_is_seeded() {
        assert_eq!(select_view(10, 4).unwrap(), select_view(10, 4).unwrap());
        assert!(select_view(0, 1).is_err());
        let picks: std::collections::BTreeSet<usize> = (0..50).map(|s| select_view(5, s).unwrap()).collect();
        assert!(picks.len() > 1);
    }
}
