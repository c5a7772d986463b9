//! File and wire formats shared with the asset exporter and remote services.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use splatprop::model::mask::{load_mask_map, read_mask_png};
use splatprop::model::material::PropertyKind;
use splatprop::model::{CameraView, Gaussian, GaussianCloud, Image, Intrinsics};
use splatprop::predict::{HttpTransport, ResponseCache, Transport, VlmClient, VlmConfig};
use splatprop::propagate::*;
use splatprop::Error;

fn view(name: &str, eye: Vector3<f64>) -> CameraView {
    CameraView::look_at(name, Intrinsics { fx: 40.0, fy: 40.0, cx: 24.0, cy: 24.0 }, 48, 48, eye, Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0))
}

/// Stand-in for the exporter: writes the archive format by hand from a requests manifest.
fn fulfill(manifest: &RequestsManifest, dim: usize, dir: &std::path::Path) -> Vec<(String, Vec<f32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut entries = Vec::new();
    let mut blob = Vec::new();
    let mut vectors = Vec::new();
    for key in manifest.keys() {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let v: Vec<f32> = v.iter().map(|x| (x / n) as f32).collect();
        entries.push(json!({"key": key, "offset": blob.len(), "dim": dim}));
        for x in &v {
            blob.extend_from_slice(&x.to_le_bytes());
        }
        vectors.push((key.to_string(), v));
    }
    std::fs::write(dir.join("archive.bin"), &blob).unwrap();
    let m = json!({"format": "splatprop-embeddings/1", "blob": "archive.bin", "model": "stub", "entries": entries});
    std::fs::write(dir.join("archive.json"), serde_json::to_vec_pretty(&m).unwrap()).unwrap();
    vectors
}

#[test]
fn exporter_round_trip_serves_every_requested_key() {
    let mut patches = Vec::new();
    for i in 0..50u32 {
        let key = PatchKey { view: format!("v{}", i % 5), cx: 10 + i, cy: 20, p: 15 };
        patches.push(PatchRequest { key: key.to_string(), image: format!("v{}.png", i % 5), view: key.view.clone(), cx: key.cx, cy: key.cy, p: 15 });
    }
    // duplicates collapse
    patches.push(patches[3].clone());
    let manifest = RequestsManifest::new(15, DEFAULT_TEXT_TEMPLATE, patches, &["steel", "oak", "glass"]);
    assert_eq!(manifest.patches.len(), 50);
    assert_eq!(manifest.texts.len(), 3);
    assert!(manifest.texts.iter().any(|t| t.key == "text:steel" && t.prompt == "a photo of steel"));

    let dir = tempfile::tempdir().unwrap();
    manifest.save(&dir.path().join("requests.json")).unwrap();
    let reloaded = RequestsManifest::load(&dir.path().join("requests.json")).unwrap();
    assert_eq!(reloaded, manifest);

    let written = fulfill(&reloaded, 32, dir.path());
    let archive = EmbeddingArchive::load(&dir.path().join("archive.json")).unwrap();
    assert_eq!(archive.len(), 53);
    for (key, v) in written {
        let got = archive.embedding(&key).unwrap();
        let n: f64 = got.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-5);
        assert!(got.iter().zip(&v).all(|(a, b)| *a == *b as f64));
    }
    assert_eq!(archive.text_embedding("oak").unwrap(), archive.embedding("text:oak").unwrap());
    match archive.embedding("v0:1:2:15") {
        Err(Error::MissingAsset(m)) => assert!(m.contains("v0:1:2:15")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn non_unit_archive_entries_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("b.f32"), [2.0f32, 0.0].iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>()).unwrap();
    let m = json!({"format": "splatprop-embeddings/1", "blob": "b.f32", "entries": [{"key": "text:x", "offset": 0, "dim": 2}]});
    std::fs::write(dir.path().join("a.json"), m.to_string()).unwrap();
    assert!(matches!(EmbeddingArchive::load(&dir.path().join("a.json")), Err(Error::Validation(_))));
}

#[test]
fn gather_respects_occlusion_and_averages_views() {
    // an opaque wall at z = 0 between the front camera and a point at z = 1
    let mut g = Vec::new();
    for i in -10..=10 {
        for j in -10..=10 {
            g.push(Gaussian::isotropic(Vector3::new(i as f64 * 0.08, j as f64 * 0.08, 0.0), 0.08, 0.99, [0.5; 3]));
        }
    }
    let cloud = GaussianCloud::new(g).unwrap();
    let views = vec![view("front.png", Vector3::new(0.0, 0.0, -3.0)), view("back.png", Vector3::new(0.0, 0.0, 3.0))];
    let buffers = render_depth_buffers(&cloud, &views);
    let settings = GatherSettings { patch_size: 9, depth_tolerance: 0.02 };

    let behind = SourcePoint::new(Vector3::new(0.0, 0.0, 1.0), 0);
    let on_wall = SourcePoint::new(Vector3::new(0.0, 0.0, 0.0), 0);
    assert!(observe(&behind, &views[0], &buffers[0], &settings).is_none());
    assert!(observe(&behind, &views[1], &buffers[1], &settings).is_some());
    assert!(observe(&on_wall, &views[0], &buffers[0], &settings).is_some());

    let provider = SyntheticEmbeddings { dim: 8, seed: 3 };
    let mut points = vec![behind.clone(), on_wall.clone()];
    let invisible = project_and_gather(&mut points, &views, &buffers, &settings, &provider).unwrap();
    assert_eq!(invisible, 0);
    assert_eq!(points[0].visible_views, 1);
    let key = observe(&behind, &views[1], &buffers[1], &settings).unwrap().to_string();
    let single = provider.vector(&key);
    for (a, b) in points[0].embedding.as_ref().unwrap().iter().zip(&single) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(points[1].visible_views, 2);

    // a point in front of every camera's view frustum border is flagged invisible
    let mut outside = vec![SourcePoint::new(Vector3::new(50.0, 0.0, 0.0), 0)];
    assert_eq!(project_and_gather(&mut outside, &views, &buffers, &settings, &provider).unwrap(), 1);
    assert!(outside[0].embedding.is_none());

    let empty = EmbeddingArchive::new(None);
    let mut pts = vec![on_wall];
    match project_and_gather(&mut pts, &views, &buffers, &settings, &empty) {
        Err(Error::MissingAsset(m)) => assert!(m.contains(":9"), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn masks_accept_16_and_8_bit_pngs() {
    let dir = tempfile::tempdir().unwrap();
    let v = CameraView::new("a.png", Intrinsics { fx: 1.0, fy: 1.0, cx: 2.0, cy: 1.0 }, nalgebra::Isometry3::identity(), 4, 2);
    // 8-bit grayscale, left half id 1, right half id 2
    let path = dir.path().join("a.mask.png");
    let file = std::fs::File::create(&path).unwrap();
    let mut enc = png::Encoder::new(file, 4, 2);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    enc.write_header().unwrap().write_image_data(&[1, 1, 2, 2, 1, 1, 2, 2]).unwrap();
    let m = load_mask_map(&path, &v).unwrap();
    assert_eq!(m.histogram().into_iter().collect::<Vec<_>>(), vec![(1, 4), (2, 4)]);

    let path16 = dir.path().join("b.mask.png");
    let file = std::fs::File::create(&path16).unwrap();
    let mut enc = png::Encoder::new(file, 4, 2);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let ids: [u16; 8] = [0, 300, 300, 0, 65535, 1, 1, 1];
    enc.write_header().unwrap().write_image_data(&ids.iter().flat_map(|v| v.to_be_bytes()).collect::<Vec<_>>()).unwrap();
    assert_eq!(read_mask_png(&path16).unwrap().ids, ids.to_vec());

    let small = CameraView::new("a.png", Intrinsics { fx: 1.0, fy: 1.0, cx: 1.0, cy: 1.0 }, nalgebra::Isometry3::identity(), 2, 2);
    assert!(matches!(load_mask_map(&path, &small), Err(Error::Validation(_))));
}

/// Minimal HTTP/1.1 server answering each request with `reply(body)`.
fn serve(count: usize, reply: impl Fn(&Value) -> Value + Send + 'static) -> (String, thread::JoinHandle<Vec<Value>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut seen = Vec::new();
        for stream in listener.incoming().take(count) {
            let mut stream = stream.unwrap();
            stream.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let req: Value = serde_json::from_slice(&body).unwrap();
            let out = reply(&req).to_string();
            write!(stream, "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}", out.len(), out).unwrap();
            seen.push(req);
        }
        seen
    });
    (url, handle)
}

#[test]
fn chat_transport_speaks_the_completion_protocol() {
    let (url, server) = serve(2, |req| {
        let text = req["messages"][0]["content"][0]["text"].as_str().unwrap_or("");
        let content = if text.contains("volume") { "0.002 m^3".to_string() } else { "```json\n{\"description\": \"a mug\", \"materials\": {\"Ceramic\": 2400, \"steel\": [7700, 8000], \"oak\": 700}}\n```".to_string() };
        json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
    });
    let config = VlmConfig { endpoint: url, timeout_secs: 10, ..Default::default() };
    let transport = HttpTransport::new(&config).unwrap();
    let cache_dir = tempfile::tempdir().unwrap();
    let client = VlmClient::new(Some(&transport as &dyn Transport), ResponseCache::new(Some(cache_dir.path().to_path_buf())), false);
    let png = splatprop::model::encode_png(&Image::filled(4, 4, 3, 0.5)).unwrap();
    let dict = client.material_dictionary(PropertyKind::Density, &png).unwrap();
    assert_eq!(dict.names(), ["ceramic", "oak", "steel"]);
    assert!((client.pure_volume(&png).unwrap() - 0.002).abs() < 1e-15);
    let requests = server.join().unwrap();
    assert_eq!(requests.len(), 2);
    assert_eq!(requests[0]["temperature"], 0.0);
    assert!(requests[0]["messages"][0]["content"][1]["image_url"]["url"].as_str().unwrap().starts_with("data:image/png;base64,"));

    // replay from cache with no transport at all
    let offline = VlmClient::new(None, ResponseCache::new(Some(cache_dir.path().to_path_buf())), true);
    assert_eq!(offline.material_dictionary(PropertyKind::Density, &png).unwrap(), dict);
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    drop(listener);
    let transport = HttpTransport::new(&VlmConfig { endpoint: url, timeout_secs: 2, ..Default::default() }).unwrap();
    let err = transport.complete("hi", &[]).unwrap_err();
    assert!(matches!(err, Error::Transport(_)), "{err:?}");
    assert!(err.is_io());
}

#[test]
fn http_embeddings_crop_patches_and_embed_text() {
    let (url, server) = serve(2, |req| {
        if req.get("text").is_some() {
            json!({"embedding": [3.0, 4.0]})
        } else {
            json!({"embedding": [0.0, 2.0]})
        }
    });
    let mut v = view("cam.png", Vector3::new(0.0, 0.0, -3.0));
    v.image = Some(Image::filled(48, 48, 3, 0.25));
    let provider = HttpEmbeddings::new(&url, &[v], "a photo of {material}", Duration::from_secs(10));
    assert_eq!(provider.embedding("cam:20:20:5").unwrap(), vec![0.0, 1.0]);
    assert_eq!(provider.text_embedding("oak").unwrap(), vec![0.6, 0.8]);
    let reqs = server.join().unwrap();
    assert!(reqs[0]["image"].as_str().is_some());
    assert_eq!(reqs[1]["text"], "a photo of oak");
}
