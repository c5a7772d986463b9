//! Inspection exports: 8-bit PNG for color/alpha, PFM for float buffers.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::image::save_png;
use crate::model::Image;

pub fn save_rgb_png(path: &Path, rgb: &Image) -> Result<()> {
    save_png(path, rgb)
}

pub fn save_alpha_png(path: &Path, alpha: &Image) -> Result<()> {
    save_png(path, alpha)
}

/// Portable float map, little-endian, rows stored bottom to top. 1 or 3 channels.
pub fn encode_pfm(image: &Image) -> Result<Vec<u8>> {
    let tag = match image.channels {
        1 => "Pf",
        3 => "PF",
        n => return Err(Error::Validation(format!("PFM supports 1 or 3 channels, got {n}"))),
    };
    let mut out = format!("{tag}\n{} {}\n-1.0\n", image.width, image.height).into_bytes();
    let row_len = image.width * image.channels;
    for y in (0..image.height).rev() {
        for &v in &image.data[y * row_len..(y + 1) * row_len] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Image> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated PFM header".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::Parse("bad PFM header".into()))?);
    }
    pos += 1;
    let channels = match fields[0] {
        "Pf" => 1,
        "PF" => 3,
        t => return Err(Error::Parse(format!("unknown PFM tag `{t}`"))),
    };
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad PFM size `{s}`")));
    let (width, height) = (parse(fields[1])?, parse(fields[2])?);
    let scale: f64 = fields[3].parse().map_err(|_| Error::Parse("bad PFM scale".into()))?;
    let little = scale < 0.0;
    let body = &bytes[pos..];
    let row_len = width * channels;
    if body.len() < row_len * height * 4 {
        return Err(Error::Parse("truncated PFM body".into()));
    }
    let mut img = Image::new(width, height, channels);
    for (k, chunk) in body.chunks_exact(4).take(row_len * height).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row, col) = (k / row_len, k % row_len);
        img.data[(height - 1 - row) * row_len + col] = v as f64;
    }
    Ok(img)
}

pub fn save_pfm(path: &Path, image: &Image) -> Result<()> {
    crate::io_util::write_file(path, &encode_pfm(image)?)
}

/// Project a D-channel feature map onto its three leading principal components, rescaled
/// to `[0, 1]` per component, for visualization.
pub fn feature_pca(features: &Image) -> Image {
    let (n, d) = (features.pixel_count(), features.channels);
    let mut out = Image::new(features.width, features.height, 3);
    if n == 0 || d == 0 {
        return out;
    }
    let mean: Vec<f64> = (0..d)
        .map(|c| (0..n).map(|p| features.pixel(p)[c]).sum::<f64>() / n as f64)
        .collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for p in 0..n {
        let x = features.pixel(p);
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (x[i] - mean[i]) * (x[j] - mean[j]);
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    for (k, &axis) in order.iter().take(3).enumerate() {
        let v = eig.eigenvectors.column(axis);
        let proj: Vec<f64> = (0..n)
            .map(|p| (0..d).map(|i| (features.pixel(p)[i] - mean[i]) * v[i]).sum())
            .collect();
        let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        for (p, val) in proj.iter().enumerate() {
            out.pixel_mut(p)[k] = (val - lo) / span;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_keeps_row_order() {
        let img = Image::from_fn(3, 2, 3, |x, y, c| (x * 10 + y * 100 + c) as f64);
        let back = decode_pfm(&encode_pfm(&img).unwrap()).unwrap();
        assert_eq!(back, img);
        let gray = Image::from_fn(4, 3, 1, |x, y, _| x as f64 - y as f64 * 0.5);
        assert_eq!(decode_pfm(&encode_pfm(&gray).unwrap()).unwrap(), gray);
    }

    #[test]
    fn pca_output_is_normalized() {
        let f = Image::from_fn(8, 8, 5, |x, y, c| ((x * 3 + y * 7 + c * 11) % 13) as f64);
        let pca = feature_pca(&f);
        assert!(pca.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
