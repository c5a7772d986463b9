//! Dense multi-channel images and PNG I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major, channel-interleaved image of `f64` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f64) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    #[inline]
    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Single channel `c` as its own image.
    pub fn channel(&self, c: usize) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().skip(c).step_by(self.channels).copied().collect(),
        }
    }

    /// Rec. 601 luma of an RGB image.
    pub fn luminance(&self) -> Image {
        assert_eq!(self.channels, 3, "luminance needs an RGB image");
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self
                .data
                .chunks_exact(3)
                .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                .collect(),
        }
    }
}

fn open_png(path: &Path) -> Result<png::Reader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    decoder
        .read_info()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Decoded PNG samples widened to `u16` together with the sample layout.
pub(crate) struct RawPng {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub bit_depth: u8,
    pub samples: Vec<u16>,
}

pub(crate) fn read_png_samples(path: &Path) -> Result<RawPng> {
    let mut reader = open_png(path)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Parse(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    buf.truncate(info.buffer_size());
    let channels = info.color_type.samples();
    let samples = match info.bit_depth {
        png::BitDepth::Sixteen => buf
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]))
            .collect(),
        png::BitDepth::Eight => buf.iter().map(|&b| b as u16).collect(),
        other => {
            return Err(Error::Parse(format!(
                "{}: unsupported bit depth {other:?}",
                path.display()
            )))
        }
    };
    Ok(RawPng {
        width: info.width as usize,
        height: info.height as usize,
        channels,
        bit_depth: if info.bit_depth == png::BitDepth::Sixteen { 16 } else { 8 },
        samples,
    })
}

/// Load an RGB(A)/gray PNG as a normalized 3-channel image in [0,1]. Alpha is dropped.
pub fn load_rgb_png(path: &Path) -> Result<Image> {
    let raw = read_png_samples(path)?;
    let max = if raw.bit_depth == 16 { 65535.0 } else { 255.0 };
    let mut img = Image::new(raw.width, raw.height, 3);
    for i in 0..raw.width * raw.height {
        let px = &raw.samples[i * raw.channels..(i + 1) * raw.channels];
        let rgb = match raw.channels {
            1 | 2 => [px[0], px[0], px[0]],
            _ => [px[0], px[1], px[2]],
        };
        for c in 0..3 {
            img.data[i * 3 + c] = rgb[c] as f64 / max;
        }
    }
    Ok(img)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(depth);
    let to_err = |e: png::EncodingError| Error::io(path, std::io::Error::other(e.to_string()));
    let mut writer = encoder.write_header().map_err(to_err)?;
    writer.write_image_data(bytes).map_err(to_err)?;
    writer.finish().map_err(to_err)
}

/// Write a 1- or 3-channel image in [0,1] as an 8-bit PNG.
pub fn save_png(path: &Path, image: &Image) -> Result<()> {
    let color = match image.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        n => return Err(Error::Validation(format!("cannot write {n}-channel PNG"))),
    };
    let bytes: Vec<u8> = image.data.iter().map(|&v| to_u8(v)).collect();
    write_png(path, image.width, image.height, color, png::BitDepth::Eight, &bytes)
}

pub(crate) fn save_gray16_png(path: &Path, width: usize, height: usize, values: &[u16]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_be_bytes()).collect();
    write_png(path, width, height, png::ColorType::Grayscale, png::BitDepth::Sixteen, &bytes)
}

#[cfg(test)]
pub(crate) fn save_gray8_png(path: &Path, width: usize, height: usize, values: &[u8]) -> Result<()> {
    write_png(path, width, height, png::ColorType::Grayscale, png::BitDepth::Eight, values)
}

/// 8-bit PNG bytes of a 1- or 3-channel image, encoded in memory.
pub fn encode_png(image: &Image) -> Result<Vec<u8>> {
    let color = match image.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        n => return Err(Error::Validation(format!("cannot encode {n}-channel PNG"))),
    };
    let bytes: Vec<u8> = image.data.iter().map(|&v| to_u8(v)).collect();
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, image.width as u32, image.height as u32);
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Eight);
        let to_err = |e: png::EncodingError| Error::Parse(format!("png encoding: {e}"));
        let mut writer = encoder.write_header().map_err(to_err)?;
        writer.write_image_data(&bytes).map_err(to_err)?;
        writer.finish().map_err(to_err)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_png_round_trip_is_quantized_to_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = Image::from_fn(5, 4, 3, |x, y, c| ((x + 2 * y + c) % 7) as f64 / 6.0);
        save_png(&path, &img).unwrap();
        let back = load_rgb_png(&path).unwrap();
        assert!(back.same_shape(&img));
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn luminance_of_white_is_one() {
        let img = Image::filled(2, 2, 3, 1.0);
        for v in img.luminance().data {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }
}
