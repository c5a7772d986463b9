use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::camera::CameraView;
use crate::model::image::{read_png_samples, save_gray16_png};

/// Per-pixel segment ids. Id 0 marks unassigned pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMap {
    pub width: usize,
    pub height: usize,
    pub ids: Vec<u16>,
}

impl MaskMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ids: vec![0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u16) -> Self {
        let mut ids = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                ids.push(f(x, y));
            }
        }
        Self { width, height, ids }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.ids[y * self.width + x]
    }

    /// Pixel counts per id, including id 0.
    pub fn histogram(&self) -> BTreeMap<u16, usize> {
        let mut h = BTreeMap::new();
        for &id in &self.ids {
            *h.entry(id).or_insert(0) += 1;
        }
        h
    }
}

/// Read a single-channel 8- or 16-bit PNG; 8-bit ids are widened unchanged.
pub fn read_mask_png(path: &Path) -> Result<MaskMap> {
    let raw = read_png_samples(path)?;
    if raw.channels != 1 {
        return Err(Error::Validation(format!(
            "{}: mask must be single-channel, found {} channels",
            path.display(),
            raw.channels
        )));
    }
    Ok(MaskMap {
        width: raw.width,
        height: raw.height,
        ids: raw.samples,
    })
}

pub fn load_mask_map(path: &Path, view: &CameraView) -> Result<MaskMap> {
    let mask = read_mask_png(path)?;
    if mask.width != view.width || mask.height != view.height {
        return Err(Error::Validation(format!(
            "{}: mask is {}x{}, view {} is {}x{}",
            path.display(),
            mask.width,
            mask.height,
            view.name,
            view.width,
            view.height
        )));
    }
    Ok(mask)
}

pub fn save_mask_map(path: &Path, mask: &MaskMap) -> Result<()> {
    save_gray16_png(path, mask.width, mask.height, &mask.ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::camera::Intrinsics;
    use crate::model::image::save_gray8_png;

    fn view(w: usize, h: usize) -> CameraView {
        CameraView::new(
            "v.png",
            Intrinsics { fx: 10.0, fy: 10.0, cx: w as f64 / 2.0, cy: h as f64 / 2.0 },
            nalgebra::Isometry3::identity(),
            w,
            h,
        )
    }

    #[test]
    fn zero_mask_is_all_unassigned() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.mask.png");
        save_mask_map(&p, &MaskMap::new(8, 6)).unwrap();
        let m = load_mask_map(&p, &view(8, 6)).unwrap();
        assert_eq!(m.histogram().into_iter().collect::<Vec<_>>(), vec![(0, 48)]);
    }

    #[test]
    fn two_region_histogram() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.mask.png");
        let (w, h) = (10, 4);
        let mask = MaskMap::from_fn(w, h, |x, _| if x < w / 2 { 1 } else { 2 });
        save_mask_map(&p, &mask).unwrap();
        let m = load_mask_map(&p, &view(w, h)).unwrap();
        let hist = m.histogram();
        assert_eq!(hist[&1], w * h / 2);
        assert_eq!(hist[&2], w * h / 2);
        assert_eq!(m, mask);
    }

    #[test]
    fn eight_bit_masks_are_widened() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.mask.png");
        let bytes: Vec<u8> = (0..12).map(|i| (i * 20) as u8).collect();
        save_gray8_png(&p, 4, 3, &bytes).unwrap();
        let m = load_mask_map(&p, &view(4, 3)).unwrap();
        assert_eq!(m.ids, bytes.iter().map(|&b| b as u16).collect::<Vec<_>>());
    }

    #[test]
    fn large_ids_survive_16_bit_storage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.mask.png");
        let mask = MaskMap::from_fn(3, 3, |x, y| (x * 20000 + y) as u16);
        save_mask_map(&p, &mask).unwrap();
        assert_eq!(read_mask_png(&p).unwrap(), mask);
    }

    #[test]
    fn resolution_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.mask.png");
        save_mask_map(&p, &MaskMap::new(8, 6)).unwrap();
        assert!(matches!(load_mask_map(&p, &view(8, 5)), Err(Error::Validation(_))));
    }
}
