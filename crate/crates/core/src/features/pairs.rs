//! Stratified sampling of same-mask / cross-mask pixel pairs.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Image, MaskMap};

/// Pixels with rendered alpha below this never take part in feature training.
pub const PAIR_VALID_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelPair {
    /// Row-major pixel indices.
    pub p1: u32,
    pub p2: u32,
    pub same_mask: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelPairBatch {
    pub view: usize,
    pub pairs: Vec<PixelPair>,
    /// Set when the view has only one usable mask, so every pair is a same-mask pair.
    pub single_mask: bool,
}

impl PixelPairBatch {
    pub fn same_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.same_mask).count()
    }
}

/// Draw `n` pairs: `round(balance·n)` inside one mask, the rest across masks.
///
/// Only pixels with a nonzero mask id (and alpha ≥ 0.5 when `alpha` is given) are used.
pub fn sample_pixel_pairs(
    mask: &MaskMap,
    alpha: Option<&Image>,
    n: usize,
    seed: u64,
    balance: f64,
    view: usize,
) -> Result<PixelPairBatch> {
    if n == 0 {
        return Err(Error::Validation("pair count must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&balance) {
        return Err(Error::Config(format!("pair balance {balance} outside [0, 1]")));
    }
    let mut groups: BTreeMap<u16, Vec<u32>> = BTreeMap::new();
    for (p, &id) in mask.ids.iter().enumerate() {
        let visible = alpha.is_none_or(|a| a.data[p] >= PAIR_VALID_ALPHA);
        if id != 0 && visible {
            groups.entry(id).or_default().push(p as u32);
        }
    }
    if groups.is_empty() {
        return Err(Error::Validation(format!("view {view} has no masked, visible pixels")));
    }
    let groups: Vec<Vec<u32>> = groups.into_values().collect();
    let valid: Vec<(u32, usize)> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, px)| px.iter().map(move |&p| (p, g)))
        .collect();
    let total = valid.len();

    let single_mask = groups.len() == 1;
    let n_same = if single_mask { n } else { (balance * n as f64).round() as usize };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n);
    for k in 0..n {
        let (p1, g) = valid[rng.random_range(0..total)];
        if k < n_same {
            let members = &groups[g];
            let p2 = members[rng.random_range(0..members.len())];
            pairs.push(PixelPair { p1, p2, same_mask: true });
        } else {
            // uniform over valid pixels outside group g
            let mut r = rng.random_range(0..total - groups[g].len());
            let mut p2 = 0;
            for (h, members) in groups.iter().enumerate() {
                if h == g {
                    continue;
                }
                if r < members.len() {
                    p2 = members[r];
                    break;
                }
                r -= members.len();
            }
            pairs.push(PixelPair { p1, p2, same_mask: false });
        }
    }
    Ok(PixelPairBatch { view, pairs, single_mask })
}
