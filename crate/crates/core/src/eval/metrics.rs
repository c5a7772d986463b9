//! Scalar prediction error metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `|m − y|`
    pub ade: f64,
    /// `|ln m − ln y|`
    pub alde: f64,
    /// `|m − y| / y`
    pub ape: f64,
    /// `min(m/y, y/m)`
    pub mnre: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 4] = ["ade", "alde", "ape", "mnre"];

    pub fn values(&self) -> [f64; 4] {
        [self.ade, self.alde, self.ape, self.mnre]
    }

    pub fn from_values(v: [f64; 4]) -> Self {
        Self { ade: v[0], alde: v[1], ape: v[2], mnre: v[3] }
    }
}

pub fn metrics(predicted: f64, truth: f64) -> Result<Metrics> {
    if !(predicted > 0.0 && truth > 0.0) || !predicted.is_finite() || !truth.is_finite() {
        return Err(Error::Validation(format!(
            "metrics need positive finite values, got prediction {predicted} and truth {truth}"
        )));
    }
    let ade = (predicted - truth).abs();
    Ok(Metrics {
        ade,
        alde: (predicted / truth).ln().abs(),
        ape: ade / truth,
        mnre: (predicted / truth).min(truth / predicted),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        assert_eq!(metrics(3.0, 3.0).unwrap().values(), [0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn half_prediction() {
        let m = metrics(2.0, 4.0).unwrap();
        assert_eq!(m.ade, 2.0);
        assert!((m.alde - 2f64.ln()).abs() < 1e-15);
        assert_eq!(m.ape, 0.5);
        assert_eq!(m.mnre, 0.5);
    }

    #[test]
    fn e_times_truth() {
        let y = 1.7;
        assert!((metrics(std::f64::consts::E * y, y).unwrap().alde - 1.0).abs() < 1e-15);
    }

    #[test]
    fn non_positive_inputs_fail() {
        assert!(metrics(0.0, 1.0).is_err());
        assert!(metrics(1.0, -1.0).is_err());
        assert!(metrics(f64::NAN, 1.0).is_err());
    }
}
