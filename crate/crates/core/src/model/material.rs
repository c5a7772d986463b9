//! Candidate-material dictionaries and their JSON form.
//!
//! ```json
//! {"property": "density", "unit": "kg/m^3",
//!  "materials": {"foam": 80, "steel": [7750, 8050]},
//!  "pure_volume_m3": 0.002}
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyKind {
    Density,
    YoungsModulus,
    Hardness,
    Friction,
}

impl PropertyKind {
    pub const ALL: [PropertyKind; 4] = [
        PropertyKind::Density,
        PropertyKind::YoungsModulus,
        PropertyKind::Hardness,
        PropertyKind::Friction,
    ];

    pub fn parse(name: &str) -> Result<Self> {
        let norm: String = name
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        match norm.as_str() {
            "density" => Ok(Self::Density),
            "youngsmodulus" | "youngmodulus" | "elasticmodulus" => Ok(Self::YoungsModulus),
            "hardness" => Ok(Self::Hardness),
            "friction" | "frictioncoefficient" => Ok(Self::Friction),
            _ => Err(Error::Validation(format!("unsupported property kind `{name}`"))),
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Self::Density => "kg/m^3",
            Self::YoungsModulus => "GPa",
            Self::Hardness => "Shore A",
            Self::Friction => "dimensionless",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Density => "density",
            Self::YoungsModulus => "Young's modulus",
            Self::Hardness => "hardness",
            Self::Friction => "friction coefficient",
        }
    }

    /// Properties that only make sense strictly positive and compose multiplicatively.
    pub fn is_multiplicative(self) -> bool {
        matches!(self, Self::Density | Self::YoungsModulus)
    }

    pub fn default_collapse(self) -> CollapseRule {
        match self {
            Self::YoungsModulus => CollapseRule::GeometricMean,
            _ => CollapseRule::Midpoint,
        }
    }
}

impl fmt::Display for PropertyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        write!(f, "{}", s.as_ref().and_then(|v| v.as_str()).unwrap_or("?"))
    }
}

/// How a `[lo, hi]` range becomes one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollapseRule {
    Midpoint,
    GeometricMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PropertyValue {
    Point(f64),
    Range([f64; 2]),
}

impl PropertyValue {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            PropertyValue::Point(v) => (v, v),
            PropertyValue::Range([lo, hi]) => (lo, hi),
        }
    }

    pub fn collapse(&self, rule: CollapseRule) -> f64 {
        match (*self, rule) {
            (PropertyValue::Point(v), _) => v,
            (PropertyValue::Range([lo, hi]), CollapseRule::Midpoint) => 0.5 * (lo + hi),
            (PropertyValue::Range([lo, hi]), CollapseRule::GeometricMean) => (lo * hi).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaterialEntry {
    pub name: String,
    pub value: PropertyValue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaterialDictionary {
    pub property: PropertyKind,
    pub unit: String,
    pub entries: Vec<MaterialEntry>,
    pub pure_volume: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DictionaryJson {
    property: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    unit: Option<String>,
    materials: BTreeMap<String, PropertyValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pure_volume_m3: Option<f64>,
}

impl MaterialDictionary {
    pub fn new(property: PropertyKind, entries: Vec<MaterialEntry>) -> Result<Self> {
        let dict = Self {
            property,
            unit: property.unit().to_string(),
            entries,
            pure_volume: None,
        };
        dict.validate()?;
        Ok(dict)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    /// Scalar values under `rule`, in entry order.
    pub fn scalars(&self, rule: CollapseRule) -> Vec<f64> {
        self.entries.iter().map(|e| e.value.collapse(rule)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Validation("material dictionary has no entries".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.name.as_str()) {
                return Err(Error::Validation(format!("duplicate material `{}`", e.name)));
            }
            let (lo, hi) = e.value.bounds();
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::Validation(format!("material `{}`: non-finite value", e.name)));
            }
            if lo > hi {
                return Err(Error::Validation(format!("material `{}`: range [{lo}, {hi}] is reversed", e.name)));
            }
            if self.property.is_multiplicative() && lo <= 0.0 {
                return Err(Error::Validation(format!(
                    "material `{}`: {} must be positive, got {lo}",
                    e.name, self.property
                )));
            }
            if lo < 0.0 {
                return Err(Error::Validation(format!("material `{}`: negative value {lo}", e.name)));
            }
        }
        if let Some(v) = self.pure_volume {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("pure volume must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: DictionaryJson =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("material dictionary: {e}")))?;
        let property = PropertyKind::parse(&raw.property)?;
        let dict = Self {
            property,
            unit: raw.unit.unwrap_or_else(|| property.unit().to_string()),
            entries: raw
                .materials
                .into_iter()
                .map(|(name, value)| MaterialEntry { name, value })
                .collect(),
            pure_volume: raw.pure_volume_m3,
        };
        dict.validate()?;
        Ok(dict)
    }

    pub fn to_json_string(&self) -> String {
        let raw = DictionaryJson {
            property: self.property.to_string(),
            unit: Some(self.unit.clone()),
            materials: self.entries.iter().map(|e| (e.name.clone(), e.value)).collect(),
            pure_volume_m3: self.pure_volume,
        };
        let mut s = serde_json::to_string_pretty(&raw).expect("dictionary serialize");
        s.push('\n');
        s
    }
}

pub fn load_material_dictionary(path: &Path) -> Result<MaterialDictionary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    MaterialDictionary::from_json_str(&text)
}

pub fn save_material_dictionary(path: &Path, dict: &MaterialDictionary) -> Result<()> {
    crate::io_util::write_file(path, dict.to_json_string().as_bytes())
}
