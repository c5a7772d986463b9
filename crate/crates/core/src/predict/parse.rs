//! Strict parsing of model replies into dictionaries and volumes.

use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{MaterialDictionary, MaterialEntry, PropertyKind, PropertyValue};

/// Body of the first fenced code block, or the trimmed text when there is none.
pub fn strip_code_fences(raw: &str) -> &str {
    let t = raw.trim();
    let Some(start) = t.find("```") else { return t };
    let after = &t[start + 3..];
    let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
    let body = &after[body_start..];
    match body.find("```") {
        Some(end) => body[..end].trim(),
        None => body.trim(),
    }
}

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn property_value(name: &str, v: &Value) -> Result<PropertyValue> {
    if let Some(x) = number(v) {
        return Ok(PropertyValue::Point(x));
    }
    if let Value::Array(items) = v {
        let nums: Option<Vec<f64>> = items.iter().map(number).collect();
        match nums.as_deref() {
            Some([x]) => return Ok(PropertyValue::Point(*x)),
            Some([a, b]) => return Ok(PropertyValue::Range([a.min(*b), a.max(*b)])),
            _ => {}
        }
    }
    Err(Error::Parse(format!("material `{name}`: expected a number or [lo, hi], got {v}")))
}

/// Parse a reply into a dictionary for `kind`.
///
/// Accepts `{"materials": {...}}` or a bare name→value object, optionally inside a markdown fence.
pub fn parse_material_response(raw: &str, kind: PropertyKind) -> Result<MaterialDictionary> {
    let body = strip_code_fences(raw);
    let value: Value = serde_json::from_str(body).map_err(|e| Error::Parse(format!("reply is not JSON: {e}")))?;
    let Value::Object(top) = value else {
        return Err(Error::Parse("reply is not a JSON object".into()));
    };
    let materials = match top.get("materials") {
        Some(Value::Object(m)) => m.clone(),
        Some(other) => return Err(Error::Parse(format!("`materials` must be an object, got {other}"))),
        None => top,
    };
    let mut entries: Vec<MaterialEntry> = Vec::with_capacity(materials.len());
    for (name, v) in &materials {
        let name = name.trim().to_lowercase();
        if name.is_empty() {
            return Err(Error::Validation("empty material name".into()));
        }
        if entries.iter().any(|e| e.name == name) {
            return Err(Error::Validation(format!("duplicate material `{name}`")));
        }
        let value = property_value(&name, v)?;
        entries.push(MaterialEntry { name, value });
    }
    if entries.is_empty() {
        return Err(Error::Empty("material dictionary"));
    }
    entries.sort_by(|a, b| a.name.cmp(&b.name));
    MaterialDictionary::new(kind, entries)
}

/// Parse a volume reply like `0.002 m^3` or `2 L` into cubic meters.
pub fn parse_pure_volume(raw: &str) -> Result<f64> {
    let text = strip_code_fences(raw).trim().trim_end_matches('.');
    let split = text
        .find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '-' | '+')))
        .unwrap_or(text.len());
    let (num, unit) = text.split_at(split);
    let value: f64 = num
        .trim()
        .parse()
        .map_err(|_| Error::Validation(format!("pure volume reply `{text}` has no leading number")))?;
    let unit = unit.trim().to_lowercase().replace(' ', "");
    let scale = match unit.as_str() {
        "m^3" | "m3" | "m³" | "cubicmeters" | "cubicmetres" => 1.0,
        "l" | "liter" | "liters" | "litre" | "litres" => 1e-3,
        _ => return Err(Error::Validation(format!("pure volume unit `{unit}` is not m^3 or L"))),
    };
    let v = value * scale;
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Validation(format!("pure volume must be positive, got {v}")));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_reply_in_gpa() {
        let d = parse_material_response(r#"{"cotton": [0.8, 0.3]}"#, PropertyKind::YoungsModulus).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.entries[0].value, PropertyValue::Range([0.3, 0.8]));
        assert_eq!(d.unit, "GPa");
    }

    #[test]
    fn fenced_reply_parses_like_bare() {
        let bare = r#"{"description": "a mug", "materials": {" Ceramic ": 2400, "steel": [7750, 8050]}}"#;
        let fenced = format!("Here you go:\n```json\n{bare}\n```\n");
        let a = parse_material_response(bare, PropertyKind::Density).unwrap();
        let b = parse_material_response(&fenced, PropertyKind::Density).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.names(), vec!["ceramic", "steel"]);
    }

    #[test]
    fn negative_density_rejected() {
        let err = parse_material_response(r#"{"steel": -1}"#, PropertyKind::Density).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn empty_and_garbage_replies() {
        assert!(matches!(parse_material_response(r#"{"materials": {}}"#, PropertyKind::Density), Err(Error::Empty(_))));
        assert!(matches!(parse_material_response("steel, probably", PropertyKind::Density), Err(Error::Parse(_))));
    }

    #[test]
    fn volumes() {
        assert_eq!(parse_pure_volume("0.002 m^3").unwrap(), 0.002);
        assert!((parse_pure_volume("2 L").unwrap() - 0.002).abs() < 1e-18);
        assert!(parse_pure_volume("unknown").is_err());
        assert!(parse_pure_volume("0 m^3").is_err());
        assert!(parse_pure_volume("-3 L").is_err());
    }
}
