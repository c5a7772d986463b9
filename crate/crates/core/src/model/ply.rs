//! Binary little-endian PLY in the de-facto 3DGS layout.
//!
//! Values are stored raw: opacity as a logit, scales as logarithms, rotation as an
//! unnormalized `(w, x, y, z)` quaternion. Region features use the extension fields
//! `feature_0..feature_{D-1}`; propagated labels use `material_id` and `property_value`.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::model::gaussian::{Gaussian, GaussianCloud, PropertyLabel};
use crate::model::sh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Header {
    vertex_count: usize,
    /// (name, type, byte offset within a vertex record)
    properties: Vec<(String, ScalarType, usize)>,
    stride: usize,
    body_offset: usize,
}

fn parse_header(data: &[u8]) -> Result<Header> {
    const END: &[u8] = b"end_header";
    let end = data
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::Parse("PLY header has no end_header".into()))?;
    let mut body_offset = end + END.len();
    if data.get(body_offset) == Some(&b'\r') {
        body_offset += 1;
    }
    if data.get(body_offset) != Some(&b'\n') {
        return Err(Error::Parse("PLY header not terminated by newline".into()));
    }
    body_offset += 1;
    let text = std::str::from_utf8(&data[..end])
        .map_err(|_| Error::Parse("PLY header is not ASCII".into()))?;

    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::Parse("missing `ply` magic".into()));
    }
    let mut format_ok = false;
    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut properties = Vec::new();
    let mut stride = 0;
    for line in lines {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "binary_little_endian", _] => format_ok = true,
            ["format", other, _] => {
                return Err(Error::Parse(format!("unsupported PLY format `{other}`")))
            }
            ["element", "vertex", n] => {
                vertex_count = Some(
                    n.parse::<usize>()
                        .map_err(|_| Error::Parse(format!("bad vertex count `{n}`")))?,
                );
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", "list", ..] if in_vertex => {
                return Err(Error::Parse("list properties are not supported on vertices".into()))
            }
            ["property", ty, name] if in_vertex => {
                let ty = ScalarType::parse(ty)
                    .ok_or_else(|| Error::Parse(format!("unknown property type `{ty}`")))?;
                properties.push((name.to_string(), ty, stride));
                stride += ty.size();
            }
            _ => {}
        }
    }
    if !format_ok {
        return Err(Error::Parse("missing `format binary_little_endian 1.0` line".into()));
    }
    let vertex_count =
        vertex_count.ok_or_else(|| Error::Parse("missing `element vertex` line".into()))?;
    Ok(Header {
        vertex_count,
        properties,
        stride,
        body_offset,
    })
}

/// Parse an in-memory PLY buffer.
pub fn parse_gaussian_ply(data: &[u8]) -> Result<GaussianCloud> {
    let header = parse_header(data)?;
    let lookup: HashMap<&str, (ScalarType, usize)> = header
        .properties
        .iter()
        .map(|(n, t, o)| (n.as_str(), (*t, *o)))
        .collect();
    let field = |name: &str| -> Result<(ScalarType, usize)> {
        lookup
            .get(name)
            .copied()
            .ok_or_else(|| Error::Parse(format!("PLY is missing required field `{name}`")))
    };
    let count_prefixed = |prefix: &str| {
        (0..)
            .take_while(|i| lookup.contains_key(format!("{prefix}{i}").as_str()))
            .count()
    };

    let mut required = vec![];
    for name in ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity"] {
        required.push(field(name)?);
    }
    let scale: Vec<_> = (0..3).map(|i| field(&format!("scale_{i}"))).collect::<Result<_>>()?;
    let rot: Vec<_> = (0..4).map(|i| field(&format!("rot_{i}"))).collect::<Result<_>>()?;

    let rest_count = count_prefixed("f_rest_");
    if rest_count % 3 != 0 {
        return Err(Error::Parse(format!("f_rest field count {rest_count} is not a multiple of 3")));
    }
    let coeffs = rest_count / 3 + 1;
    let sh_degree = sh::degree_for_count(coeffs).ok_or_else(|| {
        Error::Parse(format!("f_rest field count {rest_count} matches no SH degree"))
    })?;
    let rest: Vec<_> = (0..rest_count)
        .map(|i| field(&format!("f_rest_{i}")))
        .collect::<Result<_>>()?;
    let feature_dim = count_prefixed("feature_");
    let features: Vec<_> = (0..feature_dim)
        .map(|i| field(&format!("feature_{i}")))
        .collect::<Result<_>>()?;
    let label_fields = match (lookup.get("material_id"), lookup.get("property_value")) {
        (Some(a), Some(b)) => Some((*a, *b)),
        _ => None,
    };

    let body = &data[header.body_offset..];
    let needed = header.vertex_count * header.stride;
    if body.len() < needed {
        return Err(Error::Parse(format!(
            "PLY body truncated: expected {needed} bytes, found {}",
            body.len()
        )));
    }

    let mut gaussians = Vec::with_capacity(header.vertex_count);
    let mut labels = label_fields.map(|_| Vec::with_capacity(header.vertex_count));
    for rec in body[..needed].chunks_exact(header.stride.max(1)) {
        let get = |(ty, off): (ScalarType, usize)| ty.read(&rec[off..off + ty.size()]);
        let mut sh_coeffs = vec![[0.0; 3]; coeffs];
        sh_coeffs[0] = [get(required[3]), get(required[4]), get(required[5])];
        for c in 0..3 {
            for j in 1..coeffs {
                sh_coeffs[j][c] = get(rest[c * (coeffs - 1) + (j - 1)]);
            }
        }
        let g = Gaussian {
            center: Vector3::new(get(required[0]), get(required[1]), get(required[2])),
            rotation: [get(rot[0]), get(rot[1]), get(rot[2]), get(rot[3])],
            log_scale: Vector3::new(get(scale[0]), get(scale[1]), get(scale[2])),
            opacity_logit: get(required[6]),
            sh: sh_coeffs,
            feature: (feature_dim > 0).then(|| features.iter().map(|&f| get(f)).collect()),
        };
        if let (Some(labels), Some((m, v))) = (labels.as_mut(), label_fields) {
            labels.push(PropertyLabel {
                material_id: get(m) as u32,
                value: get(v),
            });
        }
        gaussians.push(g);
    }
    let cloud = GaussianCloud {
        gaussians,
        sh_degree,
        feature_dim,
        labels,
    };
    cloud.validate()?;
    Ok(cloud)
}

pub fn load_gaussian_ply(path: &Path) -> Result<GaussianCloud> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_gaussian_ply(&data)
}

/// Serialize to the canonical layout. All float fields are written as `float32`.
pub fn encode_gaussian_ply(cloud: &GaussianCloud) -> Result<Vec<u8>> {
    cloud.validate()?;
    let coeffs = sh::coeff_count(cloud.sh_degree);
    let rest = 3 * (coeffs - 1);
    let mut out = Vec::new();
    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", cloud.len()));
    let mut names: Vec<String> = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..rest).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names.extend((0..cloud.feature_dim).map(|i| format!("feature_{i}")));
    for n in &names {
        header.push_str(&format!("property float {n}\n"));
    }
    if cloud.labels.is_some() {
        header.push_str("property uint material_id\nproperty float property_value\n");
    }
    header.push_str("end_header\n");
    out.extend_from_slice(header.as_bytes());

    fn put(out: &mut Vec<u8>, v: f64) {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for (i, g) in cloud.gaussians.iter().enumerate() {
        g.center.iter().for_each(|&v| put(&mut out, v));
        g.sh[0].iter().for_each(|&v| put(&mut out, v));
        for c in 0..3 {
            for j in 1..coeffs {
                put(&mut out, g.sh[j][c]);
            }
        }
        put(&mut out, g.opacity_logit);
        g.log_scale.iter().for_each(|&v| put(&mut out, v));
        g.rotation.iter().for_each(|&v| put(&mut out, v));
        if let Some(f) = &g.feature {
            f.iter().for_each(|&v| put(&mut out, v));
        }
        if let Some(labels) = &cloud.labels {
            let l = labels[i];
            out.extend_from_slice(&l.material_id.to_le_bytes());
            out.extend_from_slice(&(l.value as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_gaussian_ply(path: &Path, cloud: &GaussianCloud) -> Result<()> {
    let bytes = encode_gaussian_ply(cloud)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}
