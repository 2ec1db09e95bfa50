//! PLY 1.0 point clouds, ascii or binary little-endian.
//!
//! Only the `vertex` element is read. Elements declared before it are
//! skipped row by row, elements after it are never touched, and properties
//! other than the requested ones are skipped by size.
//!
//! Fused clouds carry `x y z` (float), `red green blue` (uchar), `thermal`
//! (float) and `thermal_valid` (uchar, 0 or 1).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{bounded_capacity, DenseCloud, DensePoint, FusedPoint, TokenError, Tokens};
use crate::geometry::Vec3;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad PLY header: {0}")]
    BadHeader(String),
    #[error("unsupported PLY format `{0}`")]
    UnsupportedFormat(String),
    #[error("vertex element lacks property `{0}`")]
    MissingProperty(String),
    #[error("property `{name}` has type {found}, expected {expected}")]
    PropertyType {
        name: String,
        found: &'static str,
        expected: &'static str,
    },
    #[error("file ends inside element `{0}`")]
    TruncatedFile(String),
    #[error("malformed value in element `{0}`")]
    MalformedNumber(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlyMode {
    Ascii,
    #[default]
    Binary,
}

impl std::str::FromStr for PlyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ascii" => Ok(PlyMode::Ascii),
            "binary" => Ok(PlyMode::Binary),
            other => Err(format!("unknown PLY mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Scalar::I8 => "char",
            Scalar::U8 => "uchar",
            Scalar::I16 => "short",
            Scalar::U16 => "ushort",
            Scalar::I32 => "int",
            Scalar::U32 => "uint",
            Scalar::F32 => "float",
            Scalar::F64 => "double",
        }
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn is_float(self) -> bool {
        matches!(self, Scalar::F32 | Scalar::F64)
    }

    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("eight bytes")),
        }
    }

    fn parse_text(self, token: &str) -> Option<f64> {
        let v = match self {
            Scalar::I8 => token.parse::<i8>().ok()? as f64,
            Scalar::U8 => token.parse::<u8>().ok()? as f64,
            Scalar::I16 => token.parse::<i16>().ok()? as f64,
            Scalar::U16 => token.parse::<u16>().ok()? as f64,
            Scalar::I32 => token.parse::<i32>().ok()? as f64,
            Scalar::U32 => token.parse::<u32>().ok()? as f64,
            Scalar::F32 => token.parse::<f32>().ok()? as f64,
            Scalar::F64 => token.parse::<f64>().ok()?,
        };
        Some(v)
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, PlyError> {
    let mut offset = 0;
    let mut next_line = || -> Result<&str, PlyError> {
        let rest = &bytes[offset..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Err(PlyError::TruncatedFile("header".into()));
        };
        offset += nl + 1;
        let line = &rest[..nl];
        let line = line.strip_suffix(b"\r").unwrap_or(line);
        std::str::from_utf8(line).map_err(|_| PlyError::BadHeader("non-text header line".into()))
    };

    if next_line()?.trim() != "ply" {
        return Err(PlyError::BadHeader("missing `ply` magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let line = next_line()?;
        let words: Vec<&str> = line.split_ascii_whitespace().collect();
        match words.as_slice() {
            [] => {}
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", kind, version] => {
                if *version != "1.0" {
                    return Err(PlyError::UnsupportedFormat(format!("{kind} {version}")));
                }
                format = Some(match *kind {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLe,
                    other => return Err(PlyError::UnsupportedFormat(other.to_string())),
                });
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| PlyError::BadHeader(format!("bad count in `{line}`")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", count, item, name] => {
                let (Some(count), Some(item)) = (Scalar::parse(count), Scalar::parse(item)) else {
                    return Err(PlyError::BadHeader(format!("unknown type in `{line}`")));
                };
                if count.is_float() {
                    return Err(PlyError::BadHeader(format!("float list count in `{line}`")));
                }
                let element = elements
                    .last_mut()
                    .ok_or_else(|| PlyError::BadHeader("property before element".into()))?;
                element.properties.push(Property::List {
                    name: name.to_string(),
                    count,
                    item,
                });
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty)
                    .ok_or_else(|| PlyError::BadHeader(format!("unknown type in `{line}`")))?;
                let element = elements
                    .last_mut()
                    .ok_or_else(|| PlyError::BadHeader("property before element".into()))?;
                element.properties.push(Property::Scalar {
                    name: name.to_string(),
                    ty,
                });
            }
            _ => return Err(PlyError::BadHeader(format!("unrecognized line `{line}`"))),
        }
    }
    let format = format.ok_or_else(|| PlyError::BadHeader("missing format line".into()))?;
    Ok(Header {
        format,
        elements,
        body_offset: offset,
    })
}

/// A requested vertex property and the scalar types it may have.
struct Wanted {
    name: &'static str,
    accept: fn(Scalar) -> bool,
    expected: &'static str,
}

/// Reads the vertex element, returning rows of the wanted properties in
/// request order, flattened.
fn read_vertex_table(bytes: &[u8], wanted: &[Wanted]) -> Result<Vec<f64>, PlyError> {
    let header = parse_header(bytes)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| PlyError::MissingProperty("vertex element".into()))?;
    let vertex = &header.elements[vertex_pos];

    // slot[k] = index into `wanted` for property k of the vertex element.
    let mut slot = vec![None; vertex.properties.len()];
    for (w, want) in wanted.iter().enumerate() {
        let k = vertex
            .properties
            .iter()
            .position(|p| p.name() == want.name)
            .ok_or_else(|| PlyError::MissingProperty(want.name.to_string()))?;
        match &vertex.properties[k] {
            Property::Scalar { ty, .. } if (want.accept)(*ty) => slot[k] = Some(w),
            Property::Scalar { ty, .. } => {
                return Err(PlyError::PropertyType {
                    name: want.name.to_string(),
                    found: ty.name(),
                    expected: want.expected,
                })
            }
            Property::List { .. } => {
                return Err(PlyError::PropertyType {
                    name: want.name.to_string(),
                    found: "list",
                    expected: want.expected,
                })
            }
        }
    }

    let body = &bytes[header.body_offset..];
    let stride = wanted.len();
    match header.format {
        Format::BinaryLe => {
            let mut cursor = Binary { body, pos: 0 };
            for element in &header.elements[..vertex_pos] {
                for _ in 0..element.count {
                    cursor.skip_row(element)?;
                }
            }
            let min_row: usize = vertex
                .properties
                .iter()
                .map(|p| match p {
                    Property::Scalar { ty, .. } => ty.size(),
                    Property::List { count, .. } => count.size(),
                })
                .sum();
            let rows = bounded_capacity(vertex.count, body.len() - cursor.pos, min_row);
            let mut out = Vec::with_capacity(rows * stride);
            let mut row = vec![0.0; stride];
            for _ in 0..vertex.count {
                for (k, p) in vertex.properties.iter().enumerate() {
                    match p {
                        Property::Scalar { ty, .. } => {
                            let v = cursor.scalar(*ty, &vertex.name)?;
                            if let Some(w) = slot[k] {
                                row[w] = v;
                            }
                        }
                        Property::List { count, item, .. } => {
                            cursor.skip_list(*count, *item, &vertex.name)?
                        }
                    }
                }
                out.extend_from_slice(&row);
            }
            Ok(out)
        }
        Format::Ascii => {
            let text = std::str::from_utf8(body)
                .map_err(|_| PlyError::MalformedNumber("ascii body is not text".into()))?;
            let mut tok = Tokens::new(text);
            for element in &header.elements[..vertex_pos] {
                for _ in 0..element.count {
                    for p in &element.properties {
                        ascii_skip(&mut tok, p, &element.name)?;
                    }
                }
            }
            let rows = bounded_capacity(vertex.count, text.len() - tok.position(), 2 * stride);
            let mut out = Vec::with_capacity(rows * stride);
            let mut row = vec![0.0; stride];
            for _ in 0..vertex.count {
                for (k, p) in vertex.properties.iter().enumerate() {
                    match (slot[k], p) {
                        (Some(w), Property::Scalar { ty, .. }) => {
                            row[w] = ascii_scalar(&mut tok, *ty, &vertex.name)?;
                        }
                        _ => ascii_skip(&mut tok, p, &vertex.name)?,
                    }
                }
                out.extend_from_slice(&row);
            }
            Ok(out)
        }
    }
}

struct Binary<'a> {
    body: &'a [u8],
    pos: usize,
}

impl Binary<'_> {
    fn take(&mut self, n: usize, element: &str) -> Result<&[u8], PlyError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.body.len())
            .ok_or_else(|| PlyError::TruncatedFile(element.to_string()))?;
        let s = &self.body[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn scalar(&mut self, ty: Scalar, element: &str) -> Result<f64, PlyError> {
        Ok(ty.decode_le(self.take(ty.size(), element)?))
    }

    fn skip_list(&mut self, count: Scalar, item: Scalar, element: &str) -> Result<(), PlyError> {
        let n = self.scalar(count, element)?;
        if n < 0.0 {
            return Err(PlyError::MalformedNumber(element.to_string()));
        }
        self.take(n as usize * item.size(), element)?;
        Ok(())
    }

    fn skip_row(&mut self, element: &Element) -> Result<(), PlyError> {
        for p in &element.properties {
            match p {
                Property::Scalar { ty, .. } => {
                    self.take(ty.size(), &element.name)?;
                }
                Property::List { count, item, .. } => self.skip_list(*count, *item, &element.name)?,
            }
        }
        Ok(())
    }
}

fn ascii_scalar(tok: &mut Tokens<'_>, ty: Scalar, element: &str) -> Result<f64, PlyError> {
    let token = tok.next_token().map_err(|e| match e {
        TokenError::End => PlyError::TruncatedFile(element.to_string()),
        TokenError::Malformed => PlyError::MalformedNumber(element.to_string()),
    })?;
    ty.parse_text(token)
        .ok_or_else(|| PlyError::MalformedNumber(element.to_string()))
}

fn ascii_skip(tok: &mut Tokens<'_>, p: &Property, element: &str) -> Result<(), PlyError> {
    match p {
        Property::Scalar { ty, .. } => {
            ascii_scalar(tok, *ty, element)?;
        }
        Property::List { count, item, .. } => {
            let n = ascii_scalar(tok, *count, element)?;
            if n < 0.0 {
                return Err(PlyError::MalformedNumber(element.to_string()));
            }
            for _ in 0..n as usize {
                ascii_scalar(tok, *item, element)?;
            }
        }
    }
    Ok(())
}

fn any_scalar(_: Scalar) -> bool {
    true
}

fn float_scalar(ty: Scalar) -> bool {
    ty.is_float()
}

fn uchar(ty: Scalar) -> bool {
    ty == Scalar::U8
}

const POSITION_AND_COLOR: [Wanted; 6] = [
    Wanted { name: "x", accept: any_scalar, expected: "numeric" },
    Wanted { name: "y", accept: any_scalar, expected: "numeric" },
    Wanted { name: "z", accept: any_scalar, expected: "numeric" },
    Wanted { name: "red", accept: uchar, expected: "uchar" },
    Wanted { name: "green", accept: uchar, expected: "uchar" },
    Wanted { name: "blue", accept: uchar, expected: "uchar" },
];

/// Reads the vertex positions and colors of a dense cloud.
pub fn parse_ply(bytes: &[u8]) -> Result<DenseCloud, PlyError> {
    let table = read_vertex_table(bytes, &POSITION_AND_COLOR)?;
    let points = table
        .chunks_exact(6)
        .map(|r| DensePoint {
            position: Vec3::new(r[0], r[1], r[2]),
            color: [r[3] as u8, r[4] as u8, r[5] as u8],
        })
        .collect();
    Ok(DenseCloud {
        points,
        visibility: None,
    })
}

/// Writes a dense cloud with double-precision positions and optional normals.
pub fn write_dense_ply(cloud: &DenseCloud, normals: Option<&[Vec3]>, mode: PlyMode) -> Vec<u8> {
    if let Some(n) = normals {
        assert_eq!(n.len(), cloud.points.len(), "one normal per point");
    }
    let mut header = ply_header(mode, cloud.points.len());
    header.push_str("property double x\nproperty double y\nproperty double z\n");
    if normals.is_some() {
        header.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n");
    let mut out = header.into_bytes();
    for (i, p) in cloud.points.iter().enumerate() {
        let normal = normals.map(|n| n[i].cast::<f32>());
        match mode {
            PlyMode::Binary => {
                for v in p.position.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                if let Some(n) = normal {
                    for v in n.iter() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                out.extend_from_slice(&p.color);
            }
            PlyMode::Ascii => {
                let mut line = String::new();
                let q = p.position;
                let _ = write!(line, "{:?} {:?} {:?}", q.x, q.y, q.z);
                if let Some(n) = normal {
                    let _ = write!(line, " {:?} {:?} {:?}", n.x, n.y, n.z);
                }
                let _ = writeln!(line, " {} {} {}", p.color[0], p.color[1], p.color[2]);
                out.extend_from_slice(line.as_bytes());
            }
        }
    }
    out
}

fn ply_header(mode: PlyMode, count: usize) -> String {
    let format = match mode {
        PlyMode::Ascii => "ascii",
        PlyMode::Binary => "binary_little_endian",
    };
    format!("ply\nformat {format} 1.0\nelement vertex {count}\n")
}

/// One vertex of a fused PLY, at file precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedVertex {
    pub position: [f32; 3],
    pub color: [u8; 3],
    pub thermal: f32,
    pub thermal_valid: bool,
}

impl From<&FusedPoint> for FusedVertex {
    fn from(p: &FusedPoint) -> Self {
        let valid = p.thermal_valid;
        Self {
            position: [p.position.x as f32, p.position.y as f32, p.position.z as f32],
            color: p.color,
            thermal: if valid { p.thermal as f32 } else { 0.0 },
            thermal_valid: valid,
        }
    }
}

pub fn write_fused_ply(points: &[FusedPoint], mode: PlyMode) -> Vec<u8> {
    let mut header = ply_header(mode, points.len());
    header.push_str(
        "property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\n\
         property float thermal\nproperty uchar thermal_valid\nend_header\n",
    );
    let mut out = header.into_bytes();
    let mut line = String::new();
    for p in points {
        let v = FusedVertex::from(p);
        match mode {
            PlyMode::Binary => {
                for c in v.position {
                    out.extend_from_slice(&c.to_le_bytes());
                }
                out.extend_from_slice(&v.color);
                out.extend_from_slice(&v.thermal.to_le_bytes());
                out.push(v.thermal_valid as u8);
            }
            PlyMode::Ascii => {
                line.clear();
                let [x, y, z] = v.position;
                let [r, g, b] = v.color;
                let _ = writeln!(
                    line,
                    "{x:?} {y:?} {z:?} {r} {g} {b} {:?} {}",
                    v.thermal, v.thermal_valid as u8
                );
                out.extend_from_slice(line.as_bytes());
            }
        }
    }
    out
}

pub fn parse_fused_ply(bytes: &[u8]) -> Result<Vec<FusedVertex>, PlyError> {
    const WANTED: [Wanted; 8] = [
        Wanted { name: "x", accept: float_scalar, expected: "float" },
        Wanted { name: "y", accept: float_scalar, expected: "float" },
        Wanted { name: "z", accept: float_scalar, expected: "float" },
        Wanted { name: "red", accept: uchar, expected: "uchar" },
        Wanted { name: "green", accept: uchar, expected: "uchar" },
        Wanted { name: "blue", accept: uchar, expected: "uchar" },
        Wanted { name: "thermal", accept: float_scalar, expected: "float" },
        Wanted { name: "thermal_valid", accept: uchar, expected: "uchar" },
    ];
    read_vertex_table(bytes, &WANTED)?
        .chunks_exact(8)
        .map(|r| {
            let thermal_valid = match r[7] {
                0.0 => false,
                1.0 => true,
                other => {
                    return Err(PlyError::InvalidValue(format!("thermal_valid = {other}")))
                }
            };
            Ok(FusedVertex {
                position: [r[0] as f32, r[1] as f32, r[2] as f32],
                color: [r[3] as u8, r[4] as u8, r[5] as u8],
                thermal: r[6] as f32,
                thermal_valid,
            })
        })
        .collect()
}
