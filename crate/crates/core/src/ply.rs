//! Minimal PLY reader/writer for vertex positions.
//!
//! Reads ASCII and binary little-endian files. Only the `vertex` element's
//! `x`, `y`, `z` properties are kept; other elements and properties are
//! skipped. Writing emits `float` properties in ASCII (9 significant
//! digits) and the scalar's native width in binary.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

impl PlyFormat {
    fn header_tag(self) -> &'static str {
        match self {
            PlyFormat::Ascii => "ascii",
            PlyFormat::BinaryLittleEndian => "binary_little_endian",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarType {
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
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
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

    fn decode_le(self, b: &[u8]) -> f64 {
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

#[derive(Debug, Clone, PartialEq)]
pub enum PropertyKind {
    Scalar(ScalarType),
    List { count: ScalarType, item: ScalarType },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Property {
    pub name: String,
    pub kind: PropertyKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub name: String,
    pub count: usize,
    pub properties: Vec<Property>,
}

/// Parsed PLY header.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyDocument {
    pub format: PlyFormat,
    pub elements: Vec<Element>,
    /// Number of header lines, including `end_header`.
    pub header_lines: usize,
}

impl PlyDocument {
    pub fn vertex_count(&self) -> usize {
        self.vertex_element().map_or(0, |e| e.count)
    }

    fn vertex_element(&self) -> Option<&Element> {
        self.elements.iter().find(|e| e.name == "vertex")
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn read_header<R: BufRead>(reader: &mut R) -> Result<PlyDocument> {
    let mut line_no = 0;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut buf = String::new();
    loop {
        buf.clear();
        let n = reader
            .read_line(&mut buf)
            .map_err(|e| parse_err(line_no + 1, e.to_string()))?;
        line_no += 1;
        if n == 0 {
            return Err(parse_err(line_no, "unexpected end of file in header"));
        }
        let line = buf.trim();
        let mut tok = line.split_whitespace();
        let Some(keyword) = tok.next() else {
            continue;
        };
        if line_no == 1 {
            if keyword != "ply" {
                return Err(parse_err(1, "missing `ply` magic"));
            }
            continue;
        }
        match keyword {
            "format" => {
                let f = match tok.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    Some(other) => {
                        return Err(parse_err(line_no, format!("unsupported format `{other}`")))
                    }
                    None => return Err(parse_err(line_no, "missing format")),
                };
                format = Some(f);
            }
            "comment" | "obj_info" => {}
            "element" => {
                let name = tok
                    .next()
                    .ok_or_else(|| parse_err(line_no, "element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| parse_err(line_no, "element count is not an integer"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            "property" => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(line_no, "property before any element"))?;
                let ty = tok
                    .next()
                    .ok_or_else(|| parse_err(line_no, "property without type"))?;
                let kind = if ty == "list" {
                    let count = tok.next().and_then(ScalarType::parse);
                    let item = tok.next().and_then(ScalarType::parse);
                    match (count, item) {
                        (Some(count), Some(item)) => PropertyKind::List { count, item },
                        _ => return Err(parse_err(line_no, "bad list property types")),
                    }
                } else {
                    PropertyKind::Scalar(
                        ScalarType::parse(ty)
                            .ok_or_else(|| parse_err(line_no, format!("unknown type `{ty}`")))?,
                    )
                };
                let name = tok
                    .next()
                    .ok_or_else(|| parse_err(line_no, "property without name"))?;
                element.properties.push(Property {
                    name: name.to_string(),
                    kind,
                });
            }
            "end_header" => break,
            other => return Err(parse_err(line_no, format!("unknown keyword `{other}`"))),
        }
    }
    let format = format.ok_or_else(|| parse_err(line_no, "header has no format line"))?;
    let doc = PlyDocument {
        format,
        elements,
        header_lines: line_no,
    };
    let vertex = doc
        .vertex_element()
        .ok_or_else(|| parse_err(line_no, "no vertex element"))?;
    for axis in ["x", "y", "z"] {
        match vertex.properties.iter().find(|p| p.name == axis) {
            Some(Property {
                kind: PropertyKind::Scalar(_),
                ..
            }) => {}
            Some(_) => return Err(parse_err(line_no, format!("property `{axis}` is a list"))),
            None => return Err(parse_err(line_no, format!("vertex has no `{axis}` property"))),
        }
    }
    Ok(doc)
}

/// Column of each of x, y, z within the vertex properties.
fn xyz_columns(vertex: &Element) -> [usize; 3] {
    let col = |n: &str| vertex.properties.iter().position(|p| p.name == n).unwrap();
    [col("x"), col("y"), col("z")]
}

/// Parses a PLY stream into its header and vertex positions.
pub fn parse_ply<T: Real, R: BufRead>(mut reader: R) -> Result<(PlyDocument, PointCloud<T>)> {
    let doc = read_header(&mut reader)?;
    let coords = match doc.format {
        PlyFormat::Ascii => read_ascii_body(&doc, &mut reader)?,
        PlyFormat::BinaryLittleEndian => read_binary_body(&doc, &mut reader)?,
    };
    let cloud = PointCloud::from_flat(3, coords.into_iter().map(T::of).collect())?;
    Ok((doc, cloud))
}

fn read_ascii_body<R: BufRead>(doc: &PlyDocument, reader: &mut R) -> Result<Vec<f64>> {
    let mut line_no = doc.header_lines;
    let mut buf = String::new();
    let mut coords = Vec::new();
    for element in &doc.elements {
        let is_vertex = element.name == "vertex";
        if !is_vertex {
            if coords.is_empty() {
                warn!("skipping PLY element `{}`", element.name);
            } else {
                // Everything needed is read; later elements are ignored.
                warn!("ignoring PLY elements after `vertex`");
                break;
            }
        }
        let cols = if is_vertex { Some(xyz_columns(element)) } else { None };
        let mut found = 0;
        while found < element.count {
            buf.clear();
            let n = reader
                .read_line(&mut buf)
                .map_err(|e| Error::io("<ply stream>", e))?;
            line_no += 1;
            if n == 0 {
                if is_vertex {
                    return Err(Error::Truncation {
                        declared: element.count,
                        found,
                    });
                }
                return Err(parse_err(line_no, format!("element `{}` truncated", element.name)));
            }
            let line = buf.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(cols) = cols {
                let values: Vec<&str> = line.split_whitespace().collect();
                for &c in &cols {
                    let v = values
                        .get(c)
                        .ok_or_else(|| parse_err(line_no, "vertex record has too few values"))?;
                    let v: f64 = v
                        .parse()
                        .map_err(|_| parse_err(line_no, format!("`{v}` is not a number")))?;
                    coords.push(v);
                }
            }
            found += 1;
        }
        if is_vertex {
            break;
        }
    }
    Ok(coords)
}

fn read_exact_or<R: Read>(reader: &mut R, buf: &mut [u8]) -> std::io::Result<bool> {
    match reader.read_exact(buf) {
        Ok(()) => Ok(true),
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Ok(false),
        Err(e) => Err(e),
    }
}

fn read_binary_body<R: BufRead>(doc: &PlyDocument, reader: &mut R) -> Result<Vec<f64>> {
    let mut coords = Vec::new();
    let mut scratch = [0u8; 8];
    for element in &doc.elements {
        let is_vertex = element.name == "vertex";
        if !is_vertex {
            warn!("skipping PLY element `{}`", element.name);
        }
        let cols = if is_vertex { Some(xyz_columns(element)) } else { None };
        let mut record = [0.0f64; 3];
        for found in 0..element.count {
            for (pi, prop) in element.properties.iter().enumerate() {
                let truncated = || Error::Truncation {
                    declared: element.count,
                    found,
                };
                let io = |e| Error::io("<ply stream>", e);
                match &prop.kind {
                    PropertyKind::Scalar(ty) => {
                        let b = &mut scratch[..ty.size()];
                        if !read_exact_or(reader, b).map_err(io)? {
                            return Err(truncated());
                        }
                        if let Some(cols) = cols {
                            if let Some(axis) = cols.iter().position(|&c| c == pi) {
                                record[axis] = ty.decode_le(b);
                            }
                        }
                    }
                    PropertyKind::List { count, item } => {
                        let b = &mut scratch[..count.size()];
                        if !read_exact_or(reader, b).map_err(io)? {
                            return Err(truncated());
                        }
                        let len = count.decode_le(b) as usize;
                        let mut skip = vec![0u8; len * item.size()];
                        if !read_exact_or(reader, &mut skip).map_err(io)? {
                            return Err(truncated());
                        }
                    }
                }
            }
            if is_vertex {
                coords.extend_from_slice(&record);
            }
        }
        if is_vertex {
            break;
        }
    }
    Ok(coords)
}

pub fn load_ply<T: Real>(path: impl AsRef<Path>) -> Result<PointCloud<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (_, mut cloud) = parse_ply::<T, _>(BufReader::new(file))?;
    if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
        cloud.set_label(Some(stem.to_string()));
    }
    Ok(cloud)
}

/// Serializes a 3D cloud as PLY.
pub fn write_ply_to<T: Real, W: Write>(cloud: &PointCloud<T>, mut out: W, format: PlyFormat) -> Result<()> {
    if cloud.dim() != 3 {
        return Err(Error::dim(3, cloud.dim()));
    }
    let io = |e| Error::io("<ply stream>", e);
    let ty = match format {
        PlyFormat::Ascii => "float",
        PlyFormat::BinaryLittleEndian => T::PLY_TYPE,
    };
    let mut header = format!("ply\nformat {} 1.0\nelement vertex {}\n", format.header_tag(), cloud.len());
    for axis in ["x", "y", "z"] {
        header.push_str(&format!("property {ty} {axis}\n"));
    }
    header.push_str("end_header\n");
    out.write_all(header.as_bytes()).map_err(io)?;
    match format {
        PlyFormat::Ascii => {
            for p in cloud.points() {
                writeln!(
                    out,
                    "{} {} {}",
                    sig9(p[0].as_f64()),
                    sig9(p[1].as_f64()),
                    sig9(p[2].as_f64())
                )
                .map_err(io)?;
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for &c in cloud.as_flat() {
                if T::PLY_TYPE == "float" {
                    out.write_all(&(c.as_f64() as f32).to_le_bytes()).map_err(io)?;
                } else {
                    out.write_all(&c.as_f64().to_le_bytes()).map_err(io)?;
                }
            }
        }
    }
    out.flush().map_err(io)
}

pub fn write_ply<T: Real>(cloud: &PointCloud<T>, path: impl AsRef<Path>, format: PlyFormat) -> Result<()> {
    let path = path.as_ref();
    if cloud.dim() != 3 {
        return Err(Error::dim(3, cloud.dim()));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_ply_to(cloud, BufWriter::new(file), format).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Nine significant digits, scientific notation.
fn sig9(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v:.8e}")
    }
}
