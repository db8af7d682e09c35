//! ASCII PLY and XYZ readers/writers.
//!
//! Coordinates are written with Rust's shortest round-trip float formatting,
//! so `read(write(c)) == c` bit-for-bit and a second write reproduces the
//! first byte-for-byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::cloud::{Frame, Point3, PointCloud};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    PlyAscii,
    Xyz,
}

impl CloudFormat {
    /// Guess the format from a file extension (`.ply`, `.xyz`, `.txt`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ply" => Some(CloudFormat::PlyAscii),
            "xyz" | "txt" => Some(CloudFormat::Xyz),
            _ => None,
        }
    }
}

pub fn read_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        CloudFormat::PlyAscii => parse_ply(&text, path),
        CloudFormat::Xyz => parse_xyz(&text, path),
    }
}

/// Reads a cloud, picking the format from the extension.
pub fn read_cloud_auto(path: &Path) -> Result<PointCloud> {
    let format = CloudFormat::from_path(path).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: "unknown cloud file extension (expected .ply or .xyz)".into(),
    })?;
    read_cloud(path, format)
}

pub fn write_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    let text = match format {
        CloudFormat::PlyAscii => format_ply(cloud),
        CloudFormat::Xyz => format_xyz(cloud),
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_cloud_auto(cloud: &PointCloud, path: &Path) -> Result<()> {
    let format = CloudFormat::from_path(path).unwrap_or(CloudFormat::PlyAscii);
    write_cloud(cloud, path, format)
}

pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 48);
    let _ = writeln!(out, "# frame: {}", cloud.frame().as_str());
    for p in cloud.points() {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    out
}

pub fn format_ply(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 48 + 128);
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "comment frame {}", cloud.frame().as_str());
    let _ = writeln!(out, "element vertex {}", cloud.len());
    out.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
    for p in cloud.points() {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    out
}

fn frame_from_comment(body: &str) -> Option<Frame> {
    match body.trim() {
        "camera" => Some(Frame::Camera),
        "turbine-axis" => Some(Frame::TurbineAxis),
        _ => None,
    }
}

pub fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut frame = Frame::Camera;
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let (data, comment) = match raw.find('#') {
            Some(pos) => (&raw[..pos], Some(&raw[pos + 1..])),
            None => (raw, None),
        };
        if let Some(f) = comment
            .and_then(|c| c.trim().strip_prefix("frame:"))
            .and_then(frame_from_comment)
        {
            frame = f;
        }
        let tokens: Vec<&str> = data.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() < 3 {
            return Err(err(line_no, format!("expected `x y z`, found {} value(s)", tokens.len())));
        }
        let mut xyz = [0.0; 3];
        for (slot, tok) in xyz.iter_mut().zip(&tokens) {
            *slot = parse_float(tok).ok_or_else(|| err(line_no, format!("invalid number `{tok}`")))?;
        }
        points.push(Point3::new(xyz[0], xyz[1], xyz[2]));
    }
    PointCloud::new(points, frame).map_err(|e| match e {
        Error::NonFinite { index } => err(0, format!("non-finite coordinate in point {index}")),
        other => other,
    })
}

fn parse_float(tok: &str) -> Option<f64> {
    tok.parse::<f64>().ok().filter(|v| v.is_finite())
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<PlyProperty>,
    line: usize,
}

struct PlyProperty {
    name: String,
    is_list: bool,
}

const PLY_SCALAR_TYPES: &[&str] = &[
    "char", "uchar", "short", "ushort", "int", "uint", "float", "double", "int8", "uint8", "int16",
    "uint16", "int32", "uint32", "float32", "float64",
];

pub fn parse_ply(text: &str, path: &Path) -> Result<PointCloud> {
    let path: PathBuf = path.to_path_buf();
    let err = |line: usize, message: String| Error::Parse {
        path: path.clone(),
        line,
        message,
    };

    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(err(1, "missing `ply` magic line".into())),
    }

    let mut elements: Vec<PlyElement> = Vec::new();
    let mut format_seen = false;
    let mut frame = Frame::Camera;
    let mut header_done = false;
    let mut last_line = 1;
    for (line_no, raw) in lines.by_ref() {
        last_line = line_no;
        let mut tok = raw.split_whitespace();
        match tok.next() {
            None => continue,
            Some("format") => {
                let kind = tok.next().unwrap_or("");
                if kind != "ascii" {
                    return Err(err(line_no, format!("unsupported PLY format `{kind}` (only ascii)")));
                }
                format_seen = true;
            }
            Some("comment") => {
                let rest: Vec<&str> = tok.collect();
                if rest.first() == Some(&"frame") {
                    if let Some(f) = rest.get(1).and_then(|s| frame_from_comment(s)) {
                        frame = f;
                    }
                }
            }
            Some("obj_info") => {}
            Some("element") => {
                let name = tok.next().ok_or_else(|| err(line_no, "element without a name".into()))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| err(line_no, format!("element `{name}` has no valid count")))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                    line: line_no,
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| err(line_no, "property before any element".into()))?;
                let first = tok.next().unwrap_or("");
                let (is_list, name) = if first == "list" {
                    let count_ty = tok.next().unwrap_or("");
                    let item_ty = tok.next().unwrap_or("");
                    if !PLY_SCALAR_TYPES.contains(&count_ty) || !PLY_SCALAR_TYPES.contains(&item_ty) {
                        return Err(err(line_no, format!("unsupported list types `{count_ty} {item_ty}`")));
                    }
                    (true, tok.next())
                } else {
                    if !PLY_SCALAR_TYPES.contains(&first) {
                        return Err(err(line_no, format!("unsupported property type `{first}`")));
                    }
                    (false, tok.next())
                };
                let name = name.ok_or_else(|| err(line_no, "property without a name".into()))?;
                element.properties.push(PlyProperty {
                    name: name.to_string(),
                    is_list,
                });
            }
            Some("end_header") => {
                header_done = true;
                break;
            }
            Some(other) => return Err(err(line_no, format!("unexpected header keyword `{other}`"))),
        }
    }

    let vertex_pos = elements.iter().position(|e| e.name == "vertex");
    if !header_done {
        let missing = if !format_seen {
            "`format ascii 1.0` line"
        } else if vertex_pos.is_none() {
            "`element vertex`"
        } else {
            "`end_header`"
        };
        return Err(err(last_line, format!("truncated header: missing {missing}")));
    }
    if !format_seen {
        return Err(err(last_line, "header has no `format` line".into()));
    }
    let vertex_pos = vertex_pos.ok_or_else(|| err(last_line, "header is missing `element vertex`".into()))?;
    let vertex = &elements[vertex_pos];
    if let Some(p) = vertex.properties.iter().find(|p| p.is_list) {
        return Err(err(
            vertex.line,
            format!("unsupported list property `{}` on element vertex", p.name),
        ));
    }
    let index_of = |axis: &str| {
        vertex
            .properties
            .iter()
            .position(|p| p.name == axis)
            .ok_or_else(|| err(vertex.line, format!("element vertex is missing property `{axis}`")))
    };
    let (ix, iy, iz) = (index_of("x")?, index_of("y")?, index_of("z")?);

    let mut body = lines.filter(|(_, l)| !l.trim().is_empty());
    for e in &elements[..vertex_pos] {
        for _ in 0..e.count {
            if body.next().is_none() {
                return Err(err(last_line, format!("file ends inside element `{}`", e.name)));
            }
        }
    }
    let mut points = Vec::with_capacity(vertex.count);
    for k in 0..vertex.count {
        let (line_no, raw) = body.next().ok_or_else(|| {
            err(
                last_line,
                format!("expected {} vertices, file ends after {k}", vertex.count),
            )
        })?;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.len() != vertex.properties.len() {
            return Err(err(
                line_no,
                format!(
                    "vertex has {} values, header declares {}",
                    tokens.len(),
                    vertex.properties.len()
                ),
            ));
        }
        let get = |i: usize| {
            parse_float(tokens[i]).ok_or_else(|| err(line_no, format!("invalid number `{}`", tokens[i])))
        };
        points.push(Point3::new(get(ix)?, get(iy)?, get(iz)?));
    }
    PointCloud::new(points, frame)
}
