//! ASCII PLY and CSV point-cloud readers and writers.
//!
//! PLY support covers `element vertex` with `x,y,z` and optional
//! `nx,ny,nz` properties; other elements are tolerated and skipped.
//! CSV is one `x,y,z` row per point, `.` decimal separator, with an
//! optional header line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Point3, Vector3};

use super::PointCloud;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloudFormat {
    PlyAscii,
    Csv,
}

/// Load a cloud in the given format.
pub fn load(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        CloudFormat::PlyAscii => parse_ply(path, &text),
        CloudFormat::Csv => parse_csv(path, &text),
    }
}

/// Load picking the format from the file extension (`.ply` or `.csv`).
pub fn load_auto(path: &Path) -> Result<PointCloud> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => load(path, CloudFormat::PlyAscii),
        Some("csv") | Some("txt") => load(path, CloudFormat::Csv),
        other => Err(Error::InvalidArgument(format!(
            "cannot infer cloud format from extension {other:?}"
        ))),
    }
}

/// Write a cloud in the given format. Floats are printed with the shortest
/// representation that round-trips, so save/load is lossless.
pub fn save(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    let text = match format {
        CloudFormat::PlyAscii => format_ply(cloud),
        CloudFormat::Csv => format_csv(cloud),
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn format_ply(cloud: &PointCloud) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", cloud.len());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    let has_normals = cloud.normals().is_some();
    if has_normals {
        out.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    out.push_str("end_header\n");
    for (i, p) in cloud.points().iter().enumerate() {
        let _ = write!(out, "{} {} {}", p.x, p.y, p.z);
        if let Some(normals) = cloud.normals() {
            let n = normals[i];
            let _ = write!(out, " {} {} {}", n.x, n.y, n.z);
        }
        out.push('\n');
    }
    out
}

fn format_csv(cloud: &PointCloud) -> String {
    let mut out = String::new();
    for p in cloud.points() {
        let _ = writeln!(out, "{},{},{}", p.x, p.y, p.z);
    }
    out
}

struct PlyHeader {
    vertex_count: usize,
    /// Column indices of x,y,z among the vertex properties.
    xyz: [usize; 3],
    /// Column indices of nx,ny,nz when all three are present.
    normal: Option<[usize; 3]>,
    property_count: usize,
    /// True when the vertex element comes first in the body.
    vertex_first: bool,
}

fn parse_ply(path: &Path, text: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate();

    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::malformed(path, 1, "empty file"))?;
    if first.trim() != "ply" {
        return Err(Error::malformed(path, 1, "missing ply magic"));
    }

    let mut vertex_count: Option<usize> = None;
    let mut properties: Vec<String> = Vec::new();
    let mut in_vertex_element = false;
    let mut seen_any_element = false;
    let mut vertex_first = false;
    let mut header_end = 0usize;

    for (idx, raw) in lines.by_ref() {
        let line = raw.trim();
        let lineno = idx + 1;
        if line == "end_header" {
            header_end = lineno;
            break;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("format") => {
                if parts.next() != Some("ascii") {
                    return Err(Error::malformed(path, lineno, "only ascii format supported"));
                }
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = parts
                    .next()
                    .ok_or_else(|| Error::malformed(path, lineno, "element without name"))?;
                if name == "vertex" {
                    let count: usize = parts
                        .next()
                        .and_then(|c| c.parse().ok())
                        .ok_or_else(|| Error::malformed(path, lineno, "bad vertex count"))?;
                    vertex_count = Some(count);
                    in_vertex_element = true;
                    vertex_first = !seen_any_element;
                } else {
                    in_vertex_element = false;
                }
                seen_any_element = true;
            }
            Some("property") => {
                if in_vertex_element {
                    let name = parts.last().ok_or_else(|| {
                        Error::malformed(path, lineno, "property without name")
                    })?;
                    properties.push(name.to_string());
                }
            }
            Some(other) => {
                return Err(Error::malformed(
                    path,
                    lineno,
                    format!("unexpected header keyword {other:?}"),
                ));
            }
        }
    }
    if header_end == 0 {
        return Err(Error::malformed(path, text.lines().count(), "missing end_header"));
    }
    let vertex_count =
        vertex_count.ok_or_else(|| Error::malformed(path, header_end, "no vertex element"))?;
    if vertex_count == 0 {
        return Err(Error::EmptyCloud);
    }
    if !vertex_first {
        return Err(Error::malformed(
            path,
            header_end,
            "vertex element must come first in the body",
        ));
    }

    let col = |name: &str| properties.iter().position(|p| p == name);
    let xyz = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => [x, y, z],
        _ => return Err(Error::malformed(path, header_end, "vertex needs x,y,z properties")),
    };
    let normal = match (col("nx"), col("ny"), col("nz")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => None,
    };
    let header = PlyHeader {
        vertex_count,
        xyz,
        normal,
        property_count: properties.len(),
        vertex_first,
    };
    debug_assert!(header.vertex_first);

    let mut points = Vec::with_capacity(header.vertex_count);
    let mut normals = header.normal.map(|_| Vec::with_capacity(header.vertex_count));
    for (idx, raw) in lines.take(header.vertex_count) {
        let lineno = idx + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.len() < header.property_count {
            return Err(Error::malformed(
                path,
                lineno,
                format!(
                    "expected {} fields, got {}",
                    header.property_count,
                    fields.len()
                ),
            ));
        }
        let get = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|_| Error::malformed(path, lineno, format!("bad number {:?}", fields[i])))
        };
        points.push(Point3::new(
            get(header.xyz[0])?,
            get(header.xyz[1])?,
            get(header.xyz[2])?,
        ));
        if let (Some(cols), Some(list)) = (header.normal, normals.as_mut()) {
            list.push(Vector3::new(get(cols[0])?, get(cols[1])?, get(cols[2])?));
        }
    }
    if points.len() != header.vertex_count {
        return Err(Error::malformed(
            path,
            text.lines().count(),
            format!("expected {} vertices, got {}", header.vertex_count, points.len()),
        ));
    }
    match normals {
        Some(ns) => PointCloud::with_normals(points, ns),
        None => PointCloud::new(points),
    }
}

fn parse_csv(path: &Path, text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::malformed(
                path,
                lineno,
                format!("expected 3 comma-separated values, got {}", fields.len()),
            ));
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(v) => points.push(Point3::new(v[0], v[1], v[2])),
            Err(_) if lineno == 1 => continue, // header line tolerated
            Err(_) => {
                return Err(Error::malformed(path, lineno, format!("bad row {line:?}")));
            }
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    PointCloud::new(points)
}
