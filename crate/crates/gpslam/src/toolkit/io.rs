//! Point-cloud and trajectory file I/O.
//!
//! Clouds: plain ASCII `x y z` lists (one point per line, `#` comments) and
//! the common point-cloud-data format with header + ASCII or little-endian
//! binary body. Trajectories: `timestamp tx ty tz qx qy qz qw` per line.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, PoseSE3};

#[derive(Debug, Default)]
pub struct LoadedCloud {
    pub points: PointCloud,
    /// Records rejected for non-finite coordinates.
    pub skipped: usize,
    pub warnings: Vec<String>,
}

pub fn load_cloud(path: &Path) -> Result<LoadedCloud> {
    let is_pcd = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pcd"));
    let bytes = fs::read(path)?;
    if is_pcd {
        parse_pcd(&bytes)
    } else {
        parse_xyz(&bytes)
    }
}

pub fn save_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    let is_pcd = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pcd"));
    let mut out = Vec::new();
    if is_pcd {
        write_pcd_ascii(cloud, &mut out)?;
    } else {
        writeln!(out, "# x y z")?;
        for p in cloud {
            writeln!(out, "{} {} {}", p.x, p.y, p.z)?;
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn parse_xyz(bytes: &[u8]) -> Result<LoadedCloud> {
    let text = String::from_utf8_lossy(bytes);
    let mut out = LoadedCloud::default();
    let mut extra_cols_warned = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 3 {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("expected at least 3 coordinates, got {}", fields.len()),
            });
        }
        if fields.len() > 3 && !extra_cols_warned {
            out.warnings
                .push(format!("line {}: extra columns ignored", lineno + 1));
            extra_cols_warned = true;
        }
        let mut coords = [0.0f64; 3];
        for (k, f) in fields.iter().take(3).enumerate() {
            coords[k] = f.parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                msg: format!("invalid number {f:?}"),
            })?;
        }
        if coords.iter().any(|c| !c.is_finite()) {
            out.skipped += 1;
            continue;
        }
        out.points.push(Point3::new(coords[0], coords[1], coords[2]));
    }
    if out.points.is_empty() && out.skipped == 0 {
        out.warnings.push("empty cloud".into());
    }
    Ok(out)
}

struct PcdField {
    name: String,
    size: usize,
    ty: char,
    count: usize,
}

fn parse_pcd(bytes: &[u8]) -> Result<LoadedCloud> {
    let mut fields: Vec<PcdField> = Vec::new();
    let mut points_declared = 0usize;
    let mut data_format = String::new();
    let mut offset = 0usize; // byte offset where the body starts
    let mut lineno = 0usize;

    let mut cursor = 0usize;
    while cursor < bytes.len() {
        let end = bytes[cursor..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|k| cursor + k)
            .unwrap_or(bytes.len());
        let raw = &bytes[cursor..end];
        lineno += 1;
        let line = String::from_utf8_lossy(raw).trim().to_string();
        cursor = end + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        let parse_err = |msg: String| Error::Parse { line: lineno, msg };
        match tokens[0].as_str() {
            "VERSION" | "WIDTH" | "HEIGHT" | "VIEWPOINT" => {}
            "FIELDS" => {
                fields = tokens[1..]
                    .iter()
                    .map(|n| PcdField {
                        name: n.clone(),
                        size: 4,
                        ty: 'F',
                        count: 1,
                    })
                    .collect();
            }
            "SIZE" => {
                for (f, t) in fields.iter_mut().zip(&tokens[1..]) {
                    f.size = t
                        .parse()
                        .map_err(|_| parse_err(format!("bad SIZE {t:?}")))?;
                }
            }
            "TYPE" => {
                for (f, t) in fields.iter_mut().zip(&tokens[1..]) {
                    f.ty = t.chars().next().unwrap_or('F');
                }
            }
            "COUNT" => {
                for (f, t) in fields.iter_mut().zip(&tokens[1..]) {
                    f.count = t
                        .parse()
                        .map_err(|_| parse_err(format!("bad COUNT {t:?}")))?;
                }
            }
            "POINTS" => {
                points_declared = tokens
                    .get(1)
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| parse_err("bad POINTS".into()))?;
            }
            "DATA" => {
                data_format = tokens.get(1).cloned().unwrap_or_default();
                offset = cursor;
                break;
            }
            other => {
                return Err(parse_err(format!("unknown header entry {other:?}")));
            }
        }
    }

    if data_format.is_empty() {
        return Err(Error::Parse {
            line: lineno,
            msg: "missing DATA line".into(),
        });
    }
    let axis_of = |name: &str| match name {
        "x" => Some(0usize),
        "y" => Some(1),
        "z" => Some(2),
        _ => None,
    };
    if !["x", "y", "z"]
        .iter()
        .all(|n| fields.iter().any(|f| f.name == *n))
    {
        return Err(Error::Parse {
            line: lineno,
            msg: "FIELDS must include x, y and z".into(),
        });
    }

    let mut out = LoadedCloud::default();
    let ignored: Vec<&str> = fields
        .iter()
        .filter(|f| axis_of(&f.name).is_none())
        .map(|f| f.name.as_str())
        .collect();
    if !ignored.is_empty() {
        out.warnings
            .push(format!("ignoring unknown fields: {}", ignored.join(", ")));
    }

    match data_format.as_str() {
        "ascii" => {
            let body = String::from_utf8_lossy(&bytes[offset..]);
            let tokens_per_record: usize = fields.iter().map(|f| f.count).sum();
            for (k, line) in body.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                let toks: Vec<&str> = line.split_whitespace().collect();
                if toks.len() != tokens_per_record {
                    return Err(Error::Parse {
                        line: lineno + k + 1,
                        msg: format!(
                            "expected {tokens_per_record} values, got {}",
                            toks.len()
                        ),
                    });
                }
                let mut coords = [f64::NAN; 3];
                let mut tok_idx = 0usize;
                for f in &fields {
                    if let Some(axis) = axis_of(&f.name) {
                        coords[axis] = toks[tok_idx].parse().map_err(|_| Error::Parse {
                            line: lineno + k + 1,
                            msg: format!("invalid number {:?}", toks[tok_idx]),
                        })?;
                    }
                    tok_idx += f.count;
                }
                push_record(&mut out, coords);
            }
        }
        "binary" => {
            let stride: usize = fields.iter().map(|f| f.size * f.count).sum();
            let body = &bytes[offset..];
            for rec in 0..points_declared {
                let base = rec * stride;
                if base + stride > body.len() {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("binary body truncated at record {rec}"),
                    });
                }
                let mut coords = [f64::NAN; 3];
                let mut field_off = 0usize;
                for f in &fields {
                    if let Some(axis) = axis_of(&f.name) {
                        let sl = &body[base + field_off..];
                        coords[axis] = match (f.ty, f.size) {
                            ('F', 4) => {
                                f32::from_le_bytes(sl[..4].try_into().unwrap()) as f64
                            }
                            ('F', 8) => f64::from_le_bytes(sl[..8].try_into().unwrap()),
                            (ty, size) => {
                                return Err(Error::Parse {
                                    line: lineno,
                                    msg: format!(
                                        "unsupported coordinate type {ty}{size} for {}",
                                        f.name
                                    ),
                                })
                            }
                        };
                    }
                    field_off += f.size * f.count;
                }
                push_record(&mut out, coords);
            }
        }
        other => {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("unsupported DATA format {other:?}"),
            });
        }
    }
    if out.points.is_empty() && out.skipped == 0 {
        out.warnings.push("empty cloud".into());
    }
    Ok(out)
}

fn push_record(out: &mut LoadedCloud, coords: [f64; 3]) {
    if coords.iter().any(|c| !c.is_finite()) {
        out.skipped += 1;
    } else {
        out.points.push(Point3::new(coords[0], coords[1], coords[2]));
    }
}

fn write_pcd_ascii<W: Write>(cloud: &PointCloud, w: &mut W) -> Result<()> {
    writeln!(w, "# .PCD v0.7 - Point Cloud Data file format")?;
    writeln!(w, "VERSION 0.7")?;
    writeln!(w, "FIELDS x y z")?;
    writeln!(w, "SIZE 4 4 4")?;
    writeln!(w, "TYPE F F F")?;
    writeln!(w, "COUNT 1 1 1")?;
    writeln!(w, "WIDTH {}", cloud.len())?;
    writeln!(w, "HEIGHT 1")?;
    writeln!(w, "VIEWPOINT 0 0 0 1 0 0 0")?;
    writeln!(w, "POINTS {}", cloud.len())?;
    writeln!(w, "DATA ascii")?;
    for p in cloud {
        writeln!(w, "{} {} {}", p.x as f32, p.y as f32, p.z as f32)?;
    }
    Ok(())
}

/// One pose per line: `timestamp tx ty tz qx qy qz qw`.
pub fn save_trajectory(path: &Path, trajectory: &[(f64, PoseSE3)]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "# timestamp tx ty tz qx qy qz qw")?;
    for (ts, pose) in trajectory {
        let t = pose.translation;
        let q = pose.rotation.quaternion();
        writeln!(
            out,
            "{ts:.6} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
            t.x, t.y, t.z, q.i, q.j, q.k, q.w
        )?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_trajectory(path: &Path) -> Result<Vec<(f64, PoseSE3)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: std::result::Result<Vec<f64>, _> =
            line.split_whitespace().map(str::parse).collect();
        let v = v.map_err(|_| Error::Parse {
            line: lineno + 1,
            msg: "invalid number in trajectory record".into(),
        })?;
        if v.len() != 8 {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("expected 8 fields, got {}", v.len()),
            });
        }
        let rot = UnitQuaternion::from_quaternion(Quaternion::new(v[7], v[4], v[5], v[6]));
        out.push((v[0], PoseSE3::new(rot, Vector3::new(v[1], v[2], v[3]))));
    }
    Ok(out)
}
