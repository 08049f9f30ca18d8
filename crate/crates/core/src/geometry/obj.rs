//! Minimal Wavefront OBJ support: `v` and `f` records only.

use super::{GeometryError, Mesh, Result};
use glam::DVec3;
use std::fmt::Write as _;
use std::path::Path;

fn obj_err(line: usize, message: impl Into<String>) -> GeometryError {
    GeometryError::Obj {
        line,
        message: message.into(),
    }
}

/// Parses OBJ text. Faces with more than three corners are fan-triangulated;
/// negative indices count back from the latest vertex.
pub fn parse_obj(text: &str) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut fields = line.split_whitespace();
        match fields.next() {
            Some("v") => {
                let coords: Vec<f64> = fields
                    .take(3)
                    .map(|f| f.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| obj_err(line_no, format!("bad vertex coordinate: {e}")))?;
                if coords.len() != 3 {
                    return Err(obj_err(line_no, "vertex needs three coordinates"));
                }
                vertices.push(DVec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let corners = fields
                    .map(|f| resolve_index(f, vertices.len(), line_no))
                    .collect::<Result<Vec<usize>>>()?;
                if corners.len() < 3 {
                    return Err(obj_err(line_no, "face needs at least three vertices"));
                }
                for k in 1..corners.len() - 1 {
                    faces.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Mesh::new(vertices, faces)
}

fn resolve_index(field: &str, count: usize, line: usize) -> Result<usize> {
    let head = field.split('/').next().unwrap_or("");
    let idx: i64 = head
        .parse()
        .map_err(|_| obj_err(line, format!("bad face index `{field}`")))?;
    let resolved = match idx {
        0 => return Err(obj_err(line, "face index 0 is invalid")),
        i if i > 0 => i - 1,
        i => count as i64 + i,
    };
    if resolved < 0 || resolved >= count as i64 {
        return Err(obj_err(
            line,
            format!("face index {idx} out of range for {count} vertices"),
        ));
    }
    Ok(resolved as usize)
}

pub fn read_obj(path: impl AsRef<Path>) -> Result<Mesh> {
    parse_obj(&std::fs::read_to_string(path)?)
}

pub fn write_obj(mesh: &Mesh) -> String {
    let mut out = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}
