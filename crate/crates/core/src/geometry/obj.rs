//! Wavefront OBJ text output and a minimal reader for it.

use std::fmt::Write as _;
use std::path::Path;

use super::TriMesh;
use crate::error::{Error, Result};

/// Header comment, `v` lines with 9 significant digits, then 1-based `f` lines.
pub fn obj_string(mesh: &TriMesh) -> String {
    let mut out = format!("# ocsdf mesh: {} vertices, {} faces\n", mesh.vertices.len(), mesh.faces.len());
    for v in &mesh.vertices {
        writeln!(out, "v {:.8e} {:.8e} {:.8e}", v[0], v[1], v[2]).expect("string write");
    }
    for f in &mesh.faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).expect("string write");
    }
    out
}

pub fn export_obj(mesh: &TriMesh, path: &Path) -> Result<()> {
    mesh.validate()?;
    std::fs::write(path, obj_string(mesh))?;
    Ok(())
}

/// Reads `v` and triangular `f` lines; other records are ignored.
pub fn parse_obj(text: &str) -> Result<TriMesh> {
    let mut mesh = TriMesh::default();
    for (n, line) in text.lines().enumerate() {
        let row = n + 1;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let c: Vec<f64> = parts
                    .map(|p| p.parse::<f64>().map_err(|e| Error::Parse { row, msg: e.to_string() }))
                    .collect::<Result<_>>()?;
                if c.len() < 3 {
                    return Err(Error::Parse { row, msg: "vertex needs 3 coordinates".into() });
                }
                mesh.vertices.push([c[0], c[1], c[2]]);
            }
            Some("f") => {
                let idx: Vec<usize> = parts
                    .map(|p| {
                        let first = p.split('/').next().unwrap_or(p);
                        match first.parse::<usize>() {
                            Ok(i) if i >= 1 => Ok(i - 1),
                            _ => Err(Error::Parse { row, msg: format!("bad face index '{p}'") }),
                        }
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(Error::Parse { row, msg: "only triangles are supported".into() });
                }
                mesh.faces.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    mesh.validate()?;
    Ok(mesh)
}
