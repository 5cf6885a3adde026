//! Wavefront OBJ subset: `o`, `v x y z` and triangular `f` records with
//! 1-based indices. Normals, texture coordinates and materials are skipped
//! on read and never written.

use std::fmt::Write as _;
use std::path::Path;

use super::{MeshError, TriMesh};

pub fn to_obj_string(mesh: &TriMesh) -> String {
    let mut out = String::with_capacity(32 * (mesh.vertices.len() + mesh.triangles.len()) + 16);
    if !mesh.name.is_empty() {
        let _ = writeln!(out, "o {}", mesh.name);
    }
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {:.6} {:.6} {:.6}", v[0], v[1], v[2]);
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out
}

pub fn write_obj(mesh: &TriMesh, path: &Path) -> Result<(), MeshError> {
    mesh.validate()?;
    std::fs::write(path, to_obj_string(mesh)).map_err(|e| MeshError::Io(format!("{}: {e}", path.display())))
}

fn parse_index(token: &str, count: usize, line: usize) -> Result<u32, MeshError> {
    let head = token.split('/').next().unwrap_or("");
    let raw: i64 = head.parse().map_err(|_| MeshError::Parse {
        line,
        message: format!("bad face index {token:?}"),
    })?;
    let idx = if raw > 0 {
        raw - 1
    } else if raw < 0 {
        count as i64 + raw
    } else {
        -1
    };
    if idx < 0 || idx as usize >= count {
        return Err(MeshError::Parse {
            line,
            message: format!("face index {raw} outside 1..={count}"),
        });
    }
    Ok(idx as u32)
}

pub fn parse_obj(text: &str) -> Result<TriMesh, MeshError> {
    let mut mesh = TriMesh::new("");
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("o") => mesh.name = parts.collect::<Vec<_>>().join(" "),
            Some("v") => {
                let coords: Vec<f64> = parts
                    .take(3)
                    .map(|p| p.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| MeshError::Parse {
                        line: line_no,
                        message: e.to_string(),
                    })?;
                if coords.len() != 3 {
                    return Err(MeshError::Parse {
                        line: line_no,
                        message: "vertex needs 3 coordinates".into(),
                    });
                }
                mesh.vertices.push([coords[0], coords[1], coords[2]]);
            }
            Some("f") => {
                let idx: Vec<u32> = parts
                    .map(|p| parse_index(p, mesh.vertices.len(), line_no))
                    .collect::<Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(MeshError::Parse {
                        line: line_no,
                        message: "face needs at least 3 vertices".into(),
                    });
                }
                for i in 1..idx.len() - 1 {
                    mesh.triangles.push([idx[0], idx[i], idx[i + 1]]);
                }
            }
            _ => {}
        }
    }
    mesh.validate()?;
    Ok(mesh)
}

pub fn read_obj(path: &Path) -> Result<TriMesh, MeshError> {
    let text = std::fs::read_to_string(path).map_err(|e| MeshError::Io(format!("{}: {e}", path.display())))?;
    parse_obj(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetra() -> TriMesh {
        TriMesh {
            name: "tet".into(),
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            triangles: vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        }
    }

    #[test]
    fn writes_expected_text() {
        let s = to_obj_string(&tetra());
        assert!(s.starts_with("o tet\nv 0.000000 0.000000 0.000000\n"));
        assert!(s.ends_with("f 2 3 4\n"));
        assert!(!s.contains('\r'));
    }

    #[test]
    fn round_trip_identity() {
        let m = tetra();
        assert_eq!(parse_obj(&to_obj_string(&m)).unwrap(), m);
        assert!((m.signed_volume() - 1.0 / 6.0).abs() < 1e-12);
        assert!(m.edge_report().is_watertight());
    }

    #[test]
    fn reads_slashes_negatives_and_quads() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\nf -4 -3 -2\n").unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3], [0, 1, 2]]);
    }

    #[test]
    fn rejects_bad_index() {
        assert!(matches!(parse_obj("v 0 0 0\nf 1 2 3\n"), Err(MeshError::Parse { line: 2, .. })));
    }
}
