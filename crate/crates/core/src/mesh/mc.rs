//! Marching cubes with a case table derived at startup from face rules
//! instead of a transcribed 256-entry table.
//!
//! A corner is inside when its value is strictly above the iso level. On
//! each cube face the crossing points are paired so that diagonally
//! opposite inside corners stay separated; neighbouring cubes see the same
//! face the same way, which keeps the surface closed. The face segments
//! chain into directed loops that are then fanned into triangles.

use std::collections::HashMap;
use std::sync::OnceLock;

use super::{MeshError, TriMesh};

/// Corner `c` sits at offset `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

/// The 12 cube edges as (low corner, axis).
fn edges() -> [(usize, usize); 12] {
    let mut out = [(0, 0); 12];
    let mut n = 0;
    for axis in 0..3 {
        for c in 0..8 {
            if c & (1 << axis) == 0 {
                out[n] = (c, axis);
                n += 1;
            }
        }
    }
    out
}

fn edge_between(a: usize, b: usize) -> usize {
    let (lo, hi) = (a.min(b), a.max(b));
    let axis = (hi ^ lo).trailing_zeros() as usize;
    edges()
        .iter()
        .position(|&(c, ax)| c == lo && ax == axis)
        .expect("corners share an edge")
}

/// Face corner cycles, counter-clockwise seen from outside the cube.
fn faces() -> Vec<[usize; 4]> {
    let mut out = Vec::with_capacity(6);
    for axis in 0..3 {
        let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in 0..2 {
            let at = |u: usize, v: usize| (side << axis) | (u << b) | (v << c);
            let mut cycle = [at(0, 0), at(1, 0), at(1, 1), at(0, 1)];
            if side == 0 {
                cycle.reverse();
            }
            out.push(cycle);
        }
    }
    out
}

/// Triangles for one configuration. Slot values 0..12 are cube edges;
/// [`CENTROID`] stands for the mean of the loop's vertices.
#[derive(Debug, Clone, Default)]
pub(crate) struct CaseEntry {
    pub loops: Vec<Vec<u8>>,
    pub triangles: Vec<Vec<[u8; 3]>>,
}

pub(crate) const CENTROID: u8 = 12;

fn build_case(mask: u8, faces: &[[usize; 4]], flip: bool) -> CaseEntry {
    let inside = |c: usize| mask & (1 << c) != 0;
    // Directed segments: entry crossing -> following exit crossing.
    let mut next: HashMap<usize, usize> = HashMap::new();
    let mut edge_faces: HashMap<usize, Vec<usize>> = HashMap::new();
    for (fi, face) in faces.iter().enumerate() {
        let crossings: Vec<(usize, bool)> = (0..4)
            .filter_map(|i| {
                let (a, b) = (face[i], face[(i + 1) % 4]);
                (inside(a) != inside(b)).then(|| (edge_between(a, b), inside(b)))
            })
            .collect();
        for &(e, _) in &crossings {
            edge_faces.entry(e).or_default().push(fi);
        }
        for (i, &(e, entering)) in crossings.iter().enumerate() {
            if entering {
                let (exit, _) = crossings[(i + 1) % crossings.len()];
                next.insert(e, exit);
            }
        }
    }
    let mut loops = Vec::new();
    let mut starts: Vec<usize> = next.keys().copied().collect();
    starts.sort_unstable();
    let mut seen = [false; 12];
    for s in starts {
        if seen[s] {
            continue;
        }
        let mut cycle = Vec::new();
        let mut e = s;
        while !seen[e] {
            seen[e] = true;
            cycle.push(e as u8);
            e = next[&e];
        }
        if flip {
            cycle.reverse();
        }
        loops.push(cycle);
    }

    let triangles = loops
        .iter()
        .map(|cycle| {
            let n = cycle.len();
            let cofacial = |a: u8, b: u8| {
                edge_faces[&(a as usize)]
                    .iter()
                    .any(|f| edge_faces[&(b as usize)].contains(f))
            };
            // A fan root must not see any non-adjacent loop vertex on a
            // shared face, or a diagonal would lie in that face.
            let root = (0..n).find(|&r| {
                (2..n - 1).all(|d| !cofacial(cycle[r], cycle[(r + d) % n]))
            });
            match root {
                Some(r) => (1..n - 1)
                    .map(|i| [cycle[r], cycle[(r + i) % n], cycle[(r + i + 1) % n]])
                    .collect(),
                None => (0..n)
                    .map(|i| [CENTROID, cycle[i], cycle[(i + 1) % n]])
                    .collect(),
            }
        })
        .collect();
    CaseEntry { loops, triangles }
}

fn corner_point(c: usize) -> [f64; 3] {
    let o = corner_offset(c);
    [o[0] as f64, o[1] as f64, o[2] as f64]
}

fn edge_midpoint(e: usize) -> [f64; 3] {
    let (c, axis) = edges()[e];
    let mut p = corner_point(c);
    p[axis] += 0.5;
    p
}

/// Whether default loop direction yields normals pointing from inside to
/// outside; checked on the single-corner case.
fn needs_flip(faces: &[[usize; 4]]) -> bool {
    let entry = build_case(1, faces, false);
    let tri = entry.triangles[0][0];
    let [a, b, c] = tri.map(|e| edge_midpoint(e as usize));
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let n = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    // Corner 0 is the inside one; the normal must point away from it.
    n[0] + n[1] + n[2] < 0.0
}

pub(crate) fn case_table() -> &'static [CaseEntry] {
    static TABLE: OnceLock<Vec<CaseEntry>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let faces = faces();
        let flip = needs_flip(&faces);
        (0..=255u8).map(|m| build_case(m, &faces, flip)).collect()
    })
}

/// Scalar field on a grid, `index = x + nx * (y + ny * z)`.
pub struct Field<'a> {
    pub dims: [usize; 3],
    pub values: &'a [f32],
}

/// Isosurface of `field` at `iso` in voxel index coordinates.
pub fn marching_cubes(field: &Field<'_>, iso: f32, name: &str) -> Result<TriMesh, MeshError> {
    let [nx, ny, nz] = field.dims;
    if nx < 2 || ny < 2 || nz < 2 {
        return Err(MeshError::DegenerateDims(field.dims));
    }
    if field.values.len() != nx * ny * nz {
        return Err(MeshError::SizeMismatch {
            expected: nx * ny * nz,
            got: field.values.len(),
        });
    }
    if !iso.is_finite() {
        return Err(MeshError::NonFinite("iso"));
    }
    let table = case_table();
    let edge_list = edges();
    let at = |x: usize, y: usize, z: usize| field.values[x + nx * (y + ny * z)];

    let mut mesh = TriMesh::new(name);
    let mut vertex_of: HashMap<usize, u32> = HashMap::new();

    for z in 0..nz - 1 {
        for y in 0..ny - 1 {
            for x in 0..nx - 1 {
                let mut values = [0f32; 8];
                let mut config = 0u8;
                for (c, v) in values.iter_mut().enumerate() {
                    let o = corner_offset(c);
                    *v = at(x + o[0], y + o[1], z + o[2]);
                    if *v > iso {
                        config |= 1 << c;
                    }
                }
                if config == 0 || config == 255 {
                    continue;
                }
                let entry = &table[config as usize];
                for (cycle, tris) in entry.loops.iter().zip(&entry.triangles) {
                    let mut local = [u32::MAX; 13];
                    for &e in cycle {
                        let (c, axis) = edge_list[e as usize];
                        let o = corner_offset(c);
                        let (gx, gy, gz) = (x + o[0], y + o[1], z + o[2]);
                        let key = 3 * (gx + nx * (gy + ny * gz)) + axis;
                        local[e as usize] = *vertex_of.entry(key).or_insert_with(|| {
                            let f0 = values[c];
                            let f1 = values[c | (1 << axis)];
                            let t = ((iso - f0) as f64 / (f1 - f0) as f64).clamp(0.0, 1.0);
                            let mut p = [gx as f64, gy as f64, gz as f64];
                            p[axis] += t;
                            mesh.vertices.push(p);
                            (mesh.vertices.len() - 1) as u32
                        });
                    }
                    if tris.iter().any(|t| t.contains(&CENTROID)) {
                        let n = cycle.len() as f64;
                        let mut c = [0.0; 3];
                        for &e in cycle {
                            let p = mesh.vertices[local[e as usize] as usize];
                            for i in 0..3 {
                                c[i] += p[i] / n;
                            }
                        }
                        mesh.vertices.push(c);
                        local[CENTROID as usize] = (mesh.vertices.len() - 1) as u32;
                    }
                    for t in tris {
                        mesh.triangles.push(t.map(|s| local[s as usize]));
                    }
                }
            }
        }
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_shape() {
        let table = case_table();
        assert_eq!(table.len(), 256);
        assert!(table[0].loops.is_empty() && table[255].loops.is_empty());
        // One inside corner: a single triangle.
        for c in 0..8 {
            let e = &table[1 << c];
            assert_eq!(e.loops.len(), 1);
            assert_eq!(e.triangles[0].len(), 1);
        }
        // Diagonally opposite corners stay separate.
        assert_eq!(table[0b1000_0001].loops.len(), 2);
    }

    #[test]
    fn every_case_is_closed_within_the_cube() {
        // Each crossing edge appears in exactly one loop; loop edges are
        // exactly the edges whose endpoints differ.
        let edge_list = edges();
        for (m, entry) in case_table().iter().enumerate() {
            let mut used = [0u8; 12];
            for l in &entry.loops {
                assert!(l.len() >= 3, "case {m}");
                for &e in l {
                    used[e as usize] += 1;
                }
            }
            for (e, &(c, axis)) in edge_list.iter().enumerate() {
                let crosses = ((m >> c) & 1) != ((m >> (c | (1 << axis))) & 1);
                assert_eq!(used[e], crosses as u8, "case {m} edge {e}");
            }
        }
    }

    #[test]
    fn complement_cases_do_not_simply_mirror() {
        // Two face-diagonal inside corners form two loops; the complement
        // (six inside corners) joins the outside pair across the face.
        let table = case_table();
        let m = 0b0000_1001u8; // corners 0 and 3, diagonal on the z=0 face
        assert_eq!(table[m as usize].loops.len(), 2);
        assert_eq!(table[!m as usize].loops.len(), 1);
    }

    #[test]
    fn rejects_degenerate_dims() {
        let v = vec![0.0; 4];
        let f = Field { dims: [1, 2, 2], values: &v };
        assert!(matches!(marching_cubes(&f, 0.5, "x"), Err(MeshError::DegenerateDims(_))));
    }
}
