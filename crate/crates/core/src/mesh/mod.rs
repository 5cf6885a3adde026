//! Triangle surfaces from masks and thresholded intensities, scaled to
//! millimetres by voxel spacing, with Wavefront OBJ interchange.

mod mc;
pub mod obj;

use std::collections::HashMap;

use thiserror::Error;

use crate::mask::MaskVolume;
use crate::volume::Volume;

pub use mc::{marching_cubes, Field};

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("grid dims {0:?} need at least 2 samples per axis")]
    DegenerateDims([usize; 3]),
    #[error("field has {got} samples, expected {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("{0} must be finite")]
    NonFinite(&'static str),
    #[error("spacing must be positive and finite, got {0:?}")]
    InvalidSpacing([f64; 3]),
    #[error("triangle {triangle} references vertex {index} of {count}")]
    IndexOutOfRange { triangle: usize, index: u32, count: usize },
    #[error("triangle {0} repeats a vertex")]
    Degenerate(usize),
    #[error("vertex {0} is not finite")]
    NonFiniteVertex(usize),
    #[error("{0}")]
    Io(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub name: String,
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

/// Edge incidence summary of a triangle mesh.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeReport {
    pub edges: usize,
    /// Edges used by exactly one triangle.
    pub boundary: usize,
    /// Edges used by three or more triangles.
    pub non_manifold: usize,
    /// Directed edges used twice, i.e. neighbouring triangles with
    /// opposite winding.
    pub misoriented: usize,
}

impl EdgeReport {
    pub fn is_watertight(&self) -> bool {
        self.edges > 0 && self.boundary == 0 && self.non_manifold == 0
    }
}

impl TriMesh {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            vertices: Vec::new(),
            triangles: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        if let Some(i) = self.vertices.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(MeshError::NonFiniteVertex(i));
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            if let Some(&index) = tri.iter().find(|&&i| i as usize >= self.vertices.len()) {
                return Err(MeshError::IndexOutOfRange {
                    triangle: t,
                    index,
                    count: self.vertices.len(),
                });
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(MeshError::Degenerate(t));
            }
        }
        Ok(())
    }

    /// Divergence-theorem volume; positive for outward-facing triangles.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
                    + a[2] * (b[0] * c[1] - b[1] * c[0])
            })
            .sum::<f64>()
            / 6.0
    }

    pub fn bounding_box(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(mut lo, mut hi), v| {
            for i in 0..3 {
                lo[i] = lo[i].min(v[i]);
                hi[i] = hi[i].max(v[i]);
            }
            (lo, hi)
        }))
    }

    /// Multiplies each coordinate by the matching spacing.
    pub fn scaled(&self, spacing: [f64; 3]) -> Result<TriMesh, MeshError> {
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(MeshError::InvalidSpacing(spacing));
        }
        Ok(TriMesh {
            name: self.name.clone(),
            vertices: self
                .vertices
                .iter()
                .map(|v| [v[0] * spacing[0], v[1] * spacing[1], v[2] * spacing[2]])
                .collect(),
            triangles: self.triangles.clone(),
        })
    }

    pub fn edge_report(&self) -> EdgeReport {
        let mut undirected: HashMap<(u32, u32), u32> = HashMap::new();
        let mut directed: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for i in 0..3 {
                let (a, b) = (t[i], t[(i + 1) % 3]);
                *undirected.entry((a.min(b), a.max(b))).or_default() += 1;
                *directed.entry((a, b)).or_default() += 1;
            }
        }
        EdgeReport {
            edges: undirected.len(),
            boundary: undirected.values().filter(|&&n| n == 1).count(),
            non_manifold: undirected.values().filter(|&&n| n > 2).count(),
            misoriented: directed.values().filter(|&&n| n > 1).count(),
        }
    }

    /// Connected components over shared vertices, counting only vertices
    /// used by some triangle.
    pub fn component_count(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &i in t {
                used[i as usize] = true;
            }
            let r0 = find(&mut parent, t[0] as usize);
            for &i in &t[1..] {
                let r = find(&mut parent, i as usize);
                parent[r] = r0;
            }
        }
        (0..self.vertices.len())
            .filter(|&i| used[i] && find(&mut parent, i) == i)
            .count()
    }
}

fn spacing_f64(spacing: [f32; 3]) -> [f64; 3] {
    spacing.map(|s| s as f64)
}

/// Surface of a binary mask in millimetres. The mask is lifted to {0, 1}
/// and padded by one empty voxel per side before extraction at 0.5, so
/// regions touching the volume edge still close; coordinates keep voxel
/// (0, 0, 0) at the origin.
pub fn mask_mesh(mask: &MaskVolume, spacing: [f32; 3], name: &str) -> Result<TriMesh, MeshError> {
    let [nx, ny, nz] = mask.dims();
    let (px, py, pz) = (nx + 2, ny + 2, nz + 2);
    let mut field = vec![0f32; px * py * pz];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if mask.get(x, y, z) {
                    field[(x + 1) + px * ((y + 1) + py * (z + 1))] = 1.0;
                }
            }
        }
    }
    let mut mesh = marching_cubes(
        &Field {
            dims: [px, py, pz],
            values: &field,
        },
        0.5,
        name,
    )?;
    for v in &mut mesh.vertices {
        for c in v.iter_mut() {
            *c -= 1.0;
        }
    }
    mesh.scaled(spacing_f64(spacing))
}

/// Intensity isosurface in millimetres, named `context@<threshold>`.
pub fn context_surface(volume: &Volume, threshold: f32) -> Result<TriMesh, MeshError> {
    if !threshold.is_finite() {
        return Err(MeshError::NonFinite("threshold"));
    }
    let mesh = marching_cubes(
        &Field {
            dims: volume.dims(),
            values: volume.intensities(),
        },
        threshold,
        &format!("context@{threshold}"),
    )?;
    mesh.scaled(spacing_f64(volume.spacing()))
}
