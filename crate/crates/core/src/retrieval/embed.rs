use std::collections::HashMap;
use std::path::Path;

use crate::volume::SliceImage;

use super::{persist, EmbeddingVector, RetrievalError};

pub const GRID: usize = 16;
pub const HIST_BINS: usize = 32;
pub const BUILTIN_DIM: usize = GRID * GRID + HIST_BINS;

/// Maps a slice to a unit-norm vector.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, slice: &SliceImage) -> Result<EmbeddingVector, RetrievalError>;
}

/// Hand-crafted 288-dim descriptor: a 16×16 bilinear thumbnail of the
/// min-max normalised slice followed by a 32-bin mass-normalised histogram
/// of the same values. Constant slices map to the first basis vector.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinEmbedder;

impl EmbeddingProvider for BuiltinEmbedder {
    fn dimension(&self) -> usize {
        BUILTIN_DIM
    }

    fn embed(&self, slice: &SliceImage) -> Result<EmbeddingVector, RetrievalError> {
        embed_slice(slice)
    }
}

fn bilinear(norm: &[f64], w: usize, h: usize, sx: f64, sy: f64) -> f64 {
    let sx = sx.clamp(0.0, (w - 1) as f64);
    let sy = sy.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
    let at = |x: usize, y: usize| norm[y * w + x];
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

pub fn embed_slice(slice: &SliceImage) -> Result<EmbeddingVector, RetrievalError> {
    let (w, h) = slice.dims();
    if w == 0 || h == 0 {
        return Err(RetrievalError::EmptySlice);
    }
    let (lo, hi) = slice
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v as f64), hi.max(v as f64))
        });
    if !(hi > lo) {
        let mut v = vec![0.0; BUILTIN_DIM];
        v[0] = 1.0;
        return EmbeddingVector::new(v);
    }
    let norm: Vec<f64> = slice.values.iter().map(|&v| (v as f64 - lo) / (hi - lo)).collect();

    let mut out = Vec::with_capacity(BUILTIN_DIM);
    for gy in 0..GRID {
        for gx in 0..GRID {
            // Pixel-centre aligned sampling.
            let sx = (gx as f64 + 0.5) * w as f64 / GRID as f64 - 0.5;
            let sy = (gy as f64 + 0.5) * h as f64 / GRID as f64 - 0.5;
            out.push(bilinear(&norm, w, h, sx, sy));
        }
    }
    let mut hist = [0.0f64; HIST_BINS];
    for &t in &norm {
        let bin = ((t * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
        hist[bin] += 1.0;
    }
    let total = norm.len() as f64;
    out.extend(hist.iter().map(|c| c / total));

    let len = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    EmbeddingVector::new(out.iter().map(|v| (v / len) as f32).collect())
}

/// Vectors computed elsewhere, one per slice index of the live volume,
/// loaded from the packed index layout.
#[derive(Debug, Clone)]
pub struct PrecomputedEmbeddings {
    dimension: usize,
    by_slice: HashMap<usize, EmbeddingVector>,
}

impl PrecomputedEmbeddings {
    pub fn load(vectors: &Path, metadata: &Path, dimension: usize) -> Result<Self, RetrievalError> {
        let index = persist::ingest_packed(vectors, metadata, dimension)?;
        let by_slice = index
            .records()
            .iter()
            .map(|r| (r.slice_index, r.vector.clone()))
            .collect();
        Ok(Self { dimension, by_slice })
    }
}

impl EmbeddingProvider for PrecomputedEmbeddings {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, slice: &SliceImage) -> Result<EmbeddingVector, RetrievalError> {
        self.by_slice
            .get(&slice.slice_index)
            .cloned()
            .ok_or(RetrievalError::MissingEmbedding(slice.slice_index))
    }
}
