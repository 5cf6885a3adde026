//! Binary masks: per-slice and per-volume, plus the run-length wire encoding.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::SliceAxis;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MaskError {
    #[error("mask dimensions {got:?} do not match expected {expected:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("run-length counts cover {covered} pixels but the mask has {expected}")]
    RunLengthSize { covered: usize, expected: usize },
    #[error("slice index {index} out of range for extent {extent}")]
    SliceOutOfRange { index: usize, extent: usize },
}

/// A binary 2D mask in row-major order (`y * width + x`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl SliceMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, MaskError> {
        if bits.len() != width * height {
            return Err(MaskError::RunLengthSize {
                covered: bits.len(),
                expected: width * height,
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    /// Builds a mask from a predicate over `(x, y)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn check_same_dims(&self, other: &SliceMask) -> Result<(), MaskError> {
        if self.dims() != other.dims() {
            return Err(MaskError::DimensionMismatch {
                expected: self.dims(),
                got: other.dims(),
            });
        }
        Ok(())
    }

    pub fn union_with(&mut self, other: &SliceMask) {
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    pub fn to_rle(&self) -> RunLength {
        RunLength::encode(self.width, self.height, &self.bits)
    }

    pub fn from_rle(rle: &RunLength) -> Result<Self, MaskError> {
        let bits = rle.decode()?;
        Ok(Self {
            width: rle.width,
            height: rle.height,
            bits,
        })
    }
}

/// Run-length encoding over row-major order. `counts` alternate between runs
/// of unset and set pixels and always start with an unset run (possibly 0).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLength {
    pub width: usize,
    pub height: usize,
    pub counts: Vec<u32>,
}

impl RunLength {
    pub fn encode(width: usize, height: usize, bits: &[bool]) -> Self {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &b in bits {
            if b != current {
                counts.push(run);
                run = 0;
                current = b;
            }
            run += 1;
        }
        counts.push(run);
        Self {
            width,
            height,
            counts,
        }
    }

    pub fn decode(&self) -> Result<Vec<bool>, MaskError> {
        let expected = self.width * self.height;
        let covered: usize = self.counts.iter().map(|&c| c as usize).sum();
        if covered != expected {
            return Err(MaskError::RunLengthSize { covered, expected });
        }
        let mut bits = Vec::with_capacity(expected);
        for (i, &c) in self.counts.iter().enumerate() {
            bits.extend(std::iter::repeat(i % 2 == 1).take(c as usize));
        }
        Ok(bits)
    }
}

/// Binary labels aligned voxel-for-voxel with a [`crate::volume::Volume`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskVolume {
    dims: [usize; 3],
    bits: Vec<u8>,
    pub target_name: String,
}

impl MaskVolume {
    pub fn empty(dims: [usize; 3], target_name: impl Into<String>) -> Self {
        Self {
            dims,
            bits: vec![0; dims[0] * dims[1] * dims[2]],
            target_name: target_name.into(),
        }
    }

    /// Wraps raw labels; every value must be 0 or 1.
    pub fn from_labels(
        dims: [usize; 3],
        labels: Vec<u8>,
        target_name: impl Into<String>,
    ) -> Option<Self> {
        if labels.len() != dims[0] * dims[1] * dims[2] || labels.iter().any(|&v| v > 1) {
            return None;
        }
        Some(Self {
            dims,
            bits: labels,
            target_name: target_name.into(),
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn labels(&self) -> &[u8] {
        &self.bits
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[self.index(x, y, z)] == 1
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.index(x, y, z);
        self.bits[i] = value as u8;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&v| v == 1).count()
    }

    pub fn slice(&self, axis: SliceAxis, k: usize) -> Result<SliceMask, MaskError> {
        let extent = axis.extent(self.dims);
        if k >= extent {
            return Err(MaskError::SliceOutOfRange { index: k, extent });
        }
        let (w, h) = axis.plane_dims(self.dims);
        Ok(SliceMask::from_fn(w, h, |u, v| {
            let [x, y, z] = axis.to_voxel(u, v, k);
            self.get(x, y, z)
        }))
    }

    /// Overwrites plane `k` with `mask`.
    pub fn set_slice(&mut self, axis: SliceAxis, k: usize, mask: &SliceMask) -> Result<(), MaskError> {
        let extent = axis.extent(self.dims);
        if k >= extent {
            return Err(MaskError::SliceOutOfRange { index: k, extent });
        }
        let (w, h) = axis.plane_dims(self.dims);
        if mask.dims() != (w, h) {
            return Err(MaskError::DimensionMismatch {
                expected: (w, h),
                got: mask.dims(),
            });
        }
        for v in 0..h {
            for u in 0..w {
                let [x, y, z] = axis.to_voxel(u, v, k);
                self.set(x, y, z, mask.get(u, v));
            }
        }
        Ok(())
    }
}
