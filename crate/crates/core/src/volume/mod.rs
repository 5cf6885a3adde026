//! Volumetric images, slice extraction, display windowing, and persistence
//! of volumes and mask volumes.

pub mod nifti;
pub mod raw;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::MaskVolume;
use nifti::{NiftiData, NiftiImage};
use raw::{RawDtype, Sidecar};

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("cannot access {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("unsupported format: {0}")]
    Unsupported(String),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("header declares {expected} voxels but payload carries {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("invalid spacing {0:?}: every component must be positive and finite")]
    InvalidSpacing([f32; 3]),
    #[error("invalid dimensions {0:?}")]
    InvalidDims([usize; 3]),
    #[error("non-finite intensity at voxel {0}")]
    NonFinite(usize),
    #[error("invalid axis order: {0}")]
    InvalidAxisOrder(String),
    #[error("slice index {index} out of range for extent {extent}")]
    SliceOutOfRange { index: usize, extent: usize },
    #[error("invalid window: lo ({lo}) must be below hi ({hi})")]
    InvalidWindow { lo: f32, hi: f32 },
    #[error("corrupt payload: {0}")]
    Corrupt(String),
}

/// Anatomical direction of increasing index along one array axis,
/// named `<from><to>`: `SI` means index 0 is superior and indices grow
/// toward inferior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AxisCode {
    LR,
    RL,
    AP,
    PA,
    SI,
    IS,
}

impl AxisCode {
    fn anatomical_axis(self) -> u8 {
        match self {
            AxisCode::LR | AxisCode::RL => 0,
            AxisCode::AP | AxisCode::PA => 1,
            AxisCode::SI | AxisCode::IS => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisOrder(pub [AxisCode; 3]);

impl Default for AxisOrder {
    fn default() -> Self {
        AxisOrder([AxisCode::LR, AxisCode::AP, AxisCode::SI])
    }
}

impl AxisOrder {
    pub fn validate(&self) -> Result<(), VolumeError> {
        let mut seen = [false; 3];
        for code in self.0 {
            let a = code.anatomical_axis() as usize;
            if seen[a] {
                return Err(VolumeError::InvalidAxisOrder(format!(
                    "{:?} names an anatomical axis twice",
                    self.0
                )));
            }
            seen[a] = true;
        }
        Ok(())
    }

    /// The array axis running superior–inferior (the axial slicing axis).
    pub fn axial_axis(&self) -> SliceAxis {
        let i = self
            .0
            .iter()
            .position(|c| c.anatomical_axis() == 2)
            .expect("validated axis order names the SI axis");
        SliceAxis::from_index(i)
    }

    /// Index step that moves superiorly along `axis`: +1 only when the
    /// axis is declared inferior→superior, otherwise -1.
    pub fn superior_step(&self, axis: SliceAxis) -> i64 {
        if self.0[axis.index()] == AxisCode::IS {
            1
        } else {
            -1
        }
    }
}

/// An array axis of a volume, used as the slicing direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceAxis {
    X,
    Y,
    Z,
}

impl SliceAxis {
    pub fn from_index(i: usize) -> Self {
        match i {
            0 => SliceAxis::X,
            1 => SliceAxis::Y,
            _ => SliceAxis::Z,
        }
    }

    pub fn index(self) -> usize {
        match self {
            SliceAxis::X => 0,
            SliceAxis::Y => 1,
            SliceAxis::Z => 2,
        }
    }

    pub fn extent(self, dims: [usize; 3]) -> usize {
        dims[self.index()]
    }

    /// `(width, height)` of a plane perpendicular to this axis.
    pub fn plane_dims(self, dims: [usize; 3]) -> (usize, usize) {
        match self {
            SliceAxis::X => (dims[1], dims[2]),
            SliceAxis::Y => (dims[0], dims[2]),
            SliceAxis::Z => (dims[0], dims[1]),
        }
    }

    /// Maps plane pixel `(u, v)` on slice `k` to voxel `[x, y, z]`.
    pub fn to_voxel(self, u: usize, v: usize, k: usize) -> [usize; 3] {
        match self {
            SliceAxis::X => [k, u, v],
            SliceAxis::Y => [u, k, v],
            SliceAxis::Z => [u, v, k],
        }
    }
}

/// A 3D scalar image with physical voxel spacing in millimetres.
/// Voxel `(x, y, z)` lives at `x + nx * (y + ny * z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f32; 3],
    intensities: Vec<f32>,
    axis_order: AxisOrder,
    source_id: String,
}

impl Volume {
    pub fn new(
        dims: [usize; 3],
        spacing: [f32; 3],
        intensities: Vec<f32>,
        axis_order: AxisOrder,
        source_id: impl Into<String>,
    ) -> Result<Self, VolumeError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(VolumeError::InvalidDims(dims));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(VolumeError::InvalidSpacing(spacing));
        }
        let n = dims[0] * dims[1] * dims[2];
        if intensities.len() != n {
            return Err(VolumeError::SizeMismatch {
                expected: n,
                found: intensities.len(),
            });
        }
        if let Some(i) = intensities.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite(i));
        }
        axis_order.validate()?;
        Ok(Self {
            dims,
            spacing,
            intensities,
            axis_order,
            source_id: source_id.into(),
        })
    }

    /// Builds a volume from a per-voxel function; panics on invalid spacing.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f32; 3],
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut v = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    v.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, spacing, v, AxisOrder::default(), "generated").expect("valid volume")
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn intensities(&self) -> &[f32] {
        &self.intensities
    }

    pub fn axis_order(&self) -> AxisOrder {
        self.axis_order
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn with_axis_order(mut self, order: AxisOrder) -> Result<Self, VolumeError> {
        order.validate()?;
        self.axis_order = order;
        Ok(self)
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.intensities[x + self.dims[0] * (y + self.dims[1] * z)]
    }

    pub fn axial_axis(&self) -> SliceAxis {
        self.axis_order.axial_axis()
    }

    /// `(min, max)` of all intensities, widened to a non-empty range.
    pub fn default_window(&self) -> (f32, f32) {
        let (lo, hi) = self
            .intensities
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if hi > lo {
            (lo, hi)
        } else {
            (lo, lo + 1.0)
        }
    }

    /// Plane `k` along the axial axis.
    pub fn slice_at(&self, k: usize) -> Result<SliceImage, VolumeError> {
        self.slice_along(self.axial_axis(), k)
    }

    pub fn slice_along(&self, axis: SliceAxis, k: usize) -> Result<SliceImage, VolumeError> {
        let extent = axis.extent(self.dims);
        if k >= extent {
            return Err(VolumeError::SliceOutOfRange { index: k, extent });
        }
        let (width, height) = axis.plane_dims(self.dims);
        let mut values = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                let [x, y, z] = axis.to_voxel(u, v, k);
                values.push(self.get(x, y, z));
            }
        }
        Ok(SliceImage {
            width,
            height,
            values,
            slice_index: k,
            window: self.default_window(),
        })
    }
}

/// One plane of a volume, row-major, in scan-native units.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
    pub slice_index: usize,
    pub window: (f32, f32),
}

impl SliceImage {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), width * height, "slice payload size");
        let (lo, hi) = values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let window = if hi > lo { (lo, hi) } else { (lo, lo + 1.0) };
        Self {
            width,
            height,
            values,
            slice_index: 0,
            window,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// 8-bit grayscale display image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray8 {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// `clamp((v - lo) / (hi - lo), 0, 1)` scaled to `[0, 255]`, rounded half-up.
pub fn window_normalize(slice: &SliceImage, lo: f32, hi: f32) -> Result<Gray8, VolumeError> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(VolumeError::InvalidWindow { lo, hi });
    }
    let (lo, hi) = (lo as f64, hi as f64);
    let range = hi - lo;
    let pixels = slice
        .values
        .iter()
        .map(|&v| {
            let t = ((v as f64 - lo) / range).clamp(0.0, 1.0);
            (t * 255.0 + 0.5).floor() as u8
        })
        .collect();
    Ok(Gray8 {
        width: slice.width,
        height: slice.height,
        pixels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Nifti,
    Sidecar,
}

fn detect_format(path: &Path) -> Result<Format, VolumeError> {
    let name = path.to_string_lossy().to_ascii_lowercase();
    if name.ends_with(".nii") || name.ends_with(".nii.gz") {
        Ok(Format::Nifti)
    } else if name.ends_with(".json") || name.ends_with(".raw") {
        Ok(Format::Sidecar)
    } else {
        Err(VolumeError::Unsupported(format!(
            "{} (expected .nii, .nii.gz, .json or .raw)",
            path.display()
        )))
    }
}

fn stem_of(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    for ext in [".nii.gz", ".nii", ".json", ".raw"] {
        if let Some(s) = name.strip_suffix(ext) {
            return s.to_string();
        }
    }
    name
}

pub fn load_volume(path: &Path) -> Result<Volume, VolumeError> {
    match detect_format(path)? {
        Format::Nifti => {
            let img = nifti::read(path)?;
            if img.spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
                return Err(VolumeError::InvalidSpacing(img.spacing));
            }
            let values = img.scaled_values();
            Volume::new(img.dims, img.spacing, values, AxisOrder::default(), stem_of(path))
        }
        Format::Sidecar => {
            let (sidecar, values) = raw::read(path)?;
            Volume::new(
                sidecar.dims,
                sidecar.spacing,
                values,
                sidecar.axis_order,
                stem_of(path),
            )
        }
    }
}

/// Writes intensities as float32 (NIfTI) or a float32 raw payload (sidecar).
pub fn save_volume(volume: &Volume, path: &Path) -> Result<(), VolumeError> {
    match detect_format(path)? {
        Format::Nifti => nifti::write(
            path,
            &NiftiImage {
                dims: volume.dims,
                spacing: volume.spacing,
                data: NiftiData::F32(volume.intensities.clone()),
                scl_slope: 1.0,
                scl_inter: 0.0,
                descrip: volume.source_id.clone(),
            },
        ),
        Format::Sidecar => {
            let payload: Vec<u8> = volume
                .intensities
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect();
            raw::write(
                path,
                &Sidecar {
                    dims: volume.dims,
                    spacing: volume.spacing,
                    axis_order: volume.axis_order,
                    dtype: RawDtype::Float32,
                    target_name: None,
                },
                &payload,
            )
        }
    }
}

/// Writes a mask as uint8 {0,1}; the target name rides in the NIfTI
/// `descrip` field (truncated to 79 bytes) or the sidecar JSON.
pub fn save_mask(mask: &MaskVolume, spacing: [f32; 3], path: &Path) -> Result<(), VolumeError> {
    match detect_format(path)? {
        Format::Nifti => nifti::write(
            path,
            &NiftiImage {
                dims: mask.dims(),
                spacing,
                data: NiftiData::U8(mask.labels().to_vec()),
                scl_slope: 1.0,
                scl_inter: 0.0,
                descrip: mask.target_name.clone(),
            },
        ),
        Format::Sidecar => raw::write(
            path,
            &Sidecar {
                dims: mask.dims(),
                spacing,
                axis_order: AxisOrder::default(),
                dtype: RawDtype::Uint8,
                target_name: Some(mask.target_name.clone()),
            },
            mask.labels(),
        ),
    }
}

pub fn load_mask(path: &Path) -> Result<MaskVolume, VolumeError> {
    let (dims, labels, name) = match detect_format(path)? {
        Format::Nifti => {
            let img = nifti::read(path)?;
            let labels = match img.data {
                NiftiData::U8(v) => v,
                _ => return Err(VolumeError::Corrupt("mask datatype must be uint8".into())),
            };
            (img.dims, labels, img.descrip)
        }
        Format::Sidecar => {
            let (sidecar, values) = raw::read(path)?;
            if sidecar.dtype != RawDtype::Uint8 {
                return Err(VolumeError::Corrupt("mask dtype must be uint8".into()));
            }
            let labels = values.into_iter().map(|v| v as u8).collect();
            (sidecar.dims, labels, sidecar.target_name.unwrap_or_default())
        }
    };
    MaskVolume::from_labels(dims, labels, name)
        .ok_or_else(|| VolumeError::Corrupt("mask values must be 0 or 1".into()))
}

/// Saves then reloads a mask.
pub fn mask_roundtrip(mask: &MaskVolume, spacing: [f32; 3], path: &Path) -> Result<MaskVolume, VolumeError> {
    save_mask(mask, spacing, path)?;
    load_mask(path)
}

impl fmt::Display for SliceAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SliceAxis::X => "x",
            SliceAxis::Y => "y",
            SliceAxis::Z => "z",
        };
        f.write_str(s)
    }
}
