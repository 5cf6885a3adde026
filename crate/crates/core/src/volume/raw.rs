//! JSON sidecar + raw little-endian payload (`<name>.json` next to `<name>.raw`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AxisOrder, VolumeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawDtype {
    Uint8,
    Int16,
    Float32,
}

impl RawDtype {
    fn width(self) -> usize {
        match self {
            RawDtype::Uint8 => 1,
            RawDtype::Int16 => 2,
            RawDtype::Float32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
    #[serde(default)]
    pub axis_order: AxisOrder,
    pub dtype: RawDtype,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_name: Option<String>,
}

/// Resolves either member of the pair to `(json, raw)` paths.
pub fn pair_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("json"), path.with_extension("raw"))
}

pub fn read(path: &Path) -> Result<(Sidecar, Vec<f32>), VolumeError> {
    let (json_path, raw_path) = pair_paths(path);
    let text = fs::read_to_string(&json_path)
        .map_err(|e| VolumeError::Io(json_path.display().to_string(), e))?;
    let sidecar: Sidecar = serde_json::from_str(&text)
        .map_err(|e| VolumeError::InvalidHeader(format!("{}: {e}", json_path.display())))?;
    let payload =
        fs::read(&raw_path).map_err(|e| VolumeError::Io(raw_path.display().to_string(), e))?;
    let n = sidecar.dims.iter().product::<usize>();
    let width = sidecar.dtype.width();
    if payload.len() != n * width {
        return Err(VolumeError::SizeMismatch {
            expected: n,
            found: payload.len() / width,
        });
    }
    let values = match sidecar.dtype {
        RawDtype::Uint8 => payload.iter().map(|&b| b as f32).collect(),
        RawDtype::Int16 => payload
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32)
            .collect(),
        RawDtype::Float32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    };
    Ok((sidecar, values))
}

pub fn write(path: &Path, sidecar: &Sidecar, payload: &[u8]) -> Result<(), VolumeError> {
    let (json_path, raw_path) = pair_paths(path);
    let text = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    fs::write(&json_path, text).map_err(|e| VolumeError::Io(json_path.display().to_string(), e))?;
    fs::write(&raw_path, payload).map_err(|e| VolumeError::Io(raw_path.display().to_string(), e))?;
    Ok(())
}
