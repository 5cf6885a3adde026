use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SegmentError;

/// How a named target is found and grown by the built-in backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetProfile {
    pub name: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
    /// Inclusive intensity band, scan units.
    pub intensity_range: (f32, f32),
    pub min_area: usize,
    /// Half-width of the intensity band admitted around a positive prompt.
    pub grow_tolerance: f32,
}

impl TargetProfile {
    pub fn validate(&self) -> Result<(), SegmentError> {
        let (lo, hi) = self.intensity_range;
        if !(lo < hi) {
            return Err(SegmentError::Config(format!(
                "{}: intensity_range lo ({lo}) must be below hi ({hi})",
                self.name
            )));
        }
        if self.min_area < 1 {
            return Err(SegmentError::Config(format!("{}: min_area must be >= 1", self.name)));
        }
        if !(self.grow_tolerance > 0.0) {
            return Err(SegmentError::Config(format!(
                "{}: grow_tolerance must be positive",
                self.name
            )));
        }
        if self.name.trim().is_empty() {
            return Err(SegmentError::Config("profile with empty name".into()));
        }
        Ok(())
    }

    pub fn in_range(&self, v: f32) -> bool {
        v >= self.intensity_range.0 && v <= self.intensity_range.1
    }
}

/// Target profiles plus per-modality context-surface thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSet {
    #[serde(rename = "target")]
    pub targets: Vec<TargetProfile>,
    #[serde(default = "default_context_thresholds")]
    pub context_thresholds: BTreeMap<String, f32>,
}

fn default_context_thresholds() -> BTreeMap<String, f32> {
    BTreeMap::from([("mr".to_string(), 500.0), ("ct".to_string(), 150.0)])
}

impl ProfileSet {
    pub fn new(targets: Vec<TargetProfile>) -> Result<Self, SegmentError> {
        let set = Self {
            targets,
            context_thresholds: default_context_thresholds(),
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), SegmentError> {
        if self.targets.is_empty() {
            return Err(SegmentError::Config("no target profiles configured".into()));
        }
        for (i, t) in self.targets.iter().enumerate() {
            t.validate()?;
            if self.targets[..i].iter().any(|o| o.name == t.name) {
                return Err(SegmentError::Config(format!("duplicate profile {:?}", t.name)));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, SegmentError> {
        let set: ProfileSet =
            toml::from_str(text).map_err(|e| SegmentError::Config(e.to_string()))?;
        set.validate()?;
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, SegmentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SegmentError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn get(&self, name: &str) -> Option<&TargetProfile> {
        self.targets.iter().find(|t| t.name == name)
    }

    pub fn context_threshold(&self, modality: &str) -> Option<f32> {
        self.context_thresholds.get(&modality.to_ascii_lowercase()).copied()
    }
}
