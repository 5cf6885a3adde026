//! Text-seeded masks and point-prompt refinement behind a pluggable
//! backend. [`RegionGrowBackend`] is the deterministic built-in.

mod builtin;
mod command;
pub mod external;
mod profile;

pub use builtin::RegionGrowBackend;
pub use command::{parse_command, CommandIntent, Verb};
pub use profile::{ProfileSet, TargetProfile};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::SliceMask;
use crate::volume::SliceImage;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentError {
    #[error("empty command")]
    EmptyCommand,
    #[error("no configured target matches {0:?}")]
    NoMatch(String),
    #[error("command is ambiguous between targets {0:?}")]
    Ambiguous(Vec<String>),
    #[error("no profile named {0:?}")]
    UnknownTarget(String),
    #[error("prompt ({x}, {y}) outside {width}x{height} slice")]
    PromptOutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    #[error("prompt references slice {got} but slice {expected} is being refined")]
    PromptSliceMismatch { expected: usize, got: usize },
    #[error("refinement needs at least one prompt")]
    NoPrompts,
    #[error("mask is {got:?} but slice is {expected:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("backend unavailable: {0}")]
    Backend(String),
    #[error("malformed backend reply: {0}")]
    MalformedReply(String),
    #[error("profile configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

/// A user-placed point on one slice; `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointPrompt {
    pub slice_index: usize,
    pub x: usize,
    pub y: usize,
    pub polarity: Polarity,
    pub sequence: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    prompts: Vec<PointPrompt>,
}

impl PromptSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, prompt: PointPrompt) {
        self.prompts.push(prompt);
    }

    pub fn clear(&mut self) {
        self.prompts.clear();
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn as_slice(&self) -> &[PointPrompt] {
        &self.prompts
    }

    /// Prompts in placement order.
    pub fn ordered(&self) -> Vec<PointPrompt> {
        let mut v = self.prompts.clone();
        v.sort_by_key(|p| p.sequence);
        v
    }
}

impl FromIterator<PointPrompt> for PromptSet {
    fn from_iter<T: IntoIterator<Item = PointPrompt>>(iter: T) -> Self {
        Self {
            prompts: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub text_seed: bool,
    pub prompt_refine: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendIdentity {
    pub name: String,
    pub version: String,
    pub deterministic: bool,
}

/// The slot a segmentation model plugs into. Implementations must be
/// callable from many sessions at once.
pub trait SegmentationBackend: Send + Sync {
    fn identity(&self) -> BackendIdentity;

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            text_seed: true,
            prompt_refine: true,
        }
    }

    fn seed(
        &self,
        slice: &SliceImage,
        profile: &TargetProfile,
        intent: &CommandIntent,
    ) -> Result<SliceMask, SegmentError>;

    /// `prompts` arrive sorted by sequence and already validated.
    fn refine(
        &self,
        slice: &SliceImage,
        current: &SliceMask,
        prompts: &[PointPrompt],
        profile: &TargetProfile,
    ) -> Result<SliceMask, SegmentError>;
}

fn check_output(slice: &SliceImage, mask: SliceMask) -> Result<SliceMask, SegmentError> {
    if mask.dims() != slice.dims() {
        return Err(SegmentError::MalformedReply(format!(
            "mask {:?} does not match slice {:?}",
            mask.dims(),
            slice.dims()
        )));
    }
    Ok(mask)
}

/// Initial mask for `intent` on `slice`.
pub fn seed_segment(
    slice: &SliceImage,
    intent: &CommandIntent,
    profiles: &ProfileSet,
    backend: &dyn SegmentationBackend,
) -> Result<SliceMask, SegmentError> {
    let profile = profiles
        .get(&intent.target)
        .ok_or_else(|| SegmentError::UnknownTarget(intent.target.clone()))?;
    check_output(slice, backend.seed(slice, profile, intent)?)
}

/// Applies point prompts to `current` in sequence order.
pub fn refine_with_prompts(
    slice: &SliceImage,
    current: &SliceMask,
    prompts: &PromptSet,
    profile: &TargetProfile,
    backend: &dyn SegmentationBackend,
) -> Result<SliceMask, SegmentError> {
    if prompts.is_empty() {
        return Err(SegmentError::NoPrompts);
    }
    if current.dims() != slice.dims() {
        return Err(SegmentError::DimensionMismatch {
            expected: slice.dims(),
            got: current.dims(),
        });
    }
    for p in prompts.as_slice() {
        if p.slice_index != slice.slice_index {
            return Err(SegmentError::PromptSliceMismatch {
                expected: slice.slice_index,
                got: p.slice_index,
            });
        }
        if p.x >= slice.width || p.y >= slice.height {
            return Err(SegmentError::PromptOutOfBounds {
                x: p.x,
                y: p.y,
                width: slice.width,
                height: slice.height,
            });
        }
    }
    check_output(slice, backend.refine(slice, current, &prompts.ordered(), profile)?)
}
