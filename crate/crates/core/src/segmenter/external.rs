//! Contract for segmentation backends reached over the session wire format.
//!
//! A request envelope has kind `backend_seed` or `backend_refine`; slice
//! pixels travel as base64 little-endian float32, masks as [`RunLength`].
//! The reply must be kind `backend_mask` with the request's `seq`, or kind
//! `error`. Replies whose mask does not match the slice are rejected, never
//! cropped.

use std::sync::atomic::{AtomicU64, Ordering};

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::mask::{RunLength, SliceMask};
use crate::protocol::Envelope;
use crate::volume::SliceImage;

use super::{
    BackendIdentity, CommandIntent, PointPrompt, SegmentError, SegmentationBackend, TargetProfile,
};

pub const KIND_SEED: &str = "backend_seed";
pub const KIND_REFINE: &str = "backend_refine";
pub const KIND_MASK: &str = "backend_mask";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireSlice {
    pub width: usize,
    pub height: usize,
    pub slice_index: usize,
    /// base64 of little-endian float32 values, row-major.
    pub pixels: String,
}

impl WireSlice {
    pub fn encode(slice: &SliceImage) -> Self {
        let bytes: Vec<u8> = slice.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            width: slice.width,
            height: slice.height,
            slice_index: slice.slice_index,
            pixels: base64::engine::general_purpose::STANDARD.encode(bytes),
        }
    }

    pub fn decode(&self) -> Result<SliceImage, SegmentError> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(&self.pixels)
            .map_err(|e| SegmentError::MalformedReply(format!("pixels: {e}")))?;
        if bytes.len() != self.width * self.height * 4 {
            return Err(SegmentError::MalformedReply(format!(
                "{} pixel bytes for a {}x{} slice",
                bytes.len(),
                self.width,
                self.height
            )));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut s = SliceImage::new(self.width, self.height, values);
        s.slice_index = self.slice_index;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRequest {
    pub slice: WireSlice,
    pub target: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineRequest {
    pub slice: WireSlice,
    pub target: String,
    pub current: RunLength,
    pub prompts: Vec<PointPrompt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskReply {
    pub mask: RunLength,
}

/// Moves one envelope to a backend and returns its reply.
pub trait BackendTransport: Send + Sync {
    fn exchange(&self, request: &Envelope) -> Result<Envelope, String>;
}

pub struct ExternalBackend<T> {
    transport: T,
    identity: BackendIdentity,
    seq: AtomicU64,
}

impl<T: BackendTransport> ExternalBackend<T> {
    pub fn new(transport: T, name: impl Into<String>, deterministic: bool) -> Self {
        Self {
            transport,
            identity: BackendIdentity {
                name: name.into(),
                version: "external".into(),
                deterministic,
            },
            seq: AtomicU64::new(1),
        }
    }

    fn call(
        &self,
        kind: &str,
        payload: serde_json::Value,
        slice: &SliceImage,
    ) -> Result<SliceMask, SegmentError> {
        let seq = self.seq.fetch_add(1, Ordering::Relaxed);
        let request = Envelope::new(kind, None, seq, payload);
        let reply = self
            .transport
            .exchange(&request)
            .map_err(SegmentError::Backend)?;
        validate_reply(&reply, seq, slice)
    }
}

/// Checks kind, seq echo and mask dimensions of a backend reply.
pub fn validate_reply(reply: &Envelope, seq: u64, slice: &SliceImage) -> Result<SliceMask, SegmentError> {
    if reply.kind == "error" {
        return Err(SegmentError::Backend(
            reply.payload.get("message").and_then(|m| m.as_str()).unwrap_or("backend error").to_string(),
        ));
    }
    if reply.kind != KIND_MASK {
        return Err(SegmentError::MalformedReply(format!("unexpected kind {:?}", reply.kind)));
    }
    if reply.seq != seq {
        return Err(SegmentError::MalformedReply(format!(
            "reply seq {} for request {seq}",
            reply.seq
        )));
    }
    let body: MaskReply = serde_json::from_value(reply.payload.clone())
        .map_err(|e| SegmentError::MalformedReply(e.to_string()))?;
    if (body.mask.width, body.mask.height) != slice.dims() {
        return Err(SegmentError::MalformedReply(format!(
            "mask {}x{} for a {}x{} slice",
            body.mask.width, body.mask.height, slice.width, slice.height
        )));
    }
    SliceMask::from_rle(&body.mask).map_err(|e| SegmentError::MalformedReply(e.to_string()))
}

impl<T: BackendTransport> SegmentationBackend for ExternalBackend<T> {
    fn identity(&self) -> BackendIdentity {
        self.identity.clone()
    }

    fn seed(
        &self,
        slice: &SliceImage,
        profile: &TargetProfile,
        intent: &CommandIntent,
    ) -> Result<SliceMask, SegmentError> {
        let payload = SeedRequest {
            slice: WireSlice::encode(slice),
            target: profile.name.clone(),
            text: intent.raw_text.clone(),
        };
        self.call(KIND_SEED, serde_json::to_value(payload).unwrap(), slice)
    }

    fn refine(
        &self,
        slice: &SliceImage,
        current: &SliceMask,
        prompts: &[PointPrompt],
        profile: &TargetProfile,
    ) -> Result<SliceMask, SegmentError> {
        let payload = RefineRequest {
            slice: WireSlice::encode(slice),
            target: profile.name.clone(),
            current: current.to_rle(),
            prompts: prompts.to_vec(),
        };
        self.call(KIND_REFINE, serde_json::to_value(payload).unwrap(), slice)
    }
}
