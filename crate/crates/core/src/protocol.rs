//! Session wire format: one JSON object per WebSocket text frame,
//! `{kind, session_id, seq, payload}`.
//!
//! Every request receives exactly one terminal reply carrying the request's
//! `seq`. The terminal kind is the request kind, except `propagate`, which
//! ends with `propagation_done`, and failures, which reply with `error`.
//! `propagation_update` frames are pushed before the terminal reply and
//! carry the triggering `seq`.

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::mask::RunLength;
use crate::metrics::TrialRecord;
use crate::propagation::{Direction, Directions, PropagationReport};
use crate::segmenter::{CommandIntent, Polarity};
use crate::session::{GuidanceBundle, GuidanceMode, SessionState};
use crate::volume::{window_normalize, SliceImage, VolumeError};

pub const OPEN_SESSION: &str = "open_session";
pub const NAVIGATE: &str = "navigate";
pub const SUBMIT_COMMAND: &str = "submit_command";
pub const CONFIRM_COMMAND: &str = "confirm_command";
pub const ADD_PROMPT: &str = "add_prompt";
pub const CLEAR_PROMPTS: &str = "clear_prompts";
pub const REFINE: &str = "refine";
pub const PROPAGATE: &str = "propagate";
pub const PROPAGATION_UPDATE: &str = "propagation_update";
pub const PROPAGATION_DONE: &str = "propagation_done";
pub const RESEED: &str = "reseed";
pub const COMPLETE: &str = "complete";
pub const REQUEST_MESH: &str = "request_mesh";
pub const GUIDANCE: &str = "guidance";
pub const LOG_TRIAL: &str = "log_trial";
pub const ERROR: &str = "error";

/// Kinds a client may send.
pub const REQUEST_KINDS: &[&str] = &[
    OPEN_SESSION,
    NAVIGATE,
    SUBMIT_COMMAND,
    CONFIRM_COMMAND,
    ADD_PROMPT,
    CLEAR_PROMPTS,
    REFINE,
    PROPAGATE,
    RESEED,
    COMPLETE,
    REQUEST_MESH,
    GUIDANCE,
    LOG_TRIAL,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    #[serde(default)]
    pub seq: u64,
    #[serde(default)]
    pub payload: Value,
}

impl Envelope {
    pub fn new(kind: impl Into<String>, session_id: Option<String>, seq: u64, payload: Value) -> Self {
        Self {
            kind: kind.into(),
            session_id,
            seq,
            payload,
        }
    }

    pub fn error(session_id: Option<String>, seq: u64, err: &ProtocolError) -> Self {
        Self::new(ERROR, session_id, seq, serde_json::to_value(err).expect("plain struct"))
    }

    pub fn is_terminal_for(&self, request_kind: &str) -> bool {
        self.kind == ERROR || self.kind == terminal_kind(request_kind)
    }
}

pub fn terminal_kind(request_kind: &str) -> &str {
    if request_kind == PROPAGATE {
        PROPAGATION_DONE
    } else {
        request_kind
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    StateViolation,
    InvalidRequest,
    ParseError,
    TargetNotFound,
    Precondition,
    Backend,
    Io,
    UnknownKind,
    UnknownSession,
}

impl ErrorCode {
    /// Name used on the wire.
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::StateViolation => "state_violation",
            ErrorCode::InvalidRequest => "invalid_request",
            ErrorCode::ParseError => "parse_error",
            ErrorCode::TargetNotFound => "target_not_found",
            ErrorCode::Precondition => "precondition",
            ErrorCode::Backend => "backend",
            ErrorCode::Io => "io",
            ErrorCode::UnknownKind => "unknown_kind",
            ErrorCode::UnknownSession => "unknown_session",
        }
    }
}

impl std::fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ProtocolError {
    pub code: ErrorCode,
    pub message: String,
}

impl ProtocolError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

/// Windowed 8-bit slice pixels, base64, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicePayload {
    pub slice_index: usize,
    pub width: usize,
    pub height: usize,
    pub window: (f32, f32),
    pub pixels: String,
}

impl SlicePayload {
    pub fn from_slice(slice: &SliceImage, window: (f32, f32)) -> Result<Self, VolumeError> {
        let gray = window_normalize(slice, window.0, window.1)?;
        Ok(Self {
            slice_index: slice.slice_index,
            width: gray.width,
            height: gray.height,
            window,
            pixels: base64::engine::general_purpose::STANDARD.encode(&gray.pixels),
        })
    }

    pub fn decode_pixels(&self) -> Result<Vec<u8>, String> {
        let px = base64::engine::general_purpose::STANDARD
            .decode(&self.pixels)
            .map_err(|e| e.to_string())?;
        if px.len() != self.width * self.height {
            return Err(format!("{} bytes for {}x{}", px.len(), self.width, self.height));
        }
        Ok(px)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OpenSessionRequest {
    /// Volume file path as seen by the server. Omitted when reattaching.
    #[serde(default)]
    pub volume_ref: Option<String>,
    /// Selects the reference index and context-threshold default.
    #[serde(default)]
    pub modality: Option<String>,
    /// Target named in general guidance before any command is given.
    #[serde(default)]
    pub target_hint: Option<String>,
    /// Existing session to reattach to.
    #[serde(default)]
    pub attach: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSessionReply {
    pub session_id: String,
    pub state: SessionState,
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
    pub extent: usize,
    pub active_slice: usize,
    pub slice: SlicePayload,
    pub guidance: Option<GuidanceBundle>,
    pub guidance_disabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavigateRequest {
    pub slice_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePair {
    pub positive_id: u64,
    pub negative_id: u64,
    pub positive_ref: String,
    pub negative_ref: String,
    pub positive_score: f64,
    pub negative_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceView {
    pub state: SessionState,
    pub active_slice: usize,
    pub slice: SlicePayload,
    pub mask: Option<RunLength>,
    pub references: Option<ReferencePair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitCommandRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitCommandReply {
    pub state: SessionState,
    pub intent: CommandIntent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskReply {
    pub state: SessionState,
    pub slice_index: usize,
    pub mask: RunLength,
    pub area: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance: Option<GuidanceBundle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddPromptRequest {
    pub x: usize,
    pub y: usize,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptAck {
    pub prompt_count: usize,
    pub confirmed_points: u64,
    pub clears: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PropagateRequest {
    #[serde(default)]
    pub break_enabled: Option<bool>,
    #[serde(default)]
    pub iou_break_threshold: Option<f64>,
    #[serde(default)]
    pub directions: Option<Directions>,
    #[serde(default)]
    pub max_steps_per_direction: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationUpdate {
    pub ordinal: u64,
    pub direction: Direction,
    pub slice_index: usize,
    pub iou_vs_previous: f64,
    pub mask: RunLength,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationDone {
    pub state: SessionState,
    pub report: PropagationReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompleteRequest {
    #[serde(default)]
    pub confirm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteReply {
    pub state: SessionState,
    /// True when this reply is the confirmation challenge.
    pub challenge: bool,
    pub message: String,
    #[serde(default)]
    pub artifacts: Vec<FileRef>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeshRequest {
    #[serde(default)]
    pub context_threshold: Option<f32>,
    /// Emit a context surface at the modality default when no explicit
    /// threshold is given.
    #[serde(default)]
    pub include_context: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshInfo {
    pub file: FileRef,
    pub name: String,
    pub vertices: usize,
    pub triangles: usize,
    pub volume_mm3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshReply {
    pub lesion: MeshInfo,
    pub context: Option<MeshInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRef {
    pub name: String,
    /// Server-relative URL for fetching the file over HTTP.
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceRequestPayload {
    pub mode: GuidanceMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogTrialRequest {
    pub trial: TrialRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub ok: bool,
}

pub fn decode_payload<T: serde::de::DeserializeOwned>(payload: &Value) -> Result<T, ProtocolError> {
    let v = if payload.is_null() {
        Value::Object(Default::default())
    } else {
        payload.clone()
    };
    serde_json::from_value(v).map_err(|e| ProtocolError::new(ErrorCode::InvalidRequest, e.to_string()))
}

pub fn encode_payload<T: Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("protocol payloads serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_round_trip_and_defaults() {
        let e = Envelope::new(NAVIGATE, Some("s1".into()), 7, serde_json::json!({"slice_index": 3}));
        let text = serde_json::to_string(&e).unwrap();
        assert_eq!(serde_json::from_str::<Envelope>(&text).unwrap(), e);
        let bare: Envelope = serde_json::from_str(r#"{"kind":"complete"}"#).unwrap();
        assert_eq!((bare.seq, bare.session_id, bare.payload), (0, None, Value::Null));
    }

    #[test]
    fn error_envelope_shape() {
        let e = Envelope::error(None, 4, &ProtocolError::new(ErrorCode::StateViolation, "no"));
        let v: Value = serde_json::to_value(&e).unwrap();
        assert_eq!(v["kind"], "error");
        assert_eq!(v["payload"]["code"], "state_violation");
        assert_eq!(v["seq"], 4);
    }

    #[test]
    fn display_uses_wire_codes() {
        use ErrorCode::*;
        for code in [StateViolation, InvalidRequest, ParseError, TargetNotFound, Precondition, Backend, Io, UnknownKind, UnknownSession] {
            assert_eq!(serde_json::to_value(code).unwrap(), code.as_str());
        }
        assert_eq!(ProtocolError::new(Io, "gone").to_string(), "io: gone");
    }

    #[test]
    fn terminal_kinds() {
        assert_eq!(terminal_kind(PROPAGATE), PROPAGATION_DONE);
        assert_eq!(terminal_kind(REFINE), REFINE);
        let done = Envelope::new(PROPAGATION_DONE, None, 1, Value::Null);
        assert!(done.is_terminal_for(PROPAGATE));
        assert!(!Envelope::new(PROPAGATION_UPDATE, None, 1, Value::Null).is_terminal_for(PROPAGATE));
    }

    #[test]
    fn slice_payload_pixels() {
        let s = SliceImage::new(2, 2, vec![0.0, 50.0, 100.0, 200.0]);
        let p = SlicePayload::from_slice(&s, (0.0, 100.0)).unwrap();
        assert_eq!(p.decode_pixels().unwrap(), vec![0, 128, 255, 255]);
    }

    #[test]
    fn null_payload_decodes_as_empty_object() {
        let c: CompleteRequest = decode_payload(&Value::Null).unwrap();
        assert!(!c.confirm);
        assert!(decode_payload::<NavigateRequest>(&Value::Null).is_err());
    }
}
