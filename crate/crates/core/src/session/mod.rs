//! The annotation workflow as a state machine over protocol messages.
//!
//! A [`Session`] owns one volume and its masks. [`Session::handle`] takes a
//! request kind and payload, checks the state graph, applies the request
//! and returns the terminal reply; propagation pushes its per-slice updates
//! through the supplied callback first. Every request that passes the
//! state check is appended to `events.jsonl` so a fresh session can replay
//! it.

mod events;
mod guidance;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::mask::{MaskVolume, SliceMask};
use crate::mesh::{context_surface, mask_mesh, obj::write_obj, TriMesh};
use crate::metrics::{points_per_clear, write_trial};
use crate::propagation::{propagate_bidirectional, FnSink, HaltReason, PropagationConfig, PropagationReport};
use crate::protocol::*;
use crate::retrieval::{EmbeddingProvider, ReferenceIndex};
use crate::segmenter::{
    parse_command, refine_with_prompts, seed_segment, CommandIntent, PointPrompt, ProfileSet, PromptSet,
    SegmentError, SegmentationBackend,
};
use crate::volume::{load_volume, mask_roundtrip, SliceAxis, SliceImage, Volume};

pub use events::{read_events, replay, EventLog, EventRecord, ReplayError};
pub use guidance::{
    generate_guidance, template_bundle, template_text, GuidanceBundle, GuidanceInput, GuidanceMode,
    GuidanceProvider, ProviderKind, TemplateProvider, UnresolvedReference,
};

pub const VOLUME_LINK: &str = "volume.link";
pub const MASKS_FILE: &str = "masks.nii.gz";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const LESION_OBJ: &str = "lesion.obj";
pub const CONTEXT_OBJ: &str = "context.obj";
pub const TRIALS_FILE: &str = "trials.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Contextualize,
    Explore,
    CommandPending,
    Seeded,
    Propagating,
    Review,
    Completed,
}

impl SessionState {
    /// States in which `kind` may be sent.
    pub fn admits(self, kind: &str) -> bool {
        use SessionState::*;
        match kind {
            NAVIGATE => matches!(self, Explore | Review),
            SUBMIT_COMMAND => matches!(self, Explore | CommandPending),
            CONFIRM_COMMAND => self == CommandPending,
            ADD_PROMPT | CLEAR_PROMPTS | REFINE => matches!(self, Seeded | Review),
            PROPAGATE => self == Seeded,
            RESEED | COMPLETE => self == Review,
            REQUEST_MESH => self == Completed,
            GUIDANCE | LOG_TRIAL => self != Contextualize,
            _ => false,
        }
    }

    fn rule(kind: &str) -> &'static str {
        match kind {
            NAVIGATE => "navigation is only available while exploring or reviewing; slice scrolling is disabled once a mask is seeded",
            SUBMIT_COMMAND => "commands are accepted while exploring",
            CONFIRM_COMMAND => "confirm requires a submitted command",
            ADD_PROMPT | CLEAR_PROMPTS | REFINE => "prompts apply to a seeded or reviewed mask",
            PROPAGATE => "propagation starts from a seeded slice",
            RESEED => "reseed is available during review",
            COMPLETE => "complete is available during review",
            REQUEST_MESH => "meshes are generated after completion",
            _ => "not allowed before the session is open",
        }
    }
}

/// Shared, read-only service configuration.
pub struct SessionContext {
    pub profiles: ProfileSet,
    pub backend: Arc<dyn SegmentationBackend>,
    pub embedder: Arc<dyn EmbeddingProvider>,
    /// Reference indexes keyed by lower-case modality.
    pub indexes: BTreeMap<String, Arc<ReferenceIndex>>,
    pub guidance: Arc<dyn GuidanceProvider>,
    pub data_dir: PathBuf,
    pub default_modality: String,
    pub propagation: PropagationConfig,
}

impl SessionContext {
    pub fn new(
        profiles: ProfileSet,
        backend: Arc<dyn SegmentationBackend>,
        embedder: Arc<dyn EmbeddingProvider>,
        data_dir: impl Into<PathBuf>,
    ) -> Self {
        Self {
            profiles,
            backend,
            embedder,
            indexes: BTreeMap::new(),
            guidance: Arc::new(TemplateProvider),
            data_dir: data_dir.into(),
            default_modality: "mr".into(),
            propagation: PropagationConfig::default(),
        }
    }

    pub fn with_index(mut self, modality: &str, index: Arc<ReferenceIndex>) -> Self {
        self.indexes.insert(modality.to_ascii_lowercase(), index);
        self
    }

    pub fn with_guidance(mut self, provider: Arc<dyn GuidanceProvider>) -> Self {
        self.guidance = provider;
        self
    }

    /// The same configuration writing to a different data directory.
    pub fn relocated(&self, data_dir: impl Into<PathBuf>) -> Self {
        Self {
            profiles: self.profiles.clone(),
            backend: self.backend.clone(),
            embedder: self.embedder.clone(),
            indexes: self.indexes.clone(),
            guidance: self.guidance.clone(),
            data_dir: data_dir.into(),
            default_modality: self.default_modality.clone(),
            propagation: self.propagation.clone(),
        }
    }
}

fn err(code: ErrorCode, message: impl Into<String>) -> ProtocolError {
    ProtocolError::new(code, message)
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ProtocolError {
    err(ErrorCode::Io, format!("{}: {e}", path.display()))
}

fn segment_err(e: SegmentError) -> ProtocolError {
    let code = match e {
        SegmentError::EmptyCommand | SegmentError::NoMatch(_) | SegmentError::Ambiguous(..) => ErrorCode::ParseError,
        SegmentError::PromptOutOfBounds { .. } | SegmentError::PromptSliceMismatch { .. } => ErrorCode::InvalidRequest,
        SegmentError::NoPrompts => ErrorCode::Precondition,
        SegmentError::UnknownTarget(_) | SegmentError::Config(_) => ErrorCode::InvalidRequest,
        _ => ErrorCode::Backend,
    };
    err(code, e.to_string())
}

/// A reply: terminal kind plus payload.
pub type Reply = (String, Value);

pub struct Session {
    id: String,
    ctx: Arc<SessionContext>,
    dir: PathBuf,
    volume: Volume,
    volume_ref: String,
    modality: String,
    target_hint: Option<String>,
    axis: SliceAxis,
    window: (f32, f32),
    state: SessionState,
    active_slice: usize,
    intent: Option<CommandIntent>,
    prompts: PromptSet,
    next_prompt_seq: u64,
    masks: MaskVolume,
    report: Option<PropagationReport>,
    challenge_pending: bool,
    confirmed_points: u64,
    clears: u64,
    guidance_disabled: bool,
    events: EventLog,
}

impl Session {
    /// Loads the volume, starts on the middle slice and produces general
    /// guidance for it. A missing reference index disables guidance but
    /// leaves the session usable.
    pub fn open(
        ctx: Arc<SessionContext>,
        id: &str,
        request: &OpenSessionRequest,
    ) -> Result<(Session, OpenSessionReply), ProtocolError> {
        let volume_ref = request
            .volume_ref
            .clone()
            .ok_or_else(|| err(ErrorCode::InvalidRequest, "volume_ref is required"))?;
        let volume = load_volume(Path::new(&volume_ref)).map_err(|e| err(ErrorCode::Io, e.to_string()))?;
        Self::open_with_volume(ctx, id, request, volume)
    }

    /// As [`Session::open`] with an already loaded volume; `volume_ref` is
    /// still recorded for replay.
    pub fn open_with_volume(
        ctx: Arc<SessionContext>,
        id: &str,
        request: &OpenSessionRequest,
        volume: Volume,
    ) -> Result<(Session, OpenSessionReply), ProtocolError> {
        if id.is_empty() || id.contains(['/', '\\', '.']) {
            return Err(err(ErrorCode::InvalidRequest, format!("unusable session id {id:?}")));
        }
        let dir = ctx.data_dir.join(id);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let volume_ref = request.volume_ref.clone().unwrap_or_default();
        fs::write(dir.join(VOLUME_LINK), &volume_ref).map_err(|e| io_err(&dir, e))?;
        let modality = request
            .modality
            .clone()
            .unwrap_or_else(|| ctx.default_modality.clone())
            .to_ascii_lowercase();
        let axis = volume.axial_axis();
        let extent = axis.extent(volume.dims());
        let guidance_disabled = !ctx.indexes.contains_key(&modality);
        let mut session = Session {
            id: id.to_string(),
            dir: dir.clone(),
            masks: MaskVolume::empty(volume.dims(), ""),
            window: volume.default_window(),
            volume_ref,
            modality,
            target_hint: request.target_hint.clone(),
            axis,
            state: SessionState::Contextualize,
            active_slice: extent / 2,
            intent: None,
            prompts: PromptSet::new(),
            next_prompt_seq: 0,
            report: None,
            challenge_pending: false,
            confirmed_points: 0,
            clears: 0,
            guidance_disabled,
            events: EventLog::create(&dir.join(EVENTS_FILE)).map_err(|e| io_err(&dir, e))?,
            ctx,
            volume,
        };
        session.log(OPEN_SESSION, &encode_payload(request), Ok(()))?;

        let mut warning = None;
        let guidance = if session.guidance_disabled {
            warning = Some(format!("no reference index for modality {:?}; guidance disabled", session.modality));
            None
        } else {
            match session.guidance_for(GuidanceMode::General) {
                Ok(g) => Some(g),
                Err(e) => {
                    warning = Some(e.message);
                    None
                }
            }
        };
        session.state = SessionState::Explore;
        let reply = OpenSessionReply {
            session_id: session.id.clone(),
            state: session.state,
            dims: session.volume.dims(),
            spacing: session.volume.spacing(),
            extent,
            active_slice: session.active_slice,
            slice: session.slice_payload()?,
            guidance,
            guidance_disabled: session.guidance_disabled,
            warning,
        };
        Ok((session, reply))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn active_slice(&self) -> usize {
        self.active_slice
    }

    pub fn masks(&self) -> &MaskVolume {
        &self.masks
    }

    pub fn volume(&self) -> &Volume {
        &self.volume
    }

    pub fn volume_ref(&self) -> &str {
        &self.volume_ref
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    pub fn report(&self) -> Option<&PropagationReport> {
        self.report.as_ref()
    }

    pub fn guidance_disabled(&self) -> bool {
        self.guidance_disabled
    }

    pub fn counters(&self) -> (u64, u64, f64) {
        (self.confirmed_points, self.clears, points_per_clear(self.confirmed_points, self.clears))
    }

    pub fn events_path(&self) -> PathBuf {
        self.dir.join(EVENTS_FILE)
    }

    /// Summary used when a client reattaches.
    pub fn snapshot(&self) -> Result<OpenSessionReply, ProtocolError> {
        Ok(OpenSessionReply {
            session_id: self.id.clone(),
            state: self.state,
            dims: self.volume.dims(),
            spacing: self.volume.spacing(),
            extent: self.extent(),
            active_slice: self.active_slice,
            slice: self.slice_payload()?,
            guidance: None,
            guidance_disabled: self.guidance_disabled,
            warning: None,
        })
    }

    fn extent(&self) -> usize {
        self.axis.extent(self.volume.dims())
    }

    fn slice(&self) -> SliceImage {
        self.volume
            .slice_along(self.axis, self.active_slice)
            .expect("active slice kept in range")
    }

    fn slice_payload(&self) -> Result<SlicePayload, ProtocolError> {
        SlicePayload::from_slice(&self.slice(), self.window).map_err(|e| err(ErrorCode::Io, e.to_string()))
    }

    fn active_mask(&self) -> SliceMask {
        self.masks.slice(self.axis, self.active_slice).expect("active slice kept in range")
    }

    fn log(&mut self, kind: &str, payload: &Value, outcome: Result<(), &ProtocolError>) -> Result<(), ProtocolError> {
        let path = self.events_path();
        self.events
            .append(kind, payload, outcome.err().map(|e| e.code))
            .map_err(|e| io_err(&path, e))
    }

    fn target_name(&self) -> String {
        self.intent
            .as_ref()
            .map(|i| i.target.clone())
            .or_else(|| self.target_hint.clone())
            .unwrap_or_else(|| "the target".to_string())
    }

    fn references(&self) -> Option<ReferencePair> {
        let index = self.ctx.indexes.get(&self.modality)?;
        let query = self.ctx.embedder.embed(&self.slice()).ok()?;
        let (pos, neg) = index.contrastive_retrieve(&query, Some(self.volume.source_id())).ok()?;
        Some(ReferencePair {
            positive_id: pos.record_id,
            negative_id: neg.record_id,
            positive_ref: pos.thumbnail_ref.clone(),
            negative_ref: neg.thumbnail_ref.clone(),
            positive_score: query.dot(&pos.vector),
            negative_score: query.dot(&neg.vector),
        })
    }

    fn guidance_for(&self, mode: GuidanceMode) -> Result<GuidanceBundle, ProtocolError> {
        let index = self
            .ctx
            .indexes
            .get(&self.modality)
            .ok_or_else(|| err(ErrorCode::Precondition, "guidance is disabled for this session"))?;
        let pair = self
            .references()
            .ok_or_else(|| err(ErrorCode::Precondition, "no contrastive pair available for this slice"))?;
        generate_guidance(
            index,
            mode,
            &self.target_name(),
            self.active_slice,
            &format!("{}#{}", self.volume.source_id(), self.active_slice),
            pair.positive_id,
            pair.negative_id,
            self.ctx.guidance.as_ref(),
        )
        .map_err(|e| err(ErrorCode::Precondition, e.to_string()))
    }

    /// Applies one request. State violations and unknown kinds are
    /// rejected without touching the session or its event log.
    pub fn handle(
        &mut self,
        kind: &str,
        payload: &Value,
        push: &mut dyn FnMut(&str, Value),
    ) -> Result<Reply, ProtocolError> {
        if !REQUEST_KINDS.contains(&kind) {
            return Err(err(ErrorCode::UnknownKind, format!("unknown kind {kind:?}")));
        }
        if kind == OPEN_SESSION {
            return Err(err(ErrorCode::StateViolation, "session is already open"));
        }
        if !self.state.admits(kind) {
            return Err(err(
                ErrorCode::StateViolation,
                format!("{kind} not allowed in state {:?}: {}", self.state, SessionState::rule(kind)),
            ));
        }
        if kind != COMPLETE {
            self.challenge_pending = false;
        }
        let result = self.dispatch(kind, payload, push);
        self.log(kind, payload, result.as_ref().map(|_| ()))?;
        result.map(|payload| (terminal_kind(kind).to_string(), payload))
    }

    fn dispatch(&mut self, kind: &str, payload: &Value, push: &mut dyn FnMut(&str, Value)) -> Result<Value, ProtocolError> {
        match kind {
            NAVIGATE => self.navigate(decode_payload(payload)?),
            SUBMIT_COMMAND => self.submit_command(decode_payload(payload)?),
            CONFIRM_COMMAND => self.confirm_command(),
            ADD_PROMPT => self.add_prompt(decode_payload(payload)?),
            CLEAR_PROMPTS => self.clear_prompts(),
            REFINE => self.refine(),
            PROPAGATE => self.propagate(decode_payload(payload)?, push),
            RESEED => self.reseed(),
            COMPLETE => self.complete(decode_payload(payload)?),
            REQUEST_MESH => self.request_mesh(decode_payload(payload)?),
            GUIDANCE => {
                let req: GuidanceRequestPayload = decode_payload(payload)?;
                if req.mode == GuidanceMode::QuerySpecific && self.intent.is_none() {
                    return Err(err(ErrorCode::Precondition, "query-specific guidance needs a command"));
                }
                Ok(encode_payload(&self.guidance_for(req.mode)?))
            }
            LOG_TRIAL => self.log_trial(decode_payload(payload)?),
            _ => unreachable!("kinds filtered in handle"),
        }
    }

    fn view(&self) -> Result<SliceView, ProtocolError> {
        let mask = self.active_mask();
        Ok(SliceView {
            state: self.state,
            active_slice: self.active_slice,
            slice: self.slice_payload()?,
            mask: (!mask.is_empty()).then(|| mask.to_rle()),
            references: self.references(),
        })
    }

    fn navigate(&mut self, req: NavigateRequest) -> Result<Value, ProtocolError> {
        if req.slice_index >= self.extent() {
            return Err(err(
                ErrorCode::InvalidRequest,
                format!("slice {} out of range 0..{}", req.slice_index, self.extent()),
            ));
        }
        self.active_slice = req.slice_index;
        Ok(encode_payload(&self.view()?))
    }

    fn submit_command(&mut self, req: SubmitCommandRequest) -> Result<Value, ProtocolError> {
        let intent = parse_command(&req.text, &self.ctx.profiles).map_err(segment_err)?;
        self.intent = Some(intent.clone());
        self.state = SessionState::CommandPending;
        Ok(encode_payload(&SubmitCommandReply {
            state: self.state,
            intent,
        }))
    }

    fn confirm_command(&mut self) -> Result<Value, ProtocolError> {
        let intent = self.intent.clone().expect("CommandPending carries an intent");
        let slice = self.slice();
        let mask = seed_segment(&slice, &intent, &self.ctx.profiles, self.ctx.backend.as_ref()).map_err(segment_err)?;
        if mask.is_empty() {
            self.state = SessionState::Explore;
            return Err(err(
                ErrorCode::TargetNotFound,
                format!("{} not found on slice {}", intent.target, self.active_slice),
            ));
        }
        self.masks.target_name = intent.target.clone();
        self.masks
            .set_slice(self.axis, self.active_slice, &mask)
            .expect("slice dims match volume");
        self.prompts.clear();
        self.state = SessionState::Seeded;
        let guidance = if self.guidance_disabled {
            None
        } else {
            self.guidance_for(GuidanceMode::QuerySpecific).ok()
        };
        Ok(encode_payload(&MaskReply {
            state: self.state,
            slice_index: self.active_slice,
            area: mask.area(),
            mask: mask.to_rle(),
            guidance,
        }))
    }

    fn prompt_ack(&self) -> Value {
        encode_payload(&PromptAck {
            prompt_count: self.prompts.len(),
            confirmed_points: self.confirmed_points,
            clears: self.clears,
        })
    }

    fn add_prompt(&mut self, req: AddPromptRequest) -> Result<Value, ProtocolError> {
        let (w, h) = self.axis.plane_dims(self.volume.dims());
        if req.x >= w || req.y >= h {
            return Err(err(
                ErrorCode::InvalidRequest,
                format!("prompt ({}, {}) outside {w}x{h} slice", req.x, req.y),
            ));
        }
        self.prompts.push(PointPrompt {
            slice_index: self.active_slice,
            x: req.x,
            y: req.y,
            polarity: req.polarity,
            sequence: self.next_prompt_seq,
        });
        self.next_prompt_seq += 1;
        Ok(self.prompt_ack())
    }

    fn clear_prompts(&mut self) -> Result<Value, ProtocolError> {
        self.prompts.clear();
        self.clears += 1;
        Ok(self.prompt_ack())
    }

    fn refine(&mut self) -> Result<Value, ProtocolError> {
        if self.prompts.is_empty() {
            return Err(err(ErrorCode::Precondition, "refine needs at least one prompt"));
        }
        let target = self.target_name();
        let profile = self
            .ctx
            .profiles
            .get(&target)
            .ok_or_else(|| err(ErrorCode::InvalidRequest, format!("no profile for {target:?}")))?;
        let mask = refine_with_prompts(
            &self.slice(),
            &self.active_mask(),
            &self.prompts,
            profile,
            self.ctx.backend.as_ref(),
        )
        .map_err(segment_err)?;
        self.confirmed_points += self.prompts.len() as u64;
        self.prompts.clear();
        self.masks
            .set_slice(self.axis, self.active_slice, &mask)
            .expect("slice dims match volume");
        Ok(encode_payload(&MaskReply {
            state: self.state,
            slice_index: self.active_slice,
            area: mask.area(),
            mask: mask.to_rle(),
            guidance: None,
        }))
    }

    fn propagate(&mut self, req: PropagateRequest, push: &mut dyn FnMut(&str, Value)) -> Result<Value, ProtocolError> {
        let seed = self.active_mask();
        if seed.is_empty() {
            return Err(err(ErrorCode::Precondition, "the seed slice mask is empty"));
        }
        let target = self.target_name();
        let profile = self
            .ctx
            .profiles
            .get(&target)
            .ok_or_else(|| err(ErrorCode::InvalidRequest, format!("no profile for {target:?}")))?
            .clone();
        let mut config = self.ctx.propagation.clone();
        if let Some(b) = req.break_enabled {
            config.break_enabled = b;
        }
        if let Some(t) = req.iou_break_threshold {
            config.iou_break_threshold = t;
        }
        if let Some(d) = req.directions {
            config.directions = d;
        }
        if req.max_steps_per_direction.is_some() {
            config.max_steps_per_direction = req.max_steps_per_direction;
        }
        config.validate().map_err(|e| err(ErrorCode::InvalidRequest, e.to_string()))?;

        self.state = SessionState::Propagating;
        let mut sink = FnSink(|u: crate::propagation::SliceUpdate| {
            push(
                PROPAGATION_UPDATE,
                encode_payload(&PropagationUpdate {
                    ordinal: u.ordinal,
                    direction: u.direction,
                    slice_index: u.slice_index,
                    iou_vs_previous: u.iou_vs_previous,
                    mask: u.mask.to_rle(),
                }),
            )
        });
        let outcome = propagate_bidirectional(
            &self.volume,
            self.axis,
            self.active_slice,
            &seed,
            &profile,
            self.ctx.backend.as_ref(),
            &config,
            &mut sink,
        );
        let (produced, report) = match outcome {
            Ok(r) => r,
            Err(e) => {
                self.state = SessionState::Seeded;
                return Err(err(ErrorCode::Precondition, e.to_string()));
            }
        };
        // Each run overwrites the slices it accepted and leaves the rest.
        for step in report.accepted() {
            let m = produced.slice(self.axis, step.slice_index).expect("in range");
            self.masks.set_slice(self.axis, step.slice_index, &m).expect("dims match");
        }
        let error = [&report.superior_halt, &report.inferior_halt]
            .into_iter()
            .find_map(|h| match h {
                Some(HaltReason::BackendError { message }) => Some(message.clone()),
                _ => None,
            });
        let path = self.dir.join(REPORT_FILE);
        fs::write(&path, serde_json::to_string_pretty(&report).expect("report serializes"))
            .map_err(|e| io_err(&path, e))?;
        self.report = Some(report.clone());
        self.prompts.clear();
        self.state = SessionState::Review;
        Ok(encode_payload(&PropagationDone {
            state: self.state,
            report,
            error,
        }))
    }

    fn reseed(&mut self) -> Result<Value, ProtocolError> {
        let mask = self.active_mask();
        if mask.is_empty() {
            return Err(err(ErrorCode::Precondition, "reseed needs a non-empty mask on the viewed slice"));
        }
        self.prompts.clear();
        self.state = SessionState::Seeded;
        Ok(encode_payload(&MaskReply {
            state: self.state,
            slice_index: self.active_slice,
            area: mask.area(),
            mask: mask.to_rle(),
            guidance: None,
        }))
    }

    fn file_ref(&self, name: &str) -> FileRef {
        FileRef {
            name: name.to_string(),
            url: format!("/sessions/{}/files/{name}", self.id),
        }
    }

    fn complete(&mut self, req: CompleteRequest) -> Result<Value, ProtocolError> {
        if !(req.confirm && self.challenge_pending) {
            self.challenge_pending = true;
            return Ok(encode_payload(&CompleteReply {
                state: self.state,
                challenge: true,
                message: "Submit the segmentation? Send complete with confirm=true to finish.".into(),
                artifacts: vec![],
            }));
        }
        self.challenge_pending = false;
        let path = self.dir.join(MASKS_FILE);
        let back = mask_roundtrip(&self.masks, self.volume.spacing(), &path).map_err(|e| io_err(&path, e))?;
        if back.labels() != self.masks.labels() {
            return Err(err(ErrorCode::Io, "saved mask does not read back identically"));
        }
        let mut artifacts = vec![self.file_ref(MASKS_FILE), self.file_ref(EVENTS_FILE), self.file_ref(VOLUME_LINK)];
        if self.report.is_some() {
            artifacts.push(self.file_ref(REPORT_FILE));
        }
        self.state = SessionState::Completed;
        Ok(encode_payload(&CompleteReply {
            state: self.state,
            challenge: false,
            message: "segmentation saved".into(),
            artifacts,
        }))
    }

    fn request_mesh(&mut self, req: MeshRequest) -> Result<Value, ProtocolError> {
        let threshold = req.context_threshold.or_else(|| {
            req.include_context
                .then(|| self.ctx.profiles.context_threshold(&self.modality))
                .flatten()
        });
        let reply = write_meshes(&self.dir, &self.id, &self.volume, &self.masks, threshold)?;
        Ok(encode_payload(&reply))
    }

    fn log_trial(&mut self, req: LogTrialRequest) -> Result<Value, ProtocolError> {
        req.trial
            .validate()
            .map_err(|e| err(ErrorCode::InvalidRequest, e.to_string()))?;
        let path = self.dir.join(TRIALS_FILE);
        let header = !path.exists();
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        write_trial(file, &req.trial, header).map_err(|e| io_err(&path, e))?;
        Ok(encode_payload(&Ack { ok: true }))
    }
}

/// Writes `lesion.obj`, and `context.obj` when a threshold is given, into
/// a session directory.
pub fn write_meshes(
    dir: &Path,
    session_id: &str,
    volume: &Volume,
    masks: &MaskVolume,
    context_threshold: Option<f32>,
) -> Result<MeshReply, ProtocolError> {
    let mesh_err = |e: crate::mesh::MeshError| err(ErrorCode::InvalidRequest, e.to_string());
    let write = |mesh: &TriMesh, file: &str| -> Result<MeshInfo, ProtocolError> {
        let path = dir.join(file);
        write_obj(mesh, &path).map_err(|e| io_err(&path, e))?;
        Ok(MeshInfo {
            file: FileRef {
                name: file.to_string(),
                url: format!("/sessions/{session_id}/files/{file}"),
            },
            name: mesh.name.clone(),
            vertices: mesh.vertices.len(),
            triangles: mesh.triangles.len(),
            volume_mm3: mesh.signed_volume(),
        })
    };
    let name = if masks.target_name.is_empty() { "lesion" } else { masks.target_name.as_str() };
    let lesion = write(&mask_mesh(masks, volume.spacing(), name).map_err(mesh_err)?, LESION_OBJ)?;
    let context = match context_threshold {
        Some(t) => Some(write(&context_surface(volume, t).map_err(mesh_err)?, CONTEXT_OBJ)?),
        None => None,
    };
    Ok(MeshReply { lesion, context })
}
