//! Async client for the session service.
//!
//! A [`Client`] owns one WebSocket connection and keeps at most one request
//! in flight through [`Client::request`]. For pipelining, use
//! [`Client::send`] and [`Client::next_frame`] directly.

pub mod script;

use futures_util::{SinkExt, StreamExt};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

use medseg_core::metrics::TrialRecord;
use medseg_core::protocol::*;
use medseg_core::segmenter::Polarity;
use medseg_core::session::{GuidanceBundle, GuidanceMode};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("websocket: {0}")]
    Transport(#[from] tokio_tungstenite::tungstenite::Error),
    #[error("connection closed before the reply to seq {0}")]
    Closed(u64),
    #[error("undecodable frame: {0}")]
    Decode(#[from] serde_json::Error),
    #[error("server error {0}")]
    Remote(ProtocolError),
    #[error("no open session")]
    NoSession,
}

impl ClientError {
    /// The server's error code, when this is a remote error.
    pub fn code(&self) -> Option<ErrorCode> {
        match self {
            ClientError::Remote(e) => Some(e.code),
            _ => None,
        }
    }
}

/// Terminal reply plus every `propagation_update` pushed before it.
#[derive(Debug, Clone)]
pub struct Exchange {
    pub reply: Envelope,
    pub updates: Vec<Envelope>,
}

impl Exchange {
    pub fn payload<T: DeserializeOwned>(&self) -> Result<T, ClientError> {
        Ok(serde_json::from_value(self.reply.payload.clone())?)
    }
}

pub struct Client {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
    next_seq: u64,
    session_id: Option<String>,
}

impl Client {
    /// `url` is the service's WebSocket endpoint, e.g. `ws://127.0.0.1:8080/ws`.
    pub async fn connect(url: &str) -> Result<Self, ClientError> {
        let (ws, _) = tokio_tungstenite::connect_async(url).await?;
        Ok(Self {
            ws,
            next_seq: 1,
            session_id: None,
        })
    }

    pub fn session_id(&self) -> Option<&str> {
        self.session_id.as_deref()
    }

    /// Addresses later requests to `id` without an attach round trip.
    pub fn set_session(&mut self, id: Option<String>) {
        self.session_id = id;
    }

    /// Sends a request for the current session and returns its seq.
    pub async fn send(&mut self, kind: &str, payload: Value) -> Result<u64, ClientError> {
        let seq = self.next_seq;
        self.next_seq += 1;
        let env = Envelope::new(kind, self.session_id.clone(), seq, payload);
        self.send_raw(&serde_json::to_string(&env)?).await?;
        Ok(seq)
    }

    pub async fn send_raw(&mut self, text: &str) -> Result<(), ClientError> {
        self.ws.send(Message::Text(text.to_string().into())).await?;
        Ok(())
    }

    /// Next envelope from the server, or `None` once the connection closes.
    pub async fn next_frame(&mut self) -> Result<Option<Envelope>, ClientError> {
        while let Some(msg) = self.ws.next().await {
            match msg? {
                Message::Text(t) => return Ok(Some(serde_json::from_str(t.as_str())?)),
                Message::Close(_) => return Ok(None),
                _ => {}
            }
        }
        Ok(None)
    }

    pub async fn request(&mut self, kind: &str, payload: Value) -> Result<Exchange, ClientError> {
        let seq = self.send(kind, payload).await?;
        let mut updates = Vec::new();
        loop {
            let Some(env) = self.next_frame().await? else {
                return Err(ClientError::Closed(seq));
            };
            if env.seq != seq {
                continue;
            }
            if env.kind == PROPAGATION_UPDATE {
                updates.push(env);
            } else if env.kind == ERROR {
                let err: ProtocolError = serde_json::from_value(env.payload)?;
                return Err(ClientError::Remote(err));
            } else if env.is_terminal_for(kind) {
                return Ok(Exchange { reply: env, updates });
            }
        }
    }

    async fn call<Req: Serialize, Rep: DeserializeOwned>(&mut self, kind: &str, req: &Req) -> Result<Rep, ClientError> {
        if self.session_id.is_none() {
            return Err(ClientError::NoSession);
        }
        self.request(kind, encode_payload(req)).await?.payload()
    }

    pub async fn open(&mut self, volume_ref: &str, modality: Option<&str>, target_hint: Option<&str>) -> Result<OpenSessionReply, ClientError> {
        let req = OpenSessionRequest {
            volume_ref: Some(volume_ref.to_string()),
            modality: modality.map(str::to_string),
            target_hint: target_hint.map(str::to_string),
            attach: None,
        };
        self.open_with(req).await
    }

    pub async fn attach(&mut self, session_id: &str) -> Result<OpenSessionReply, ClientError> {
        self.open_with(OpenSessionRequest {
            attach: Some(session_id.to_string()),
            ..Default::default()
        })
        .await
    }

    async fn open_with(&mut self, req: OpenSessionRequest) -> Result<OpenSessionReply, ClientError> {
        let reply: OpenSessionReply = self.request(OPEN_SESSION, encode_payload(&req)).await?.payload()?;
        self.session_id = Some(reply.session_id.clone());
        Ok(reply)
    }

    pub async fn navigate(&mut self, slice_index: usize) -> Result<SliceView, ClientError> {
        self.call(NAVIGATE, &NavigateRequest { slice_index }).await
    }

    pub async fn submit_command(&mut self, text: &str) -> Result<SubmitCommandReply, ClientError> {
        self.call(SUBMIT_COMMAND, &SubmitCommandRequest { text: text.to_string() }).await
    }

    pub async fn confirm_command(&mut self) -> Result<MaskReply, ClientError> {
        self.call(CONFIRM_COMMAND, &Value::Null).await
    }

    pub async fn add_prompt(&mut self, x: usize, y: usize, polarity: Polarity) -> Result<PromptAck, ClientError> {
        self.call(ADD_PROMPT, &AddPromptRequest { x, y, polarity }).await
    }

    pub async fn clear_prompts(&mut self) -> Result<PromptAck, ClientError> {
        self.call(CLEAR_PROMPTS, &Value::Null).await
    }

    pub async fn refine(&mut self) -> Result<MaskReply, ClientError> {
        self.call(REFINE, &Value::Null).await
    }

    /// Returns the final report and the streamed updates in arrival order.
    pub async fn propagate(&mut self, req: &PropagateRequest) -> Result<(PropagationDone, Vec<PropagationUpdate>), ClientError> {
        if self.session_id.is_none() {
            return Err(ClientError::NoSession);
        }
        let ex = self.request(PROPAGATE, encode_payload(req)).await?;
        let updates = ex
            .updates
            .iter()
            .map(|u| serde_json::from_value(u.payload.clone()))
            .collect::<Result<Vec<PropagationUpdate>, _>>()?;
        Ok((ex.payload()?, updates))
    }

    pub async fn reseed(&mut self) -> Result<MaskReply, ClientError> {
        self.call(RESEED, &Value::Null).await
    }

    pub async fn complete(&mut self, confirm: bool) -> Result<CompleteReply, ClientError> {
        self.call(COMPLETE, &CompleteRequest { confirm }).await
    }

    pub async fn request_mesh(&mut self, req: &MeshRequest) -> Result<MeshReply, ClientError> {
        self.call(REQUEST_MESH, req).await
    }

    pub async fn guidance(&mut self, mode: GuidanceMode) -> Result<GuidanceBundle, ClientError> {
        self.call(GUIDANCE, &GuidanceRequestPayload { mode }).await
    }

    pub async fn log_trial(&mut self, trial: TrialRecord) -> Result<Ack, ClientError> {
        self.call(LOG_TRIAL, &LogTrialRequest { trial }).await
    }

    pub async fn close(mut self) -> Result<(), ClientError> {
        self.ws.close(None).await?;
        Ok(())
    }
}
