//! Blocking WebSocket transport for an out-of-process segmentation model.

use std::net::TcpStream;
use std::sync::Mutex;
use std::time::Duration;

use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

use medseg_core::protocol::Envelope;
use medseg_core::segmenter::external::BackendTransport;

type Socket = WebSocket<MaybeTlsStream<TcpStream>>;

/// One shared connection, opened lazily and reopened once per request if
/// it has gone stale. Requests are serialized over it.
pub struct WsTransport {
    url: String,
    timeout: Duration,
    conn: Mutex<Option<Socket>>,
}

impl WsTransport {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        Self {
            url: url.into(),
            timeout,
            conn: Mutex::new(None),
        }
    }

    fn connect(&self) -> Result<Socket, String> {
        let (ws, _) = tungstenite::connect(self.url.as_str()).map_err(|e| format!("connect {}: {e}", self.url))?;
        if let MaybeTlsStream::Plain(s) = ws.get_ref() {
            s.set_read_timeout(Some(self.timeout)).map_err(|e| e.to_string())?;
            s.set_write_timeout(Some(self.timeout)).map_err(|e| e.to_string())?;
        }
        Ok(ws)
    }
}

fn round_trip(ws: &mut Socket, request: &Envelope) -> Result<Envelope, String> {
    let text = serde_json::to_string(request).map_err(|e| e.to_string())?;
    ws.send(Message::Text(text.into())).map_err(|e| e.to_string())?;
    loop {
        match ws.read().map_err(|e| e.to_string())? {
            Message::Text(t) => {
                let reply: Envelope = serde_json::from_str(t.as_str()).map_err(|e| format!("bad reply: {e}"))?;
                // Late answers to an earlier, timed-out request are dropped.
                if reply.seq == request.seq {
                    return Ok(reply);
                }
            }
            Message::Close(_) => return Err("backend closed the connection".into()),
            _ => {}
        }
    }
}

impl BackendTransport for WsTransport {
    fn exchange(&self, request: &Envelope) -> Result<Envelope, String> {
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        let mut last = String::new();
        for _ in 0..2 {
            if conn.is_none() {
                *conn = Some(self.connect()?);
            }
            match round_trip(conn.as_mut().expect("connected"), request) {
                Ok(reply) => return Ok(reply),
                Err(e) => {
                    *conn = None;
                    last = e;
                }
            }
        }
        Err(last)
    }
}
