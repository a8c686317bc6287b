//! Wire contract between the orchestrator and a sandboxed worker.
//!
//! One request frame goes to the worker's stdin, one response frame comes
//! back on stdout; stderr carries free-form logs. A frame is an 8-byte ASCII
//! decimal length (zero padded) followed by that many bytes of JSON.

use std::io::{self, Read, Write};

use base64::Engine as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

pub const FRAME_PREFIX_LEN: usize = 8;
pub const MAX_FRAME_LEN: usize = 99_999_999;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame length prefix is not 8 ASCII digits")]
    BadPrefix,
    #[error("frame of {0} bytes exceeds the {1}-byte limit")]
    TooLarge(usize, usize),
    #[error("stream ended before the frame was complete")]
    Truncated,
    #[error("frame body is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(io::Error),
}

pub fn write_frame<W: Write, T: Serialize>(mut w: W, body: &T) -> Result<(), FrameError> {
    let bytes = serde_json::to_vec(body)?;
    if bytes.len() > MAX_FRAME_LEN {
        return Err(FrameError::TooLarge(bytes.len(), MAX_FRAME_LEN));
    }
    w.write_all(format!("{:08}", bytes.len()).as_bytes())
        .and_then(|_| w.write_all(&bytes))
        .and_then(|_| w.flush())
        .map_err(FrameError::Io)
}

/// Reads one frame body, refusing bodies larger than `limit`.
pub fn read_frame_bytes<R: Read>(mut r: R, limit: usize) -> Result<Vec<u8>, FrameError> {
    let mut prefix = [0u8; FRAME_PREFIX_LEN];
    read_exact(&mut r, &mut prefix)?;
    if !prefix.iter().all(u8::is_ascii_digit) {
        return Err(FrameError::BadPrefix);
    }
    let len: usize = std::str::from_utf8(&prefix)
        .expect("ascii digits")
        .parse()
        .map_err(|_| FrameError::BadPrefix)?;
    if len > limit {
        return Err(FrameError::TooLarge(len, limit));
    }
    let mut body = vec![0u8; len];
    read_exact(&mut r, &mut body)?;
    Ok(body)
}

pub fn read_frame<R: Read, T: for<'de> Deserialize<'de>>(r: R, limit: usize) -> Result<T, FrameError> {
    let body = read_frame_bytes(r, limit)?;
    Ok(serde_json::from_slice(&body)?)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), FrameError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => FrameError::Truncated,
        _ => FrameError::Io(e),
    })
}

/// Opaque handler state, carried as base64 text on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StateBlob(pub Vec<u8>);

impl Serialize for StateBlob {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&base64::engine::general_purpose::STANDARD.encode(&self.0))
    }
}

impl<'de> Deserialize<'de> for StateBlob {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        base64::engine::general_purpose::STANDARD
            .decode(s)
            .map(StateBlob)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub timeout_ms: u64,
    pub memory_bytes: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            timeout_ms: 60_000,
            memory_bytes: 1 << 30,
        }
    }
}

/// Everything a worker needs besides the materialized bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvokeRequest {
    pub model: String,
    pub version_id: u64,
    pub step: usize,
    pub handler: String,
    pub payloads: Vec<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<StateBlob>,
    pub limits: Limits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvokeStatus {
    Ok,
    HandlerError,
    Timeout,
    ProtocolError,
}

/// Components are kept as raw JSON here; the orchestrator parses them
/// against the catalog. Any status other than `ok` carries no components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvokeResponse {
    pub status: InvokeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<StateBlob>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub logs: String,
    #[serde(default)]
    pub duration_ms: u64,
}

impl InvokeResponse {
    pub fn ok(components: Vec<Value>, state: Option<StateBlob>) -> Self {
        InvokeResponse {
            status: InvokeStatus::Ok,
            components: Some(components),
            state,
            error: None,
            logs: String::new(),
            duration_ms: 0,
        }
    }

    pub fn failed(status: InvokeStatus, error: impl Into<String>) -> Self {
        debug_assert_ne!(status, InvokeStatus::Ok);
        InvokeResponse {
            status,
            components: None,
            state: None,
            error: Some(error.into()),
            logs: String::new(),
            duration_ms: 0,
        }
    }

    /// Enforces "non-ok carries no components or state".
    pub fn normalized(mut self) -> Self {
        if self.status != InvokeStatus::Ok {
            self.components = None;
            self.state = None;
        } else if self.components.is_none() {
            return InvokeResponse {
                logs: self.logs,
                duration_ms: self.duration_ms,
                ..InvokeResponse::failed(InvokeStatus::ProtocolError, "ok response without components")
            };
        }
        self
    }
}
