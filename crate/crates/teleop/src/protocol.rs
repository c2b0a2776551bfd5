//! Wire format: every message is a 4-byte big-endian length followed by a
//! UTF-8 JSON body.

use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

use crate::TeleopError;
use demoaug_core::render::Image;

pub const PROTO_VERSION: u32 = 1;
/// Bodies larger than this are treated as a protocol violation.
pub const MAX_MESSAGE: usize = 16 << 20;

/// First message from the server on every connection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub proto: u32,
    pub task: String,
    #[serde(rename = "F")]
    pub fingers: usize,
    /// Image width and height.
    pub resolution: [u32; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetRequest {
    pub task: String,
    pub level: u8,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlMessage {
    /// Normalized body-frame twist; clamped to [-1, 1] by the server.
    pub ee_delta: [f64; 6],
    pub fingers: Vec<f64>,
    /// Flips recording on or off before this message's action is applied.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub record_toggle: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reset: Option<ResetRequest>,
}

impl ControlMessage {
    pub fn new(ee_delta: [f64; 6], fingers: Vec<f64>) -> ControlMessage {
        ControlMessage { ee_delta, fingers, ..ControlMessage::default() }
    }

    pub fn toggling(mut self) -> ControlMessage {
        self.record_toggle = true;
        self
    }

    /// Folds an unconsumed earlier message into this one so that toggles
    /// and resets are not lost when only the latest message is kept.
    pub fn absorb(&mut self, earlier: ControlMessage) {
        self.record_toggle ^= earlier.record_toggle;
        if self.reset.is_none() {
            self.reset = earlier.reset;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireImage {
    pub w: u32,
    pub h: u32,
    pub rgb8_b64: String,
}

impl From<&Image> for WireImage {
    fn from(img: &Image) -> Self {
        WireImage { w: img.width, h: img.height, rgb8_b64: base64::engine::general_purpose::STANDARD.encode(&img.data) }
    }
}

impl WireImage {
    pub fn decode(&self) -> Result<Image, TeleopError> {
        let data = base64::engine::general_purpose::STANDARD
            .decode(&self.rgb8_b64)
            .map_err(|e| TeleopError::Protocol(e.to_string()))?;
        if data.len() != (self.w * self.h * 3) as usize {
            return Err(TeleopError::Protocol("image size does not match its dimensions".into()));
        }
        Ok(Image { width: self.w, height: self.h, data })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecordEvent {
    Started,
    Saved { id: String, path: String },
    Discarded { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMessage {
    pub tick: u64,
    pub image: WireImage,
    pub proprio: Vec<f64>,
    pub success_flag: bool,
    pub recording_flag: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<RecordEvent>,
}

pub async fn write_message<W, T>(w: &mut W, msg: &T) -> Result<(), TeleopError>
where
    W: AsyncWrite + Unpin,
    T: Serialize,
{
    let body = serde_json::to_vec(msg).map_err(|e| TeleopError::Protocol(e.to_string()))?;
    let len = u32::try_from(body.len()).map_err(|_| TeleopError::Protocol("message too long".into()))?;
    w.write_all(&len.to_be_bytes()).await?;
    w.write_all(&body).await?;
    w.flush().await?;
    Ok(())
}

/// Reads one message; `Ok(None)` on a clean end of stream.
pub async fn read_message<R, T>(r: &mut R) -> Result<Option<T>, TeleopError>
where
    R: AsyncRead + Unpin,
    T: DeserializeOwned,
{
    let mut len = [0u8; 4];
    match r.read_exact(&mut len).await {
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_MESSAGE {
        return Err(TeleopError::Protocol(format!("message of {len} bytes exceeds the limit")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).await?;
    serde_json::from_slice(&body).map(Some).map_err(|e| TeleopError::Protocol(e.to_string()))
}
