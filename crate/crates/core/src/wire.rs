//! Wire protocol v1 for external engines.
//!
//! Newline-delimited UTF-8 JSON over a byte stream (stdio pipe or TCP), one
//! request in flight per connection. Every message carries `"v": 1`.
//!
//! Requests:
//!
//! ```json
//! {"v":1,"op":"info"}
//! {"v":1,"op":"step","audio":"<path>","context":[1,2,3]}
//! ```
//!
//! Responses:
//!
//! ```json
//! {"v":1,"vocab_size":64,"languages":["en","zh"]}
//! {"v":1,"logits":[0.0,1.0]}
//! {"v":1,"error":"message"}
//! ```

use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

/// Request message. `audio` and `context` are present only for `step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub v: u32,
    pub op: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audio: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub context: Option<Vec<u32>>,
}

impl Request {
    pub fn info() -> Self {
        Self {
            v: PROTOCOL_VERSION,
            op: "info".to_string(),
            audio: None,
            context: None,
        }
    }

    pub fn step(audio: impl Into<String>, context: Vec<u32>) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            op: "step".to_string(),
            audio: Some(audio.into()),
            context: Some(context),
        }
    }
}

/// Response message; exactly one of the three payload shapes is populated.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Response {
    pub v: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub languages: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<f32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    pub fn info(vocab_size: usize, languages: Vec<String>) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            vocab_size: Some(vocab_size),
            languages: Some(languages),
            ..Default::default()
        }
    }

    pub fn logits(logits: Vec<f32>) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            logits: Some(logits),
            ..Default::default()
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            error: Some(message.into()),
            ..Default::default()
        }
    }
}

/// Parse one request line. The error string is suitable for echoing back in
/// an error response.
pub fn parse_request(line: &str) -> Result<Request, String> {
    let req: Request =
        serde_json::from_str(line).map_err(|e| format!("malformed request: {e}"))?;
    if req.v != PROTOCOL_VERSION {
        return Err(format!("unsupported protocol version {}", req.v));
    }
    match req.op.as_str() {
        "info" => Ok(req),
        "step" => {
            if req.audio.is_none() || req.context.is_none() {
                Err("step requires `audio` and `context`".to_string())
            } else {
                Ok(req)
            }
        }
        other => Err(format!("unknown op `{other}`")),
    }
}
