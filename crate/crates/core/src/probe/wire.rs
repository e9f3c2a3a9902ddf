//! JSON-lines probe protocol. One request line, one response line.
//!
//! ```text
//! → {"op":"hello"}                                        ← {"ok":true,"feature_dim":8}
//! → {"op":"logprobs","tokens":[..],"mask_from":k}         ← {"ok":true,"logprobs":[..]}
//! → {"op":"update","samples":[[..],..]}                   ← {"ok":true}
//! → {"op":"features","tokens":[..],"mask_from":k}         ← {"ok":true,"z1":[..],"z2":[..]}
//! → {"op":"snapshot"} / {"op":"shutdown"}                 ← {"ok":true}
//! ```
//!
//! Any response may be `{"ok":false,"error":"..."}` instead.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Probe, ProbeError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Hello,
    Logprobs {
        tokens: Vec<u32>,
        mask_from: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        text: Option<String>,
    },
    Update {
        samples: Vec<Vec<u32>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        texts: Option<Vec<String>>,
    },
    Features {
        tokens: Vec<u32>,
        #[serde(default)]
        mask_from: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        text: Option<String>,
    },
    Snapshot,
    Shutdown,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
    /// `"remote"` when the server tokenizes text itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokenizer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z1: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z2: Option<Vec<f64>>,
}

impl Response {
    pub fn ok() -> Self {
        Self {
            ok: true,
            ..Self::default()
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        Self {
            ok: false,
            error: Some(message.into()),
            ..Self::default()
        }
    }
}

fn handle<P: Probe + ?Sized>(probe: &mut P, request: Request) -> Result<Response, ProbeError> {
    Ok(match request {
        Request::Hello => Response {
            feature_dim: Some(probe.feature_dim()),
            ..Response::ok()
        },
        Request::Logprobs {
            tokens, mask_from, ..
        } => Response {
            logprobs: Some(probe.logprobs(&tokens, mask_from)?),
            ..Response::ok()
        },
        Request::Update { samples, .. } => {
            let refs: Vec<&[u32]> = samples.iter().map(Vec::as_slice).collect();
            probe.update(&refs)?;
            Response::ok()
        }
        Request::Features {
            tokens, mask_from, ..
        } => {
            let f = probe.features(&tokens, mask_from)?;
            Response {
                z1: Some(f.z1),
                z2: Some(f.z2),
                ..Response::ok()
            }
        }
        Request::Snapshot => {
            probe.snapshot()?;
            Response::ok()
        }
        Request::Shutdown => Response::ok(),
    })
}

/// Serves `probe` until `shutdown` or end of input. Failures inside a request
/// are answered with `{"ok":false,...}` and the loop continues.
pub fn serve<P, R, W>(probe: &mut P, reader: R, mut writer: W) -> std::io::Result<()>
where
    P: Probe + ?Sized,
    R: BufRead,
    W: Write,
{
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (response, stop) = match serde_json::from_str::<Request>(&line) {
            Ok(Request::Shutdown) => (Response::ok(), true),
            Ok(request) => (
                handle(probe, request).unwrap_or_else(|e| Response::error(e.to_string())),
                false,
            ),
            Err(e) => (Response::error(format!("bad request: {e}")), false),
        };
        let mut text = serde_json::to_string(&response).map_err(std::io::Error::other)?;
        text.push('\n');
        // One write per response keeps small replies in a single segment.
        writer.write_all(text.as_bytes())?;
        writer.flush()?;
        if stop {
            break;
        }
    }
    Ok(())
}
