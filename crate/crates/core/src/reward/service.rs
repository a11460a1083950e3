//! Line-delimited JSON reward service over standard streams or TCP.
//!
//! Request:  `{"op": "reward", "instance_id": "...", "signals": ["name", ...], "id": <any>?}`
//! Response: `{"id": <echo>?, "instance_id": "...", "reward": r, "supported": b, "alpha": a, "improvement": g}`
//! Error:    `{"id": <echo>?, "error": "<code>", "message": "..."}`
//!
//! Every request line gets exactly one response line; errors never close the connection.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::RewardContext;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Deserialize)]
struct Request {
    op: String,
    #[serde(default)]
    instance_id: Option<String>,
    #[serde(default)]
    signals: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<Value>,
    pub instance_id: String,
    pub reward: f64,
    pub supported: bool,
    pub alpha: f64,
    pub improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<Value>,
    pub error: String,
    pub message: String,
}

fn error_line(id: Option<Value>, code: &str, message: impl Into<String>) -> String {
    serde_json::to_string(&ErrorResponse {
        id,
        error: code.into(),
        message: message.into(),
    })
    .expect("error response serializes")
}

/// Answers one request line.
pub fn handle_line(ctx: &RewardContext, line: &str) -> String {
    let value: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return error_line(None, "malformed_request", e.to_string()),
    };
    let id = value.get("id").cloned();
    let req: Request = match serde_json::from_value(value) {
        Ok(r) => r,
        Err(e) => return error_line(id, "malformed_request", e.to_string()),
    };
    if req.op != "reward" {
        return error_line(id, "unknown_op", format!("unsupported op {:?}", req.op));
    }
    let (Some(instance_id), Some(signals)) = (req.instance_id, req.signals) else {
        return error_line(id, "malformed_request", "reward requests need instance_id and signals");
    };
    if ctx.position(&instance_id).is_none() {
        return error_line(id, "unknown_instance", format!("no instance {instance_id:?}"));
    }
    match ctx.reward_names(&instance_id, &signals) {
        Ok(r) => serde_json::to_string(&RewardResponse {
            id,
            instance_id: r.instance_id,
            reward: r.reward,
            supported: r.supported,
            alpha: r.alpha,
            improvement: r.improvement,
        })
        .expect("reward response serializes"),
        Err(e) => error_line(id, "internal", e.to_string()),
    }
}

/// Serves requests from `input` until end of stream.
pub fn serve_stream<R: BufRead, W: Write>(ctx: &RewardContext, input: R, mut output: W) -> Result<()> {
    for line in input.lines() {
        let line = line.map_err(|e| Error::Pipeline(format!("reading request: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = handle_line(ctx, &line);
        writeln!(output, "{reply}")
            .and_then(|_| output.flush())
            .map_err(|e| Error::Pipeline(format!("writing response: {e}")))?;
    }
    Ok(())
}

/// Accepts connections forever, one thread per connection.
pub fn serve_listener(ctx: Arc<RewardContext>, listener: TcpListener) -> Result<()> {
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let ctx = Arc::clone(&ctx);
        std::thread::spawn(move || {
            let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
            let reader = match stream.try_clone() {
                Ok(s) => BufReader::new(s),
                Err(e) => {
                    log::warn!("{peer}: {e}");
                    return;
                }
            };
            if let Err(e) = serve_stream(&ctx, reader, stream) {
                log::debug!("{peer}: connection closed: {e}");
            }
        });
    }
    Ok(())
}
