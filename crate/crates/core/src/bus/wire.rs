//! Newline-delimited JSON wire format shared by TCP, WebSocket and stream
//! files.
//!
//! A connection opens with the client's [`Hello`]; the server answers with
//! [`ServerHello::Welcome`] or [`ServerHello::Refused`] and closes on
//! refusal. Afterwards the server sends one [`Envelope`] per line and the
//! client sends [`ClientRequest`] lines.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Envelope, Payload, TopicRegistry};
use crate::error::{Result, TeleopError};

pub const PROTOCOL_VERSION: &str = "teleop/1";

pub fn encode_envelope(env: &Envelope) -> Result<String> {
    Ok(serde_json::to_string(env)?)
}

pub fn decode_envelope(line: &str) -> Result<Envelope> {
    Ok(serde_json::from_str(line.trim_end_matches(['\r', '\n']))?)
}

/// Writes `value` as one JSON line.
pub fn write_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<()> {
    let mut line = serde_json::to_vec(value)?;
    line.push(b'\n');
    w.write_all(&line)?;
    w.flush()?;
    Ok(())
}

/// Next non-empty line, or `None` at end of input.
pub fn read_line<R: BufRead>(r: &mut R, buf: &mut String) -> Result<Option<usize>> {
    loop {
        buf.clear();
        let n = r.read_line(buf)?;
        if n == 0 {
            return Ok(None);
        }
        if !buf.trim().is_empty() {
            return Ok(Some(n));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hello {
    pub hello: String,
    pub registry_hash: String,
    #[serde(default)]
    pub subscribe: Vec<String>,
}

impl Hello {
    pub fn new(registry: &TopicRegistry, subscribe: &[&str]) -> Self {
        Self {
            hello: PROTOCOL_VERSION.to_string(),
            registry_hash: registry.hash(),
            subscribe: subscribe.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Checks version first, then the registry digest.
    pub fn verify(&self, registry: &TopicRegistry) -> Result<()> {
        if self.hello != PROTOCOL_VERSION {
            return Err(TeleopError::VersionMismatch {
                local: PROTOCOL_VERSION.to_string(),
                remote: self.hello.clone(),
            });
        }
        let local = registry.hash();
        if self.registry_hash != local {
            return Err(TeleopError::RegistryMismatch {
                local,
                remote: self.registry_hash.clone(),
            });
        }
        for t in &self.subscribe {
            registry.kind_of(t)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ServerHello {
    Welcome {
        welcome: String,
        registry_hash: String,
    },
    Refused {
        error: String,
        detail: String,
    },
}

impl ServerHello {
    pub fn welcome(registry: &TopicRegistry) -> Self {
        ServerHello::Welcome {
            welcome: PROTOCOL_VERSION.to_string(),
            registry_hash: registry.hash(),
        }
    }

    pub fn refusal(err: &TeleopError) -> Self {
        let error = match err {
            TeleopError::VersionMismatch { .. } => "version_mismatch",
            TeleopError::RegistryMismatch { .. } => "registry_mismatch",
            TeleopError::UnknownTopic(_) => "unknown_topic",
            _ => "bad_hello",
        };
        ServerHello::Refused {
            error: error.to_string(),
            detail: err.to_string(),
        }
    }

    /// Turns a refusal back into the matching error on the client side.
    pub fn into_result(self, registry: &TopicRegistry) -> Result<()> {
        match self {
            ServerHello::Welcome {
                welcome,
                registry_hash,
            } => {
                if welcome != PROTOCOL_VERSION {
                    return Err(TeleopError::VersionMismatch {
                        local: PROTOCOL_VERSION.into(),
                        remote: welcome,
                    });
                }
                if registry_hash != registry.hash() {
                    return Err(TeleopError::RegistryMismatch {
                        local: registry.hash(),
                        remote: registry_hash,
                    });
                }
                Ok(())
            }
            ServerHello::Refused { error, detail } => Err(match error.as_str() {
                "version_mismatch" => TeleopError::VersionMismatch {
                    local: PROTOCOL_VERSION.into(),
                    remote: detail,
                },
                "registry_mismatch" => TeleopError::RegistryMismatch {
                    local: registry.hash(),
                    remote: detail,
                },
                _ => TeleopError::Config(format!("bridge refused: {detail}")),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ClientRequest {
    /// The hub assigns the sequence number.
    Publish {
        topic: String,
        stamp_us: u64,
        #[serde(flatten)]
        payload: Payload,
    },
    Subscribe {
        topics: Vec<String>,
    },
}
