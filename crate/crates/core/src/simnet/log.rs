//! Structured event log records (one JSON object per line).

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BalancerId, Ms, ReplicaId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub ts: Ms,
    #[serde(flatten)]
    pub event: LogEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Meta {
        policy: String,
        cross_region: bool,
        horizon_ms: Ms,
        kv_budget: u64,
        replica_regions: Vec<String>,
        balancer_regions: Vec<String>,
    },
    /// A client sent a new request.
    Issue {
        request_id: String,
        region: String,
        session: String,
        prompt_len: u32,
        output_len: u32,
    },
    Enqueue {
        lb: BalancerId,
        request_id: String,
        forwarded: bool,
    },
    RouteLocal {
        lb: BalancerId,
        request_id: String,
        replica: ReplicaId,
    },
    Forward {
        lb: BalancerId,
        request_id: String,
        peer: BalancerId,
        /// Size of the local available set when the decision was made.
        local_avail: u32,
    },
    Probe {
        lb: BalancerId,
        local_avail: u32,
        remote_avail: u32,
        queue: u32,
    },
    /// Arrived at a failed balancer and was returned to its sender.
    Bounce {
        lb: BalancerId,
        request_id: String,
    },
    Admit {
        replica: ReplicaId,
        request_id: String,
        cached_len: u32,
        prompt_len: u32,
        memory: u64,
    },
    Pend {
        replica: ReplicaId,
        request_id: String,
    },
    FirstToken {
        replica: ReplicaId,
        request_id: String,
    },
    Complete {
        replica: ReplicaId,
        request_id: String,
        output_len: u32,
        memory: u64,
    },
    /// First token reached the client.
    ClientFirstToken {
        request_id: String,
    },
    /// Full response reached the client.
    ClientDone {
        request_id: String,
    },
    Failure {
        lb: BalancerId,
    },
    Detect {
        lb: BalancerId,
        adopter: BalancerId,
    },
    Reassign {
        replica: ReplicaId,
        from: BalancerId,
        to: BalancerId,
    },
    Recover {
        lb: BalancerId,
    },
    End {
        in_flight: u64,
    },
}

pub fn write_log(w: &mut impl Write, log: &[LogRecord]) -> Result<()> {
    for r in log {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn log_to_string(log: &[LogRecord]) -> String {
    let mut buf = Vec::new();
    write_log(&mut buf, log).expect("writing to memory");
    String::from_utf8(buf).expect("json is utf-8")
}

pub fn read_log(r: impl BufRead) -> Result<Vec<LogRecord>> {
    let mut out = Vec::new();
    for (index, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::MalformedLog {
            index,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
