//! JSONL trace files, one request per line.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{Request, TraceRecord};

/// Parses a JSONL trace. Blank lines are skipped; anything else must be a
/// valid record. The result is sorted by arrival, stable in file order.
pub fn parse_trace(reader: impl Read, file: &Path) -> Result<Vec<Request>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            file: file.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: TraceRecord = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if rec.prompt.is_empty() {
            return Err(err("prompt must be non-empty".into()));
        }
        if rec.output_len == 0 {
            return Err(err("output_len must be at least 1".into()));
        }
        out.push(rec.into_request());
    }
    out.sort_by_key(|r| r.arrival_time);
    Ok(out)
}

pub fn load_trace(path: &Path) -> Result<Vec<Request>> {
    parse_trace(std::fs::File::open(path)?, path)
}

pub fn write_trace(path: &Path, requests: &[Request]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in requests {
        serde_json::to_writer(&mut w, &r.to_record())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
