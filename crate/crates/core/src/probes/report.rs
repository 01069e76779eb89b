//! Report files: line 1 is a header `{"report": kind, "version": n, "summary": ...}`,
//! every further line one row.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::ProbeError;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile<S, R> {
    pub report: String,
    pub version: u32,
    pub summary: S,
    pub rows: Vec<R>,
}

#[derive(Serialize, Deserialize)]
struct Header<S> {
    report: String,
    version: u32,
    summary: S,
}

pub fn write_report<S: Serialize, R: Serialize>(path: &Path, kind: &str, summary: &S, rows: &[R]) -> Result<(), ProbeError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    let header = Header { report: kind.to_string(), version: REPORT_VERSION, summary };
    writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for r in rows {
        writeln!(out, "{}", serde_json::to_string(r).expect("row serializes"))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a report of the expected kind; other versions are rejected.
pub fn read_report<S: DeserializeOwned, R: DeserializeOwned>(path: &Path, kind: &str) -> Result<ReportFile<S, R>, ProbeError> {
    let err = |message: String| ProbeError::Report { path: path.display().to_string(), message };
    let mut lines = BufReader::new(fs::File::open(path)?).lines();
    let first = lines.next().ok_or_else(|| err("empty report".into()))??;
    let header: Header<S> = serde_json::from_str(&first).map_err(|e| err(format!("line 1: {e}")))?;
    if header.report != kind {
        return Err(err(format!("expected a {kind} report, found {}", header.report)));
    }
    if header.version != REPORT_VERSION {
        return Err(err(format!("incompatible report version {} (expected {REPORT_VERSION})", header.version)));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", i + 2)))?);
    }
    Ok(ReportFile { report: header.report, version: header.version, summary: header.summary, rows })
}
