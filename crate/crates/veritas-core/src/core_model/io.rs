//! Session-log (JSON lines) and capacity-trace (CSV) file formats.
//!
//! Floats are written with up to 9 significant digits; reading a file back
//! therefore reproduces every value to better than 1e-9 relative.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Deserialize;

use super::{CapacityTrace, ChunkRecord, QuantGrid, SessionLog, TcpState};
use crate::error::{Result, VeritasError};

pub(crate) const LOG_FORMAT: &str = "veritas-log/1";

/// Render a float with at most 9 significant digits.
pub(crate) fn sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    debug_assert!(x.is_finite());
    let mag = x.abs().log10().floor() as i32;
    let factor = 10f64.powi(8 - mag);
    let rounded = (x * factor).round() / factor;
    format!("{rounded}")
}

pub fn write_log(log: &SessionLog, path: &Path) -> Result<()> {
    log.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    write_log_to(log, &mut w)?;
    w.flush()?;
    Ok(())
}

pub(crate) fn write_log_to<W: Write>(log: &SessionLog, w: &mut W) -> Result<()> {
    writeln!(
        w,
        "{{\"format\":\"{LOG_FORMAT}\",\"delay_s\":{},\"chunk_duration_s\":{}}}",
        sig9(log.session_delay_s),
        sig9(log.chunk_duration_s)
    )?;
    for c in &log.chunks {
        let t = &c.tcp_at_start;
        writeln!(
            w,
            "{{\"n\":{},\"size_bytes\":{},\"start_s\":{},\"end_s\":{},\"quality\":{},\"buffer_s\":{},\
             \"tcp\":{{\"cwnd\":{},\"ssthresh\":{},\"rto_s\":{},\"min_rtt_s\":{},\"last_send_s\":{},\"srtt_s\":{}}}}}",
            c.index,
            c.size_bytes,
            sig9(c.start_s),
            sig9(c.end_s),
            c.quality_level,
            sig9(c.buffer_at_start_s),
            t.cwnd,
            t.ssthresh,
            sig9(t.rto_s),
            sig9(t.min_rtt_s),
            sig9(t.last_send_s),
            sig9(t.srtt_s),
        )?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct HeaderLine {
    format: String,
    delay_s: f64,
    chunk_duration_s: f64,
}

#[derive(Deserialize)]
struct TcpLine {
    cwnd: u64,
    ssthresh: u64,
    rto_s: f64,
    min_rtt_s: f64,
    last_send_s: f64,
    srtt_s: f64,
}

#[derive(Deserialize)]
struct ChunkLine {
    n: usize,
    size_bytes: u64,
    start_s: f64,
    end_s: f64,
    quality: usize,
    buffer_s: f64,
    tcp: TcpLine,
}

pub fn read_log(path: &Path) -> Result<SessionLog> {
    let reader = BufReader::new(File::open(path)?);
    read_log_from(reader)
}

pub(crate) fn read_log_from<R: Read>(reader: BufReader<R>) -> Result<SessionLog> {
    let mut lines = reader.lines();
    let header_text = match lines.next() {
        Some(line) => line?,
        None => {
            return Err(VeritasError::Parse {
                line: 1,
                why: "missing header line".into(),
            })
        }
    };
    let header: HeaderLine =
        serde_json::from_str(&header_text).map_err(|e| VeritasError::Parse {
            line: 1,
            why: e.to_string(),
        })?;
    if header.format != LOG_FORMAT {
        return Err(VeritasError::Parse {
            line: 1,
            why: format!(
                "unsupported format {:?}, expected {LOG_FORMAT:?}",
                header.format
            ),
        });
    }
    let mut chunks = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let raw: ChunkLine = serde_json::from_str(&text).map_err(|e| VeritasError::Parse {
            line: line_no,
            why: e.to_string(),
        })?;
        chunks.push(ChunkRecord {
            index: raw.n,
            size_bytes: raw.size_bytes,
            start_s: raw.start_s,
            end_s: raw.end_s,
            quality_level: raw.quality,
            buffer_at_start_s: raw.buffer_s,
            tcp_at_start: TcpState {
                cwnd: raw.tcp.cwnd,
                ssthresh: raw.tcp.ssthresh,
                rto_s: raw.tcp.rto_s,
                min_rtt_s: raw.tcp.min_rtt_s,
                last_send_s: raw.tcp.last_send_s,
                srtt_s: raw.tcp.srtt_s,
            },
        });
    }
    SessionLog::new(chunks, header.delay_s, header.chunk_duration_s)
}

pub fn write_trace(trace: &CapacityTrace, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "window_start_s,mbps")?;
    for (i, v) in trace.values().iter().enumerate() {
        writeln!(w, "{},{}", sig9(i as f64 * trace.grid.delta_s), sig9(*v))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a capacity trace whose rows must sit at multiples of `grid.delta_s`.
pub fn read_trace(path: &Path, grid: &QuantGrid) -> Result<CapacityTrace> {
    let reader = BufReader::new(File::open(path)?);
    let mut values = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let text = line?;
        if i == 0 {
            if text.trim() != "window_start_s,mbps" {
                return Err(VeritasError::Parse {
                    line: 1,
                    why: format!(
                        "expected header 'window_start_s,mbps', got {:?}",
                        text.trim()
                    ),
                });
            }
            continue;
        }
        if text.trim().is_empty() {
            continue;
        }
        let mut parts = text.splitn(2, ',');
        let parse = |s: Option<&str>, what: &str| -> Result<f64> {
            s.ok_or_else(|| VeritasError::Parse {
                line: line_no,
                why: format!("missing {what}"),
            })?
            .trim()
            .parse::<f64>()
            .map_err(|e| VeritasError::Parse {
                line: line_no,
                why: format!("{what}: {e}"),
            })
        };
        let start = parse(parts.next(), "window_start_s")?;
        let mbps = parse(parts.next(), "mbps")?;
        let expected = (values.len()) as f64 * grid.delta_s;
        if (start - expected).abs() > 1e-6 * grid.delta_s.max(1.0) {
            return Err(VeritasError::Parse {
                line: line_no,
                why: format!(
                    "window_start_s {start} is not at the expected multiple {expected} of delta"
                ),
            });
        }
        values.push(mbps);
    }
    CapacityTrace::new(*grid, values)
}
