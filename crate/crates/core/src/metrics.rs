//! Per-epoch training metrics and their CSV codec.
//!
//! Floats are written in shortest round-trip decimal form, so write-then-read
//! is lossless for any finite f64. Controller columns are empty for methods
//! that run without the constraint machinery.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("header mismatch: expected `{expected}`, got `{got}`")]
    HeaderMismatch { expected: String, got: String },
    #[error("line {line}: {detail}")]
    Malformed { line: usize, detail: String },
}

pub const CSV_HEADER: &str = "epoch,method,mean_R_single_raw,mean_R_mv_raw,mean_R_single_norm,\
mean_R_mv_norm,lambda,tau,violated,loss,grad_norm,zigzag_gap,wall_ms,config_hash";

/// One training-epoch record.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub method: String,
    pub mean_r_single_raw: f64,
    pub mean_r_mv_raw: f64,
    pub mean_r_single_norm: f64,
    pub mean_r_mv_norm: f64,
    pub lambda: Option<f64>,
    pub tau: Option<f64>,
    pub violated: Option<bool>,
    pub loss: f64,
    pub grad_norm: f64,
    pub zigzag_gap: f64,
    pub wall_ms: u64,
    pub config_hash: String,
}

/// Shortest decimal form that parses back to the same f64.
pub fn format_f64(v: f64) -> String {
    ryu::Buffer::new().format(v).to_string()
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_default()
}

pub fn render_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        let violated = match row.violated {
            None => String::new(),
            Some(true) => "true".into(),
            Some(false) => "false".into(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            row.epoch,
            row.method,
            format_f64(row.mean_r_single_raw),
            format_f64(row.mean_r_mv_raw),
            format_f64(row.mean_r_single_norm),
            format_f64(row.mean_r_mv_norm),
            opt_f64(row.lambda),
            opt_f64(row.tau),
            violated,
            format_f64(row.loss),
            format_f64(row.grad_norm),
            format_f64(row.zigzag_gap),
            row.wall_ms,
            row.config_hash,
        );
    }
    out
}

pub fn write_csv(path: &Path, rows: &[MetricsRow]) -> Result<(), MetricsError> {
    Ok(fs::write(path, render_csv(rows))?)
}

pub fn parse_csv(text: &str) -> Result<Vec<MetricsRow>, MetricsError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| MetricsError::Malformed { line: 1, detail: "empty file".into() })?;
    if header != CSV_HEADER {
        return Err(MetricsError::HeaderMismatch {
            expected: CSV_HEADER.into(),
            got: header.into(),
        });
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 14 {
            return Err(MetricsError::Malformed {
                line: line_no,
                detail: format!("expected 14 fields, got {}", fields.len()),
            });
        }
        let bad = |detail: String| MetricsError::Malformed { line: line_no, detail };
        let f = |s: &str, what: &str| -> Result<f64, MetricsError> {
            s.parse::<f64>().map_err(|e| bad(format!("{what}: {e}")))
        };
        let opt = |s: &str, what: &str| -> Result<Option<f64>, MetricsError> {
            if s.is_empty() {
                Ok(None)
            } else {
                f(s, what).map(Some)
            }
        };
        rows.push(MetricsRow {
            epoch: fields[0].parse().map_err(|e| bad(format!("epoch: {e}")))?,
            method: fields[1].to_string(),
            mean_r_single_raw: f(fields[2], "mean_R_single_raw")?,
            mean_r_mv_raw: f(fields[3], "mean_R_mv_raw")?,
            mean_r_single_norm: f(fields[4], "mean_R_single_norm")?,
            mean_r_mv_norm: f(fields[5], "mean_R_mv_norm")?,
            lambda: opt(fields[6], "lambda")?,
            tau: opt(fields[7], "tau")?,
            violated: match fields[8] {
                "" => None,
                "true" => Some(true),
                "false" => Some(false),
                other => return Err(bad(format!("violated: `{other}`"))),
            },
            loss: f(fields[9], "loss")?,
            grad_norm: f(fields[10], "grad_norm")?,
            zigzag_gap: f(fields[11], "zigzag_gap")?,
            wall_ms: fields[12].parse().map_err(|e| bad(format!("wall_ms: {e}")))?,
            config_hash: fields[13].to_string(),
        });
    }
    Ok(rows)
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>, MetricsError> {
    parse_csv(&fs::read_to_string(path)?)
}
