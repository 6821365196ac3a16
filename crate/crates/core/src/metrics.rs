//! Per-iteration training records and their CSV form.
//!
//! The CSV header is fixed; optional columns are written empty, never
//! dropped. Reals use 17 significant digits so that equal bytes imply equal
//! values.

use std::io::Write;

use crate::analysis::TrackingFit;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str =
    "iteration,epoch,wall_ms,batch_loss,ema_loss,var_trace,max_loss,tracking_a,tracking_b,smoothing_c";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub iteration: u64,
    /// `iteration · B / N`.
    pub epoch: f64,
    pub wall_ms: f64,
    pub batch_loss: f64,
    pub ema_loss: f64,
    /// Trace of the in-batch covariance of the weighted per-sample gradients.
    pub var_trace: Option<f64>,
    /// Largest per-sample training loss, on sweep iterations only.
    pub max_loss: Option<f64>,
    pub tracking: Option<TrackingFit>,
    pub smoothing_c: f64,
}

pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(format_real).unwrap_or_default()
}

/// Writes the header and one row per record. Wall-clock times are only
/// written when `timing` is set, otherwise the column is left empty so the
/// file is reproducible byte for byte.
pub fn write_csv<W: Write>(
    out: &mut W,
    records: &[MetricsRecord],
    timing: bool,
) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            format_real(r.epoch),
            if timing {
                format_real(r.wall_ms)
            } else {
                String::new()
            },
            format_real(r.batch_loss),
            format_real(r.ema_loss),
            opt(r.var_trace),
            opt(r.max_loss),
            opt(r.tracking.map(|t| t.a)),
            opt(r.tracking.map(|t| t.b)),
            format_real(r.smoothing_c),
        )?;
    }
    Ok(())
}

pub fn to_csv_string(records: &[MetricsRecord], timing: bool) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, records, timing).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("csv is ascii")
}

/// Parses a metrics CSV. A missing wall-clock value reads as 0; tracking
/// pair counts are not stored and read back as 0.
pub fn parse_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == CSV_HEADER => {}
        _ => {
            return Err(Error::InvalidArgument(
                "metrics csv: unexpected header".into(),
            ));
        }
    }
    let mut records = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(Error::InvalidArgument(format!(
                "metrics csv line {}: expected 10 fields, found {}",
                lineno + 1,
                fields.len()
            )));
        }
        let bad = |col: &str| {
            Error::InvalidArgument(format!("metrics csv line {}: bad {col}", lineno + 1))
        };
        let real = |i: usize, col: &str| fields[i].parse::<f64>().map_err(|_| bad(col));
        let opt_real = |i: usize, col: &str| -> Result<Option<f64>> {
            if fields[i].is_empty() {
                Ok(None)
            } else {
                real(i, col).map(Some)
            }
        };
        let a = opt_real(7, "tracking_a")?;
        let b = opt_real(8, "tracking_b")?;
        records.push(MetricsRecord {
            iteration: fields[0].parse().map_err(|_| bad("iteration"))?,
            epoch: real(1, "epoch")?,
            wall_ms: opt_real(2, "wall_ms")?.unwrap_or(0.0),
            batch_loss: real(3, "batch_loss")?,
            ema_loss: real(4, "ema_loss")?,
            var_trace: opt_real(5, "var_trace")?,
            max_loss: opt_real(6, "max_loss")?,
            tracking: match (a, b) {
                (Some(a), Some(b)) => Some(TrackingFit { a, b, n: 0 }),
                _ => None,
            },
            smoothing_c: real(9, "smoothing_c")?,
        });
    }
    Ok(records)
}
