//! Per-cell trace CSV: `iter,loss,step_size,rel_error,dist_estimate,wall_ms`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::solver::IterationRecord;

pub const HEADER: &str = "iter,loss,step_size,rel_error,dist_estimate,wall_ms";

/// One row per record; floats carry 17 significant digits, absent
/// optional values are empty fields.
pub fn write_trace_csv(records: &[IterationRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(HEADER);
    out.push('\n');
    for r in records {
        let _ = write!(
            out,
            "{},{:.16e},{:.16e},{:.16e},",
            r.t, r.loss, r.step_size, r.rel_error
        );
        if let Some(v) = r.dist_estimate {
            let _ = write!(out, "{v:.16e}");
        }
        out.push(',');
        if let Some(v) = r.wall_ms {
            let _ = write!(out, "{v:.16e}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<IterationRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(HEADER) => {}
        other => {
            return Err(Error::Decode(format!(
                "trace CSV header {other:?}, expected {HEADER:?}"
            )))
        }
    }
    lines
        .enumerate()
        .map(|(k, line)| {
            let bad =
                |what: &str| Error::Decode(format!("trace CSV line {}: {what} in {line:?}", k + 2));
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(bad("expected 6 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
            let opt = |s: &str| {
                if s.is_empty() {
                    Ok(None)
                } else {
                    num(s).map(Some)
                }
            };
            Ok(IterationRecord {
                t: fields[0].parse().map_err(|_| bad("bad iteration"))?,
                loss: num(fields[1])?,
                step_size: num(fields[2])?,
                rel_error: num(fields[3])?,
                dist_estimate: opt(fields[4])?,
                wall_ms: opt(fields[5])?,
            })
        })
        .collect()
}
