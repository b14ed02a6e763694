use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

/// Gate state and losses at one logged training step.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub alpha: f64,
    pub beta: f64,
    pub weights: Vec<f64>,
    pub loss: f64,
    pub val_mpjpe: f64,
}

pub fn trace_header(layers: usize) -> String {
    let mut h = String::from("step,alpha,beta");
    for l in 1..=layers {
        write!(h, ",w{l}").unwrap();
    }
    h.push_str(",loss,val_mpjpe");
    h
}

/// CSV text with one line per row. Values use the shortest representation
/// that round-trips, so a trace is byte-identical iff the runs were.
pub fn trace_to_csv(rows: &[TraceRow], layers: usize) -> String {
    trace_to_csv_with(rows, layers, |x| format!("{x:?}"))
}

/// [`trace_to_csv`] with a caller-chosen number format.
pub fn trace_to_csv_with(rows: &[TraceRow], layers: usize, num: impl Fn(f64) -> String) -> String {
    let mut out = trace_header(layers);
    out.push('\n');
    for r in rows {
        write!(out, "{},{},{}", r.step, num(r.alpha), num(r.beta)).unwrap();
        for w in &r.weights {
            write!(out, ",{}", num(*w)).unwrap();
        }
        writeln!(out, ",{},{}", num(r.loss), num(r.val_mpjpe)).unwrap();
    }
    out
}

pub fn write_trace(path: &Path, rows: &[TraceRow], layers: usize) -> Result<()> {
    fs::write(path, trace_to_csv(rows, layers)).map_err(|e| Error::io(path, e))
}

/// Parses a trace written by [`write_trace`].
pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace(&text)
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::format(0, "empty trace"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 5 || cols[..3] != ["step", "alpha", "beta"] || cols[cols.len() - 2..] != ["loss", "val_mpjpe"] {
        return Err(Error::format(0, format!("unexpected trace header `{header}`")));
    }
    let layers = cols.len() - 5;
    let mut offset = header.len() as u64 + 1;
    let mut rows = Vec::new();
    for line in lines {
        let bad = || Error::format(offset, format!("malformed trace row `{line}`"));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        rows.push(TraceRow {
            step: f[0].parse().map_err(|_| bad())?,
            alpha: num(f[1])?,
            beta: num(f[2])?,
            weights: f[3..3 + layers].iter().map(|s| num(s)).collect::<Result<_>>()?,
            loss: num(f[3 + layers])?,
            val_mpjpe: num(f[4 + layers])?,
        });
        offset += line.len() as u64 + 1;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_lists_every_layer() {
        assert_eq!(trace_header(3), "step,alpha,beta,w1,w2,w3,loss,val_mpjpe");
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            TraceRow { step: 0, alpha: 0.1, beta: 3.0, weights: vec![0.45, 0.5], loss: 12.5, val_mpjpe: 301.25 },
            TraceRow { step: 50, alpha: 1.0 / 3.0, beta: 2.9, weights: vec![1e-9, 0.999], loss: 0.1, val_mpjpe: 90.0 },
        ];
        let text = trace_to_csv(&rows, 2);
        assert_eq!(parse_trace(&text).unwrap(), rows);
        assert!(matches!(parse_trace("step,alpha\n"), Err(Error::Format { .. })));
        let broken = text.replace("301.25", "x");
        assert!(matches!(parse_trace(&broken), Err(Error::Format { offset, .. }) if offset > 0));
    }
}
