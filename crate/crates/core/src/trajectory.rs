//! U-label trajectory export.
//!
//! Comma-separated text with a header row:
//!
//! ```text
//! epoch,id,modality,y,delta
//! 1,s00003,t,4.0000000000000002e-1,0.0000000000000000e0
//! ```
//!
//! One row per (epoch, sample, modality). `y` is the running u-label after
//! the epoch and `delta = y - y_m`. Reals carry 17 significant digits.

use std::io::{BufRead, Write};
use std::ops::RangeInclusive;

use crate::Modality;

pub const HEADER: &str = "epoch,id,modality,y,delta";

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub epoch: usize,
    pub id: String,
    pub modality: Modality,
    pub y: f64,
    pub delta: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum TrajectoryError {
    #[error("trajectory i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub fn write_header<W: Write>(mut w: W) -> std::io::Result<()> {
    writeln!(w, "{HEADER}")
}

pub fn write_records<W: Write>(mut w: W, records: &[TrajectoryRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(w, "{},{},{},{:.16e},{:.16e}", r.epoch, r.id, r.modality.code(), r.y, r.delta)?;
    }
    Ok(())
}

fn parse_line(line_no: usize, text: &str) -> Result<TrajectoryRecord, TrajectoryError> {
    let bad = |message: String| TrajectoryError::Parse { line: line_no, message };
    let fields: Vec<&str> = text.split(',').collect();
    let [epoch, id, modality, y, delta] = fields.as_slice() else {
        return Err(bad(format!("expected 5 fields, found {}", fields.len())));
    };
    Ok(TrajectoryRecord {
        epoch: epoch.parse().map_err(|e| bad(format!("epoch: {e}")))?,
        id: id.to_string(),
        modality: modality.parse().map_err(|e: String| bad(format!("modality: {e}")))?,
        y: y.parse().map_err(|e| bad(format!("y: {e}")))?,
        delta: delta.parse().map_err(|e| bad(format!("delta: {e}")))?,
    })
}

/// Reads a trajectory file, keeping records whose epoch lies in `epochs`.
pub fn read_filtered<R: BufRead>(reader: R, epochs: Option<RangeInclusive<usize>>) -> Result<Vec<TrajectoryRecord>, TrajectoryError> {
    let mut lines = reader.lines();
    let header = lines.next().transpose()?;
    if header.as_deref().map(str::trim_end) != Some(HEADER) {
        return Err(TrajectoryError::Parse { line: 1, message: format!("expected header `{HEADER}`") });
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_line(i + 2, line.trim_end())?;
        if epochs.as_ref().is_none_or(|r| r.contains(&rec.epoch)) {
            out.push(rec);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_filter() {
        let recs: Vec<TrajectoryRecord> = (1..=4)
            .flat_map(|e| {
                Modality::ALL.into_iter().map(move |m| TrajectoryRecord {
                    epoch: e,
                    id: format!("s{e}"),
                    modality: m,
                    y: 0.1 * e as f64 - 1.0 / 3.0,
                    delta: -0.0,
                })
            })
            .collect();
        let mut buf = Vec::new();
        write_header(&mut buf).unwrap();
        write_records(&mut buf, &recs).unwrap();
        let all = read_filtered(buf.as_slice(), None).unwrap();
        assert_eq!(all, recs);
        let mid = read_filtered(buf.as_slice(), Some(2..=3)).unwrap();
        assert_eq!(mid.len(), 6);
        assert!(mid.iter().all(|r| (2..=3).contains(&r.epoch)));
    }

    #[test]
    fn rejects_bad_rows() {
        let text = format!("{HEADER}\n1,s0,t,0.5\n");
        assert!(matches!(read_filtered(text.as_bytes(), None), Err(TrajectoryError::Parse { line: 2, .. })));
        assert!(read_filtered("nope\n".as_bytes(), None).is_err());
    }
}
