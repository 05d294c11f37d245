//! JSONL corpus ingestion.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::SourceUnit;

/// A record that could not be used, with the reason. Written to a sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub index: usize,
    pub reason: String,
}

/// Reads one unit per non-blank line. Malformed lines become rejections;
/// I/O errors abort.
pub fn read_units(reader: impl BufRead) -> io::Result<(Vec<(usize, SourceUnit)>, Vec<Rejection>)> {
    let mut units = Vec::new();
    let mut rejected = Vec::new();
    let mut index = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<SourceUnit>(&line) {
            Ok(unit) => units.push((index, unit)),
            Err(e) => rejected.push(Rejection {
                index,
                reason: format!("malformed record: {e}"),
            }),
        }
        index += 1;
    }
    Ok((units, rejected))
}

pub fn write_rejections(mut w: impl Write, rejected: &[Rejection]) -> io::Result<()> {
    for r in rejected {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
