//! Labeled normal/vulnerable function pairs used for mining and fine-tuning.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::code::ingest::Rejection;

/// One training pair. `lines` is the 1-based injection location in `normal`;
/// when absent it is recovered from the edit between the two versions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub id: String,
    #[serde(default)]
    pub project: String,
    pub normal: String,
    pub vulnerable: String,
    #[serde(default)]
    pub vuln_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lines: Option<[usize; 2]>,
}

pub fn read_pairs(reader: impl BufRead) -> io::Result<(Vec<TrainingPair>, Vec<Rejection>)> {
    let mut pairs = Vec::new();
    let mut rejected = Vec::new();
    let mut index = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TrainingPair>(&line) {
            Ok(p) => pairs.push(p),
            Err(e) => rejected.push(Rejection {
                index,
                reason: format!("malformed pair: {e}"),
            }),
        }
        index += 1;
    }
    Ok((pairs, rejected))
}

pub fn write_pairs(mut w: impl Write, pairs: &[TrainingPair]) -> io::Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

impl From<&crate::synth::Planted> for TrainingPair {
    fn from(p: &crate::synth::Planted) -> Self {
        let end = p.site_line + p.site_text.matches('\n').count();
        TrainingPair {
            id: p.unit.path.clone(),
            project: p.unit.project_id.clone(),
            normal: p.unit.text.clone(),
            vulnerable: p.vulnerable.clone(),
            vuln_type: p.vuln_type.clone(),
            lines: Some([p.site_line, end]),
        }
    }
}
