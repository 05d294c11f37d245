//! Prevalence, specialization and identifier scores, ranking, and removal
//! of over-general patterns from judged applications.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, BufRead};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::code::{parse_function, token_texts, Ast};
use crate::corpus::TrainingPair;

use super::apply::apply;
use super::matching::find_matches;
use super::mine::{extract_edit, ConcreteEdit};
use super::{EditPattern, PatternScore};

/// A training pair prepared for scoring: parsed normal side, tokenized
/// vulnerable side and the injection location.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub id: String,
    pub normal: Ast,
    pub vulnerable_tokens: Vec<String>,
    pub lines: (usize, usize),
    pub vuln_type: String,
    pub edit: ConcreteEdit,
}

impl LabeledSample {
    pub fn from_pair(p: &TrainingPair) -> Result<Self, String> {
        let normal = parse_function(&p.normal).map_err(|e| format!("normal side: {e}"))?;
        let vulnerable =
            parse_function(&p.vulnerable).map_err(|e| format!("vulnerable side: {e}"))?;
        let mut edit = extract_edit(&normal, &vulnerable).map_err(|e| e.to_string())?;
        edit.vuln_type = p.vuln_type.clone();
        edit.sample_id = p.id.clone();
        let lines = p.lines.map_or(edit.lines, |[s, e]| (s, e));
        Ok(LabeledSample {
            id: p.id.clone(),
            vulnerable_tokens: vulnerable
                .root
                .terminals()
                .into_iter()
                .map(str::to_string)
                .collect(),
            normal,
            lines,
            vuln_type: p.vuln_type.clone(),
            edit,
        })
    }
}

/// Outcomes of applying `p` at every matching site inside the sample's
/// known location: true when the result equals the vulnerable side token
/// for token.
pub fn applications_at_location(p: &EditPattern, s: &LabeledSample) -> Vec<bool> {
    find_matches(&p.lhs, &s.normal)
        .iter()
        .filter(|m| m.site_lines.0 >= s.lines.0 && m.site_lines.1 <= s.lines.1)
        .map(|m| match apply(m, p, &s.normal) {
            Ok(inj) => token_texts(&inj.ast.source).is_ok_and(|t| t == s.vulnerable_tokens),
            Err(_) => false,
        })
        .collect()
}

pub fn reproduces(p: &EditPattern, s: &LabeledSample) -> bool {
    applications_at_location(p, s).into_iter().any(|ok| ok)
}

/// Scores `p` on `training`. The specialization score averages match counts
/// over samples with at least one match; it is zero when nothing matches.
pub fn score(p: &EditPattern, training: &[LabeledSample]) -> PatternScore {
    let mut preval = 0u64;
    let mut matched_samples = 0u64;
    let mut total_matches = 0u64;
    for s in training {
        let n = find_matches(&p.lhs, &s.normal).len() as u64;
        if n > 0 {
            matched_samples += 1;
            total_matches += n;
        }
        if reproduces(p, s) {
            preval += 1;
        }
    }
    let spec = if total_matches == 0 {
        Ratio::from_integer(0)
    } else {
        Ratio::new(matched_samples, total_matches)
    };
    PatternScore::new(preval, spec, p.lhs.concrete_names() as u64)
}

/// Non-ascending by rank, ties to higher prevalence then lower id; keeps `k`.
pub fn filter_rank(mut patterns: Vec<EditPattern>, k: usize) -> Vec<EditPattern> {
    patterns.sort_by(|a, b| {
        b.scores
            .s_rank
            .cmp(&a.scores.s_rank)
            .then(b.scores.s_preval.cmp(&a.scores.s_preval))
            .then_with(|| a.id.cmp(&b.id))
    });
    patterns.truncate(k);
    patterns
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Tp,
    Fp,
}

/// One judged application of a pattern to a training sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub pattern_id: String,
    pub sample_id: String,
    pub label: Label,
}

pub fn read_judgments(reader: impl BufRead) -> io::Result<Vec<Judgment>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?,
        );
    }
    Ok(out)
}

/// Drops patterns whose false-positive share among judged applications is
/// strictly above one half. Unjudged patterns stay.
pub fn remove_overgeneral(patterns: Vec<EditPattern>, judgments: &[Judgment]) -> Vec<EditPattern> {
    let mut tally: HashMap<&str, (usize, usize)> = HashMap::new();
    for j in judgments {
        let t = tally.entry(j.pattern_id.as_str()).or_default();
        t.0 += 1;
        if j.label == Label::Fp {
            t.1 += 1;
        }
    }
    patterns
        .into_iter()
        .filter(|p| match tally.get(p.id.as_str()) {
            Some(&(total, fp)) => 2 * fp <= total,
            None => true,
        })
        .collect()
}

/// Draft judgments: every application at a known location, labeled by
/// whether it reproduces the vulnerable side. Meant for human review.
pub fn draft_judgments(patterns: &[EditPattern], training: &[LabeledSample]) -> Vec<Judgment> {
    let mut out = Vec::new();
    for p in patterns {
        for s in training {
            for ok in applications_at_location(p, s) {
                out.push(Judgment {
                    pattern_id: p.id.clone(),
                    sample_id: s.id.clone(),
                    label: if ok { Label::Tp } else { Label::Fp },
                });
            }
        }
    }
    out
}

/// Training samples no pattern reproduces, grouped by vulnerability label.
pub fn false_negative_report(
    patterns: &[EditPattern],
    training: &[LabeledSample],
) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for s in training
        .iter()
        .filter(|s| !patterns.iter().any(|p| reproduces(p, s)))
    {
        out.entry(s.vuln_type.clone())
            .or_default()
            .push(s.id.clone());
    }
    out
}
