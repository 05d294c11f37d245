//! End-to-end store construction from training pairs.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::TrainingPair;

use super::catalog::{load_manual_catalog, load_mutation_rules, load_seed_patterns};
use super::score::false_negative_report;
use super::{
    cluster, filter_rank, mutate, remove_overgeneral, score, EditPattern, Judgment, LabeledSample,
    PatternError,
};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MineReport {
    pub pairs: usize,
    pub usable: usize,
    /// (pair id, reason) for pairs without a usable edit.
    pub rejected: Vec<(String, String)>,
    pub mined: usize,
    pub dropped_overgeneral: usize,
    pub kept_mined: usize,
    pub total: usize,
    /// Training pairs no stored pattern reproduces, by label.
    pub false_negatives: BTreeMap<String, Vec<String>>,
}

fn scored(patterns: Vec<EditPattern>, training: &[LabeledSample]) -> Vec<EditPattern> {
    patterns
        .into_par_iter()
        .map(|mut p| {
            p.scores = score(&p, training);
            p
        })
        .collect()
}

/// Mines, scores and keeps the best `top_k` patterns from `pairs`, merges
/// them with the catalog and seeds, closes the union under the mutation
/// rules and ranks everything on the same training set.
pub fn build_store(
    pairs: &[TrainingPair],
    judgments: &[Judgment],
    top_k: usize,
) -> Result<(Vec<EditPattern>, MineReport), PatternError> {
    let prepared: Vec<_> = pairs.par_iter().map(LabeledSample::from_pair).collect();
    let mut report = MineReport {
        pairs: pairs.len(),
        ..MineReport::default()
    };
    let mut training = Vec::new();
    for (p, s) in pairs.iter().zip(prepared) {
        match s {
            Ok(s) => training.push(s),
            Err(reason) => report.rejected.push((p.id.clone(), reason)),
        }
    }
    report.usable = training.len();

    let edits: Vec<_> = training.iter().map(|s| s.edit.clone()).collect();
    let mined = scored(cluster(&edits), &training);
    report.mined = mined.len();
    let judged = remove_overgeneral(mined, judgments);
    report.dropped_overgeneral = report.mined - judged.len();
    let kept = filter_rank(judged, top_k);
    report.kept_mined = kept.len();

    let mut seen = HashSet::new();
    let base: Vec<EditPattern> = kept
        .into_iter()
        .chain(load_manual_catalog()?)
        .chain(load_seed_patterns()?)
        .filter(|p| seen.insert(p.key()))
        .collect();
    let closed = mutate(&base, &load_mutation_rules()?)?;
    let ranked = filter_rank(scored(closed, &training), usize::MAX);
    report.total = ranked.len();
    report.false_negatives = false_negative_report(&ranked, &training);
    Ok((ranked, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::planted_corpus;

    #[test]
    fn store_covers_catalog_and_is_ranked() {
        let pairs: Vec<TrainingPair> = planted_corpus(12, 4)
            .iter()
            .map(TrainingPair::from)
            .collect();
        let (store, report) = build_store(&pairs, &[], 300).unwrap();
        assert_eq!(report.usable, 12);
        assert!(report.mined > 0);
        let ids: HashSet<&str> = store.iter().map(|p| p.id.as_str()).collect();
        for c in load_manual_catalog().unwrap() {
            assert!(ids.contains(c.id.as_str()), "{}", c.id);
        }
        assert!(store
            .windows(2)
            .all(|w| w[0].scores.s_rank >= w[1].scores.s_rank));
        assert!(store[0].scores.s_preval > 0);
        assert!(
            report.false_negatives.is_empty(),
            "{:?}",
            report.false_negatives
        );
        let (again, _) = build_store(&pairs, &[], 300).unwrap();
        assert_eq!(again, store);
    }

    #[test]
    fn top_k_caps_mined_patterns_only() {
        let pairs: Vec<TrainingPair> = planted_corpus(12, 4)
            .iter()
            .map(TrainingPair::from)
            .collect();
        let (_, report) = build_store(&pairs, &[], 1).unwrap();
        assert_eq!(report.kept_mined, 1);
        let (store, report) = build_store(&[], &[], 300).unwrap();
        assert_eq!(report.mined, 0);
        assert_eq!(store.len(), report.total);
    }

    #[test]
    fn unusable_pairs_are_reported() {
        let bad = TrainingPair {
            id: "x".into(),
            project: String::new(),
            normal: "int f() { return 1; }".into(),
            vulnerable: "int f() { return 1; }".into(),
            vuln_type: String::new(),
            lines: None,
        };
        let (_, report) = build_store(&[bad], &[], 300).unwrap();
        assert_eq!(report.rejected.len(), 1);
        assert_eq!(report.usable, 0);
    }
}
