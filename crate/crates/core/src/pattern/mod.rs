//! Edit patterns: mining by anti-unification, scoring and ranking, the
//! manual catalog and mutation rules, and matching/applying against ASTs.

pub mod apply;
pub mod build;
pub mod catalog;
pub mod matching;
pub mod mine;
pub mod mutate;
pub mod score;
pub mod template;

use std::io::{Read, Write};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use apply::{apply, revert, Injection, RevertRecord};
pub use build::{build_store, MineReport};
pub use catalog::{load_manual_catalog, load_mutation_rules, load_seed_patterns, shipped_patterns};
pub use matching::{find_matches, glob_match, MatchBinding};
pub use mine::{anti_unify, cluster, extract_edit, ConcreteEdit};
pub use mutate::{mutate, MutationRule};
pub use score::{filter_rank, remove_overgeneral, score, Judgment, LabeledSample};
pub use template::Template;

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("trees are identical")]
    Identical,
    #[error("hole h{0} is unbound")]
    UnboundHole(u32),
    #[error("edits cannot be generalized together: {0}")]
    Incompatible(String),
    #[error("template syntax: {0}")]
    Syntax(String),
    #[error("edited function no longer parses: {0}")]
    Unparseable(String),
    #[error("{name} content hash mismatch: expected {expected}, found {found}")]
    HashMismatch {
        name: String,
        expected: String,
        found: String,
    },
    #[error("pattern store: {0}")]
    Store(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Mined,
    Manual,
    Mutated { from: String, rule: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatternScore {
    pub s_preval: u64,
    #[serde(with = "ratio_str")]
    pub s_spec: Ratio<u64>,
    pub s_ident: u64,
    #[serde(with = "ratio_str")]
    pub s_rank: Ratio<u64>,
}

impl Default for PatternScore {
    fn default() -> Self {
        PatternScore::new(0, Ratio::from_integer(0), 0)
    }
}

impl PatternScore {
    pub fn new(s_preval: u64, s_spec: Ratio<u64>, s_ident: u64) -> Self {
        let s_rank = Ratio::from_integer(s_preval) * s_spec * Ratio::from_integer(s_ident);
        PatternScore {
            s_preval,
            s_spec,
            s_ident,
            s_rank,
        }
    }
}

mod ratio_str {
    use num_rational::Ratio;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Ratio<u64>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{}/{}", r.numer(), r.denom()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Ratio<u64>, D::Error> {
        let s = String::deserialize(d)?;
        let (n, m) = s.split_once('/').unwrap_or((&s, "1"));
        let n: u64 = n.trim().parse().map_err(D::Error::custom)?;
        let m: u64 = m.trim().parse().map_err(D::Error::custom)?;
        if m == 0 {
            return Err(D::Error::custom("zero denominator"));
        }
        Ok(Ratio::new(n, m))
    }
}

/// A before/after template pair. `rhs == None` deletes the matched statement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditPattern {
    pub id: String,
    pub lhs: Template,
    pub rhs: Option<Template>,
    pub vuln_type: String,
    pub provenance: Provenance,
    pub scores: PatternScore,
}

impl EditPattern {
    /// Checks that every right-hand hole is bound by the left-hand side.
    pub fn validate(&self) -> Result<(), PatternError> {
        if let Some(rhs) = &self.rhs {
            let bound = self.lhs.holes();
            if let Some(h) = rhs.holes().into_iter().find(|h| !bound.contains(h)) {
                return Err(PatternError::UnboundHole(h));
            }
        }
        Ok(())
    }

    /// Structural identity: lhs and rhs s-expressions.
    pub fn key(&self) -> (String, String) {
        (
            self.lhs.to_sexpr(),
            template::rhs_to_string(self.rhs.as_ref()),
        )
    }

    /// Deterministic id derived from structure.
    pub fn content_id(prefix: &str, lhs: &Template, rhs: Option<&Template>) -> String {
        let mut h = Sha256::new();
        h.update(lhs.to_sexpr().as_bytes());
        h.update(b"=>");
        h.update(template::rhs_to_string(rhs).as_bytes());
        format!("{prefix}-{}", &hex::encode(h.finalize())[..12])
    }

    pub fn is_deletion(&self) -> bool {
        self.rhs.is_none()
    }

    pub fn display(&self) -> String {
        format!(
            "{} => {}",
            self.lhs.display(),
            self.rhs
                .as_ref()
                .map_or_else(|| "EMPTY".to_string(), Template::display)
        )
    }
}

#[derive(Serialize, Deserialize)]
struct PatternRecord {
    id: String,
    lhs: String,
    rhs: String,
    vuln_type: String,
    provenance: Provenance,
    scores: PatternScore,
}

impl Serialize for EditPattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PatternRecord {
            id: self.id.clone(),
            lhs: self.lhs.to_sexpr(),
            rhs: template::rhs_to_string(self.rhs.as_ref()),
            vuln_type: self.vuln_type.clone(),
            provenance: self.provenance.clone(),
            scores: self.scores,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for EditPattern {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let r = PatternRecord::deserialize(d)?;
        let p = EditPattern {
            id: r.id,
            lhs: Template::parse_sexpr(&r.lhs).map_err(D::Error::custom)?,
            rhs: template::rhs_from_string(&r.rhs).map_err(D::Error::custom)?,
            vuln_type: r.vuln_type,
            provenance: r.provenance,
            scores: r.scores,
        };
        p.validate().map_err(D::Error::custom)?;
        Ok(p)
    }
}

pub const STORE_VERSION: u32 = 1;

/// Versioned pattern file: `{"version", "patterns": [...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternStore {
    pub version: u32,
    pub patterns: Vec<EditPattern>,
}

impl PatternStore {
    pub fn new(patterns: Vec<EditPattern>) -> Self {
        PatternStore {
            version: STORE_VERSION,
            patterns,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("store serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, PatternError> {
        let store: PatternStore =
            serde_json::from_str(text).map_err(|e| PatternError::Store(e.to_string()))?;
        if store.version != STORE_VERSION {
            return Err(PatternError::Store(format!(
                "unsupported version {}",
                store.version
            )));
        }
        Ok(store)
    }

    pub fn read(mut r: impl Read) -> Result<Self, PatternError> {
        let mut s = String::new();
        r.read_to_string(&mut s)?;
        Self::from_json(&s)
    }

    pub fn write(&self, mut w: impl Write) -> Result<(), PatternError> {
        w.write_all(self.to_json().as_bytes())?;
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_is_exact_product() {
        let s = PatternScore::new(3, Ratio::new(2, 3), 2);
        assert_eq!(s.s_rank, Ratio::from_integer(4));
        assert_eq!(
            PatternScore::new(5, Ratio::new(1, 7), 0).s_rank,
            Ratio::from_integer(0)
        );
    }

    #[test]
    fn pattern_json_round_trip() {
        let p = EditPattern {
            id: "p1".into(),
            lhs: Template::from_c("h0[h1-1]=0;").unwrap(),
            rhs: Some(Template::from_c("h0[h1]=0;").unwrap()),
            vuln_type: "CWE-193".into(),
            provenance: Provenance::Mutated {
                from: "p0".into(),
                rule: "error-code".into(),
            },
            scores: PatternScore::new(2, Ratio::new(1, 2), 1),
        };
        let json = serde_json::to_value(&p).unwrap();
        assert_eq!(json["scores"]["s_spec"], "1/2");
        assert_eq!(json["provenance"]["kind"], "mutated");
        let back: EditPattern = serde_json::from_value(json).unwrap();
        assert_eq!(back, p);
        let store = PatternStore::new(vec![p]);
        assert_eq!(PatternStore::from_json(&store.to_json()).unwrap(), store);
    }

    #[test]
    fn unbound_rhs_hole_is_rejected() {
        let json = r#"{"id":"x","lhs":"$h0","rhs":"$h1","vuln_type":"","provenance":{"kind":"manual"},
            "scores":{"s_preval":0,"s_spec":"0/1","s_ident":0,"s_rank":"0/1"}}"#;
        assert!(serde_json::from_str::<EditPattern>(json).is_err());
    }
}
