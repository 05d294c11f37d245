//! Checked-in pattern data: the manual catalog, safety-check seed patterns
//! and the mutation rules. Each file is verified against a pinned hash.

use std::path::Path;

use serde::Deserialize;

use super::mutate::{mutate, MutationRule};
use super::score::filter_rank;
use super::{sha256_hex, EditPattern, PatternError, PatternStore};

pub const CATALOG_JSON: &str = include_str!("../../data/catalog.json");
pub const SEEDS_JSON: &str = include_str!("../../data/seeds.json");
pub const RULES_JSON: &str = include_str!("../../data/mutation_rules.json");

pub const CATALOG_SHA256: &str = "2651414667691796fa12348a731f6a41e1ee12eb82f25c03635c4e005dde28c2";
pub const SEEDS_SHA256: &str = "96ef4f0059db918bd0004e06c8c42b4fcc10284d013bffd123fe762dc470874d";
pub const RULES_SHA256: &str = "86f58caf8fe4e08b84b00550b53fab0739f68b6f7ca62d36f254a330c6d628b7";

/// Function-name globs of the catalog's call patterns; the rule-based
/// locator treats calls to these as interesting.
pub const CALL_GLOBS: &[&str] = &[
    "*mutex*",
    "*TCHECK*",
    "*assert*",
    "*free*",
    "*Free*",
    "*destruct*",
    "*destroy*",
    "*unref*",
    "*clear*",
    "memset",
    "kcalloc",
    "calloc",
];

fn verify(name: &str, text: &str, expected: &str) -> Result<(), PatternError> {
    let found = sha256_hex(text.as_bytes());
    if found != expected {
        return Err(PatternError::HashMismatch {
            name: name.into(),
            expected: expected.into(),
            found,
        });
    }
    Ok(())
}

/// Parses a catalog file, rejecting content that does not match the pin.
pub fn parse_catalog(text: &str) -> Result<Vec<EditPattern>, PatternError> {
    verify("catalog", text, CATALOG_SHA256)?;
    Ok(PatternStore::from_json(text)?.patterns)
}

pub fn load_catalog_file(path: &Path) -> Result<Vec<EditPattern>, PatternError> {
    parse_catalog(&std::fs::read_to_string(path)?)
}

/// The 20 manually defined patterns.
pub fn load_manual_catalog() -> Result<Vec<EditPattern>, PatternError> {
    parse_catalog(CATALOG_JSON)
}

/// Safety-check deletion seeds (`if (h0) return NULL;` and its braced form)
/// from which the mutation rules derive the error-code and exit variants.
pub fn load_seed_patterns() -> Result<Vec<EditPattern>, PatternError> {
    verify("seeds", SEEDS_JSON, SEEDS_SHA256)?;
    Ok(PatternStore::from_json(SEEDS_JSON)?.patterns)
}

#[derive(Deserialize)]
struct RuleFile {
    version: u32,
    rules: Vec<MutationRule>,
}

pub fn load_mutation_rules() -> Result<Vec<MutationRule>, PatternError> {
    verify("mutation rules", RULES_JSON, RULES_SHA256)?;
    let f: RuleFile =
        serde_json::from_str(RULES_JSON).map_err(|e| PatternError::Store(e.to_string()))?;
    if f.version != 1 {
        return Err(PatternError::Store(format!(
            "unsupported rule file version {}",
            f.version
        )));
    }
    Ok(f.rules)
}

/// Catalog plus seeds, closed under the mutation rules and ranked. This is
/// the default store when nothing has been mined.
pub fn shipped_patterns() -> Result<Vec<EditPattern>, PatternError> {
    let mut base = load_manual_catalog()?;
    base.extend(load_seed_patterns()?);
    let closed = mutate(&base, &load_mutation_rules()?)?;
    Ok(filter_rank(closed, usize::MAX))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::parse_function;
    use crate::pattern::{apply, find_matches, Template};

    #[test]
    fn pinned_hashes() {
        assert_eq!(sha256_hex(CATALOG_JSON.as_bytes()), CATALOG_SHA256);
        assert_eq!(sha256_hex(SEEDS_JSON.as_bytes()), SEEDS_SHA256);
        assert_eq!(sha256_hex(RULES_JSON.as_bytes()), RULES_SHA256);
        let tampered = CATALOG_JSON.replacen("Race Condition", "Race", 1);
        assert!(matches!(
            parse_catalog(&tampered),
            Err(PatternError::HashMismatch { .. })
        ));
    }

    #[test]
    fn catalog_has_twenty_labeled_patterns() {
        let cat = load_manual_catalog().unwrap();
        assert_eq!(cat.len(), 20);
        let labels: std::collections::BTreeSet<_> =
            cat.iter().map(|p| p.vuln_type.as_str()).collect();
        assert_eq!(
            labels.into_iter().collect::<Vec<_>>(),
            [
                "Memory Allocation",
                "Memory Leak CWE-401",
                "Race Condition",
                "Type Error",
                "Uninitialized Variable CWE-457",
                "check-deletion"
            ]
        );
    }

    fn catalog_entry(id: &str) -> EditPattern {
        load_manual_catalog()
            .unwrap()
            .into_iter()
            .find(|p| p.id == id)
            .unwrap()
    }

    fn inject(id: &str, body: &str) -> Option<String> {
        let p = catalog_entry(id);
        let ast = parse_function(&format!("void f() {{\n    {body}\n}}\n")).unwrap();
        let m = find_matches(&p.lhs, &ast);
        let inj = apply(m.first()?, &p, &ast).unwrap();
        Some(inj.ast.source)
    }

    #[test]
    fn catalog_examples() {
        assert_eq!(inject("cat-04", "my_free(p);").unwrap(), "void f() {\n}\n");
        assert_eq!(
            inject("cat-10", "static int x = 3;").unwrap(),
            "void f() {\n    int x = 3;\n}\n"
        );
        assert_eq!(
            inject("cat-11", "unsigned long n;").unwrap(),
            "void f() {\n    long n;\n}\n"
        );
        assert_eq!(
            inject("cat-12", "int64_t *v;").unwrap(),
            "void f() {\n    int *v;\n}\n"
        );
        assert_eq!(
            inject("cat-19", "p = kcalloc(n, sz, GFP);").unwrap(),
            "void f() {\n    p = kzalloc(n * sz, GFP);\n}\n"
        );
        assert_eq!(
            inject("cat-14", "rc = PTR_ERR;").unwrap(),
            "void f() {\n}\n"
        );
        assert!(inject("cat-05", "my_free(p);").is_none());
        assert_eq!(
            catalog_entry("cat-20").rhs.unwrap(),
            Template::from_c("h0 = malloc(h1*h2);").unwrap()
        );
    }

    #[test]
    fn shipped_store_closes_seeds_and_catalog() {
        let ps = shipped_patterns().unwrap();
        let shown: Vec<String> = ps.iter().map(EditPattern::display).collect();
        for s in [
            "if (h0) return -1; => EMPTY",
            "if (h0) { return -EINVAL; } => EMPTY",
            "if (h0) break; => EMPTY",
            "h0 = *free*(h1); => EMPTY",
            "kcalloc(h0, h1, h2); => kzalloc(h0 * h1, h2);",
        ] {
            assert!(shown.contains(&s.to_string()), "missing {s}: {shown:#?}");
        }
        let rules = load_mutation_rules().unwrap();
        assert_eq!(mutate(&ps, &rules).unwrap().len(), ps.len());
    }
}
