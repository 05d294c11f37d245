//! Concrete edit extraction and pattern generalization by anti-unification
//! with greedy agglomerative clustering.

use std::collections::{BTreeMap, HashMap};

use crate::code::{Ast, AstNode};

use super::template::{canonicalize, Template};
use super::{EditPattern, PatternError, PatternScore, Provenance};

/// A statement-level edit: `after == None` deletes `before`.
#[derive(Debug, Clone)]
pub struct ConcreteEdit {
    pub before: AstNode,
    pub after: Option<AstNode>,
    /// 1-based lines of `before` in the original function.
    pub lines: (usize, usize),
    pub vuln_type: String,
    pub sample_id: String,
}

impl ConcreteEdit {
    pub fn templates(&self) -> (Template, Option<Template>) {
        (
            Template::from_ast(&self.before),
            self.after.as_ref().map(Template::from_ast),
        )
    }
}

/// Descends from the roots while exactly one child differs, then widens to
/// the nearest statement. Removing one statement from a list yields a
/// deletion edit.
pub fn extract_edit(before: &Ast, after: &Ast) -> Result<ConcreteEdit, PatternError> {
    if before.root.same_shape(&after.root) {
        return Err(PatternError::Identical);
    }
    let mut chain: Vec<(&AstNode, &AstNode)> = vec![(&before.root, &after.root)];
    loop {
        let (b, a) = *chain.last().expect("chain starts non-empty");
        if b.kind != a.kind || b.is_leaf() || a.is_leaf() {
            break;
        }
        if b.children.len() == a.children.len() {
            let mut diffs = b
                .children
                .iter()
                .zip(&a.children)
                .filter(|(x, y)| !x.same_shape(y));
            match (diffs.next(), diffs.next()) {
                (Some(pair), None) => {
                    chain.push(pair);
                    continue;
                }
                _ => break,
            }
        }
        if b.children.len() == a.children.len() + 1 {
            let removed = (0..b.children.len()).find(|&i| {
                b.children[i].kind.is_statement()
                    && b.children
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, c)| c)
                        .zip(&a.children)
                        .all(|(x, y)| x.same_shape(y))
            });
            if let Some(i) = removed {
                let s = &b.children[i];
                return Ok(ConcreteEdit {
                    before: s.clone(),
                    after: None,
                    lines: (s.line, s.end_line),
                    vuln_type: String::new(),
                    sample_id: String::new(),
                });
            }
        }
        break;
    }
    let (b, a) = chain
        .iter()
        .rev()
        .find(|(b, a)| b.kind.is_statement() && a.kind.is_statement())
        .copied()
        .unwrap_or((&before.root, &after.root));
    Ok(ConcreteEdit {
        before: b.clone(),
        after: Some(a.clone()),
        lines: (b.line, b.end_line),
        vuln_type: String::new(),
        sample_id: String::new(),
    })
}

struct Lgg {
    holes: HashMap<Vec<String>, u32>,
}

impl Lgg {
    fn go(&mut self, ts: &[&Template]) -> Template {
        let first = ts[0];
        if ts.iter().all(|t| *t == first) && !first.has_holes() {
            return first.clone();
        }
        if let Template::Node { kind, children } = first {
            let same_shape = ts.iter().all(|t| matches!(t, Template::Node { kind: k, children: c } if k == kind && c.len() == children.len()));
            if same_shape {
                let kids = (0..children.len())
                    .map(|i| {
                        let column: Vec<&Template> = ts.iter().map(|t| &t.children()[i]).collect();
                        self.go(&column)
                    })
                    .collect();
                return Template::Node {
                    kind: *kind,
                    children: kids,
                };
            }
        }
        let key: Vec<String> = ts.iter().map(|t| t.to_sexpr()).collect();
        let next = self.holes.len() as u32;
        Template::Hole(*self.holes.entry(key).or_insert(next))
    }
}

/// Least general generalization of several (lhs, rhs) pairs with one shared
/// hole namespace: equal tuples of disagreeing subtrees share a hole.
pub fn generalize(
    pairs: &[(&Template, Option<&Template>)],
) -> Result<(Template, Option<Template>), PatternError> {
    let Some(first) = pairs.first() else {
        return Err(PatternError::Incompatible("no edits".into()));
    };
    let deletion = first.1.is_none();
    if pairs.iter().any(|p| p.1.is_none() != deletion) {
        return Err(PatternError::Incompatible(
            "deletions mixed with replacements".into(),
        ));
    }
    let mut lgg = Lgg {
        holes: HashMap::new(),
    };
    let lhs_col: Vec<&Template> = pairs.iter().map(|p| p.0).collect();
    let lhs = lgg.go(&lhs_col);
    let rhs = if deletion {
        None
    } else {
        let col: Vec<&Template> = pairs.iter().map(|p| p.1.expect("checked above")).collect();
        Some(lgg.go(&col))
    };
    let (lhs, rhs) = canonicalize(&lhs, rhs.as_ref());
    if let Some(r) = &rhs {
        let bound = lhs.holes();
        if let Some(h) = r.holes().into_iter().find(|h| !bound.contains(h)) {
            return Err(PatternError::UnboundHole(h));
        }
    }
    Ok((lhs, rhs))
}

fn mined(id: String, lhs: Template, rhs: Option<Template>, vuln_type: String) -> EditPattern {
    EditPattern {
        id,
        lhs,
        rhs,
        vuln_type,
        provenance: Provenance::Mined,
        scores: PatternScore::default(),
    }
}

fn majority(labels: impl Iterator<Item = String>) -> String {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    // BTreeMap iteration is sorted, so max_by_key keeps the last maximum;
    // reverse to prefer the lexicographically smallest label on ties.
    counts
        .into_iter()
        .rev()
        .max_by_key(|(_, c)| *c)
        .map(|(l, _)| l)
        .unwrap_or_default()
}

/// The generalization of all `edits` as one pattern.
pub fn anti_unify(edits: &[ConcreteEdit]) -> Result<EditPattern, PatternError> {
    let templates: Vec<(Template, Option<Template>)> =
        edits.iter().map(ConcreteEdit::templates).collect();
    let pairs: Vec<(&Template, Option<&Template>)> =
        templates.iter().map(|(l, r)| (l, r.as_ref())).collect();
    let (lhs, rhs) = generalize(&pairs)?;
    let vuln = majority(edits.iter().map(|e| e.vuln_type.clone()));
    Ok(mined(
        EditPattern::content_id("mined", &lhs, rhs.as_ref()),
        lhs,
        rhs,
        vuln,
    ))
}

struct Cluster {
    lhs: Template,
    rhs: Option<Template>,
    members: Vec<usize>,
}

/// Merge preference: more concrete terminals, then fewer holes.
type MergeKey = (usize, std::cmp::Reverse<usize>);

fn try_merge(a: &Cluster, b: &Cluster) -> Option<(Template, Option<Template>, MergeKey)> {
    let (lhs, rhs) = generalize(&[(&a.lhs, a.rhs.as_ref()), (&b.lhs, b.rhs.as_ref())]).ok()?;
    let kept = lhs.concrete_terminals();
    if kept == 0 {
        return None;
    }
    let holes = lhs.holes().len();
    Some((lhs, rhs, (kept, std::cmp::Reverse(holes))))
}

/// Hierarchical clustering: starting from one cluster per edit, repeatedly
/// merge the pair whose generalization keeps the most concrete terminals,
/// as long as at least one survives. Emits a pattern for every cluster
/// node, leaves first, deduplicated by structure.
pub fn cluster(edits: &[ConcreteEdit]) -> Vec<EditPattern> {
    let mut clusters: Vec<Cluster> = edits
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let (lhs, rhs) = e.templates();
            Cluster {
                lhs,
                rhs,
                members: vec![i],
            }
        })
        .collect();
    let mut active: Vec<bool> = vec![true; clusters.len()];
    let mut cache: HashMap<(usize, usize), Option<MergeKey>> = HashMap::new();

    loop {
        let mut best: Option<(MergeKey, usize, usize)> = None;
        for i in 0..clusters.len() {
            if !active[i] {
                continue;
            }
            for j in i + 1..clusters.len() {
                if !active[j] {
                    continue;
                }
                let key = *cache
                    .entry((i, j))
                    .or_insert_with(|| try_merge(&clusters[i], &clusters[j]).map(|m| m.2));
                if let Some(k) = key {
                    if best.as_ref().is_none_or(|(bk, _, _)| k > *bk) {
                        best = Some((k, i, j));
                    }
                }
            }
        }
        let Some((_, i, j)) = best else { break };
        let (lhs, rhs, _) = try_merge(&clusters[i], &clusters[j]).expect("cached merge is valid");
        let mut members = clusters[i].members.clone();
        members.extend(&clusters[j].members);
        members.sort_unstable();
        active[i] = false;
        active[j] = false;
        clusters.push(Cluster { lhs, rhs, members });
        active.push(true);
    }

    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for c in clusters {
        let (lhs, rhs) = canonicalize(&c.lhs, c.rhs.as_ref());
        let key = (lhs.to_sexpr(), super::template::rhs_to_string(rhs.as_ref()));
        if !seen.insert(key) {
            continue;
        }
        let vuln = majority(c.members.iter().map(|&m| edits[m].vuln_type.clone()));
        out.push(mined(format!("mined-{:04}", out.len()), lhs, rhs, vuln));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::{parse_function, parse_statement};
    use crate::pattern::matching::{instantiate, unify};

    fn edit(before: &str, after: &str) -> ConcreteEdit {
        let b = parse_statement(before, false).unwrap();
        let a = parse_statement(after, false).unwrap();
        ConcreteEdit {
            lines: (b.line, b.end_line),
            before: b,
            after: Some(a),
            vuln_type: String::new(),
            sample_id: String::new(),
        }
    }

    fn wrap(body: &str) -> Ast {
        parse_function(&format!("int f(int c) {{\n{body}\n}}\n")).unwrap()
    }

    #[test]
    fn deletion_edit() {
        let e = extract_edit(
            &wrap("x = 1;\nif (c) { return -1; }\ny = 2;"),
            &wrap("x = 1;\ny = 2;"),
        )
        .unwrap();
        assert!(e.after.is_none());
        assert_eq!(
            Template::from_ast(&e.before).display(),
            "if (c) { return -1; }"
        );
        assert_eq!(e.lines, (3, 3));
    }

    #[test]
    fn replacement_edit_is_statement_level() {
        let e = extract_edit(
            &wrap("x = 1;\nbuf[size-1]=0;\ny = 2;"),
            &wrap("x = 1;\nbuf[size]=0;\ny = 2;"),
        )
        .unwrap();
        assert_eq!(
            Template::from_ast(&e.before).display(),
            "buf[size - 1] = 0;"
        );
        assert_eq!(
            Template::from_ast(e.after.as_ref().unwrap()).display(),
            "buf[size] = 0;"
        );
        assert!(matches!(
            extract_edit(&wrap("x = 1;"), &wrap("x  =  1;")),
            Err(PatternError::Identical)
        ));
    }

    #[test]
    fn nested_edit_stops_at_inner_statement() {
        let e = extract_edit(
            &wrap("while (c) {\n    a = b;\n}"),
            &wrap("while (c) {\n    a = d;\n}"),
        )
        .unwrap();
        assert_eq!(e.lines, (3, 3));
        assert_eq!(Template::from_ast(&e.before).display(), "a = b;");
    }

    #[test]
    fn paper_instance() {
        let p = anti_unify(&[
            edit("buf[size-1]=0;", "buf[size]=0;"),
            edit("data[len-1]=0;", "data[len]=0;"),
        ])
        .unwrap();
        assert_eq!(p.lhs, Template::from_c("h0[h1-1]=0;").unwrap());
        assert_eq!(p.rhs, Some(Template::from_c("h0[h1]=0;").unwrap()));
    }

    #[test]
    fn single_edit_is_verbatim() {
        let e = edit("buf[size-1]=0;", "buf[size]=0;");
        let p = anti_unify(std::slice::from_ref(&e)).unwrap();
        assert!(p.lhs.holes().is_empty());
        assert_eq!(p.lhs, Template::from_ast(&e.before));
    }

    #[test]
    fn unbound_rhs_is_not_a_pattern() {
        assert!(matches!(
            anti_unify(&[edit("x = a;", "x = b;"), edit("y = c;", "y = d;")]),
            Err(PatternError::UnboundHole(_))
        ));
    }

    #[test]
    fn clustering_keeps_concrete_terminals() {
        let edits = [
            edit("buf[size-1]=0;", "buf[size]=0;"),
            edit("data[len-1]=0;", "data[len]=0;"),
            edit("if (p == NULL) return -1;", "if (p == NULL) return 0;"),
            edit("if (q == NULL) return -1;", "if (q == NULL) return 0;"),
        ];
        let pats = cluster(&edits);
        let shown: Vec<String> = pats.iter().map(EditPattern::display).collect();
        assert!(
            shown.contains(&"h0[h1 - 1] = 0; => h0[h1] = 0;".to_string()),
            "{shown:?}"
        );
        assert!(
            shown.contains(&"if (h0 == NULL) return -1; => if (h0 == NULL) return 0;".to_string())
        );
        // Leaves plus the two merges; merging across families would leave no concrete terminal
        // in common only if it were allowed, and every emitted pattern keeps one.
        assert!(pats.iter().all(|p| p.lhs.concrete_terminals() >= 1));
        for p in &pats {
            for e in &edits {
                if let Some((b, g)) = unify(&p.lhs, &e.before) {
                    let rhs = p.rhs.as_ref().unwrap();
                    let inst = instantiate(rhs, &b, &mut g.into_iter().map(|x| x.1)).unwrap();
                    assert!(inst.same_shape(e.after.as_ref().unwrap()));
                }
            }
        }
    }
}
