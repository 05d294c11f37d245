//! Unification of templates against statement subtrees.

use std::collections::BTreeMap;

use crate::code::{Ast, AstNode, NodeKind, Span};

use super::template::Template;

/// Case-sensitive glob with `*` wildcards at either end only.
pub fn glob_match(pattern: &str, text: &str) -> bool {
    let (lead, rest) = match pattern.strip_prefix('*') {
        Some(r) => (true, r),
        None => (false, pattern),
    };
    let (trail, core) = match rest.strip_suffix('*') {
        Some(c) => (true, c),
        None => (false, rest),
    };
    match (lead, trail) {
        (true, true) => text.contains(core),
        (true, false) => text.ends_with(core),
        (false, true) => text.starts_with(core),
        (false, false) => text == core,
    }
}

#[derive(Debug, Clone)]
pub struct MatchBinding {
    /// Child-index path from the function root to the matched statement.
    pub site_path: Vec<usize>,
    pub site_span: Span,
    pub site_lines: (usize, usize),
    pub bindings: BTreeMap<u32, AstNode>,
    /// (glob, matched lexeme) in template pre-order.
    pub glob_witnesses: Vec<(String, String)>,
}

impl MatchBinding {
    pub fn site<'a>(&self, ast: &'a Ast) -> &'a AstNode {
        ast.root
            .at_path(&self.site_path)
            .expect("binding path is valid for its tree")
    }
}

#[derive(Default)]
struct Unifier {
    bindings: BTreeMap<u32, AstNode>,
    globs: Vec<(String, String)>,
}

impl Unifier {
    fn unify(&mut self, t: &Template, n: &AstNode) -> bool {
        match t {
            Template::Hole(h) => match self.bindings.get(h) {
                Some(bound) => bound.same_shape(n),
                None => {
                    self.bindings.insert(*h, n.clone());
                    true
                }
            },
            Template::Leaf { kind, value } => {
                n.kind == *kind && n.value.as_deref() == Some(value.as_str())
            }
            Template::Glob { kind, pattern } => match &n.value {
                Some(v) if n.kind == *kind && glob_match(pattern, v) => {
                    self.globs.push((pattern.clone(), v.clone()));
                    true
                }
                _ => false,
            },
            Template::Node { kind, children } => {
                n.kind == *kind
                    && n.children.len() == children.len()
                    && children
                        .iter()
                        .zip(&n.children)
                        .all(|(t, c)| self.unify(t, c))
            }
        }
    }
}

/// Unifies `t` with `n` alone, returning bindings and glob witnesses.
pub fn unify(t: &Template, n: &AstNode) -> Option<(BTreeMap<u32, AstNode>, Vec<(String, String)>)> {
    let mut u = Unifier::default();
    u.unify(t, n).then_some((u.bindings, u.globs))
}

/// Statement subtrees with their paths, in source (pre-)order.
pub fn statements_with_paths(root: &AstNode) -> Vec<(Vec<usize>, &AstNode)> {
    fn go<'a>(n: &'a AstNode, path: &mut Vec<usize>, out: &mut Vec<(Vec<usize>, &'a AstNode)>) {
        for (i, c) in n.children.iter().enumerate() {
            path.push(i);
            if c.kind.is_statement() {
                out.push((path.clone(), c));
            }
            go(c, path, out);
            path.pop();
        }
    }
    let mut out = Vec::new();
    go(root, &mut Vec::new(), &mut out);
    out
}

/// All statement subtrees of `ast` that unify with `lhs`, in source order.
pub fn find_matches(lhs: &Template, ast: &Ast) -> Vec<MatchBinding> {
    if let Some(k) = lhs.kind() {
        if !k.is_statement() {
            return Vec::new();
        }
    }
    statements_with_paths(&ast.root)
        .into_iter()
        .filter_map(|(path, n)| {
            let (bindings, glob_witnesses) = unify(lhs, n)?;
            Some(MatchBinding {
                site_path: path,
                site_span: n.span,
                site_lines: (n.line, n.end_line),
                bindings,
                glob_witnesses,
            })
        })
        .collect()
}

/// Substitutes bindings (and glob witnesses, in pre-order) into `t`. Spans
/// of the result are meaningless; compare with `same_shape`.
pub fn instantiate(
    t: &Template,
    bindings: &BTreeMap<u32, AstNode>,
    globs: &mut dyn Iterator<Item = String>,
) -> Option<AstNode> {
    let dummy = Span::new(0, 0);
    Some(match t {
        Template::Hole(h) => bindings.get(h)?.clone(),
        Template::Leaf { kind, value } => AstNode::leaf(*kind, value.clone(), dummy, 0),
        Template::Glob { kind, .. } => AstNode::leaf(*kind, globs.next()?, dummy, 0),
        Template::Node { kind, children } => {
            let kids = children
                .iter()
                .map(|c| instantiate(c, bindings, globs))
                .collect::<Option<Vec<_>>>()?;
            AstNode::node(*kind, kids)
        }
    })
}

/// Does `t` generalize `n` (some binding makes them equal)?
pub fn subsumes(t: &Template, n: &AstNode) -> bool {
    unify(t, n).is_some()
}

/// Is `n` a statement that is the direct child of a statement list?
pub(crate) fn in_statement_list(parent: &AstNode) -> bool {
    matches!(
        parent.kind,
        NodeKind::CompoundStatement | NodeKind::CaseStatement
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::parse_function;

    fn ast(body: &str) -> Ast {
        parse_function(&format!("void f() {{\n{body}\n}}\n")).unwrap()
    }

    #[test]
    fn globs() {
        assert!(glob_match("*free*", "my_free"));
        assert!(glob_match("*free*", "free"));
        assert!(!glob_match("*free*", "Free"));
        assert!(glob_match("*Free*", "ExFreePool"));
        assert!(glob_match("k*", "kfree"));
        assert!(!glob_match("*_t", "size"));
        assert!(glob_match("exact", "exact"));
    }

    #[test]
    fn paper_instance_binds_holes() {
        let t = Template::from_c("h0[h1-1]=0;").unwrap();
        let a = ast("buf[size-1]=0;");
        let m = find_matches(&t, &a);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].bindings[&0].value.as_deref(), Some("buf"));
        assert_eq!(m[0].bindings[&1].value.as_deref(), Some("size"));
        assert!(find_matches(&t, &ast("buf[size-2]=0;")).is_empty());
    }

    #[test]
    fn hole_consistency() {
        let t = Template::from_c("h0 = h0 + 1;").unwrap();
        assert_eq!(find_matches(&t, &ast("x = x + 1;")).len(), 1);
        assert!(find_matches(&t, &ast("x = y + 1;")).is_empty());
        assert_eq!(find_matches(&t, &ast("a[i] = a[i] + 1;")).len(), 1);
    }

    #[test]
    fn glob_call_and_collapsed_arguments() {
        let t = Template::from_c("*free*(h0);").unwrap();
        let m = find_matches(&t, &ast("my_free(p);\nx = 1;\nkfree(a, b);"));
        assert_eq!(m.len(), 2);
        assert_eq!(
            m[0].glob_witnesses,
            [("*free*".to_string(), "my_free".to_string())]
        );
        assert_eq!(m[1].site_lines, (4, 4));
        let memset = Template::from_c("memset(h0);").unwrap();
        assert_eq!(
            find_matches(&memset, &ast("memset(buf, 0, sizeof(buf));")).len(),
            1
        );
    }

    #[test]
    fn matches_nested_statements_in_source_order() {
        let t = Template::from_c("h0 = 0;").unwrap();
        let a = ast("x = 0;\nif (c) {\n    y = 0;\n}\nwhile (d)\n    z = 0;");
        let lines: Vec<_> = find_matches(&t, &a)
            .iter()
            .map(|m| m.site_lines.0)
            .collect();
        assert_eq!(lines, [2, 4, 7]);
    }

    #[test]
    fn substituting_bindings_reproduces_site() {
        let t = Template::from_c("h0 = kcalloc(h1, h2, h3);").unwrap();
        let a = ast("p = kcalloc(n + 1, sizeof(*p), GFP_KERNEL);");
        let m = &find_matches(&t, &a)[0];
        let back = instantiate(
            &t,
            &m.bindings,
            &mut m.glob_witnesses.iter().map(|g| g.1.clone()),
        )
        .unwrap();
        assert!(back.same_shape(m.site(&a)));
    }
}
