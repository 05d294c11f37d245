//! Splicing an instantiated right-hand side into the source, and the
//! inverse splice used by the revert check.

use std::collections::BTreeMap;

use crate::code::{line_of, parse_function, Ast, AstNode};

use super::matching::{in_statement_list, MatchBinding};
use super::template::{render, render_tokens, Template};
use super::{EditPattern, PatternError};

/// Everything needed to put the original statement back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RevertRecord {
    /// Byte offset of the inserted text in the edited source.
    pub offset: usize,
    pub inserted_len: usize,
    /// Whitespace removed together with a deleted statement.
    pub lead: String,
    pub trail: String,
    /// Original whitespace between consecutive tokens of the site.
    pub layout: Vec<String>,
    pub holes: BTreeMap<u32, Vec<String>>,
    pub globs: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Injection {
    pub ast: Ast,
    /// 1-based line range of the edit in the new text. A deletion reports
    /// the single line where the statement used to start.
    pub lines: (usize, usize),
    pub revert: RevertRecord,
}

fn leaves(n: &AstNode) -> Vec<&AstNode> {
    let mut out = Vec::new();
    n.walk(&mut |x| {
        if x.is_leaf() {
            out.push(x);
        }
    });
    out
}

/// Replaces the binding's site with the pattern's instantiated rhs. A deleted
/// statement takes its whole line with it when it is alone on its lines; a
/// deleted sole body of a control statement becomes `;`.
pub fn apply(
    binding: &MatchBinding,
    pattern: &EditPattern,
    ast: &Ast,
) -> Result<Injection, PatternError> {
    let src = ast.source.as_str();
    let site = binding.site(ast);
    let toks = leaves(site);
    let layout = toks
        .windows(2)
        .map(|w| src[w[0].span.end..w[1].span.start].to_string())
        .collect();
    let holes = binding
        .bindings
        .iter()
        .map(|(&h, n)| (h, n.terminals().into_iter().map(str::to_string).collect()))
        .collect();

    let (start, end, inserted) = match &pattern.rhs {
        Some(rhs) => {
            let text = render(rhs, &mut |t| match t {
                Template::Hole(h) => binding
                    .bindings
                    .get(h)
                    .map(|n| (n.text(src).to_string(), Some(n.kind))),
                Template::Glob { pattern, .. } => binding
                    .glob_witnesses
                    .iter()
                    .find(|(g, _)| g == pattern)
                    .map(|(_, w)| (w.clone(), None)),
                _ => None,
            });
            if let Some(h) = rhs
                .holes()
                .into_iter()
                .find(|h| !binding.bindings.contains_key(h))
            {
                return Err(PatternError::UnboundHole(h));
            }
            (site.span.start, site.span.end, text)
        }
        None => {
            let parent_path = &binding.site_path[..binding.site_path.len() - 1];
            let parent = ast
                .root
                .at_path(parent_path)
                .expect("parent of a valid path");
            if in_statement_list(parent) {
                let line_start = src[..site.span.start].rfind('\n').map_or(0, |i| i + 1);
                let line_end = src[site.span.end..]
                    .find('\n')
                    .map_or(src.len(), |i| site.span.end + i + 1);
                let alone = src[line_start..site.span.start].trim().is_empty()
                    && src[site.span.end..line_end].trim().is_empty();
                if alone {
                    (line_start, line_end, String::new())
                } else {
                    let ws = src[site.span.end..].len()
                        - src[site.span.end..].trim_start_matches([' ', '\t']).len();
                    (site.span.start, site.span.end + ws, String::new())
                }
            } else {
                (site.span.start, site.span.end, ";".to_string())
            }
        }
    };

    let text = format!("{}{}{}", &src[..start], inserted, &src[end..]);
    let revert = RevertRecord {
        offset: start,
        inserted_len: inserted.len(),
        lead: src[start..site.span.start.max(start)].to_string(),
        trail: src[site.span.end.min(end)..end].to_string(),
        layout,
        holes,
        globs: binding
            .glob_witnesses
            .iter()
            .map(|(_, w)| w.clone())
            .collect(),
    };
    let lines = if inserted.is_empty() {
        let l = line_of(&text, start);
        (l, l)
    } else {
        (
            line_of(&text, start),
            line_of(&text, start + inserted.len() - 1),
        )
    };
    let ast = parse_function(&text).map_err(|e| PatternError::Unparseable(e.to_string()))?;
    Ok(Injection { ast, lines, revert })
}

/// Re-applies `lhs` under the recorded bindings at the recorded location.
pub fn revert(edited: &str, rec: &RevertRecord, lhs: &Template) -> Result<String, PatternError> {
    let toks = render_tokens(lhs, &rec.holes, &mut rec.globs.iter().cloned())?;
    if toks.len() != rec.layout.len() + 1 {
        return Err(PatternError::Incompatible(format!(
            "lhs renders {} tokens but the site had {}",
            toks.len(),
            rec.layout.len() + 1
        )));
    }
    let end = rec.offset + rec.inserted_len;
    if end > edited.len() || !edited.is_char_boundary(rec.offset) || !edited.is_char_boundary(end) {
        return Err(PatternError::Incompatible(
            "revert range outside the edited text".into(),
        ));
    }
    let mut out = String::with_capacity(edited.len() + 64);
    out.push_str(&edited[..rec.offset]);
    out.push_str(&rec.lead);
    for (i, t) in toks.iter().enumerate() {
        if i > 0 {
            out.push_str(&rec.layout[i - 1]);
        }
        out.push_str(t);
    }
    out.push_str(&rec.trail);
    out.push_str(&edited[end..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{PASSWORD_CHECK, PASSWORD_CHECK_VULNERABLE};
    use crate::pattern::{find_matches, Provenance};

    fn pattern(lhs: &str, rhs: Option<&str>) -> EditPattern {
        EditPattern {
            id: "t".into(),
            lhs: Template::from_c(lhs).unwrap(),
            rhs: rhs.map(|r| Template::from_c(r).unwrap()),
            vuln_type: String::new(),
            provenance: Provenance::Manual,
            scores: Default::default(),
        }
    }

    #[test]
    fn deleting_the_bounds_check() {
        let ast = parse_function(PASSWORD_CHECK).unwrap();
        let p = pattern("if (h0) return -1;", None);
        let m = find_matches(&p.lhs, &ast);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].site_lines, (7, 8));
        let inj = apply(&m[0], &p, &ast).unwrap();
        assert_eq!(inj.ast.source, PASSWORD_CHECK_VULNERABLE);
        assert_eq!(inj.lines, (7, 7));
        assert!(inj.ast.source.contains("strcpy(buf, password);"));
        assert_eq!(
            revert(&inj.ast.source, &inj.revert, &p.lhs).unwrap(),
            PASSWORD_CHECK
        );
    }

    #[test]
    fn identity_pattern_keeps_text() {
        let src = "int f(int x) {\n    x = x + 1;\n    return x;\n}\n";
        let ast = parse_function(src).unwrap();
        let p = pattern("h0 = h0 + 1;", Some("h0 = h0 + 1;"));
        let inj = apply(&find_matches(&p.lhs, &ast)[0], &p, &ast).unwrap();
        assert_eq!(inj.ast.source, src);
        assert_eq!(inj.lines, (2, 2));
    }

    #[test]
    fn substitution_and_revert() {
        let src = "void f() {\n    static int  x = 3;\n    p = calloc(n+1,  sz);\n}\n";
        let ast = parse_function(src).unwrap();
        let p = pattern("static h0 h1 = h2;", Some("h0 h1 = h2;"));
        let inj = apply(&find_matches(&p.lhs, &ast)[0], &p, &ast).unwrap();
        assert!(inj.ast.source.contains("    int x = 3;\n"));
        assert_eq!(revert(&inj.ast.source, &inj.revert, &p.lhs).unwrap(), src);

        let p = pattern("h0 = calloc(h1, h2);", Some("h0 = malloc(h1*h2);"));
        let inj = apply(&find_matches(&p.lhs, &ast)[0], &p, &ast).unwrap();
        assert!(
            inj.ast.source.contains("p = malloc((n+1) * sz);"),
            "{}",
            inj.ast.source
        );
        assert_eq!(revert(&inj.ast.source, &inj.revert, &p.lhs).unwrap(), src);
    }

    #[test]
    fn sole_body_becomes_empty_statement() {
        let src = "void f() {\n    if (c)\n        free(p);\n    g(p);\n}\n";
        let ast = parse_function(src).unwrap();
        let p = pattern("*free*(h0);", None);
        let inj = apply(&find_matches(&p.lhs, &ast)[0], &p, &ast).unwrap();
        assert!(inj.ast.source.contains("if (c)\n        ;\n"));
        assert_eq!(revert(&inj.ast.source, &inj.revert, &p.lhs).unwrap(), src);
    }

    #[test]
    fn shared_line_deletion() {
        let src = "void f() {\n    a = 0; b = 1;\n}\n";
        let ast = parse_function(src).unwrap();
        let p = pattern("h0 = 0;", None);
        let inj = apply(&find_matches(&p.lhs, &ast)[0], &p, &ast).unwrap();
        assert_eq!(inj.ast.source, "void f() {\n    b = 1;\n}\n");
        assert_eq!(revert(&inj.ast.source, &inj.revert, &p.lhs).unwrap(), src);
    }
}
