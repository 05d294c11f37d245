//! Semantics-preserving refactorings applied to fine-tuning samples: if
//! condition reversal, for-to-while conversion and junk insertion. The
//! labeled statement is carried through verbatim and its new span tracked.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::code::{line_of, parse_function, Ast, AstNode, NodeKind, SourceUnit, Span};
use crate::flow::for_header;

use super::junk::{instantiate_junk, JUNK_TEMPLATES};
use super::{sample_rng, statement_boundaries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TransformKind {
    IfReverse,
    ForToWhile,
    JunkInsert,
}

impl TransformKind {
    pub const ORDER: [TransformKind; 3] = [
        TransformKind::IfReverse,
        TransformKind::ForToWhile,
        TransformKind::JunkInsert,
    ];
}

/// One applied refactoring and the byte offsets of its sites in the text it
/// was applied to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transform {
    pub kind: TransformKind,
    pub sites: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefactoredVariant {
    pub original: SourceUnit,
    pub variant_text: String,
    pub transforms: Vec<Transform>,
    /// Span of the labeled statement in `variant_text`.
    pub label: Span,
    /// 1-based first line of the labeled statement in `variant_text`.
    pub label_line: usize,
}

/// Span of the outermost statement starting on `line`.
pub fn label_span_at_line(ast: &Ast, line: usize) -> Option<Span> {
    ast.body_statements()
        .into_iter()
        .find(|s| s.line == line)
        .map(|s| s.span)
}

fn line_indent(src: &str, at: usize) -> &str {
    let start = src[..at].rfind('\n').map_or(0, |i| i + 1);
    let lead = &src[start..at];
    let trimmed = lead.len() - lead.trim_start().len();
    &lead[..trimmed]
}

fn starts_line(src: &str, at: usize) -> bool {
    let start = src[..at].rfind('\n').map_or(0, |i| i + 1);
    src[start..at].trim().is_empty()
}

fn contains_continue(n: &AstNode) -> bool {
    let mut found = false;
    n.walk(&mut |x| found |= x.kind == NodeKind::ContinueStatement);
    found
}

struct Renderer<'a> {
    src: &'a str,
    kind: TransformKind,
    label: Span,
    out: String,
    new_label: Option<Span>,
    sites: Vec<usize>,
}

impl Renderer<'_> {
    fn is_label(&self, n: &AstNode) -> bool {
        n.kind.is_statement() && n.span == self.label && self.new_label.is_none()
    }

    fn copy(&mut self, from: usize, to: usize) {
        self.out.push_str(&self.src[from..to]);
    }

    fn emit(&mut self, n: &AstNode, in_list: bool) {
        if self.is_label(n) {
            let start = self.out.len();
            self.copy(n.span.start, n.span.end);
            self.new_label = Some(Span::new(start, self.out.len()));
            return;
        }
        if n.is_leaf() {
            self.copy(n.span.start, n.span.end);
            return;
        }
        match self.kind {
            TransformKind::IfReverse if self.reversible(n) => return self.reverse_if(n),
            TransformKind::ForToWhile if self.convertible(n) => {
                return self.for_to_while(n, in_list)
            }
            _ => {}
        }
        self.splice(n, n.children.len());
    }

    /// Children `..upto` with the original text between them.
    fn splice(&mut self, n: &AstNode, upto: usize) {
        let list = matches!(
            n.kind,
            NodeKind::CompoundStatement | NodeKind::CaseStatement
        );
        let mut cursor = n.span.start;
        for c in &n.children[..upto] {
            self.copy(cursor, c.span.start);
            self.emit(c, list);
            cursor = c.span.end;
        }
        if upto == n.children.len() {
            self.copy(cursor, n.span.end);
        }
    }

    fn reversible(&self, n: &AstNode) -> bool {
        n.kind == NodeKind::IfStatement && n.children.len() == 4 && n.span != self.label
    }

    fn reverse_if(&mut self, n: &AstNode) {
        self.sites.push(n.span.start);
        let cond = &n.children[1].children[1];
        let then = &n.children[2];
        let else_clause = &n.children[3];
        let else_kw = &else_clause.children[0];
        let alt = &else_clause.children[1];
        self.copy(n.span.start, cond.span.start);
        self.out.push_str("!(");
        self.emit(cond, false);
        self.out.push(')');
        self.copy(cond.span.end, then.span.start);
        // An unbraced arm moved in front of `else` could capture it.
        let brace = alt.kind != NodeKind::CompoundStatement;
        if brace {
            self.out.push_str("{ ");
        }
        self.emit(alt, false);
        if brace {
            self.out.push_str(" }");
        }
        self.copy(then.span.end, else_kw.span.end);
        self.copy(else_kw.span.end, alt.span.start);
        self.emit(then, false);
    }

    fn convertible(&self, n: &AstNode) -> bool {
        n.kind == NodeKind::ForStatement
            && n.span != self.label
            && n.children
                .last()
                .is_some_and(|b| b.span != self.label && !contains_continue(b))
    }

    fn for_to_while(&mut self, n: &AstNode, in_list: bool) {
        self.sites.push(n.span.start);
        let (init, cond, update) = for_header(n);
        let body = n.children.last().expect("for has a body");
        let indent = line_indent(self.src, n.span.start).to_string();
        let wrap = !in_list || init.is_some_and(|i| i.kind == NodeKind::Declaration);
        if wrap {
            self.out.push_str("{ ");
        }
        if let Some(i) = init {
            self.emit(i, true);
            if i.kind != NodeKind::Declaration {
                self.out.push(';');
            }
            self.out.push('\n');
            self.out.push_str(&indent);
        }
        self.out.push_str("while (");
        match cond {
            Some(c) => self.emit(c, false),
            None => self.out.push('1'),
        }
        self.out.push_str(") ");
        let upd = update.map(|u| format!("{};", &self.src[u.span.start..u.span.end]));
        if body.kind == NodeKind::CompoundStatement {
            let close = body.children.len() - 1;
            let last = body.children[..close]
                .last()
                .expect("compound has an opening brace");
            self.splice(body, close);
            if let Some(u) = upd {
                let inner = if last.kind.is_statement() && starts_line(self.src, last.span.start) {
                    line_indent(self.src, last.span.start).to_string()
                } else {
                    format!("{indent}    ")
                };
                self.out.push('\n');
                self.out.push_str(&inner);
                self.out.push_str(&u);
            }
            self.copy(last.span.end, body.span.end);
        } else {
            self.out.push_str("{ ");
            self.emit(body, false);
            if let Some(u) = upd {
                self.out.push(' ');
                self.out.push_str(&u);
            }
            self.out.push_str(" }");
        }
        if wrap {
            self.out.push_str(" }");
        }
    }
}

fn rewrite(ast: &Ast, label: Span, kind: TransformKind) -> Option<(String, Span, Vec<usize>)> {
    let mut r = Renderer {
        src: &ast.source,
        kind,
        label,
        out: String::new(),
        new_label: None,
        sites: Vec::new(),
    };
    r.copy(0, ast.root.span.start);
    r.emit(&ast.root, false);
    r.copy(ast.root.span.end, ast.source.len());
    if r.sites.is_empty() {
        return None;
    }
    Some((r.out, r.new_label?, r.sites))
}

fn fresh_name(used: &BTreeSet<String>, rng: &mut impl Rng) -> String {
    loop {
        let name = format!("jk_{}", rng.random_range(100..10_000));
        if !used.contains(&name) {
            return name;
        }
    }
}

fn insert_junk(ast: &Ast, label: Span, rng: &mut impl Rng) -> Option<(String, Span, Vec<usize>)> {
    let bounds: Vec<_> = statement_boundaries(ast)
        .into_iter()
        .filter(|b| b.at <= label.start || b.at >= label.end)
        .collect();
    if bounds.is_empty() {
        return None;
    }
    let b = &bounds[rng.random_range(0..bounds.len())];
    let mut used: BTreeSet<String> = BTreeSet::new();
    ast.root.walk(&mut |n| {
        if let Some(v) = &n.value {
            used.insert(v.clone());
        }
    });
    let a = fresh_name(&used, rng);
    used.insert(a.clone());
    let bn = fresh_name(&used, rng);
    let idx = rng.random_range(0..JUNK_TEMPLATES.len());
    let stmts = instantiate_junk(
        idx,
        &a,
        &bn,
        rng.random_range(1..10),
        rng.random_range(2..10),
    );
    let text = format!("{}{}{}", b.lead, stmts.join(b.separator()), b.trail);
    let src = &ast.source;
    let out = format!("{}{text}{}", &src[..b.at], &src[b.at..]);
    let shift = if b.at <= label.start { text.len() } else { 0 };
    Some((
        out,
        Span::new(label.start + shift, label.end + shift),
        vec![b.at],
    ))
}

fn apply_kind(
    ast: &Ast,
    label: Span,
    kind: TransformKind,
    rng: &mut impl Rng,
) -> Option<(String, Span, Vec<usize>)> {
    match kind {
        TransformKind::JunkInsert => insert_junk(ast, label, rng),
        _ => rewrite(ast, label, kind),
    }
}

/// All non-empty subsets of the applicable refactorings, each applied in the
/// fixed order if-reversal, for-to-while, junk insertion. `label` is the span
/// of a statement of `unit`.
pub fn augment(unit: &SourceUnit, label: Span, seed: u64) -> Vec<RefactoredVariant> {
    let Ok(ast) = parse_function(&unit.text) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    'subsets: for mask in 1u8..8 {
        let mut rng = sample_rng(seed, u64::from(mask));
        let mut cur = ast.clone();
        let mut span = label;
        let mut transforms = Vec::new();
        for (bit, kind) in TransformKind::ORDER.into_iter().enumerate() {
            if mask & (1 << bit) == 0 {
                continue;
            }
            let Some((text, new_span, sites)) = apply_kind(&cur, span, kind, &mut rng) else {
                continue 'subsets;
            };
            match parse_function(&text) {
                Ok(a) => cur = a,
                Err(e) => {
                    log::warn!("{kind:?} produced unparseable text ({e}); variant skipped");
                    continue 'subsets;
                }
            }
            span = new_span;
            transforms.push(Transform { kind, sites });
        }
        let label_line = line_of(&cur.source, span.start);
        out.push(RefactoredVariant {
            original: unit.clone(),
            variant_text: cur.source,
            transforms,
            label: span,
            label_line,
        });
    }
    out
}
