//! AST templates with holes and name globs, their s-expression form and
//! rendering back to C text.

use std::collections::BTreeMap;
use std::fmt;

use crate::code::{parse_statement, AstNode, NodeKind};

use super::PatternError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Template {
    Node {
        kind: NodeKind,
        children: Vec<Template>,
    },
    Leaf {
        kind: NodeKind,
        value: String,
    },
    Hole(u32),
    /// Affix-wildcard constraint on a name leaf of `kind`.
    Glob {
        kind: NodeKind,
        pattern: String,
    },
}

impl Template {
    pub fn from_ast(n: &AstNode) -> Template {
        match &n.value {
            Some(v) => Template::Leaf {
                kind: n.kind,
                value: v.clone(),
            },
            None => Template::Node {
                kind: n.kind,
                children: n.children.iter().map(Template::from_ast).collect(),
            },
        }
    }

    /// Parses one C statement in template syntax: `h0`/`hole0` are holes and
    /// `*name*` is a glob. A type or argument list consisting of a single hole
    /// collapses to that hole, so `memset(h0);` binds the whole argument list.
    pub fn from_c(text: &str) -> Result<Template, PatternError> {
        let stmt = parse_statement(text, true)
            .map_err(|e| PatternError::Syntax(format!("{text}: {e}")))?;
        Ok(Self::from_template_ast(&stmt))
    }

    fn from_template_ast(n: &AstNode) -> Template {
        if let Some(v) = &n.value {
            if matches!(n.kind, NodeKind::Identifier | NodeKind::TypeIdentifier) {
                if let Some(h) = hole_index(v) {
                    return Template::Hole(h);
                }
                if v.contains('*') {
                    return Template::Glob {
                        kind: n.kind,
                        pattern: v.clone(),
                    };
                }
            }
            return Template::Leaf {
                kind: n.kind,
                value: v.clone(),
            };
        }
        let children: Vec<Template> = n.children.iter().map(Self::from_template_ast).collect();
        if matches!(n.kind, NodeKind::Type | NodeKind::ArgumentList) {
            let mut significant = children.iter().filter(|c| !c.is_punct());
            if let (Some(Template::Hole(h)), None) = (significant.next(), significant.next()) {
                return Template::Hole(*h);
            }
        }
        Template::Node {
            kind: n.kind,
            children,
        }
    }

    pub fn kind(&self) -> Option<NodeKind> {
        match self {
            Template::Node { kind, .. }
            | Template::Leaf { kind, .. }
            | Template::Glob { kind, .. } => Some(*kind),
            Template::Hole(_) => None,
        }
    }

    pub fn children(&self) -> &[Template] {
        match self {
            Template::Node { children, .. } => children,
            _ => &[],
        }
    }

    fn is_punct(&self) -> bool {
        matches!(
            self,
            Template::Leaf {
                kind: NodeKind::Punct,
                ..
            }
        )
    }

    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Template)) {
        f(self);
        for c in self.children() {
            c.walk(f);
        }
    }

    /// Hole ids in first-appearance order.
    pub fn holes(&self) -> Vec<u32> {
        let mut out = Vec::new();
        self.walk(&mut |t| {
            if let Template::Hole(h) = t {
                if !out.contains(h) {
                    out.push(*h);
                }
            }
        });
        out
    }

    pub fn has_holes(&self) -> bool {
        !self.holes().is_empty()
    }

    /// Concrete name terminals; a glob counts as one, holes as none.
    pub fn concrete_names(&self) -> usize {
        let mut n = 0;
        self.walk(&mut |t| match t {
            Template::Leaf { kind, .. } if kind.is_name() => n += 1,
            Template::Glob { .. } => n += 1,
            _ => {}
        });
        n
    }

    /// Concrete names and literals: the terminals a useful generalization keeps.
    pub fn concrete_terminals(&self) -> usize {
        let mut n = 0;
        self.walk(&mut |t| match t {
            Template::Leaf { kind, .. } if kind.is_name() || is_literal(*kind) => n += 1,
            Template::Glob { .. } => n += 1,
            _ => {}
        });
        n
    }

    pub fn map_holes(&self, f: &impl Fn(u32) -> Template) -> Template {
        match self {
            Template::Hole(h) => f(*h),
            Template::Node { kind, children } => Template::Node {
                kind: *kind,
                children: children.iter().map(|c| c.map_holes(f)).collect(),
            },
            other => other.clone(),
        }
    }

    pub fn to_sexpr(&self) -> String {
        let mut s = String::new();
        self.write_sexpr(&mut s);
        s
    }

    fn write_sexpr(&self, out: &mut String) {
        let quote = |v: &str| serde_json::to_string(v).expect("string serializes");
        match self {
            Template::Hole(h) => out.push_str(&format!("$h{h}")),
            Template::Leaf { kind, value } => {
                out.push_str(&format!("({} {})", kind.name(), quote(value)))
            }
            Template::Glob { kind, pattern } => {
                out.push_str(&format!("(glob {} {})", kind.name(), quote(pattern)))
            }
            Template::Node { kind, children } => {
                out.push('(');
                out.push_str(kind.name());
                for c in children {
                    out.push(' ');
                    c.write_sexpr(out);
                }
                out.push(')');
            }
        }
    }

    pub fn parse_sexpr(text: &str) -> Result<Template, PatternError> {
        let mut p = SexprParser {
            s: text.as_bytes(),
            pos: 0,
        };
        let t = p.template()?;
        p.skip_ws();
        if p.pos != p.s.len() {
            return Err(p.error("end of template"));
        }
        Ok(t)
    }

    /// C text with holes shown as `h<N>` and globs verbatim.
    pub fn display(&self) -> String {
        render(self, &mut |t| match t {
            Template::Hole(h) => Some((format!("h{h}"), None)),
            Template::Glob { pattern, .. } => Some((pattern.clone(), None)),
            _ => None,
        })
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display())
    }
}

fn is_literal(kind: NodeKind) -> bool {
    matches!(
        kind,
        NodeKind::NumberLiteral | NodeKind::StringLiteral | NodeKind::CharLiteral
    )
}

/// `h3` or `hole3` -> 3.
fn hole_index(name: &str) -> Option<u32> {
    let digits = name
        .strip_prefix("hole")
        .or_else(|| name.strip_prefix('h'))?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Renumbers holes of a (lhs, rhs) pair by first appearance, lhs first.
pub fn canonicalize(lhs: &Template, rhs: Option<&Template>) -> (Template, Option<Template>) {
    let mut order = lhs.holes();
    if let Some(r) = rhs {
        for h in r.holes() {
            if !order.contains(&h) {
                order.push(h);
            }
        }
    }
    let map: BTreeMap<u32, u32> = order
        .iter()
        .enumerate()
        .map(|(i, &h)| (h, i as u32))
        .collect();
    let f = |h: u32| Template::Hole(map[&h]);
    (lhs.map_holes(&f), rhs.map(|r| r.map_holes(&f)))
}

struct SexprParser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl SexprParser<'_> {
    fn error(&self, expected: &str) -> PatternError {
        PatternError::Syntax(format!(
            "s-expression at byte {}: expected {expected}",
            self.pos
        ))
    }

    fn skip_ws(&mut self) {
        while self.s.get(self.pos).is_some_and(u8::is_ascii_whitespace) {
            self.pos += 1;
        }
    }

    fn atom(&mut self) -> &str {
        let start = self.pos;
        while self
            .s
            .get(self.pos)
            .is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_' || *b == b'$')
        {
            self.pos += 1;
        }
        std::str::from_utf8(&self.s[start..self.pos]).unwrap_or("")
    }

    fn string(&mut self) -> Result<String, PatternError> {
        let start = self.pos;
        self.pos += 1;
        while let Some(&b) = self.s.get(self.pos) {
            self.pos += 1;
            match b {
                b'\\' => self.pos += 1,
                b'"' => {
                    let raw = std::str::from_utf8(&self.s[start..self.pos])
                        .map_err(|_| self.error("utf-8"))?;
                    return serde_json::from_str(raw).map_err(|_| self.error("a string literal"));
                }
                _ => {}
            }
        }
        Err(self.error("closing quote"))
    }

    fn kind(&mut self) -> Result<NodeKind, PatternError> {
        let name = self.atom().to_string();
        NodeKind::from_name(&name).ok_or_else(|| self.error("a node kind"))
    }

    fn template(&mut self) -> Result<Template, PatternError> {
        self.skip_ws();
        match self.s.get(self.pos) {
            Some(b'$') => {
                let a = self.atom();
                let h = a.strip_prefix("$h").and_then(|d| d.parse().ok());
                h.map(Template::Hole)
                    .ok_or_else(|| self.error("a hole like $h0"))
            }
            Some(b'(') => {
                self.pos += 1;
                self.skip_ws();
                let save = self.pos;
                if self.atom() == "glob" {
                    self.skip_ws();
                    let kind = self.kind()?;
                    self.skip_ws();
                    let pattern = self.string()?;
                    self.close()?;
                    return Ok(Template::Glob { kind, pattern });
                }
                self.pos = save;
                let kind = self.kind()?;
                self.skip_ws();
                if self.s.get(self.pos) == Some(&b'"') {
                    let value = self.string()?;
                    self.close()?;
                    return Ok(Template::Leaf { kind, value });
                }
                let mut children = Vec::new();
                loop {
                    self.skip_ws();
                    if self.s.get(self.pos) == Some(&b')') {
                        self.pos += 1;
                        break;
                    }
                    if self.pos >= self.s.len() {
                        return Err(self.error("`)`"));
                    }
                    children.push(self.template()?);
                }
                if children.is_empty() {
                    return Err(self.error("children or a value"));
                }
                Ok(Template::Node { kind, children })
            }
            _ => Err(self.error("`(` or a hole")),
        }
    }

    fn close(&mut self) -> Result<(), PatternError> {
        self.skip_ws();
        if self.s.get(self.pos) == Some(&b')') {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error("`)`"))
        }
    }
}

/// Serialized form of an optional right-hand side.
pub fn rhs_to_string(rhs: Option<&Template>) -> String {
    rhs.map_or_else(|| "EMPTY".to_string(), Template::to_sexpr)
}

pub fn rhs_from_string(s: &str) -> Result<Option<Template>, PatternError> {
    if s.trim() == "EMPTY" {
        Ok(None)
    } else {
        Template::parse_sexpr(s).map(Some)
    }
}

/// Kinds whose parts are written without separating spaces.
fn is_tight(kind: NodeKind) -> bool {
    use NodeKind::*;
    matches!(
        kind,
        CallExpression
            | ArgumentList
            | SubscriptExpression
            | FieldExpression
            | UpdateExpression
            | PointerExpression
            | UnaryExpression
            | ParenthesizedExpression
            | ConditionClause
            | CastExpression
            | SizeofExpression
            | PointerDeclarator
            | ArrayDeclarator
            | FunctionDeclarator
            | ParameterList
            | TypeDescriptor
    )
}

/// Operand positions where a low-precedence substitution needs parentheses.
fn binds_tightly(kind: NodeKind) -> bool {
    use NodeKind::*;
    matches!(
        kind,
        BinaryExpression
            | UnaryExpression
            | PointerExpression
            | CastExpression
            | SubscriptExpression
            | FieldExpression
            | CallExpression
            | UpdateExpression
            | SizeofExpression
    )
}

fn is_loose(kind: NodeKind) -> bool {
    use NodeKind::*;
    matches!(
        kind,
        BinaryExpression
            | ConditionalExpression
            | AssignmentExpression
            | CommaExpression
            | CastExpression
    )
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

fn push_piece(out: &mut String, piece: &str, tight: bool) {
    let (Some(&last), Some(&first)) = (out.as_bytes().last(), piece.as_bytes().first()) else {
        out.push_str(piece);
        return;
    };
    let merges = (is_word_byte(last) && is_word_byte(first))
        || (b"+-&|<>=".contains(&last) && b"+-&|<>=".contains(&first));
    let space = if tight {
        merges
    } else {
        merges || !(matches!(first, b';' | b',' | b')' | b']') || matches!(last, b'(' | b'['))
    };
    if space {
        out.push(' ');
    }
    out.push_str(piece);
}

/// Renders a template as C text. `sub` supplies text for holes and globs,
/// with the kind of the substituted node when known; `None` falls back to
/// the template's own display.
pub fn render(
    t: &Template,
    sub: &mut dyn FnMut(&Template) -> Option<(String, Option<NodeKind>)>,
) -> String {
    render_in(t, None, false, sub)
}

fn render_in(
    t: &Template,
    parent: Option<NodeKind>,
    args_slot: bool,
    sub: &mut dyn FnMut(&Template) -> Option<(String, Option<NodeKind>)>,
) -> String {
    match t {
        Template::Leaf { value, .. } => value.clone(),
        Template::Hole(_) | Template::Glob { .. } => {
            let (text, kind) = sub(t).unwrap_or_else(|| match t {
                Template::Hole(h) => (format!("h{h}"), None),
                Template::Glob { pattern, .. } => (pattern.clone(), None),
                _ => unreachable!(),
            });
            match (parent, kind) {
                _ if args_slot && kind != Some(NodeKind::ArgumentList) => format!("({text})"),
                (Some(p), Some(k)) if binds_tightly(p) && is_loose(k) => format!("({text})"),
                _ => text,
            }
        }
        Template::Node { kind, children } => {
            let mut out = String::new();
            for (i, c) in children.iter().enumerate() {
                let args_slot = *kind == NodeKind::CallExpression && i == 1;
                let piece = render_in(c, Some(*kind), args_slot, sub);
                if *kind == NodeKind::ArgumentList || *kind == NodeKind::ParameterList {
                    if out.ends_with(',') {
                        out.push(' ');
                    }
                    out.push_str(&piece);
                } else {
                    push_piece(&mut out, &piece, is_tight(*kind));
                }
            }
            out
        }
    }
}

/// Renders to a token list: holes expand to their bound tokens, globs to
/// their witnessed lexeme.
pub fn render_tokens(
    t: &Template,
    holes: &BTreeMap<u32, Vec<String>>,
    globs: &mut dyn Iterator<Item = String>,
) -> Result<Vec<String>, PatternError> {
    let mut out = Vec::new();
    fn go(
        t: &Template,
        holes: &BTreeMap<u32, Vec<String>>,
        globs: &mut dyn Iterator<Item = String>,
        out: &mut Vec<String>,
    ) -> Result<(), PatternError> {
        match t {
            Template::Leaf { value, .. } => out.push(value.clone()),
            Template::Hole(h) => out.extend(
                holes
                    .get(h)
                    .ok_or(PatternError::UnboundHole(*h))?
                    .iter()
                    .cloned(),
            ),
            Template::Glob { pattern, .. } => out.push(
                globs
                    .next()
                    .ok_or_else(|| PatternError::Syntax(format!("no witness for {pattern}")))?,
            ),
            Template::Node { children, .. } => {
                for c in children {
                    go(c, holes, globs, out)?;
                }
            }
        }
        Ok(())
    }
    go(t, holes, globs, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_c_recognizes_holes_and_globs() {
        let t = Template::from_c("h0[h1-1]=0;").unwrap();
        assert_eq!(t.holes(), [0, 1]);
        assert_eq!(t.concrete_names(), 0);
        let t = Template::from_c("*free*(h0);").unwrap();
        assert_eq!(
            t.to_sexpr(),
            r#"(expression_statement (call_expression (glob identifier "*free*") $h0) (punct ";"))"#
        );
        assert_eq!(t.concrete_names(), 1);
        let t = Template::from_c("h0 = kcalloc(hole1, hole2, hole3);").unwrap();
        assert_eq!(t.holes(), [0, 1, 2, 3]);
    }

    #[test]
    fn sexpr_round_trip() {
        for src in [
            "h0[h1-1]=0;",
            "*free*(h0);",
            "static h0 h1 = h2;",
            "if (x == NULL) { return -EINVAL; }",
            "s = \"a \\\"q\\\"\";",
        ] {
            let t = Template::from_c(src).unwrap();
            assert_eq!(Template::parse_sexpr(&t.to_sexpr()).unwrap(), t, "{src}");
        }
        assert!(Template::parse_sexpr("(expression_statement").is_err());
        assert!(Template::parse_sexpr("(nonsense \"x\")").is_err());
        assert_eq!(rhs_from_string("EMPTY").unwrap(), None);
    }

    #[test]
    fn display_reads_like_c() {
        assert_eq!(
            Template::from_c("h0[h1-1]=0;").unwrap().display(),
            "h0[h1 - 1] = 0;"
        );
        assert_eq!(
            Template::from_c("*mutex*(h0);").unwrap().display(),
            "*mutex*(h0);"
        );
        assert_eq!(
            Template::from_c("if (x == NULL) return -1;")
                .unwrap()
                .display(),
            "if (x == NULL) return -1;"
        );
        assert_eq!(
            Template::from_c("h0 = kzalloc(h1*h2, h3);")
                .unwrap()
                .display(),
            "h0 = kzalloc(h1 * h2, h3);"
        );
    }

    #[test]
    fn canonical_numbering() {
        let l = Template::from_c("h5 = h2 + h5;").unwrap();
        let r = Template::from_c("h2 = h7;").unwrap();
        let (l, r) = canonicalize(&l, Some(&r));
        assert_eq!(l.display(), "h0 = h1 + h0;");
        assert_eq!(r.unwrap().display(), "h1 = h2;");
    }

    #[test]
    fn loose_substitution_is_parenthesized() {
        let t = Template::from_c("h0 = h1 * h2;").unwrap();
        let text = render(&t, &mut |t| match t {
            Template::Hole(1) => Some(("n + 1".into(), Some(NodeKind::BinaryExpression))),
            Template::Hole(h) => Some((format!("v{h}"), Some(NodeKind::Identifier))),
            _ => None,
        });
        assert_eq!(text, "v0 = (n + 1) * v2;");
    }
}
