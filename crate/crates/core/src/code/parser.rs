//! Recursive-descent parser for a C99 function-body subset.
//!
//! Every token becomes a terminal leaf, so the tree is a concrete syntax
//! tree in the tree-sitter sense. Typedef names are recognized heuristically
//! (a fixed list, `*_t` names, or `ident ident` / `ident * ident` shapes).

use super::ast::{AstNode, NodeKind};
use super::lexer::{Token, TokenKind};
use super::ParseError;

const BUILTIN_TYPEDEFS: &[&str] = &[
    "FILE", "BOOL", "BYTE", "WORD", "DWORD", "UINT", "INT", "bool", "va_list", "gboolean", "gchar",
    "gint", "guint", "gpointer", "u8", "u16", "u32", "u64", "s8", "s16", "s32", "s64", "__u8",
    "__u16", "__u32", "__u64", "__be16", "__be32", "__le16", "__le32",
];

const TYPE_KEYWORDS: &[&str] = &[
    "void", "char", "short", "int", "long", "float", "double", "signed", "unsigned", "_Bool",
];
const QUALIFIERS: &[&str] = &["const", "volatile", "restrict"];
const STORAGE: &[&str] = &["static", "extern", "register", "auto", "inline", "typedef"];

fn is_typedef_name(name: &str) -> bool {
    BUILTIN_TYPEDEFS.contains(&name) || (name.len() > 2 && name.ends_with("_t"))
}

pub(crate) struct Parser<'t> {
    toks: &'t [Token],
    pos: usize,
    source_len: usize,
}

type PResult<T> = Result<T, ParseError>;

impl<'t> Parser<'t> {
    pub(crate) fn new(toks: &'t [Token], source_len: usize) -> Self {
        Self {
            toks,
            pos: 0,
            source_len,
        }
    }

    fn peek(&self) -> Option<&'t Token> {
        self.toks.get(self.pos)
    }

    fn peek_at(&self, off: usize) -> Option<&'t Token> {
        self.toks.get(self.pos + off)
    }

    fn peek_text(&self, off: usize) -> Option<&'t str> {
        self.peek_at(off).map(|t| t.text.as_str())
    }

    fn at(&self, text: &str) -> bool {
        self.peek_text(0) == Some(text)
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.source_len, |t| t.span.start)
    }

    fn error<T>(&self, expected: &str) -> PResult<T> {
        Err(ParseError::new(self.offset(), expected))
    }

    pub(crate) fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn bump(&mut self, kind: NodeKind) -> AstNode {
        let t = &self.toks[self.pos];
        self.pos += 1;
        AstNode::leaf(kind, t.text.clone(), t.span, t.line)
    }

    fn expect(&mut self, text: &str) -> PResult<AstNode> {
        if self.at(text) {
            let kind = match self.peek().map(|t| t.kind) {
                Some(TokenKind::Keyword) => NodeKind::Keyword,
                _ => NodeKind::Punct,
            };
            Ok(self.bump(kind))
        } else {
            self.error(&format!("`{text}`"))
        }
    }

    fn is_ident_at(&self, off: usize) -> bool {
        self.peek_at(off)
            .is_some_and(|t| matches!(t.kind, TokenKind::Identifier | TokenKind::Glob))
    }

    // ---- declarations -------------------------------------------------

    pub(crate) fn function_definition(&mut self) -> PResult<AstNode> {
        let mut children = self.storage_classes();
        children.push(self.type_spec()?);
        let decl = self.declarator()?;
        if !contains_kind(&decl, NodeKind::FunctionDeclarator) {
            return self.error("a function declarator");
        }
        children.push(decl);
        if !self.at("{") {
            return self.error("`{`");
        }
        children.push(self.compound()?);
        Ok(AstNode::node(NodeKind::FunctionDefinition, children))
    }

    fn storage_classes(&mut self) -> Vec<AstNode> {
        let mut out = Vec::new();
        while self.peek_text(0).is_some_and(|t| STORAGE.contains(&t)) {
            out.push(self.bump(NodeKind::StorageClass));
        }
        out
    }

    fn is_type_keyword(text: &str) -> bool {
        TYPE_KEYWORDS.contains(&text)
            || QUALIFIERS.contains(&text)
            || matches!(text, "struct" | "union" | "enum")
    }

    /// Does the statement at the cursor start a declaration?
    fn starts_declaration(&self) -> bool {
        let Some(t) = self.peek() else { return false };
        if t.kind == TokenKind::Keyword {
            return Self::is_type_keyword(&t.text) || STORAGE.contains(&t.text.as_str());
        }
        if t.kind != TokenKind::Identifier {
            return false;
        }
        if is_typedef_name(&t.text) && (self.is_ident_at(1) || self.peek_text(1) == Some("*")) {
            return true;
        }
        if self.is_ident_at(1) {
            return true;
        }
        // `T *x;`, `T *x = ...`, `T **x` and friends.
        let mut i = 1;
        while self.peek_text(i) == Some("*") {
            i += 1;
        }
        i > 1 && self.is_ident_at(i) && matches!(self.peek_text(i + 1), Some(";" | "=" | "," | "["))
    }

    fn is_type_start_at(&self, off: usize) -> bool {
        let Some(t) = self.peek_at(off) else {
            return false;
        };
        match t.kind {
            TokenKind::Keyword => Self::is_type_keyword(&t.text),
            TokenKind::Identifier => {
                is_typedef_name(&t.text)
                    || (self.peek_text(off + 1) == Some("*")
                        && matches!(self.peek_text(off + 2), Some(")" | "*")))
            }
            _ => false,
        }
    }

    fn type_spec(&mut self) -> PResult<AstNode> {
        let mut parts = Vec::new();
        let mut has_base = false;
        loop {
            let Some(t) = self.peek() else { break };
            match t.kind {
                TokenKind::Keyword if QUALIFIERS.contains(&t.text.as_str()) => {
                    parts.push(self.bump(NodeKind::Keyword));
                }
                TokenKind::Keyword if TYPE_KEYWORDS.contains(&t.text.as_str()) => {
                    parts.push(self.bump(NodeKind::PrimitiveType));
                    has_base = true;
                }
                TokenKind::Keyword if matches!(t.text.as_str(), "struct" | "union" | "enum") => {
                    if has_base {
                        break;
                    }
                    parts.push(self.bump(NodeKind::Keyword));
                    if !self.is_ident_at(0) {
                        return self.error("a tag name");
                    }
                    parts.push(self.bump(NodeKind::TypeIdentifier));
                    has_base = true;
                }
                TokenKind::Identifier | TokenKind::Glob if !has_base => {
                    parts.push(self.bump(NodeKind::TypeIdentifier));
                    has_base = true;
                }
                _ => break,
            }
        }
        if parts.is_empty() {
            return self.error("a type");
        }
        Ok(AstNode::node(NodeKind::Type, parts))
    }

    fn declarator(&mut self) -> PResult<AstNode> {
        if self.at("*") {
            let mut children = vec![self.bump(NodeKind::Punct)];
            while self.peek_text(0).is_some_and(|t| QUALIFIERS.contains(&t)) {
                children.push(self.bump(NodeKind::Keyword));
            }
            children.push(self.declarator()?);
            return Ok(AstNode::node(NodeKind::PointerDeclarator, children));
        }
        if !self.is_ident_at(0) {
            return self.error("a declarator name");
        }
        let mut decl = self.bump(NodeKind::Identifier);
        loop {
            if self.at("[") {
                let mut children = vec![decl, self.bump(NodeKind::Punct)];
                if !self.at("]") {
                    children.push(self.assignment()?);
                }
                children.push(self.expect("]")?);
                decl = AstNode::node(NodeKind::ArrayDeclarator, children);
            } else if self.at("(") {
                let params = self.parameter_list()?;
                decl = AstNode::node(NodeKind::FunctionDeclarator, vec![decl, params]);
            } else {
                return Ok(decl);
            }
        }
    }

    fn parameter_list(&mut self) -> PResult<AstNode> {
        let mut children = vec![self.expect("(")?];
        if !self.at(")") {
            loop {
                if self.at("...") {
                    children.push(self.bump(NodeKind::Punct));
                } else {
                    let mut p = vec![self.type_spec()?];
                    if !self.at(",") && !self.at(")") {
                        p.push(self.param_declarator()?);
                    }
                    children.push(AstNode::node(NodeKind::ParameterDeclaration, p));
                }
                if self.at(",") {
                    children.push(self.bump(NodeKind::Punct));
                } else {
                    break;
                }
            }
        }
        children.push(self.expect(")")?);
        Ok(AstNode::node(NodeKind::ParameterList, children))
    }

    /// Like `declarator`, but admits abstract forms such as `char *`.
    fn param_declarator(&mut self) -> PResult<AstNode> {
        if self.at("*") {
            let mut children = vec![self.bump(NodeKind::Punct)];
            while self.peek_text(0).is_some_and(|t| QUALIFIERS.contains(&t)) {
                children.push(self.bump(NodeKind::Keyword));
            }
            if !self.at(",") && !self.at(")") {
                children.push(self.param_declarator()?);
            }
            return Ok(AstNode::node(NodeKind::PointerDeclarator, children));
        }
        self.declarator()
    }

    fn declaration(&mut self) -> PResult<AstNode> {
        let mut children = self.storage_classes();
        children.push(self.type_spec()?);
        loop {
            let decl = self.declarator()?;
            if self.at("=") {
                let eq = self.bump(NodeKind::Punct);
                let init = if self.at("{") {
                    self.initializer_list()?
                } else {
                    self.assignment()?
                };
                children.push(AstNode::node(
                    NodeKind::InitDeclarator,
                    vec![decl, eq, init],
                ));
            } else {
                children.push(decl);
            }
            if self.at(",") {
                children.push(self.bump(NodeKind::Punct));
            } else {
                break;
            }
        }
        children.push(self.expect(";")?);
        Ok(AstNode::node(NodeKind::Declaration, children))
    }

    fn initializer_list(&mut self) -> PResult<AstNode> {
        let mut children = vec![self.expect("{")?];
        while !self.at("}") {
            let item = if self.at("{") {
                self.initializer_list()?
            } else {
                self.assignment()?
            };
            children.push(item);
            if self.at(",") {
                children.push(self.bump(NodeKind::Punct));
            } else {
                break;
            }
        }
        children.push(self.expect("}")?);
        Ok(AstNode::node(NodeKind::InitializerList, children))
    }

    // ---- statements ---------------------------------------------------

    fn compound(&mut self) -> PResult<AstNode> {
        let mut children = vec![self.expect("{")?];
        while !self.at("}") {
            if self.at_end() {
                return self.error("`}`");
            }
            children.push(self.statement()?);
        }
        children.push(self.expect("}")?);
        Ok(AstNode::node(NodeKind::CompoundStatement, children))
    }

    fn condition_clause(&mut self) -> PResult<AstNode> {
        let open = self.expect("(")?;
        let expr = self.expression()?;
        let close = self.expect(")")?;
        Ok(AstNode::node(
            NodeKind::ConditionClause,
            vec![open, expr, close],
        ))
    }

    pub(crate) fn statement(&mut self) -> PResult<AstNode> {
        let Some(t) = self.peek() else {
            return self.error("a statement");
        };
        let kw = if t.kind == TokenKind::Keyword {
            t.text.as_str()
        } else {
            ""
        };
        match kw {
            "if" => {
                let mut children = vec![self.bump(NodeKind::Keyword), self.condition_clause()?];
                children.push(self.statement()?);
                if self.at("else") {
                    let e = self.bump(NodeKind::Keyword);
                    let alt = self.statement()?;
                    children.push(AstNode::node(NodeKind::ElseClause, vec![e, alt]));
                }
                Ok(AstNode::node(NodeKind::IfStatement, children))
            }
            "while" => {
                let children = vec![
                    self.bump(NodeKind::Keyword),
                    self.condition_clause()?,
                    self.statement()?,
                ];
                Ok(AstNode::node(NodeKind::WhileStatement, children))
            }
            "do" => {
                let children = vec![
                    self.bump(NodeKind::Keyword),
                    self.statement()?,
                    self.expect("while")?,
                    self.condition_clause()?,
                    self.expect(";")?,
                ];
                Ok(AstNode::node(NodeKind::DoStatement, children))
            }
            "for" => self.for_statement(),
            "switch" => {
                let children = vec![
                    self.bump(NodeKind::Keyword),
                    self.condition_clause()?,
                    self.compound()?,
                ];
                Ok(AstNode::node(NodeKind::SwitchStatement, children))
            }
            "case" | "default" => {
                let mut children = vec![self.bump(NodeKind::Keyword)];
                if kw == "case" {
                    children.push(self.conditional()?);
                }
                children.push(self.expect(":")?);
                while !self.at("}") && !self.at("case") && !self.at("default") && !self.at_end() {
                    children.push(self.statement()?);
                }
                Ok(AstNode::node(NodeKind::CaseStatement, children))
            }
            "return" => {
                let mut children = vec![self.bump(NodeKind::Keyword)];
                if !self.at(";") {
                    children.push(self.expression()?);
                }
                children.push(self.expect(";")?);
                Ok(AstNode::node(NodeKind::ReturnStatement, children))
            }
            "break" | "continue" => {
                let kind = if kw == "break" {
                    NodeKind::BreakStatement
                } else {
                    NodeKind::ContinueStatement
                };
                let children = vec![self.bump(NodeKind::Keyword), self.expect(";")?];
                Ok(AstNode::node(kind, children))
            }
            "goto" => {
                let g = self.bump(NodeKind::Keyword);
                if !self.is_ident_at(0) {
                    return self.error("a label");
                }
                let label = self.bump(NodeKind::StatementIdentifier);
                Ok(AstNode::node(
                    NodeKind::GotoStatement,
                    vec![g, label, self.expect(";")?],
                ))
            }
            _ => {
                if self.at("{") {
                    return self.compound();
                }
                if self.at(";") {
                    return Ok(AstNode::node(
                        NodeKind::EmptyStatement,
                        vec![self.bump(NodeKind::Punct)],
                    ));
                }
                if t.kind == TokenKind::Identifier && self.peek_text(1) == Some(":") {
                    let label = self.bump(NodeKind::StatementIdentifier);
                    let colon = self.bump(NodeKind::Punct);
                    let body = self.statement()?;
                    return Ok(AstNode::node(
                        NodeKind::LabeledStatement,
                        vec![label, colon, body],
                    ));
                }
                if self.starts_declaration() {
                    return self.declaration();
                }
                let expr = self.expression()?;
                let semi = self.expect(";")?;
                Ok(AstNode::node(
                    NodeKind::ExpressionStatement,
                    vec![expr, semi],
                ))
            }
        }
    }

    fn for_statement(&mut self) -> PResult<AstNode> {
        let mut children = vec![self.bump(NodeKind::Keyword), self.expect("(")?];
        if self.starts_declaration() {
            children.push(self.declaration()?);
        } else {
            if !self.at(";") {
                children.push(self.expression()?);
            }
            children.push(self.expect(";")?);
        }
        if !self.at(";") {
            children.push(self.expression()?);
        }
        children.push(self.expect(";")?);
        if !self.at(")") {
            children.push(self.expression()?);
        }
        children.push(self.expect(")")?);
        children.push(self.statement()?);
        Ok(AstNode::node(NodeKind::ForStatement, children))
    }

    // ---- expressions --------------------------------------------------

    pub(crate) fn expression(&mut self) -> PResult<AstNode> {
        let mut lhs = self.assignment()?;
        while self.at(",") {
            let comma = self.bump(NodeKind::Punct);
            let rhs = self.assignment()?;
            lhs = AstNode::node(NodeKind::CommaExpression, vec![lhs, comma, rhs]);
        }
        Ok(lhs)
    }

    fn assignment(&mut self) -> PResult<AstNode> {
        let lhs = self.conditional()?;
        const OPS: &[&str] = &[
            "=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>=",
        ];
        if self.peek_text(0).is_some_and(|t| OPS.contains(&t)) {
            let op = self.bump(NodeKind::Punct);
            let rhs = self.assignment()?;
            return Ok(AstNode::node(
                NodeKind::AssignmentExpression,
                vec![lhs, op, rhs],
            ));
        }
        Ok(lhs)
    }

    fn conditional(&mut self) -> PResult<AstNode> {
        let cond = self.binary(0)?;
        if self.at("?") {
            let q = self.bump(NodeKind::Punct);
            let a = self.expression()?;
            let colon = self.expect(":")?;
            let b = self.conditional()?;
            return Ok(AstNode::node(
                NodeKind::ConditionalExpression,
                vec![cond, q, a, colon, b],
            ));
        }
        Ok(cond)
    }

    fn binary(&mut self, min_level: usize) -> PResult<AstNode> {
        const LEVELS: &[&[&str]] = &[
            &["||"],
            &["&&"],
            &["|"],
            &["^"],
            &["&"],
            &["==", "!="],
            &["<", ">", "<=", ">="],
            &["<<", ">>"],
            &["+", "-"],
            &["*", "/", "%"],
        ];
        if min_level == LEVELS.len() {
            return self.cast();
        }
        let mut lhs = self.binary(min_level + 1)?;
        while self
            .peek_text(0)
            .is_some_and(|t| LEVELS[min_level].contains(&t))
            && self.peek().is_some_and(|t| t.kind == TokenKind::Punct)
        {
            let op = self.bump(NodeKind::Punct);
            let rhs = self.binary(min_level + 1)?;
            lhs = AstNode::node(NodeKind::BinaryExpression, vec![lhs, op, rhs]);
        }
        Ok(lhs)
    }

    fn type_descriptor(&mut self) -> PResult<AstNode> {
        let mut children = vec![self.type_spec()?];
        while self.at("*") {
            children.push(self.bump(NodeKind::Punct));
        }
        Ok(AstNode::node(NodeKind::TypeDescriptor, children))
    }

    fn cast(&mut self) -> PResult<AstNode> {
        if self.at("(") && self.is_type_start_at(1) {
            let open = self.bump(NodeKind::Punct);
            let ty = self.type_descriptor()?;
            let close = self.expect(")")?;
            let operand = self.cast()?;
            return Ok(AstNode::node(
                NodeKind::CastExpression,
                vec![open, ty, close, operand],
            ));
        }
        self.unary()
    }

    fn unary(&mut self) -> PResult<AstNode> {
        let Some(t) = self.peek() else {
            return self.error("an expression");
        };
        if t.kind == TokenKind::Punct {
            match t.text.as_str() {
                "-" | "+" | "!" | "~" => {
                    let op = self.bump(NodeKind::Punct);
                    let operand = self.cast()?;
                    return Ok(AstNode::node(NodeKind::UnaryExpression, vec![op, operand]));
                }
                "*" | "&" => {
                    let op = self.bump(NodeKind::Punct);
                    let operand = self.cast()?;
                    return Ok(AstNode::node(
                        NodeKind::PointerExpression,
                        vec![op, operand],
                    ));
                }
                "++" | "--" => {
                    let op = self.bump(NodeKind::Punct);
                    let operand = self.unary()?;
                    return Ok(AstNode::node(NodeKind::UpdateExpression, vec![op, operand]));
                }
                _ => {}
            }
        }
        if t.kind == TokenKind::Keyword && t.text == "sizeof" {
            let kw = self.bump(NodeKind::Keyword);
            if self.at("(") && self.is_type_start_at(1) {
                let open = self.bump(NodeKind::Punct);
                let ty = self.type_descriptor()?;
                let close = self.expect(")")?;
                return Ok(AstNode::node(
                    NodeKind::SizeofExpression,
                    vec![kw, open, ty, close],
                ));
            }
            let operand = self.unary()?;
            return Ok(AstNode::node(NodeKind::SizeofExpression, vec![kw, operand]));
        }
        self.postfix()
    }

    fn postfix(&mut self) -> PResult<AstNode> {
        let mut expr = self.primary()?;
        loop {
            match self.peek_text(0) {
                Some("(") => {
                    let args = self.argument_list()?;
                    expr = AstNode::node(NodeKind::CallExpression, vec![expr, args]);
                }
                Some("[") => {
                    let open = self.bump(NodeKind::Punct);
                    let idx = self.expression()?;
                    let close = self.expect("]")?;
                    expr =
                        AstNode::node(NodeKind::SubscriptExpression, vec![expr, open, idx, close]);
                }
                Some("." | "->") => {
                    let op = self.bump(NodeKind::Punct);
                    if !self.is_ident_at(0) {
                        return self.error("a field name");
                    }
                    let field = self.bump(NodeKind::FieldIdentifier);
                    expr = AstNode::node(NodeKind::FieldExpression, vec![expr, op, field]);
                }
                Some("++" | "--") => {
                    let op = self.bump(NodeKind::Punct);
                    expr = AstNode::node(NodeKind::UpdateExpression, vec![expr, op]);
                }
                _ => return Ok(expr),
            }
        }
    }

    fn argument_list(&mut self) -> PResult<AstNode> {
        let mut children = vec![self.expect("(")?];
        if !self.at(")") {
            loop {
                children.push(self.assignment()?);
                if self.at(",") {
                    children.push(self.bump(NodeKind::Punct));
                } else {
                    break;
                }
            }
        }
        children.push(self.expect(")")?);
        Ok(AstNode::node(NodeKind::ArgumentList, children))
    }

    fn primary(&mut self) -> PResult<AstNode> {
        let Some(t) = self.peek() else {
            return self.error("an expression");
        };
        match t.kind {
            TokenKind::Identifier | TokenKind::Glob => Ok(self.bump(NodeKind::Identifier)),
            TokenKind::Number => Ok(self.bump(NodeKind::NumberLiteral)),
            TokenKind::Str => Ok(self.bump(NodeKind::StringLiteral)),
            TokenKind::Char => Ok(self.bump(NodeKind::CharLiteral)),
            TokenKind::Punct if t.text == "(" => {
                let open = self.bump(NodeKind::Punct);
                let inner = self.expression()?;
                let close = self.expect(")")?;
                Ok(AstNode::node(
                    NodeKind::ParenthesizedExpression,
                    vec![open, inner, close],
                ))
            }
            _ => self.error("an expression"),
        }
    }
}

fn contains_kind(node: &AstNode, kind: NodeKind) -> bool {
    let mut found = false;
    node.walk(&mut |n| found |= n.kind == kind);
    found
}
