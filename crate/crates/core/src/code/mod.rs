//! Source model: tokenization, parsing, linearization and the dual
//! `code [SEP] ast` model input.

pub mod ast;
pub mod ingest;
pub mod lexer;
mod parser;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ast::{Ast, AstNode, NodeKind};
pub use lexer::{tokenize, Span, Token, TokenKind};

/// Separator between code tokens and linearized AST tokens.
pub const SEP: &str = "[SEP]";

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("parse error at byte {offset}: expected {expected}")]
pub struct ParseError {
    pub offset: usize,
    pub expected: String,
}

impl ParseError {
    pub fn new(offset: usize, expected: impl Into<String>) -> Self {
        Self {
            offset,
            expected: expected.into(),
        }
    }
}

/// One function of an ingested corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceUnit {
    #[serde(rename = "project")]
    pub project_id: String,
    pub path: String,
    #[serde(rename = "name")]
    pub function_name: String,
    #[serde(rename = "code")]
    pub text: String,
}

impl SourceUnit {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            project_id: String::new(),
            path: String::new(),
            function_name: String::new(),
            text: text.into(),
        }
    }
}

/// Parses the text of `unit` as exactly one function definition.
pub fn parse(unit: &SourceUnit) -> Result<Ast, ParseError> {
    parse_function(&unit.text)
}

pub fn parse_function(text: &str) -> Result<Ast, ParseError> {
    let toks = lexer::tokenize(text)?;
    let mut p = parser::Parser::new(&toks, text.len());
    let root = p.function_definition()?;
    if !p.at_end() {
        let off = toks
            .get(root_token_count(&root))
            .map_or(text.len(), |t| t.span.start);
        return Err(ParseError::new(off, "end of input after one function"));
    }
    Ok(Ast {
        root,
        source: text.to_string(),
    })
}

fn root_token_count(root: &AstNode) -> usize {
    root.terminals().len()
}

/// Parses a single statement. With `template` set, `*name*` globs are lexed.
pub fn parse_statement(text: &str, template: bool) -> Result<AstNode, ParseError> {
    let toks = if template {
        lexer::tokenize_template(text)?
    } else {
        lexer::tokenize(text)?
    };
    let mut p = parser::Parser::new(&toks, text.len());
    let stmt = p.statement()?;
    if !p.at_end() {
        return Err(ParseError::new(text.len(), "a single statement"));
    }
    Ok(stmt)
}

/// Parses a single expression (template mode).
pub fn parse_expression_template(text: &str) -> Result<AstNode, ParseError> {
    let toks = lexer::tokenize_template(text)?;
    let mut p = parser::Parser::new(&toks, text.len());
    let e = p.expression()?;
    if !p.at_end() {
        return Err(ParseError::new(text.len(), "a single expression"));
    }
    Ok(e)
}

/// Pre-order node-type sequence, keeping only nodes at or above statement level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearizedAst {
    pub tokens: Vec<String>,
}

pub fn linearize(ast: &Ast) -> LinearizedAst {
    let mut tokens = Vec::new();
    ast.root.walk(&mut |n| {
        if n.kind.is_above_expression() {
            tokens.push(n.kind.name().to_string());
        }
    });
    LinearizedAst { tokens }
}

/// The model's dual input: code tokens, `[SEP]`, linearized AST tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInput {
    pub code_tokens: Vec<String>,
    pub code_kinds: Vec<TokenKind>,
    /// 1-based source line of each code token.
    pub code_lines: Vec<usize>,
    pub ast_tokens: Vec<String>,
    /// Code-token index to variable identity (the variable's name).
    pub var_occurrences: BTreeMap<usize, String>,
}

impl ModelInput {
    /// `code_tokens ++ [SEP] ++ ast_tokens`.
    pub fn sequence(&self) -> Vec<&str> {
        let mut seq: Vec<&str> = self.code_tokens.iter().map(String::as_str).collect();
        seq.push(SEP);
        seq.extend(self.ast_tokens.iter().map(String::as_str));
        seq
    }

    pub fn len(&self) -> usize {
        self.code_tokens.len() + 1 + self.ast_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Identifier leaves that name variables: everything lexed as an identifier
/// except call targets and the function's own name. Returns leaf ordinals
/// (which equal token indices) with the variable name.
pub fn variable_leaves(ast: &Ast) -> BTreeMap<usize, String> {
    fn visit(n: &AstNode, excluded: bool, counter: &mut usize, out: &mut BTreeMap<usize, String>) {
        if n.is_leaf() {
            if n.kind == NodeKind::Identifier && !excluded {
                out.insert(*counter, n.value.clone().unwrap_or_default());
            }
            *counter += 1;
            return;
        }
        for (i, c) in n.children.iter().enumerate() {
            let skip = i == 0
                && matches!(
                    n.kind,
                    NodeKind::CallExpression | NodeKind::FunctionDeclarator
                );
            visit(c, skip, counter, out);
        }
    }
    let mut out = BTreeMap::new();
    let mut counter = 0;
    visit(&ast.root, false, &mut counter, &mut out);
    out
}

pub fn assemble_input(unit: &SourceUnit, ast: &Ast) -> ModelInput {
    let toks = lexer::tokenize(&unit.text).unwrap_or_default();
    ModelInput {
        code_tokens: toks.iter().map(|t| t.text.clone()).collect(),
        code_kinds: toks.iter().map(|t| t.kind).collect(),
        code_lines: toks.iter().map(|t| t.line).collect(),
        ast_tokens: linearize(ast).tokens,
        var_occurrences: variable_leaves(ast),
    }
}

/// Everything preprocessing derives from one function.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub unit: SourceUnit,
    pub ast: Ast,
    pub input: ModelInput,
}

pub fn preprocess(unit: &SourceUnit) -> Result<Preprocessed, ParseError> {
    let ast = parse(unit)?;
    let input = assemble_input(unit, &ast);
    Ok(Preprocessed {
        unit: unit.clone(),
        ast,
        input,
    })
}

/// Token texts of a fragment, used for whitespace-insensitive comparison.
pub fn token_texts(text: &str) -> Result<Vec<String>, ParseError> {
    Ok(lexer::tokenize(text)?.into_iter().map(|t| t.text).collect())
}

/// Token texts of a template fragment (globs lex as one token).
pub fn template_token_texts(text: &str) -> Result<Vec<String>, ParseError> {
    Ok(lexer::tokenize_template(text)?
        .into_iter()
        .map(|t| t.text)
        .collect())
}

/// 1-based line number of a byte offset.
pub fn line_of(text: &str, offset: usize) -> usize {
    1 + text.as_bytes()[..offset.min(text.len())]
        .iter()
        .filter(|&&b| b == b'\n')
        .count()
}

#[cfg(test)]
mod tests;
