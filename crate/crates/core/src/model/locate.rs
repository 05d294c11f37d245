//! Context localization: the trained model's greedy output resolved against
//! the function's statements, and a deterministic rule-based fallback.

use serde::{Deserialize, Serialize};

use crate::code::{parse, preprocess, token_texts, Ast, AstNode, NodeKind, SourceUnit};
use crate::flow::build_vfg;
use crate::pattern::catalog::CALL_GLOBS;
use crate::pattern::matching::unify;
use crate::pattern::{glob_match, EditPattern};

use super::net::{Example, Target};
use super::{Model, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextPrediction {
    pub statement_text: Vec<String>,
    /// (index into the body's pre-order statements, 1-based line).
    pub resolved_span: Option<(usize, usize)>,
    pub confidence: f64,
}

pub fn statement_tokens(stmt: &AstNode, source: &str) -> Vec<String> {
    token_texts(stmt.text(source)).unwrap_or_default()
}

/// First body statement whose tokens equal `tokens`.
pub(crate) fn resolve(ast: &Ast, tokens: &[String]) -> Option<(usize, usize)> {
    ast.body_statements()
        .iter()
        .enumerate()
        .find(|(_, s)| statement_tokens(s, &ast.source) == tokens)
        .map(|(i, s)| (i, s.line))
}

/// Greedy decode of the injection statement for `unit`.
pub fn locate(unit: &SourceUnit, model: &Model) -> Result<ContextPrediction, ModelError> {
    let pre = preprocess(unit)?;
    let vfg = build_vfg(&pre.ast, &pre.input);
    let ex = Example::new(
        &pre.input,
        &vfg,
        Target::Seq(Vec::new()),
        &model.vocab,
        model.config.max_seq_len,
    );
    let (ids, confidence) = model.greedy(&ex)?;
    let statement_text: Vec<String> = ids
        .iter()
        .map(|&i| model.vocab.token(i).to_string())
        .collect();
    let resolved_span = resolve(&pre.ast, &statement_text);
    Ok(ContextPrediction {
        statement_text,
        resolved_span,
        confidence,
    })
}

fn is_error_code(tokens: &[String]) -> bool {
    let t: Vec<&str> = tokens.iter().map(String::as_str).collect();
    let ecode = |s: &str| {
        s.len() > 1
            && s.starts_with('E')
            && s.chars()
                .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
    };
    match t.as_slice() {
        ["NULL"] | ["0"] | ["false"] => true,
        ["-", n] => n.chars().all(|c| c.is_ascii_digit()) || ecode(n),
        [e] => ecode(e),
        _ => false,
    }
}

fn is_error_return(n: &AstNode, src: &str) -> bool {
    match n.kind {
        NodeKind::ReturnStatement => {
            let toks = statement_tokens(n, src);
            toks.len() > 2 && is_error_code(&toks[1..toks.len() - 1])
        }
        NodeKind::CompoundStatement => {
            let inner: Vec<&AstNode> = n
                .children
                .iter()
                .filter(|c| c.kind.is_statement())
                .collect();
            inner.len() == 1 && is_error_return(inner[0], src)
        }
        _ => false,
    }
}

/// An `if` without `else` whose body only returns an error code.
fn is_safety_check(n: &AstNode, src: &str) -> bool {
    n.kind == NodeKind::IfStatement && n.children.len() == 3 && is_error_return(&n.children[2], src)
}

fn contains(n: &AstNode, pred: &mut impl FnMut(&AstNode) -> bool) -> bool {
    let mut found = false;
    n.walk(&mut |x| found = found || pred(x));
    found
}

fn calls_catalog_function(n: &AstNode) -> bool {
    contains(n, &mut |x| {
        x.kind == NodeKind::CallExpression
            && x.children
                .first()
                .and_then(|c| c.value.as_deref())
                .is_some_and(|f| CALL_GLOBS.iter().any(|g| glob_match(g, f)))
    })
}

/// Rule score of one statement.
pub(crate) fn rule_score(n: &AstNode, src: &str, patterns: &[EditPattern]) -> u32 {
    let lhs = if patterns.iter().any(|p| unify(&p.lhs, n).is_some()) {
        2
    } else {
        0
    };
    let check = u32::from(contains(n, &mut |x| is_safety_check(x, src)));
    lhs + check + u32::from(calls_catalog_function(n))
}

/// Highest-scoring body statement, earliest on ties. Scores: a match of any
/// pattern's left-hand side counts 2, containing a safety-check `if` that
/// returns an error code counts 1, and calling a function named by a catalog
/// glob counts 1. The confidence is the winning score.
pub fn rule_based_locate(
    unit: &SourceUnit,
    patterns: &[EditPattern],
) -> Result<ContextPrediction, ModelError> {
    let ast = parse(unit)?;
    let stmts = ast.body_statements();
    let mut best: Option<(usize, u32)> = None;
    for (i, s) in stmts.iter().enumerate() {
        let score = rule_score(s, &ast.source, patterns);
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((i, score));
        }
    }
    let (i, score) = best.ok_or(ModelError::NoStatement)?;
    Ok(ContextPrediction {
        statement_text: statement_tokens(stmts[i], &ast.source),
        resolved_span: Some((i, stmts[i].line)),
        confidence: f64::from(score),
    })
}
