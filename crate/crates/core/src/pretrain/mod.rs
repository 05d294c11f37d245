//! Deterministic data generators for the five pre-training objectives and
//! the refactoring augmentation used for fine-tuning.
//!
//! Every sample draws from its own RNG stream keyed by (base seed, corpus
//! index), so outputs do not depend on iteration order or worker count.

mod augment;
mod junk;

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code::{
    linearize, preprocess, token_texts, Ast, AstNode, ModelInput, NodeKind, Preprocessed,
    SourceUnit, TokenKind,
};
use crate::flow::{build_vfg, declared_name, ValueFlowGraph, VariableOccurrence};

pub use augment::{augment, label_span_at_line, RefactoredVariant, Transform, TransformKind};
pub use junk::{instantiate_junk, JUNK_TEMPLATES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Objective {
    Msp,
    It,
    Mip,
    Cap,
    Isp,
}

impl Objective {
    pub const ALL: [Objective; 5] = [
        Objective::Msp,
        Objective::It,
        Objective::Mip,
        Objective::Cap,
        Objective::Isp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Msp => "MSP",
            Objective::It => "IT",
            Objective::Mip => "MIP",
            Objective::Cap => "CAP",
            Objective::Isp => "ISP",
        }
    }

    /// Objectives trained with the encoder alone.
    pub fn encoder_only(self) -> bool {
        matches!(self, Objective::Cap | Objective::It)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    /// Masked spans as (first code token, length) in the original input, and
    /// the decoder target: each span's tokens preceded by its sentinel.
    Spans {
        spans: Vec<(usize, usize)>,
        target: Vec<String>,
    },
    /// One bit per code token, set for identifiers.
    Identifiers(Vec<bool>),
    /// Sentinel to original identifier, in order of first appearance.
    Names(Vec<(String, String)>),
    /// Whether the AST half belongs to the code half.
    Matched(bool),
    /// Statement inserted into the host and the index of its first code
    /// token in the perturbed input.
    Inserted { text: String, token: usize },
}

/// One pre-training example. `vfg` is keyed by token indices of `input`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretrainSample {
    pub objective: Objective,
    pub input: ModelInput,
    pub vfg: ValueFlowGraph,
    pub label: Label,
    pub seed: u64,
}

impl PretrainSample {
    /// The exported record: objective, flat input sequence, label and seed.
    pub fn to_record(&self) -> serde_json::Value {
        serde_json::json!({
            "objective": self.objective,
            "input": self.input.sequence(),
            "label": self.label,
            "seed": self.seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PretrainError {
    #[error("input has {0} code tokens, at least 7 are needed")]
    TooShort(usize),
    #[error("no viable donor statement for unit {0}")]
    NoViableDonor(usize),
}

pub const MASK_RATE: f64 = 0.15;
pub const MAX_SPAN: usize = 5;
const ISP_RETRIES: usize = 64;

/// RNG for the sample at `index` under `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn msp_sentinel(k: usize) -> String {
    format!("<S{k}>")
}

pub fn mip_sentinel(k: usize) -> String {
    format!("<ID{k}>")
}

/// Rebuilds an input from a new code token list. `origin[i]` is the index
/// of the original token now at position `i`, if any; variable marks follow
/// their tokens, renamed through `rename`.
fn rebuild(
    input: &ModelInput,
    vfg: &ValueFlowGraph,
    tokens: Vec<(String, TokenKind, usize, Option<usize>)>,
    rename: &dyn Fn(&str) -> String,
) -> (ModelInput, ValueFlowGraph) {
    let mut new_index = HashMap::new();
    let mut out = ModelInput {
        code_tokens: Vec::with_capacity(tokens.len()),
        code_kinds: Vec::with_capacity(tokens.len()),
        code_lines: Vec::with_capacity(tokens.len()),
        ast_tokens: input.ast_tokens.clone(),
        var_occurrences: Default::default(),
    };
    for (i, (text, kind, line, origin)) in tokens.into_iter().enumerate() {
        if let Some(o) = origin {
            new_index.insert(o, i);
            if let Some(v) = input.var_occurrences.get(&o) {
                out.var_occurrences.insert(i, rename(v));
            }
        }
        out.code_tokens.push(text);
        out.code_kinds.push(kind);
        out.code_lines.push(line);
    }
    let g = vfg.remap(|n| {
        new_index.get(&n.token).map(|&t| VariableOccurrence {
            var: rename(&n.var),
            token: t,
            line: n.line,
        })
    });
    (out, g)
}

/// Masks about 15% of the code tokens in non-overlapping, non-adjacent spans
/// of 1 to 5 tokens; each span becomes one sentinel.
pub fn gen_msp(
    input: &ModelInput,
    vfg: &ValueFlowGraph,
    seed: u64,
) -> Result<PretrainSample, PretrainError> {
    let n = input.code_tokens.len();
    if n < 7 {
        return Err(PretrainError::TooShort(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = ((n as f64 * MASK_RATE).round() as usize).max(1);
    let mut lengths = Vec::new();
    let mut left = total;
    while left > 0 {
        let l = rng.random_range(1..=MAX_SPAN).min(left);
        lengths.push(l);
        left -= l;
    }
    // Spans sit at distinct gaps of the unmasked sequence, so none touch.
    let unmasked = n - total;
    let mut gaps = BTreeSet::new();
    while gaps.len() < lengths.len() {
        gaps.insert(rng.random_range(0..=unmasked));
    }
    let mut spans = Vec::with_capacity(lengths.len());
    for (k, (&gap, &len)) in gaps.iter().zip(&lengths).enumerate() {
        let before: usize = lengths[..k].iter().sum();
        spans.push((gap + before, len));
    }

    let mut target = Vec::new();
    let mut tokens = Vec::new();
    let mut i = 0;
    let mut next = spans.iter().enumerate().peekable();
    while i < n {
        if let Some(&(k, &(start, len))) = next.peek() {
            if start == i {
                target.push(msp_sentinel(k));
                target.extend(input.code_tokens[start..start + len].iter().cloned());
                tokens.push((
                    msp_sentinel(k),
                    TokenKind::Punct,
                    input.code_lines[start],
                    None,
                ));
                i += len;
                next.next();
                continue;
            }
        }
        tokens.push((
            input.code_tokens[i].clone(),
            input.code_kinds[i],
            input.code_lines[i],
            Some(i),
        ));
        i += 1;
    }
    let (masked, g) = rebuild(input, vfg, tokens, &|v| v.to_string());
    Ok(PretrainSample {
        objective: Objective::Msp,
        input: masked,
        vfg: g,
        label: Label::Spans { spans, target },
        seed,
    })
}

/// Identifier tagging over the lexer's token classes.
pub fn gen_it(input: &ModelInput, vfg: &ValueFlowGraph) -> PretrainSample {
    let bits = input
        .code_kinds
        .iter()
        .map(|k| *k == TokenKind::Identifier)
        .collect();
    PretrainSample {
        objective: Objective::It,
        input: input.clone(),
        vfg: vfg.clone(),
        label: Label::Identifiers(bits),
        seed: 0,
    }
}

/// Replaces every identifier with a per-name sentinel.
pub fn gen_mip(input: &ModelInput, vfg: &ValueFlowGraph) -> PretrainSample {
    let mut names: Vec<(String, String)> = Vec::new();
    let mut sentinel_of: HashMap<String, String> = HashMap::new();
    let mut tokens = Vec::with_capacity(input.code_tokens.len());
    for (i, t) in input.code_tokens.iter().enumerate() {
        let kind = input.code_kinds[i];
        let text = if kind == TokenKind::Identifier {
            sentinel_of
                .entry(t.clone())
                .or_insert_with(|| {
                    let s = mip_sentinel(names.len());
                    names.push((s.clone(), t.clone()));
                    s
                })
                .clone()
        } else {
            t.clone()
        };
        tokens.push((text, kind, input.code_lines[i], Some(i)));
    }
    let (masked, g) = rebuild(input, vfg, tokens, &|v| {
        sentinel_of.get(v).cloned().unwrap_or_else(|| v.to_string())
    });
    PretrainSample {
        objective: Objective::Mip,
        input: masked,
        vfg: g,
        label: Label::Names(names),
        seed: 0,
    }
}

/// Inverts [`gen_mip`]: the original code token sequence.
pub fn unmask_identifiers(tokens: &[String], names: &[(String, String)]) -> Vec<String> {
    let map: HashMap<&str, &str> = names
        .iter()
        .map(|(s, n)| (s.as_str(), n.as_str()))
        .collect();
    tokens
        .iter()
        .map(|t| {
            map.get(t.as_str())
                .map_or_else(|| t.clone(), |n| n.to_string())
        })
        .collect()
}

fn with_vfg(p: &Preprocessed) -> ValueFlowGraph {
    build_vfg(&p.ast, &p.input)
}

/// Code-AST pairing: each unit keeps its own AST with probability 1/2,
/// otherwise gets the linearized AST of another unit with a different one.
pub fn gen_cap(corpus: &[Preprocessed], seed: u64) -> Vec<PretrainSample> {
    let lin: Vec<Vec<String>> = corpus.iter().map(|p| linearize(&p.ast).tokens).collect();
    if corpus.len() < 2 {
        log::warn!("CAP needs at least two units to form negatives; emitting positives only");
    }
    corpus
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = sample_rng(seed, i as u64);
            let negative = rng.random_bool(0.5);
            let mut input = p.input.clone();
            let mut matched = true;
            if negative {
                let others: Vec<usize> = (0..corpus.len())
                    .filter(|&j| j != i && lin[j] != lin[i])
                    .collect();
                if let Some(&j) = others.get(rng.random_range(0..others.len().max(1))) {
                    input.ast_tokens = lin[j].clone();
                    matched = false;
                }
            }
            PretrainSample {
                objective: Objective::Cap,
                input,
                vfg: with_vfg(p),
                label: Label::Matched(matched),
                seed,
            }
        })
        .collect()
}

/// A place between statements where new statements can go: byte offset,
/// and the text to put before and after the insertion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Boundary {
    pub at: usize,
    pub lead: String,
    pub trail: String,
}

impl Boundary {
    /// Separator between several statements inserted here.
    pub fn separator(&self) -> &str {
        if self.trail.starts_with('\n') {
            &self.trail
        } else if self.lead.starts_with('\n') {
            &self.lead
        } else {
            " "
        }
    }
}

/// Boundaries of every statement list in the function body.
pub(crate) fn statement_boundaries(ast: &Ast) -> Vec<Boundary> {
    let src = ast.source.as_str();
    let mut out = Vec::new();
    let Some(body) = ast.body() else { return out };
    let mut lists = vec![body];
    body.walk(&mut |n| {
        if n.kind == NodeKind::CompoundStatement && !std::ptr::eq(n, body) {
            lists.push(n);
        }
    });
    for list in lists {
        let stmts: Vec<_> = list
            .children
            .iter()
            .filter(|c| c.kind.is_statement())
            .collect();
        for s in &stmts {
            let line_start = src[..s.span.start].rfind('\n').map_or(0, |i| i + 1);
            let lead = &src[line_start..s.span.start];
            let trail = if lead.trim().is_empty() {
                format!("\n{lead}")
            } else {
                " ".into()
            };
            out.push(Boundary {
                at: s.span.start,
                lead: String::new(),
                trail,
            });
        }
        let open = list.children.first().expect("compound has braces").span.end;
        let after = stmts.last().map_or(open, |s| s.span.end);
        let indent = stmts.last().map_or_else(String::new, |s| {
            let line_start = src[..s.span.start].rfind('\n').map_or(0, |i| i + 1);
            src[line_start..s.span.start]
                .chars()
                .take_while(|c| c.is_whitespace())
                .collect()
        });
        let lead = if indent.is_empty() {
            " ".to_string()
        } else {
            format!("\n{indent}")
        };
        out.push(Boundary {
            at: after,
            lead,
            trail: String::new(),
        });
    }
    out.sort_by_key(|b| b.at);
    out.dedup_by_key(|b| b.at);
    out
}

fn donor_candidates(p: &Preprocessed) -> Vec<&AstNode> {
    use crate::code::NodeKind::*;
    p.ast
        .body_statements()
        .into_iter()
        .filter(|s| {
            !matches!(
                s.kind,
                CaseStatement
                    | LabeledStatement
                    | BreakStatement
                    | ContinueStatement
                    | CompoundStatement
            )
        })
        .collect()
}

fn declared_names(n: &AstNode) -> Vec<&str> {
    use crate::code::NodeKind::*;
    if n.kind != Declaration {
        return Vec::new();
    }
    n.children
        .iter()
        .filter(|c| {
            matches!(
                c.kind,
                Identifier | InitDeclarator | PointerDeclarator | ArrayDeclarator
            )
        })
        .filter_map(|c| declared_name(c)?.value.as_deref())
        .collect()
}

/// Irrelevant statement insertion: a statement from another unit is spliced
/// in at a random statement boundary of the host.
pub fn gen_isp(corpus: &[Preprocessed], seed: u64) -> Result<Vec<PretrainSample>, PretrainError> {
    corpus
        .iter()
        .enumerate()
        .map(|(i, host)| isp_one(corpus, i, host, seed))
        .collect()
}

/// Like `gen_isp`, but units without a viable donor are skipped and
/// reported instead of failing the whole corpus.
pub fn gen_isp_lenient(
    corpus: &[Preprocessed],
    seed: u64,
) -> (Vec<PretrainSample>, Vec<PretrainError>) {
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for (i, host) in corpus.iter().enumerate() {
        match isp_one(corpus, i, host, seed) {
            Ok(s) => out.push(s),
            Err(e) => skipped.push(e),
        }
    }
    (out, skipped)
}

fn isp_one(
    corpus: &[Preprocessed],
    i: usize,
    host: &Preprocessed,
    seed: u64,
) -> Result<PretrainSample, PretrainError> {
    let mut rng = sample_rng(seed, i as u64);
    let host_vars: BTreeSet<&str> = host
        .input
        .var_occurrences
        .values()
        .map(String::as_str)
        .collect();
    let bounds = statement_boundaries(&host.ast);
    if corpus.len() < 2 || bounds.is_empty() {
        return Err(PretrainError::NoViableDonor(i));
    }
    for _ in 0..ISP_RETRIES {
        let j = (i + rng.random_range(1..corpus.len())) % corpus.len();
        let donors = donor_candidates(&corpus[j]);
        if donors.is_empty() {
            continue;
        }
        let d = donors[rng.random_range(0..donors.len())];
        if declared_names(d).iter().any(|n| host_vars.contains(n)) {
            continue;
        }
        let text = d.text(&corpus[j].ast.source).to_string();
        let b = &bounds[rng.random_range(0..bounds.len())];
        let src = &host.ast.source;
        let perturbed = format!(
            "{}{}{text}{}{}",
            &src[..b.at],
            b.lead,
            b.trail,
            &src[b.at..]
        );
        let Ok(pre) = preprocess(&SourceUnit {
            text: perturbed,
            ..host.unit.clone()
        }) else {
            continue;
        };
        return Ok(PretrainSample {
            objective: Objective::Isp,
            vfg: with_vfg(&pre),
            input: pre.input,
            label: Label::Inserted {
                text,
                token: token_texts(&src[..b.at]).map_or(0, |t| t.len()),
            },
            seed,
        });
    }
    Err(PretrainError::NoViableDonor(i))
}

/// Removes the inserted statement recorded in an ISP label from the
/// perturbed code tokens, or `None` when the label does not sit there.
pub fn remove_inserted(tokens: &[String], text: &str, token: usize) -> Option<Vec<String>> {
    let ins = token_texts(text).ok()?;
    if tokens.get(token..token + ins.len())? != ins.as_slice() {
        return None;
    }
    Some(
        tokens[..token]
            .iter()
            .chain(&tokens[token + ins.len()..])
            .cloned()
            .collect(),
    )
}

/// True when `a` and `b` have the same token sequence.
pub fn same_tokens(a: &str, b: &str) -> bool {
    matches!((token_texts(a), token_texts(b)), (Ok(x), Ok(y)) if x == y)
}
