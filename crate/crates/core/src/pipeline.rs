//! Production: locate the injection context of each normal function, apply
//! the first ranked pattern that matches there, and keep the sample only if
//! the edit reverts cleanly.

use std::collections::BTreeMap;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code::{parse, Ast, NodeKind, ParseError, SourceUnit, Span};
use crate::model::{locate, rule_based_locate, Model, ModelError};
use crate::pattern::{
    apply, find_matches, revert, sha256_hex, EditPattern, MatchBinding, RevertRecord,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("parse: {0}")]
    Parse(#[from] ParseError),
    #[error("context model: {0}")]
    Model(ModelError),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("writing dataset after {written} records: {source}")]
    Io { written: usize, source: io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextualizerKind {
    Model,
    RuleBased,
}

/// Source of injection contexts.
#[derive(Debug, Clone, Copy)]
pub enum Contextualizer<'a> {
    Model(&'a Model),
    RuleBased,
}

impl Contextualizer<'_> {
    pub fn kind(&self) -> ContextualizerKind {
        match self {
            Contextualizer::Model(_) => ContextualizerKind::Model,
            Contextualizer::RuleBased => ContextualizerKind::RuleBased,
        }
    }
}

/// One dataset record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedSample {
    pub id: String,
    pub project: String,
    pub normal: String,
    pub vulnerable: String,
    /// 1-based inclusive line range of the edit in `vulnerable`.
    pub lines: [usize; 2],
    pub vuln_type: String,
    pub pattern_id: String,
    pub contextualizer: ContextualizerKind,
    #[serde(skip)]
    pub revert: Option<RevertRecord>,
}

/// Why a parsed function produced no sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discard {
    NoStatement,
    Unresolved,
    NoMatch,
    ApplyFailed,
    RevertFailed,
}

impl Discard {
    pub fn name(self) -> &'static str {
        match self {
            Discard::NoStatement => "no_statement",
            Discard::Unresolved => "unresolved",
            Discard::NoMatch => "no_match",
            Discard::ApplyFailed => "apply_failed",
            Discard::RevertFailed => "revert_failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Emitted(GeneratedSample),
    Discarded(Discard),
}

/// Stable id from the unit's identity and text.
pub fn sample_id(unit: &SourceUnit) -> String {
    let key = format!(
        "{}\0{}\0{}\0{}",
        unit.project_id, unit.path, unit.function_name, unit.text
    );
    sha256_hex(key.as_bytes())[..16].to_string()
}

fn within(inner: Span, outer: Span) -> bool {
    outer.start <= inner.start && inner.end <= outer.end
}

fn is_if_deletion(p: &EditPattern) -> bool {
    p.is_deletion() && p.lhs.kind() == Some(NodeKind::IfStatement)
}

/// Innermost `if` of the body containing `span`, or `span` itself.
fn enclosing_if(ast: &Ast, span: Span) -> Span {
    ast.body_statements()
        .into_iter()
        .filter(|s| s.kind == NodeKind::IfStatement && within(span, s.span))
        .min_by_key(|s| s.span.end - s.span.start)
        .map_or(span, |s| s.span)
}

/// Earliest binding of `p` whose site lies inside the context.
fn first_binding(p: &EditPattern, ast: &Ast, context: Span) -> Option<MatchBinding> {
    let scope = if is_if_deletion(p) {
        enclosing_if(ast, context)
    } else {
        context
    };
    find_matches(&p.lhs, ast)
        .into_iter()
        .filter(|b| within(b.site_span, scope))
        .min_by_key(|b| (b.site_span.start, b.site_path.len()))
}

/// Full outcome for one unit. Parse failures are errors, not discards.
pub fn generate_outcome(
    unit: &SourceUnit,
    contextualizer: Contextualizer,
    ranked: &[EditPattern],
) -> Result<Outcome, PipelineError> {
    let ast = parse(unit)?;
    let pred = match contextualizer {
        Contextualizer::Model(m) => locate(unit, m),
        Contextualizer::RuleBased => rule_based_locate(unit, ranked),
    };
    let pred = match pred {
        Ok(p) => p,
        Err(ModelError::NoStatement) => return Ok(Outcome::Discarded(Discard::NoStatement)),
        Err(e) => return Err(PipelineError::Model(e)),
    };
    let Some((index, _)) = pred.resolved_span else {
        return Ok(Outcome::Discarded(Discard::Unresolved));
    };
    let context = ast.body_statements()[index].span;
    let Some((pattern, binding)) = ranked
        .iter()
        .find_map(|p| first_binding(p, &ast, context).map(|b| (p, b)))
    else {
        return Ok(Outcome::Discarded(Discard::NoMatch));
    };
    let Ok(inj) = apply(&binding, pattern, &ast) else {
        return Ok(Outcome::Discarded(Discard::ApplyFailed));
    };
    if revert(&inj.ast.source, &inj.revert, &pattern.lhs)
        .ok()
        .as_deref()
        != Some(unit.text.as_str())
    {
        log::warn!(
            "revert mismatch for {} with pattern {}",
            sample_id(unit),
            pattern.id
        );
        return Ok(Outcome::Discarded(Discard::RevertFailed));
    }
    Ok(Outcome::Emitted(GeneratedSample {
        id: sample_id(unit),
        project: unit.project_id.clone(),
        normal: unit.text.clone(),
        vulnerable: inj.ast.source,
        lines: [inj.lines.0, inj.lines.1],
        vuln_type: pattern.vuln_type.clone(),
        pattern_id: pattern.id.clone(),
        contextualizer: contextualizer.kind(),
        revert: Some(inj.revert),
    }))
}

/// Locates, matches and applies the first ranked pattern. `None` when the
/// context is unresolved or nothing matches there.
pub fn generate(
    unit: &SourceUnit,
    contextualizer: Contextualizer,
    ranked: &[EditPattern],
) -> Result<Option<GeneratedSample>, PipelineError> {
    Ok(match generate_outcome(unit, contextualizer, ranked)? {
        Outcome::Emitted(s) => Some(s),
        Outcome::Discarded(_) => None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
    /// Patterns tried per function, in rank order.
    pub top_k: Option<usize>,
    /// Functions processed between writes.
    pub chunk: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            workers: 0,
            top_k: None,
            chunk: 256,
        }
    }
}

/// Counts for one run. `emitted + discarded == parsed` always holds.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub input: usize,
    pub parsed: usize,
    pub located: usize,
    pub matched: usize,
    pub emitted: usize,
    pub discarded: BTreeMap<String, usize>,
}

impl RunReport {
    pub fn discarded_total(&self) -> usize {
        self.discarded.values().sum()
    }

    fn record(&mut self, outcome: &Result<Outcome, PipelineError>) {
        self.input += 1;
        let Ok(o) = outcome else { return };
        self.parsed += 1;
        match o {
            Outcome::Emitted(_) => {
                self.located += 1;
                self.matched += 1;
                self.emitted += 1;
            }
            Outcome::Discarded(d) => {
                if matches!(
                    d,
                    Discard::NoMatch | Discard::ApplyFailed | Discard::RevertFailed
                ) {
                    self.located += 1;
                }
                if matches!(d, Discard::ApplyFailed | Discard::RevertFailed) {
                    self.matched += 1;
                }
                *self.discarded.entry(d.name().to_string()).or_default() += 1;
            }
        }
    }
}

/// Runs the pipeline over `corpus` and streams emitted samples as JSONL in
/// input order. Output does not depend on the worker count.
pub fn generate_corpus(
    corpus: &[SourceUnit],
    contextualizer: Contextualizer,
    ranked: &[EditPattern],
    config: &PipelineConfig,
    mut out: impl Write,
) -> Result<RunReport, PipelineError> {
    let ranked = &ranked[..config.top_k.unwrap_or(usize::MAX).min(ranked.len())];
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    let mut report = RunReport::default();
    for chunk in corpus.chunks(config.chunk.max(1)) {
        let outcomes: Vec<_> = pool.install(|| {
            chunk
                .par_iter()
                .map(|u| generate_outcome(u, contextualizer, ranked))
                .collect()
        });
        for o in outcomes {
            match &o {
                Err(PipelineError::Parse(e)) => {
                    log::debug!("unparseable input {}: {e}", report.input)
                }
                Err(_) => return Err(o.unwrap_err()),
                Ok(Outcome::Emitted(s)) => {
                    let line = serde_json::to_string(s).expect("sample serializes");
                    writeln!(out, "{line}").map_err(|source| PipelineError::Io {
                        written: report.emitted,
                        source,
                    })?;
                }
                Ok(Outcome::Discarded(_)) => {}
            }
            report.record(&o);
        }
    }
    out.flush().map_err(|source| PipelineError::Io {
        written: report.emitted,
        source,
    })?;
    Ok(report)
}
