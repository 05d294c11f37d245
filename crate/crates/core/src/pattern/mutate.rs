//! Pattern mutation rules and their closure.

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::code::{parse_expression_template, parse_statement, NodeKind};

use super::template::{canonicalize, Template};
use super::{EditPattern, PatternError, PatternScore, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Bidirectional,
    Unidirectional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RuleKind {
    /// `f(args); => ...` <-> `h = f(args); => ...`
    CallAssign,
    /// Swap the returned error code of a deleted safety check.
    ErrorCode,
    /// Replace a deleted safety check's condition by a hole.
    ConditionHole,
    /// Swap the exit statement (return / break / continue) of a safety check.
    ExitStatement,
}

/// A rewrite over patterns. `alternatives` are expression texts for
/// `error-code` and statement texts for `exit-statement`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MutationRule {
    pub id: String,
    pub direction: Direction,
    #[serde(default)]
    pub alternatives: Vec<String>,
    #[serde(default)]
    pub description: String,
}

impl MutationRule {
    fn kind(&self) -> Result<RuleKind, PatternError> {
        Ok(match self.id.as_str() {
            "call-assign" => RuleKind::CallAssign,
            "error-code" => RuleKind::ErrorCode,
            "condition-hole" => RuleKind::ConditionHole,
            "exit-statement" => RuleKind::ExitStatement,
            other => {
                return Err(PatternError::Syntax(format!(
                    "unknown mutation rule `{other}`"
                )))
            }
        })
    }

    /// Compiles alternatives into templates; fails on unknown rule ids.
    fn compile(&self) -> Result<Compiled, PatternError> {
        let kind = self.kind()?;
        let alternatives = self
            .alternatives
            .iter()
            .map(|a| {
                let node = match kind {
                    RuleKind::ExitStatement => parse_statement(a, true),
                    _ => parse_expression_template(a),
                };
                node.map(|n| Template::from_ast(&n))
                    .map_err(|e| PatternError::Syntax(format!("{a}: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Compiled {
            id: self.id.clone(),
            kind,
            direction: self.direction,
            alternatives,
        })
    }
}

struct Compiled {
    id: String,
    kind: RuleKind,
    direction: Direction,
    alternatives: Vec<Template>,
}

fn leaf(kind: NodeKind, value: &str) -> Template {
    Template::Leaf {
        kind,
        value: value.to_string(),
    }
}

fn node(kind: NodeKind, children: Vec<Template>) -> Template {
    Template::Node { kind, children }
}

/// `if (cond) exit` or `if (cond) { exit }` without else: (cond, exit, braced).
fn safety_check(t: &Template) -> Option<(&Template, &Template, bool)> {
    let Template::Node {
        kind: NodeKind::IfStatement,
        children,
    } = t
    else {
        return None;
    };
    if children.len() != 3 {
        return None;
    }
    let cond = children[1].children().get(1)?;
    let body = &children[2];
    let (exit, braced) = match body {
        Template::Node {
            kind: NodeKind::CompoundStatement,
            children: inner,
        } if inner.len() == 3 => (&inner[1], true),
        other => (other, false),
    };
    matches!(
        exit.kind(),
        Some(NodeKind::ReturnStatement | NodeKind::BreakStatement | NodeKind::ContinueStatement)
    )
    .then_some((cond, exit, braced))
}

fn rebuild_check(original: &Template, cond: Template, exit: Template, braced: bool) -> Template {
    let children = original.children();
    let clause = match &children[1] {
        Template::Node { kind, children: c } => node(*kind, vec![c[0].clone(), cond, c[2].clone()]),
        other => other.clone(),
    };
    let body = if braced {
        let inner = children[2].children();
        node(
            NodeKind::CompoundStatement,
            vec![inner[0].clone(), exit, inner[2].clone()],
        )
    } else {
        exit
    };
    node(
        NodeKind::IfStatement,
        vec![children[0].clone(), clause, body],
    )
}

fn return_value(exit: &Template) -> Option<&Template> {
    match exit {
        Template::Node {
            kind: NodeKind::ReturnStatement,
            children,
        } if children.len() == 3 => Some(&children[1]),
        _ => None,
    }
}

fn fresh_hole(lhs: &Template, rhs: Option<&Template>) -> u32 {
    let mut all = lhs.holes();
    if let Some(r) = rhs {
        all.extend(r.holes());
    }
    all.into_iter().max().map_or(0, |m| m + 1)
}

fn call_statement(t: &Template) -> Option<&Template> {
    match t {
        Template::Node {
            kind: NodeKind::ExpressionStatement,
            children,
        } if children.len() == 2 => {
            (children[0].kind() == Some(NodeKind::CallExpression)).then_some(&children[0])
        }
        _ => None,
    }
}

/// `x = f(...);` -> (x, call)
fn assigned_call(t: &Template) -> Option<(&Template, &Template)> {
    match t {
        Template::Node {
            kind: NodeKind::ExpressionStatement,
            children,
        } if children.len() == 2 => match &children[0] {
            Template::Node {
                kind: NodeKind::AssignmentExpression,
                children: a,
            } if a.len() == 3
                && a[1] == leaf(NodeKind::Punct, "=")
                && a[2].kind() == Some(NodeKind::CallExpression) =>
            {
                Some((&a[0], &a[2]))
            }
            _ => None,
        },
        _ => None,
    }
}

fn assign_statement(target: Template, call: Template) -> Template {
    node(
        NodeKind::ExpressionStatement,
        vec![
            node(
                NodeKind::AssignmentExpression,
                vec![target, leaf(NodeKind::Punct, "="), call],
            ),
            leaf(NodeKind::Punct, ";"),
        ],
    )
}

fn call_statement_of(call: Template) -> Template {
    node(
        NodeKind::ExpressionStatement,
        vec![call, leaf(NodeKind::Punct, ";")],
    )
}

impl Compiled {
    fn apply(&self, p: &EditPattern) -> Vec<(Template, Option<Template>)> {
        match self.kind {
            RuleKind::CallAssign => self.call_assign(p),
            RuleKind::ErrorCode | RuleKind::ConditionHole | RuleKind::ExitStatement => {
                if p.rhs.is_some() {
                    return Vec::new();
                }
                let Some((cond, exit, braced)) = safety_check(&p.lhs) else {
                    return Vec::new();
                };
                match self.kind {
                    RuleKind::ErrorCode => {
                        let Some(v) = return_value(exit) else {
                            return Vec::new();
                        };
                        if !self.alternatives.contains(v) {
                            return Vec::new();
                        }
                        self.alternatives
                            .iter()
                            .filter(|a| *a != v)
                            .map(|a| {
                                let kids = exit.children();
                                let new_exit = node(
                                    NodeKind::ReturnStatement,
                                    vec![kids[0].clone(), a.clone(), kids[2].clone()],
                                );
                                (rebuild_check(&p.lhs, cond.clone(), new_exit, braced), None)
                            })
                            .collect()
                    }
                    RuleKind::ConditionHole => {
                        if matches!(cond, Template::Hole(_)) {
                            return Vec::new();
                        }
                        let h = fresh_hole(&p.lhs, None);
                        vec![(
                            rebuild_check(&p.lhs, Template::Hole(h), exit.clone(), braced),
                            None,
                        )]
                    }
                    _ => {
                        let is_return = |t: &Template| return_value(t).is_some();
                        if !is_return(exit) && exit.kind() == Some(NodeKind::ReturnStatement) {
                            return Vec::new();
                        }
                        self.alternatives
                            .iter()
                            .filter(|a| {
                                if is_return(exit) {
                                    !is_return(a)
                                } else {
                                    a.kind() != exit.kind()
                                }
                            })
                            .map(|a| (rebuild_check(&p.lhs, cond.clone(), a.clone(), braced), None))
                            .collect()
                    }
                }
            }
        }
    }

    fn call_assign(&self, p: &EditPattern) -> Vec<(Template, Option<Template>)> {
        let mut out = Vec::new();
        if let Some(call) = call_statement(&p.lhs) {
            let rhs_call = match &p.rhs {
                None => Some(None),
                Some(r) => call_statement(r).map(Some),
            };
            if let Some(rc) = rhs_call {
                let h = Template::Hole(fresh_hole(&p.lhs, p.rhs.as_ref()));
                let lhs = assign_statement(h.clone(), call.clone());
                let rhs = rc.map(|c| assign_statement(h.clone(), c.clone()));
                out.push((lhs, rhs));
            }
        }
        if self.direction == Direction::Bidirectional {
            if let Some((target, call)) = assigned_call(&p.lhs) {
                let rhs_call = match &p.rhs {
                    None => Some(None),
                    Some(r) => assigned_call(r)
                        .filter(|(t, _)| *t == target)
                        .map(|(_, c)| Some(c)),
                };
                if let Some(rc) = rhs_call {
                    out.push((
                        call_statement_of(call.clone()),
                        rc.map(|c| call_statement_of(c.clone())),
                    ));
                }
            }
        }
        out
    }
}

/// Closes `patterns` under `rules`. Originals come first, then mutants in
/// discovery order; mutants are deduplicated structurally and carry their
/// parent and rule as provenance.
pub fn mutate(
    patterns: &[EditPattern],
    rules: &[MutationRule],
) -> Result<Vec<EditPattern>, PatternError> {
    let compiled = rules
        .iter()
        .map(MutationRule::compile)
        .collect::<Result<Vec<_>, _>>()?;
    let mut seen: HashSet<(String, String)> = patterns.iter().map(EditPattern::key).collect();
    let mut out: Vec<EditPattern> = patterns.to_vec();
    let mut queue: VecDeque<usize> = (0..out.len()).collect();
    while let Some(i) = queue.pop_front() {
        for rule in &compiled {
            let parent = out[i].clone();
            for (lhs, rhs) in rule.apply(&parent) {
                let (lhs, rhs) = canonicalize(&lhs, rhs.as_ref());
                let candidate = EditPattern {
                    id: EditPattern::content_id("mut", &lhs, rhs.as_ref()),
                    lhs,
                    rhs,
                    vuln_type: parent.vuln_type.clone(),
                    provenance: Provenance::Mutated {
                        from: parent.id.clone(),
                        rule: rule.id.clone(),
                    },
                    scores: PatternScore::default(),
                };
                if candidate.validate().is_err() || !seen.insert(candidate.key()) {
                    continue;
                }
                out.push(candidate);
                queue.push_back(out.len() - 1);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::catalog::load_mutation_rules;

    fn deletion(lhs: &str) -> EditPattern {
        EditPattern {
            id: "p".into(),
            lhs: Template::from_c(lhs).unwrap(),
            rhs: None,
            vuln_type: "v".into(),
            provenance: Provenance::Mined,
            scores: PatternScore::default(),
        }
    }

    fn rule(id: &str) -> MutationRule {
        load_mutation_rules()
            .unwrap()
            .into_iter()
            .find(|r| r.id == id)
            .unwrap()
    }

    fn shown(ps: &[EditPattern]) -> Vec<String> {
        ps.iter().map(EditPattern::display).collect()
    }

    #[test]
    fn error_codes() {
        let out = mutate(
            &[deletion("if (c) { return NULL; }")],
            &[rule("error-code")],
        )
        .unwrap();
        let got = shown(&out);
        assert_eq!(got.len(), 9);
        for code in [
            "NULL", "0", "-1", "-EINVAL", "EBADFD", "ENOTSOCK", "EPERM", "ENODEV", "ENOMEM",
        ] {
            assert!(
                got.contains(&format!("if (c) {{ return {code}; }} => EMPTY")),
                "{code}: {got:?}"
            );
        }
    }

    #[test]
    fn condition_hole_is_one_way() {
        let out = mutate(
            &[deletion("if (x == NULL) { return -1; }")],
            &[rule("condition-hole")],
        )
        .unwrap();
        assert_eq!(
            shown(&out),
            [
                "if (x == NULL) { return -1; } => EMPTY",
                "if (h0) { return -1; } => EMPTY"
            ]
        );
        let out = mutate(
            &[deletion("if (h0) { return -1; }")],
            &[rule("condition-hole")],
        )
        .unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn exit_statements() {
        let out = mutate(
            &[deletion("if (c) return -EPERM;")],
            &[rule("exit-statement")],
        )
        .unwrap();
        let got = shown(&out);
        assert!(got.contains(&"if (c) break; => EMPTY".to_string()));
        assert!(got.contains(&"if (c) continue; => EMPTY".to_string()));
        assert!(
            got.contains(&"if (c) return -1; => EMPTY".to_string()),
            "{got:?}"
        );
    }

    #[test]
    fn call_assignment_both_ways() {
        let p = EditPattern {
            rhs: Some(Template::from_c("strcpy(h0, h1);").unwrap()),
            ..deletion("strncpy(h0, h1, h2);")
        };
        let out = mutate(&[p], &[rule("call-assign")]).unwrap();
        assert_eq!(
            shown(&out)[1],
            "h0 = strncpy(h1, h2, h3); => h0 = strcpy(h1, h2);"
        );
        let back = mutate(&[out[1].clone()], &[rule("call-assign")]).unwrap();
        assert_eq!(back[1].key(), out[0].key());
    }

    #[test]
    fn closure_is_a_fixpoint() {
        let rules = load_mutation_rules().unwrap();
        let once = mutate(&[deletion("if (p == NULL) return NULL;")], &rules).unwrap();
        let twice = mutate(&once, &rules).unwrap();
        assert_eq!(once.len(), twice.len());
        assert!(once.len() > 9);
    }
}
