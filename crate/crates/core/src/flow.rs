//! Per-function value flow graph over variable occurrences, and the
//! absolute/relative sub-graphs used by value-flow position encoding.
//!
//! Def-use edges are computed flow-insensitively in lexical order: the most
//! recent definition wins, definitions from both arms of an `if` are unioned
//! at the join, and loop bodies are walked twice so that definitions late in
//! a body reach uses early in it.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::code::{Ast, AstNode, ModelInput, NodeKind};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VariableOccurrence {
    pub var: String,
    /// Index into the code tokens.
    pub token: usize,
    pub line: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FlowReason {
    /// Right-hand side read flows into the written left-hand side.
    Assign,
    /// Reaching definition flows into a use.
    DefUse,
    /// Call argument flows into the lvalue receiving the call result.
    CallResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowEdge {
    pub src: usize,
    pub dst: usize,
    pub reason: FlowReason,
}

/// Multi-edge graph; node ids index `nodes`, which is sorted by token.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueFlowGraph {
    pub nodes: Vec<VariableOccurrence>,
    pub edges: Vec<FlowEdge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubgraphKind {
    Absolute,
    Relative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VfgSubgraph {
    pub kind: SubgraphKind,
    /// Sorted node ids.
    pub nodes: Vec<usize>,
    /// Induced edges as (src, dst) node ids, deduplicated and sorted.
    pub edges: Vec<(usize, usize)>,
    pub anchor: usize,
    pub target: Option<usize>,
}

impl ValueFlowGraph {
    pub fn node_of_token(&self, token: usize) -> Option<usize> {
        self.nodes.binary_search_by_key(&token, |n| n.token).ok()
    }

    /// First occurrence of `var` on `line`.
    pub fn find(&self, var: &str, line: usize) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| n.var == var && n.line == line)
    }

    fn predecessors(&self) -> Vec<Vec<usize>> {
        let mut preds = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            preds[e.dst].push(e.src);
        }
        preds
    }

    fn successors(&self) -> Vec<Vec<usize>> {
        let mut succs = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            succs[e.src].push(e.dst);
        }
        succs
    }

    fn closure(adj: &[Vec<usize>], start: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            for &m in &adj[n] {
                if seen.insert(m) {
                    queue.push_back(m);
                }
            }
        }
        seen
    }

    fn induced(&self, nodes: &BTreeSet<usize>) -> Vec<(usize, usize)> {
        let set: BTreeSet<(usize, usize)> = self
            .edges
            .iter()
            .filter(|e| nodes.contains(&e.src) && nodes.contains(&e.dst))
            .map(|e| (e.src, e.dst))
            .collect();
        set.into_iter().collect()
    }

    /// Rewrites occurrences through `f`, dropping those it maps to `None`
    /// together with their edges. Used when tokens are masked or renamed.
    pub fn remap(
        &self,
        f: impl Fn(&VariableOccurrence) -> Option<VariableOccurrence>,
    ) -> ValueFlowGraph {
        let mut kept: Vec<(usize, VariableOccurrence)> = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| f(n).map(|m| (i, m)))
            .collect();
        kept.sort_by_key(|(_, n)| n.token);
        let ids: HashMap<usize, usize> = kept
            .iter()
            .enumerate()
            .map(|(new, (old, _))| (*old, new))
            .collect();
        let edges = self
            .edges
            .iter()
            .filter_map(|e| {
                Some(FlowEdge {
                    src: *ids.get(&e.src)?,
                    dst: *ids.get(&e.dst)?,
                    reason: e.reason,
                })
            })
            .collect();
        ValueFlowGraph {
            nodes: kept.into_iter().map(|(_, n)| n).collect(),
            edges,
        }
    }

    /// Every occurrence from which a value reaches `anchor`, anchor included.
    pub fn absolute_subgraph(&self, anchor: usize) -> VfgSubgraph {
        let nodes = Self::closure(&self.predecessors(), anchor);
        VfgSubgraph {
            kind: SubgraphKind::Absolute,
            edges: self.induced(&nodes),
            nodes: nodes.into_iter().collect(),
            anchor,
            target: None,
        }
    }

    /// Occurrences on value-flow paths from `target` into `anchor`, or `None`
    /// when `target` does not reach `anchor`. Computed per ordered pair.
    pub fn relative_subgraph(&self, anchor: usize, target: usize) -> Option<VfgSubgraph> {
        let upstream = Self::closure(&self.predecessors(), anchor);
        if !upstream.contains(&target) {
            return None;
        }
        let downstream = Self::closure(&self.successors(), target);
        let nodes: BTreeSet<usize> = upstream.intersection(&downstream).copied().collect();
        Some(VfgSubgraph {
            kind: SubgraphKind::Relative,
            edges: self.induced(&nodes),
            nodes: nodes.into_iter().collect(),
            anchor,
            target: Some(target),
        })
    }

    /// Weakly connected component id per node.
    pub fn components(&self) -> Vec<usize> {
        let mut parent: Vec<usize> = (0..self.nodes.len()).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            let mut c = x;
            while p[c] != r {
                let next = p[c];
                p[c] = r;
                c = next;
            }
            r
        }
        for e in &self.edges {
            let (a, b) = (find(&mut parent, e.src), find(&mut parent, e.dst));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        (0..self.nodes.len())
            .map(|i| find(&mut parent, i))
            .collect()
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph vfg {\n");
        for (i, n) in self.nodes.iter().enumerate() {
            let _ = writeln!(s, "  n{i} [label=\"{}@{} #{}\"];", n.var, n.line, n.token);
        }
        for e in &self.edges {
            let style = match e.reason {
                FlowReason::Assign => "solid",
                FlowReason::DefUse => "dashed",
                FlowReason::CallResult => "dotted",
            };
            let _ = writeln!(s, "  n{} -> n{} [style={style}];", e.src, e.dst);
        }
        s.push_str("}\n");
        s
    }
}

type Env = BTreeMap<String, BTreeSet<usize>>;

fn join(a: &Env, b: &Env) -> Env {
    let mut out = a.clone();
    for (k, v) in b {
        out.entry(k.clone()).or_default().extend(v.iter().copied());
    }
    out
}

struct Builder<'a> {
    /// AST leaf byte offset to VFG node id (variable occurrences only).
    node_at: HashMap<usize, usize>,
    edges: BTreeSet<FlowEdge>,
    order: Vec<FlowEdge>,
    names: &'a [VariableOccurrence],
}

impl Builder<'_> {
    fn occ(&self, leaf: &AstNode) -> Option<usize> {
        if leaf.kind != NodeKind::Identifier {
            return None;
        }
        self.node_at.get(&leaf.span.start).copied()
    }

    fn edge(&mut self, src: usize, dst: usize, reason: FlowReason) {
        let e = FlowEdge { src, dst, reason };
        if self.edges.insert(e) {
            self.order.push(e);
        }
    }

    fn use_of(&mut self, occ: usize, env: &Env) {
        if let Some(defs) = env.get(&self.names[occ].var) {
            for &d in defs {
                if d != occ {
                    self.edge(d, occ, FlowReason::DefUse);
                }
            }
        }
    }

    fn define(&mut self, occ: usize, env: &mut Env) {
        env.insert(self.names[occ].var.clone(), BTreeSet::from([occ]));
    }

    /// The occurrence written by an lvalue, plus whether the write is partial.
    fn lvalue_target(&self, n: &AstNode) -> Option<(usize, bool)> {
        match n.kind {
            NodeKind::Identifier => self.occ(n).map(|o| (o, false)),
            NodeKind::SubscriptExpression | NodeKind::FieldExpression => {
                self.lvalue_target(&n.children[0]).map(|(o, _)| (o, true))
            }
            NodeKind::PointerExpression => {
                self.lvalue_target(&n.children[1]).map(|(o, _)| (o, true))
            }
            NodeKind::ParenthesizedExpression => self.lvalue_target(&n.children[1]),
            _ => None,
        }
    }

    /// Evaluates an expression, recording uses and writes; returns the
    /// occurrences whose values flow into the expression's value.
    fn expr(&mut self, n: &AstNode, env: &mut Env) -> Vec<usize> {
        match n.kind {
            NodeKind::Identifier => match self.occ(n) {
                Some(o) => {
                    self.use_of(o, env);
                    vec![o]
                }
                None => Vec::new(),
            },
            NodeKind::AssignmentExpression => {
                let (lhs, op, rhs) = (&n.children[0], &n.children[1], &n.children[2]);
                let sources = self.expr(rhs, env);
                let target = self.lvalue_target(lhs);
                // Index and pointer sub-expressions of the lvalue are reads.
                self.lvalue_reads(lhs, env);
                let Some((t, partial)) = target else {
                    return sources;
                };
                if partial || op.value.as_deref() != Some("=") {
                    self.use_of(t, env);
                }
                for &s in &sources {
                    self.edge(s, t, FlowReason::Assign);
                }
                for a in call_args(rhs) {
                    for o in self.occurrences_in(a) {
                        self.edge(o, t, FlowReason::CallResult);
                    }
                }
                self.define(t, env);
                vec![t]
            }
            NodeKind::UpdateExpression => {
                let operand = n.children.iter().find(|c| c.kind != NodeKind::Punct);
                match operand.and_then(|o| self.lvalue_target(o)) {
                    Some((t, _)) => {
                        self.use_of(t, env);
                        self.define(t, env);
                        vec![t]
                    }
                    None => operand.map(|o| self.expr(o, env)).unwrap_or_default(),
                }
            }
            NodeKind::CallExpression => self.expr(&n.children[1], env),
            NodeKind::CommaExpression => {
                self.expr(&n.children[0], env);
                self.expr(&n.children[2], env)
            }
            NodeKind::FieldExpression => self.expr(&n.children[0], env),
            NodeKind::TypeDescriptor => Vec::new(),
            _ => {
                let mut out = Vec::new();
                for c in &n.children {
                    out.extend(self.expr(c, env));
                }
                out
            }
        }
    }

    fn lvalue_reads(&mut self, n: &AstNode, env: &mut Env) {
        match n.kind {
            NodeKind::SubscriptExpression => {
                self.lvalue_reads(&n.children[0], env);
                self.expr(&n.children[2], env);
            }
            NodeKind::FieldExpression => self.lvalue_reads(&n.children[0], env),
            NodeKind::PointerExpression => self.lvalue_reads(&n.children[1], env),
            NodeKind::ParenthesizedExpression => self.lvalue_reads(&n.children[1], env),
            _ => {}
        }
    }

    fn occurrences_in(&self, n: &AstNode) -> Vec<usize> {
        let mut out = Vec::new();
        n.walk(&mut |x| out.extend(self.occ(x)));
        out
    }

    fn declarator(&mut self, d: &AstNode, env: &mut Env, sources: &[usize]) {
        match d.kind {
            NodeKind::Identifier => {
                if let Some(o) = self.occ(d) {
                    for &s in sources {
                        self.edge(s, o, FlowReason::Assign);
                    }
                    self.define(o, env);
                }
            }
            NodeKind::PointerDeclarator => {
                if let Some(inner) = d.children.last().filter(|c| c.kind != NodeKind::Punct) {
                    self.declarator(inner, env, sources);
                }
            }
            NodeKind::ArrayDeclarator => {
                // The size expression flows into the declared array.
                let mut srcs = sources.to_vec();
                if d.children.len() == 4 {
                    srcs.extend(self.expr(&d.children[2], env));
                }
                self.declarator(&d.children[0], env, &srcs);
            }
            NodeKind::InitDeclarator => {
                let init = &d.children[2];
                let mut srcs = self.expr(init, env);
                srcs.extend_from_slice(sources);
                let call_srcs: Vec<usize> = call_args(init)
                    .into_iter()
                    .flat_map(|a| self.occurrences_in(a))
                    .collect();
                self.declarator(&d.children[0], env, &srcs);
                if let Some(t) = declared_name(&d.children[0]).and_then(|n| self.occ(n)) {
                    for o in call_srcs {
                        self.edge(o, t, FlowReason::CallResult);
                    }
                }
            }
            NodeKind::FunctionDeclarator => {
                self.statement(&d.children[1], env);
            }
            _ => {}
        }
    }

    fn statement(&mut self, n: &AstNode, env: &mut Env) {
        match n.kind {
            NodeKind::Declaration | NodeKind::ParameterDeclaration => {
                for c in &n.children {
                    if matches!(
                        c.kind,
                        NodeKind::Identifier
                            | NodeKind::PointerDeclarator
                            | NodeKind::ArrayDeclarator
                            | NodeKind::InitDeclarator
                            | NodeKind::FunctionDeclarator
                    ) {
                        self.declarator(c, env, &[]);
                    }
                }
            }
            NodeKind::ParameterList => {
                for c in &n.children {
                    self.statement(c, env);
                }
            }
            NodeKind::ExpressionStatement | NodeKind::ReturnStatement => {
                for c in &n.children {
                    if !c.is_leaf() || c.kind == NodeKind::Identifier {
                        self.expr(c, env);
                    }
                }
            }
            NodeKind::IfStatement => {
                self.expr(&n.children[1], env);
                let mut then_env = env.clone();
                self.statement(&n.children[2], &mut then_env);
                let mut else_env = env.clone();
                if let Some(e) = n.children.get(3) {
                    self.statement(&e.children[1], &mut else_env);
                }
                *env = join(&then_env, &else_env);
            }
            NodeKind::WhileStatement | NodeKind::DoStatement | NodeKind::ForStatement => {
                let header = (n.kind == NodeKind::ForStatement).then(|| for_header(n));
                if let Some((init, _, _)) = &header {
                    match init {
                        Some(i) if i.kind == NodeKind::Declaration => self.statement(i, env),
                        Some(i) => {
                            self.expr(i, env);
                        }
                        None => {}
                    }
                }
                let entry = env.clone();
                let mut looped = env.clone();
                for _ in 0..2 {
                    match &header {
                        Some((_, cond, update)) => {
                            if let Some(c) = cond {
                                self.expr(c, &mut looped);
                            }
                            self.statement(n.children.last().expect("for body"), &mut looped);
                            if let Some(u) = update {
                                self.expr(u, &mut looped);
                            }
                        }
                        None => self.loop_once(n, &mut looped),
                    }
                    looped = join(&entry, &looped);
                }
                *env = looped;
            }
            NodeKind::SwitchStatement => {
                self.expr(&n.children[1], env);
                let entry = env.clone();
                let mut body = env.clone();
                self.statement(&n.children[2], &mut body);
                *env = join(&entry, &body);
            }
            NodeKind::CaseStatement => {
                for c in &n.children {
                    if c.kind.is_statement() {
                        self.statement(c, env);
                    }
                }
            }
            NodeKind::CompoundStatement => {
                for c in &n.children {
                    if c.kind.is_statement() {
                        self.statement(c, env);
                    }
                }
            }
            NodeKind::LabeledStatement => self.statement(&n.children[2], env),
            _ => {}
        }
    }

    fn loop_once(&mut self, n: &AstNode, env: &mut Env) {
        match n.kind {
            NodeKind::WhileStatement => {
                self.expr(&n.children[1], env);
                self.statement(&n.children[2], env);
            }
            NodeKind::DoStatement => {
                self.statement(&n.children[1], env);
                self.expr(&n.children[3], env);
            }
            _ => unreachable!("loop_once on {}", n.kind),
        }
    }
}

/// (init, cond, update) of a `for` header. Segments are delimited by `;`,
/// and a declaration carries its own.
pub(crate) fn for_header(n: &AstNode) -> (Option<&AstNode>, Option<&AstNode>, Option<&AstNode>) {
    let mut segments: [Option<&AstNode>; 3] = [None; 3];
    let mut seg = 0;
    for c in &n.children[2..n.children.len() - 2] {
        if c.value.as_deref() == Some(";") {
            seg += 1;
        } else if seg < 3 {
            segments[seg] = Some(c);
            if c.kind == NodeKind::Declaration {
                seg += 1;
            }
        }
    }
    (segments[0], segments[1], segments[2])
}

pub(crate) fn declared_name(d: &AstNode) -> Option<&AstNode> {
    match d.kind {
        NodeKind::Identifier => Some(d),
        NodeKind::PointerDeclarator => d.children.last().and_then(declared_name),
        NodeKind::ArrayDeclarator | NodeKind::InitDeclarator | NodeKind::FunctionDeclarator => {
            declared_name(&d.children[0])
        }
        _ => None,
    }
}

/// Arguments of a call at the top of `e` (through casts and parentheses).
fn call_args(e: &AstNode) -> Vec<&AstNode> {
    match e.kind {
        NodeKind::CallExpression => e.children[1]
            .children
            .iter()
            .filter(|c| c.kind != NodeKind::Punct)
            .collect(),
        NodeKind::CastExpression => call_args(&e.children[3]),
        NodeKind::ParenthesizedExpression => call_args(&e.children[1]),
        _ => Vec::new(),
    }
}

/// Builds the value flow graph. Nodes are exactly the variable occurrences of
/// `input`.
pub fn build_vfg(ast: &Ast, input: &ModelInput) -> ValueFlowGraph {
    let nodes: Vec<VariableOccurrence> = input
        .var_occurrences
        .iter()
        .map(|(&token, var)| VariableOccurrence {
            var: var.clone(),
            token,
            line: input.code_lines[token],
        })
        .collect();

    // Leaf ordinal equals token index; map byte offsets of variable leaves.
    let mut node_at = HashMap::new();
    let mut ordinal = 0;
    let by_token: HashMap<usize, usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.token, i))
        .collect();
    ast.root.walk(&mut |n| {
        if n.is_leaf() {
            if let Some(&id) = by_token.get(&ordinal) {
                node_at.insert(n.span.start, id);
            }
            ordinal += 1;
        }
    });

    let mut b = Builder {
        node_at,
        edges: BTreeSet::new(),
        order: Vec::new(),
        names: &nodes,
    };
    let mut env = Env::new();
    for c in &ast.root.children {
        match c.kind {
            NodeKind::CompoundStatement => b.statement(c, &mut env),
            _ => {
                let mut decl = Some(c);
                while let Some(d) = decl {
                    if d.kind == NodeKind::FunctionDeclarator {
                        b.statement(&d.children[1], &mut env);
                        break;
                    }
                    decl = d.children.iter().find(|x| !x.is_leaf());
                }
            }
        }
    }
    let mut edges = b.order;
    edges.sort_by_key(|e| (e.dst, e.src, e.reason));
    ValueFlowGraph { nodes, edges }
}
