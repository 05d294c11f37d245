//! Matching against exhaustive enumeration: every statement subtree, every
//! assignment of holes to subtrees of that statement.

use std::collections::BTreeMap;

use proptest::prelude::*;
use vgx_core::code::{parse_function, Ast, AstNode};
use vgx_core::pattern::{find_matches, glob_match, Template};

const SUBJECT_ATOMS: &[&str] = &["a", "b", "x", "buf", "1", "0"];
const TEMPLATE_ATOMS: &[&str] = &["a", "b", "x", "1", "0", "h0", "h1", "h2", "*u*"];
const CALLEES: &[&str] = &["f", "g", "my_free"];
const TEMPLATE_CALLEES: &[&str] = &["f", "g", "*free*", "h3"];

fn statement(shape: usize, atoms: &[&str], callees: &[&str], pick: &[usize; 4]) -> String {
    let at = |i: usize| atoms[pick[i] % atoms.len()];
    let lhs = |i: usize| {
        let a = at(i);
        if a.chars().all(|c| c.is_ascii_digit()) {
            "x"
        } else {
            a
        }
    };
    match shape {
        0 => format!("{} = {};", lhs(0), at(1)),
        1 => format!("{} = {} + {};", lhs(0), at(1), at(2)),
        2 => format!(
            "{}({}, {});",
            callees[pick[3] % callees.len()],
            at(0),
            at(1)
        ),
        3 => format!("{}({});", callees[pick[3] % callees.len()], at(0)),
        4 => format!("if ({}) return {};", at(0), at(1)),
        5 => format!("if ({}) {} = {};", at(0), lhs(1), at(2)),
        _ => format!("return {};", at(0)),
    }
}

fn subtrees<'a>(n: &'a AstNode, out: &mut Vec<&'a AstNode>) {
    out.push(n);
    for c in &n.children {
        subtrees(c, out);
    }
}

fn equal_under(t: &Template, n: &AstNode, assign: &BTreeMap<u32, &AstNode>) -> bool {
    match t {
        Template::Hole(h) => assign[h].to_sexpr() == n.to_sexpr(),
        Template::Leaf { kind, value } => n.kind == *kind && n.value.as_deref() == Some(value),
        Template::Glob { kind, pattern } => {
            n.kind == *kind && n.value.as_deref().is_some_and(|v| glob_match(pattern, v))
        }
        Template::Node { kind, children } => {
            n.kind == *kind
                && n.children.len() == children.len()
                && children
                    .iter()
                    .zip(&n.children)
                    .all(|(c, m)| equal_under(c, m, assign))
        }
    }
}

fn exists_assignment(t: &Template, site: &AstNode, holes: &[u32]) -> Option<BTreeMap<u32, String>> {
    let mut pool = Vec::new();
    subtrees(site, &mut pool);
    let mut idx = vec![0usize; holes.len()];
    loop {
        let assign: BTreeMap<u32, &AstNode> = holes
            .iter()
            .zip(&idx)
            .map(|(&h, &i)| (h, pool[i]))
            .collect();
        if equal_under(t, site, &assign) {
            return Some(assign.into_iter().map(|(h, n)| (h, n.to_sexpr())).collect());
        }
        let mut k = 0;
        loop {
            if k == idx.len() {
                return None;
            }
            idx[k] += 1;
            if idx[k] < pool.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// (site span start, bound subtrees) for every matching statement, pre-order.
fn oracle(t: &Template, ast: &Ast) -> Vec<(usize, BTreeMap<u32, String>)> {
    let holes = t.holes();
    let mut all = Vec::new();
    subtrees(&ast.root, &mut all);
    all.into_iter()
        .filter(|n| n.kind.is_statement())
        .filter_map(|n| exists_assignment(t, n, &holes).map(|b| (n.span.start, b)))
        .collect()
}

fn pick() -> impl Strategy<Value = [usize; 4]> {
    [0..16usize, 0..16usize, 0..16usize, 0..16usize]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(600))]
    #[test]
    fn matches_equal_exhaustive_enumeration(
        tshape in 0..7usize,
        tpick in pick(),
        body in prop::collection::vec((0..7usize, pick()), 1..4),
        copy_template in any::<bool>(),
    ) {
        let stmts: Vec<String> = body.iter().map(|(s, p)| statement(*s, SUBJECT_ATOMS, CALLEES, p)).collect();
        let src = format!("void t() {{\n    {}\n}}\n", stmts.join("\n    "));
        let ast = parse_function(&src).unwrap();
        let text = if copy_template {
            // Generalize the first subject statement so matches are common.
            let (s, p) = &body[0];
            let mut q = *p;
            q[0] = 5;
            statement(*s, TEMPLATE_ATOMS, TEMPLATE_CALLEES, &q)
        } else {
            statement(tshape, TEMPLATE_ATOMS, TEMPLATE_CALLEES, &tpick)
        };
        let t = Template::from_c(&text).unwrap();
        let got: Vec<(usize, BTreeMap<u32, String>)> = find_matches(&t, &ast)
            .into_iter()
            .map(|m| (m.site_span.start, m.bindings.iter().map(|(&h, n)| (h, n.to_sexpr())).collect()))
            .collect();
        prop_assert_eq!(got, oracle(&t, &ast), "template {} on\n{}", text, src);
    }
}

#[test]
fn oracle_agrees_on_fixed_cases() {
    let ast = parse_function("void t() {\n    my_free(a, b);\n    if (a) x = a;\n    x = a;\n}\n")
        .unwrap();
    for (text, expected) in [
        ("*free*(h0);", 1),
        ("h0 = h1;", 2),
        ("h0 = h0;", 0),
        ("if (h0) h1 = h0;", 1),
        ("h3(a, h0);", 1),
    ] {
        let t = Template::from_c(text).unwrap();
        let o = oracle(&t, &ast);
        assert_eq!(o.len(), expected, "{text}");
        assert_eq!(find_matches(&t, &ast).len(), expected, "{text}");
    }
}
