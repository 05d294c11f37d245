use proptest::prelude::*;

use super::*;
use crate::fixtures::PASSWORD_CHECK;

fn ast_of(text: &str) -> Ast {
    parse_function(text).unwrap()
}

fn count_kind(n: &AstNode, kind: NodeKind) -> usize {
    let mut c = 0;
    n.walk(&mut |x| c += usize::from(x.kind == kind));
    c
}

#[test]
fn minimal_function_shape() {
    let ast = ast_of("int f(){return 0;}");
    assert_eq!(ast.root.kind, NodeKind::FunctionDefinition);
    let kinds: Vec<_> = ast.root.children.iter().map(|c| c.kind).collect();
    assert_eq!(
        kinds,
        [
            NodeKind::Type,
            NodeKind::FunctionDeclarator,
            NodeKind::CompoundStatement
        ]
    );
    assert_eq!(ast.function_name(), Some("f"));
}

#[test]
fn assignment_terminals() {
    let ast = ast_of("void f(){c=a+b;}");
    let stmt = ast.body_statements()[0];
    assert_eq!(stmt.kind, NodeKind::ExpressionStatement);
    let assign = &stmt.children[0];
    assert_eq!(assign.kind, NodeKind::AssignmentExpression);
    let mut idents = Vec::new();
    assign.walk(&mut |n| {
        if n.kind == NodeKind::Identifier {
            idents.push(n.value.clone().unwrap());
        }
    });
    assert_eq!(idents, ["c", "a", "b"]);
}

#[test]
fn password_check_hand_counts() {
    let ast = ast_of(PASSWORD_CHECK);
    // Hand count of the listing: two if-statements, one strcpy call.
    assert_eq!(count_kind(&ast.root, NodeKind::IfStatement), 2);
    let mut strcpy_calls = 0;
    ast.root.walk(&mut |n| {
        if n.kind == NodeKind::CallExpression && n.children[0].value.as_deref() == Some("strcpy") {
            strcpy_calls += 1;
        }
    });
    assert_eq!(strcpy_calls, 1);
    // 5 declarations/assignments + 2 ifs (each with one nested statement) + strcpy + return.
    assert_eq!(ast.body_statements().len(), 11);
    let first_if = ast
        .body_statements()
        .into_iter()
        .find(|s| s.kind == NodeKind::IfStatement)
        .unwrap();
    assert_eq!((first_if.line, first_if.end_line), (7, 8));
}

#[test]
fn parse_errors_carry_offsets() {
    let err = parse_function("int f( { return 0; }").unwrap_err();
    assert_eq!(err.offset, 7);
    let err = parse_function("int f() { return 0; } int g() { }").unwrap_err();
    assert_eq!(err.offset, 22);
    assert!(parse_function("#include <x.h>\nint f(){}").is_err());
}

#[test]
fn grammar_coverage() {
    let src = r#"static unsigned long g(struct node *n, const char **argv, int k) {
        int a[4] = {1, 2, 3, 4}, *p = &a[0];
        size_t len = sizeof(struct node) + sizeof n->next;
        for (int i = 0; i < k; i++) { if (!a[i]) continue; else break; }
        while (n != NULL && n->val > 0) n = n->next;
        do { k--; } while (k > 0);
        switch (k) { case 1: k = 2; break; default: k = (int)len; }
        p = k ? (char *)argv[0] : NULL;
        *p += 3; k <<= 1; len = -k % 3;
    out:
        goto out;
        return (unsigned long)len;
    }"#;
    let ast = ast_of(src);
    for kind in [
        NodeKind::ForStatement,
        NodeKind::WhileStatement,
        NodeKind::DoStatement,
        NodeKind::SwitchStatement,
        NodeKind::CaseStatement,
        NodeKind::CastExpression,
        NodeKind::SizeofExpression,
        NodeKind::ConditionalExpression,
        NodeKind::FieldExpression,
        NodeKind::LabeledStatement,
        NodeKind::GotoStatement,
        NodeKind::InitializerList,
        NodeKind::PointerExpression,
    ] {
        assert!(count_kind(&ast.root, kind) > 0, "missing {kind}");
    }
}

/// Independent recursive traversal: collect above-expression node types.
fn linearize_oracle(n: &AstNode, out: &mut Vec<String>) {
    let keep = matches!(
        n.kind.name(),
        "function_definition"
            | "compound_statement"
            | "declaration"
            | "expression_statement"
            | "if_statement"
            | "for_statement"
            | "while_statement"
            | "do_statement"
            | "switch_statement"
            | "case_statement"
            | "return_statement"
            | "break_statement"
            | "continue_statement"
            | "goto_statement"
            | "labeled_statement"
            | "empty_statement"
    );
    if keep {
        out.push(n.kind.name().to_string());
    }
    for c in &n.children {
        linearize_oracle(c, out);
    }
}

#[test]
fn linearize_examples() {
    let ast = ast_of("int f(){return 0;}");
    assert_eq!(
        linearize(&ast).tokens,
        [
            "function_definition",
            "compound_statement",
            "return_statement"
        ]
    );

    let ast = ast_of("int f(){int x; if (x) { x = 1; }}");
    let lin = linearize(&ast).tokens;
    assert_eq!(
        lin,
        [
            "function_definition",
            "compound_statement",
            "declaration",
            "if_statement",
            "compound_statement",
            "expression_statement"
        ]
    );
    let mut oracle = Vec::new();
    linearize_oracle(&ast.root, &mut oracle);
    assert_eq!(lin, oracle);
}

#[test]
fn assemble_marks_variables() {
    let unit = SourceUnit::new("void f(){int x; x=1;}");
    let input = assemble_input(&unit, &parse(&unit).unwrap());
    let marked: Vec<_> = input
        .var_occurrences
        .keys()
        .map(|&i| input.code_tokens[i].as_str())
        .collect();
    assert_eq!(marked, ["x", "x"]);
    assert_eq!(input.sequence().iter().filter(|t| **t == SEP).count(), 1);

    let unit = SourceUnit::new("void f(int x){foo(x);}");
    let input = assemble_input(&unit, &parse(&unit).unwrap());
    let names: Vec<_> = input.var_occurrences.values().map(String::as_str).collect();
    assert_eq!(names, ["x", "x"]);
    assert!(!input
        .var_occurrences
        .values()
        .any(|v| v == "foo" || v == "f"));

    let unit = SourceUnit::new("void f(struct s *p){p->len = 0; size_t n;}");
    let input = assemble_input(&unit, &parse(&unit).unwrap());
    let names: Vec<_> = input.var_occurrences.values().map(String::as_str).collect();
    assert_eq!(names, ["p", "p", "n"]);
}

#[test]
fn password_occurrences_share_identity() {
    let unit = SourceUnit::new(PASSWORD_CHECK);
    let input = assemble_input(&unit, &parse(&unit).unwrap());
    let lines: Vec<_> = input
        .var_occurrences
        .iter()
        .filter(|(_, v)| *v == "password")
        .map(|(&i, _)| input.code_lines[i])
        .collect();
    assert_eq!(lines, [1, 6, 9]);
}

/// Symbol-table oracle: a name is a variable iff it is declared (parameter or
/// local) or appears outside call-target position.
#[test]
fn call_targets_excluded_by_symbol_oracle() {
    let src = "int g(int a){int b = h(a); b = k(b, a); return m(b);}";
    let unit = SourceUnit::new(src);
    let input = assemble_input(&unit, &parse(&unit).unwrap());
    let toks = tokenize(src).unwrap();
    for (i, t) in toks.iter().enumerate() {
        let is_callee =
            toks.get(i + 1).is_some_and(|n| n.text == "(") && t.kind == TokenKind::Identifier;
        let expected = t.kind == TokenKind::Identifier && !is_callee;
        assert_eq!(
            input.var_occurrences.contains_key(&i),
            expected,
            "token {i} `{}`",
            t.text
        );
    }
}

fn terminals_match_tokens(text: &str) {
    let ast = parse_function(text).unwrap();
    let toks: Vec<String> = tokenize(text)
        .unwrap()
        .into_iter()
        .map(|t| t.text)
        .collect();
    let terms: Vec<String> = ast
        .root
        .terminals()
        .into_iter()
        .map(str::to_string)
        .collect();
    assert_eq!(terms, toks);
}

fn check_spans(n: &AstNode) {
    assert_eq!(n.value.is_some(), n.children.is_empty());
    let mut prev_end = n.span.start;
    for c in &n.children {
        assert!(n.span.contains(&c.span));
        assert!(c.span.start >= prev_end);
        prev_end = c.span.end;
        check_spans(c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_and_span_invariants(seed in any::<u64>()) {
        let f = crate::synth::random_function(seed);
        terminals_match_tokens(&f);
        check_spans(&parse_function(&f).unwrap().root);
    }

    #[test]
    fn whitespace_edits_do_not_change_terminals(seed in any::<u64>()) {
        let f = crate::synth::random_function(seed);
        let spaced = f.replace(';', " ;\n ").replace('(', "( ");
        let a = parse_function(&f).unwrap();
        let b = parse_function(&spaced).unwrap();
        prop_assert!(a.root.same_shape(&b.root));
    }

    #[test]
    fn removing_a_statement_shrinks_linearization(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let f = crate::synth::random_function(seed);
        let ast = parse_function(&f).unwrap();
        let body = ast.body().unwrap();
        let top: Vec<&AstNode> = body.children.iter().filter(|c| c.kind.is_statement()).collect();
        prop_assume!(top.len() > 1);
        let victim = top[pick.index(top.len())];
        let mut shorter = f.clone();
        shorter.replace_range(victim.span.start..victim.span.end, "");
        let before = linearize(&ast).tokens;
        let after = linearize(&parse_function(&shorter).unwrap()).tokens;
        prop_assert!(after.len() < before.len());
        // Survivors keep their order: `after` is a subsequence of `before`.
        let mut it = before.iter();
        prop_assert!(after.iter().all(|t| it.any(|b| b == t)));
    }
}
