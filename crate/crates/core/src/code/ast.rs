use std::fmt;

use serde::{Deserialize, Serialize};

use super::lexer::Span;

macro_rules! node_kinds {
    ($($variant:ident => $name:literal),* $(,)?) => {
        /// Grammar categories. Names follow tree-sitter-c where one exists.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum NodeKind {
            $($variant,)*
        }

        impl NodeKind {
            pub const ALL: &'static [NodeKind] = &[$(NodeKind::$variant,)*];

            pub fn name(self) -> &'static str {
                match self {
                    $(NodeKind::$variant => $name,)*
                }
            }

            pub fn from_name(name: &str) -> Option<NodeKind> {
                match name {
                    $($name => Some(NodeKind::$variant),)*
                    _ => None,
                }
            }
        }
    };
}

node_kinds! {
    FunctionDefinition => "function_definition",
    FunctionDeclarator => "function_declarator",
    ParameterList => "parameter_list",
    ParameterDeclaration => "parameter_declaration",
    Type => "type",
    StorageClass => "storage_class_specifier",
    Declaration => "declaration",
    InitDeclarator => "init_declarator",
    PointerDeclarator => "pointer_declarator",
    ArrayDeclarator => "array_declarator",
    InitializerList => "initializer_list",
    CompoundStatement => "compound_statement",
    ExpressionStatement => "expression_statement",
    IfStatement => "if_statement",
    ElseClause => "else_clause",
    ForStatement => "for_statement",
    WhileStatement => "while_statement",
    DoStatement => "do_statement",
    SwitchStatement => "switch_statement",
    CaseStatement => "case_statement",
    ReturnStatement => "return_statement",
    BreakStatement => "break_statement",
    ContinueStatement => "continue_statement",
    GotoStatement => "goto_statement",
    LabeledStatement => "labeled_statement",
    EmptyStatement => "empty_statement",
    ConditionClause => "condition_clause",
    CommaExpression => "comma_expression",
    AssignmentExpression => "assignment_expression",
    ConditionalExpression => "conditional_expression",
    BinaryExpression => "binary_expression",
    UnaryExpression => "unary_expression",
    PointerExpression => "pointer_expression",
    UpdateExpression => "update_expression",
    CastExpression => "cast_expression",
    SizeofExpression => "sizeof_expression",
    CallExpression => "call_expression",
    ArgumentList => "argument_list",
    SubscriptExpression => "subscript_expression",
    FieldExpression => "field_expression",
    ParenthesizedExpression => "parenthesized_expression",
    TypeDescriptor => "type_descriptor",
    Identifier => "identifier",
    TypeIdentifier => "type_identifier",
    FieldIdentifier => "field_identifier",
    StatementIdentifier => "statement_identifier",
    PrimitiveType => "primitive_type",
    NumberLiteral => "number_literal",
    StringLiteral => "string_literal",
    CharLiteral => "char_literal",
    Keyword => "keyword",
    Punct => "punct",
}

impl NodeKind {
    /// Statement-level nodes: the units patterns match and contexts name.
    pub fn is_statement(self) -> bool {
        use NodeKind::*;
        matches!(
            self,
            Declaration
                | CompoundStatement
                | ExpressionStatement
                | IfStatement
                | ForStatement
                | WhileStatement
                | DoStatement
                | SwitchStatement
                | CaseStatement
                | ReturnStatement
                | BreakStatement
                | ContinueStatement
                | GotoStatement
                | LabeledStatement
                | EmptyStatement
        )
    }

    /// Nodes kept by linearization: function, compound, declaration and
    /// statement nodes. Expressions, declarators and terminals are elided.
    pub fn is_above_expression(self) -> bool {
        self == NodeKind::FunctionDefinition || self.is_statement()
    }

    pub fn is_terminal(self) -> bool {
        use NodeKind::*;
        matches!(
            self,
            Identifier
                | TypeIdentifier
                | FieldIdentifier
                | StatementIdentifier
                | StorageClass
                | PrimitiveType
                | NumberLiteral
                | StringLiteral
                | CharLiteral
                | Keyword
                | Punct
        )
    }

    /// Terminals that name something (identifier score counts these).
    pub fn is_name(self) -> bool {
        matches!(
            self,
            NodeKind::Identifier | NodeKind::TypeIdentifier | NodeKind::FieldIdentifier
        )
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A syntax tree node. Every token of the source is a terminal leaf, so the
/// leaves in order reproduce the token stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AstNode {
    pub kind: NodeKind,
    pub children: Vec<AstNode>,
    pub value: Option<String>,
    pub span: Span,
    /// 1-based line of the first token.
    pub line: usize,
    /// 1-based line of the last token.
    pub end_line: usize,
}

impl AstNode {
    pub fn leaf(kind: NodeKind, value: impl Into<String>, span: Span, line: usize) -> Self {
        Self {
            kind,
            children: Vec::new(),
            value: Some(value.into()),
            span,
            line,
            end_line: line,
        }
    }

    /// Builds an interior node spanning its children. `children` must be non-empty.
    pub fn node(kind: NodeKind, children: Vec<AstNode>) -> Self {
        let first = children.first().expect("interior node needs children");
        let last = children.last().expect("interior node needs children");
        let span = Span::new(first.span.start, last.span.end);
        let (line, end_line) = (first.line, last.end_line);
        Self {
            kind,
            children,
            value: None,
            span,
            line,
            end_line,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn text<'s>(&self, source: &'s str) -> &'s str {
        &source[self.span.start..self.span.end]
    }

    /// Terminal values in source order.
    pub fn terminals(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.walk(&mut |n| {
            if let Some(v) = &n.value {
                out.push(v.as_str());
            }
        });
        out
    }

    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a AstNode)) {
        f(self);
        for c in &self.children {
            c.walk(f);
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(AstNode::node_count).sum::<usize>()
    }

    /// Structural equality ignoring spans and lines.
    pub fn same_shape(&self, other: &AstNode) -> bool {
        self.kind == other.kind
            && self.value == other.value
            && self.children.len() == other.children.len()
            && self
                .children
                .iter()
                .zip(&other.children)
                .all(|(a, b)| a.same_shape(b))
    }

    /// Pre-order list of statement-level nodes below this one (self excluded).
    pub fn statements(&self) -> Vec<&AstNode> {
        let mut out = Vec::new();
        for c in &self.children {
            c.walk(&mut |n| {
                if n.kind.is_statement() {
                    out.push(n);
                }
            });
        }
        out
    }

    /// Path of child indices to the node at `span` with kind `kind`.
    pub fn path_to(&self, span: Span, kind: NodeKind) -> Option<Vec<usize>> {
        if self.span == span && self.kind == kind {
            return Some(Vec::new());
        }
        for (i, c) in self.children.iter().enumerate() {
            if c.span.contains(&span) {
                if let Some(mut p) = c.path_to(span, kind) {
                    p.insert(0, i);
                    return Some(p);
                }
            }
        }
        None
    }

    pub fn at_path(&self, path: &[usize]) -> Option<&AstNode> {
        path.iter().try_fold(self, |n, &i| n.children.get(i))
    }

    /// Compact s-expression rendering used by `inspect` and cache files.
    pub fn to_sexpr(&self) -> String {
        let mut s = String::new();
        self.write_sexpr(&mut s);
        s
    }

    fn write_sexpr(&self, out: &mut String) {
        out.push('(');
        out.push_str(self.kind.name());
        if let Some(v) = &self.value {
            out.push(' ');
            out.push_str(&serde_json::to_string(v).expect("string serializes"));
        }
        for c in &self.children {
            out.push(' ');
            c.write_sexpr(out);
        }
        out.push(')');
    }
}

/// A parsed function together with its source.
#[derive(Debug, Clone)]
pub struct Ast {
    pub root: AstNode,
    pub source: String,
}

impl Ast {
    pub fn node_count(&self) -> usize {
        self.root.node_count()
    }

    /// Statements of the function body in pre-order (the body itself excluded).
    pub fn body_statements(&self) -> Vec<&AstNode> {
        match self.body() {
            Some(body) => body.statements(),
            None => Vec::new(),
        }
    }

    pub fn body(&self) -> Option<&AstNode> {
        self.root
            .children
            .iter()
            .find(|c| c.kind == NodeKind::CompoundStatement)
    }

    pub fn function_name(&self) -> Option<&str> {
        fn find(n: &AstNode) -> Option<&str> {
            if n.kind == NodeKind::FunctionDeclarator {
                return n.children.first().and_then(|c| c.value.as_deref());
            }
            n.children
                .iter()
                .filter(|c| c.kind != NodeKind::CompoundStatement)
                .find_map(find)
        }
        find(&self.root)
    }
}
