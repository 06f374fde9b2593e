//! Mini-C frontend: lexing, parsing, canonical printing and interpretation.

pub mod ast;
pub mod interp;
pub mod lexer;
pub mod parser;
pub mod printer;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use ast::{FunctionDef, NodeId, Stmt, StmtKind};
pub use interp::{interpret, ExecTrace, Halt, InterpOptions, RuntimeErrorKind, DEFAULT_STEP_LIMIT};
pub use lexer::{Span, Token, TokenKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct SyntaxError {
    pub span: Span,
    pub message: String,
    pub expected: String,
}

impl SyntaxError {
    pub fn new(span: Span, message: impl Into<String>, expected: impl Into<String>) -> Self {
        Self { span, message: message.into(), expected: expected.into() }
    }
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {} (expected {})", self.span.line, self.span.col, self.message, self.expected)
    }
}

/// A parsed single-function translation unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceUnit {
    pub unit_id: String,
    pub tokens: Vec<Token>,
    pub ast: FunctionDef,
    /// Renameable names (parameters and locals) in first-occurrence order.
    pub identifiers: Vec<String>,
    pub source_text: String,
}

pub fn parse(source_text: &str) -> Result<SourceUnit, SyntaxError> {
    parse_with_id("", source_text)
}

pub fn parse_with_id(unit_id: &str, source_text: &str) -> Result<SourceUnit, SyntaxError> {
    let tokens = lexer::tokenize(source_text)?;
    let ast = parser::Parser::new(&tokens, source_text).parse_function()?;
    let identifiers = collect_identifiers(&ast, &tokens);
    Ok(SourceUnit { unit_id: unit_id.to_string(), tokens, ast, identifiers, source_text: source_text.to_string() })
}

pub fn print(ast: &FunctionDef) -> String {
    printer::print_function(ast)
}

impl SourceUnit {
    /// Re-renders an AST into a fresh unit (canonical text, renumbered ids).
    pub fn from_ast(unit_id: &str, ast: &FunctionDef) -> Result<SourceUnit, SyntaxError> {
        parse_with_id(unit_id, &print(ast))
    }

    /// Every identifier-kind token text in the unit (variables, calls,
    /// fields, typedef names, free globals).
    pub fn all_identifier_texts(&self) -> BTreeSet<&str> {
        self.tokens.iter().filter(|t| t.kind == TokenKind::Identifier).map(|t| t.text.as_str()).collect()
    }

    /// True when the token at `index` refers to a renameable variable.
    pub fn is_variable_token(&self, index: usize) -> bool {
        let t = &self.tokens[index];
        if t.kind != TokenKind::Identifier || !self.identifiers.contains(&t.text) {
            return false;
        }
        match index.checked_sub(1).map(|i| self.tokens[i].text.as_str()) {
            Some("." | "->" | "struct" | "union" | "enum") => false,
            _ => true,
        }
    }

    pub fn is_executable(&self) -> bool {
        interp::check_executable(&self.ast).is_ok()
    }

    /// Token texts joined with single spaces.
    pub fn canonical_token_text(&self) -> String {
        self.tokens.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ")
    }
}

fn collect_identifiers(ast: &FunctionDef, tokens: &[Token]) -> Vec<String> {
    let mut declared: BTreeSet<&str> = ast.params.iter().map(|p| p.name.as_str()).collect();
    ast.body.walk(&mut |s| match &s.kind {
        StmtKind::Decl(d) | StmtKind::For { init: Some(ast::ForInit::Decl(d)), .. } => {
            declared.extend(d.vars.iter().map(|v| v.name.as_str()));
        }
        _ => {}
    });
    let mut seen = BTreeSet::new();
    let mut ordered = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        if t.kind != TokenKind::Identifier || !declared.contains(t.text.as_str()) {
            continue;
        }
        if i > 0 && matches!(tokens[i - 1].text.as_str(), "." | "->" | "struct" | "union" | "enum") {
            continue;
        }
        if seen.insert(t.text.clone()) {
            ordered.push(t.text.clone());
        }
    }
    ordered
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const SEQ_READ_ITER: &str = r#"ssize_t seq_read_iter(struct kiocb *iocb, struct iov_iter *iter) {
    struct seq_file *m = file->private_data;
    size_t copied = 0;
    size_t n;
    // some codes
    while (1) {
        // some codes
    }
    return copied;
}
"#;

    #[test]
    fn minimal_function() {
        let u = parse("int f(){return 0;}").unwrap();
        assert!(u.identifiers.is_empty());
        assert_eq!(u.ast.body_stmts().len(), 1);
        assert!(matches!(u.ast.body_stmts()[0].kind, StmtKind::Return(Some(_))));
    }

    #[test]
    fn seq_read_iter_identifiers() {
        let u = parse(SEQ_READ_ITER).unwrap();
        assert_eq!(u.identifiers, ["iocb", "iter", "m", "copied", "n"]);
        // free globals, struct tags and fields stay out
        assert!(!u.identifiers.iter().any(|i| i == "file" || i == "private_data" || i == "seq_file"));
    }

    #[test]
    fn undeclared_body_placeholder_is_syntax_error() {
        let err = parse("int f(){while(i<10){BodyA}}").unwrap_err();
        assert_eq!(err.span.line, 1);
        assert!(err.expected.contains(';'), "{err}");
    }

    #[test]
    fn unbraced_if_gets_braces() {
        let u = parse("int f(int a){ if (a) return 1; else return 2; }").unwrap();
        let printed = print(&u.ast);
        assert!(printed.contains("if (a) {"), "{printed}");
        assert!(printed.contains("} else {"), "{printed}");
        assert_eq!(parse(&printed).unwrap().ast, u.ast);
    }

    #[test]
    fn precedence_survives_printing() {
        let src = "int f(int a, int b){ return (a + b) * (a - (b - 1)) << 2 ? -(-a) : a ? b : (a, b); }";
        let u = parse(src).unwrap();
        let printed = print(&u.ast);
        assert_eq!(parse(&printed).unwrap().ast, u.ast, "{printed}");
    }

    #[test]
    fn identifiers_ignore_whitespace_and_comments() {
        let a = parse("int f(int x){int y = x; return y;}").unwrap();
        let b = parse("int f(int x) {\n  /* c */ int y =\n x; // z\n return y;\n}").unwrap();
        assert_eq!(a.identifiers, b.identifiers);
        assert_eq!(a.ast, b.ast);
    }

    #[test]
    fn duplicate_case_labels_rejected() {
        assert!(parse("int f(int a){switch(a){case 1: break; case 1: break;} return 0;}").is_err());
    }
}
