//! Recursive-descent parser producing a [`FunctionDef`].
//!
//! Bodies of `if`, loops and `else` branches are normalized to blocks; an
//! `else` directly followed by `if` stays an `else if` chain.

use super::ast::*;
use super::lexer::{is_type_name, literal_value, Token, TokenKind};
use super::SyntaxError;

pub struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    end_span: super::lexer::Span,
}

const TYPE_KEYWORDS: &[&str] = &[
    "int", "long", "short", "char", "unsigned", "signed", "void", "const", "volatile", "static",
    "register", "extern", "inline", "bool", "_Bool", "auto", "struct", "union", "enum",
];

const BASE_TYPE_KEYWORDS: &[&str] =
    &["int", "long", "short", "char", "unsigned", "signed", "void", "bool", "_Bool"];

impl<'a> Parser<'a> {
    pub fn new(tokens: &'a [Token], source: &str) -> Self {
        let lines = source.lines().count().max(1);
        let last = source.lines().last().map(|l| l.len()).unwrap_or(0);
        Self { tokens, pos: 0, end_span: super::lexer::Span { line: lines, col: last + 1 } }
    }

    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, ahead: usize) -> Option<&'a Token> {
        self.tokens.get(self.pos + ahead)
    }

    fn peek_text(&self) -> &'a str {
        self.peek().map(|t| t.text.as_str()).unwrap_or("")
    }

    fn text_at(&self, ahead: usize) -> &'a str {
        self.peek_at(ahead).map(|t| t.text.as_str()).unwrap_or("")
    }

    fn span(&self) -> super::lexer::Span {
        self.peek().map(|t| t.span).unwrap_or(self.end_span)
    }

    fn error(&self, message: impl Into<String>, expected: impl Into<String>) -> SyntaxError {
        let found = self.peek().map(|t| format!(" (found {:?})", t.text)).unwrap_or_else(|| " (found end of input)".into());
        SyntaxError::new(self.span(), format!("{}{}", message.into(), found), expected)
    }

    fn eat(&mut self, text: &str) -> bool {
        if self.peek().is_some_and(|t| t.text == text && t.kind != TokenKind::StringLiteral) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, text: &str) -> Result<(), SyntaxError> {
        if self.eat(text) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{text}`"), text))
        }
    }

    fn expect_ident(&mut self) -> Result<String, SyntaxError> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Identifier => {
                self.pos += 1;
                Ok(t.text.clone())
            }
            _ => Err(self.error("expected identifier", "identifier")),
        }
    }

    pub fn parse_function(&mut self) -> Result<FunctionDef, SyntaxError> {
        let ret = self.parse_type()?;
        let ret_pointers = self.parse_pointers();
        let name = self.expect_ident()?;
        self.expect("(")?;
        let mut params = Vec::new();
        if self.peek_text() == "void" && self.text_at(1) == ")" {
            self.pos += 1;
        }
        if !self.eat(")") {
            loop {
                let ty = self.parse_type()?;
                let pointers = self.parse_pointers();
                let name = self.expect_ident()?;
                params.push(Param { ty, pointers, name });
                if self.eat(")") {
                    break;
                }
                self.expect(",")?;
            }
        }
        if self.peek_text() != "{" {
            return Err(self.error("expected function body", "{"));
        }
        let body = self.parse_block()?;
        if self.peek().is_some() {
            return Err(self.error("trailing tokens after function", "end of input"));
        }
        let mut f = FunctionDef { ret, ret_pointers, name, params, body };
        f.renumber();
        Ok(f)
    }

    fn parse_pointers(&mut self) -> u8 {
        let mut n = 0;
        while self.eat("*") {
            n += 1;
            while self.eat("const") {}
        }
        n
    }

    fn starts_type(&self, ahead: usize) -> bool {
        match self.peek_at(ahead) {
            Some(t) if t.kind == TokenKind::Keyword => TYPE_KEYWORDS.contains(&t.text.as_str()),
            Some(t) if t.kind == TokenKind::Identifier => is_type_name(&t.text),
            _ => false,
        }
    }

    /// Decides whether the statement at the cursor is a declaration.
    fn at_declaration(&self) -> bool {
        if self.starts_type(0) {
            return true;
        }
        let Some(first) = self.peek() else { return false };
        if first.kind != TokenKind::Identifier {
            return false;
        }
        // `foo bar ...` can only be a declaration with a typedef name.
        if self.peek_at(1).is_some_and(|t| t.kind == TokenKind::Identifier) {
            return true;
        }
        // `foo *bar = ...;` / `foo **bar;`
        let mut i = 1;
        while self.text_at(i) == "*" {
            i += 1;
        }
        i > 1
            && self.peek_at(i).is_some_and(|t| t.kind == TokenKind::Identifier)
            && matches!(self.text_at(i + 1), "=" | ";" | "," | "[")
    }

    fn parse_type(&mut self) -> Result<TypeName, SyntaxError> {
        let mut words = Vec::new();
        let mut has_base = false;
        loop {
            let Some(t) = self.peek() else { break };
            match t.kind {
                TokenKind::Keyword if matches!(t.text.as_str(), "struct" | "union" | "enum") => {
                    self.pos += 1;
                    let tag = self.expect_ident()?;
                    words.push(t.text.clone());
                    words.push(tag);
                    has_base = true;
                }
                TokenKind::Keyword if TYPE_KEYWORDS.contains(&t.text.as_str()) => {
                    self.pos += 1;
                    if BASE_TYPE_KEYWORDS.contains(&t.text.as_str()) {
                        has_base = true;
                    }
                    words.push(t.text.clone());
                }
                TokenKind::Identifier if !has_base => {
                    // typedef name
                    self.pos += 1;
                    words.push(t.text.clone());
                    has_base = true;
                }
                _ => break,
            }
        }
        if !has_base {
            return Err(self.error("expected type", "type name"));
        }
        Ok(TypeName { words })
    }

    fn parse_block(&mut self) -> Result<Stmt, SyntaxError> {
        self.expect("{")?;
        let mut stmts = Vec::new();
        while !self.eat("}") {
            if self.peek().is_none() {
                return Err(self.error("unterminated block", "}"));
            }
            stmts.push(self.parse_stmt()?);
        }
        Ok(Stmt::block(stmts))
    }

    /// Parses a statement and wraps it in a block unless it already is one.
    fn parse_body(&mut self) -> Result<Stmt, SyntaxError> {
        let s = self.parse_stmt()?;
        Ok(match s.kind {
            StmtKind::Block(_) => s,
            _ => Stmt::block(vec![s]),
        })
    }

    fn parse_decl(&mut self) -> Result<Decl, SyntaxError> {
        let ty = self.parse_type()?;
        let mut vars = Vec::new();
        loop {
            let pointers = self.parse_pointers();
            let name = self.expect_ident()?;
            let array = if self.eat("[") {
                if self.eat("]") {
                    Some(None)
                } else {
                    let n = self.parse_assign()?;
                    self.expect("]")?;
                    Some(Some(n))
                }
            } else {
                None
            };
            let init = if self.eat("=") {
                Some(if self.peek_text() == "{" { self.parse_init_list()? } else { self.parse_assign()? })
            } else {
                None
            };
            vars.push(Declarator { name, pointers, array, init });
            if !self.eat(",") {
                break;
            }
        }
        Ok(Decl { ty, vars })
    }

    fn parse_init_list(&mut self) -> Result<Expr, SyntaxError> {
        self.expect("{")?;
        let mut items = Vec::new();
        while !self.eat("}") {
            items.push(if self.peek_text() == "{" { self.parse_init_list()? } else { self.parse_assign()? });
            if !self.eat(",") {
                self.expect("}")?;
                break;
            }
        }
        Ok(Expr::InitList(items))
    }

    fn parse_paren_expr(&mut self) -> Result<Expr, SyntaxError> {
        self.expect("(")?;
        let e = self.parse_expr()?;
        self.expect(")")?;
        Ok(e)
    }

    pub fn parse_stmt(&mut self) -> Result<Stmt, SyntaxError> {
        let kind = match self.peek_text() {
            "{" if self.peek().is_some_and(|t| t.kind == TokenKind::Punct) => return self.parse_block(),
            ";" => {
                self.pos += 1;
                StmtKind::Empty
            }
            "if" => {
                self.pos += 1;
                let cond = self.parse_paren_expr()?;
                let then = Box::new(self.parse_body()?);
                let els = if self.eat("else") {
                    if self.peek_text() == "if" {
                        Some(Box::new(self.parse_stmt()?))
                    } else {
                        Some(Box::new(self.parse_body()?))
                    }
                } else {
                    None
                };
                StmtKind::If { cond, then, els }
            }
            "for" => {
                self.pos += 1;
                self.expect("(")?;
                let init = if self.eat(";") {
                    None
                } else if self.at_declaration() {
                    let d = self.parse_decl()?;
                    self.expect(";")?;
                    Some(ForInit::Decl(d))
                } else {
                    let e = self.parse_expr()?;
                    self.expect(";")?;
                    Some(ForInit::Expr(e))
                };
                let cond = if self.eat(";") {
                    None
                } else {
                    let e = self.parse_expr()?;
                    self.expect(";")?;
                    Some(e)
                };
                let step = if self.eat(")") {
                    None
                } else {
                    let e = self.parse_expr()?;
                    self.expect(")")?;
                    Some(e)
                };
                let body = Box::new(self.parse_body()?);
                StmtKind::For { init, cond, step, body }
            }
            "while" => {
                self.pos += 1;
                let cond = self.parse_paren_expr()?;
                let body = Box::new(self.parse_body()?);
                StmtKind::While { cond, body }
            }
            "do" => {
                self.pos += 1;
                let body = Box::new(self.parse_body()?);
                self.expect("while")?;
                let cond = self.parse_paren_expr()?;
                self.expect(";")?;
                StmtKind::DoWhile { body, cond }
            }
            "switch" => {
                self.pos += 1;
                let scrutinee = self.parse_paren_expr()?;
                self.expect("{")?;
                let mut clauses: Vec<Clause> = Vec::new();
                while !self.eat("}") {
                    let label = if self.eat("case") {
                        let e = self.parse_ternary()?;
                        CaseLabel::Case(e)
                    } else if self.eat("default") {
                        CaseLabel::Default
                    } else if clauses.is_empty() {
                        return Err(self.error("expected `case` or `default`", "case"));
                    } else {
                        let s = self.parse_stmt()?;
                        clauses.last_mut().expect("checked non-empty").body.push(s);
                        continue;
                    };
                    self.expect(":")?;
                    if clauses.iter().any(|c| same_label(&c.label, &label)) {
                        return Err(self.error("duplicate case label", "distinct case label"));
                    }
                    clauses.push(Clause { label, body: Vec::new() });
                }
                StmtKind::Switch { scrutinee, clauses }
            }
            "break" => {
                self.pos += 1;
                self.expect(";")?;
                StmtKind::Break
            }
            "continue" => {
                self.pos += 1;
                self.expect(";")?;
                StmtKind::Continue
            }
            "return" => {
                self.pos += 1;
                if self.eat(";") {
                    StmtKind::Return(None)
                } else {
                    let e = self.parse_expr()?;
                    self.expect(";")?;
                    StmtKind::Return(Some(e))
                }
            }
            "else" | "case" | "default" | "}" => {
                return Err(self.error("unexpected token", "statement"));
            }
            _ if self.peek().is_none() => return Err(self.error("unexpected end of input", "statement")),
            _ if self.at_declaration() => {
                let d = self.parse_decl()?;
                self.expect(";")?;
                StmtKind::Decl(d)
            }
            _ => {
                let e = self.parse_expr()?;
                self.expect(";")?;
                StmtKind::Expr(e)
            }
        };
        Ok(Stmt::new(kind))
    }

    pub fn parse_expr(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.parse_assign()?;
        while self.eat(",") {
            let rhs = self.parse_assign()?;
            lhs = Expr::Comma { lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
        Ok(lhs)
    }

    fn parse_assign(&mut self) -> Result<Expr, SyntaxError> {
        let lhs = self.parse_ternary()?;
        if let Some(op) = self.peek().filter(|t| t.kind == TokenKind::Operator).and_then(|t| AssignOp::from_symbol(&t.text)) {
            if !matches!(lhs, Expr::Ident(_) | Expr::Index { .. } | Expr::Member { .. } | Expr::Unary { op: UnaryOp::Deref, .. }) {
                return Err(self.error("left side of assignment is not assignable", "lvalue"));
            }
            self.pos += 1;
            let value = self.parse_assign()?;
            return Ok(Expr::Assign { op, target: Box::new(lhs), value: Box::new(value) });
        }
        Ok(lhs)
    }

    fn parse_ternary(&mut self) -> Result<Expr, SyntaxError> {
        let cond = self.parse_binary(4)?;
        if self.eat("?") {
            let then = self.parse_expr()?;
            self.expect(":")?;
            let els = self.parse_ternary()?;
            return Ok(Expr::Ternary { cond: Box::new(cond), then: Box::new(then), els: Box::new(els) });
        }
        Ok(cond)
    }

    fn parse_binary(&mut self, min_prec: u8) -> Result<Expr, SyntaxError> {
        let mut lhs = self.parse_unary()?;
        loop {
            let Some(op) = self
                .peek()
                .filter(|t| t.kind == TokenKind::Operator)
                .and_then(|t| BinaryOp::from_symbol(&t.text))
            else {
                break;
            };
            let prec = op.precedence();
            if prec < min_prec {
                break;
            }
            self.pos += 1;
            let rhs = self.parse_binary(prec + 1)?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> Result<Expr, SyntaxError> {
        let op = match self.peek_text() {
            "-" => Some(UnaryOp::Neg),
            "+" => Some(UnaryOp::Plus),
            "!" => Some(UnaryOp::Not),
            "~" => Some(UnaryOp::BitNot),
            "*" => Some(UnaryOp::Deref),
            "&" => Some(UnaryOp::AddrOf),
            "++" => Some(UnaryOp::PreInc),
            "--" => Some(UnaryOp::PreDec),
            _ => None,
        };
        if let Some(op) = op.filter(|_| self.peek().is_some_and(|t| t.kind == TokenKind::Operator)) {
            self.pos += 1;
            let expr = self.parse_unary()?;
            return Ok(Expr::Unary { op, expr: Box::new(expr) });
        }
        if self.eat("sizeof") {
            if self.peek_text() == "(" && self.starts_type(1) {
                self.pos += 1;
                let ty = self.parse_type()?;
                let pointers = self.parse_pointers();
                self.expect(")")?;
                return Ok(Expr::SizeofType { ty, pointers });
            }
            let expr = self.parse_unary()?;
            return Ok(Expr::SizeofExpr(Box::new(expr)));
        }
        if self.peek_text() == "(" && self.starts_type(1) {
            self.pos += 1;
            let ty = self.parse_type()?;
            let pointers = self.parse_pointers();
            self.expect(")")?;
            let expr = self.parse_unary()?;
            return Ok(Expr::Cast { ty, pointers, expr: Box::new(expr) });
        }
        self.parse_postfix()
    }

    fn parse_postfix(&mut self) -> Result<Expr, SyntaxError> {
        let mut e = self.parse_primary()?;
        loop {
            match self.peek_text() {
                "(" => {
                    self.pos += 1;
                    let mut args = Vec::new();
                    if !self.eat(")") {
                        loop {
                            args.push(self.parse_assign()?);
                            if self.eat(")") {
                                break;
                            }
                            self.expect(",")?;
                        }
                    }
                    e = Expr::Call { callee: Box::new(e), args };
                }
                "[" => {
                    self.pos += 1;
                    let index = self.parse_expr()?;
                    self.expect("]")?;
                    e = Expr::Index { base: Box::new(e), index: Box::new(index) };
                }
                "." | "->" => {
                    let arrow = self.peek_text() == "->";
                    self.pos += 1;
                    let field = self.expect_ident()?;
                    e = Expr::Member { base: Box::new(e), field, arrow };
                }
                "++" => {
                    self.pos += 1;
                    e = Expr::Postfix { op: PostfixOp::Inc, expr: Box::new(e) };
                }
                "--" => {
                    self.pos += 1;
                    e = Expr::Postfix { op: PostfixOp::Dec, expr: Box::new(e) };
                }
                _ => break,
            }
        }
        Ok(e)
    }

    fn parse_primary(&mut self) -> Result<Expr, SyntaxError> {
        let Some(t) = self.peek() else {
            return Err(self.error("expected expression", "expression"));
        };
        match t.kind {
            TokenKind::IntLiteral => {
                let value = literal_value(&t.text).ok_or_else(|| self.error("invalid literal", "integer literal"))?;
                self.pos += 1;
                Ok(Expr::Int { value, text: t.text.clone() })
            }
            TokenKind::StringLiteral => {
                self.pos += 1;
                Ok(Expr::Str(t.text.clone()))
            }
            TokenKind::Identifier => {
                self.pos += 1;
                Ok(Expr::Ident(t.text.clone()))
            }
            TokenKind::Punct if t.text == "(" => self.parse_paren_expr(),
            _ => Err(self.error("expected expression", "expression")),
        }
    }
}

fn same_label(a: &CaseLabel, b: &CaseLabel) -> bool {
    match (a, b) {
        (CaseLabel::Default, CaseLabel::Default) => true,
        (CaseLabel::Case(x), CaseLabel::Case(y)) => match (x.const_value(), y.const_value()) {
            (Some(u), Some(v)) => u == v,
            _ => x == y,
        },
        _ => false,
    }
}
