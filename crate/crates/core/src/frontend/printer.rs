//! Canonical pretty-printer. Every compound statement body gets braces and
//! parentheses are emitted only where precedence requires them.

use std::fmt::Write;

use super::ast::*;

const INDENT: &str = "    ";

pub fn print_function(f: &FunctionDef) -> String {
    let mut out = String::new();
    out.push_str(&type_prefix(&f.ret, f.ret_pointers));
    out.push_str(&f.name);
    out.push('(');
    let params: Vec<String> = f.params.iter().map(|p| format!("{}{}", type_prefix(&p.ty, p.pointers), p.name)).collect();
    out.push_str(&params.join(", "));
    out.push_str(") ");
    print_block_inline(&mut out, f.body_stmts(), 0);
    out.push('\n');
    out
}

fn type_prefix(ty: &TypeName, pointers: u8) -> String {
    let mut s = ty.words.join(" ");
    s.push(' ');
    for _ in 0..pointers {
        s.push('*');
    }
    s
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str(INDENT);
    }
}

/// Writes `{ ... }` starting at the current column, closing brace at `level`.
fn print_block_inline(out: &mut String, stmts: &[Stmt], level: usize) {
    out.push_str("{\n");
    for s in stmts {
        print_stmt(out, s, level + 1);
    }
    indent(out, level);
    out.push('}');
}

fn block_stmts(s: &Stmt) -> &[Stmt] {
    match &s.kind {
        StmtKind::Block(stmts) => stmts,
        _ => std::slice::from_ref(s),
    }
}

pub fn print_decl(d: &Decl) -> String {
    let vars: Vec<String> = d
        .vars
        .iter()
        .map(|v| {
            let mut s = "*".repeat(v.pointers as usize);
            s.push_str(&v.name);
            match &v.array {
                Some(Some(n)) => {
                    let _ = write!(s, "[{}]", print_expr(n));
                }
                Some(None) => s.push_str("[]"),
                None => {}
            }
            if let Some(init) = &v.init {
                let _ = write!(s, " = {}", expr_at(init, 2));
            }
            s
        })
        .collect();
    format!("{} {}", d.ty.words.join(" "), vars.join(", "))
}

fn print_stmt(out: &mut String, s: &Stmt, level: usize) {
    indent(out, level);
    print_stmt_body(out, s, level);
}

fn print_stmt_body(out: &mut String, s: &Stmt, level: usize) {
    match &s.kind {
        StmtKind::Block(stmts) => {
            print_block_inline(out, stmts, level);
            out.push('\n');
        }
        StmtKind::Decl(d) => {
            out.push_str(&print_decl(d));
            out.push_str(";\n");
        }
        StmtKind::Expr(e) => {
            out.push_str(&print_expr(e));
            out.push_str(";\n");
        }
        StmtKind::Empty => out.push_str(";\n"),
        StmtKind::If { .. } => {
            print_if(out, s, level);
            out.push('\n');
        }
        StmtKind::For { init, cond, step, body } => {
            out.push_str("for (");
            match init {
                Some(ForInit::Decl(d)) => out.push_str(&print_decl(d)),
                Some(ForInit::Expr(e)) => out.push_str(&print_expr(e)),
                None => {}
            }
            out.push(';');
            if let Some(c) = cond {
                out.push(' ');
                out.push_str(&print_expr(c));
            }
            out.push(';');
            if let Some(st) = step {
                out.push(' ');
                out.push_str(&print_expr(st));
            }
            out.push_str(") ");
            print_block_inline(out, block_stmts(body), level);
            out.push('\n');
        }
        StmtKind::While { cond, body } => {
            let _ = write!(out, "while ({}) ", print_expr(cond));
            print_block_inline(out, block_stmts(body), level);
            out.push('\n');
        }
        StmtKind::DoWhile { body, cond } => {
            out.push_str("do ");
            print_block_inline(out, block_stmts(body), level);
            let _ = writeln!(out, " while ({});", print_expr(cond));
        }
        StmtKind::Switch { scrutinee, clauses } => {
            let _ = writeln!(out, "switch ({}) {{", print_expr(scrutinee));
            for c in clauses {
                indent(out, level + 1);
                match &c.label {
                    CaseLabel::Case(e) => {
                        let _ = writeln!(out, "case {}:", expr_at(e, 3));
                    }
                    CaseLabel::Default => out.push_str("default:\n"),
                }
                for st in &c.body {
                    print_stmt(out, st, level + 2);
                }
            }
            indent(out, level);
            out.push_str("}\n");
        }
        StmtKind::Break => out.push_str("break;\n"),
        StmtKind::Continue => out.push_str("continue;\n"),
        StmtKind::Return(None) => out.push_str("return;\n"),
        StmtKind::Return(Some(e)) => {
            let _ = writeln!(out, "return {};", print_expr(e));
        }
    }
}

fn print_if(out: &mut String, s: &Stmt, level: usize) {
    let StmtKind::If { cond, then, els } = &s.kind else { unreachable!("print_if on non-if") };
    let _ = write!(out, "if ({}) ", print_expr(cond));
    print_block_inline(out, block_stmts(then), level);
    match els.as_deref() {
        None => {}
        Some(e @ Stmt { kind: StmtKind::If { .. }, .. }) => {
            out.push_str(" else ");
            print_if(out, e, level);
        }
        Some(e) => {
            out.push_str(" else ");
            print_block_inline(out, block_stmts(e), level);
        }
    }
}

pub fn print_expr(e: &Expr) -> String {
    expr_at(e, 1)
}

fn expr_at(e: &Expr, min_prec: u8) -> String {
    let body = expr_body(e);
    if e.precedence() < min_prec {
        format!("({body})")
    } else {
        body
    }
}

fn unary_symbol(op: UnaryOp) -> &'static str {
    match op {
        UnaryOp::Neg => "-",
        UnaryOp::Plus => "+",
        UnaryOp::Not => "!",
        UnaryOp::BitNot => "~",
        UnaryOp::Deref => "*",
        UnaryOp::AddrOf => "&",
        UnaryOp::PreInc => "++",
        UnaryOp::PreDec => "--",
    }
}

fn expr_body(e: &Expr) -> String {
    match e {
        Expr::Int { text, .. } => text.clone(),
        Expr::Str(s) => s.clone(),
        Expr::Ident(n) => n.clone(),
        Expr::Unary { op, expr } => {
            let sym = unary_symbol(*op);
            let inner = expr_at(expr, 14);
            // keep `- -x` and `& &x` from fusing into a different token
            let first = sym.chars().next().unwrap_or(' ');
            if inner.starts_with(first) && matches!(first, '-' | '+' | '&') {
                format!("{sym} {inner}")
            } else {
                format!("{sym}{inner}")
            }
        }
        Expr::Postfix { op, expr } => {
            let sym = if *op == PostfixOp::Inc { "++" } else { "--" };
            format!("{}{sym}", expr_at(expr, 15))
        }
        Expr::Binary { op, lhs, rhs } => {
            let p = op.precedence();
            format!("{} {} {}", expr_at(lhs, p), op.symbol(), expr_at(rhs, p + 1))
        }
        Expr::Assign { op, target, value } => {
            format!("{} {} {}", expr_at(target, 14), op.symbol(), expr_at(value, 2))
        }
        Expr::Ternary { cond, then, els } => {
            format!("{} ? {} : {}", expr_at(cond, 4), expr_at(then, 1), expr_at(els, 3))
        }
        Expr::Call { callee, args } => {
            let args: Vec<String> = args.iter().map(|a| expr_at(a, 2)).collect();
            format!("{}({})", expr_at(callee, 15), args.join(", "))
        }
        Expr::Index { base, index } => format!("{}[{}]", expr_at(base, 15), expr_at(index, 1)),
        Expr::Member { base, field, arrow } => {
            format!("{}{}{field}", expr_at(base, 15), if *arrow { "->" } else { "." })
        }
        Expr::Cast { ty, pointers, expr } => {
            format!("({}){}", type_prefix(ty, *pointers).trim_end(), expr_at(expr, 14))
        }
        Expr::SizeofType { ty, pointers } => format!("sizeof({})", type_prefix(ty, *pointers).trim_end()),
        Expr::SizeofExpr(expr) => format!("sizeof {}", expr_at(expr, 14)),
        Expr::Comma { lhs, rhs } => format!("{}, {}", expr_at(lhs, 1), expr_at(rhs, 2)),
        Expr::InitList(items) => {
            let items: Vec<String> = items.iter().map(|i| expr_at(i, 2)).collect();
            format!("{{{}}}", items.join(", "))
        }
    }
}
