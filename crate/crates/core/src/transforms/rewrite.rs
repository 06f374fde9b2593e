//! The six control-flow rewrites and their applicability guards.

use std::collections::BTreeSet;

use super::{InapplicableReason as R, OpKind, TransformError, TransformOp};
use crate::frontend::ast::{BinaryOp, CaseLabel, Clause, Expr, ForInit, Stmt, StmtKind};
use crate::frontend::{NodeId, SourceUnit};

/// Checks the guard for `op` without building the rewritten unit.
pub fn check_applicable(unit: &SourceUnit, op: TransformOp) -> Result<(), R> {
    let s = unit.ast.find(op.site).ok_or(R::SiteNotFound)?;
    match (op.op, &s.kind) {
        (OpKind::For2While, StmtKind::For { step, body, .. }) => {
            if body.children().iter().any(|c| has_loop_continue(c)) {
                return Err(R::ContinueInBody);
            }
            if let Some(step) = step {
                let used = expr_names(step);
                if top_level_decls(body.children()).iter().any(|d| used.contains(d)) {
                    return Err(R::StepShadowed);
                }
            }
            Ok(())
        }
        (OpKind::While2For, StmtKind::While { .. }) => Ok(()),
        (OpKind::ChDo, StmtKind::DoWhile { body, .. }) => {
            if body.children().iter().any(|c| has_loop_continue(c) || has_bound_break(c)) {
                return Err(R::LoopControlInBody);
            }
            Ok(())
        }
        (OpKind::ChIfElse2Else, StmtKind::If { els: Some(e), .. }) if matches!(e.kind, StmtKind::If { .. }) => Ok(()),
        (OpKind::ChElse2ElseIf, StmtKind::If { els: Some(e), .. }) if single_if_block(e) => Ok(()),
        (OpKind::ChSwitch, StmtKind::Switch { scrutinee, clauses }) => {
            if scrutinee.has_side_effects() {
                return Err(R::ScrutineeSideEffects);
            }
            switch_groups(clauses).map(|_| ())
        }
        _ => Err(R::WrongNodeKind),
    }
}

/// Applies `op`, returning a freshly parsed unit with renumbered node ids.
pub fn apply_transform(unit: &SourceUnit, op: TransformOp) -> Result<SourceUnit, TransformError> {
    let fail = |reason| TransformError::Inapplicable { op: op.op, site: op.site, reason };
    check_applicable(unit, op).map_err(fail)?;
    let mut ast = unit.ast.clone();
    let site = op.site;
    let done = match op.op {
        OpKind::While2For => edit_in_place(&mut ast.body, site, &mut |s| {
            let StmtKind::While { cond, body } = std::mem::replace(&mut s.kind, StmtKind::Empty) else { unreachable!() };
            s.kind = StmtKind::For { init: None, cond: Some(cond), step: None, body };
        }),
        OpKind::ChIfElse2Else => edit_in_place(&mut ast.body, site, &mut |s| {
            if let StmtKind::If { els, .. } = &mut s.kind {
                let inner = els.take().expect("guarded");
                *els = Some(Box::new(Stmt::block(vec![*inner])));
            }
        }),
        OpKind::ChElse2ElseIf => edit_in_place(&mut ast.body, site, &mut |s| {
            if let StmtKind::If { els, .. } = &mut s.kind {
                let Some(mut block) = els.take() else { unreachable!() };
                let StmtKind::Block(inner) = &mut block.kind else { unreachable!() };
                *els = Some(Box::new(inner.pop().expect("guarded")));
            }
        }),
        OpKind::For2While => splice(&mut ast.body, site, &mut for_to_while),
        OpKind::ChDo => splice(&mut ast.body, site, &mut unroll_do),
        OpKind::ChSwitch => splice(&mut ast.body, site, &mut switch_to_if),
    };
    if !done {
        return Err(fail(R::SiteNotFound));
    }
    SourceUnit::from_ast(&unit.unit_id, &ast).map_err(|e| TransformError::Reparse(e.to_string()))
}

fn for_to_while(s: Stmt) -> Vec<Stmt> {
    let StmtKind::For { init, cond, step, body } = s.kind else { unreachable!() };
    let mut stmts = into_stmts(*body);
    if let Some(step) = step {
        stmts.push(Stmt::new(StmtKind::Expr(step)));
    }
    let w = Stmt::new(StmtKind::While { cond: cond.unwrap_or_else(|| Expr::int(1)), body: Box::new(Stmt::block(stmts)) });
    match init {
        None => vec![w],
        Some(ForInit::Expr(e)) => vec![Stmt::new(StmtKind::Expr(e)), w],
        // the declaration must stay scoped to the loop
        Some(ForInit::Decl(d)) => vec![Stmt::block(vec![Stmt::new(StmtKind::Decl(d)), w])],
    }
}

fn unroll_do(s: Stmt) -> Vec<Stmt> {
    let StmtKind::DoWhile { body, cond } = s.kind else { unreachable!() };
    let stmts = into_stmts((*body).clone());
    let has_decl = stmts.iter().any(|s| matches!(s.kind, StmtKind::Decl(_)));
    let mut out = if has_decl { vec![Stmt::block(stmts)] } else { stmts };
    out.push(Stmt::new(StmtKind::While { cond, body }));
    out
}

fn switch_to_if(s: Stmt) -> Vec<Stmt> {
    let StmtKind::Switch { scrutinee, clauses } = s.kind else { unreachable!() };
    let groups = switch_groups(&clauses).expect("guarded");
    let mut default_body: Option<Vec<Stmt>> = None;
    let mut arms: Vec<(Expr, Vec<Stmt>)> = Vec::new();
    for g in groups {
        let mut body = g.body;
        if matches!(body.last().map(|s| &s.kind), Some(StmtKind::Break)) {
            body.pop();
        }
        if g.has_default {
            default_body = Some(body);
            continue;
        }
        let cond = g
            .labels
            .into_iter()
            .map(|l| Expr::binary(BinaryOp::Eq, scrutinee.clone(), l))
            .reduce(|acc, e| Expr::binary(BinaryOp::Or, acc, e))
            .expect("group has a label");
        arms.push((cond, body));
    }
    let mut tail: Option<Box<Stmt>> = default_body.map(|b| Box::new(Stmt::block(b)));
    if arms.is_empty() {
        return vec![tail.map_or_else(|| Stmt::block(Vec::new()), |b| *b)];
    }
    for (cond, body) in arms.into_iter().rev() {
        tail = Some(Box::new(Stmt::new(StmtKind::If { cond, then: Box::new(Stmt::block(body)), els: tail })));
    }
    vec![*tail.expect("nonempty")]
}

struct Group {
    labels: Vec<Expr>,
    has_default: bool,
    body: Vec<Stmt>,
}

/// Merges empty clauses into the next non-empty one and validates that
/// every group except the last ends by leaving the switch.
fn switch_groups(clauses: &[Clause]) -> Result<Vec<Group>, R> {
    let mut groups = Vec::new();
    let mut pending = Group { labels: Vec::new(), has_default: false, body: Vec::new() };
    for (i, c) in clauses.iter().enumerate() {
        match &c.label {
            CaseLabel::Case(e) => pending.labels.push(e.clone()),
            CaseLabel::Default => pending.has_default = true,
        }
        if !c.body.is_empty() || i + 1 == clauses.len() {
            pending.body = c.body.clone();
            groups.push(std::mem::replace(&mut pending, Group { labels: Vec::new(), has_default: false, body: Vec::new() }));
        }
    }
    let n = groups.len();
    for (i, g) in groups.iter().enumerate() {
        let last = g.body.len().saturating_sub(1);
        for (j, s) in g.body.iter().enumerate() {
            if has_bound_break(s) && !(j == last && matches!(s.kind, StmtKind::Break)) {
                return Err(R::NestedBreak);
            }
        }
        let ends = matches!(g.body.last().map(|s| &s.kind), Some(StmtKind::Break | StmtKind::Return(_) | StmtKind::Continue));
        if i + 1 < n && !ends {
            return Err(R::Fallthrough);
        }
    }
    for (i, g) in groups.iter().enumerate() {
        let decls = top_level_decls(g.body.iter().collect());
        for (j, other) in groups.iter().enumerate() {
            if i != j && other.body.iter().any(|s| stmt_names(s).iter().any(|n| decls.contains(n))) {
                return Err(R::CrossCaseDecl);
            }
        }
    }
    Ok(groups)
}

fn single_if_block(s: &Stmt) -> bool {
    matches!(&s.kind, StmtKind::Block(inner) if inner.len() == 1 && matches!(inner[0].kind, StmtKind::If { .. }))
}

fn into_stmts(s: Stmt) -> Vec<Stmt> {
    match s.kind {
        StmtKind::Block(v) => v,
        _ => vec![s],
    }
}

/// A `continue` that would bind to an enclosing loop at this level.
fn has_loop_continue(s: &Stmt) -> bool {
    match &s.kind {
        StmtKind::Continue => true,
        StmtKind::For { .. } | StmtKind::While { .. } | StmtKind::DoWhile { .. } => false,
        _ => s.children().iter().any(|c| has_loop_continue(c)),
    }
}

/// A `break` that would bind to the nearest enclosing loop or switch.
fn has_bound_break(s: &Stmt) -> bool {
    match &s.kind {
        StmtKind::Break => true,
        StmtKind::For { .. } | StmtKind::While { .. } | StmtKind::DoWhile { .. } | StmtKind::Switch { .. } => false,
        _ => s.children().iter().any(|c| has_bound_break(c)),
    }
}

fn top_level_decls(stmts: Vec<&Stmt>) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for s in stmts {
        if let StmtKind::Decl(d) = &s.kind {
            out.extend(d.vars.iter().map(|v| v.name.clone()));
        }
    }
    out
}

fn expr_names(e: &Expr) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    e.walk(&mut |x| {
        if let Expr::Ident(n) = x {
            out.insert(n.clone());
        }
    });
    out
}

/// Every name a statement mentions, declared or referenced.
fn stmt_names(s: &Stmt) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    s.walk(&mut |st| {
        match &st.kind {
            StmtKind::Decl(d) | StmtKind::For { init: Some(ForInit::Decl(d)), .. } => {
                out.extend(d.vars.iter().map(|v| v.name.clone()));
            }
            _ => {}
        }
        for e in st.own_exprs() {
            out.extend(expr_names(e));
        }
    });
    out
}

fn edit_in_place(s: &mut Stmt, id: NodeId, f: &mut dyn FnMut(&mut Stmt)) -> bool {
    if s.id == id {
        f(s);
        return true;
    }
    for c in children_mut(s) {
        if edit_in_place(c, id, f) {
            return true;
        }
    }
    false
}

/// Replaces the list member with id `id` by the statements `f` returns.
fn splice(s: &mut Stmt, id: NodeId, f: &mut dyn FnMut(Stmt) -> Vec<Stmt>) -> bool {
    let lists: Vec<&mut Vec<Stmt>> = match &mut s.kind {
        StmtKind::Block(stmts) => vec![stmts],
        StmtKind::Switch { clauses, .. } => clauses.iter_mut().map(|c| &mut c.body).collect(),
        _ => Vec::new(),
    };
    for list in lists {
        if let Some(pos) = list.iter().position(|c| c.id == id) {
            let target = list.remove(pos);
            let repl = f(target);
            list.splice(pos..pos, repl);
            return true;
        }
    }
    children_mut(s).into_iter().any(|c| splice(c, id, f))
}

fn children_mut(s: &mut Stmt) -> Vec<&mut Stmt> {
    match &mut s.kind {
        StmtKind::Block(stmts) => stmts.iter_mut().collect(),
        StmtKind::If { then, els, .. } => {
            let mut v = vec![then.as_mut()];
            if let Some(e) = els {
                v.push(e.as_mut());
            }
            v
        }
        StmtKind::For { body, .. } | StmtKind::While { body, .. } | StmtKind::DoWhile { body, .. } => vec![body.as_mut()],
        StmtKind::Switch { clauses, .. } => clauses.iter_mut().flat_map(|c| c.body.iter_mut()).collect(),
        _ => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{interpret, parse, InterpOptions, DEFAULT_STEP_LIMIT};

    fn site_of(unit: &SourceUnit, pred: impl Fn(&StmtKind) -> bool) -> NodeId {
        let mut hit = None;
        unit.ast.body.walk(&mut |s| {
            if hit.is_none() && pred(&s.kind) {
                hit = Some(s.id);
            }
        });
        hit.expect("site present")
    }

    fn body_text(u: &SourceUnit) -> String {
        u.ast.body_stmts().iter().map(canon).collect::<Vec<_>>().join(" ")
    }

    fn canon(s: &Stmt) -> String {
        let f = crate::frontend::ast::FunctionDef {
            ret: crate::frontend::ast::TypeName::new(["int"]),
            ret_pointers: 0,
            name: "g".into(),
            params: vec![],
            body: Stmt::block(vec![s.clone()]),
        };
        let text = crate::frontend::print(&f);
        let toks = crate::frontend::lexer::tokenize(&text).unwrap();
        let inner: Vec<&str> = toks.iter().map(|t| t.text.as_str()).collect();
        inner[5..inner.len() - 1].join(" ")
    }

    fn same_traces(a: &SourceUnit, b: &SourceUnit, inputs: &[&[i64]]) {
        for inp in inputs {
            let ta = interpret(&a.ast, inp, InterpOptions::with_limit(DEFAULT_STEP_LIMIT)).unwrap();
            let tb = interpret(&b.ast, inp, InterpOptions::with_limit(DEFAULT_STEP_LIMIT)).unwrap();
            assert!(ta.same_behavior(&tb), "{ta:?} vs {tb:?}\n{}", b.source_text);
        }
    }

    #[test]
    fn for_to_while_table_row() {
        let u = parse("int f(){int i; int s = 0; for(i=0;i<10;i++){s += i;} return s;}").unwrap();
        let site = site_of(&u, |k| matches!(k, StmtKind::For { .. }));
        let out = apply_transform(&u, TransformOp { op: OpKind::For2While, site }).unwrap();
        assert_eq!(body_text(&out), "int i ; int s = 0 ; i = 0 ; while ( i < 10 ) { s += i ; i ++ ; } return s ;");
        same_traces(&u, &out, &[&[]]);
    }

    #[test]
    fn while_to_for_table_row() {
        let u = parse("int f(int i){while(i<10){i += 3;} return i;}").unwrap();
        let site = site_of(&u, |k| matches!(k, StmtKind::While { .. }));
        let out = apply_transform(&u, TransformOp { op: OpKind::While2For, site }).unwrap();
        assert_eq!(body_text(&out), "for ( ; i < 10 ; ) { i += 3 ; } return i ;");
        same_traces(&u, &out, &[&[0], &[9], &[12]]);
    }

    #[test]
    fn do_unrolls_once() {
        let u = parse("int f(int i){do{i++; print(i);}while(i<10); return i;}").unwrap();
        let site = site_of(&u, |k| matches!(k, StmtKind::DoWhile { .. }));
        let out = apply_transform(&u, TransformOp { op: OpKind::ChDo, site }).unwrap();
        assert_eq!(body_text(&out), "i ++ ; print ( i ) ; while ( i < 10 ) { i ++ ; print ( i ) ; } return i ;");
        same_traces(&u, &out, &[&[0], &[10], &[50]]);
    }

    #[test]
    fn switch_table_row() {
        let u = parse("int f(int a){int r = 0; switch(a){case 60: r = 1; break; default: r = 3;} return r;}").unwrap();
        let site = site_of(&u, |k| matches!(k, StmtKind::Switch { .. }));
        let out = apply_transform(&u, TransformOp { op: OpKind::ChSwitch, site }).unwrap();
        assert_eq!(body_text(&out), "int r = 0 ; if ( a == 60 ) { r = 1 ; } else { r = 3 ; } return r ;");
        same_traces(&u, &out, &[&[60], &[70], &[0]]);
    }

    #[test]
    fn switch_with_shared_labels_and_middle_default() {
        let src = "int f(int a){int r = 0; switch(a){case 1: case 2: r = 12; break; default: r = 9; break; \
                   case 3: return 33;} return r;}";
        let u = parse(src).unwrap();
        let site = site_of(&u, |k| matches!(k, StmtKind::Switch { .. }));
        let out = apply_transform(&u, TransformOp { op: OpKind::ChSwitch, site }).unwrap();
        assert!(out.source_text.contains("a == 1 || a == 2"), "{}", out.source_text);
        same_traces(&u, &out, &[&[1], &[2], &[3], &[4], &[-1]]);
    }

    #[test]
    fn if_chain_round_trip() {
        let u = parse("int f(int a){if(a<0){return 0;} else if(a<5){return 1;} else {return 2;}}").unwrap();
        let site = site_of(&u, |k| matches!(k, StmtKind::If { .. }));
        let nested = apply_transform(&u, TransformOp { op: OpKind::ChIfElse2Else, site }).unwrap();
        assert!(nested.source_text.contains("} else {\n        if"), "{}", nested.source_text);
        let site = site_of(&nested, |k| matches!(k, StmtKind::If { .. }));
        let back = apply_transform(&nested, TransformOp { op: OpKind::ChElse2ElseIf, site }).unwrap();
        assert_eq!(back.ast, u.ast);
        same_traces(&u, &nested, &[&[-3], &[2], &[9]]);
    }

    #[test]
    fn guards_fire() {
        let cases: &[(&str, OpKind, R)] = &[
            ("int f(){int i; for(i=0;i<3;i++){ if (i) { continue; } } return 0;}", OpKind::For2While, R::ContinueInBody),
            ("int f(){int i; for(i=0;i<3;i++){ int i = 9; print(i); } return 0;}", OpKind::For2While, R::StepShadowed),
            ("int f(){int i = 0; do { i++; if (i > 2) { break; } } while (i < 9); return i;}", OpKind::ChDo, R::LoopControlInBody),
            ("int f(int a){switch(a){case 1: print(1); case 2: print(2); break;} return 0;}", OpKind::ChSwitch, R::Fallthrough),
            ("int f(int a){switch(a){case 1: if (a) { break; } print(1); break;} return 0;}", OpKind::ChSwitch, R::NestedBreak),
            ("int f(int a){switch(a++){case 1: break;} return 0;}", OpKind::ChSwitch, R::ScrutineeSideEffects),
            ("int f(int a){switch(a){case 1: int x = 1; break; case 2: x = 2; print(x); break;} return 0;}", OpKind::ChSwitch, R::CrossCaseDecl),
            ("int f(){return 0;}", OpKind::ChSwitch, R::WrongNodeKind),
        ];
        for (src, op, reason) in cases {
            let u = parse(src).unwrap();
            let site = {
                let mut hit = 0;
                u.ast.body.walk(&mut |s| {
                    if hit == 0 && matches!(s.kind, StmtKind::For { .. } | StmtKind::DoWhile { .. } | StmtKind::Switch { .. }) {
                        hit = s.id;
                    }
                });
                hit
            };
            assert_eq!(check_applicable(&u, TransformOp { op: *op, site }), Err(*reason), "{src}");
            assert!(matches!(apply_transform(&u, TransformOp { op: *op, site }), Err(TransformError::Inapplicable { .. })));
        }
    }

    #[test]
    fn nested_loop_control_does_not_block() {
        let u = parse("int f(){int i; int j; for(i=0;i<3;i++){ for(j=0;j<3;j++){ if (j) { continue; } print(j); } } return 0;}")
            .unwrap();
        let site = site_of(&u, |k| matches!(k, StmtKind::For { .. }));
        let out = apply_transform(&u, TransformOp { op: OpKind::For2While, site }).unwrap();
        same_traces(&u, &out, &[&[]]);
    }

    #[test]
    fn for_with_decl_init_keeps_scope() {
        let u = parse("int f(){int i = 100; for(int i = 0; i < 3; i++){ print(i); } return i;}").unwrap();
        let site = site_of(&u, |k| matches!(k, StmtKind::For { .. }));
        let out = apply_transform(&u, TransformOp { op: OpKind::For2While, site }).unwrap();
        same_traces(&u, &out, &[&[]]);
        let u = parse("int f(){int s = 0; for(;;){ s++; if (s > 4) { break; } } return s;}").unwrap();
        let site = site_of(&u, |k| matches!(k, StmtKind::For { .. }));
        let out = apply_transform(&u, TransformOp { op: OpKind::For2While, site }).unwrap();
        assert!(out.source_text.contains("while (1)"));
        same_traces(&u, &out, &[&[]]);
    }
}
