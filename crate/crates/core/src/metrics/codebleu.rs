//! CodeBLEU over mini-C units: token BLEU, keyword-weighted BLEU,
//! shape-only subtree matching and canonicalized def-use matching.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::frontend::ast::{AssignOp, CaseLabel, Decl, Expr, ForInit, FunctionDef, PostfixOp, Stmt, StmtKind, UnaryOp};
use crate::frontend::lexer::is_keyword;
use crate::frontend::SourceUnit;
use crate::victims::fnv1a64;

pub const MAX_ORDER: usize = 4;
pub const KEYWORD_WEIGHT: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodeBleuWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for CodeBleuWeights {
    fn default() -> Self {
        Self { alpha: 0.25, beta: 0.25, gamma: 0.25, delta: 0.25 }
    }
}

impl CodeBleuWeights {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let w = [self.alpha, self.beta, self.gamma, self.delta];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(MetricsError::BadWeights(w));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodeBleuScore {
    pub total: f64,
    pub bleu: f64,
    pub bleu_w: f64,
    pub match_ast: f64,
    pub match_df: f64,
}

pub fn codebleu(reference: &SourceUnit, candidate: &SourceUnit, weights: &CodeBleuWeights) -> Result<CodeBleuScore, MetricsError> {
    weights.validate()?;
    let r = token_texts(reference);
    let c = token_texts(candidate);
    let bleu = bleu_weighted(&r, &c, &|_| 1.0);
    let bleu_w = bleu_weighted(&r, &c, &|t| if is_keyword(t) { KEYWORD_WEIGHT } else { 1.0 });
    let match_ast = match_ast(&reference.ast, &candidate.ast);
    let match_df = match_df(reference, candidate);
    let total = weights.alpha * bleu + weights.beta * bleu_w + weights.gamma * match_ast + weights.delta * match_df;
    Ok(CodeBleuScore { total, bleu, bleu_w, match_ast, match_df })
}

fn token_texts(u: &SourceUnit) -> Vec<String> {
    u.tokens.iter().map(|t| t.text.clone()).collect()
}

/// Token BLEU up to order 4 with the standard brevity penalty. Orders for
/// which the candidate has no n-grams are left out of the geometric mean.
pub fn bleu(reference: &[String], candidate: &[String]) -> f64 {
    bleu_weighted(reference, candidate, &|_| 1.0)
}

/// BLEU where each n-gram counts with the mean weight of its tokens.
pub fn bleu_weighted(reference: &[String], candidate: &[String], weight: &dyn Fn(&str) -> f64) -> f64 {
    if candidate.is_empty() {
        return if reference.is_empty() { 1.0 } else { 0.0 };
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 1..=MAX_ORDER.min(candidate.len()) {
        let rc = ngram_counts(reference, n);
        let cc = ngram_counts(candidate, n);
        let (mut matched, mut total) = (0.0, 0.0);
        for (g, count) in &cc {
            let w = g.iter().map(|t| weight(t)).sum::<f64>() / n as f64;
            total += w * *count as f64;
            matched += w * (*count).min(rc.get(g).copied().unwrap_or(0)) as f64;
        }
        if matched == 0.0 {
            return 0.0;
        }
        log_sum += (matched / total).ln();
        orders += 1;
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * (log_sum / orders as f64).exp()
}

/// Ordered so weighted sums are accumulated identically on every run.
fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut m = BTreeMap::new();
    for g in tokens.windows(n) {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

/// Shared subtree shapes over candidate subtrees, as multisets.
pub fn match_ast(reference: &FunctionDef, candidate: &FunctionDef) -> f64 {
    let r = subtree_hashes(reference);
    let c = subtree_hashes(candidate);
    let mut rc: HashMap<u64, usize> = HashMap::new();
    for h in r {
        *rc.entry(h).or_insert(0) += 1;
    }
    let mut hits = 0;
    for h in &c {
        if let Some(n) = rc.get_mut(h).filter(|n| **n > 0) {
            *n -= 1;
            hits += 1;
        }
    }
    if c.is_empty() {
        return 1.0;
    }
    hits as f64 / c.len() as f64
}

/// Names and literal values are erased; everything else is shape.
pub fn subtree_hashes(f: &FunctionDef) -> Vec<u64> {
    let mut out = Vec::new();
    stmt_hash(&f.body, &mut out);
    out
}

fn node(tag: &str, children: &[u64], out: &mut Vec<u64>) -> u64 {
    let mut bytes = tag.as_bytes().to_vec();
    for c in children {
        bytes.push(b'|');
        bytes.extend_from_slice(&c.to_le_bytes());
    }
    let h = fnv1a64(&bytes);
    out.push(h);
    h
}

fn opt_expr(e: Option<&Expr>, out: &mut Vec<u64>) -> u64 {
    match e {
        Some(e) => expr_hash(e, out),
        None => fnv1a64(b"none"),
    }
}

fn decl_hash(d: &Decl, out: &mut Vec<u64>) -> u64 {
    let mut kids = Vec::new();
    for v in &d.vars {
        let arr = match &v.array {
            None => fnv1a64(b"scalar"),
            Some(n) => opt_expr(n.as_ref(), out),
        };
        let init = opt_expr(v.init.as_ref(), out);
        kids.push(node(&format!("declarator*{}", v.pointers), &[arr, init], out));
    }
    node(&format!("decl {}", d.ty.words.join(" ")), &kids, out)
}

fn stmt_hash(s: &Stmt, out: &mut Vec<u64>) -> u64 {
    match &s.kind {
        StmtKind::Block(b) => {
            let kids: Vec<u64> = b.iter().map(|c| stmt_hash(c, out)).collect();
            node("block", &kids, out)
        }
        StmtKind::Decl(d) => decl_hash(d, out),
        StmtKind::Expr(e) => {
            let k = expr_hash(e, out);
            node("expr", &[k], out)
        }
        StmtKind::Empty => node("empty", &[], out),
        StmtKind::If { cond, then, els } => {
            let c = expr_hash(cond, out);
            let t = stmt_hash(then, out);
            let e = els.as_ref().map_or(fnv1a64(b"none"), |e| stmt_hash(e, out));
            node("if", &[c, t, e], out)
        }
        StmtKind::For { init, cond, step, body } => {
            let i = match init {
                None => fnv1a64(b"none"),
                Some(ForInit::Decl(d)) => decl_hash(d, out),
                Some(ForInit::Expr(e)) => expr_hash(e, out),
            };
            let c = opt_expr(cond.as_ref(), out);
            let st = opt_expr(step.as_ref(), out);
            let b = stmt_hash(body, out);
            node("for", &[i, c, st, b], out)
        }
        StmtKind::While { cond, body } => {
            let c = expr_hash(cond, out);
            let b = stmt_hash(body, out);
            node("while", &[c, b], out)
        }
        StmtKind::DoWhile { body, cond } => {
            let b = stmt_hash(body, out);
            let c = expr_hash(cond, out);
            node("do", &[b, c], out)
        }
        StmtKind::Switch { scrutinee, clauses } => {
            let mut kids = vec![expr_hash(scrutinee, out)];
            for cl in clauses {
                let mut ck = vec![match &cl.label {
                    CaseLabel::Case(e) => expr_hash(e, out),
                    CaseLabel::Default => fnv1a64(b"default"),
                }];
                ck.extend(cl.body.iter().map(|b| stmt_hash(b, out)));
                kids.push(node("clause", &ck, out));
            }
            node("switch", &kids, out)
        }
        StmtKind::Break => node("break", &[], out),
        StmtKind::Continue => node("continue", &[], out),
        StmtKind::Return(e) => {
            let k = opt_expr(e.as_ref(), out);
            node("return", &[k], out)
        }
    }
}

fn expr_hash(e: &Expr, out: &mut Vec<u64>) -> u64 {
    match e {
        Expr::Int { .. } | Expr::Str(_) => node("lit", &[], out),
        Expr::Ident(_) => node("id", &[], out),
        Expr::Unary { op, expr } => {
            let k = expr_hash(expr, out);
            node(&format!("unary {op:?}"), &[k], out)
        }
        Expr::Postfix { op, expr } => {
            let k = expr_hash(expr, out);
            node(&format!("postfix {op:?}"), &[k], out)
        }
        Expr::Binary { op, lhs, rhs } => {
            let (l, r) = (expr_hash(lhs, out), expr_hash(rhs, out));
            node(op.symbol(), &[l, r], out)
        }
        Expr::Assign { op, target, value } => {
            let (t, v) = (expr_hash(target, out), expr_hash(value, out));
            node(&op.symbol(), &[t, v], out)
        }
        Expr::Ternary { cond, then, els } => {
            let k = [expr_hash(cond, out), expr_hash(then, out), expr_hash(els, out)];
            node("?:", &k, out)
        }
        Expr::Call { callee, args } => {
            let mut k = vec![expr_hash(callee, out)];
            k.extend(args.iter().map(|a| expr_hash(a, out)));
            node("call", &k, out)
        }
        Expr::Index { base, index } => {
            let k = [expr_hash(base, out), expr_hash(index, out)];
            node("index", &k, out)
        }
        Expr::Member { base, arrow, .. } => {
            let k = expr_hash(base, out);
            node(if *arrow { "->" } else { "." }, &[k], out)
        }
        Expr::Cast { ty, pointers, expr } => {
            let k = expr_hash(expr, out);
            node(&format!("cast {}*{pointers}", ty.words.join(" ")), &[k], out)
        }
        Expr::SizeofType { ty, pointers } => node(&format!("sizeof {}*{pointers}", ty.words.join(" ")), &[], out),
        Expr::SizeofExpr(x) => {
            let k = expr_hash(x, out);
            node("sizeof", &[k], out)
        }
        Expr::Comma { lhs, rhs } => {
            let k = [expr_hash(lhs, out), expr_hash(rhs, out)];
            node(",", &k, out)
        }
        Expr::InitList(items) => {
            let k: Vec<u64> = items.iter().map(|i| expr_hash(i, out)).collect();
            node("{}", &k, out)
        }
    }
}

/// A use of `var` reaching from its `def`-th definition (0 = none or
/// parameter entry), as the `use_`-th use of that variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DefUseEdge {
    pub var: String,
    pub def: usize,
    pub use_: usize,
}

/// F1 over def-use edge multisets; renameable identifiers are
/// canonicalized to `var_i` by first occurrence.
pub fn match_df(reference: &SourceUnit, candidate: &SourceUnit) -> f64 {
    let r = dataflow_edges(reference);
    let c = dataflow_edges(candidate);
    if r.is_empty() && c.is_empty() {
        return 1.0;
    }
    let mut rc: HashMap<&DefUseEdge, usize> = HashMap::new();
    for e in &r {
        *rc.entry(e).or_insert(0) += 1;
    }
    let mut hits = 0usize;
    for e in &c {
        if let Some(n) = rc.get_mut(e).filter(|n| **n > 0) {
            *n -= 1;
            hits += 1;
        }
    }
    2.0 * hits as f64 / (r.len() + c.len()) as f64
}

pub fn dataflow_edges(u: &SourceUnit) -> Vec<DefUseEdge> {
    let mut df = Dataflow {
        canon: u.identifiers.iter().enumerate().map(|(i, n)| (n.clone(), format!("var_{i}"))).collect(),
        defs: HashMap::new(),
        uses: HashMap::new(),
        edges: Vec::new(),
    };
    for p in &u.ast.params {
        df.def(&p.name);
    }
    df.stmt(&u.ast.body);
    df.edges
}

struct Dataflow {
    canon: HashMap<String, String>,
    defs: HashMap<String, usize>,
    uses: HashMap<String, usize>,
    edges: Vec<DefUseEdge>,
}

impl Dataflow {
    fn def(&mut self, name: &str) {
        if let Some(c) = self.canon.get(name) {
            *self.defs.entry(c.clone()).or_insert(0) += 1;
        }
    }

    fn use_(&mut self, name: &str) {
        if let Some(c) = self.canon.get(name) {
            let def = self.defs.get(c).copied().unwrap_or(0);
            let n = self.uses.entry(c.clone()).or_insert(0);
            *n += 1;
            self.edges.push(DefUseEdge { var: c.clone(), def, use_: *n });
        }
    }

    fn decl(&mut self, d: &Decl) {
        for v in &d.vars {
            if let Some(Some(n)) = &v.array {
                self.expr(n);
            }
            if let Some(init) = &v.init {
                self.expr(init);
                self.def(&v.name);
            }
        }
    }

    fn stmt(&mut self, s: &Stmt) {
        match &s.kind {
            StmtKind::Block(b) => b.iter().for_each(|c| self.stmt(c)),
            StmtKind::Decl(d) => self.decl(d),
            StmtKind::Expr(e) => self.expr(e),
            StmtKind::Empty | StmtKind::Break | StmtKind::Continue => {}
            StmtKind::If { cond, then, els } => {
                self.expr(cond);
                self.stmt(then);
                if let Some(e) = els {
                    self.stmt(e);
                }
            }
            StmtKind::For { init, cond, step, body } => {
                match init {
                    Some(ForInit::Decl(d)) => self.decl(d),
                    Some(ForInit::Expr(e)) => self.expr(e),
                    None => {}
                }
                if let Some(c) = cond {
                    self.expr(c);
                }
                self.stmt(body);
                if let Some(st) = step {
                    self.expr(st);
                }
            }
            StmtKind::While { cond, body } => {
                self.expr(cond);
                self.stmt(body);
            }
            StmtKind::DoWhile { body, cond } => {
                self.stmt(body);
                self.expr(cond);
            }
            StmtKind::Switch { scrutinee, clauses } => {
                self.expr(scrutinee);
                for cl in clauses {
                    if let CaseLabel::Case(e) = &cl.label {
                        self.expr(e);
                    }
                    cl.body.iter().for_each(|b| self.stmt(b));
                }
            }
            StmtKind::Return(e) => {
                if let Some(e) = e {
                    self.expr(e);
                }
            }
        }
    }

    fn expr(&mut self, e: &Expr) {
        match e {
            Expr::Ident(x) => self.use_(x),
            Expr::Assign { op, target, value } => {
                self.expr(value);
                if let Expr::Ident(x) = target.as_ref() {
                    if !matches!(op, AssignOp::Assign) {
                        self.use_(x);
                    }
                    self.def(x);
                } else {
                    self.expr(target);
                }
            }
            Expr::Postfix { op: PostfixOp::Inc | PostfixOp::Dec, expr } | Expr::Unary { op: UnaryOp::PreInc | UnaryOp::PreDec, expr } => {
                if let Expr::Ident(x) = expr.as_ref() {
                    self.use_(x);
                    self.def(x);
                } else {
                    self.expr(expr);
                }
            }
            Expr::Int { .. } | Expr::Str(_) | Expr::SizeofType { .. } => {}
            Expr::Unary { expr, .. } | Expr::Cast { expr, .. } | Expr::SizeofExpr(expr) => self.expr(expr),
            Expr::Member { base, .. } => self.expr(base),
            Expr::Binary { lhs, rhs, .. } | Expr::Comma { lhs, rhs } | Expr::Index { base: lhs, index: rhs } => {
                self.expr(lhs);
                self.expr(rhs);
            }
            Expr::Ternary { cond, then, els } => {
                self.expr(cond);
                self.expr(then);
                self.expr(els);
            }
            Expr::Call { callee, args } => {
                self.expr(callee);
                args.iter().for_each(|a| self.expr(a));
            }
            Expr::InitList(items) => items.iter().for_each(|i| self.expr(i)),
        }
    }
}
