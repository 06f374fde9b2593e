//! Deterministic interpreter for the executable subset: integer scalars,
//! fixed-size integer arrays and the builtins `print`, `abs`, `min`, `max`
//! and `input`. Arithmetic is 64-bit wrapping two's complement.
//!
//! Scalar parameters are bound from the front of the input vector; `input()`
//! consumes whatever remains, in order.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ast::*;

pub const DEFAULT_STEP_LIMIT: u64 = 100_000;
const MAX_ARRAY_LEN: i64 = 1 << 20;
const BUILTINS: &[&str] = &["print", "abs", "min", "max", "input"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuntimeErrorKind {
    DivByZero,
    ArrayOob,
    InputExhaustedStrict,
    UnboundVariable,
    TypeMismatch,
    BadArraySize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Halt {
    Normal,
    StepLimit,
    RuntimeError(RuntimeErrorKind),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecTrace {
    pub outputs: Vec<i64>,
    pub return_value: Option<i64>,
    pub step_count: u64,
    pub halted: Halt,
}

impl ExecTrace {
    /// Equality on observable behavior: outputs, return value and halt kind.
    pub fn same_behavior(&self, other: &ExecTrace) -> bool {
        self.outputs == other.outputs && self.return_value == other.return_value && self.halted == other.halted
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct InterpOptions {
    pub step_limit: u64,
    /// Reading past the end of the inputs is an error instead of yielding 0.
    pub strict_inputs: bool,
}

impl InterpOptions {
    pub fn with_limit(step_limit: u64) -> Self {
        Self { step_limit, strict_inputs: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("not executable: {0}")]
pub struct NotExecutable(pub String);

/// Checks that the function stays inside the executable subset.
pub fn check_executable(f: &FunctionDef) -> Result<(), NotExecutable> {
    if !f.ret.is_integer() && f.ret.words != ["void"] || f.ret_pointers > 0 {
        return Err(NotExecutable(format!("return type `{}`", f.ret.words.join(" "))));
    }
    for p in &f.params {
        if !p.ty.is_integer() || p.pointers > 0 {
            return Err(NotExecutable(format!("parameter `{}` is not an integer", p.name)));
        }
    }
    let mut problem: Option<String> = None;
    let check_expr = |e: &Expr, problem: &mut Option<String>| {
        e.walk(&mut |x| {
            if problem.is_some() {
                return;
            }
            match x {
                Expr::Str(_) => *problem = Some("string literal".into()),
                Expr::Member { .. } => *problem = Some("member access".into()),
                Expr::Unary { op: UnaryOp::Deref | UnaryOp::AddrOf, .. } => *problem = Some("pointer operation".into()),
                Expr::SizeofExpr(_) | Expr::SizeofType { .. } => *problem = Some("sizeof".into()),
                Expr::Cast { ty, pointers, .. } if !ty.is_integer() || *pointers > 0 => {
                    *problem = Some("non-integer cast".into())
                }
                Expr::Call { callee, .. } => match callee.as_ref() {
                    Expr::Ident(name) if BUILTINS.contains(&name.as_str()) => {}
                    other => *problem = Some(format!("opaque call `{}`", super::printer::print_expr(other))),
                },
                _ => {}
            }
        });
    };
    let check_decl = |d: &Decl, problem: &mut Option<String>| {
        if !d.ty.is_integer() || d.vars.iter().any(|v| v.pointers > 0) {
            *problem = Some(format!("declaration of type `{}`", d.ty.words.join(" ")));
        }
    };
    f.body.walk(&mut |s| {
        if problem.is_some() {
            return;
        }
        match &s.kind {
            StmtKind::Decl(d) | StmtKind::For { init: Some(ForInit::Decl(d)), .. } => check_decl(d, &mut problem),
            _ => {}
        }
        for e in s.own_exprs() {
            check_expr(e, &mut problem);
        }
    });
    match problem {
        Some(p) => Err(NotExecutable(p)),
        None => Ok(()),
    }
}

pub fn interpret(f: &FunctionDef, inputs: &[i64], opts: InterpOptions) -> Result<ExecTrace, NotExecutable> {
    check_executable(f)?;
    let mut m = Machine {
        scopes: vec![HashMap::new()],
        inputs,
        next_input: 0,
        outputs: Vec::new(),
        steps: 0,
        opts,
    };
    for p in &f.params {
        let v = m.read_input().unwrap_or(0);
        m.scopes[0].insert(p.name.clone(), Value::Int(v));
    }
    let result = m.exec_stmts(f.body_stmts());
    let (return_value, halted) = match result {
        Ok(Flow::Return(v)) => (v, Halt::Normal),
        Ok(_) => (None, Halt::Normal),
        Err(h) => (None, h),
    };
    Ok(ExecTrace { outputs: m.outputs, return_value, step_count: m.steps, halted })
}

#[derive(Debug, Clone)]
enum Value {
    Int(i64),
    Array(Vec<i64>),
}

enum Flow {
    Normal,
    Break,
    Continue,
    Return(Option<i64>),
}

struct Machine<'a> {
    scopes: Vec<HashMap<String, Value>>,
    inputs: &'a [i64],
    next_input: usize,
    outputs: Vec<i64>,
    steps: u64,
    opts: InterpOptions,
}

type Exec<T> = Result<T, Halt>;

fn rt(kind: RuntimeErrorKind) -> Halt {
    Halt::RuntimeError(kind)
}

pub(crate) fn binary_op(op: BinaryOp, a: i64, b: i64) -> Result<i64, RuntimeErrorKind> {
    use BinaryOp::*;
    Ok(match op {
        Mul => a.wrapping_mul(b),
        Div if b == 0 => return Err(RuntimeErrorKind::DivByZero),
        Rem if b == 0 => return Err(RuntimeErrorKind::DivByZero),
        Div => a.wrapping_div(b),
        Rem => a.wrapping_rem(b),
        Add => a.wrapping_add(b),
        Sub => a.wrapping_sub(b),
        Shl => a.wrapping_shl((b & 63) as u32),
        Shr => a.wrapping_shr((b & 63) as u32),
        Lt => (a < b) as i64,
        Gt => (a > b) as i64,
        Le => (a <= b) as i64,
        Ge => (a >= b) as i64,
        Eq => (a == b) as i64,
        Ne => (a != b) as i64,
        BitAnd => a & b,
        BitXor => a ^ b,
        BitOr => a | b,
        And => (a != 0 && b != 0) as i64,
        Or => (a != 0 || b != 0) as i64,
    })
}

impl Machine<'_> {
    fn tick(&mut self) -> Exec<()> {
        if self.steps >= self.opts.step_limit {
            return Err(Halt::StepLimit);
        }
        self.steps += 1;
        Ok(())
    }

    fn read_input(&mut self) -> Exec<i64> {
        match self.inputs.get(self.next_input) {
            Some(v) => {
                self.next_input += 1;
                Ok(*v)
            }
            None if self.opts.strict_inputs => Err(rt(RuntimeErrorKind::InputExhaustedStrict)),
            None => Ok(0),
        }
    }

    fn lookup(&mut self, name: &str) -> Exec<&mut Value> {
        self.scopes
            .iter_mut()
            .rev()
            .find_map(|s| s.get_mut(name))
            .ok_or(rt(RuntimeErrorKind::UnboundVariable))
    }

    fn scoped<T>(&mut self, f: impl FnOnce(&mut Self) -> Exec<T>) -> Exec<T> {
        self.scopes.push(HashMap::new());
        let r = f(self);
        self.scopes.pop();
        r
    }

    fn exec_stmts(&mut self, stmts: &[Stmt]) -> Exec<Flow> {
        for s in stmts {
            match self.exec(s)? {
                Flow::Normal => {}
                other => return Ok(other),
            }
        }
        Ok(Flow::Normal)
    }

    fn declare(&mut self, d: &Decl) -> Exec<()> {
        for v in &d.vars {
            let value = match &v.array {
                None => match &v.init {
                    Some(Expr::InitList(_)) => return Err(rt(RuntimeErrorKind::TypeMismatch)),
                    Some(e) => Value::Int(self.eval(e)?),
                    None => Value::Int(0),
                },
                Some(size) => {
                    let items: Vec<i64> = match &v.init {
                        Some(Expr::InitList(items)) => {
                            let mut out = Vec::with_capacity(items.len());
                            for i in items {
                                out.push(self.eval(i)?);
                            }
                            out
                        }
                        Some(_) => return Err(rt(RuntimeErrorKind::TypeMismatch)),
                        None => Vec::new(),
                    };
                    let len = match size {
                        Some(n) => self.eval(n)?,
                        None => items.len() as i64,
                    };
                    if len <= 0 || len > MAX_ARRAY_LEN || (items.len() as i64) > len {
                        return Err(rt(RuntimeErrorKind::BadArraySize));
                    }
                    let mut arr = vec![0; len as usize];
                    arr[..items.len()].copy_from_slice(&items);
                    Value::Array(arr)
                }
            };
            self.scopes.last_mut().expect("scope stack never empty").insert(v.name.clone(), value);
        }
        Ok(())
    }

    fn exec(&mut self, s: &Stmt) -> Exec<Flow> {
        self.tick()?;
        match &s.kind {
            StmtKind::Block(stmts) => self.scoped(|m| m.exec_stmts(stmts)),
            StmtKind::Decl(d) => {
                self.declare(d)?;
                Ok(Flow::Normal)
            }
            StmtKind::Expr(e) => {
                self.eval(e)?;
                Ok(Flow::Normal)
            }
            StmtKind::Empty => Ok(Flow::Normal),
            StmtKind::If { cond, then, els } => {
                if self.eval(cond)? != 0 {
                    self.exec(then)
                } else if let Some(e) = els {
                    self.exec(e)
                } else {
                    Ok(Flow::Normal)
                }
            }
            StmtKind::For { init, cond, step, body } => self.scoped(|m| {
                match init {
                    Some(ForInit::Decl(d)) => m.declare(d)?,
                    Some(ForInit::Expr(e)) => {
                        m.eval(e)?;
                    }
                    None => {}
                }
                loop {
                    m.tick()?;
                    if let Some(c) = cond {
                        if m.eval(c)? == 0 {
                            break;
                        }
                    }
                    match m.exec(body)? {
                        Flow::Break => break,
                        Flow::Return(v) => return Ok(Flow::Return(v)),
                        Flow::Normal | Flow::Continue => {}
                    }
                    if let Some(st) = step {
                        m.eval(st)?;
                    }
                }
                Ok(Flow::Normal)
            }),
            StmtKind::While { cond, body } => {
                loop {
                    self.tick()?;
                    if self.eval(cond)? == 0 {
                        break;
                    }
                    match self.exec(body)? {
                        Flow::Break => break,
                        Flow::Return(v) => return Ok(Flow::Return(v)),
                        Flow::Normal | Flow::Continue => {}
                    }
                }
                Ok(Flow::Normal)
            }
            StmtKind::DoWhile { body, cond } => {
                loop {
                    self.tick()?;
                    match self.exec(body)? {
                        Flow::Break => break,
                        Flow::Return(v) => return Ok(Flow::Return(v)),
                        Flow::Normal | Flow::Continue => {}
                    }
                    if self.eval(cond)? == 0 {
                        break;
                    }
                }
                Ok(Flow::Normal)
            }
            StmtKind::Switch { scrutinee, clauses } => {
                let v = self.eval(scrutinee)?;
                let mut start = None;
                for (i, c) in clauses.iter().enumerate() {
                    if let CaseLabel::Case(e) = &c.label {
                        if self.eval(e)? == v {
                            start = Some(i);
                            break;
                        }
                    }
                }
                let start = start.or_else(|| clauses.iter().position(|c| c.label == CaseLabel::Default));
                let Some(start) = start else { return Ok(Flow::Normal) };
                self.scoped(|m| {
                    for c in &clauses[start..] {
                        match m.exec_stmts(&c.body)? {
                            Flow::Normal => {}
                            Flow::Break => return Ok(Flow::Normal),
                            other => return Ok(other),
                        }
                    }
                    Ok(Flow::Normal)
                })
            }
            StmtKind::Break => Ok(Flow::Break),
            StmtKind::Continue => Ok(Flow::Continue),
            StmtKind::Return(e) => {
                let v = match e {
                    Some(e) => Some(self.eval(e)?),
                    None => None,
                };
                Ok(Flow::Return(v))
            }
        }
    }

    fn store(&mut self, target: &Expr, value: i64) -> Exec<()> {
        match target {
            Expr::Ident(name) => match self.lookup(name)? {
                Value::Int(slot) => {
                    *slot = value;
                    Ok(())
                }
                Value::Array(_) => Err(rt(RuntimeErrorKind::TypeMismatch)),
            },
            Expr::Index { base, index } => {
                let Expr::Ident(name) = base.as_ref() else { return Err(rt(RuntimeErrorKind::TypeMismatch)) };
                let i = self.eval(index)?;
                match self.lookup(name)? {
                    Value::Array(arr) => {
                        let slot = usize::try_from(i).ok().and_then(|i| arr.get_mut(i)).ok_or(rt(RuntimeErrorKind::ArrayOob))?;
                        *slot = value;
                        Ok(())
                    }
                    Value::Int(_) => Err(rt(RuntimeErrorKind::TypeMismatch)),
                }
            }
            _ => Err(rt(RuntimeErrorKind::TypeMismatch)),
        }
    }

    fn eval(&mut self, e: &Expr) -> Exec<i64> {
        Ok(match e {
            Expr::Int { value, .. } => *value,
            Expr::Ident(name) => match self.lookup(name)? {
                Value::Int(v) => *v,
                Value::Array(_) => return Err(rt(RuntimeErrorKind::TypeMismatch)),
            },
            Expr::Unary { op, expr } => match op {
                UnaryOp::Neg => self.eval(expr)?.wrapping_neg(),
                UnaryOp::Plus => self.eval(expr)?,
                UnaryOp::Not => (self.eval(expr)? == 0) as i64,
                UnaryOp::BitNot => !self.eval(expr)?,
                UnaryOp::PreInc | UnaryOp::PreDec => {
                    let delta = if *op == UnaryOp::PreInc { 1 } else { -1 };
                    let v = self.eval(expr)?.wrapping_add(delta);
                    self.store(expr, v)?;
                    v
                }
                UnaryOp::Deref | UnaryOp::AddrOf => return Err(rt(RuntimeErrorKind::TypeMismatch)),
            },
            Expr::Postfix { op, expr } => {
                let old = self.eval(expr)?;
                let delta = if *op == PostfixOp::Inc { 1 } else { -1 };
                self.store(expr, old.wrapping_add(delta))?;
                old
            }
            Expr::Binary { op: BinaryOp::And, lhs, rhs } => {
                (self.eval(lhs)? != 0 && self.eval(rhs)? != 0) as i64
            }
            Expr::Binary { op: BinaryOp::Or, lhs, rhs } => {
                (self.eval(lhs)? != 0 || self.eval(rhs)? != 0) as i64
            }
            Expr::Binary { op, lhs, rhs } => {
                let a = self.eval(lhs)?;
                let b = self.eval(rhs)?;
                binary_op(*op, a, b).map_err(rt)?
            }
            Expr::Assign { op, target, value } => {
                let v = match op {
                    AssignOp::Assign => self.eval(value)?,
                    AssignOp::Compound(bop) => {
                        let cur = self.eval(target)?;
                        let rhs = self.eval(value)?;
                        binary_op(*bop, cur, rhs).map_err(rt)?
                    }
                };
                self.store(target, v)?;
                v
            }
            Expr::Ternary { cond, then, els } => {
                if self.eval(cond)? != 0 {
                    self.eval(then)?
                } else {
                    self.eval(els)?
                }
            }
            Expr::Call { callee, args } => {
                let Expr::Ident(name) = callee.as_ref() else { return Err(rt(RuntimeErrorKind::TypeMismatch)) };
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.eval(a)?);
                }
                match (name.as_str(), vals.as_slice()) {
                    ("print", _) => {
                        self.outputs.extend_from_slice(&vals);
                        0
                    }
                    ("input", []) => self.read_input()?,
                    ("abs", [v]) => v.wrapping_abs(),
                    ("min", [a, b]) => *a.min(b),
                    ("max", [a, b]) => *a.max(b),
                    _ => return Err(rt(RuntimeErrorKind::TypeMismatch)),
                }
            }
            Expr::Index { base, index } => {
                let Expr::Ident(name) = base.as_ref() else { return Err(rt(RuntimeErrorKind::TypeMismatch)) };
                let i = self.eval(index)?;
                match self.lookup(name)? {
                    Value::Array(arr) => *usize::try_from(i).ok().and_then(|i| arr.get(i)).ok_or(rt(RuntimeErrorKind::ArrayOob))?,
                    Value::Int(_) => return Err(rt(RuntimeErrorKind::TypeMismatch)),
                }
            }
            Expr::Cast { expr, .. } => self.eval(expr)?,
            Expr::Comma { lhs, rhs } => {
                self.eval(lhs)?;
                self.eval(rhs)?
            }
            Expr::Str(_) | Expr::Member { .. } | Expr::SizeofType { .. } | Expr::SizeofExpr(_) | Expr::InitList(_) => {
                return Err(rt(RuntimeErrorKind::TypeMismatch))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse;

    fn run(src: &str, inputs: &[i64]) -> ExecTrace {
        let unit = parse(src).unwrap();
        interpret(&unit.ast, inputs, InterpOptions::with_limit(DEFAULT_STEP_LIMIT)).unwrap()
    }

    #[test]
    fn counts_and_returns() {
        let t = run("int f(){int i; for(i=0;i<3;i++) print(i); return 7;}", &[]);
        assert_eq!(t.outputs, vec![0, 1, 2]);
        assert_eq!(t.return_value, Some(7));
        assert_eq!(t.halted, Halt::Normal);
    }

    #[test]
    fn trivial_return() {
        let t = run("int f(){return 0;}", &[]);
        assert!(t.outputs.is_empty());
        assert_eq!(t.return_value, Some(0));
    }

    #[test]
    fn step_limit_halts() {
        let unit = parse("int f(){while(1){}}").unwrap();
        let t = interpret(&unit.ast, &[], InterpOptions::with_limit(1000)).unwrap();
        assert_eq!(t.halted, Halt::StepLimit);
        assert!(t.step_count <= 1000);
    }

    #[test]
    fn runtime_errors() {
        assert_eq!(run("int f(int a){return 10 / a;}", &[0]).halted, Halt::RuntimeError(RuntimeErrorKind::DivByZero));
        assert_eq!(
            run("int f(){int a[3]; a[3] = 1; return 0;}", &[]).halted,
            Halt::RuntimeError(RuntimeErrorKind::ArrayOob)
        );
        let unit = parse("int f(){return input();}").unwrap();
        let strict = InterpOptions { step_limit: 100, strict_inputs: true };
        assert_eq!(
            interpret(&unit.ast, &[], strict).unwrap().halted,
            Halt::RuntimeError(RuntimeErrorKind::InputExhaustedStrict)
        );
        assert_eq!(run("int f(){return input();}", &[]).return_value, Some(0));
    }

    #[test]
    fn wrapping_arithmetic() {
        let t = run("long f(long a){return a + 1;}", &[i64::MAX]);
        assert_eq!(t.return_value, Some(i64::MIN));
        let t = run("long f(long a, long b){return a / b;}", &[i64::MIN, -1]);
        assert_eq!(t.return_value, Some(i64::MIN));
    }

    #[test]
    fn switch_fallthrough_and_default() {
        let src = "int f(int a){int r = 0; switch(a){case 1: r = r + 1; case 2: r = r + 10; break; default: r = 100;} return r;}";
        assert_eq!(run(src, &[1]).return_value, Some(11));
        assert_eq!(run(src, &[2]).return_value, Some(10));
        assert_eq!(run(src, &[5]).return_value, Some(100));
    }

    #[test]
    fn opaque_calls_are_not_executable() {
        let unit = parse("int f(){ memcpy(a, b, 3); return 0; }").unwrap();
        assert!(interpret(&unit.ast, &[], InterpOptions::with_limit(10)).is_err());
    }

    #[test]
    fn continue_in_for_runs_step() {
        let t = run("int f(){int i; int s = 0; for(i=0;i<5;i++){ if (i == 2) continue; s += i; } return s;}", &[]);
        assert_eq!(t.return_value, Some(8));
    }
}
