use serde::{Deserialize, Serialize};

/// Preorder index of a statement inside its function. Stable across
/// print/parse round trips, so it doubles as a transformation site reference.
pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionDef {
    pub ret: TypeName,
    pub ret_pointers: u8,
    pub name: String,
    pub params: Vec<Param>,
    /// Always a `StmtKind::Block`.
    pub body: Stmt,
}

/// Base type words, e.g. `["unsigned", "int"]` or `["struct", "kiocb"]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeName {
    pub words: Vec<String>,
}

impl TypeName {
    pub fn new<S: Into<String>>(words: impl IntoIterator<Item = S>) -> Self {
        Self { words: words.into_iter().map(Into::into).collect() }
    }

    /// True when every word names an integer type or qualifier; struct and
    /// opaque typedef types are outside what the interpreter models.
    pub fn is_integer(&self) -> bool {
        const INTEGER_WORDS: &[&str] = &[
            "int", "long", "short", "char", "unsigned", "signed", "const", "volatile", "static",
            "register", "bool", "_Bool", "size_t", "ssize_t", "int8_t", "int16_t", "int32_t",
            "int64_t", "uint8_t", "uint16_t", "uint32_t", "uint64_t", "intptr_t", "uintptr_t",
            "ptrdiff_t", "off_t", "loff_t", "u8", "u16", "u32", "u64", "s8", "s16", "s32", "s64",
        ];
        !self.words.is_empty() && self.words.iter().all(|w| INTEGER_WORDS.contains(&w.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Param {
    pub ty: TypeName,
    pub pointers: u8,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stmt {
    pub id: NodeId,
    pub kind: StmtKind,
}

impl Stmt {
    pub fn new(kind: StmtKind) -> Self {
        Self { id: 0, kind }
    }

    pub fn block(stmts: Vec<Stmt>) -> Self {
        Self::new(StmtKind::Block(stmts))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StmtKind {
    Block(Vec<Stmt>),
    Decl(Decl),
    Expr(Expr),
    Empty,
    If {
        cond: Expr,
        /// Always a block.
        then: Box<Stmt>,
        /// Either another `If` (an `else if` chain) or a block.
        els: Option<Box<Stmt>>,
    },
    For {
        init: Option<ForInit>,
        cond: Option<Expr>,
        step: Option<Expr>,
        body: Box<Stmt>,
    },
    While {
        cond: Expr,
        body: Box<Stmt>,
    },
    DoWhile {
        body: Box<Stmt>,
        cond: Expr,
    },
    Switch {
        scrutinee: Expr,
        clauses: Vec<Clause>,
    },
    Break,
    Continue,
    Return(Option<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForInit {
    Decl(Decl),
    Expr(Expr),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decl {
    pub ty: TypeName,
    pub vars: Vec<Declarator>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Declarator {
    pub name: String,
    pub pointers: u8,
    /// `Some(None)` is `x[]`, `Some(Some(n))` is `x[n]`.
    pub array: Option<Option<Expr>>,
    pub init: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseLabel {
    Case(Expr),
    Default,
}

/// One `case L:` or `default:` label and the statements up to the next label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    pub label: CaseLabel,
    pub body: Vec<Stmt>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnaryOp {
    Neg,
    Plus,
    Not,
    BitNot,
    Deref,
    AddrOf,
    PreInc,
    PreDec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PostfixOp {
    Inc,
    Dec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryOp {
    Mul,
    Div,
    Rem,
    Add,
    Sub,
    Shl,
    Shr,
    Lt,
    Gt,
    Le,
    Ge,
    Eq,
    Ne,
    BitAnd,
    BitXor,
    BitOr,
    And,
    Or,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        use BinaryOp::*;
        match self {
            Mul => "*",
            Div => "/",
            Rem => "%",
            Add => "+",
            Sub => "-",
            Shl => "<<",
            Shr => ">>",
            Lt => "<",
            Gt => ">",
            Le => "<=",
            Ge => ">=",
            Eq => "==",
            Ne => "!=",
            BitAnd => "&",
            BitXor => "^",
            BitOr => "|",
            And => "&&",
            Or => "||",
        }
    }

    pub fn precedence(self) -> u8 {
        use BinaryOp::*;
        match self {
            Or => 4,
            And => 5,
            BitOr => 6,
            BitXor => 7,
            BitAnd => 8,
            Eq | Ne => 9,
            Lt | Gt | Le | Ge => 10,
            Shl | Shr => 11,
            Add | Sub => 12,
            Mul | Div | Rem => 13,
        }
    }

    pub fn from_symbol(sym: &str) -> Option<Self> {
        use BinaryOp::*;
        Some(match sym {
            "*" => Mul,
            "/" => Div,
            "%" => Rem,
            "+" => Add,
            "-" => Sub,
            "<<" => Shl,
            ">>" => Shr,
            "<" => Lt,
            ">" => Gt,
            "<=" => Le,
            ">=" => Ge,
            "==" => Eq,
            "!=" => Ne,
            "&" => BitAnd,
            "^" => BitXor,
            "|" => BitOr,
            "&&" => And,
            "||" => Or,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AssignOp {
    Assign,
    Compound(BinaryOp),
}

impl AssignOp {
    pub fn from_symbol(sym: &str) -> Option<Self> {
        if sym == "=" {
            return Some(AssignOp::Assign);
        }
        let inner = sym.strip_suffix('=')?;
        match BinaryOp::from_symbol(inner)? {
            op @ (BinaryOp::Mul
            | BinaryOp::Div
            | BinaryOp::Rem
            | BinaryOp::Add
            | BinaryOp::Sub
            | BinaryOp::Shl
            | BinaryOp::Shr
            | BinaryOp::BitAnd
            | BinaryOp::BitXor
            | BinaryOp::BitOr) => Some(AssignOp::Compound(op)),
            _ => None,
        }
    }

    pub fn symbol(self) -> String {
        match self {
            AssignOp::Assign => "=".into(),
            AssignOp::Compound(op) => format!("{}=", op.symbol()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Expr {
    /// Integer or character literal; `text` keeps the source spelling.
    Int { value: i64, text: String },
    Str(String),
    Ident(String),
    Unary { op: UnaryOp, expr: Box<Expr> },
    Postfix { op: PostfixOp, expr: Box<Expr> },
    Binary { op: BinaryOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Assign { op: AssignOp, target: Box<Expr>, value: Box<Expr> },
    Ternary { cond: Box<Expr>, then: Box<Expr>, els: Box<Expr> },
    Call { callee: Box<Expr>, args: Vec<Expr> },
    Index { base: Box<Expr>, index: Box<Expr> },
    Member { base: Box<Expr>, field: String, arrow: bool },
    Cast { ty: TypeName, pointers: u8, expr: Box<Expr> },
    SizeofType { ty: TypeName, pointers: u8 },
    SizeofExpr(Box<Expr>),
    Comma { lhs: Box<Expr>, rhs: Box<Expr> },
    InitList(Vec<Expr>),
}

impl Expr {
    pub fn int(value: i64) -> Self {
        Expr::Int { value, text: value.to_string() }
    }

    pub fn ident(name: impl Into<String>) -> Self {
        Expr::Ident(name.into())
    }

    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    /// Operator precedence used by the printer (higher binds tighter).
    pub fn precedence(&self) -> u8 {
        match self {
            Expr::Comma { .. } => 1,
            Expr::Assign { .. } => 2,
            Expr::Ternary { .. } => 3,
            Expr::Binary { op, .. } => op.precedence(),
            Expr::Unary { .. } | Expr::Cast { .. } | Expr::SizeofType { .. } | Expr::SizeofExpr(_) => 14,
            Expr::Postfix { .. } | Expr::Call { .. } | Expr::Index { .. } | Expr::Member { .. } => 15,
            Expr::Int { .. } | Expr::Str(_) | Expr::Ident(_) | Expr::InitList(_) => 16,
        }
    }

    /// Visits this expression and all sub-expressions in evaluation-ish order.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Int { .. } | Expr::Str(_) | Expr::Ident(_) | Expr::SizeofType { .. } => {}
            Expr::Unary { expr, .. }
            | Expr::Postfix { expr, .. }
            | Expr::Cast { expr, .. }
            | Expr::SizeofExpr(expr) => expr.walk(f),
            Expr::Member { base, .. } => base.walk(f),
            Expr::Binary { lhs, rhs, .. } | Expr::Comma { lhs, rhs } => {
                lhs.walk(f);
                rhs.walk(f);
            }
            Expr::Assign { target, value, .. } => {
                target.walk(f);
                value.walk(f);
            }
            Expr::Ternary { cond, then, els } => {
                cond.walk(f);
                then.walk(f);
                els.walk(f);
            }
            Expr::Call { callee, args } => {
                callee.walk(f);
                for a in args {
                    a.walk(f);
                }
            }
            Expr::Index { base, index } => {
                base.walk(f);
                index.walk(f);
            }
            Expr::InitList(items) => {
                for i in items {
                    i.walk(f);
                }
            }
        }
    }

    /// Folds integer constant expressions (case labels, array sizes).
    pub fn const_value(&self) -> Option<i64> {
        match self {
            Expr::Int { value, .. } => Some(*value),
            Expr::Unary { op, expr } => {
                let v = expr.const_value()?;
                match op {
                    UnaryOp::Neg => Some(v.wrapping_neg()),
                    UnaryOp::Plus => Some(v),
                    UnaryOp::BitNot => Some(!v),
                    UnaryOp::Not => Some((v == 0) as i64),
                    _ => None,
                }
            }
            Expr::Binary { op, lhs, rhs } => {
                let (a, b) = (lhs.const_value()?, rhs.const_value()?);
                crate::frontend::interp::binary_op(*op, a, b).ok()
            }
            Expr::Cast { expr, pointers: 0, .. } => expr.const_value(),
            _ => None,
        }
    }

    /// True when evaluating the expression can change program state.
    pub fn has_side_effects(&self) -> bool {
        let mut found = false;
        self.walk(&mut |e| {
            if matches!(
                e,
                Expr::Assign { .. }
                    | Expr::Call { .. }
                    | Expr::Postfix { .. }
                    | Expr::Unary { op: UnaryOp::PreInc | UnaryOp::PreDec, .. }
            ) {
                found = true;
            }
        });
        found
    }
}

impl Stmt {
    /// Direct child statements in source order.
    pub fn children(&self) -> Vec<&Stmt> {
        match &self.kind {
            StmtKind::Block(stmts) => stmts.iter().collect(),
            StmtKind::If { then, els, .. } => {
                let mut v = vec![then.as_ref()];
                if let Some(e) = els {
                    v.push(e.as_ref());
                }
                v
            }
            StmtKind::For { body, .. } | StmtKind::While { body, .. } | StmtKind::DoWhile { body, .. } => {
                vec![body.as_ref()]
            }
            StmtKind::Switch { clauses, .. } => clauses.iter().flat_map(|c| c.body.iter()).collect(),
            _ => Vec::new(),
        }
    }

    /// Preorder walk over this statement and every nested statement.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Stmt)) {
        f(self);
        for c in self.children() {
            c.walk(f);
        }
    }

    /// Expressions owned directly by this statement (not by nested statements).
    pub fn own_exprs(&self) -> Vec<&Expr> {
        fn decl_exprs(d: &Decl) -> Vec<&Expr> {
            let mut v = Vec::new();
            for var in &d.vars {
                if let Some(Some(n)) = &var.array {
                    v.push(n);
                }
                if let Some(i) = &var.init {
                    v.push(i);
                }
            }
            v
        }
        match &self.kind {
            StmtKind::Decl(d) => decl_exprs(d),
            StmtKind::Expr(e) => vec![e],
            StmtKind::If { cond, .. } | StmtKind::While { cond, .. } | StmtKind::DoWhile { cond, .. } => {
                vec![cond]
            }
            StmtKind::For { init, cond, step, .. } => {
                let mut v = match init {
                    Some(ForInit::Decl(d)) => decl_exprs(d),
                    Some(ForInit::Expr(e)) => vec![e],
                    None => Vec::new(),
                };
                v.extend(cond.iter());
                v.extend(step.iter());
                v
            }
            StmtKind::Switch { scrutinee, clauses } => {
                let mut v = vec![scrutinee];
                for c in clauses {
                    if let CaseLabel::Case(e) = &c.label {
                        v.push(e);
                    }
                }
                v
            }
            StmtKind::Return(Some(e)) => vec![e],
            _ => Vec::new(),
        }
    }
}

impl FunctionDef {
    pub fn body_stmts(&self) -> &[Stmt] {
        match &self.body.kind {
            StmtKind::Block(s) => s,
            _ => &[],
        }
    }

    /// Statement with the given id, if any.
    pub fn find(&self, id: NodeId) -> Option<&Stmt> {
        let mut hit = None;
        self.body.walk(&mut |s| {
            if s.id == id && hit.is_none() {
                hit = Some(s);
            }
        });
        hit
    }

    pub fn statement_count(&self) -> usize {
        let mut n = 0;
        self.body.walk(&mut |_| n += 1);
        n
    }

    /// Reassigns preorder ids starting from 0 at the body block.
    pub fn renumber(&mut self) {
        fn go(s: &mut Stmt, next: &mut NodeId) {
            s.id = *next;
            *next += 1;
            match &mut s.kind {
                StmtKind::Block(stmts) => stmts.iter_mut().for_each(|c| go(c, next)),
                StmtKind::If { then, els, .. } => {
                    go(then, next);
                    if let Some(e) = els {
                        go(e, next);
                    }
                }
                StmtKind::For { body, .. } | StmtKind::While { body, .. } | StmtKind::DoWhile { body, .. } => {
                    go(body, next)
                }
                StmtKind::Switch { clauses, .. } => {
                    for c in clauses {
                        c.body.iter_mut().for_each(|s| go(s, next));
                    }
                }
                _ => {}
            }
        }
        let mut next = 0;
        go(&mut self.body, &mut next);
    }
}
