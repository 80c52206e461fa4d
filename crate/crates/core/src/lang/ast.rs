//! Syntax tree for the host language, a small Python subset.
//!
//! The tree carries no positions or formatting, so derived `PartialEq` is
//! the structural (formatting-insensitive) equality used by the differ.
//! A handful of node kinds (`Barrier`, `CellDef`, `Signal`, `Expr::Ns`) are
//! only produced by the vaccinator and never by the parser.

use std::fmt;
use std::sync::Arc;

pub type Block = Vec<Stmt>;

#[derive(Debug, Clone, PartialEq)]
pub enum Constant {
    None,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(Arc<str>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    FloorDiv,
    Mod,
    Pow,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::FloorDiv => "//",
            BinOp::Mod => "%",
            BinOp::Pow => "**",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Pos,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    NotEq,
    Lt,
    LtE,
    Gt,
    GtE,
    In,
    NotIn,
    Is,
    IsNot,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::NotEq => "!=",
            CmpOp::Lt => "<",
            CmpOp::LtE => "<=",
            CmpOp::Gt => ">",
            CmpOp::GtE => ">=",
            CmpOp::In => "in",
            CmpOp::NotIn => "not in",
            CmpOp::Is => "is",
            CmpOp::IsNot => "is not",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoolOp {
    And,
    Or,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub default: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lambda {
    pub params: Vec<Param>,
    pub body: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comprehension {
    pub target: Expr,
    pub iter: Expr,
    pub ifs: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(Constant),
    Name(String),
    /// An entry-function local redirected to the activation's namespace table.
    Ns(String),
    List(Vec<Expr>),
    Tuple(Vec<Expr>),
    Dict(Vec<(Expr, Expr)>),
    Attr(Box<Expr>, String),
    Index(Box<Expr>, Box<Expr>),
    Slice(Option<Box<Expr>>, Option<Box<Expr>>, Option<Box<Expr>>),
    Call {
        func: Box<Expr>,
        args: Vec<Expr>,
        kwargs: Vec<(String, Expr)>,
    },
    Unary(UnaryOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Compare(Box<Expr>, Vec<(CmpOp, Expr)>),
    Bool(BoolOp, Box<Expr>, Box<Expr>),
    IfExp {
        test: Box<Expr>,
        body: Box<Expr>,
        orelse: Box<Expr>,
    },
    Lambda(Arc<Lambda>),
    ListComp {
        elt: Box<Expr>,
        generators: Vec<Comprehension>,
    },
    Yield(Option<Box<Expr>>),
    Await(Box<Expr>),
}

impl Expr {
    pub fn name(s: impl Into<String>) -> Expr {
        Expr::Name(s.into())
    }

    pub fn str(s: &str) -> Expr {
        Expr::Const(Constant::Str(Arc::from(s)))
    }

    pub fn int(i: i64) -> Expr {
        Expr::Const(Constant::Int(i))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuncDef {
    pub name: String,
    pub params: Vec<Param>,
    pub body: Block,
    pub decorators: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Handler {
    pub kind: Option<Expr>,
    pub name: Option<String>,
    pub body: Block,
}

/// Where a barrier sits, which decides how the cell's indicator is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BarrierContext {
    /// Body of the entry function; RETURN leaves the entry.
    Root,
    /// Loop body; BREAK/CONTINUE drive the loop, RETURN propagates upward.
    Loop,
    /// Body of a nested function definition; RETURN returns from it.
    FuncDef,
}

/// A crash-guarded call to a cell, including the indicator reaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Barrier {
    pub cell: u32,
    pub context: BarrierContext,
}

/// A nested function definition whose body was extracted into a cell.
/// Parameters are bound into the activation namespace under `slots`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellDef {
    pub name: String,
    pub params: Vec<Param>,
    pub slots: Vec<String>,
    pub decorators: Vec<Expr>,
    pub barrier: Barrier,
    /// Slot the resulting function object is stored under.
    pub bind: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum IndicatorKind {
    Normal,
    Break,
    Continue,
    Return,
}

impl IndicatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            IndicatorKind::Normal => "NORMAL",
            IndicatorKind::Break => "BREAK",
            IndicatorKind::Continue => "CONTINUE",
            IndicatorKind::Return => "RETURN",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Expr(Expr),
    Assign {
        targets: Vec<Expr>,
        value: Expr,
    },
    AugAssign {
        target: Expr,
        op: BinOp,
        value: Expr,
    },
    If {
        test: Expr,
        body: Block,
        orelse: Block,
    },
    While {
        test: Expr,
        body: Block,
        orelse: Block,
    },
    For {
        target: Expr,
        iter: Expr,
        body: Block,
        orelse: Block,
    },
    Break,
    Continue,
    Return(Option<Expr>),
    Pass,
    Raise(Option<Expr>),
    Try {
        body: Block,
        handlers: Vec<Handler>,
        orelse: Block,
        finalbody: Block,
    },
    With {
        item: Expr,
        target: Option<Expr>,
        body: Block,
    },
    FuncDef(Arc<FuncDef>),
    Assert {
        test: Expr,
        msg: Option<Expr>,
    },
    Del(Vec<Expr>),
    Import {
        module: String,
        alias: Option<String>,
    },
    ImportFrom {
        module: String,
        names: Vec<(String, Option<String>)>,
    },
    Barrier(Barrier),
    CellDef(Arc<CellDef>),
    /// `return <indicator>` inside a cell.
    Signal(IndicatorKind, Option<Expr>),
}

impl Stmt {
    pub fn is_compound(&self) -> bool {
        matches!(
            self,
            Stmt::If { .. }
                | Stmt::While { .. }
                | Stmt::For { .. }
                | Stmt::Try { .. }
                | Stmt::With { .. }
                | Stmt::FuncDef(_)
        )
    }

    pub fn is_loop(&self) -> bool {
        matches!(self, Stmt::While { .. } | Stmt::For { .. })
    }
}

/// Identifies one nested block of a compound statement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKind {
    /// Top-level body of a function or cell.
    Body,
    BranchThen,
    BranchElse,
    LoopBody,
    LoopElse,
    TryBody,
    Handler(u16),
    TryElse,
    Finally,
    WithBody,
    DefBody,
}

impl BlockKind {
    /// Textual order of sibling blocks inside one compound statement.
    pub fn ordinal(self) -> u32 {
        match self {
            BlockKind::Body => 0,
            BlockKind::BranchThen => 1,
            BlockKind::BranchElse => 2,
            BlockKind::LoopBody => 1,
            BlockKind::LoopElse => 2,
            BlockKind::TryBody => 1,
            BlockKind::Handler(i) => 2 + i as u32,
            BlockKind::TryElse => 70_000,
            BlockKind::Finally => 70_001,
            BlockKind::WithBody => 1,
            BlockKind::DefBody => 1,
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockKind::Body => f.write_str("body"),
            BlockKind::BranchThen => f.write_str("then"),
            BlockKind::BranchElse => f.write_str("else"),
            BlockKind::LoopBody => f.write_str("loop"),
            BlockKind::LoopElse => f.write_str("loop-else"),
            BlockKind::TryBody => f.write_str("try"),
            BlockKind::Handler(i) => write!(f, "handler{i}"),
            BlockKind::TryElse => f.write_str("try-else"),
            BlockKind::Finally => f.write_str("finally"),
            BlockKind::WithBody => f.write_str("with"),
            BlockKind::DefBody => f.write_str("def"),
        }
    }
}

/// Returns the child blocks of a statement in textual order.
pub fn child_blocks(stmt: &Stmt) -> Vec<(BlockKind, &Block)> {
    match stmt {
        Stmt::If { body, orelse, .. } => vec![(BlockKind::BranchThen, body), (BlockKind::BranchElse, orelse)],
        Stmt::While { body, orelse, .. } | Stmt::For { body, orelse, .. } => {
            vec![(BlockKind::LoopBody, body), (BlockKind::LoopElse, orelse)]
        }
        Stmt::Try {
            body,
            handlers,
            orelse,
            finalbody,
        } => {
            let mut v = vec![(BlockKind::TryBody, body)];
            for (i, h) in handlers.iter().enumerate() {
                v.push((BlockKind::Handler(i as u16), &h.body));
            }
            v.push((BlockKind::TryElse, orelse));
            v.push((BlockKind::Finally, finalbody));
            v
        }
        Stmt::With { body, .. } => vec![(BlockKind::WithBody, body)],
        Stmt::FuncDef(def) => vec![(BlockKind::DefBody, &def.body)],
        _ => Vec::new(),
    }
}

pub fn child_block_mut(stmt: &mut Stmt, kind: BlockKind) -> Option<&mut Block> {
    match (stmt, kind) {
        (Stmt::If { body, .. }, BlockKind::BranchThen) => Some(body),
        (Stmt::If { orelse, .. }, BlockKind::BranchElse) => Some(orelse),
        (Stmt::While { body, .. } | Stmt::For { body, .. }, BlockKind::LoopBody) => Some(body),
        (Stmt::While { orelse, .. } | Stmt::For { orelse, .. }, BlockKind::LoopElse) => Some(orelse),
        (Stmt::Try { body, .. }, BlockKind::TryBody) => Some(body),
        (Stmt::Try { handlers, .. }, BlockKind::Handler(i)) => handlers.get_mut(i as usize).map(|h| &mut h.body),
        (Stmt::Try { orelse, .. }, BlockKind::TryElse) => Some(orelse),
        (Stmt::Try { finalbody, .. }, BlockKind::Finally) => Some(finalbody),
        (Stmt::With { body, .. }, BlockKind::WithBody) => Some(body),
        (Stmt::FuncDef(def), BlockKind::DefBody) => Some(&mut Arc::make_mut(def).body),
        _ => None,
    }
}

pub fn child_block(stmt: &Stmt, kind: BlockKind) -> Option<&Block> {
    child_blocks(stmt).into_iter().find(|(k, _)| *k == kind).map(|(_, b)| b)
}

/// The statement with its nested blocks emptied, used to compare headers.
pub fn header_of(stmt: &Stmt) -> Stmt {
    match stmt {
        Stmt::If { test, .. } => Stmt::If {
            test: test.clone(),
            body: Vec::new(),
            orelse: Vec::new(),
        },
        Stmt::While { test, .. } => Stmt::While {
            test: test.clone(),
            body: Vec::new(),
            orelse: Vec::new(),
        },
        Stmt::For { target, iter, .. } => Stmt::For {
            target: target.clone(),
            iter: iter.clone(),
            body: Vec::new(),
            orelse: Vec::new(),
        },
        Stmt::Try { handlers, .. } => Stmt::Try {
            body: Vec::new(),
            handlers: handlers
                .iter()
                .map(|h| Handler {
                    kind: h.kind.clone(),
                    name: h.name.clone(),
                    body: Vec::new(),
                })
                .collect(),
            orelse: Vec::new(),
            finalbody: Vec::new(),
        },
        Stmt::With { item, target, .. } => Stmt::With {
            item: item.clone(),
            target: target.clone(),
            body: Vec::new(),
        },
        Stmt::FuncDef(def) => Stmt::FuncDef(Arc::new(FuncDef {
            name: def.name.clone(),
            params: def.params.clone(),
            body: Vec::new(),
            decorators: def.decorators.clone(),
        })),
        other => other.clone(),
    }
}

/// Calls `f` on every expression directly owned by `stmt` (not nested blocks).
pub fn stmt_exprs<'a>(stmt: &'a Stmt, f: &mut dyn FnMut(&'a Expr)) {
    match stmt {
        Stmt::Expr(e) => f(e),
        Stmt::Assign { targets, value } => {
            for t in targets {
                f(t);
            }
            f(value);
        }
        Stmt::AugAssign { target, value, .. } => {
            f(target);
            f(value);
        }
        Stmt::If { test, .. } | Stmt::While { test, .. } => f(test),
        Stmt::For { target, iter, .. } => {
            f(target);
            f(iter);
        }
        Stmt::Return(Some(e)) | Stmt::Raise(Some(e)) | Stmt::Signal(_, Some(e)) => f(e),
        Stmt::Try { handlers, .. } => {
            for h in handlers {
                if let Some(k) = &h.kind {
                    f(k);
                }
            }
        }
        Stmt::With { item, target, .. } => {
            f(item);
            if let Some(t) = target {
                f(t);
            }
        }
        Stmt::FuncDef(def) => {
            for d in &def.decorators {
                f(d);
            }
            for p in &def.params {
                if let Some(d) = &p.default {
                    f(d);
                }
            }
        }
        Stmt::CellDef(def) => {
            for d in &def.decorators {
                f(d);
            }
            for p in &def.params {
                if let Some(d) = &p.default {
                    f(d);
                }
            }
        }
        Stmt::Assert { test, msg } => {
            f(test);
            if let Some(m) = msg {
                f(m);
            }
        }
        Stmt::Del(targets) => {
            for t in targets {
                f(t);
            }
        }
        _ => {}
    }
}

/// Calls `f` on `expr` and every sub-expression, pre-order.
pub fn walk_expr<'a>(expr: &'a Expr, f: &mut dyn FnMut(&'a Expr)) {
    f(expr);
    match expr {
        Expr::List(items) | Expr::Tuple(items) => items.iter().for_each(|e| walk_expr(e, f)),
        Expr::Dict(pairs) => {
            for (k, v) in pairs {
                walk_expr(k, f);
                walk_expr(v, f);
            }
        }
        Expr::Attr(e, _) | Expr::Unary(_, e) | Expr::Await(e) => walk_expr(e, f),
        Expr::Index(a, b) | Expr::Binary(_, a, b) | Expr::Bool(_, a, b) => {
            walk_expr(a, f);
            walk_expr(b, f);
        }
        Expr::Slice(a, b, c) => {
            for e in [a, b, c].into_iter().flatten() {
                walk_expr(e, f);
            }
        }
        Expr::Call { func, args, kwargs } => {
            walk_expr(func, f);
            args.iter().for_each(|e| walk_expr(e, f));
            kwargs.iter().for_each(|(_, e)| walk_expr(e, f));
        }
        Expr::Compare(first, rest) => {
            walk_expr(first, f);
            rest.iter().for_each(|(_, e)| walk_expr(e, f));
        }
        Expr::IfExp { test, body, orelse } => {
            walk_expr(test, f);
            walk_expr(body, f);
            walk_expr(orelse, f);
        }
        Expr::Lambda(l) => {
            for p in &l.params {
                if let Some(d) = &p.default {
                    walk_expr(d, f);
                }
            }
            walk_expr(&l.body, f);
        }
        Expr::ListComp { elt, generators } => {
            walk_expr(elt, f);
            for g in generators {
                walk_expr(&g.target, f);
                walk_expr(&g.iter, f);
                g.ifs.iter().for_each(|e| walk_expr(e, f));
            }
        }
        Expr::Yield(Some(e)) => walk_expr(e, f),
        Expr::Const(_) | Expr::Name(_) | Expr::Ns(_) | Expr::Yield(None) => {}
    }
}

/// Visits every statement of `block` recursively, pre-order.
pub fn walk_block<'a>(block: &'a Block, f: &mut dyn FnMut(&'a Stmt)) {
    for stmt in block {
        f(stmt);
        for (_, child) in child_blocks(stmt) {
            walk_block(child, f);
        }
    }
}
