//! Function decomposition into cells and namespace redirection.
//!
//! Loop bodies and nested function bodies are extracted bottom-up into cells
//! so every frame that can be live during a crash is a cell frame whose code
//! is fetched by id. Locals of the entry function (and, qualified, of its
//! nested functions) are rewritten into accesses of the activation table.

use std::collections::{BTreeMap, HashSet};
use std::rc::Rc;
use std::sync::Arc;

use serde::Serialize;

use crate::lang::ast::*;
use crate::lang::interp::bound_names;
use crate::lang::unparse::{quote_str, unparse_block};
use crate::lang::value::{FnBody, Function, Value};
use crate::lang::{Flow, Interp};
use crate::runtime::VaccinatedFn;
use crate::source::{SourceFunction, StatementPath};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VaccinationError {
    #[error("'{0}' is a generator or coroutine and cannot be vaccinated")]
    Generator(String),
    #[error("'{0}' already contains vaccinator output")]
    AlreadyVaccinated(String),
    #[error("{0}")]
    Unsupported(String),
}

/// How finely the entry function is split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    /// Loop and nested-function bodies become cells.
    #[default]
    Cells,
    /// No decomposition: one cell, crashes are intercepted per statement.
    Statements,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellKind {
    Plain,
    LoopWrapper,
    FuncdefWrapper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub id: u32,
    pub parent: Option<u32>,
    /// Path of the loop or def statement the body came from; empty for the root.
    pub origin: StatementPath,
    pub context: BarrierContext,
    pub kind: CellKind,
    pub body: Block,
    /// Table slots the body reads or writes.
    pub free_vars: Vec<String>,
}

impl Cell {
    pub fn body_kind(&self) -> BlockKind {
        match self.context {
            BarrierContext::Root => BlockKind::Body,
            BarrierContext::Loop => BlockKind::LoopBody,
            BarrierContext::FuncDef => BlockKind::DefBody,
        }
    }

    /// Whether a function-level path lies inside this cell's body block.
    pub fn contains(&self, full: &StatementPath) -> bool {
        let n = self.origin.len();
        full.len() > n && full.starts_with(&self.origin) && full.steps[n].0 == self.body_kind()
    }

    pub fn rel(&self, full: &StatementPath) -> Option<StatementPath> {
        self.contains(full)
            .then(|| StatementPath::from_steps(full.steps[self.origin.len()..].iter().copied()))
    }

    pub fn full(&self, rel: &StatementPath) -> StatementPath {
        self.origin.join(rel)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CellTree {
    pub cells: BTreeMap<u32, Rc<Cell>>,
}

pub const ROOT_CELL: u32 = 0;

impl CellTree {
    pub fn get(&self, id: u32) -> Option<&Rc<Cell>> {
        self.cells.get(&id)
    }

    pub fn root(&self) -> &Rc<Cell> {
        &self.cells[&ROOT_CELL]
    }

    pub fn children(&self, id: u32) -> Vec<u32> {
        self.cells
            .values()
            .filter(|c| c.parent == Some(id))
            .map(|c| c.id)
            .collect()
    }

    /// The innermost cell whose body contains `full`.
    pub fn owner(&self, full: &StatementPath) -> u32 {
        self.cells
            .values()
            .filter(|c| c.contains(full))
            .max_by_key(|c| c.origin.len())
            .map_or(ROOT_CELL, |c| c.id)
    }

    pub fn max_id(&self) -> u32 {
        self.cells.keys().copied().max().unwrap_or(0)
    }

    /// Cell id of the loop or def statement at `origin`, if it was extracted.
    pub fn by_origin(&self, origin: &StatementPath) -> Option<u32> {
        self.cells
            .values()
            .find(|c| !c.origin.is_empty() && &c.origin == origin)
            .map(|c| c.id)
    }
}

/// A nested-function local that was given a qualified slot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rename {
    pub function: String,
    pub name: String,
    pub slot: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub tree: CellTree,
    /// Every slot the activation table pre-declares.
    pub slots: Vec<String>,
    pub renames: Vec<Rename>,
    pub granularity: Granularity,
}

pub fn decompose(f: &SourceFunction, granularity: Granularity) -> Result<Decomposition, VaccinationError> {
    decompose_aligned(f, granularity, &|_| None, 1)
}

/// Decomposes with cell ids carried over: `hint` maps the path of a loop or
/// def statement to the id its cell had before, fresh ids start at `next_id`.
pub fn decompose_aligned(
    f: &SourceFunction,
    granularity: Granularity,
    hint: &dyn Fn(&StatementPath) -> Option<u32>,
    next_id: u32,
) -> Result<Decomposition, VaccinationError> {
    check_supported(f)?;
    let mut names: Vec<String> = f.param_names();
    bound_names(&f.body, &mut names);
    let mut d = Decomposer {
        granularity,
        levels: vec![Level {
            names: names.iter().cloned().collect(),
            qual: None,
            redirect: true,
        }],
        cells: BTreeMap::new(),
        next_id,
        hint,
        renames: Vec::new(),
        slots: Vec::new(),
    };
    for n in &names {
        d.add_slot(n.clone());
    }
    let body = d.block(
        &f.body,
        &StatementPath::default(),
        BlockKind::Body,
        Ctx {
            cell: ROOT_CELL,
            cf: Some(BarrierContext::Root),
        },
    )?;
    d.finish_cell(ROOT_CELL, None, StatementPath::default(), BarrierContext::Root, body);
    Ok(Decomposition {
        tree: CellTree {
            cells: d.cells.into_iter().map(|(k, v)| (k, Rc::new(v))).collect(),
        },
        slots: d.slots,
        renames: d.renames,
        granularity,
    })
}

fn check_supported(f: &SourceFunction) -> Result<(), VaccinationError> {
    let mut generator = false;
    let mut generated = false;
    walk_block(&f.body, &mut |s| {
        if matches!(s, Stmt::Barrier(_) | Stmt::CellDef(_) | Stmt::Signal(..)) {
            generated = true;
        }
        stmt_exprs(s, &mut |e| {
            walk_expr(e, &mut |x| match x {
                Expr::Yield(_) | Expr::Await(_) => generator = true,
                Expr::Ns(_) => generated = true,
                _ => {}
            })
        });
    });
    if generator {
        return Err(VaccinationError::Generator(f.name.clone()));
    }
    if generated {
        return Err(VaccinationError::AlreadyVaccinated(f.name.clone()));
    }
    Ok(())
}

struct Level {
    names: HashSet<String>,
    /// Qualifier of a nested function's slots; `None` for the entry.
    qual: Option<String>,
    /// Lambda and comprehension scopes shadow without redirecting.
    redirect: bool,
}

#[derive(Clone, Copy)]
struct Ctx {
    cell: u32,
    /// Context of the enclosing cell, deciding which jumps become indicators.
    /// `None` inside a nested function that is kept native.
    cf: Option<BarrierContext>,
}

struct Decomposer<'a> {
    granularity: Granularity,
    levels: Vec<Level>,
    cells: BTreeMap<u32, Cell>,
    next_id: u32,
    hint: &'a dyn Fn(&StatementPath) -> Option<u32>,
    renames: Vec<Rename>,
    slots: Vec<String>,
}

pub fn qualified(name: &str, qual: Option<&str>) -> String {
    match qual {
        None => name.to_string(),
        Some(q) => format!("{name}@{q}"),
    }
}

/// The user-facing name of a slot.
pub fn unqualified(slot: &str) -> &str {
    slot.split('@').next().unwrap_or(slot)
}

impl Decomposer<'_> {
    fn add_slot(&mut self, s: String) {
        if !self.slots.contains(&s) {
            self.slots.push(s);
        }
    }

    fn cell_id(&mut self, path: &StatementPath) -> u32 {
        match (self.hint)(path) {
            Some(id) if id != ROOT_CELL && !self.cells.contains_key(&id) => id,
            _ => {
                let id = self.next_id;
                self.next_id += 1;
                id
            }
        }
    }

    fn finish_cell(
        &mut self,
        id: u32,
        parent: Option<u32>,
        origin: StatementPath,
        context: BarrierContext,
        body: Block,
    ) {
        let mut has_loop = false;
        walk_block(&body, &mut |s| has_loop |= matches!(s, Stmt::Barrier(_)) || s.is_loop());
        let kind = match context {
            BarrierContext::FuncDef => CellKind::FuncdefWrapper,
            _ if has_loop => CellKind::LoopWrapper,
            _ => CellKind::Plain,
        };
        let mut free = Vec::new();
        collect_slots(&body, &mut free);
        self.cells.insert(
            id,
            Cell {
                id,
                parent,
                origin,
                context,
                kind,
                body,
                free_vars: free,
            },
        );
    }

    /// Slot for `name` if it resolves to a redirected local.
    fn resolve(&self, name: &str) -> Option<String> {
        for l in self.levels.iter().rev() {
            if l.names.contains(name) {
                return l.redirect.then(|| qualified(name, l.qual.as_deref()));
            }
        }
        None
    }

    /// Name a binding statement stores under in a cell frame.
    fn binding(&self, name: &str) -> String {
        self.resolve(name).unwrap_or_else(|| name.to_string())
    }

    fn expr(&mut self, e: &Expr) -> Expr {
        match e {
            Expr::Name(n) => match self.resolve(n) {
                Some(slot) => Expr::Ns(slot),
                None => e.clone(),
            },
            Expr::Lambda(l) => {
                let params = self.params(&l.params);
                self.levels.push(Level {
                    names: l.params.iter().map(|p| p.name.clone()).collect(),
                    qual: None,
                    redirect: false,
                });
                let body = self.expr(&l.body);
                self.levels.pop();
                Expr::Lambda(Arc::new(Lambda { params, body }))
            }
            Expr::ListComp { elt, generators } => {
                let mut names = Vec::new();
                for g in generators {
                    target_names(&g.target, &mut names);
                }
                let first = generators.first().map(|g| self.expr(&g.iter));
                self.levels.push(Level {
                    names: names.into_iter().collect(),
                    qual: None,
                    redirect: false,
                });
                let gens = generators
                    .iter()
                    .enumerate()
                    .map(|(i, g)| Comprehension {
                        target: self.expr(&g.target),
                        iter: if i == 0 {
                            first.clone().unwrap()
                        } else {
                            self.expr(&g.iter)
                        },
                        ifs: g.ifs.iter().map(|c| self.expr(c)).collect(),
                    })
                    .collect();
                let elt = self.expr(elt);
                self.levels.pop();
                Expr::ListComp {
                    elt: Box::new(elt),
                    generators: gens,
                }
            }
            other => rebuild(other, &mut |c| self.expr(c)),
        }
    }

    fn params(&mut self, params: &[Param]) -> Vec<Param> {
        params
            .iter()
            .map(|p| Param {
                name: p.name.clone(),
                default: p.default.as_ref().map(|d| self.expr(d)),
            })
            .collect()
    }

    fn exprs(&mut self, es: &[Expr]) -> Vec<Expr> {
        es.iter().map(|e| self.expr(e)).collect()
    }

    fn block(
        &mut self,
        block: &Block,
        prefix: &StatementPath,
        kind: BlockKind,
        ctx: Ctx,
    ) -> Result<Block, VaccinationError> {
        let mut out = Vec::with_capacity(block.len());
        for (i, stmt) in block.iter().enumerate() {
            let path = prefix.child(kind, i as u32);
            out.push(self.stmt(stmt, &path, ctx)?);
        }
        Ok(out)
    }

    fn stmt(&mut self, stmt: &Stmt, path: &StatementPath, ctx: Ctx) -> Result<Stmt, VaccinationError> {
        Ok(match stmt {
            Stmt::Expr(e) => Stmt::Expr(self.expr(e)),
            Stmt::Assign { targets, value } => Stmt::Assign {
                targets: self.exprs(targets),
                value: self.expr(value),
            },
            Stmt::AugAssign { target, op, value } => Stmt::AugAssign {
                target: self.expr(target),
                op: *op,
                value: self.expr(value),
            },
            Stmt::If { test, body, orelse } => Stmt::If {
                test: self.expr(test),
                body: self.block(body, path, BlockKind::BranchThen, ctx)?,
                orelse: self.block(orelse, path, BlockKind::BranchElse, ctx)?,
            },
            Stmt::While { test, body, orelse } => Stmt::While {
                test: self.expr(test),
                body: self.loop_body(body, path, ctx)?,
                orelse: self.block(orelse, path, BlockKind::LoopElse, ctx)?,
            },
            Stmt::For {
                target,
                iter,
                body,
                orelse,
            } => Stmt::For {
                target: self.expr(target),
                iter: self.expr(iter),
                body: self.loop_body(body, path, ctx)?,
                orelse: self.block(orelse, path, BlockKind::LoopElse, ctx)?,
            },
            Stmt::Break if ctx.cf == Some(BarrierContext::Loop) => Stmt::Signal(IndicatorKind::Break, None),
            Stmt::Continue if ctx.cf == Some(BarrierContext::Loop) => Stmt::Signal(IndicatorKind::Continue, None),
            Stmt::Return(v) if ctx.cf.is_some() => {
                Stmt::Signal(IndicatorKind::Return, v.as_ref().map(|v| self.expr(v)))
            }
            Stmt::Return(v) => Stmt::Return(v.as_ref().map(|v| self.expr(v))),
            Stmt::Break | Stmt::Continue | Stmt::Pass => stmt.clone(),
            Stmt::Raise(e) => Stmt::Raise(e.as_ref().map(|e| self.expr(e))),
            Stmt::Try {
                body,
                handlers,
                orelse,
                finalbody,
            } => {
                let body = self.block(body, path, BlockKind::TryBody, ctx)?;
                let mut hs = Vec::with_capacity(handlers.len());
                for (i, h) in handlers.iter().enumerate() {
                    hs.push(Handler {
                        kind: h.kind.as_ref().map(|k| self.expr(k)),
                        name: h.name.as_ref().map(|n| self.binding(n)),
                        body: self.block(&h.body, path, BlockKind::Handler(i as u16), ctx)?,
                    });
                }
                Stmt::Try {
                    body,
                    handlers: hs,
                    orelse: self.block(orelse, path, BlockKind::TryElse, ctx)?,
                    finalbody: self.block(finalbody, path, BlockKind::Finally, ctx)?,
                }
            }
            Stmt::With { item, target, body } => Stmt::With {
                item: self.expr(item),
                target: target.as_ref().map(|t| self.expr(t)),
                body: self.block(body, path, BlockKind::WithBody, ctx)?,
            },
            Stmt::FuncDef(def) => self.funcdef(def, path, ctx)?,
            Stmt::Assert { test, msg } => Stmt::Assert {
                test: self.expr(test),
                msg: msg.as_ref().map(|m| self.expr(m)),
            },
            Stmt::Del(targets) => Stmt::Del(self.exprs(targets)),
            Stmt::Import { module, alias } => {
                let head = module.split('.').next().unwrap_or(module);
                let bound = self.binding(alias.as_deref().unwrap_or(head));
                Stmt::Import {
                    module: module.clone(),
                    alias: (bound != head).then_some(bound),
                }
            }
            Stmt::ImportFrom { module, names } => Stmt::ImportFrom {
                module: module.clone(),
                names: names
                    .iter()
                    .map(|(n, a)| {
                        let bound = self.binding(a.as_deref().unwrap_or(n));
                        (n.clone(), (&bound != n).then_some(bound))
                    })
                    .collect(),
            },
            Stmt::Barrier(_) | Stmt::CellDef(_) | Stmt::Signal(..) => {
                return Err(VaccinationError::AlreadyVaccinated(path.to_string()))
            }
        })
    }

    fn loop_body(&mut self, body: &Block, path: &StatementPath, ctx: Ctx) -> Result<Block, VaccinationError> {
        if self.granularity == Granularity::Statements || ctx.cf.is_none() {
            return self.block(body, path, BlockKind::LoopBody, ctx);
        }
        let id = self.cell_id(path);
        let inner = Ctx {
            cell: id,
            cf: Some(BarrierContext::Loop),
        };
        let cell_body = self.block(body, path, BlockKind::LoopBody, inner)?;
        self.finish_cell(id, Some(ctx.cell), path.clone(), BarrierContext::Loop, cell_body);
        Ok(vec![Stmt::Barrier(Barrier {
            cell: id,
            context: BarrierContext::Loop,
        })])
    }

    fn funcdef(&mut self, def: &Arc<FuncDef>, path: &StatementPath, ctx: Ctx) -> Result<Stmt, VaccinationError> {
        let decorators = self.exprs(&def.decorators);
        let params = self.params(&def.params);
        let bind = self.binding(&def.name);
        let mut names = def.params.iter().map(|p| p.name.clone()).collect::<Vec<_>>();
        bound_names(&def.body, &mut names);
        let cells = self.granularity == Granularity::Cells && ctx.cf.is_some();
        let qual = match self
            .levels
            .iter()
            .rev()
            .find_map(|l| l.qual.clone().filter(|_| l.redirect))
        {
            Some(q) => format!("{q}/{}", def.name),
            None => def.name.clone(),
        };
        if cells {
            for n in &names {
                let slot = qualified(n, Some(&qual));
                if self.resolve(n).is_some() {
                    self.renames.push(Rename {
                        function: def.name.clone(),
                        name: n.clone(),
                        slot: slot.clone(),
                    });
                }
                self.add_slot(slot);
            }
        }
        self.levels.push(Level {
            names: names.into_iter().collect(),
            qual: Some(qual.clone()),
            redirect: cells,
        });
        let result = if cells {
            let id = self.cell_id(path);
            let inner = Ctx {
                cell: id,
                cf: Some(BarrierContext::FuncDef),
            };
            let body = self.block(&def.body, path, BlockKind::DefBody, inner);
            body.map(|body| {
                self.finish_cell(id, Some(ctx.cell), path.clone(), BarrierContext::FuncDef, body);
                Stmt::CellDef(Arc::new(CellDef {
                    name: def.name.clone(),
                    slots: def.params.iter().map(|p| qualified(&p.name, Some(&qual))).collect(),
                    params,
                    decorators,
                    barrier: Barrier {
                        cell: id,
                        context: BarrierContext::FuncDef,
                    },
                    bind,
                }))
            })
        } else {
            let inner = Ctx {
                cell: ctx.cell,
                cf: None,
            };
            self.block(&def.body, path, BlockKind::DefBody, inner).map(|body| {
                Stmt::FuncDef(Arc::new(FuncDef {
                    name: def.name.clone(),
                    params,
                    body,
                    decorators,
                }))
            })
        };
        self.levels.pop();
        result
    }
}

fn target_names(e: &Expr, out: &mut Vec<String>) {
    match e {
        Expr::Name(n) => out.push(n.clone()),
        Expr::Tuple(items) | Expr::List(items) => items.iter().for_each(|i| target_names(i, out)),
        _ => {}
    }
}

fn collect_slots(body: &Block, out: &mut Vec<String>) {
    let mut add = |s: &str| {
        if !out.iter().any(|x| x == s) {
            out.push(s.to_string());
        }
    };
    walk_block(body, &mut |s| {
        if let Stmt::CellDef(d) = s {
            add(&d.bind);
        }
        stmt_exprs(s, &mut |e| {
            walk_expr(e, &mut |x| {
                if let Expr::Ns(n) = x {
                    add(n);
                }
            })
        });
    });
}

/// Rebuilds `e` with `f` applied to each direct child expression.
pub fn rebuild(e: &Expr, f: &mut dyn FnMut(&Expr) -> Expr) -> Expr {
    let mut bx = |x: &Expr| Box::new(f(x));
    match e {
        Expr::Const(_) | Expr::Name(_) | Expr::Ns(_) => e.clone(),
        Expr::List(items) => Expr::List(items.iter().map(|x| *bx(x)).collect()),
        Expr::Tuple(items) => Expr::Tuple(items.iter().map(|x| *bx(x)).collect()),
        Expr::Dict(pairs) => Expr::Dict(pairs.iter().map(|(k, v)| (*bx(k), *bx(v))).collect()),
        Expr::Attr(o, n) => Expr::Attr(bx(o), n.clone()),
        Expr::Index(o, i) => Expr::Index(bx(o), bx(i)),
        Expr::Slice(a, b, c) => Expr::Slice(
            a.as_ref().map(|x| bx(x)),
            b.as_ref().map(|x| bx(x)),
            c.as_ref().map(|x| bx(x)),
        ),
        Expr::Call { func, args, kwargs } => Expr::Call {
            func: bx(func),
            args: args.iter().map(|x| *bx(x)).collect(),
            kwargs: kwargs.iter().map(|(k, v)| (k.clone(), *bx(v))).collect(),
        },
        Expr::Unary(op, x) => Expr::Unary(*op, bx(x)),
        Expr::Binary(op, a, b) => Expr::Binary(*op, bx(a), bx(b)),
        Expr::Compare(first, rest) => Expr::Compare(bx(first), rest.iter().map(|(op, x)| (*op, *bx(x))).collect()),
        Expr::Bool(op, a, b) => Expr::Bool(*op, bx(a), bx(b)),
        Expr::IfExp { test, body, orelse } => Expr::IfExp {
            test: bx(test),
            body: bx(body),
            orelse: bx(orelse),
        },
        Expr::Lambda(l) => Expr::Lambda(Arc::new(Lambda {
            params: l
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    default: p.default.as_ref().map(|d| *bx(d)),
                })
                .collect(),
            body: *bx(&l.body),
        })),
        Expr::ListComp { elt, generators } => Expr::ListComp {
            elt: bx(elt),
            generators: generators
                .iter()
                .map(|g| Comprehension {
                    target: *bx(&g.target),
                    iter: *bx(&g.iter),
                    ifs: g.ifs.iter().map(|c| *bx(c)).collect(),
                })
                .collect(),
        },
        Expr::Yield(x) => Expr::Yield(x.as_ref().map(|x| bx(x))),
        Expr::Await(x) => Expr::Await(bx(x)),
    }
}

// ----- inverse ---------------------------------------------------------

/// Inlines the cells back into one function body, undoing redirection.
/// `reconstruct(decompose(f)) == f.body` for every supported function.
pub fn reconstruct(tree: &CellTree) -> Block {
    inline_block(tree, &tree.root().body)
}

fn plain(e: &Expr) -> Expr {
    match e {
        Expr::Ns(n) => Expr::Name(unqualified(n).to_string()),
        other => rebuild(other, &mut plain),
    }
}

fn inline_block(tree: &CellTree, block: &Block) -> Block {
    block.iter().map(|s| inline_stmt(tree, s)).collect()
}

fn cell_body(tree: &CellTree, body: &Block) -> Block {
    match body.as_slice() {
        [Stmt::Barrier(b)] => tree.get(b.cell).map_or_else(Vec::new, |c| inline_block(tree, &c.body)),
        _ => inline_block(tree, body),
    }
}

fn inline_stmt(tree: &CellTree, s: &Stmt) -> Stmt {
    let ex = |es: &[Expr]| es.iter().map(plain).collect::<Vec<_>>();
    let name = |n: &str| unqualified(n).to_string();
    match s {
        Stmt::Expr(e) => Stmt::Expr(plain(e)),
        Stmt::Assign { targets, value } => Stmt::Assign {
            targets: ex(targets),
            value: plain(value),
        },
        Stmt::AugAssign { target, op, value } => Stmt::AugAssign {
            target: plain(target),
            op: *op,
            value: plain(value),
        },
        Stmt::If { test, body, orelse } => Stmt::If {
            test: plain(test),
            body: inline_block(tree, body),
            orelse: inline_block(tree, orelse),
        },
        Stmt::While { test, body, orelse } => Stmt::While {
            test: plain(test),
            body: cell_body(tree, body),
            orelse: inline_block(tree, orelse),
        },
        Stmt::For {
            target,
            iter,
            body,
            orelse,
        } => Stmt::For {
            target: plain(target),
            iter: plain(iter),
            body: cell_body(tree, body),
            orelse: inline_block(tree, orelse),
        },
        Stmt::Signal(IndicatorKind::Break, _) => Stmt::Break,
        Stmt::Signal(IndicatorKind::Continue, _) => Stmt::Continue,
        Stmt::Signal(_, v) => Stmt::Return(v.as_ref().map(plain)),
        Stmt::Return(v) => Stmt::Return(v.as_ref().map(plain)),
        Stmt::Raise(e) => Stmt::Raise(e.as_ref().map(plain)),
        Stmt::Try {
            body,
            handlers,
            orelse,
            finalbody,
        } => Stmt::Try {
            body: inline_block(tree, body),
            handlers: handlers
                .iter()
                .map(|h| Handler {
                    kind: h.kind.as_ref().map(plain),
                    name: h.name.as_deref().map(name),
                    body: inline_block(tree, &h.body),
                })
                .collect(),
            orelse: inline_block(tree, orelse),
            finalbody: inline_block(tree, finalbody),
        },
        Stmt::With { item, target, body } => Stmt::With {
            item: plain(item),
            target: target.as_ref().map(plain),
            body: inline_block(tree, body),
        },
        Stmt::FuncDef(def) => Stmt::FuncDef(Arc::new(FuncDef {
            name: def.name.clone(),
            params: unparams(&def.params),
            body: inline_block(tree, &def.body),
            decorators: ex(&def.decorators),
        })),
        Stmt::CellDef(def) => Stmt::FuncDef(Arc::new(FuncDef {
            name: def.name.clone(),
            params: unparams(&def.params),
            body: tree
                .get(def.barrier.cell)
                .map_or_else(Vec::new, |c| inline_block(tree, &c.body)),
            decorators: ex(&def.decorators),
        })),
        Stmt::Assert { test, msg } => Stmt::Assert {
            test: plain(test),
            msg: msg.as_ref().map(plain),
        },
        Stmt::Del(targets) => Stmt::Del(ex(targets)),
        Stmt::Import { module, alias } => {
            let head = module.split('.').next().unwrap_or(module);
            let a = alias.as_deref().map(name);
            Stmt::Import {
                module: module.clone(),
                alias: a.filter(|a| a != head),
            }
        }
        Stmt::ImportFrom { module, names } => Stmt::ImportFrom {
            module: module.clone(),
            names: names
                .iter()
                .map(|(n, a)| (n.clone(), a.as_deref().map(name).filter(|a| a != n)))
                .collect(),
        },
        Stmt::Break | Stmt::Continue | Stmt::Pass | Stmt::Barrier(_) => s.clone(),
    }
}

fn unparams(params: &[Param]) -> Vec<Param> {
    params
        .iter()
        .map(|p| Param {
            name: p.name.clone(),
            default: p.default.as_ref().map(plain),
        })
        .collect()
}

// ----- emission and entry points ---------------------------------------

/// Source text of the vaccinated function: one definition per cell followed
/// by the entry wrapper.
pub fn emit(f: &SourceFunction, d: &Decomposition) -> String {
    let mut out = String::new();
    for cell in d.tree.cells.values().rev() {
        let label = match cell.context {
            BarrierContext::Root => "body".to_string(),
            BarrierContext::Loop => format!("loop at {}", cell.origin),
            BarrierContext::FuncDef => format!("def at {}", cell.origin),
        };
        out.push_str(&format!("# cell {} ({:?}, {label})\n", cell.id, cell.kind));
        out.push_str(&format!("def __cell_{}__(__ns__):\n", cell.id));
        let body = if cell.body.is_empty() {
            vec![Stmt::Pass]
        } else {
            cell.body.clone()
        };
        for line in unparse_block(&body).lines() {
            out.push_str("    ");
            out.push_str(line);
            out.push('\n');
        }
        out.push('\n');
    }
    let params: Vec<String> = f.params.iter().map(|p| p.name.clone()).collect();
    let bound: Vec<String> = params.iter().map(|p| format!("{}: {p}", quote_str(p))).collect();
    let header = unparse_block(&[Stmt::FuncDef(Arc::new(FuncDef {
        name: f.name.clone(),
        params: f.params.clone(),
        body: vec![Stmt::Pass],
        decorators: f.decorators.clone(),
    }))]);
    let header = header.trim_end().trim_end_matches("pass").trim_end();
    out.push_str(header);
    out.push('\n');
    out.push_str(&format!(
        "    __ns__ = __insitu__.register({}, {{{}}})\n",
        quote_str(&f.name),
        bound.join(", ")
    ));
    let root = unparse_block(&[Stmt::Barrier(Barrier {
        cell: ROOT_CELL,
        context: BarrierContext::Root,
    })]);
    for line in root.lines() {
        out.push_str("    ");
        out.push_str(line);
        out.push('\n');
    }
    out
}

/// Wraps a script function value so calls run through barriers.
pub fn vaccinate_value(interp: &mut Interp, f: &Value) -> Result<Value, Flow> {
    let Value::Function(func) = f else {
        return Err(crate::lang::value::type_error(format!(
            "vaccinate() expects a function, not {}",
            f.type_name()
        )));
    };
    if func.vaccinated.is_some() {
        return Ok(f.clone());
    }
    let FnBody::Def(def) = &func.body else {
        return Err(crate::lang::value::type_error("only def functions can be vaccinated"));
    };
    let source = SourceFunction::from_def(def, unparse_block(&[Stmt::FuncDef(def.clone())]));
    let vf = VaccinatedFn::new(source, interp.host.granularity, func.globals.clone())
        .map_err(|e| Flow::error("VaccinationError", e.to_string()))?;
    Ok(Value::Function(Rc::new(Function {
        name: func.name.clone(),
        body: FnBody::Def(def.clone()),
        defaults: func.defaults.clone(),
        closure: None,
        globals: func.globals.clone(),
        locals: Rc::default(),
        act: None,
        vaccinated: Some(Rc::new(vf)),
    })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::parse_function;

    const SRC: &str = r#"
def train(n):
    total = 0
    for i in range(n):
        if i == 3:
            continue
        def scale(x):
            y = x * 2
            return y
        for j in range(2):
            total += scale(j)
            if total > 100:
                break
        else:
            total -= 1
    return total
"#;

    #[test]
    fn loops_and_defs_become_cells() {
        let f = parse_function(SRC, "train").unwrap();
        let d = decompose(&f, Granularity::Cells).unwrap();
        assert_eq!(d.tree.cells.len(), 4);
        let outer = d
            .tree
            .get(d.tree.by_origin(&"body[1]".parse().unwrap()).unwrap())
            .unwrap();
        assert_eq!(outer.kind, CellKind::LoopWrapper);
        assert_eq!(outer.parent, Some(ROOT_CELL));
        let text = unparse_block(&outer.body);
        assert!(
            text.contains("return 'CONTINUE'") || text.contains("CONTINUE"),
            "{text}"
        );
        assert!(d.slots.contains(&"y@scale".to_string()));
        let inner = d.tree.by_origin(&"body[1]/loop[2]".parse().unwrap()).unwrap();
        assert_eq!(d.tree.get(inner).unwrap().kind, CellKind::Plain);
        assert_eq!(d.tree.owner(&"body[1]/loop[2]/loop[1]/then[0]".parse().unwrap()), inner);
        assert_eq!(d.tree.owner(&"body[1]/loop[2]/loop-else[0]".parse().unwrap()), outer.id);
    }

    #[test]
    fn reconstruct_inverts_decompose() {
        let f = parse_function(SRC, "train").unwrap();
        for g in [Granularity::Cells, Granularity::Statements] {
            let d = decompose(&f, g).unwrap();
            assert_eq!(reconstruct(&d.tree), f.body);
        }
    }

    #[test]
    fn generators_are_rejected() {
        let f = parse_function("def g(n):\n    for i in range(n):\n        yield i\n", "g").unwrap();
        assert_eq!(
            decompose(&f, Granularity::Cells),
            Err(VaccinationError::Generator("g".into()))
        );
    }

    #[test]
    fn aligned_ids_are_reused() {
        let f = parse_function(SRC, "train").unwrap();
        let d = decompose(&f, Granularity::Cells).unwrap();
        let loop_id = d.tree.by_origin(&"body[1]".parse().unwrap()).unwrap();
        let g = parse_function(&SRC.replace("total = 0", "total = 0\n    seen = 1"), "train").unwrap();
        let hint = |p: &StatementPath| (p.to_string() == "body[2]").then_some(loop_id);
        let d2 = decompose_aligned(&g, Granularity::Cells, &hint, d.tree.max_id() + 1).unwrap();
        assert_eq!(d2.tree.by_origin(&"body[2]".parse().unwrap()), Some(loop_id));
    }

    #[test]
    fn emitted_source_names_every_cell() {
        let f = parse_function(SRC, "train").unwrap();
        let d = decompose(&f, Granularity::Cells).unwrap();
        let text = emit(&f, &d);
        for id in d.tree.cells.keys() {
            assert!(text.contains(&format!("def __cell_{id}__(__ns__):")), "{text}");
        }
        assert!(text.contains("__insitu__.register('train', {'n': n})"));
    }
}
