//! Activations, barriers and in-place restart.
//!
//! Every call of a vaccinated function registers an [`Activation`] holding
//! the namespace table. Cells run inside barriers; an exception escaping a
//! cell is handed to the host's [`RecoveryHandler`], which may ask for the
//! cell (or a live ancestor cell) to continue from a statement path.

use std::cell::{Cell as StdCell, RefCell};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use indexmap::IndexMap;
use serde::Serialize;

use crate::lang::ast::*;
use crate::lang::interp::{annotate, bind_args, exc_matches, CellCtx, Frame, Interp, Locals, Scope};
use crate::lang::value::*;
use crate::source::{diff_functions, CodeDiff, EditKind, SourceFunction, StatementPath};
use crate::vaccinator::{self, decompose, Cell, CellTree, Decomposition, Granularity, VaccinationError, ROOT_CELL};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

fn stale() -> Flow {
    Flow::error("StaleActivationError", "the activation has already returned")
}

/// Per-activation storage of the entry function's locals. A slot that is
/// declared but holds no value reads as an unbound local.
pub struct NamespaceTable {
    slots: RefCell<IndexMap<String, Option<Value>>>,
    live: StdCell<bool>,
}

impl NamespaceTable {
    pub fn new(declared: &[String]) -> NamespaceTable {
        NamespaceTable {
            slots: RefCell::new(declared.iter().map(|s| (s.clone(), None)).collect()),
            live: StdCell::new(true),
        }
    }

    pub fn is_live(&self) -> bool {
        self.live.get()
    }

    pub fn assign(&self, name: &str, v: Value) -> Result<(), Flow> {
        if !self.live.get() {
            return Err(stale());
        }
        let mut slots = self.slots.borrow_mut();
        match slots.get_mut(name) {
            Some(slot) => *slot = Some(v),
            None => {
                slots.insert(name.to_string(), Some(v));
            }
        }
        Ok(())
    }

    /// Alias of [`assign`](Self::assign) matching the table's public vocabulary.
    pub fn bind(&self, name: &str, v: Value) -> Result<(), Flow> {
        self.assign(name, v)
    }

    pub fn resolve(&self, name: &str) -> Result<Value, Flow> {
        if !self.live.get() {
            return Err(stale());
        }
        match self.slots.borrow().get(name) {
            Some(Some(v)) => Ok(v.clone()),
            _ => Err(Flow::error(
                "UnboundLocalError",
                format!(
                    "local variable '{}' referenced before assignment",
                    vaccinator::unqualified(name)
                ),
            )),
        }
    }

    pub fn unbind(&self, name: &str) -> Result<(), Flow> {
        self.resolve(name)?;
        if let Some(slot) = self.slots.borrow_mut().get_mut(name) {
            *slot = None;
        }
        Ok(())
    }

    /// Slot state without raising: `None` if undeclared, `Some(None)` if unbound.
    pub fn peek(&self, name: &str) -> Option<Option<Value>> {
        if !self.live.get() {
            return None;
        }
        self.slots.borrow().get(name).cloned()
    }

    pub fn has_slot(&self, name: &str) -> bool {
        self.live.get() && self.slots.borrow().contains_key(name)
    }

    pub fn snapshot(&self) -> Vec<(String, Option<Value>)> {
        self.slots
            .borrow()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Invalidates the table; idempotent.
    pub fn clean(&self) {
        self.live.set(false);
        self.slots.borrow_mut().clear();
    }
}

/// The current code of a vaccinated function, replaced wholesale by surgery.
pub struct Code {
    pub source: SourceFunction,
    pub decomposition: Decomposition,
}

pub struct VaccinatedFn {
    pub name: String,
    pub granularity: Granularity,
    pub globals: Rc<Globals>,
    generation: StdCell<u64>,
    code: RefCell<Code>,
    /// `history[g]` maps paths of generation `g` to generation `g + 1`.
    history: RefCell<Vec<CodeDiff>>,
}

/// Result of installing new code.
pub struct Installed {
    pub diff: CodeDiff,
    pub old_tree: CellTree,
    pub new_tree: CellTree,
}

impl VaccinatedFn {
    pub fn new(
        source: SourceFunction,
        granularity: Granularity,
        globals: Rc<Globals>,
    ) -> Result<Self, VaccinationError> {
        let decomposition = decompose(&source, granularity)?;
        Ok(VaccinatedFn {
            name: source.name.clone(),
            granularity,
            globals,
            generation: StdCell::new(0),
            code: RefCell::new(Code { source, decomposition }),
            history: RefCell::new(Vec::new()),
        })
    }

    pub fn generation(&self) -> u64 {
        self.generation.get()
    }

    pub fn cell(&self, id: u32) -> Option<Rc<Cell>> {
        self.code.borrow().decomposition.tree.get(id).cloned()
    }

    pub fn source(&self) -> SourceFunction {
        self.code.borrow().source.clone()
    }

    pub fn tree(&self) -> CellTree {
        self.code.borrow().decomposition.tree.clone()
    }

    pub fn slots(&self) -> Vec<String> {
        self.code.borrow().decomposition.slots.clone()
    }

    pub fn emit(&self) -> String {
        let code = self.code.borrow();
        vaccinator::emit(&code.source, &code.decomposition)
    }

    /// Re-vaccinates `source` and makes it current. Cells matched to an old
    /// cell keep its id; cells whose code did not change keep the very same
    /// object, so frames running them are not disturbed.
    pub fn install(&self, source: SourceFunction) -> Result<Installed, VaccinationError> {
        let (diff, old_tree) = {
            let code = self.code.borrow();
            if code.source.param_names() != source.param_names() {
                return Err(VaccinationError::Unsupported(format!(
                    "surgery may not change the parameters of '{}'",
                    self.name
                )));
            }
            (diff_functions(&code.source, &source), code.decomposition.tree.clone())
        };
        let aligned = diff.aligned_paths();
        let hint = |p: &StatementPath| {
            let (old, _) = aligned.iter().find(|(_, n)| n == p)?;
            old_tree.by_origin(old)
        };
        let mut d = vaccinator::decompose_aligned(&source, self.granularity, &hint, old_tree.max_id() + 1)?;
        for (id, cell) in d.tree.cells.iter_mut() {
            if let Some(old) = old_tree.get(*id) {
                if **old == **cell {
                    *cell = old.clone();
                }
            }
        }
        let new_tree = d.tree.clone();
        self.history.borrow_mut().push(diff.clone());
        *self.code.borrow_mut() = Code {
            source,
            decomposition: d,
        };
        self.generation.set(self.generation.get() + 1);
        Ok(Installed {
            diff,
            old_tree,
            new_tree,
        })
    }

    /// Maps a function-level path of generation `gen` to the current code.
    /// Returns the path and how it was matched.
    pub fn map_forward(&self, gen: u64, old: &StatementPath) -> (StatementPath, Mapped) {
        let history = self.history.borrow();
        let mut p = old.clone();
        let mut how = Mapped::Exact;
        for diff in history.iter().skip(gen as usize) {
            let (np, exact) = diff.map_path(&p);
            if !exact {
                let depth = np.len().min(p.len());
                let prefix = StatementPath::from_steps(p.steps[..depth].iter().copied());
                let replaced = diff
                    .edits
                    .iter()
                    .any(|e| e.kind == EditKind::Modified && e.old_path.as_ref() == Some(&prefix));
                how = if replaced { Mapped::Replaced } else { Mapped::Gap };
            }
            p = np;
        }
        (p, how)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mapped {
    Exact,
    /// The statement was replaced by the statement at the returned path.
    Replaced,
    /// The statement is gone; the path is the position it occupied.
    Gap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LiveFrame {
    pub id: u64,
    pub cell: u32,
}

pub struct Activation {
    pub id: u64,
    pub table: NamespaceTable,
    pub vf: Rc<VaccinatedFn>,
    /// Live cell frames, outermost first.
    pub frames: RefCell<Vec<LiveFrame>>,
}

impl Activation {
    /// Registers a new activation with its parameters bound.
    pub fn register(vf: Rc<VaccinatedFn>, params: &[(String, Value)]) -> Rc<Activation> {
        let table = NamespaceTable::new(&vf.slots());
        for (k, v) in params {
            let _ = table.assign(k, v.clone());
        }
        Rc::new(Activation {
            id: fresh_id(),
            table,
            vf,
            frames: RefCell::new(Vec::new()),
        })
    }

    /// Deep copy of the bound slots keyed by their user-facing names, for
    /// read-only inspection.
    pub fn snapshot_scope(&self) -> Rc<Scope> {
        let scope = Scope::new(Rc::default(), None);
        for (k, v) in self.table.snapshot() {
            if let (false, Some(v)) = (k.contains('@'), v) {
                scope.set(&k, v.deep_copy());
            }
        }
        scope
    }

    pub fn live_frames(&self) -> Vec<LiveFrame> {
        self.frames.borrow().clone()
    }
}

/// A crashed cell frame and its live ancestors, innermost first.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct FrameInfo {
    pub frame: u64,
    pub cell: u32,
    /// Current statement, relative to the cell; empty when unknown.
    pub path: StatementPath,
}

/// Everything a recovery handler is told about a crash.
pub struct CrashSite {
    pub act: Rc<Activation>,
    pub frames: Vec<FrameInfo>,
    pub exception: Exception,
    /// Intercepted at the statement without decomposition.
    pub inline: bool,
}

impl CrashSite {
    /// Function-level path of the crashing statement.
    pub fn crash_path(&self) -> StatementPath {
        let f = &self.frames[0];
        match self.act.vf.cell(f.cell) {
            Some(c) => c.full(&f.path),
            None => f.path.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    /// Continue live frame `frame` at `path`, relative to its cell.
    Retry {
        frame: u64,
        path: StatementPath,
    },
    Abort,
}

pub trait RecoveryHandler {
    fn on_crash(&mut self, interp: &mut Interp, site: &CrashSite) -> Decision;
}

#[derive(Default)]
pub struct Host {
    pub handler: Option<Box<dyn RecoveryHandler>>,
    pub granularity: Granularity,
    /// Activations currently executing, innermost last.
    pub activations: Vec<Rc<Activation>>,
}

struct FrameGuard<'a> {
    act: &'a Activation,
    id: u64,
}

impl Drop for FrameGuard<'_> {
    fn drop(&mut self) {
        let mut frames = self.act.frames.borrow_mut();
        if let Some(i) = frames.iter().rposition(|f| f.id == self.id) {
            frames.remove(i);
        }
    }
}

// ----- calls -----------------------------------------------------------

pub fn call_vaccinated(
    interp: &mut Interp,
    func: &Rc<Function>,
    vf: &Rc<VaccinatedFn>,
    args: Vec<Value>,
    kwargs: Kwargs,
) -> Result<Value, Flow> {
    let params = vf.source().params;
    let values = bind_args(&func.name, &params, &func.defaults, args, kwargs)?;
    let bound: Vec<(String, Value)> = params.iter().map(|p| p.name.clone()).zip(values).collect();
    let act = Activation::register(vf.clone(), &bound);
    interp.host.activations.push(act.clone());
    let r = run_barrier(interp, &act, ROOT_CELL);
    interp.host.activations.retain(|a| !Rc::ptr_eq(a, &act));
    act.table.clean();
    match r {
        Ok(Indicator::Return(v)) => Ok(v),
        Ok(_) => Ok(Value::None),
        Err(Flow::Unwind(u)) => Err(Flow::error(
            "RuntimeError",
            format!("restart target frame {} is not live", u.frame_id),
        )),
        Err(e) => Err(e),
    }
}

pub fn exec_cell_def(interp: &mut Interp, frame: &Frame, def: &std::sync::Arc<CellDef>) -> Result<(), Flow> {
    let decorators = def
        .decorators
        .iter()
        .map(|d| interp.eval(d, frame))
        .collect::<Result<Vec<_>, _>>()?;
    let defaults = interp.eval_defaults(&def.params, frame)?;
    let mut f = Value::Function(Rc::new(Function {
        name: def.name.clone(),
        body: FnBody::Cell(def.clone()),
        defaults,
        closure: None,
        globals: frame.globals.clone(),
        locals: Rc::default(),
        act: frame.act.clone(),
        vaccinated: None,
    }));
    for d in decorators.iter().rev() {
        f = interp.call(d, vec![f], Vec::new())?;
    }
    frame.act()?.table.assign(&def.bind, f)
}

pub fn call_cell_def(
    interp: &mut Interp,
    func: &Rc<Function>,
    def: &CellDef,
    args: Vec<Value>,
    kwargs: Kwargs,
) -> Result<Value, Flow> {
    let act = func.act.clone().ok_or_else(stale)?;
    if !act.table.is_live() {
        return Err(stale());
    }
    let values = bind_args(&func.name, &def.params, &func.defaults, args, kwargs)?;
    for (slot, v) in def.slots.iter().zip(values) {
        act.table.assign(slot, v)?;
    }
    match run_barrier(interp, &act, def.barrier.cell)? {
        Indicator::Return(v) => Ok(v),
        _ => Ok(Value::None),
    }
}

/// A loop barrier statement: runs the body cell and applies its indicator.
pub fn exec_barrier(interp: &mut Interp, frame: &Frame, b: &Barrier) -> Result<(), Flow> {
    let act = frame.act()?.clone();
    match run_barrier(interp, &act, b.cell)? {
        Indicator::Normal | Indicator::Continue => Ok(()),
        Indicator::Break => Err(Flow::Break),
        ind @ Indicator::Return(_) => Err(Flow::Signal(ind)),
    }
}

fn cell_frame(act: &Rc<Activation>, code: Rc<Cell>) -> Frame {
    let mut frame = Frame::new(Locals::Cell, act.vf.globals.clone(), Some(act.clone()));
    if act.vf.granularity == Granularity::Statements {
        frame.path = Some(RefCell::new(Vec::new()));
    }
    frame.cell = Some(CellCtx {
        code,
        generation: StdCell::new(act.vf.generation()),
    });
    frame
}

fn structure_error(msg: String) -> Flow {
    Flow::error("StructureChangeError", msg)
}

/// Runs one cell invocation to its indicator, recovering crashes in place.
pub fn run_barrier(interp: &mut Interp, act: &Rc<Activation>, cell_id: u32) -> Result<Indicator, Flow> {
    let id = fresh_id();
    act.frames.borrow_mut().push(LiveFrame { id, cell: cell_id });
    let _guard = FrameGuard { act, id };
    let mut restart: Option<StatementPath> = None;
    loop {
        let code = act
            .vf
            .cell(cell_id)
            .ok_or_else(|| structure_error(format!("cell {cell_id} no longer exists")))?;
        let frame = cell_frame(act, code.clone());
        let r = match restart.take() {
            None => interp.exec_block(&code.body, code.body_kind(), &frame),
            Some(p) => exec_from(interp, &frame, &code.body, code.body_kind(), &p.steps),
        };
        match r {
            Ok(()) => return Ok(Indicator::Normal),
            Err(Flow::Signal(ind)) => return Ok(ind),
            Err(Flow::Raise(mut e)) => {
                if !interceptable(interp, &e) || handled_by_user(interp, act, id, &e) {
                    e.close_frame(&act.vf.name, Some(cell_id));
                    return Err(Flow::Raise(e));
                }
                let path = e.local_path();
                match consult(interp, act, id, path, &e, false) {
                    Decision::Retry { frame, path } if frame == id => restart = Some(path),
                    Decision::Retry { frame, path } => {
                        return Err(Flow::Unwind(Box::new(Unwind { frame_id: frame, path })));
                    }
                    Decision::Abort => {
                        e.abandoned = true;
                        e.close_frame(&act.vf.name, Some(cell_id));
                        return Err(Flow::Raise(e));
                    }
                }
            }
            Err(Flow::Unwind(u)) if u.frame_id == id => restart = Some(u.path),
            Err(Flow::Supersede(steps)) => {
                let ctx = frame.cell.as_ref().expect("cell frame");
                let done = StatementPath::from_steps(steps.into_iter().rev());
                restart = Some(resume_after(act, &ctx.code, ctx.generation.get(), &done)?);
            }
            Err(other) => return Err(other),
        }
    }
}

fn interceptable(interp: &Interp, e: &Exception) -> bool {
    !e.abandoned && interp.host.handler.is_some() && exc_is_subclass(e.kind(), "Exception")
}

/// Where a stale frame continues after completing statement `done` of its
/// old code: right after the statement's counterpart in the current code.
fn resume_after(act: &Activation, old: &Cell, gen: u64, done: &StatementPath) -> Result<StatementPath, Flow> {
    let (full, how) = act.vf.map_forward(gen, &old.full(done));
    let code = act
        .vf
        .cell(old.id)
        .ok_or_else(|| structure_error(format!("cell {} was removed while live", old.id)))?;
    let rel = code
        .rel(&full)
        .ok_or_else(|| structure_error(format!("no counterpart for {} in cell {}", done, old.id)))?;
    Ok(match how {
        Mapped::Exact | Mapped::Replaced => {
            let (_, i) = rel.last().expect("non-empty path");
            rel.with_last_index(i + 1)
        }
        Mapped::Gap => rel,
    })
}

/// Asks the host what to do about a crash in frame `frame_id` at `path`.
fn consult(
    interp: &mut Interp,
    act: &Rc<Activation>,
    frame_id: u64,
    path: StatementPath,
    e: &Exception,
    inline: bool,
) -> Decision {
    let site = CrashSite {
        act: act.clone(),
        frames: frame_infos(act, frame_id, path),
        exception: e.clone(),
        inline,
    };
    let Some(mut handler) = interp.host.handler.take() else {
        return Decision::Abort;
    };
    let d = handler.on_crash(interp, &site);
    if interp.host.handler.is_none() {
        interp.host.handler = Some(handler);
    }
    match &d {
        Decision::Retry { frame, .. } if !act.frames.borrow().iter().any(|f| f.id == *frame) => Decision::Abort,
        _ => d,
    }
}

fn frame_infos(act: &Activation, frame_id: u64, path: StatementPath) -> Vec<FrameInfo> {
    let frames = act.frames.borrow();
    let idx = frames
        .iter()
        .rposition(|f| f.id == frame_id)
        .unwrap_or(frames.len().saturating_sub(1));
    let mut out = Vec::new();
    if frames.is_empty() {
        return out;
    }
    out.push(FrameInfo {
        frame: frames[idx].id,
        cell: frames[idx].cell,
        path,
    });
    for j in (0..idx).rev() {
        out.push(FrameInfo {
            frame: frames[j].id,
            cell: frames[j].cell,
            path: static_position(act, frames[j].cell, frames[j + 1].cell).unwrap_or_default(),
        });
    }
    out
}

/// Position of the loop barrier for `child` inside `parent`, when the child
/// is a loop cell nested directly in it.
fn static_position(act: &Activation, parent: u32, child: u32) -> Option<StatementPath> {
    let c = act.vf.cell(child)?;
    if c.context != BarrierContext::Loop || c.parent != Some(parent) {
        return None;
    }
    act.vf.cell(parent)?.rel(&c.origin)
}

/// Whether an enclosing `try` of the user's own would catch `e`; such
/// exceptions are part of normal control flow, not crashes.
fn handled_by_user(interp: &mut Interp, act: &Rc<Activation>, frame_id: u64, e: &Exception) -> bool {
    let frames = act.live_frames();
    let Some(idx) = frames.iter().rposition(|f| f.id == frame_id) else {
        return false;
    };
    for j in (0..idx).rev() {
        let Some(pos) = static_position(act, frames[j].cell, frames[j + 1].cell) else {
            return false;
        };
        let Some(code) = act.vf.cell(frames[j].cell) else {
            return false;
        };
        if try_catches(interp, act, &code.body, &pos, e) {
            return true;
        }
    }
    false
}

fn try_catches(interp: &mut Interp, act: &Rc<Activation>, body: &Block, pos: &StatementPath, e: &Exception) -> bool {
    let mut block = body;
    for (n, (_, i)) in pos.steps.iter().enumerate() {
        let Some(stmt) = block.get(*i as usize) else {
            return false;
        };
        let Some(&(next, _)) = pos.steps.get(n + 1) else {
            return false;
        };
        if let (Stmt::Try { handlers, .. }, BlockKind::TryBody) = (stmt, next) {
            for h in handlers {
                let Some(kind) = &h.kind else { return true };
                if !side_effect_free(kind) {
                    return true;
                }
                let frame = Frame::new(Locals::Cell, act.vf.globals.clone(), Some(act.clone()));
                match interp.eval(kind, &frame) {
                    Ok(v) if exc_matches(&v, e.kind()) => return true,
                    Ok(_) => {}
                    Err(_) => return true,
                }
            }
        }
        match child_block(stmt, next) {
            Some(b) => block = b,
            None => return false,
        }
    }
    false
}

fn side_effect_free(e: &Expr) -> bool {
    match e {
        Expr::Name(_) | Expr::Ns(_) => true,
        Expr::Attr(o, _) => side_effect_free(o),
        Expr::Tuple(items) => items.iter().all(side_effect_free),
        _ => false,
    }
}

/// Crash interception for undecomposed functions, called at the raising
/// statement. `Ok` means run the statement again.
pub fn recover_inline(interp: &mut Interp, frame: &Frame, mut e: Box<Exception>) -> Result<(), Flow> {
    let Some(act) = frame.act.clone() else {
        return Err(Flow::Raise(e));
    };
    let path = StatementPath::from_steps(frame.path.as_ref().map(|p| p.borrow().clone()).unwrap_or_default());
    if !interceptable(interp, &e) {
        return Err(Flow::Raise(e));
    }
    let root = act.vf.cell(ROOT_CELL).expect("root cell");
    if try_catches(interp, &act, &root.body, &path, &e) {
        return Err(Flow::Raise(e));
    }
    let Some(top) = act.frames.borrow().last().copied() else {
        return Err(Flow::Raise(e));
    };
    match consult(interp, &act, top.id, path, &e, true) {
        Decision::Retry { .. } => Ok(()),
        Decision::Abort => {
            e.abandoned = true;
            Err(Flow::Raise(e))
        }
    }
}

/// Whether the frame's cell code was replaced since it started.
pub fn superseded(frame: &Frame, ctx: &CellCtx) -> bool {
    let Some(act) = &frame.act else { return false };
    let g = act.vf.generation();
    if g == ctx.generation.get() {
        return false;
    }
    match act.vf.cell(ctx.code.id) {
        Some(c) if Rc::ptr_eq(&c, &ctx.code) => {
            ctx.generation.set(g);
            false
        }
        _ => true,
    }
}

// ----- restart ---------------------------------------------------------

fn illegal_restart(steps: &[(BlockKind, u32)]) -> Flow {
    Flow::error(
        "IllegalRestartError",
        format!("cannot restart at {}", StatementPath::from_steps(steps.iter().copied())),
    )
}

/// Executes `block` from the statement at `steps` onward: every block on the
/// path runs its suffix, completed siblings are skipped, and enclosing
/// branches continue on the branch the path points into.
pub fn exec_from(
    interp: &mut Interp,
    frame: &Frame,
    block: &Block,
    kind: BlockKind,
    steps: &[(BlockKind, u32)],
) -> Result<(), Flow> {
    let Some(&(k, i)) = steps.first() else {
        return interp.exec_block(block, kind, frame);
    };
    if k != kind {
        return Err(illegal_restart(steps));
    }
    let i = i as usize;
    if steps.len() == 1 || i >= block.len() {
        return interp.exec_block_from(block, kind, i, frame);
    }
    resume_in(interp, frame, &block[i], &steps[1..]).map_err(|f| annotate(f, kind, i))?;
    if let Some(cell) = &frame.cell {
        if superseded(frame, cell) {
            return Err(Flow::Supersede(vec![(kind, i as u32)]));
        }
    }
    interp.exec_block_from(block, kind, i + 1, frame)
}

fn resume_in(interp: &mut Interp, frame: &Frame, stmt: &Stmt, rest: &[(BlockKind, u32)]) -> Result<(), Flow> {
    let next = rest[0].0;
    match (stmt, next) {
        (Stmt::If { body, .. }, BlockKind::BranchThen) => exec_from(interp, frame, body, next, rest),
        (Stmt::If { orelse, .. }, BlockKind::BranchElse) => exec_from(interp, frame, orelse, next, rest),
        (Stmt::While { orelse, .. } | Stmt::For { orelse, .. }, BlockKind::LoopElse) => {
            exec_from(interp, frame, orelse, next, rest)
        }
        (
            Stmt::Try {
                body,
                handlers,
                orelse,
                finalbody,
            },
            BlockKind::TryBody,
        ) => {
            let r = match exec_from(interp, frame, body, next, rest) {
                Ok(()) => interp.exec_block(orelse, BlockKind::TryElse, frame),
                Err(Flow::Raise(e)) => interp.handle(e, handlers, frame),
                Err(other) => Err(other),
            };
            interp.finish_try(r, finalbody, frame)
        }
        (
            Stmt::Try {
                handlers, finalbody, ..
            },
            BlockKind::Handler(h),
        ) => {
            let Some(handler) = handlers.get(h as usize) else {
                return Err(illegal_restart(rest));
            };
            let r = exec_from(interp, frame, &handler.body, next, rest);
            interp.finish_try(r, finalbody, frame)
        }
        (Stmt::Try { orelse, finalbody, .. }, BlockKind::TryElse) => {
            let r = exec_from(interp, frame, orelse, next, rest);
            interp.finish_try(r, finalbody, frame)
        }
        (Stmt::Try { finalbody, .. }, BlockKind::Finally) => exec_from(interp, frame, finalbody, next, rest),
        (Stmt::With { item, target, body }, BlockKind::WithBody) => {
            // the context is entered afresh; its earlier exit already ran
            let ctx = interp.eval(item, frame)?;
            interp.with_context(ctx, target.as_ref(), frame, &mut |i| {
                exec_from(i, frame, body, next, rest)
            })
        }
        _ => Err(illegal_restart(rest)),
    }
}

/// Tree form of [`exec_from`]: the statements that remain to run when a
/// block restarts at `path`, as a new block.
pub fn synthesize_unfinished(block: &Block, kind: BlockKind, path: &StatementPath) -> Result<Block, Flow> {
    synth(block, kind, &path.steps)
}

fn synth(block: &Block, kind: BlockKind, steps: &[(BlockKind, u32)]) -> Result<Block, Flow> {
    let Some(&(k, i)) = steps.first() else {
        return Ok(block.clone());
    };
    if k != kind {
        return Err(illegal_restart(steps));
    }
    let i = i as usize;
    if steps.len() == 1 || i >= block.len() {
        return Ok(block.get(i..).map(<[Stmt]>::to_vec).unwrap_or_default());
    }
    let rest = &steps[1..];
    let next = rest[0].0;
    let guarded = |inner: Block, finalbody: &Block| -> Block {
        if finalbody.is_empty() {
            inner
        } else {
            vec![Stmt::Try {
                body: inner,
                handlers: Vec::new(),
                orelse: Vec::new(),
                finalbody: finalbody.clone(),
            }]
        }
    };
    let mut out = match (&block[i], next) {
        (Stmt::If { body, .. }, BlockKind::BranchThen) => synth(body, next, rest)?,
        (Stmt::If { orelse, .. }, BlockKind::BranchElse) => synth(orelse, next, rest)?,
        (Stmt::While { orelse, .. } | Stmt::For { orelse, .. }, BlockKind::LoopElse) => synth(orelse, next, rest)?,
        (
            Stmt::Try {
                body,
                handlers,
                orelse,
                finalbody,
            },
            BlockKind::TryBody,
        ) => vec![Stmt::Try {
            body: synth(body, next, rest)?,
            handlers: handlers.clone(),
            orelse: orelse.clone(),
            finalbody: finalbody.clone(),
        }],
        (
            Stmt::Try {
                handlers, finalbody, ..
            },
            BlockKind::Handler(h),
        ) => {
            let handler = handlers.get(h as usize).ok_or_else(|| illegal_restart(rest))?;
            guarded(synth(&handler.body, next, rest)?, finalbody)
        }
        (Stmt::Try { orelse, finalbody, .. }, BlockKind::TryElse) => guarded(synth(orelse, next, rest)?, finalbody),
        (Stmt::Try { finalbody, .. }, BlockKind::Finally) => synth(finalbody, next, rest)?,
        (Stmt::With { item, target, body }, BlockKind::WithBody) => vec![Stmt::With {
            item: item.clone(),
            target: target.clone(),
            body: synth(body, next, rest)?,
        }],
        _ => return Err(illegal_restart(rest)),
    };
    out.extend(block[i + 1..].iter().cloned());
    Ok(out)
}

/// Lets the caller keep a handle on a handler installed in the host.
impl<H: RecoveryHandler> RecoveryHandler for Rc<RefCell<H>> {
    fn on_crash(&mut self, interp: &mut Interp, site: &CrashSite) -> Decision {
        self.borrow_mut().on_crash(interp, site)
    }
}
