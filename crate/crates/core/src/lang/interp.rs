//! Tree-walking evaluator.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::rc::Rc;
use std::sync::Arc;

use super::ast::*;
use super::value::*;
use super::{builtins, methods, natives, parse_module, ParseError};
use crate::runtime::{self, Activation, Host};
use crate::vaccinator::Cell as CellCode;

const MAX_DEPTH: usize = 160;

/// Where `print` writes.
#[derive(Clone)]
pub enum Output {
    Stdout,
    /// Collected in memory; used as the ordered side-effect log in tests.
    Capture(Rc<RefCell<String>>),
    Writer(Rc<RefCell<dyn Write>>),
}

pub struct Scope {
    pub vars: RefCell<HashMap<String, Value>>,
    pub declared: Rc<HashSet<String>>,
    pub parent: Option<Rc<Scope>>,
}

impl Scope {
    pub fn new(declared: Rc<HashSet<String>>, parent: Option<Rc<Scope>>) -> Rc<Scope> {
        Rc::new(Scope {
            vars: RefCell::new(HashMap::new()),
            declared,
            parent,
        })
    }

    pub fn set(&self, name: &str, v: Value) {
        let mut vars = self.vars.borrow_mut();
        match vars.get_mut(name) {
            Some(slot) => *slot = v,
            None => {
                vars.insert(name.to_string(), v);
            }
        }
    }

    fn lookup(&self, name: &str) -> Result<Option<Value>, Flow> {
        if let Some(v) = self.vars.borrow().get(name) {
            return Ok(Some(v.clone()));
        }
        if self.declared.contains(name) {
            return Err(Flow::error(
                "UnboundLocalError",
                format!("local variable '{name}' referenced before assignment"),
            ));
        }
        let mut cur = self.parent.clone();
        while let Some(s) = cur {
            if let Some(v) = s.vars.borrow().get(name) {
                return Ok(Some(v.clone()));
            }
            cur = s.parent.clone();
        }
        Ok(None)
    }
}

pub enum Locals {
    /// Module level: names live in the globals.
    Module,
    Scope(Rc<Scope>),
    /// A vaccinated cell: redirected locals are `Expr::Ns`, and bare-name
    /// bindings the rewriter could not express (handler names, imports)
    /// land in the activation's table.
    Cell,
    /// Recovery `action` code: table slots first, then a scratch scope.
    Action(Rc<Scope>),
    /// Inspection: a snapshot that refuses writes.
    ReadOnly(Rc<Scope>),
}

/// Context of the currently executing code block.
pub struct Frame {
    pub locals: Locals,
    pub globals: Rc<Globals>,
    pub act: Option<Rc<Activation>>,
    pub cell: Option<CellCtx>,
    /// Statement path stack, kept only when recovering statement by statement.
    pub path: Option<RefCell<Vec<(BlockKind, u32)>>>,
}

/// The cell code a frame was started with, to notice replacement.
pub struct CellCtx {
    pub code: Rc<CellCode>,
    pub generation: std::cell::Cell<u64>,
}

impl Frame {
    pub fn module(globals: Rc<Globals>) -> Frame {
        Frame::new(Locals::Module, globals, None)
    }

    pub fn new(locals: Locals, globals: Rc<Globals>, act: Option<Rc<Activation>>) -> Frame {
        Frame {
            locals,
            globals,
            act,
            cell: None,
            path: None,
        }
    }

    pub fn act(&self) -> Result<&Rc<Activation>, Flow> {
        self.act
            .as_ref()
            .ok_or_else(|| Flow::error("RuntimeError", "namespace access outside a vaccinated activation"))
    }

    fn enclosing_scope(&self) -> Option<Rc<Scope>> {
        match &self.locals {
            Locals::Scope(s) | Locals::Action(s) | Locals::ReadOnly(s) => Some(s.clone()),
            _ => None,
        }
    }
}

pub struct Interp {
    pub globals: Rc<Globals>,
    builtins: HashMap<String, Value>,
    modules: HashMap<String, Value>,
    pub output: Output,
    pub host: Host,
    depth: usize,
    handling: Vec<Rc<ExcObj>>,
}

impl Default for Interp {
    fn default() -> Self {
        Self::new()
    }
}

impl Interp {
    pub fn new() -> Interp {
        let mut interp = Interp {
            globals: Rc::new(RefCell::new(HashMap::new())),
            builtins: HashMap::new(),
            modules: HashMap::new(),
            output: Output::Stdout,
            host: Host::default(),
            depth: 0,
            handling: Vec::new(),
        };
        builtins::install(&mut interp.builtins);
        natives::install(&mut interp);
        interp
    }

    /// An interpreter whose `print` output is captured in memory.
    pub fn capturing() -> (Interp, Rc<RefCell<String>>) {
        let mut interp = Interp::new();
        let buf = Rc::new(RefCell::new(String::new()));
        interp.output = Output::Capture(buf.clone());
        (interp, buf)
    }

    pub fn register_module(&mut self, name: &str, module: Value) {
        self.modules.insert(name.to_string(), module);
    }

    pub fn module(&self, name: &str) -> Option<&Value> {
        self.modules.get(name)
    }

    pub fn write_out(&mut self, text: &str) {
        match &self.output {
            Output::Stdout => {
                let mut out = std::io::stdout().lock();
                let _ = out.write_all(text.as_bytes());
                if text.ends_with('\n') {
                    let _ = out.flush();
                }
            }
            Output::Capture(buf) => buf.borrow_mut().push_str(text),
            Output::Writer(w) => {
                let _ = w.borrow_mut().write_all(text.as_bytes());
            }
        }
    }

    pub fn global(&self, name: &str) -> Option<Value> {
        self.globals.borrow().get(name).cloned()
    }

    pub fn set_global(&self, name: &str, v: Value) {
        self.globals.borrow_mut().insert(name.to_string(), v);
    }

    /// Parses and runs module-level source in the interpreter's globals.
    pub fn run_source(&mut self, src: &str) -> Result<(), RunError> {
        let block = parse_module(src)?;
        let frame = Frame::module(self.globals.clone());
        self.exec_block(&block, BlockKind::Body, &frame)
            .map_err(|f| self.flow_to_error(f, "<module>"))
    }

    /// Calls a global function by name.
    pub fn call_global(&mut self, name: &str, args: Vec<Value>) -> Result<Value, RunError> {
        let f = self.global(name).ok_or_else(|| {
            RunError::Exception(Box::new(Exception::new(
                "NameError",
                format!("name '{name}' is not defined"),
            )))
        })?;
        self.call(&f, args, Vec::new())
            .map_err(|fl| self.flow_to_error(fl, name))
    }

    pub fn flow_to_error(&self, flow: Flow, context: &str) -> RunError {
        match flow {
            Flow::Raise(mut e) => {
                if !e.steps.is_empty() {
                    e.close_frame(context, None);
                }
                RunError::Exception(e)
            }
            other => RunError::Exception(Box::new(Exception::new(
                "RuntimeError",
                format!("unexpected control flow escaped {context}: {other:?}"),
            ))),
        }
    }

    // ----- statements -------------------------------------------------

    pub fn exec_block(&mut self, block: &[Stmt], kind: BlockKind, frame: &Frame) -> Result<(), Flow> {
        self.exec_block_from(block, kind, 0, frame)
    }

    /// Runs `block[start..]`, reporting paths with the real indices.
    pub fn exec_block_from(
        &mut self,
        block: &[Stmt],
        kind: BlockKind,
        start: usize,
        frame: &Frame,
    ) -> Result<(), Flow> {
        if let Some(path) = &frame.path {
            return self.exec_block_inline(block, kind, start, frame, path);
        }
        for (i, stmt) in block.iter().enumerate().skip(start) {
            if let Err(f) = self.exec_stmt(stmt, frame) {
                return Err(annotate(f, kind, i));
            }
            // a stale cell frame must not run on into replaced code; a loop
            // barrier is checked once its loop statement completes
            let loop_barrier = matches!(stmt, Stmt::Barrier(b) if b.context == BarrierContext::Loop);
            if let (Some(cell), false) = (&frame.cell, loop_barrier) {
                if runtime::superseded(frame, cell) {
                    return Err(Flow::Supersede(vec![(kind, i as u32)]));
                }
            }
        }
        Ok(())
    }

    /// Statement-granular variant used without decomposition: a crash is
    /// intercepted at the raising statement while enclosing loops are live.
    fn exec_block_inline(
        &mut self,
        block: &[Stmt],
        kind: BlockKind,
        start: usize,
        frame: &Frame,
        path: &RefCell<Vec<(BlockKind, u32)>>,
    ) -> Result<(), Flow> {
        for (i, stmt) in block.iter().enumerate().skip(start) {
            path.borrow_mut().push((kind, i as u32));
            let r = loop {
                match self.exec_stmt(stmt, frame) {
                    Err(Flow::Raise(e)) if e.steps.is_empty() && !e.abandoned => {
                        match runtime::recover_inline(self, frame, e) {
                            Ok(()) => continue,
                            Err(f) => break Err(f),
                        }
                    }
                    r => break r,
                }
            };
            path.borrow_mut().pop();
            r.map_err(|f| annotate(f, kind, i))?;
        }
        Ok(())
    }

    pub fn exec_stmt(&mut self, stmt: &Stmt, frame: &Frame) -> Result<(), Flow> {
        match stmt {
            Stmt::Expr(e) => {
                self.eval(e, frame)?;
            }
            Stmt::Assign { targets, value } => {
                let v = self.eval(value, frame)?;
                for t in targets {
                    self.assign(t, v.clone(), frame)?;
                }
            }
            Stmt::AugAssign { target, op, value } => self.aug_assign(target, *op, value, frame)?,
            Stmt::If { test, body, orelse } => {
                if self.eval(test, frame)?.truthy() {
                    self.exec_block(body, BlockKind::BranchThen, frame)?;
                } else {
                    self.exec_block(orelse, BlockKind::BranchElse, frame)?;
                }
            }
            Stmt::While { test, body, orelse } => loop {
                if !self.eval(test, frame)?.truthy() {
                    self.exec_block(orelse, BlockKind::LoopElse, frame)?;
                    break;
                }
                match self.exec_block(body, BlockKind::LoopBody, frame) {
                    Ok(()) | Err(Flow::Continue) => {}
                    Err(Flow::Break) => break,
                    Err(e) => return Err(e),
                }
            },
            Stmt::For {
                target,
                iter,
                body,
                orelse,
            } => {
                let it = self.eval(iter, frame)?;
                let mut it = self.iterate(&it)?;
                loop {
                    let Some(item) = it.next() else {
                        self.exec_block(orelse, BlockKind::LoopElse, frame)?;
                        break;
                    };
                    self.assign(target, item, frame)?;
                    match self.exec_block(body, BlockKind::LoopBody, frame) {
                        Ok(()) | Err(Flow::Continue) => {}
                        Err(Flow::Break) => break,
                        Err(e) => return Err(e),
                    }
                }
            }
            Stmt::Break => return Err(Flow::Break),
            Stmt::Continue => return Err(Flow::Continue),
            Stmt::Return(v) => {
                let v = match v {
                    Some(e) => self.eval(e, frame)?,
                    None => Value::None,
                };
                return Err(Flow::Return(v));
            }
            Stmt::Pass => {}
            Stmt::Raise(e) => return Err(self.raise(e.as_ref(), frame)?),
            Stmt::Try {
                body,
                handlers,
                orelse,
                finalbody,
            } => self.exec_try(body, handlers, orelse, finalbody, frame)?,
            Stmt::With { item, target, body } => {
                let ctx = self.eval(item, frame)?;
                self.exec_with(ctx, target.as_ref(), body, frame)?;
            }
            Stmt::FuncDef(def) => {
                let f = self.make_function(def, frame)?;
                self.store_name(&def.name, f, frame)?;
            }
            Stmt::Assert { test, msg } => {
                if !self.eval(test, frame)?.truthy() {
                    let m = match msg {
                        Some(m) => self.eval(m, frame)?.to_str(),
                        None => String::new(),
                    };
                    return Err(Flow::error("AssertionError", m));
                }
            }
            Stmt::Del(targets) => {
                for t in targets {
                    self.delete(t, frame)?;
                }
            }
            Stmt::Import { module, alias } => {
                let m = self.import(module)?;
                let name = alias
                    .clone()
                    .unwrap_or_else(|| module.split('.').next().unwrap_or(module).to_string());
                self.store_name(&name, m, frame)?;
            }
            Stmt::ImportFrom { module, names } => {
                let m = self.import(module)?;
                for (n, a) in names {
                    let v = self.get_attr(&m, n)?;
                    self.store_name(a.as_ref().unwrap_or(n), v, frame)?;
                }
            }
            Stmt::Barrier(b) => return runtime::exec_barrier(self, frame, b),
            Stmt::CellDef(def) => runtime::exec_cell_def(self, frame, def)?,
            Stmt::Signal(kind, value) => {
                let ind = match kind {
                    IndicatorKind::Normal => Indicator::Normal,
                    IndicatorKind::Break => Indicator::Break,
                    IndicatorKind::Continue => Indicator::Continue,
                    IndicatorKind::Return => Indicator::Return(match value {
                        Some(e) => self.eval(e, frame)?,
                        None => Value::None,
                    }),
                };
                return Err(Flow::Signal(ind));
            }
        }
        Ok(())
    }

    fn raise(&mut self, e: Option<&Expr>, frame: &Frame) -> Result<Flow, Flow> {
        let Some(e) = e else {
            return Ok(match self.handling.last() {
                Some(obj) => Flow::Raise(Box::new(Exception::from_obj(obj.clone()))),
                None => Flow::error("RuntimeError", "No active exception to reraise"),
            });
        };
        let v = self.eval(e, frame)?;
        let v = match v {
            Value::ExcType(_) => self.call(&v, Vec::new(), Vec::new())?,
            v => v,
        };
        match v {
            Value::Exception(obj) => Ok(Flow::Raise(Box::new(Exception::from_obj(obj)))),
            other => Ok(Flow::error(
                "TypeError",
                format!("exceptions must derive from BaseException, not {}", other.type_name()),
            )),
        }
    }

    pub fn exec_try(
        &mut self,
        body: &Block,
        handlers: &[Handler],
        orelse: &Block,
        finalbody: &Block,
        frame: &Frame,
    ) -> Result<(), Flow> {
        let result = match self.exec_block(body, BlockKind::TryBody, frame) {
            Ok(()) => self.exec_block(orelse, BlockKind::TryElse, frame),
            Err(Flow::Raise(exc)) => self.handle(exc, handlers, frame),
            Err(other) => Err(other),
        };
        self.finish_try(result, finalbody, frame)
    }

    /// Runs the matching handler for `exc`, or re-raises it.
    pub fn handle(&mut self, exc: Box<Exception>, handlers: &[Handler], frame: &Frame) -> Result<(), Flow> {
        for (i, h) in handlers.iter().enumerate() {
            if !self.handler_matches(h, &exc, frame)? {
                continue;
            }
            if let Some(name) = &h.name {
                self.store_name(name, Value::Exception(exc.value.clone()), frame)?;
            }
            self.handling.push(exc.value.clone());
            let r = self.exec_block(&h.body, BlockKind::Handler(i as u16), frame);
            self.handling.pop();
            return r;
        }
        Err(Flow::Raise(exc))
    }

    pub fn finish_try(&mut self, result: Result<(), Flow>, finalbody: &Block, frame: &Frame) -> Result<(), Flow> {
        if finalbody.is_empty() {
            return result;
        }
        self.exec_block(finalbody, BlockKind::Finally, frame)?;
        result
    }

    fn handler_matches(&mut self, h: &Handler, exc: &Exception, frame: &Frame) -> Result<bool, Flow> {
        let Some(kind) = &h.kind else { return Ok(true) };
        let k = self.eval(kind, frame)?;
        Ok(exc_matches(&k, exc.kind()))
    }

    pub fn exec_with(&mut self, ctx: Value, target: Option<&Expr>, body: &Block, frame: &Frame) -> Result<(), Flow> {
        self.with_context(ctx, target, frame, &mut |interp| {
            interp.exec_block(body, BlockKind::WithBody, frame)
        })
    }

    /// Enters `ctx`, runs `body`, and exits `ctx` whatever the outcome.
    pub fn with_context(
        &mut self,
        ctx: Value,
        target: Option<&Expr>,
        frame: &Frame,
        body: &mut dyn FnMut(&mut Interp) -> Result<(), Flow>,
    ) -> Result<(), Flow> {
        let Value::Native(obj) = &ctx else {
            return Err(type_error(format!(
                "'{}' object does not support the context manager protocol",
                ctx.type_name()
            )));
        };
        let entered = obj.call_method(self, "__enter__", Vec::new(), Vec::new())?;
        if let Some(t) = target {
            self.assign(t, entered, frame)?;
        }
        let result = body(self);
        let info = match &result {
            Err(Flow::Raise(e)) => Value::str(e.kind()),
            _ => Value::None,
        };
        obj.call_method(self, "__exit__", vec![info], Vec::new())?;
        result
    }

    fn import(&mut self, module: &str) -> Result<Value, Flow> {
        self.modules
            .get(module)
            .cloned()
            .ok_or_else(|| Flow::error("ModuleNotFoundError", format!("No module named '{module}'")))
    }

    pub fn make_function(&mut self, def: &Arc<FuncDef>, frame: &Frame) -> Result<Value, Flow> {
        let decorators: Vec<Value> = def
            .decorators
            .iter()
            .map(|d| self.eval(d, frame))
            .collect::<Result<_, _>>()?;
        let defaults = self.eval_defaults(&def.params, frame)?;
        let mut declared: HashSet<String> = def.params.iter().map(|p| p.name.clone()).collect();
        let mut names = Vec::new();
        bound_names(&def.body, &mut names);
        declared.extend(names);
        let mut f = Value::Function(Rc::new(Function {
            name: def.name.clone(),
            body: FnBody::Def(def.clone()),
            defaults,
            closure: frame.enclosing_scope(),
            globals: frame.globals.clone(),
            locals: Rc::new(declared),
            act: frame.act.clone(),
            vaccinated: None,
        }));
        for d in decorators.iter().rev() {
            f = self.call(d, vec![f], Vec::new())?;
        }
        Ok(f)
    }

    pub fn eval_defaults(&mut self, params: &[Param], frame: &Frame) -> Result<Vec<Option<Value>>, Flow> {
        params
            .iter()
            .map(|p| p.default.as_ref().map(|d| self.eval(d, frame)).transpose())
            .collect()
    }

    // ----- names and targets ------------------------------------------

    pub fn load_name(&self, name: &str, frame: &Frame) -> Result<Value, Flow> {
        match &frame.locals {
            Locals::Scope(s) => {
                if let Some(v) = s.lookup(name)? {
                    return Ok(v);
                }
            }
            Locals::Action(s) => {
                if let Some(act) = &frame.act {
                    if let Some(Some(v)) = act.table.peek(name) {
                        return Ok(v);
                    }
                }
                if let Some(v) = s.lookup(name)? {
                    return Ok(v);
                }
            }
            Locals::ReadOnly(s) => {
                if let Some(v) = s.lookup(name)? {
                    return Ok(v);
                }
            }
            Locals::Module | Locals::Cell => {}
        }
        if let Some(v) = frame.globals.borrow().get(name) {
            return Ok(v.clone());
        }
        if let Some(v) = self.builtins.get(name) {
            return Ok(v.clone());
        }
        Err(Flow::error("NameError", format!("name '{name}' is not defined")))
    }

    pub fn store_name(&self, name: &str, v: Value, frame: &Frame) -> Result<(), Flow> {
        match &frame.locals {
            Locals::Module => {
                let mut g = frame.globals.borrow_mut();
                match g.get_mut(name) {
                    Some(slot) => *slot = v,
                    None => {
                        g.insert(name.to_string(), v);
                    }
                }
            }
            Locals::Scope(s) => s.set(name, v),
            Locals::Cell => frame.act()?.table.assign(name, v)?,
            Locals::Action(s) => match &frame.act {
                Some(act) if act.table.has_slot(name) => act.table.assign(name, v)?,
                _ if frame.globals.borrow().contains_key(name) => {
                    frame.globals.borrow_mut().insert(name.to_string(), v);
                }
                _ => s.set(name, v),
            },
            Locals::ReadOnly(_) => return Err(read_only()),
        }
        Ok(())
    }

    pub fn assign(&mut self, target: &Expr, v: Value, frame: &Frame) -> Result<(), Flow> {
        match target {
            Expr::Name(n) => self.store_name(n, v, frame),
            Expr::Ns(n) => frame.act()?.table.assign(n, v),
            Expr::Attr(obj, name) => {
                let o = self.eval(obj, frame)?;
                self.set_attr(&o, name, v)
            }
            Expr::Index(obj, idx) => {
                let o = self.eval(obj, frame)?;
                let i = self.eval(idx, frame)?;
                self.set_item(&o, &i, v)
            }
            Expr::Tuple(targets) | Expr::List(targets) => {
                let items = self.collect(&v)?;
                if items.len() != targets.len() {
                    return Err(value_error(if items.len() < targets.len() {
                        format!(
                            "not enough values to unpack (expected {}, got {})",
                            targets.len(),
                            items.len()
                        )
                    } else {
                        format!("too many values to unpack (expected {})", targets.len())
                    }));
                }
                for (t, item) in targets.iter().zip(items) {
                    self.assign(t, item, frame)?;
                }
                Ok(())
            }
            _ => Err(Flow::error("SyntaxError", "cannot assign to expression")),
        }
    }

    fn aug_assign(&mut self, target: &Expr, op: BinOp, value: &Expr, frame: &Frame) -> Result<(), Flow> {
        match target {
            Expr::Index(obj, idx) => {
                let o = self.eval(obj, frame)?;
                let i = self.eval(idx, frame)?;
                let cur = self.get_item(&o, &i)?;
                let rhs = self.eval(value, frame)?;
                let new = self.inplace(op, cur, rhs)?;
                self.set_item(&o, &i, new)
            }
            Expr::Attr(obj, name) => {
                let o = self.eval(obj, frame)?;
                let cur = self.get_attr(&o, name)?;
                let rhs = self.eval(value, frame)?;
                let new = self.inplace(op, cur, rhs)?;
                self.set_attr(&o, name, new)
            }
            _ => {
                let cur = self.eval(target, frame)?;
                let rhs = self.eval(value, frame)?;
                let new = self.inplace(op, cur, rhs)?;
                self.assign(target, new, frame)
            }
        }
    }

    fn inplace(&mut self, op: BinOp, cur: Value, rhs: Value) -> Result<Value, Flow> {
        if let (BinOp::Add, Value::List(l)) = (op, &cur) {
            let items = self.collect(&rhs)?;
            l.borrow_mut().extend(items);
            return Ok(cur);
        }
        binop(op, &cur, &rhs)
    }

    fn delete(&mut self, target: &Expr, frame: &Frame) -> Result<(), Flow> {
        match target {
            Expr::Name(n) => {
                let removed = match &frame.locals {
                    Locals::Scope(s) | Locals::Action(s) => s.vars.borrow_mut().remove(n).is_some(),
                    Locals::ReadOnly(_) => return Err(read_only()),
                    Locals::Module => frame.globals.borrow_mut().remove(n).is_some(),
                    Locals::Cell => {
                        frame.act()?.table.unbind(n)?;
                        true
                    }
                };
                if !removed {
                    return Err(Flow::error("NameError", format!("name '{n}' is not defined")));
                }
                Ok(())
            }
            Expr::Ns(n) => frame.act()?.table.unbind(n),
            Expr::Index(obj, idx) => {
                let o = self.eval(obj, frame)?;
                let i = self.eval(idx, frame)?;
                match &o {
                    Value::List(l) => {
                        let mut l = l.borrow_mut();
                        let n = index_of(&i, l.len(), "list")?;
                        l.remove(n);
                        Ok(())
                    }
                    Value::Dict(d) => {
                        let k = Key::from_value(&i)?;
                        d.borrow_mut()
                            .shift_remove(&k)
                            .map(|_| ())
                            .ok_or_else(|| Flow::error("KeyError", i.repr()))
                    }
                    other => Err(type_error(format!(
                        "'{}' object does not support item deletion",
                        other.type_name()
                    ))),
                }
            }
            Expr::Tuple(items) | Expr::List(items) => items.iter().try_for_each(|t| self.delete(t, frame)),
            _ => Err(Flow::error("SyntaxError", "cannot delete expression")),
        }
    }

    // ----- expressions ------------------------------------------------

    pub fn eval(&mut self, e: &Expr, frame: &Frame) -> Result<Value, Flow> {
        match e {
            Expr::Const(c) => Ok(match c {
                Constant::None => Value::None,
                Constant::Bool(b) => Value::Bool(*b),
                Constant::Int(i) => Value::Int(*i),
                Constant::Float(f) => Value::Float(*f),
                Constant::Str(s) => Value::Str(s.clone()),
            }),
            Expr::Name(n) => self.load_name(n, frame),
            Expr::Ns(n) => frame.act()?.table.resolve(n),
            Expr::List(items) => Ok(Value::list(self.eval_all(items, frame)?)),
            Expr::Tuple(items) => Ok(Value::tuple(self.eval_all(items, frame)?)),
            Expr::Dict(pairs) => {
                let mut map = indexmap::IndexMap::with_capacity(pairs.len());
                for (k, v) in pairs {
                    let k = self.eval(k, frame)?;
                    let v = self.eval(v, frame)?;
                    map.insert(Key::from_value(&k)?, v);
                }
                Ok(Value::dict(map))
            }
            Expr::Attr(obj, name) => {
                let o = self.eval(obj, frame)?;
                self.get_attr(&o, name)
            }
            Expr::Index(obj, idx) => {
                let o = self.eval(obj, frame)?;
                if let Expr::Slice(a, b, c) = &**idx {
                    let a = a.as_ref().map(|x| self.eval(x, frame)).transpose()?;
                    let b = b.as_ref().map(|x| self.eval(x, frame)).transpose()?;
                    let c = c.as_ref().map(|x| self.eval(x, frame)).transpose()?;
                    return slice(&o, a, b, c);
                }
                let i = self.eval(idx, frame)?;
                self.get_item(&o, &i)
            }
            Expr::Slice(..) => Err(type_error("slice outside subscript")),
            Expr::Call { func, args, kwargs } => {
                if let Expr::Attr(obj, name) = &**func {
                    let recv = self.eval(obj, frame)?;
                    let argv = self.eval_all(args, frame)?;
                    let kw = self.eval_kwargs(kwargs, frame)?;
                    return self.call_attr(&recv, name, argv, kw);
                }
                let f = self.eval(func, frame)?;
                let argv = self.eval_all(args, frame)?;
                let kw = self.eval_kwargs(kwargs, frame)?;
                self.call(&f, argv, kw)
            }
            Expr::Unary(op, v) => {
                let v = self.eval(v, frame)?;
                unary(*op, &v)
            }
            Expr::Binary(op, a, b) => {
                let a = self.eval(a, frame)?;
                let b = self.eval(b, frame)?;
                if let (BinOp::Mod, Value::Str(fmt)) = (op, &a) {
                    return builtins::percent_format(fmt, &b);
                }
                binop(*op, &a, &b)
            }
            Expr::Compare(first, rest) => {
                let mut left = self.eval(first, frame)?;
                for (op, right) in rest {
                    let r = self.eval(right, frame)?;
                    if !compare(*op, &left, &r)? {
                        return Ok(Value::Bool(false));
                    }
                    left = r;
                }
                Ok(Value::Bool(true))
            }
            Expr::Bool(op, a, b) => {
                let a = self.eval(a, frame)?;
                match (op, a.truthy()) {
                    (BoolOp::And, false) | (BoolOp::Or, true) => Ok(a),
                    _ => self.eval(b, frame),
                }
            }
            Expr::IfExp { test, body, orelse } => {
                if self.eval(test, frame)?.truthy() {
                    self.eval(body, frame)
                } else {
                    self.eval(orelse, frame)
                }
            }
            Expr::Lambda(l) => {
                let defaults = self.eval_defaults(&l.params, frame)?;
                Ok(Value::Function(Rc::new(Function {
                    name: "<lambda>".into(),
                    body: FnBody::Lambda(l.clone()),
                    defaults,
                    closure: frame.enclosing_scope(),
                    globals: frame.globals.clone(),
                    locals: Rc::new(l.params.iter().map(|p| p.name.clone()).collect()),
                    act: frame.act.clone(),
                    vaccinated: None,
                })))
            }
            Expr::ListComp { elt, generators } => {
                let scope = Scope::new(Rc::new(HashSet::new()), frame.enclosing_scope());
                let inner = Frame::new(Locals::Scope(scope), frame.globals.clone(), frame.act.clone());
                let mut out = Vec::new();
                self.comprehend(elt, generators, &inner, frame, &mut out)?;
                Ok(Value::list(out))
            }
            Expr::Yield(_) | Expr::Await(_) => Err(Flow::error(
                "NotImplementedError",
                "generators and coroutines are not supported",
            )),
        }
    }

    fn comprehend(
        &mut self,
        elt: &Expr,
        gens: &[Comprehension],
        inner: &Frame,
        outer: &Frame,
        out: &mut Vec<Value>,
    ) -> Result<(), Flow> {
        let Some((g, rest)) = gens.split_first() else {
            out.push(self.eval(elt, inner)?);
            return Ok(());
        };
        // the outermost iterable is evaluated in the enclosing scope
        let src = self.eval(&g.iter, outer)?;
        let mut it = self.iterate(&src)?;
        'items: for item in it.by_ref() {
            self.assign(&g.target, item, inner)?;
            for cond in &g.ifs {
                if !self.eval(cond, inner)?.truthy() {
                    continue 'items;
                }
            }
            self.comprehend(elt, rest, inner, inner, out)?;
        }
        Ok(())
    }

    fn eval_all(&mut self, items: &[Expr], frame: &Frame) -> Result<Vec<Value>, Flow> {
        let mut out = Vec::with_capacity(items.len());
        for e in items {
            out.push(self.eval(e, frame)?);
        }
        Ok(out)
    }

    fn eval_kwargs(&mut self, kwargs: &[(String, Expr)], frame: &Frame) -> Result<Kwargs, Flow> {
        let mut out = Vec::with_capacity(kwargs.len());
        for (k, e) in kwargs {
            out.push((k.clone(), self.eval(e, frame)?));
        }
        Ok(out)
    }

    // ----- objects ----------------------------------------------------

    pub fn get_attr(&mut self, o: &Value, name: &str) -> Result<Value, Flow> {
        match o {
            Value::Module(m) => m.attrs.borrow().get(name).cloned().ok_or_else(|| {
                Flow::error(
                    "AttributeError",
                    format!("module '{}' has no attribute '{}'", m.name, name),
                )
            }),
            Value::Native(n) => n.clone().get_attr(self, name),
            Value::Exception(e) if name == "args" => Ok(Value::tuple(e.args.clone())),
            other => methods::bound(other, name),
        }
    }

    fn set_attr(&mut self, o: &Value, name: &str, v: Value) -> Result<(), Flow> {
        match o {
            Value::Module(m) => {
                m.set(name, v);
                Ok(())
            }
            Value::Native(n) => n.clone().set_attr(self, name, v),
            other => Err(Flow::error(
                "AttributeError",
                format!("'{}' object attribute '{}' is read-only", other.type_name(), name),
            )),
        }
    }

    pub fn call_attr(&mut self, recv: &Value, name: &str, args: Vec<Value>, kwargs: Kwargs) -> Result<Value, Flow> {
        match recv {
            Value::Module(_) => {
                let f = self.get_attr(recv, name)?;
                self.call(&f, args, kwargs)
            }
            Value::Native(n) => n.clone().call_method(self, name, args, kwargs),
            other => methods::call(self, other, name, args, kwargs),
        }
    }

    pub fn get_item(&mut self, o: &Value, i: &Value) -> Result<Value, Flow> {
        match o {
            Value::List(l) => {
                let l = l.borrow();
                Ok(l[index_of(i, l.len(), "list")?].clone())
            }
            Value::Tuple(t) => Ok(t[index_of(i, t.len(), "tuple")?].clone()),
            Value::Str(s) => {
                let chars: Vec<char> = s.chars().collect();
                Ok(Value::str(&chars[index_of(i, chars.len(), "string")?].to_string()))
            }
            Value::Dict(d) => {
                let k = Key::from_value(i)?;
                d.borrow()
                    .get(&k)
                    .cloned()
                    .ok_or_else(|| Flow::error("KeyError", i.repr()))
            }
            Value::Range(a, b, s) => {
                let n = range_len(*a, *b, *s) as usize;
                Ok(Value::Int(a + s * index_of(i, n, "range object")? as i64))
            }
            Value::Native(n) => n.clone().get_item(self, i),
            other => Err(type_error(format!(
                "'{}' object is not subscriptable",
                other.type_name()
            ))),
        }
    }

    fn set_item(&mut self, o: &Value, i: &Value, v: Value) -> Result<(), Flow> {
        match o {
            Value::List(l) => {
                let mut l = l.borrow_mut();
                let n = index_of(i, l.len(), "list assignment")?;
                l[n] = v;
                Ok(())
            }
            Value::Dict(d) => {
                d.borrow_mut().insert(Key::from_value(i)?, v);
                Ok(())
            }
            Value::Native(n) => n
                .clone()
                .call_method(self, "__setitem__", vec![i.clone(), v], Vec::new())
                .map(|_| ()),
            other => Err(type_error(format!(
                "'{}' object does not support item assignment",
                other.type_name()
            ))),
        }
    }

    // ----- calls ------------------------------------------------------

    pub fn call(&mut self, f: &Value, args: Vec<Value>, kwargs: Kwargs) -> Result<Value, Flow> {
        match f {
            Value::Function(func) => self.call_function(func, args, kwargs),
            Value::Builtin(b) => (b.f)(self, args, kwargs),
            Value::Method(m) => methods::call(self, &m.0, &m.1, args, kwargs),
            Value::Type(t) => builtins::construct(self, t, args, kwargs),
            Value::ExcType(kind) => {
                let message = match args.len() {
                    0 => String::new(),
                    1 => args[0].to_str(),
                    _ => Value::tuple(args.clone()).repr(),
                };
                Ok(Value::Exception(Rc::new(ExcObj {
                    kind: kind.clone(),
                    message,
                    args,
                })))
            }
            Value::Native(n) => n.clone().call_method(self, "__call__", args, kwargs),
            other => Err(type_error(format!("'{}' object is not callable", other.type_name()))),
        }
    }

    pub fn call_function(&mut self, func: &Rc<Function>, args: Vec<Value>, kwargs: Kwargs) -> Result<Value, Flow> {
        if self.depth >= MAX_DEPTH {
            return Err(Flow::error("RecursionError", "maximum recursion depth exceeded"));
        }
        self.depth += 1;
        let r = self.call_function_inner(func, args, kwargs);
        self.depth -= 1;
        r
    }

    fn call_function_inner(&mut self, func: &Rc<Function>, args: Vec<Value>, kwargs: Kwargs) -> Result<Value, Flow> {
        if let Some(vf) = &func.vaccinated {
            return runtime::call_vaccinated(self, func, vf, args, kwargs);
        }
        match &func.body {
            FnBody::Cell(def) => runtime::call_cell_def(self, func, def, args, kwargs),
            FnBody::Def(def) => {
                let scope = Scope::new(func.locals.clone(), func.closure.clone());
                let values = bind_args(&func.name, func.params(), &func.defaults, args, kwargs)?;
                for (p, v) in func.params().iter().zip(values) {
                    scope.set(&p.name, v);
                }
                let frame = Frame::new(Locals::Scope(scope), func.globals.clone(), func.act.clone());
                match self.exec_block(&def.body, BlockKind::Body, &frame) {
                    Ok(()) => Ok(Value::None),
                    Err(Flow::Return(v)) => Ok(v),
                    Err(Flow::Raise(mut e)) => {
                        e.close_frame(&func.name, None);
                        Err(Flow::Raise(e))
                    }
                    Err(other) => Err(other),
                }
            }
            FnBody::Lambda(l) => {
                let scope = Scope::new(func.locals.clone(), func.closure.clone());
                let values = bind_args(&func.name, &l.params, &func.defaults, args, kwargs)?;
                for (p, v) in l.params.iter().zip(values) {
                    scope.set(&p.name, v);
                }
                let frame = Frame::new(Locals::Scope(scope), func.globals.clone(), func.act.clone());
                self.eval(&l.body, &frame)
            }
        }
    }

    // ----- iteration --------------------------------------------------

    pub fn iterate(&mut self, v: &Value) -> Result<ValueIter, Flow> {
        Ok(match v {
            Value::List(l) => ValueIter::List(l.clone(), 0),
            Value::Tuple(t) => ValueIter::Tuple(t.clone(), 0),
            Value::Range(a, b, s) => ValueIter::Range(*a, *b, *s),
            Value::Dict(d) => ValueIter::Owned(d.borrow().keys().map(Key::to_value).collect::<Vec<_>>().into_iter()),
            Value::Str(s) => ValueIter::Owned(
                s.chars()
                    .map(|c| Value::str(&c.to_string()))
                    .collect::<Vec<_>>()
                    .into_iter(),
            ),
            Value::Native(n) => {
                let items = n.clone().call_method(self, "__iter__", Vec::new(), Vec::new())?;
                return self.iterate(&items);
            }
            other => return Err(type_error(format!("'{}' object is not iterable", other.type_name()))),
        })
    }

    pub fn collect(&mut self, v: &Value) -> Result<Vec<Value>, Flow> {
        match v {
            Value::List(l) => Ok(l.borrow().clone()),
            Value::Tuple(t) => Ok(t.as_ref().clone()),
            _ => Ok(self.iterate(v)?.collect()),
        }
    }
}

pub enum ValueIter {
    List(Rc<RefCell<Vec<Value>>>, usize),
    Tuple(Rc<Vec<Value>>, usize),
    Range(i64, i64, i64),
    Owned(std::vec::IntoIter<Value>),
}

impl Iterator for ValueIter {
    type Item = Value;

    fn next(&mut self) -> Option<Value> {
        match self {
            ValueIter::List(l, i) => {
                let v = l.borrow().get(*i).cloned();
                *i += 1;
                v
            }
            ValueIter::Tuple(t, i) => {
                let v = t.get(*i).cloned();
                *i += 1;
                v
            }
            ValueIter::Range(cur, stop, step) => {
                if (*step > 0 && *cur < *stop) || (*step < 0 && *cur > *stop) {
                    let v = *cur;
                    *cur += *step;
                    Some(Value::Int(v))
                } else {
                    None
                }
            }
            ValueIter::Owned(it) => it.next(),
        }
    }
}

/// Failure of a top-level run.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("{0}")]
    Exception(Box<Exception>),
}

pub fn annotate(f: Flow, kind: BlockKind, i: usize) -> Flow {
    match f {
        Flow::Raise(mut e) => {
            e.steps.push((kind, i as u32));
            Flow::Raise(e)
        }
        Flow::Supersede(mut steps) => {
            steps.push((kind, i as u32));
            Flow::Supersede(steps)
        }
        other => other,
    }
}

fn read_only() -> Flow {
    type_error("inspection is read-only; use an action to change state")
}

/// Whether an `except` clause value matches exception kind `kind`.
pub fn exc_matches(clause: &Value, kind: &str) -> bool {
    match clause {
        Value::ExcType(k) => exc_is_subclass(kind, k),
        Value::Tuple(items) => items.iter().any(|i| exc_matches(i, kind)),
        _ => false,
    }
}

/// Matches call arguments to parameters.
pub fn bind_args(
    name: &str,
    params: &[Param],
    defaults: &[Option<Value>],
    args: Vec<Value>,
    kwargs: Kwargs,
) -> Result<Vec<Value>, Flow> {
    if args.len() > params.len() {
        return Err(type_error(format!(
            "{name}() takes {} positional arguments but {} were given",
            params.len(),
            args.len()
        )));
    }
    let mut slots: Vec<Option<Value>> = args.into_iter().map(Some).collect();
    slots.resize(params.len(), None);
    for (k, v) in kwargs {
        let Some(i) = params.iter().position(|p| p.name == k) else {
            return Err(type_error(format!("{name}() got an unexpected keyword argument '{k}'")));
        };
        if slots[i].is_some() {
            return Err(type_error(format!("{name}() got multiple values for argument '{k}'")));
        }
        slots[i] = Some(v);
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| match s {
            Some(v) => Ok(v),
            None => defaults.get(i).cloned().flatten().ok_or_else(|| {
                type_error(format!(
                    "{name}() missing required positional argument: '{}'",
                    params[i].name
                ))
            }),
        })
        .collect()
}

/// Names bound by assignment-like statements in `block`, not descending
/// into nested function bodies (the nested function's own name counts).
pub fn bound_names(block: &Block, out: &mut Vec<String>) {
    fn target(e: &Expr, out: &mut Vec<String>) {
        match e {
            Expr::Name(n) => {
                if !out.contains(n) {
                    out.push(n.clone());
                }
            }
            Expr::Tuple(items) | Expr::List(items) => items.iter().for_each(|i| target(i, out)),
            _ => {}
        }
    }
    let add = |n: &str, out: &mut Vec<String>| {
        if !out.iter().any(|x| x == n) {
            out.push(n.to_string());
        }
    };
    for stmt in block {
        match stmt {
            Stmt::Assign { targets, .. } => targets.iter().for_each(|t| target(t, out)),
            Stmt::AugAssign { target: t, .. } => target(t, out),
            Stmt::For { target: t, .. } => target(t, out),
            Stmt::With { target: Some(t), .. } => target(t, out),
            Stmt::Del(targets) => targets.iter().for_each(|t| target(t, out)),
            Stmt::FuncDef(def) => add(&def.name, out),
            Stmt::CellDef(def) => add(&def.name, out),
            Stmt::Import { module, alias } => add(
                alias
                    .as_deref()
                    .unwrap_or_else(|| module.split('.').next().unwrap_or(module)),
                out,
            ),
            Stmt::ImportFrom { names, .. } => {
                for (n, a) in names {
                    add(a.as_deref().unwrap_or(n), out);
                }
            }
            Stmt::Try { handlers, .. } => {
                for h in handlers {
                    if let Some(n) = &h.name {
                        add(n, out);
                    }
                }
            }
            _ => {}
        }
        if !matches!(stmt, Stmt::FuncDef(_)) {
            for (_, child) in child_blocks(stmt) {
                bound_names(child, out);
            }
        }
    }
}

// ----- operators ------------------------------------------------------

fn index_of(i: &Value, len: usize, what: &str) -> Result<usize, Flow> {
    let Some(mut n) = i.as_int() else {
        return Err(type_error(format!(
            "{what} indices must be integers, not {}",
            i.type_name()
        )));
    };
    if n < 0 {
        n += len as i64;
    }
    if n < 0 || n as usize >= len {
        return Err(Flow::error("IndexError", format!("{what} index out of range")));
    }
    Ok(n as usize)
}

fn slice(o: &Value, a: Option<Value>, b: Option<Value>, c: Option<Value>) -> Result<Value, Flow> {
    let to_int = |v: Option<Value>| -> Result<Option<i64>, Flow> {
        match v {
            None | Some(Value::None) => Ok(None),
            Some(v) => v
                .as_int()
                .map(Some)
                .ok_or_else(|| type_error("slice indices must be integers or None")),
        }
    };
    let step = to_int(c)?.unwrap_or(1);
    if step == 0 {
        return Err(value_error("slice step cannot be zero"));
    }
    let (start, stop) = (to_int(a)?, to_int(b)?);
    let pick = |len: usize| -> Vec<usize> {
        let len = len as i64;
        let norm = |x: i64, lo: i64, hi: i64| {
            let x = if x < 0 { x + len } else { x };
            x.clamp(lo, hi)
        };
        let mut out = Vec::new();
        if step > 0 {
            let s = start.map_or(0, |x| norm(x, 0, len));
            let e = stop.map_or(len, |x| norm(x, 0, len));
            let mut i = s;
            while i < e {
                out.push(i as usize);
                i += step;
            }
        } else {
            let s = start.map_or(len - 1, |x| norm(x, -1, len - 1));
            let e = stop.map_or(-1, |x| norm(x, -1, len - 1));
            let mut i = s;
            while i > e {
                out.push(i as usize);
                i += step;
            }
        }
        out
    };
    match o {
        Value::List(l) => {
            let l = l.borrow();
            Ok(Value::list(pick(l.len()).into_iter().map(|i| l[i].clone()).collect()))
        }
        Value::Tuple(t) => Ok(Value::tuple(pick(t.len()).into_iter().map(|i| t[i].clone()).collect())),
        Value::Str(s) => {
            let chars: Vec<char> = s.chars().collect();
            Ok(Value::str(
                &pick(chars.len()).into_iter().map(|i| chars[i]).collect::<String>(),
            ))
        }
        Value::Range(a, b, s) => {
            let all: Vec<Value> = ValueIter::Range(*a, *b, *s).collect();
            Ok(Value::list(
                pick(all.len()).into_iter().map(|i| all[i].clone()).collect(),
            ))
        }
        other => Err(type_error(format!(
            "'{}' object is not subscriptable",
            other.type_name()
        ))),
    }
}

fn unary(op: UnaryOp, v: &Value) -> Result<Value, Flow> {
    match (op, v) {
        (UnaryOp::Not, v) => Ok(Value::Bool(!v.truthy())),
        (UnaryOp::Neg, Value::Int(i)) => i
            .checked_neg()
            .map(Value::Int)
            .ok_or_else(|| Flow::error("OverflowError", "integer overflow")),
        (UnaryOp::Neg, Value::Bool(b)) => Ok(Value::Int(-(*b as i64))),
        (UnaryOp::Neg, Value::Float(f)) => Ok(Value::Float(-f)),
        (UnaryOp::Pos, v @ (Value::Int(_) | Value::Float(_))) => Ok(v.clone()),
        (UnaryOp::Pos, Value::Bool(b)) => Ok(Value::Int(*b as i64)),
        (_, v) => match v.as_f64() {
            Some(f) if matches!(v, Value::Native(_)) => Ok(Value::Float(if op == UnaryOp::Neg { -f } else { f })),
            _ => Err(type_error(format!(
                "bad operand type for unary op: '{}'",
                v.type_name()
            ))),
        },
    }
}

fn overflow() -> Flow {
    Flow::error("OverflowError", "integer overflow")
}

pub fn binop(op: BinOp, a: &Value, b: &Value) -> Result<Value, Flow> {
    use Value::*;
    if let (Some(x), Some(y)) = (int_operand(a), int_operand(b)) {
        return int_binop(op, x, y);
    }
    match (op, a, b) {
        (BinOp::Add, Str(x), Str(y)) => return Ok(Value::str(&format!("{x}{y}"))),
        (BinOp::Add, List(x), List(y)) => {
            let mut v = x.borrow().clone();
            v.extend(y.borrow().iter().cloned());
            return Ok(Value::list(v));
        }
        (BinOp::Add, Tuple(x), Tuple(y)) => {
            let mut v = x.as_ref().clone();
            v.extend(y.iter().cloned());
            return Ok(Value::tuple(v));
        }
        (BinOp::Mul, Str(s), n) | (BinOp::Mul, n, Str(s)) if int_operand(n).is_some() => {
            return Ok(Value::str(&s.repeat(int_operand(n).unwrap().max(0) as usize)));
        }
        (BinOp::Mul, List(l), n) | (BinOp::Mul, n, List(l)) if int_operand(n).is_some() => {
            let l = l.borrow();
            let times = int_operand(n).unwrap().max(0) as usize;
            let mut v = Vec::with_capacity(l.len() * times);
            for _ in 0..times {
                v.extend(l.iter().cloned());
            }
            return Ok(Value::list(v));
        }
        _ => {}
    }
    let (Some(x), Some(y)) = (a.as_f64(), b.as_f64()) else {
        return Err(type_error(format!(
            "unsupported operand type(s) for {}: '{}' and '{}'",
            op.symbol(),
            a.type_name(),
            b.type_name()
        )));
    };
    float_binop(op, x, y)
}

fn int_operand(v: &Value) -> Option<i64> {
    match v {
        Value::Int(i) => Some(*i),
        Value::Bool(b) => Some(*b as i64),
        _ => None,
    }
}

fn int_binop(op: BinOp, x: i64, y: i64) -> Result<Value, Flow> {
    Ok(Value::Int(match op {
        BinOp::Add => x.checked_add(y).ok_or_else(overflow)?,
        BinOp::Sub => x.checked_sub(y).ok_or_else(overflow)?,
        BinOp::Mul => x.checked_mul(y).ok_or_else(overflow)?,
        BinOp::Div => {
            if y == 0 {
                return Err(Flow::error("ZeroDivisionError", "division by zero"));
            }
            return Ok(Value::Float(x as f64 / y as f64));
        }
        BinOp::FloorDiv => {
            if y == 0 {
                return Err(Flow::error("ZeroDivisionError", "integer division or modulo by zero"));
            }
            x.div_euclid(y) - if y < 0 && x.rem_euclid(y) != 0 { 1 } else { 0 }
        }
        BinOp::Mod => {
            if y == 0 {
                return Err(Flow::error("ZeroDivisionError", "integer division or modulo by zero"));
            }
            let r = x % y;
            if r != 0 && ((r < 0) != (y < 0)) {
                r + y
            } else {
                r
            }
        }
        BinOp::Pow => {
            if y < 0 {
                return Ok(Value::Float((x as f64).powf(y as f64)));
            }
            let e = u32::try_from(y).map_err(|_| overflow())?;
            x.checked_pow(e).ok_or_else(overflow)?
        }
    }))
}

fn float_binop(op: BinOp, x: f64, y: f64) -> Result<Value, Flow> {
    Ok(Value::Float(match op {
        BinOp::Add => x + y,
        BinOp::Sub => x - y,
        BinOp::Mul => x * y,
        BinOp::Div => {
            if y == 0.0 {
                return Err(Flow::error("ZeroDivisionError", "float division by zero"));
            }
            x / y
        }
        BinOp::FloorDiv => {
            if y == 0.0 {
                return Err(Flow::error("ZeroDivisionError", "float floor division by zero"));
            }
            (x / y).floor()
        }
        BinOp::Mod => {
            if y == 0.0 {
                return Err(Flow::error("ZeroDivisionError", "float modulo"));
            }
            let r = x % y;
            if r != 0.0 && ((r < 0.0) != (y < 0.0)) {
                r + y
            } else {
                r
            }
        }
        BinOp::Pow => {
            if x < 0.0 && y.fract() != 0.0 {
                return Err(value_error("math domain error"));
            }
            x.powf(y)
        }
    }))
}

pub fn compare(op: CmpOp, a: &Value, b: &Value) -> Result<bool, Flow> {
    Ok(match op {
        CmpOp::Eq => a.equals(b),
        CmpOp::NotEq => !a.equals(b),
        CmpOp::Is => a.is(b),
        CmpOp::IsNot => !a.is(b),
        CmpOp::In => contains(b, a)?,
        CmpOp::NotIn => !contains(b, a)?,
        _ => {
            let ord = order(a, b).ok_or_else(|| {
                type_error(format!(
                    "'{}' not supported between instances of '{}' and '{}'",
                    op.symbol(),
                    a.type_name(),
                    b.type_name()
                ))
            })?;
            match op {
                CmpOp::Lt => ord == std::cmp::Ordering::Less,
                CmpOp::LtE => ord != std::cmp::Ordering::Greater,
                CmpOp::Gt => ord == std::cmp::Ordering::Greater,
                CmpOp::GtE => ord != std::cmp::Ordering::Less,
                _ => unreachable!(),
            }
        }
    })
}

/// Ordering for `<` and friends; `None` when the types are unorderable.
/// NaN compares as unordered-but-not-equal, which we map to Greater so
/// every comparison involving NaN except `!=` is false-ish in the callers.
pub fn order(a: &Value, b: &Value) -> Option<std::cmp::Ordering> {
    use std::cmp::Ordering;
    match (a, b) {
        (Value::Str(x), Value::Str(y)) => Some(x.cmp(y)),
        (Value::List(x), Value::List(y)) => seq_order(&x.borrow(), &y.borrow()),
        (Value::Tuple(x), Value::Tuple(y)) => seq_order(x, y),
        _ => {
            if let (Some(x), Some(y)) = (int_operand(a), int_operand(b)) {
                return Some(x.cmp(&y));
            }
            let (x, y) = (a.as_f64()?, b.as_f64()?);
            if !matches!(a, Value::Int(_) | Value::Float(_) | Value::Bool(_) | Value::Native(_))
                || !matches!(b, Value::Int(_) | Value::Float(_) | Value::Bool(_) | Value::Native(_))
            {
                return None;
            }
            Some(x.partial_cmp(&y).unwrap_or(Ordering::Greater))
        }
    }
}

fn seq_order(x: &[Value], y: &[Value]) -> Option<std::cmp::Ordering> {
    for (a, b) in x.iter().zip(y) {
        if !a.equals(b) {
            return order(a, b);
        }
    }
    Some(x.len().cmp(&y.len()))
}

fn contains(container: &Value, item: &Value) -> Result<bool, Flow> {
    Ok(match container {
        Value::List(l) => l.borrow().iter().any(|v| v.equals(item)),
        Value::Tuple(t) => t.iter().any(|v| v.equals(item)),
        Value::Dict(d) => d.borrow().contains_key(&Key::from_value(item)?),
        Value::Str(s) => match item {
            Value::Str(sub) => s.contains(&**sub),
            other => {
                return Err(type_error(format!(
                    "'in <string>' requires string as left operand, not {}",
                    other.type_name()
                )))
            }
        },
        Value::Range(a, b, s) => match item.as_int() {
            Some(i) => {
                let n = range_len(*a, *b, *s);
                n > 0 && (i - a) % s == 0 && (i - a) / s >= 0 && (i - a) / s < n
            }
            None => false,
        },
        other => {
            return Err(type_error(format!(
                "argument of type '{}' is not iterable",
                other.type_name()
            )))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(src: &str) -> String {
        let (mut interp, out) = Interp::capturing();
        interp.run_source(src).unwrap_or_else(|e| panic!("{e}"));
        let s = out.borrow().clone();
        s
    }

    #[test]
    fn arithmetic_follows_python() {
        assert_eq!(
            run("print(7 // -2, 7 % -2, -7 % 3, 2 ** 10, 1 / 4)\n"),
            "-4 -1 2 1024 0.25\n"
        );
        assert_eq!(run("print(7.5 // 2, 0.1 + 0.2)\n"), "3.0 0.30000000000000004\n");
    }

    #[test]
    fn loops_and_control_flow() {
        let src = "def f(n):\n    acc = 0\n    for i in range(n):\n        if i == 2:\n            continue\n        if i > 5:\n            break\n        acc += i\n    else:\n        acc = -1\n    return acc\nprint(f(4), f(10))\n";
        assert_eq!(run(src), "-1 13\n");
    }

    #[test]
    fn exceptions_and_handlers() {
        let src = "def f(d):\n    try:\n        return d['x']\n    except KeyError as e:\n        return 'missing ' + str(e)\n    finally:\n        print('done')\nprint(f({}))\n";
        assert_eq!(run(src), "done\nmissing 'x'\n");
    }

    #[test]
    fn closures_and_comprehensions() {
        let src = "def mk(k):\n    return lambda x: x * k\nf = mk(3)\nprint([f(i) for i in range(4) if i % 2 == 1])\n";
        assert_eq!(run(src), "[3, 9]\n");
    }

    #[test]
    fn unbound_local_is_detected() {
        let (mut interp, _) = Interp::capturing();
        let err = interp
            .run_source("x = 1\ndef f():\n    y = x\n    x = 2\nf()\n")
            .unwrap_err();
        assert!(err.to_string().contains("UnboundLocalError"));
    }

    #[test]
    fn traceback_paths_point_at_statement() {
        let (mut interp, _) = Interp::capturing();
        interp
            .run_source("def f(xs):\n    for x in xs:\n        if x > 1:\n            y = 1 / 0\n")
            .unwrap();
        let err = interp
            .call_global("f", vec![Value::list(vec![Value::Int(1), Value::Int(2)])])
            .unwrap_err();
        let RunError::Exception(e) = err else { panic!() };
        assert_eq!(e.kind(), "ZeroDivisionError");
        assert_eq!(e.trace[0].path.to_string(), "body[0]/loop[0]/then[0]");
    }

    #[test]
    fn list_aliasing_with_inplace_add() {
        assert_eq!(run("a = []\nb = a\na += [1]\nprint(b)\n"), "[1]\n");
    }
}
