//! Runtime values, exceptions and non-local control flow.

use std::any::Any;
use std::cell::RefCell;
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use indexmap::IndexMap;

use super::ast::{BlockKind, CellDef, FuncDef, IndicatorKind, Lambda, Param};
use super::format::float_repr;
use super::interp::{Interp, Scope};
use super::unparse::quote_str;
use crate::runtime::Activation;
use crate::source::StatementPath;

pub type Globals = RefCell<std::collections::HashMap<String, Value>>;
pub type Kwargs = Vec<(String, Value)>;
pub type NativeFn = dyn Fn(&mut Interp, Vec<Value>, Kwargs) -> Result<Value, Flow>;

#[derive(Clone)]
pub enum Value {
    None,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(Arc<str>),
    List(Rc<RefCell<Vec<Value>>>),
    Tuple(Rc<Vec<Value>>),
    Dict(Rc<RefCell<IndexMap<Key, Value>>>),
    Range(i64, i64, i64),
    Function(Rc<Function>),
    Builtin(Rc<Builtin>),
    /// A method of a builtin type bound to its receiver.
    Method(Rc<(Value, Arc<str>)>),
    Module(Rc<Module>),
    Native(Rc<dyn NativeObject>),
    /// A builtin type usable as constructor and in `isinstance`.
    Type(&'static str),
    ExcType(Arc<str>),
    Exception(Rc<ExcObj>),
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.repr())
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Key {
    None,
    Int(i64),
    Float(u64),
    Str(Arc<str>),
    Tuple(Vec<Key>),
}

impl Key {
    pub fn from_value(v: &Value) -> Result<Key, Flow> {
        Ok(match v {
            Value::None => Key::None,
            Value::Bool(b) => Key::Int(*b as i64),
            Value::Int(i) => Key::Int(*i),
            Value::Float(f) if f.fract() == 0.0 && f.abs() < 9.0e15 => Key::Int(*f as i64),
            Value::Float(f) => Key::Float(f.to_bits()),
            Value::Str(s) => Key::Str(s.clone()),
            Value::Tuple(items) => Key::Tuple(items.iter().map(Key::from_value).collect::<Result<_, _>>()?),
            other => {
                return Err(Flow::error(
                    "TypeError",
                    format!("unhashable type: '{}'", other.type_name()),
                ))
            }
        })
    }

    pub fn to_value(&self) -> Value {
        match self {
            Key::None => Value::None,
            Key::Int(i) => Value::Int(*i),
            Key::Float(b) => Value::Float(f64::from_bits(*b)),
            Key::Str(s) => Value::Str(s.clone()),
            Key::Tuple(items) => Value::Tuple(Rc::new(items.iter().map(Key::to_value).collect())),
        }
    }
}

pub enum FnBody {
    Def(Arc<FuncDef>),
    Lambda(Arc<Lambda>),
    Cell(Arc<CellDef>),
}

pub struct Function {
    pub name: String,
    pub body: FnBody,
    pub defaults: Vec<Option<Value>>,
    pub closure: Option<Rc<Scope>>,
    pub globals: Rc<Globals>,
    /// Names bound anywhere in the body; reads of these never fall through.
    pub locals: Rc<HashSet<String>>,
    /// The activation a cell-backed function (or a lambda created inside a
    /// cell) reads its redirected locals from.
    pub act: Option<Rc<Activation>>,
    pub vaccinated: Option<Rc<crate::runtime::VaccinatedFn>>,
}

impl Function {
    pub fn params(&self) -> &[Param] {
        match &self.body {
            FnBody::Def(d) => &d.params,
            FnBody::Lambda(l) => &l.params,
            FnBody::Cell(c) => &c.params,
        }
    }
}

pub struct Builtin {
    pub name: String,
    pub f: Box<NativeFn>,
}

impl Builtin {
    pub fn value(
        name: impl Into<String>,
        f: impl Fn(&mut Interp, Vec<Value>, Kwargs) -> Result<Value, Flow> + 'static,
    ) -> Value {
        Value::Builtin(Rc::new(Builtin {
            name: name.into(),
            f: Box::new(f),
        }))
    }
}

pub struct Module {
    pub name: String,
    pub attrs: RefCell<std::collections::HashMap<String, Value>>,
}

impl Module {
    pub fn new(name: impl Into<String>) -> Module {
        Module {
            name: name.into(),
            attrs: RefCell::new(Default::default()),
        }
    }

    pub fn set(&self, name: &str, v: Value) {
        self.attrs.borrow_mut().insert(name.to_string(), v);
    }

    pub fn func(&self, name: &str, f: impl Fn(&mut Interp, Vec<Value>, Kwargs) -> Result<Value, Flow> + 'static) {
        let qualified = format!("{}.{}", self.name, name);
        self.set(name, Builtin::value(qualified, f));
    }
}

/// Host objects exposed to scripts.
pub trait NativeObject: Any {
    fn type_name(&self) -> &str;

    fn repr(&self) -> String {
        format!("<{} object>", self.type_name())
    }

    fn get_attr(&self, _interp: &mut Interp, name: &str) -> Result<Value, Flow> {
        Err(Flow::error(
            "AttributeError",
            format!("'{}' object has no attribute '{}'", self.type_name(), name),
        ))
    }

    fn call_method(&self, interp: &mut Interp, name: &str, args: Vec<Value>, kwargs: Kwargs) -> Result<Value, Flow> {
        let attr = self.get_attr(interp, name)?;
        interp.call(&attr, args, kwargs)
    }

    fn set_attr(&self, _interp: &mut Interp, name: &str, _value: Value) -> Result<(), Flow> {
        Err(Flow::error(
            "AttributeError",
            format!("cannot set attribute '{}' of '{}' object", name, self.type_name()),
        ))
    }

    fn get_item(&self, _interp: &mut Interp, _index: &Value) -> Result<Value, Flow> {
        Err(Flow::error(
            "TypeError",
            format!("'{}' object is not subscriptable", self.type_name()),
        ))
    }

    fn as_float(&self) -> Option<f64> {
        None
    }

    fn as_any(&self) -> &dyn Any;
}

pub struct ExcObj {
    pub kind: Arc<str>,
    pub message: String,
    pub args: Vec<Value>,
}

/// An in-flight exception. `steps` collects the statement path innermost
/// first while the exception unwinds through blocks of the current frame;
/// `trace` holds the completed frames below it.
#[derive(Clone)]
pub struct Exception {
    pub value: Rc<ExcObj>,
    pub steps: Vec<(BlockKind, u32)>,
    pub trace: Vec<TraceEntry>,
    /// Set when recovery was declined; barriers further out let it pass.
    pub abandoned: bool,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct TraceEntry {
    pub function: String,
    pub cell: Option<u32>,
    pub path: StatementPath,
}

impl Exception {
    pub fn new(kind: &str, message: impl Into<String>) -> Exception {
        let message = message.into();
        Exception::from_obj(Rc::new(ExcObj {
            kind: Arc::from(kind),
            args: vec![Value::Str(Arc::from(message.as_str()))],
            message,
        }))
    }

    pub fn from_obj(value: Rc<ExcObj>) -> Exception {
        Exception {
            value,
            steps: Vec::new(),
            trace: Vec::new(),
            abandoned: false,
        }
    }

    pub fn kind(&self) -> &str {
        &self.value.kind
    }

    pub fn message(&self) -> &str {
        &self.value.message
    }

    /// Path of the raising statement relative to the current frame.
    pub fn local_path(&self) -> StatementPath {
        StatementPath::from_steps(self.steps.iter().rev().copied())
    }

    /// Closes the current frame: moves the collected steps into the trace.
    pub fn close_frame(&mut self, function: &str, cell: Option<u32>) {
        let path = self.local_path();
        self.steps.clear();
        self.trace.push(TraceEntry {
            function: function.to_string(),
            cell,
            path,
        });
    }
}

impl fmt::Debug for Exception {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind(), self.message())
    }
}

impl fmt::Display for Exception {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.message().is_empty() {
            f.write_str(self.kind())
        } else {
            write!(f, "{}: {}", self.kind(), self.message())
        }
    }
}

/// What a cell hands back to its barrier.
#[derive(Clone, Debug)]
pub enum Indicator {
    Normal,
    Break,
    Continue,
    Return(Value),
}

impl Indicator {
    pub fn kind(&self) -> IndicatorKind {
        match self {
            Indicator::Normal => IndicatorKind::Normal,
            Indicator::Break => IndicatorKind::Break,
            Indicator::Continue => IndicatorKind::Continue,
            Indicator::Return(_) => IndicatorKind::Return,
        }
    }
}

/// Request to restart a live cell frame further up the stack.
#[derive(Debug)]
pub struct Unwind {
    pub frame_id: u64,
    pub path: StatementPath,
}

/// Everything that leaves a block other than falling off its end.
pub enum Flow {
    Break,
    Continue,
    Return(Value),
    Raise(Box<Exception>),
    Signal(Indicator),
    Unwind(Box<Unwind>),
    /// The running cell's code was replaced; carries the path of the statement
    /// that just completed, innermost step first.
    Supersede(Vec<(BlockKind, u32)>),
}

impl fmt::Debug for Flow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Flow::Break => f.write_str("Break"),
            Flow::Continue => f.write_str("Continue"),
            Flow::Return(v) => write!(f, "Return({v:?})"),
            Flow::Raise(e) => write!(f, "Raise({e:?})"),
            Flow::Signal(i) => write!(f, "Signal({i:?})"),
            Flow::Unwind(u) => write!(f, "Unwind({u:?})"),
            Flow::Supersede(s) => write!(f, "Supersede({s:?})"),
        }
    }
}

impl Flow {
    pub fn error(kind: &str, message: impl Into<String>) -> Flow {
        Flow::Raise(Box::new(Exception::new(kind, message)))
    }
}

pub fn type_error(msg: impl Into<String>) -> Flow {
    Flow::error("TypeError", msg)
}

pub fn value_error(msg: impl Into<String>) -> Flow {
    Flow::error("ValueError", msg)
}

const EXC_PARENTS: &[(&str, &str)] = &[
    ("Exception", "BaseException"),
    ("SystemExit", "BaseException"),
    ("KeyboardInterrupt", "BaseException"),
    ("ArithmeticError", "Exception"),
    ("ZeroDivisionError", "ArithmeticError"),
    ("OverflowError", "ArithmeticError"),
    ("LookupError", "Exception"),
    ("IndexError", "LookupError"),
    ("KeyError", "LookupError"),
    ("ValueError", "Exception"),
    ("TypeError", "Exception"),
    ("NameError", "Exception"),
    ("UnboundLocalError", "NameError"),
    ("AttributeError", "Exception"),
    ("AssertionError", "Exception"),
    ("RuntimeError", "Exception"),
    ("NotImplementedError", "RuntimeError"),
    ("RecursionError", "RuntimeError"),
    ("StaleActivationError", "RuntimeError"),
    ("StructureChangeError", "RuntimeError"),
    ("IllegalRestartError", "RuntimeError"),
    ("VaccinationError", "Exception"),
    ("OSError", "Exception"),
    ("FileNotFoundError", "OSError"),
    ("PermissionError", "OSError"),
    ("ConnectionError", "OSError"),
    ("TimeoutError", "OSError"),
    ("MemoryError", "Exception"),
    ("StopIteration", "Exception"),
];

pub fn builtin_exception_names() -> impl Iterator<Item = &'static str> {
    std::iter::once("BaseException").chain(EXC_PARENTS.iter().map(|(k, _)| *k))
}

/// Whether exception kind `kind` is `base` or derives from it. Unknown kinds
/// derive from `Exception`.
pub fn exc_is_subclass(kind: &str, base: &str) -> bool {
    let mut cur = kind;
    loop {
        if cur == base {
            return true;
        }
        match EXC_PARENTS.iter().find(|(k, _)| *k == cur) {
            Some((_, parent)) => cur = parent,
            None if cur == "BaseException" => return false,
            None => cur = "Exception",
        }
    }
}

impl Value {
    pub fn str(s: &str) -> Value {
        Value::Str(Arc::from(s))
    }

    pub fn list(items: Vec<Value>) -> Value {
        Value::List(Rc::new(RefCell::new(items)))
    }

    pub fn tuple(items: Vec<Value>) -> Value {
        Value::Tuple(Rc::new(items))
    }

    pub fn dict(items: IndexMap<Key, Value>) -> Value {
        Value::Dict(Rc::new(RefCell::new(items)))
    }

    pub fn type_name(&self) -> &str {
        match self {
            Value::None => "NoneType",
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Float(_) => "float",
            Value::Str(_) => "str",
            Value::List(_) => "list",
            Value::Tuple(_) => "tuple",
            Value::Dict(_) => "dict",
            Value::Range(..) => "range",
            Value::Function(_) => "function",
            Value::Builtin(_) | Value::Method(_) => "builtin_function_or_method",
            Value::Module(_) => "module",
            Value::Native(n) => n.type_name(),
            Value::Type(_) | Value::ExcType(_) => "type",
            Value::Exception(e) => &e.kind,
        }
    }

    pub fn truthy(&self) -> bool {
        match self {
            Value::None => false,
            Value::Bool(b) => *b,
            Value::Int(i) => *i != 0,
            Value::Float(f) => *f != 0.0,
            Value::Str(s) => !s.is_empty(),
            Value::List(l) => !l.borrow().is_empty(),
            Value::Tuple(t) => !t.is_empty(),
            Value::Dict(d) => !d.borrow().is_empty(),
            Value::Range(a, b, s) => range_len(*a, *b, *s) > 0,
            _ => true,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Bool(b) => Some(*b as i64 as f64),
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            Value::Native(n) => n.as_float(),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Bool(b) => Some(*b as i64),
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn repr(&self) -> String {
        let mut seen = Vec::new();
        self.repr_inner(&mut seen)
    }

    fn repr_inner(&self, seen: &mut Vec<usize>) -> String {
        match self {
            Value::None => "None".into(),
            Value::Bool(true) => "True".into(),
            Value::Bool(false) => "False".into(),
            Value::Int(i) => i.to_string(),
            Value::Float(f) => float_repr(*f),
            Value::Str(s) => quote_str(s),
            Value::List(l) => {
                let id = Rc::as_ptr(l) as usize;
                if seen.contains(&id) {
                    return "[...]".into();
                }
                seen.push(id);
                let inner: Vec<String> = l.borrow().iter().map(|v| v.repr_inner(seen)).collect();
                seen.pop();
                format!("[{}]", inner.join(", "))
            }
            Value::Tuple(t) => {
                let inner: Vec<String> = t.iter().map(|v| v.repr_inner(seen)).collect();
                if inner.len() == 1 {
                    format!("({},)", inner[0])
                } else {
                    format!("({})", inner.join(", "))
                }
            }
            Value::Dict(d) => {
                let id = Rc::as_ptr(d) as usize;
                if seen.contains(&id) {
                    return "{...}".into();
                }
                seen.push(id);
                let inner: Vec<String> = d
                    .borrow()
                    .iter()
                    .map(|(k, v)| format!("{}: {}", k.to_value().repr_inner(seen), v.repr_inner(seen)))
                    .collect();
                seen.pop();
                format!("{{{}}}", inner.join(", "))
            }
            Value::Range(a, b, s) => {
                if *s == 1 {
                    format!("range({a}, {b})")
                } else {
                    format!("range({a}, {b}, {s})")
                }
            }
            Value::Function(f) => format!("<function {}>", f.name),
            Value::Builtin(b) => format!("<built-in function {}>", b.name),
            Value::Method(m) => format!("<built-in method {} of {} object>", m.1, m.0.type_name()),
            Value::Module(m) => format!("<module '{}'>", m.name),
            Value::Native(n) => n.repr(),
            Value::Type(t) => format!("<class '{t}'>"),
            Value::ExcType(t) => format!("<class '{t}'>"),
            Value::Exception(e) => format!("{}({})", e.kind, quote_str(&e.message)),
        }
    }

    /// `str()` rendering.
    pub fn to_str(&self) -> String {
        match self {
            Value::Str(s) => s.to_string(),
            Value::Exception(e) => e.message.clone(),
            other => other.repr(),
        }
    }

    pub fn is(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::None, Value::None) => true,
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Str(a), Value::Str(b)) => Arc::ptr_eq(a, b) || a == b,
            (Value::List(a), Value::List(b)) => Rc::ptr_eq(a, b),
            (Value::Dict(a), Value::Dict(b)) => Rc::ptr_eq(a, b),
            (Value::Tuple(a), Value::Tuple(b)) => Rc::ptr_eq(a, b),
            (Value::Function(a), Value::Function(b)) => Rc::ptr_eq(a, b),
            (Value::Native(a), Value::Native(b)) => {
                std::ptr::eq(Rc::as_ptr(a) as *const u8, Rc::as_ptr(b) as *const u8)
            }
            (Value::Module(a), Value::Module(b)) => Rc::ptr_eq(a, b),
            (Value::Type(a), Value::Type(b)) => a == b,
            (Value::ExcType(a), Value::ExcType(b)) => a == b,
            (Value::Exception(a), Value::Exception(b)) => Rc::ptr_eq(a, b),
            _ => false,
        }
    }

    /// Structural equality (`==`).
    pub fn equals(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Str(a), Value::Str(b)) => a == b,
            (Value::List(a), Value::List(b)) => {
                if Rc::ptr_eq(a, b) {
                    return true;
                }
                let (a, b) = (a.borrow(), b.borrow());
                a.len() == b.len() && a.iter().zip(b.iter()).all(|(x, y)| x.equals(y))
            }
            (Value::Tuple(a), Value::Tuple(b)) => {
                a.len() == b.len() && a.iter().zip(b.iter()).all(|(x, y)| x.equals(y))
            }
            (Value::Dict(a), Value::Dict(b)) => {
                if Rc::ptr_eq(a, b) {
                    return true;
                }
                let (a, b) = (a.borrow(), b.borrow());
                a.len() == b.len() && a.iter().all(|(k, v)| b.get(k).is_some_and(|w| v.equals(w)))
            }
            (Value::Range(a, b, c), Value::Range(x, y, z)) => (a, b, c) == (x, y, z),
            (Value::None, Value::None) => true,
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (a, b) if is_number(a) && is_number(b) => match (a.as_int(), b.as_int()) {
                (Some(x), Some(y)) => x == y,
                _ => a.as_f64() == b.as_f64(),
            },
            (a, b) => a.is(b),
        }
    }

    /// Deep copy of plain containers; other values are shared.
    pub fn deep_copy(&self) -> Value {
        match self {
            Value::List(l) => Value::list(l.borrow().iter().map(Value::deep_copy).collect()),
            Value::Tuple(t) => Value::tuple(t.iter().map(Value::deep_copy).collect()),
            Value::Dict(d) => Value::dict(d.borrow().iter().map(|(k, v)| (k.clone(), v.deep_copy())).collect()),
            other => other.clone(),
        }
    }
}

pub fn is_number(v: &Value) -> bool {
    matches!(v, Value::Int(_) | Value::Float(_) | Value::Bool(_))
}

pub fn range_len(start: i64, stop: i64, step: i64) -> i64 {
    if step > 0 && start < stop {
        (stop - start + step - 1) / step
    } else if step < 0 && start > stop {
        (start - stop - step - 1) / (-step)
    } else {
        0
    }
}

/// Preview of a value with bounded size: containers rendered one level deep.
pub fn preview(v: &Value, limit: usize) -> String {
    let shallow = |v: &Value| match v {
        Value::List(l) => format!("<list len={}>", l.borrow().len()),
        Value::Dict(d) => format!("<dict len={}>", d.borrow().len()),
        Value::Tuple(t) => format!("<tuple len={}>", t.len()),
        other => other.repr(),
    };
    let text = match v {
        Value::List(l) => format!("[{}]", l.borrow().iter().map(shallow).collect::<Vec<_>>().join(", ")),
        Value::Tuple(t) => {
            let items: Vec<String> = t.iter().map(shallow).collect();
            if items.len() == 1 {
                format!("({},)", items[0])
            } else {
                format!("({})", items.join(", "))
            }
        }
        Value::Dict(d) => format!(
            "{{{}}}",
            d.borrow()
                .iter()
                .map(|(k, v)| format!("{}: {}", k.to_value().repr(), shallow(v)))
                .collect::<Vec<_>>()
                .join(", ")
        ),
        other => other.repr(),
    };
    truncate(&text, limit)
}

pub fn truncate(s: &str, limit: usize) -> String {
    if s.chars().count() <= limit {
        return s.to_string();
    }
    let mut out: String = s.chars().take(limit.saturating_sub(3)).collect();
    out.push_str("...");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exception_hierarchy() {
        assert!(exc_is_subclass("FileNotFoundError", "OSError"));
        assert!(exc_is_subclass("ZeroDivisionError", "Exception"));
        assert!(exc_is_subclass("CustomError", "Exception"));
        assert!(!exc_is_subclass("SystemExit", "Exception"));
        assert!(!exc_is_subclass("ValueError", "TypeError"));
    }

    #[test]
    fn numeric_equality_crosses_types() {
        assert!(Value::Int(1).equals(&Value::Float(1.0)));
        assert!(Value::Bool(true).equals(&Value::Int(1)));
        assert!(!Value::Int(1).equals(&Value::str("1")));
    }

    #[test]
    fn preview_is_bounded_and_shallow() {
        let inner = Value::list(vec![Value::Int(1)]);
        let v = Value::list(vec![inner, Value::Int(2)]);
        assert_eq!(preview(&v, 200), "[<list len=1>, 2]");
        let long = Value::str(&"x".repeat(500));
        assert_eq!(preview(&long, 200).chars().count(), 200);
    }
}
