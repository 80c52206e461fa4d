//! Builtin functions and type constructors.

use std::collections::HashMap;
use std::sync::Arc;

use indexmap::IndexMap;

use super::format::{format_number, format_str, parse_spec, Num};
use super::interp::{compare, order, Interp};
use super::value::*;
use crate::lang::ast::CmpOp;

const TYPES: &[&str] = &["int", "float", "str", "bool", "list", "tuple", "dict", "range"];

pub fn install(b: &mut HashMap<String, Value>) {
    for t in TYPES {
        b.insert(t.to_string(), Value::Type(t));
    }
    for name in builtin_exception_names() {
        b.insert(name.to_string(), Value::ExcType(Arc::from(name)));
    }
    let mut def = |name: &str, f: fn(&mut Interp, Vec<Value>, Kwargs) -> Result<Value, Flow>| {
        b.insert(name.to_string(), Builtin::value(name, f));
    };
    def("print", print);
    def("len", |_, a, _| {
        let [v] = fixed::<1>("len", a)?;
        length(&v).map(Value::Int)
    });
    def("abs", |_, a, _| {
        let [v] = fixed::<1>("abs", a)?;
        match v {
            Value::Int(i) => Ok(Value::Int(i.abs())),
            Value::Bool(b) => Ok(Value::Int(b as i64)),
            other => other
                .as_f64()
                .map(|f| Value::Float(f.abs()))
                .ok_or_else(|| type_error(format!("bad operand type for abs(): '{}'", other.type_name()))),
        }
    });
    def("min", |i, a, k| extremum(i, a, k, true));
    def("max", |i, a, k| extremum(i, a, k, false));
    def("sum", |i, a, _| {
        if a.is_empty() || a.len() > 2 {
            return Err(type_error("sum() takes 1 or 2 arguments"));
        }
        let mut acc = a.get(1).cloned().unwrap_or(Value::Int(0));
        for v in i.collect(&a[0])? {
            acc = super::interp::binop(crate::lang::ast::BinOp::Add, &acc, &v)?;
        }
        Ok(acc)
    });
    def("round", |_, a, _| {
        let (v, nd) = match a.as_slice() {
            [v] => (v.clone(), None),
            [v, Value::None] => (v.clone(), None),
            [v, n] => (
                v.clone(),
                Some(n.as_int().ok_or_else(|| type_error("ndigits must be an integer"))?),
            ),
            _ => return Err(type_error("round() takes 1 or 2 arguments")),
        };
        if let Value::Int(i) = v {
            return Ok(Value::Int(i));
        }
        let f = v
            .as_f64()
            .ok_or_else(|| type_error(format!("type {} doesn't define __round__", v.type_name())))?;
        match nd {
            None => Ok(Value::Int(round_half_even(f) as i64)),
            Some(n) => {
                let m = 10f64.powi(n as i32);
                Ok(Value::Float(round_half_even(f * m) / m))
            }
        }
    });
    def("sorted", |i, a, k| {
        let [v] = fixed::<1>("sorted", a)?;
        let items = i.collect(&v)?;
        sort_values(i, items, k).map(Value::list)
    });
    def("reversed", |i, a, _| {
        let [v] = fixed::<1>("reversed", a)?;
        let mut items = i.collect(&v)?;
        items.reverse();
        Ok(Value::list(items))
    });
    def("enumerate", |i, a, k| {
        let start = match (a.get(1), k.iter().find(|(n, _)| n == "start")) {
            (Some(s), _) | (None, Some((_, s))) => s.as_int().ok_or_else(|| type_error("start must be an integer"))?,
            _ => 0,
        };
        let Some(src) = a.first() else {
            return Err(type_error("enumerate() missing required argument 'iterable'"));
        };
        let items = i.collect(src)?;
        Ok(Value::list(
            items
                .into_iter()
                .enumerate()
                .map(|(n, v)| Value::tuple(vec![Value::Int(start + n as i64), v]))
                .collect(),
        ))
    });
    def("zip", |i, a, _| {
        let cols: Vec<Vec<Value>> = a.iter().map(|v| i.collect(v)).collect::<Result<_, _>>()?;
        let n = cols.iter().map(Vec::len).min().unwrap_or(0);
        Ok(Value::list(
            (0..n)
                .map(|r| Value::tuple(cols.iter().map(|c| c[r].clone()).collect()))
                .collect(),
        ))
    });
    def("map", |i, a, _| {
        if a.len() < 2 {
            return Err(type_error("map() must have at least two arguments."));
        }
        let cols: Vec<Vec<Value>> = a[1..].iter().map(|v| i.collect(v)).collect::<Result<_, _>>()?;
        let n = cols.iter().map(Vec::len).min().unwrap_or(0);
        let mut out = Vec::with_capacity(n);
        for r in 0..n {
            out.push(i.call(&a[0], cols.iter().map(|c| c[r].clone()).collect(), Vec::new())?);
        }
        Ok(Value::list(out))
    });
    def("filter", |i, a, _| {
        let [f, src] = fixed::<2>("filter", a)?;
        let mut out = Vec::new();
        for v in i.collect(&src)? {
            let keep = match f {
                Value::None => v.truthy(),
                _ => i.call(&f, vec![v.clone()], Vec::new())?.truthy(),
            };
            if keep {
                out.push(v);
            }
        }
        Ok(Value::list(out))
    });
    def("any", |i, a, _| {
        let [v] = fixed::<1>("any", a)?;
        Ok(Value::Bool(i.collect(&v)?.iter().any(Value::truthy)))
    });
    def("all", |i, a, _| {
        let [v] = fixed::<1>("all", a)?;
        Ok(Value::Bool(i.collect(&v)?.iter().all(Value::truthy)))
    });
    def("isinstance", |_, a, _| {
        let [v, t] = fixed::<2>("isinstance", a)?;
        Ok(Value::Bool(isinstance(&v, &t)))
    });
    def("type", |_, a, _| {
        let [v] = fixed::<1>("type", a)?;
        Ok(type_of(&v))
    });
    def("repr", |_, a, _| {
        let [v] = fixed::<1>("repr", a)?;
        Ok(Value::str(&v.repr()))
    });
    def("callable", |_, a, _| {
        let [v] = fixed::<1>("callable", a)?;
        Ok(Value::Bool(matches!(
            v,
            Value::Function(_) | Value::Builtin(_) | Value::Method(_) | Value::Type(_) | Value::ExcType(_)
        )))
    });
    def("getattr", |i, a, _| {
        if a.len() < 2 || a.len() > 3 {
            return Err(type_error("getattr expected 2 or 3 arguments"));
        }
        let name = a[1]
            .as_str()
            .ok_or_else(|| type_error("attribute name must be string"))?
            .to_string();
        match (i.get_attr(&a[0], &name), a.get(2)) {
            (Err(Flow::Raise(e)), Some(d)) if e.kind() == "AttributeError" => Ok(d.clone()),
            (r, _) => r,
        }
    });
    def("hasattr", |i, a, _| {
        let [v, n] = fixed::<2>("hasattr", a)?;
        let name = n
            .as_str()
            .ok_or_else(|| type_error("attribute name must be string"))?
            .to_string();
        match i.get_attr(&v, &name) {
            Ok(_) => Ok(Value::Bool(true)),
            Err(Flow::Raise(e)) if e.kind() == "AttributeError" => Ok(Value::Bool(false)),
            Err(e) => Err(e),
        }
    });
    def("id", |_, a, _| {
        let [v] = fixed::<1>("id", a)?;
        let addr = match &v {
            Value::List(l) => std::rc::Rc::as_ptr(l) as *const u8 as usize,
            Value::Dict(d) => std::rc::Rc::as_ptr(d) as *const u8 as usize,
            Value::Function(f) => std::rc::Rc::as_ptr(f) as *const u8 as usize,
            Value::Native(n) => std::rc::Rc::as_ptr(n) as *const u8 as usize,
            other => return Ok(Value::Int(hash_of(other)? as i64)),
        };
        Ok(Value::Int(addr as i64))
    });
    def("hash", |_, a, _| {
        let [v] = fixed::<1>("hash", a)?;
        Ok(Value::Int(hash_of(&v)? as i64))
    });
}

fn hash_of(v: &Value) -> Result<u64, Flow> {
    use std::hash::{Hash, Hasher};
    let k = Key::from_value(v)?;
    let mut h = std::collections::hash_map::DefaultHasher::new();
    k.hash(&mut h);
    Ok(h.finish() >> 2)
}

/// Destructures exactly `N` positional arguments.
pub fn fixed<const N: usize>(name: &str, args: Vec<Value>) -> Result<[Value; N], Flow> {
    let n = args.len();
    args.try_into().map_err(|_| {
        type_error(format!(
            "{name}() takes exactly {N} argument{} ({n} given)",
            if N == 1 { "" } else { "s" }
        ))
    })
}

pub fn kwarg<'a>(kwargs: &'a Kwargs, name: &str) -> Option<&'a Value> {
    kwargs.iter().find(|(k, _)| k == name).map(|(_, v)| v)
}

fn print(interp: &mut Interp, args: Vec<Value>, kwargs: Kwargs) -> Result<Value, Flow> {
    let sep = match kwarg(&kwargs, "sep") {
        Some(Value::None) | None => " ".to_string(),
        Some(v) => v.to_str(),
    };
    let end = match kwarg(&kwargs, "end") {
        Some(Value::None) | None => "\n".to_string(),
        Some(v) => v.to_str(),
    };
    let mut text = args.iter().map(Value::to_str).collect::<Vec<_>>().join(&sep);
    text.push_str(&end);
    if let Some(file) = kwarg(&kwargs, "file") {
        if !matches!(file, Value::None) {
            interp.call_attr(&file.clone(), "write", vec![Value::str(&text)], Vec::new())?;
            return Ok(Value::None);
        }
    }
    interp.write_out(&text);
    Ok(Value::None)
}

pub fn length(v: &Value) -> Result<i64, Flow> {
    Ok(match v {
        Value::Str(s) => s.chars().count() as i64,
        Value::List(l) => l.borrow().len() as i64,
        Value::Tuple(t) => t.len() as i64,
        Value::Dict(d) => d.borrow().len() as i64,
        Value::Range(a, b, s) => range_len(*a, *b, *s),
        other => {
            return Err(type_error(format!(
                "object of type '{}' has no len()",
                other.type_name()
            )))
        }
    })
}

fn round_half_even(f: f64) -> f64 {
    let r = f.round();
    if (f - f.trunc()).abs() == 0.5 {
        2.0 * (f / 2.0).round()
    } else {
        r
    }
}

fn extremum(interp: &mut Interp, args: Vec<Value>, kwargs: Kwargs, min: bool) -> Result<Value, Flow> {
    let name = if min { "min" } else { "max" };
    let items = if args.len() == 1 {
        interp.collect(&args[0])?
    } else {
        args
    };
    let key = kwarg(&kwargs, "key").cloned();
    let default = kwarg(&kwargs, "default").cloned();
    let mut best: Option<(Value, Value)> = None;
    for v in items {
        let k = match &key {
            Some(f) => interp.call(f, vec![v.clone()], Vec::new())?,
            None => v.clone(),
        };
        let replace = match &best {
            None => true,
            Some((bk, _)) => compare(if min { CmpOp::Lt } else { CmpOp::Gt }, &k, bk)?,
        };
        if replace {
            best = Some((k, v));
        }
    }
    match (best, default) {
        (Some((_, v)), _) => Ok(v),
        (None, Some(d)) => Ok(d),
        (None, None) => Err(value_error(format!("{name}() arg is an empty sequence"))),
    }
}

pub fn sort_values(interp: &mut Interp, items: Vec<Value>, kwargs: Kwargs) -> Result<Vec<Value>, Flow> {
    let key = kwarg(&kwargs, "key").cloned().filter(|k| !matches!(k, Value::None));
    let reverse = kwarg(&kwargs, "reverse").is_some_and(Value::truthy);
    let mut keyed = Vec::with_capacity(items.len());
    for v in items {
        let k = match &key {
            Some(f) => interp.call(f, vec![v.clone()], Vec::new())?,
            None => v.clone(),
        };
        keyed.push((k, v));
    }
    let mut err = None;
    keyed.sort_by(|(a, _), (b, _)| {
        let o = order(a, b);
        if o.is_none() && err.is_none() {
            err = Some(type_error(format!(
                "'<' not supported between instances of '{}' and '{}'",
                a.type_name(),
                b.type_name()
            )));
        }
        let o = o.unwrap_or(std::cmp::Ordering::Equal);
        if reverse {
            o.reverse()
        } else {
            o
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(keyed.into_iter().map(|(_, v)| v).collect())
}

fn type_of(v: &Value) -> Value {
    match v {
        Value::Exception(e) => Value::ExcType(e.kind.clone()),
        Value::None => Value::Type("NoneType"),
        Value::Bool(_) => Value::Type("bool"),
        Value::Int(_) => Value::Type("int"),
        Value::Float(_) => Value::Type("float"),
        Value::Str(_) => Value::Type("str"),
        Value::List(_) => Value::Type("list"),
        Value::Tuple(_) => Value::Type("tuple"),
        Value::Dict(_) => Value::Type("dict"),
        Value::Range(..) => Value::Type("range"),
        _ => Value::Type("object"),
    }
}

fn isinstance(v: &Value, t: &Value) -> bool {
    match t {
        Value::Tuple(ts) => ts.iter().any(|t| isinstance(v, t)),
        Value::ExcType(k) => matches!(v, Value::Exception(e) if exc_is_subclass(&e.kind, k)),
        Value::Type("int") => matches!(v, Value::Int(_) | Value::Bool(_)),
        Value::Type(name) => v.type_name() == *name,
        _ => false,
    }
}

pub fn construct(interp: &mut Interp, ty: &str, args: Vec<Value>, kwargs: Kwargs) -> Result<Value, Flow> {
    let arg = args.first().cloned();
    match (ty, arg) {
        ("int", None) => Ok(Value::Int(0)),
        ("int", Some(v)) => match &v {
            Value::Int(_) => Ok(v),
            Value::Bool(b) => Ok(Value::Int(*b as i64)),
            Value::Float(f) => {
                if !f.is_finite() {
                    return Err(Flow::error(
                        "OverflowError",
                        "cannot convert float infinity or NaN to integer",
                    ));
                }
                Ok(Value::Int(f.trunc() as i64))
            }
            Value::Str(s) => s
                .trim()
                .replace('_', "")
                .parse::<i64>()
                .map(Value::Int)
                .map_err(|_| value_error(format!("invalid literal for int() with base 10: {}", v.repr()))),
            other => other.as_f64().map(|f| Value::Int(f.trunc() as i64)).ok_or_else(|| {
                type_error(format!(
                    "int() argument must be a string or a number, not '{}'",
                    other.type_name()
                ))
            }),
        },
        ("float", None) => Ok(Value::Float(0.0)),
        ("float", Some(v)) => match &v {
            Value::Str(s) => {
                let t = s.trim().to_ascii_lowercase();
                let parsed = match t.as_str() {
                    "inf" | "+inf" | "infinity" => Some(f64::INFINITY),
                    "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
                    "nan" => Some(f64::NAN),
                    _ => t.parse::<f64>().ok(),
                };
                parsed
                    .map(Value::Float)
                    .ok_or_else(|| value_error(format!("could not convert string to float: {}", v.repr())))
            }
            other => other.as_f64().map(Value::Float).ok_or_else(|| {
                type_error(format!(
                    "float() argument must be a string or a number, not '{}'",
                    other.type_name()
                ))
            }),
        },
        ("str", None) => Ok(Value::str("")),
        ("str", Some(v)) => Ok(Value::str(&v.to_str())),
        ("bool", v) => Ok(Value::Bool(v.is_some_and(|v| v.truthy()))),
        ("list", None) => Ok(Value::list(Vec::new())),
        ("list", Some(v)) => Ok(Value::list(interp.collect(&v)?)),
        ("tuple", None) => Ok(Value::tuple(Vec::new())),
        ("tuple", Some(v)) => Ok(Value::tuple(interp.collect(&v)?)),
        ("dict", v) => {
            let mut map = IndexMap::new();
            if let Some(v) = v {
                match &v {
                    Value::Dict(d) => map = d.borrow().clone(),
                    other => {
                        for pair in interp.collect(other)? {
                            let kv = interp.collect(&pair)?;
                            if kv.len() != 2 {
                                return Err(value_error("dictionary update sequence element has wrong length"));
                            }
                            map.insert(Key::from_value(&kv[0])?, kv[1].clone());
                        }
                    }
                }
            }
            for (k, v) in kwargs {
                map.insert(Key::Str(Arc::from(k.as_str())), v);
            }
            Ok(Value::dict(map))
        }
        ("range", _) => {
            let ints: Vec<i64> = args
                .iter()
                .map(|a| {
                    a.as_int().ok_or_else(|| {
                        type_error(format!(
                            "'{}' object cannot be interpreted as an integer",
                            a.type_name()
                        ))
                    })
                })
                .collect::<Result<_, _>>()?;
            let (a, b, s) = match ints.as_slice() {
                [b] => (0, *b, 1),
                [a, b] => (*a, *b, 1),
                [a, b, s] => (*a, *b, *s),
                _ => return Err(type_error("range expected 1 to 3 arguments")),
            };
            if s == 0 {
                return Err(value_error("range() arg 3 must not be zero"));
            }
            Ok(Value::Range(a, b, s))
        }
        (other, _) => Err(type_error(format!("cannot create '{other}' instances"))),
    }
}

/// `fmt % args`.
pub fn percent_format(fmt: &str, args: &Value) -> Result<Value, Flow> {
    let items: Vec<Value> = match args {
        Value::Tuple(t) => t.as_ref().clone(),
        other => vec![other.clone()],
    };
    let mut it = items.into_iter();
    let mut out = String::new();
    let chars: Vec<char> = fmt.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        i += 1;
        if c != '%' {
            out.push(c);
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_ascii_alphabetic() && chars[i] != '%' {
            i += 1;
        }
        let Some(&conv) = chars.get(i) else {
            return Err(value_error("incomplete format"));
        };
        i += 1;
        if conv == '%' {
            out.push('%');
            continue;
        }
        let flags: String = chars[start..i - 1].iter().collect();
        let v = it
            .next()
            .ok_or_else(|| type_error("not enough arguments for format string"))?;
        let spec_text = match flags.strip_prefix('-') {
            Some(rest) => format!("<{rest}"),
            None => flags,
        };
        let piece = match conv {
            's' => format_str(&v.to_str(), &parse_spec(&spec_text).map_err(value_error)?).map_err(value_error)?,
            'r' => v.repr(),
            'd' | 'i' | 'u' => {
                let n = match &v {
                    Value::Float(f) => Value::Int(f.trunc() as i64),
                    other => other.clone(),
                };
                fmt_one(&n, &format!("{spec_text}d"))?
            }
            'f' | 'F' | 'e' | 'E' | 'g' | 'G' | 'x' => fmt_one(&v, &format!("{spec_text}{conv}"))?,
            other => return Err(value_error(format!("unsupported format character '{other}'"))),
        };
        out.push_str(&piece);
    }
    if it.next().is_some() {
        return Err(type_error("not all arguments converted during string formatting"));
    }
    Ok(Value::str(&out))
}

/// Formats one value under a format-spec string.
pub fn fmt_one(v: &Value, spec: &str) -> Result<String, Flow> {
    let spec = parse_spec(spec).map_err(value_error)?;
    let r = match v {
        Value::Int(i) => format_number(Num::Int(*i), &spec),
        Value::Bool(b) if spec.ty.is_some() => format_number(Num::Int(*b as i64), &spec),
        Value::Float(f) => format_number(Num::Float(*f), &spec),
        Value::Native(_) if v.as_f64().is_some() => format_number(Num::Float(v.as_f64().unwrap()), &spec),
        other => format_str(&other.to_str(), &spec),
    };
    r.map_err(value_error)
}
