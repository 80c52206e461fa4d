//! Methods of the builtin container and string types.

use std::rc::Rc;
use std::sync::Arc;

use super::builtins::{fixed, fmt_one, kwarg, sort_values};
use super::interp::Interp;
use super::value::*;

/// Attribute access on a builtin value yields a bound method.
pub fn bound(recv: &Value, name: &str) -> Result<Value, Flow> {
    let known: &[&str] = match recv {
        Value::List(_) => &[
            "append", "extend", "pop", "insert", "remove", "index", "count", "sort", "reverse", "clear", "copy",
        ],
        Value::Dict(_) => &[
            "get",
            "keys",
            "values",
            "items",
            "pop",
            "setdefault",
            "update",
            "clear",
            "copy",
        ],
        Value::Str(_) => &[
            "join",
            "split",
            "strip",
            "lstrip",
            "rstrip",
            "upper",
            "lower",
            "startswith",
            "endswith",
            "replace",
            "format",
            "find",
            "count",
            "isdigit",
        ],
        Value::Tuple(_) => &["index", "count"],
        Value::Float(_) | Value::Int(_) => &["is_integer"],
        _ => &[],
    };
    if known.contains(&name) {
        return Ok(Value::Method(Rc::new((recv.clone(), Arc::from(name)))));
    }
    Err(Flow::error(
        "AttributeError",
        format!("'{}' object has no attribute '{}'", recv.type_name(), name),
    ))
}

pub fn call(interp: &mut Interp, recv: &Value, name: &str, args: Vec<Value>, kwargs: Kwargs) -> Result<Value, Flow> {
    match recv {
        Value::List(l) => list_method(interp, l, name, args, kwargs),
        Value::Dict(d) => dict_method(interp, d, name, args),
        Value::Str(s) => str_method(interp, s, name, args, kwargs),
        Value::Tuple(t) => seq_common(t, name, args, recv),
        Value::Float(f) if name == "is_integer" => Ok(Value::Bool(f.fract() == 0.0)),
        Value::Int(_) if name == "is_integer" => Ok(Value::Bool(true)),
        other => Err(Flow::error(
            "AttributeError",
            format!("'{}' object has no attribute '{}'", other.type_name(), name),
        )),
    }
}

fn no_attr(recv: &str, name: &str) -> Flow {
    Flow::error("AttributeError", format!("'{recv}' object has no attribute '{name}'"))
}

fn seq_common(items: &[Value], name: &str, args: Vec<Value>, recv: &Value) -> Result<Value, Flow> {
    match name {
        "index" => {
            let [x] = fixed::<1>("index", args)?;
            items
                .iter()
                .position(|v| v.equals(&x))
                .map(|i| Value::Int(i as i64))
                .ok_or_else(|| value_error(format!("{} is not in {}", x.repr(), recv.type_name())))
        }
        "count" => {
            let [x] = fixed::<1>("count", args)?;
            Ok(Value::Int(items.iter().filter(|v| v.equals(&x)).count() as i64))
        }
        _ => Err(no_attr(recv.type_name(), name)),
    }
}

fn list_method(
    interp: &mut Interp,
    l: &Rc<std::cell::RefCell<Vec<Value>>>,
    name: &str,
    args: Vec<Value>,
    kwargs: Kwargs,
) -> Result<Value, Flow> {
    match name {
        "append" => {
            let [x] = fixed::<1>("append", args)?;
            l.borrow_mut().push(x);
        }
        "extend" => {
            let [x] = fixed::<1>("extend", args)?;
            let items = interp.collect(&x)?;
            l.borrow_mut().extend(items);
        }
        "pop" => {
            let mut v = l.borrow_mut();
            if v.is_empty() {
                return Err(Flow::error("IndexError", "pop from empty list"));
            }
            let n = v.len() as i64;
            let i = match args.first() {
                Some(i) => i.as_int().ok_or_else(|| type_error("list indices must be integers"))?,
                None => n - 1,
            };
            let i = if i < 0 { i + n } else { i };
            if i < 0 || i >= n {
                return Err(Flow::error("IndexError", "pop index out of range"));
            }
            return Ok(v.remove(i as usize));
        }
        "insert" => {
            let [i, x] = fixed::<2>("insert", args)?;
            let mut v = l.borrow_mut();
            let n = v.len() as i64;
            let i = i.as_int().ok_or_else(|| type_error("list indices must be integers"))?;
            let i = if i < 0 { (i + n).max(0) } else { i.min(n) };
            v.insert(i as usize, x);
        }
        "remove" => {
            let [x] = fixed::<1>("remove", args)?;
            let mut v = l.borrow_mut();
            let i = v
                .iter()
                .position(|y| y.equals(&x))
                .ok_or_else(|| value_error("list.remove(x): x not in list"))?;
            v.remove(i);
        }
        "sort" => {
            let items = std::mem::take(&mut *l.borrow_mut());
            let sorted = sort_values(interp, items, kwargs)?;
            *l.borrow_mut() = sorted;
        }
        "reverse" => l.borrow_mut().reverse(),
        "clear" => l.borrow_mut().clear(),
        "copy" => return Ok(Value::list(l.borrow().clone())),
        _ => {
            let items = l.borrow().clone();
            return seq_common(&items, name, args, &Value::List(l.clone()));
        }
    }
    Ok(Value::None)
}

fn dict_method(
    interp: &mut Interp,
    d: &Rc<std::cell::RefCell<indexmap::IndexMap<Key, Value>>>,
    name: &str,
    args: Vec<Value>,
) -> Result<Value, Flow> {
    match name {
        "get" => {
            let (k, default) = match args.as_slice() {
                [k] => (k.clone(), Value::None),
                [k, dflt] => (k.clone(), dflt.clone()),
                _ => return Err(type_error("get expected 1 or 2 arguments")),
            };
            Ok(d.borrow().get(&Key::from_value(&k)?).cloned().unwrap_or(default))
        }
        "keys" => Ok(Value::list(d.borrow().keys().map(Key::to_value).collect())),
        "values" => Ok(Value::list(d.borrow().values().cloned().collect())),
        "items" => Ok(Value::list(
            d.borrow()
                .iter()
                .map(|(k, v)| Value::tuple(vec![k.to_value(), v.clone()]))
                .collect(),
        )),
        "pop" => {
            let (k, default) = match args.as_slice() {
                [k] => (k.clone(), None),
                [k, dflt] => (k.clone(), Some(dflt.clone())),
                _ => return Err(type_error("pop expected 1 or 2 arguments")),
            };
            match (d.borrow_mut().shift_remove(&Key::from_value(&k)?), default) {
                (Some(v), _) => Ok(v),
                (None, Some(dflt)) => Ok(dflt),
                (None, None) => Err(Flow::error("KeyError", k.repr())),
            }
        }
        "setdefault" => {
            let (k, default) = match args.as_slice() {
                [k] => (k.clone(), Value::None),
                [k, dflt] => (k.clone(), dflt.clone()),
                _ => return Err(type_error("setdefault expected 1 or 2 arguments")),
            };
            Ok(d.borrow_mut().entry(Key::from_value(&k)?).or_insert(default).clone())
        }
        "update" => {
            let [other] = fixed::<1>("update", args)?;
            let pairs: Vec<(Key, Value)> = match &other {
                Value::Dict(o) => o.borrow().iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
                o => {
                    let mut out = Vec::new();
                    for pair in interp.collect(o)? {
                        let kv = interp.collect(&pair)?;
                        if kv.len() != 2 {
                            return Err(value_error("dictionary update sequence element has wrong length"));
                        }
                        out.push((Key::from_value(&kv[0])?, kv[1].clone()));
                    }
                    out
                }
            };
            d.borrow_mut().extend(pairs);
            Ok(Value::None)
        }
        "clear" => {
            d.borrow_mut().clear();
            Ok(Value::None)
        }
        "copy" => Ok(Value::dict(d.borrow().clone())),
        _ => Err(no_attr("dict", name)),
    }
}

fn str_arg(v: &Value, what: &str) -> Result<String, Flow> {
    v.as_str()
        .map(str::to_string)
        .ok_or_else(|| type_error(format!("{what} must be str, not {}", v.type_name())))
}

fn str_method(interp: &mut Interp, s: &Arc<str>, name: &str, args: Vec<Value>, kwargs: Kwargs) -> Result<Value, Flow> {
    let strip_chars = |args: &[Value]| -> Result<Option<Vec<char>>, Flow> {
        match args.first() {
            None | Some(Value::None) => Ok(None),
            Some(v) => Ok(Some(str_arg(v, "strip arg")?.chars().collect())),
        }
    };
    Ok(match name {
        "join" => {
            let [items] = fixed::<1>("join", args)?;
            let parts = interp
                .collect(&items)?
                .iter()
                .map(|v| str_arg(v, "sequence item"))
                .collect::<Result<Vec<_>, _>>()?;
            Value::str(&parts.join(s))
        }
        "split" => {
            let sep = match args.first().or_else(|| kwarg(&kwargs, "sep")) {
                None | Some(Value::None) => None,
                Some(v) => Some(str_arg(v, "separator")?),
            };
            let parts: Vec<Value> = match sep {
                None => s.split_whitespace().map(Value::str).collect(),
                Some(sep) if sep.is_empty() => return Err(value_error("empty separator")),
                Some(sep) => s.split(sep.as_str()).map(Value::str).collect(),
            };
            Value::list(parts)
        }
        "strip" => Value::str(match strip_chars(&args)? {
            None => s.trim(),
            Some(cs) => s.trim_matches(|c| cs.contains(&c)),
        }),
        "lstrip" => Value::str(match strip_chars(&args)? {
            None => s.trim_start(),
            Some(cs) => s.trim_start_matches(|c| cs.contains(&c)),
        }),
        "rstrip" => Value::str(match strip_chars(&args)? {
            None => s.trim_end(),
            Some(cs) => s.trim_end_matches(|c| cs.contains(&c)),
        }),
        "upper" => Value::str(&s.to_uppercase()),
        "lower" => Value::str(&s.to_lowercase()),
        "isdigit" => Value::Bool(!s.is_empty() && s.chars().all(|c| c.is_ascii_digit())),
        "startswith" | "endswith" => {
            let [p] = fixed::<1>(name, args)?;
            let pats: Vec<String> = match &p {
                Value::Tuple(t) => t.iter().map(|v| str_arg(v, name)).collect::<Result<_, _>>()?,
                v => vec![str_arg(v, name)?],
            };
            Value::Bool(pats.iter().any(|p| {
                if name == "startswith" {
                    s.starts_with(p.as_str())
                } else {
                    s.ends_with(p.as_str())
                }
            }))
        }
        "replace" => {
            let [a, b] = fixed::<2>("replace", args)?;
            Value::str(&s.replace(&str_arg(&a, "replace arg")?, &str_arg(&b, "replace arg")?))
        }
        "find" => {
            let [p] = fixed::<1>("find", args)?;
            let p = str_arg(&p, "find arg")?;
            Value::Int(match s.find(&p) {
                Some(byte) => s[..byte].chars().count() as i64,
                None => -1,
            })
        }
        "count" => {
            let [p] = fixed::<1>("count", args)?;
            Value::Int(s.matches(&str_arg(&p, "count arg")?).count() as i64)
        }
        "format" => Value::str(&str_format(interp, s, &args, &kwargs)?),
        _ => return Err(no_attr("str", name)),
    })
}

/// `str.format` with positional, numbered and keyword fields plus
/// attribute/index access and `!r`/`!s` conversions.
fn str_format(interp: &mut Interp, fmt: &str, args: &[Value], kwargs: &Kwargs) -> Result<String, Flow> {
    let mut out = String::new();
    let mut chars = fmt.chars().peekable();
    let mut auto = 0usize;
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                out.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                out.push('}');
            }
            '{' => {
                let mut field = String::new();
                let mut depth = 1;
                for c in chars.by_ref() {
                    match c {
                        '{' => depth += 1,
                        '}' => {
                            depth -= 1;
                            if depth == 0 {
                                break;
                            }
                        }
                        _ => {}
                    }
                    field.push(c);
                }
                if depth != 0 {
                    return Err(value_error("expected '}' before end of string"));
                }
                let (head, spec) = match field.split_once(':') {
                    Some((h, s)) => (h.to_string(), s.to_string()),
                    None => (field.clone(), String::new()),
                };
                let (head, conv) = match head.split_once('!') {
                    Some((h, c)) => (h.to_string(), Some(c.to_string())),
                    None => (head, None),
                };
                let split = head.find(['.', '[']).unwrap_or(head.len());
                let (base, rest) = head.split_at(split);
                let mut v = if base.is_empty() {
                    let v = args
                        .get(auto)
                        .cloned()
                        .ok_or_else(|| Flow::error("IndexError", "Replacement index out of range"))?;
                    auto += 1;
                    v
                } else if let Ok(i) = base.parse::<usize>() {
                    args.get(i)
                        .cloned()
                        .ok_or_else(|| Flow::error("IndexError", format!("Replacement index {i} out of range")))?
                } else {
                    kwarg(kwargs, base)
                        .cloned()
                        .ok_or_else(|| Flow::error("KeyError", format!("'{base}'")))?
                };
                let mut rest = rest;
                while !rest.is_empty() {
                    if let Some(r) = rest.strip_prefix('.') {
                        let end = r.find(['.', '[']).unwrap_or(r.len());
                        v = interp.get_attr(&v, &r[..end])?;
                        rest = &r[end..];
                    } else if let Some(r) = rest.strip_prefix('[') {
                        let end = r.find(']').ok_or_else(|| value_error("missing ']' in format string"))?;
                        let key = &r[..end];
                        let k = key.parse::<i64>().map(Value::Int).unwrap_or_else(|_| Value::str(key));
                        v = interp.get_item(&v, &k)?;
                        rest = &r[end + 1..];
                    } else {
                        return Err(value_error("invalid field name"));
                    }
                }
                let v = match conv.as_deref() {
                    Some("r") => Value::str(&v.repr()),
                    Some("s") => Value::str(&v.to_str()),
                    None => v,
                    Some(c) => return Err(value_error(format!("Unknown conversion specifier {c}"))),
                };
                out.push_str(&fmt_one(&v, &spec)?);
            }
            '}' => return Err(value_error("Single '}' encountered in format string")),
            c => out.push(c),
        }
    }
    Ok(out)
}
