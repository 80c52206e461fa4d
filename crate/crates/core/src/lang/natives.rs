//! Host modules importable from scripts: `math`, `random`, `time`, `fs`, `insitu`.

use std::cell::RefCell;
use std::rc::Rc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::builtins::fixed;
use super::interp::Interp;
use super::value::*;

pub fn install(interp: &mut Interp) {
    interp.register_module("math", math());
    interp.register_module("random", random(0));
    interp.register_module("time", time());
    interp.register_module("fs", fs());
    interp.register_module("insitu", insitu());
}

fn num(v: &Value, what: &str) -> Result<f64, Flow> {
    v.as_f64()
        .ok_or_else(|| type_error(format!("{what}: must be real number, not {}", v.type_name())))
}

fn unary_math(m: &Module, name: &str, f: fn(f64) -> Result<f64, Flow>) {
    let qualified = name.to_string();
    m.func(name, move |_, a, _| {
        let [x] = fixed::<1>(&qualified, a)?;
        f(num(&x, &qualified)?).map(Value::Float)
    });
}

fn domain(ok: bool, v: f64) -> Result<f64, Flow> {
    if ok {
        Ok(v)
    } else {
        Err(value_error("math domain error"))
    }
}

fn math() -> Value {
    let m = Module::new("math");
    m.set("pi", Value::Float(std::f64::consts::PI));
    m.set("e", Value::Float(std::f64::consts::E));
    m.set("inf", Value::Float(f64::INFINITY));
    m.set("nan", Value::Float(f64::NAN));
    unary_math(&m, "sqrt", |x| domain(x >= 0.0, x.sqrt()));
    unary_math(&m, "exp", |x| {
        let r = x.exp();
        if r.is_infinite() && x.is_finite() {
            Err(Flow::error("OverflowError", "math range error"))
        } else {
            Ok(r)
        }
    });
    unary_math(&m, "log", |x| domain(x > 0.0, x.ln()));
    unary_math(&m, "log10", |x| domain(x > 0.0, x.log10()));
    unary_math(&m, "fabs", |x| Ok(x.abs()));
    unary_math(&m, "tanh", |x| Ok(x.tanh()));
    unary_math(&m, "sin", |x| Ok(x.sin()));
    unary_math(&m, "cos", |x| Ok(x.cos()));
    for (name, f) in [("floor", f64::floor as fn(f64) -> f64), ("ceil", f64::ceil)] {
        let n = name.to_string();
        m.func(name, move |_, a, _| {
            let [x] = fixed::<1>(&n, a)?;
            if let Value::Int(i) = x {
                return Ok(Value::Int(i));
            }
            let r = f(num(&x, &n)?);
            if !r.is_finite() {
                return Err(Flow::error(
                    "OverflowError",
                    "cannot convert float infinity or NaN to integer",
                ));
            }
            Ok(Value::Int(r as i64))
        });
    }
    for (name, f) in [
        ("isnan", f64::is_nan as fn(f64) -> bool),
        ("isinf", f64::is_infinite),
        ("isfinite", f64::is_finite),
    ] {
        let n = name.to_string();
        m.func(name, move |_, a, _| {
            let [x] = fixed::<1>(&n, a)?;
            Ok(Value::Bool(f(num(&x, &n)?)))
        });
    }
    m.func("pow", |_, a, _| {
        let [x, y] = fixed::<2>("pow", a)?;
        Ok(Value::Float(num(&x, "pow")?.powf(num(&y, "pow")?)))
    });
    Value::Module(Rc::new(m))
}

/// A `random` module with its own seeded generator.
pub fn random(seed: u64) -> Value {
    let rng = Rc::new(RefCell::new(ChaCha8Rng::seed_from_u64(seed)));
    let m = Module::new("random");
    let r = rng.clone();
    m.func("seed", move |_, a, _| {
        let [s] = fixed::<1>("seed", a)?;
        let s = s.as_int().ok_or_else(|| type_error("seed must be an integer"))?;
        *r.borrow_mut() = ChaCha8Rng::seed_from_u64(s as u64);
        Ok(Value::None)
    });
    let r = rng.clone();
    m.func("random", move |_, _, _| Ok(Value::Float(r.borrow_mut().gen::<f64>())));
    let r = rng.clone();
    m.func("uniform", move |_, a, _| {
        let [lo, hi] = fixed::<2>("uniform", a)?;
        let (lo, hi) = (num(&lo, "uniform")?, num(&hi, "uniform")?);
        Ok(Value::Float(lo + (hi - lo) * r.borrow_mut().gen::<f64>()))
    });
    let r = rng.clone();
    m.func("randint", move |_, a, _| {
        let [lo, hi] = fixed::<2>("randint", a)?;
        let (Some(lo), Some(hi)) = (lo.as_int(), hi.as_int()) else {
            return Err(type_error("randint bounds must be integers"));
        };
        if hi < lo {
            return Err(value_error("empty range for randint()"));
        }
        Ok(Value::Int(r.borrow_mut().gen_range(lo..=hi)))
    });
    let r = rng.clone();
    m.func("gauss", move |_, a, _| {
        let [mu, sigma] = fixed::<2>("gauss", a)?;
        // Box-Muller; one draw per call keeps the stream easy to reason about
        let mut g = r.borrow_mut();
        let u1: f64 = 1.0 - g.gen::<f64>();
        let u2: f64 = g.gen::<f64>();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        Ok(Value::Float(num(&mu, "gauss")? + num(&sigma, "gauss")? * z))
    });
    let r = rng.clone();
    m.func("choice", move |i, a, _| {
        let [seq] = fixed::<1>("choice", a)?;
        let items = i.collect(&seq)?;
        items
            .choose(&mut *r.borrow_mut())
            .cloned()
            .ok_or_else(|| Flow::error("IndexError", "Cannot choose from an empty sequence"))
    });
    let r = rng;
    m.func("shuffle", move |_, a, _| {
        let [seq] = fixed::<1>("shuffle", a)?;
        let Value::List(l) = seq else {
            return Err(type_error("shuffle expects a list"));
        };
        l.borrow_mut().shuffle(&mut *r.borrow_mut());
        Ok(Value::None)
    });
    Value::Module(Rc::new(m))
}

fn time() -> Value {
    let m = Module::new("time");
    let start = Instant::now();
    m.func("sleep", |_, a, _| {
        let [s] = fixed::<1>("sleep", a)?;
        let s = num(&s, "sleep")?;
        if s < 0.0 {
            return Err(value_error("sleep length must be non-negative"));
        }
        std::thread::sleep(Duration::from_secs_f64(s));
        Ok(Value::None)
    });
    m.func("perf_counter", move |_, _, _| {
        Ok(Value::Float(start.elapsed().as_secs_f64()))
    });
    m.func("time", |_, _, _| {
        let now = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap_or_default();
        Ok(Value::Float(now.as_secs_f64()))
    });
    Value::Module(Rc::new(m))
}

fn path_arg(v: &Value) -> Result<String, Flow> {
    v.as_str()
        .map(str::to_string)
        .ok_or_else(|| type_error(format!("path must be str, not {}", v.type_name())))
}

/// Maps an io error onto the matching exception kind.
pub fn os_error(e: std::io::Error, path: &str) -> Flow {
    let kind = match e.kind() {
        std::io::ErrorKind::NotFound => "FileNotFoundError",
        std::io::ErrorKind::PermissionDenied => "PermissionError",
        _ => "OSError",
    };
    Flow::error(kind, format!("{e}: '{path}'"))
}

fn fs() -> Value {
    let m = Module::new("fs");
    m.func("read_text", |_, a, _| {
        let [p] = fixed::<1>("read_text", a)?;
        let p = path_arg(&p)?;
        std::fs::read_to_string(&p)
            .map(|s| Value::str(&s))
            .map_err(|e| os_error(e, &p))
    });
    m.func("write_text", |_, a, _| {
        let [p, text] = fixed::<2>("write_text", a)?;
        let p = path_arg(&p)?;
        std::fs::write(&p, text.to_str()).map_err(|e| os_error(e, &p))?;
        Ok(Value::None)
    });
    m.func("exists", |_, a, _| {
        let [p] = fixed::<1>("exists", a)?;
        Ok(Value::Bool(std::path::Path::new(&path_arg(&p)?).exists()))
    });
    m.func("rename", |_, a, _| {
        let [from, to] = fixed::<2>("rename", a)?;
        let (from, to) = (path_arg(&from)?, path_arg(&to)?);
        std::fs::rename(&from, &to).map_err(|e| os_error(e, &from))?;
        Ok(Value::None)
    });
    m.func("remove", |_, a, _| {
        let [p] = fixed::<1>("remove", a)?;
        let p = path_arg(&p)?;
        std::fs::remove_file(&p).map_err(|e| os_error(e, &p))?;
        Ok(Value::None)
    });
    m.func("listdir", |_, a, _| {
        let [p] = fixed::<1>("listdir", a)?;
        let p = path_arg(&p)?;
        let mut names: Vec<String> = std::fs::read_dir(&p)
            .map_err(|e| os_error(e, &p))?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        Ok(Value::list(names.iter().map(|n| Value::str(n)).collect()))
    });
    m.func("join", |_, a, _| {
        let parts: Vec<String> = a.iter().map(path_arg).collect::<Result<_, _>>()?;
        let mut p = std::path::PathBuf::new();
        for part in parts {
            p.push(part);
        }
        Ok(Value::str(&p.to_string_lossy()))
    });
    Value::Module(Rc::new(m))
}

fn insitu() -> Value {
    let m = Module::new("insitu");
    m.func("vaccinate", |interp, a, _| {
        let [f] = fixed::<1>("vaccinate", a)?;
        crate::vaccinator::vaccinate_value(interp, &f)
    });
    Value::Module(Rc::new(m))
}

/// Argument-count check shared with modules defined outside this crate module.
pub fn fixed_args<const N: usize>(name: &str, args: Vec<Value>) -> Result<[Value; N], Flow> {
    fixed::<N>(name, args)
}
