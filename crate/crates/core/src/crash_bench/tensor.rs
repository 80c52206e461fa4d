//! `nd`: a small dense-tensor module that stands in for a DL library in the
//! benchmark workloads. Numerics run natively, like kernels outside the
//! interpreter, and every fault the injectors need is wired in here.

use std::any::Any;
use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lang::natives::{fixed_args, os_error};
use crate::lang::value::{type_error, value_error, Builtin, Kwargs, Module, NativeObject};
use crate::lang::{Flow, Interp, Value};

/// Memory pool per device, shared with sibling threads in contention runs.
#[derive(Debug, Default)]
pub struct Devices {
    pools: HashMap<String, Pool>,
}

#[derive(Debug, Clone, Copy)]
struct Pool {
    capacity: u64,
    used: u64,
}

impl Devices {
    pub fn with(devices: &[(&str, u64)]) -> Arc<Mutex<Devices>> {
        let pools = devices
            .iter()
            .map(|(n, c)| (n.to_string(), Pool { capacity: *c, used: 0 }))
            .collect();
        Arc::new(Mutex::new(Devices { pools }))
    }

    pub fn allocate(&mut self, device: &str, units: u64) -> Result<(), String> {
        let Some(p) = self.pools.get_mut(device) else {
            return Err(format!("invalid device '{device}'"));
        };
        if p.used + units > p.capacity {
            return Err(format!(
                "{device} out of memory. Tried to allocate {units} units ({} of {} free)",
                p.capacity - p.used,
                p.capacity
            ));
        }
        p.used += units;
        Ok(())
    }

    pub fn release(&mut self, device: &str, units: u64) {
        if let Some(p) = self.pools.get_mut(device) {
            p.used = p.used.saturating_sub(units);
        }
    }

    pub fn free(&self, device: &str) -> u64 {
        self.pools.get(device).map_or(0, |p| p.capacity - p.used)
    }
}

/// Raises `kind: message` on the `nth` call of `op`, once.
#[derive(Debug, Clone)]
pub struct Fault {
    pub op: String,
    pub nth: u64,
    pub kind: String,
    pub message: String,
    /// Runs before raising; the non-recoverable case wipes state here.
    pub clear_global: Option<String>,
}

/// Everything the workload touches outside the interpreter. It survives a
/// restart so that the rerun sees the environment the crash left behind.
pub struct NdEnv {
    pub devices: Arc<Mutex<Devices>>,
    pub fault: RefCell<Option<Fault>>,
    pub calls: RefCell<HashMap<String, u64>>,
    pub nan_batches: RefCell<HashSet<i64>>,
    pub single_class_shards: RefCell<HashSet<i64>>,
}

impl NdEnv {
    pub fn new(devices: Arc<Mutex<Devices>>) -> Rc<NdEnv> {
        Rc::new(NdEnv {
            devices,
            fault: RefCell::new(None),
            calls: RefCell::new(HashMap::new()),
            nan_batches: RefCell::new(HashSet::new()),
            single_class_shards: RefCell::new(HashSet::new()),
        })
    }

    fn count(&self, interp: &mut Interp, op: &str) -> Result<(), Flow> {
        let n = {
            let mut calls = self.calls.borrow_mut();
            let n = calls.entry(op.to_string()).or_insert(0);
            *n += 1;
            *n
        };
        let hit = matches!(&*self.fault.borrow(), Some(f) if f.op == op && f.nth == n);
        if !hit {
            return Ok(());
        }
        let f = self.fault.borrow_mut().take().expect("fault checked above");
        if let Some(g) = &f.clear_global {
            if let Some(Value::Dict(d)) = interp.global(g) {
                d.borrow_mut().clear();
            }
        }
        Err(Flow::error(&f.kind, f.message))
    }
}

#[derive(Clone)]
pub struct Tensor {
    /// Empty for a 0-dim tensor.
    pub shape: Vec<usize>,
    pub data: Rc<Vec<f64>>,
    pub device: Rc<str>,
    env: Rc<NdEnv>,
}

impl Tensor {
    fn new(shape: Vec<usize>, data: Vec<f64>, device: &Rc<str>, env: &Rc<NdEnv>) -> Tensor {
        Tensor {
            shape,
            data: Rc::new(data),
            device: device.clone(),
            env: env.clone(),
        }
    }

    /// Same device and env as `self`.
    fn like(&self, shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data, &self.device, &self.env)
    }

    fn scalar(&self, v: f64) -> Tensor {
        self.like(Vec::new(), vec![v])
    }

    fn value(self) -> Value {
        Value::Native(Rc::new(self))
    }

    fn dims(&self) -> String {
        self.shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
    }

    fn matrix(&self, what: &str) -> Result<(usize, usize), Flow> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Flow::error(
                "RuntimeError",
                format!("{what}: expected a 2-D tensor, got {}-D", self.shape.len()),
            )),
        }
    }
}

fn tensor_arg(v: &Value, what: &str) -> Result<Tensor, Flow> {
    if let Value::Native(n) = v {
        if let Some(t) = n.as_any().downcast_ref::<Tensor>() {
            return Ok(t.clone());
        }
    }
    Err(type_error(format!("{what}: expected Tensor, got {}", v.type_name())))
}

fn same_device(a: &Tensor, b: &Tensor) -> Result<(), Flow> {
    if a.device != b.device {
        return Err(Flow::error(
            "RuntimeError",
            format!(
                "Expected all tensors to be on the same device, but found at least two devices, {} and {}!",
                a.device, b.device
            ),
        ));
    }
    Ok(())
}

fn int_arg(v: &Value, what: &str) -> Result<i64, Flow> {
    v.as_int()
        .ok_or_else(|| type_error(format!("{what} must be an integer")))
}

fn float_arg(v: &Value, what: &str) -> Result<f64, Flow> {
    v.as_f64().ok_or_else(|| type_error(format!("{what} must be a number")))
}

fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, Flow> {
    same_device(a, b)?;
    let (n, k) = a.matrix("matmul")?;
    let (k2, m) = b.matrix("matmul")?;
    if k != k2 {
        return Err(Flow::error(
            "RuntimeError",
            format!(
                "mat1 and mat2 shapes cannot be multiplied ({} and {})",
                a.dims(),
                b.dims()
            ),
        ));
    }
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &a.data[i * k..(i + 1) * k];
        for (j, o) in out[i * m..(i + 1) * m].iter_mut().enumerate() {
            *o = row.iter().enumerate().map(|(t, x)| x * b.data[t * m + j]).sum();
        }
    }
    Ok(a.like(vec![n, m], out))
}

fn mse(pred: &Tensor, target: &Tensor) -> Result<f64, Flow> {
    same_device(pred, target)?;
    if pred.shape != target.shape {
        return Err(Flow::error(
            "RuntimeError",
            format!(
                "The size of tensor a ({}) must match the size of tensor b ({})",
                pred.dims(),
                target.dims()
            ),
        ));
    }
    let n = pred.data.len().max(1) as f64;
    Ok(pred
        .data
        .iter()
        .zip(target.data.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// One gradient step of least squares: returns the new weights and the loss.
fn sgd(w: &Tensor, x: &Tensor, y: &Tensor, lr: f64) -> Result<(Tensor, f64), Flow> {
    same_device(w, x)?;
    if x.data.iter().any(|v| !v.is_finite()) {
        return Err(value_error(
            "Input contains NaN, infinity or a value too large for dtype('float64').",
        ));
    }
    let pred = matmul(x, w)?;
    let loss = mse(&pred, y)?;
    let (n, d) = x.matrix("sgd")?;
    let mut grad = vec![0.0; d];
    for i in 0..n {
        let e = 2.0 * (pred.data[i] - y.data[i]) / n as f64;
        for (g, xv) in grad.iter_mut().zip(&x.data[i * d..(i + 1) * d]) {
            *g += e * xv;
        }
    }
    let next = w.data.iter().zip(grad).map(|(wv, g)| wv - lr * g).collect();
    Ok((w.like(w.shape.clone(), next), loss))
}

/// Area under the ROC curve by rank statistics, ties averaged.
pub fn roc_auc(labels: &[i64], scores: &[f64]) -> Result<f64, Flow> {
    if labels.len() != scores.len() {
        return Err(value_error(
            "Found input variables with inconsistent numbers of samples",
        ));
    }
    let pos = labels.iter().filter(|l| **l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(value_error(
            "Only one class present in y_true. ROC AUC score is not defined in that case.",
        ));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = r;
        }
        i = j + 1;
    }
    let rank_sum: f64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(l, _)| **l == 1)
        .map(|(_, r)| r)
        .sum();
    Ok((rank_sum - (pos * (pos + 1)) as f64 / 2.0) / (pos * neg) as f64)
}

fn method(
    name: &str,
    f: impl Fn(&mut Interp, Vec<Value>, Kwargs) -> Result<Value, Flow> + 'static,
) -> Result<Value, Flow> {
    Ok(Builtin::value(name, f))
}

impl NativeObject for Tensor {
    fn type_name(&self) -> &str {
        "Tensor"
    }

    fn repr(&self) -> String {
        if self.shape.is_empty() {
            format!("tensor({})", self.data[0])
        } else {
            format!("tensor(shape=({}), device={})", self.dims(), self.device)
        }
    }

    fn get_attr(&self, _interp: &mut Interp, name: &str) -> Result<Value, Flow> {
        self.clone().attr(name)
    }

    fn get_item(&self, _interp: &mut Interp, index: &Value) -> Result<Value, Flow> {
        let i = int_arg(index, "tensor index")?;
        match self.shape[..] {
            [] => Err(Flow::error(
                "IndexError",
                "invalid index of a 0-dim tensor. Use `tensor.item()` in Python or `tensor.item<T>()` in C++ to convert a 0-dim tensor to a number",
            )),
            [n] => {
                let k = if i < 0 { i + n as i64 } else { i };
                self.data
                    .get(k as usize)
                    .filter(|_| k >= 0)
                    .map(|v| Value::Float(*v))
                    .ok_or_else(|| Flow::error("IndexError", format!("index {i} is out of bounds for dimension 0 with size {n}")))
            }
            [r, c] => {
                let k = if i < 0 { i + r as i64 } else { i };
                if k < 0 || k as usize >= r {
                    return Err(Flow::error(
                        "IndexError",
                        format!("index {i} is out of bounds for dimension 0 with size {r}"),
                    ));
                }
                let k = k as usize;
                Ok(self.like(vec![c], self.data[k * c..(k + 1) * c].to_vec()).value())
            }
            _ => Err(type_error("unsupported tensor rank")),
        }
    }

    fn as_float(&self) -> Option<f64> {
        self.shape.is_empty().then(|| self.data[0])
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

impl Tensor {
    fn attr(self, name: &str) -> Result<Value, Flow> {
        let t = self;
        match name {
            "shape" => Ok(Value::tuple(t.shape.iter().map(|d| Value::Int(*d as i64)).collect())),
            "device" => Ok(Value::str(&t.device)),
            "item" => method("Tensor.item", move |_, a, _| {
                let [] = fixed_args::<0>("item", a)?;
                if t.data.len() != 1 {
                    return Err(value_error(
                        "only one element tensors can be converted to Python scalars",
                    ));
                }
                Ok(Value::Float(t.data[0]))
            }),
            "tolist" => method("Tensor.tolist", move |_, a, _| {
                let [] = fixed_args::<0>("tolist", a)?;
                Ok(match t.shape[..] {
                    [] => Value::Float(t.data[0]),
                    [_] => Value::list(t.data.iter().map(|v| Value::Float(*v)).collect()),
                    [_, c] => Value::list(
                        t.data
                            .chunks(c.max(1))
                            .map(|row| Value::list(row.iter().map(|v| Value::Float(*v)).collect()))
                            .collect(),
                    ),
                    _ => Value::None,
                })
            }),
            "numel" => method("Tensor.numel", move |_, _, _| Ok(Value::Int(t.data.len() as i64))),
            "sum" => method("Tensor.sum", move |_, _, _| Ok(t.scalar(t.data.iter().sum()).value())),
            "mean" => method("Tensor.mean", move |_, _, _| {
                let n = t.data.len().max(1) as f64;
                Ok(t.scalar(t.data.iter().sum::<f64>() / n).value())
            }),
            "t" => method("Tensor.t", move |_, _, _| {
                let (r, c) = t.matrix("t")?;
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        out[j * r + i] = t.data[i * c + j];
                    }
                }
                Ok(t.like(vec![c, r], out).value())
            }),
            "to" => {
                let env = t.env.clone();
                method("Tensor.to", move |interp, a, _| {
                    let [d] = fixed_args::<1>("to", a)?;
                    let d = d
                        .as_str()
                        .ok_or_else(|| type_error("device must be a string"))?
                        .to_string();
                    env.count(interp, "to")?;
                    if env.devices.lock().unwrap().free(&d) == 0 {
                        return Err(Flow::error("RuntimeError", format!("{d} out of memory")));
                    }
                    let mut moved = t.clone();
                    moved.device = Rc::from(d.as_str());
                    Ok(moved.value())
                })
            }
            _ => Err(Flow::error(
                "AttributeError",
                format!("'Tensor' object has no attribute '{name}'"),
            )),
        }
    }
}

/// Device memory held until `free()` or until the object is dropped.
pub struct Workspace {
    devices: Arc<Mutex<Devices>>,
    device: String,
    units: RefCell<u64>,
}

impl Workspace {
    fn release(&self) {
        let units = std::mem::take(&mut *self.units.borrow_mut());
        if units > 0 {
            self.devices.lock().unwrap().release(&self.device, units);
        }
    }
}

impl Drop for Workspace {
    fn drop(&mut self) {
        self.release();
    }
}

impl NativeObject for Workspace {
    fn type_name(&self) -> &str {
        "Workspace"
    }

    fn call_method(&self, _interp: &mut Interp, name: &str, _args: Vec<Value>, _kw: Kwargs) -> Result<Value, Flow> {
        match name {
            "free" => {
                self.release();
                Ok(Value::None)
            }
            "units" => Ok(Value::Int(*self.units.borrow() as i64)),
            _ => Err(Flow::error(
                "AttributeError",
                format!("'Workspace' object has no attribute '{name}'"),
            )),
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// A seeded regression dataset; labels are the sign of the target.
pub struct Dataset {
    x: Vec<f64>,
    y: Vec<f64>,
    n: usize,
    d: usize,
    env: Rc<NdEnv>,
}

impl Dataset {
    fn generate(seed: u64, n: usize, d: usize, env: Rc<NdEnv>) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y = (0..n)
            .map(|i| x[i * d..(i + 1) * d].iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + rng.gen_range(-0.1..0.1))
            .collect();
        Dataset { x, y, n, d, env }
    }

    fn rows(&self, start: usize, size: usize) -> (Vec<f64>, Vec<f64>) {
        let mut xs = Vec::with_capacity(size * self.d);
        let mut ys = Vec::with_capacity(size);
        for k in 0..size {
            let r = (start + k) % self.n;
            xs.extend_from_slice(&self.x[r * self.d..(r + 1) * self.d]);
            ys.push(self.y[r]);
        }
        (xs, ys)
    }
}

impl NativeObject for Dataset {
    fn type_name(&self) -> &str {
        "Dataset"
    }

    fn call_method(&self, _interp: &mut Interp, name: &str, args: Vec<Value>, _kw: Kwargs) -> Result<Value, Flow> {
        match name {
            "batch" => {
                let [i, size, device] = fixed_args::<3>("batch", args)?;
                let (i, size) = (int_arg(&i, "batch index")?, int_arg(&size, "batch size")? as usize);
                let device: Rc<str> = Rc::from(device.as_str().unwrap_or("dev0"));
                let (mut xs, ys) = self.rows(i as usize * size, size);
                if self.env.nan_batches.borrow().contains(&i) {
                    xs[0] = f64::NAN;
                }
                Ok(Value::tuple(vec![
                    Tensor::new(vec![size, self.d], xs, &device, &self.env).value(),
                    Tensor::new(vec![size, 1], ys, &device, &self.env).value(),
                ]))
            }
            "shard" => {
                // validation shards come from the tail of the data
                let [k, size, device] = fixed_args::<3>("shard", args)?;
                let (k, size) = (int_arg(&k, "shard index")?, int_arg(&size, "shard size")? as usize);
                let device: Rc<str> = Rc::from(device.as_str().unwrap_or("dev0"));
                let start = self.n - (k as usize + 1) * size % self.n;
                let (xs, ys) = self.rows(start, size);
                let single = self.env.single_class_shards.borrow().contains(&k);
                let labels = ys
                    .iter()
                    .map(|y| Value::Int(if single || *y > 0.0 { 1 } else { 0 }))
                    .collect();
                Ok(Value::tuple(vec![
                    Tensor::new(vec![size, self.d], xs, &device, &self.env).value(),
                    Tensor::new(vec![size, 1], ys, &device, &self.env).value(),
                    Value::list(labels),
                ]))
            }
            "dim" => Ok(Value::Int(self.d as i64)),
            "__len__" | "len" => Ok(Value::Int(self.n as i64)),
            _ => Err(Flow::error(
                "AttributeError",
                format!("'Dataset' object has no attribute '{name}'"),
            )),
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

fn floats(interp: &mut Interp, v: &Value) -> Result<Vec<f64>, Flow> {
    if let Ok(t) = tensor_arg(v, "") {
        return Ok(t.data.as_ref().clone());
    }
    interp.collect(v)?.iter().map(|x| float_arg(x, "score")).collect()
}

/// Builds the `nd` module bound to `env`.
pub fn module(env: Rc<NdEnv>) -> Value {
    let m = Module::new("nd");
    let dev0: Rc<str> = Rc::from("dev0");
    let (d, e) = (dev0.clone(), env.clone());
    m.func("zeros", move |_, a, _| {
        let [r, c] = fixed_args::<2>("zeros", a)?;
        let (r, c) = (int_arg(&r, "rows")? as usize, int_arg(&c, "cols")? as usize);
        Ok(Tensor::new(vec![r, c], vec![0.0; r * c], &d, &e).value())
    });
    let (d, e) = (dev0, env.clone());
    m.func("randn", move |_, a, _| {
        let [s, r, c] = fixed_args::<3>("randn", a)?;
        let (r, c) = (int_arg(&r, "rows")? as usize, int_arg(&c, "cols")? as usize);
        let mut rng = ChaCha8Rng::seed_from_u64(int_arg(&s, "seed")? as u64);
        Ok(Tensor::new(
            vec![r, c],
            (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            &d,
            &e,
        )
        .value())
    });
    m.func("matmul", |_, a, _| {
        let [x, y] = fixed_args::<2>("matmul", a)?;
        Ok(matmul(&tensor_arg(&x, "matmul")?, &tensor_arg(&y, "matmul")?)?.value())
    });
    m.func("mse", |_, a, _| {
        let [p, t] = fixed_args::<2>("mse", a)?;
        let p = tensor_arg(&p, "mse")?;
        let v = mse(&p, &tensor_arg(&t, "mse")?)?;
        Ok(p.scalar(v).value())
    });
    m.func("sgd", |_, a, _| {
        let [w, x, y, lr] = fixed_args::<4>("sgd", a)?;
        let w = tensor_arg(&w, "sgd")?;
        let (next, loss) = sgd(
            &w,
            &tensor_arg(&x, "sgd")?,
            &tensor_arg(&y, "sgd")?,
            float_arg(&lr, "lr")?,
        )?;
        let loss = w.scalar(loss).value();
        Ok(Value::tuple(vec![next.value(), loss]))
    });
    m.func("isfinite", |_, a, _| {
        let [t] = fixed_args::<1>("isfinite", a)?;
        Ok(Value::Bool(
            tensor_arg(&t, "isfinite")?.data.iter().all(|v| v.is_finite()),
        ))
    });
    m.func("roc_auc", |interp, a, _| {
        let [labels, scores] = fixed_args::<2>("roc_auc", a)?;
        let labels: Vec<i64> = interp
            .collect(&labels)?
            .iter()
            .map(|l| int_arg(l, "label"))
            .collect::<Result<_, _>>()?;
        let scores = floats(interp, &scores)?;
        roc_auc(&labels, &scores).map(Value::Float)
    });
    let e = env.clone();
    m.func("workspace", move |_, a, _| {
        let [d, u] = fixed_args::<2>("workspace", a)?;
        let device = d
            .as_str()
            .ok_or_else(|| type_error("device must be a string"))?
            .to_string();
        let units = int_arg(&u, "units")?.max(0) as u64;
        e.devices
            .lock()
            .unwrap()
            .allocate(&device, units)
            .map_err(|msg| Flow::error("RuntimeError", msg))?;
        Ok(Value::Native(Rc::new(Workspace {
            devices: e.devices.clone(),
            device,
            units: RefCell::new(units),
        })))
    });
    let e = env.clone();
    m.func("save", move |interp, a, _| {
        let [path, t] = fixed_args::<2>("save", a)?;
        let path = path
            .as_str()
            .ok_or_else(|| type_error("path must be a string"))?
            .to_string();
        e.count(interp, "save")?;
        let t = tensor_arg(&t, "save")?;
        let text = serde_json::to_string(&(&t.shape, t.data.as_ref())).map_err(|e| value_error(e.to_string()))?;
        std::fs::write(&path, text).map_err(|err| os_error(err, &path))?;
        Ok(Value::None)
    });
    let e = env.clone();
    m.func("dataset", move |_, a, _| {
        let [s, n, d] = fixed_args::<3>("dataset", a)?;
        let (n, d) = (int_arg(&n, "n")? as usize, int_arg(&d, "d")? as usize);
        if n == 0 || d == 0 {
            return Err(value_error("dataset must be non-empty"));
        }
        Ok(Value::Native(Rc::new(Dataset::generate(
            int_arg(&s, "seed")? as u64,
            n,
            d,
            e.clone(),
        ))))
    });
    let e = env;
    m.func("allocated", move |_, a, _| {
        let [d] = fixed_args::<1>("allocated", a)?;
        Ok(Value::Int(
            e.devices.lock().unwrap().free(d.as_str().unwrap_or("")) as i64
        ))
    });
    Value::Module(Rc::new(m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_matches_pair_counting() {
        let labels = [0, 1, 1, 0, 1, 0, 1];
        let scores = [0.1, 0.4, 0.35, 0.8, 0.7, 0.2, 0.4];
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, li) in labels.iter().enumerate() {
            for (j, lj) in labels.iter().enumerate() {
                if *li == 1 && *lj == 0 {
                    pairs += 1.0;
                    wins += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        assert!((roc_auc(&labels, &scores).unwrap() - wins / pairs).abs() < 1e-12);
    }

    #[test]
    fn single_class_raises() {
        let err = roc_auc(&[1, 1, 1], &[0.2, 0.5, 0.9]).unwrap_err();
        assert!(format!("{err:?}").contains("Only one class present in y_true"));
    }

    #[test]
    fn pool_rejects_overcommit() {
        let d = Devices::with(&[("dev0", 10)]);
        let mut d = d.lock().unwrap();
        d.allocate("dev0", 8).unwrap();
        assert!(d.allocate("dev0", 3).is_err());
        d.release("dev0", 8);
        assert_eq!(d.free("dev0"), 10);
    }
}
