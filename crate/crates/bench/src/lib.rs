//! Fixtures shared by the criterion benches.

use std::cell::RefCell;
use std::rc::Rc;

use insitu::lang::interp::Output;
use insitu::{Interp, Value};

/// A pure-language training loop plus the per-operation probes, each loaded
/// in plain and vaccinated form.
pub const PROGRAM: &str = r#"
import insitu
def train(steps):
    w = [0.0, 0.0, 0.0, 0.0]
    loss = 0.0
    for step in range(steps):
        x = [(step * 3 + j) % 7 - 3 for j in range(4)]
        pred = 0.0
        for j in range(4):
            pred = pred + w[j] * x[j]
        err = pred - (x[0] - x[3])
        for j in range(4):
            w[j] = w[j] - 0.01 * err * x[j]
        loss = loss + err * err
    return loss

def empty(n):
    for i in range(n):
        pass

def printing(n):
    for i in range(n):
        print(i)

def binding(n):
    for i in range(n):
        x = 0

def resolving(n):
    x = 0
    for i in range(n):
        x

v_train = insitu.vaccinate(train)
v_empty = insitu.vaccinate(empty)
v_binding = insitu.vaccinate(binding)
v_resolving = insitu.vaccinate(resolving)
"#;

/// An interpreter with [`PROGRAM`] loaded and output discarded.
pub fn loaded() -> Interp {
    let mut interp = Interp::new();
    interp.output = Output::Writer(Rc::new(RefCell::new(std::io::sink())));
    interp.run_source(PROGRAM).expect("bench program loads");
    interp
}

pub fn call(interp: &mut Interp, name: &str, n: i64) -> Value {
    interp
        .call_global(name, vec![Value::Int(n)])
        .expect("bench function runs")
}
