//! The scenario corpus: seeded training loops over the `nd` module, each with
//! one injected fault and the scripted fix a developer would type.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::update::RecoveryCommand;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    ApiMisuse,
    TensorMismatch,
    ResourceBug,
    Contention,
    PathProblem,
    ExceptionalData,
    RuntimeError,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::ApiMisuse,
        Category::TensorMismatch,
        Category::ResourceBug,
        Category::Contention,
        Category::PathProblem,
        Category::ExceptionalData,
        Category::RuntimeError,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::ApiMisuse => "api-misuse",
            Category::TensorMismatch => "tensor-mismatch",
            Category::ResourceBug => "resource-bug",
            Category::Contention => "contention",
            Category::PathProblem => "path-problem",
            Category::ExceptionalData => "exceptional-data",
            Category::RuntimeError => "runtime-error",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How the fault is armed. Iteration-triggered injectors fire from the
/// iteration probe just before iteration `at` starts.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Injector {
    /// The defect ships in the source; nothing to arm.
    BuggySource,
    RenameFile {
        at: u32,
        from: String,
        to: String,
    },
    NanBatch {
        batch: i64,
    },
    SingleClassShard {
        shard: i64,
    },
    /// The `nth` call of a native op raises, then the op behaves again.
    NthCall {
        op: String,
        nth: u64,
        exception: String,
        message: String,
        /// Global dict emptied right before raising.
        clears: Option<String>,
    },
    /// A sibling takes all but `leave` units of `device` and holds them.
    Contention {
        at: u32,
        device: String,
        leave: u64,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct Scenario {
    pub name: String,
    pub category: Category,
    /// Program text; `@DIR@` is the scenario's scratch directory.
    pub workload: String,
    /// What a developer would rerun after fixing offline.
    pub fixed: String,
    pub injector: Injector,
    pub expected_recovery: Vec<RecoveryCommand>,
    pub recoverable: bool,
    /// Files created in the scratch directory before the run.
    pub files: Vec<(String, String)>,
    pub steps: u32,
    /// Seconds slept per iteration; zero for the scenario suite.
    pub sleep: f64,
}

pub const STEPS: u32 = 200;

const PRELUDE: &str = r#"import nd
import fs
import time
import probe
import insitu
ds = nd.dataset(7, 512, 8)
device = "dev0"
"#;

fn program(body: &str) -> String {
    format!("{PRELUDE}{body}")
}

/// Text of the top-level `def name` in `src`.
pub fn def_text(src: &str, name: &str) -> Option<String> {
    let head = format!("def {name}(");
    let mut lines = src.lines().skip_while(|l| !l.starts_with(&head));
    let first = lines.next()?;
    let mut out = vec![first];
    out.extend(lines.take_while(|l| l.is_empty() || l.starts_with(' ')));
    while out.last().is_some_and(|l| l.trim().is_empty()) {
        out.pop();
    }
    Some(out.join("\n") + "\n")
}

fn patch(src: &str, edits: &[(&str, &str)]) -> String {
    let mut s = src.to_string();
    for (old, new) in edits {
        assert!(s.contains(old), "patch target missing: {old}");
        s = s.replacen(old, new, 1);
    }
    s
}

fn action(code: &str) -> RecoveryCommand {
    RecoveryCommand::Action {
        code: code.into(),
        resume: true,
    }
}

fn surgery(fixed: &str, name: &str) -> RecoveryCommand {
    RecoveryCommand::Surgery {
        source: def_text(fixed, name).expect("surgery target defined"),
        resume: true,
    }
}

struct Case {
    name: &'static str,
    category: Category,
    body: &'static str,
    edits: &'static [(&'static str, &'static str)],
    injector: Injector,
    fix: Fix,
    recoverable: bool,
    files: &'static [(&'static str, &'static str)],
}

enum Fix {
    Pass,
    Action(&'static str),
    Surgery(&'static str),
}

impl Case {
    fn build(self) -> Scenario {
        let workload = program(self.body);
        let fixed = patch(&workload, self.edits);
        let expected_recovery = vec![match self.fix {
            Fix::Pass => RecoveryCommand::Pass,
            Fix::Action(code) => action(code),
            Fix::Surgery(name) => surgery(&fixed, name),
        }];
        Scenario {
            name: self.name.into(),
            category: self.category,
            workload,
            fixed,
            injector: self.injector,
            expected_recovery,
            recoverable: self.recoverable,
            files: self.files.iter().map(|(p, c)| (p.to_string(), c.to_string())).collect(),
            steps: STEPS,
            sleep: 0.0,
        }
    }
}

const EVAL_INDEX: &str = r#"
def evaluate(w, k):
    xv, yv, labels = ds.shard(k, 64, w.device)
    loss = nd.mse(nd.matmul(xv, w), yv)
    return loss[0]

def train(steps):
    w = nd.zeros(ds.dim(), 1).to(device)
    history = []
    for step in range(steps):
        xb, yb = ds.batch(step, 32, device)
        w, loss = nd.sgd(w, xb, yb, 0.1)
        if step % 50 == 49:
            history.append(evaluate(w, step // 50))
        probe.tick(step)
    return history[-1] + loss.item()
"#;

const LOSS_TOLIST: &str = r#"
def train(steps):
    w = nd.zeros(ds.dim(), 1).to(device)
    history = []
    for step in range(steps):
        xb, yb = ds.batch(step, 32, device)
        w, loss = nd.sgd(w, xb, yb, 0.1)
        if step % 50 == 49:
            history.append(loss.tolist()[0])
            print("step", step, "loss", history[-1])
        probe.tick(step)
    return sum(history) / len(history)
"#;

const FEATURES_T: &str = r#"
def features(xv):
    return xv.t()

def evaluate(w, k):
    xv, yv, labels = ds.shard(k, 64, w.device)
    return nd.mse(nd.matmul(features(xv), w), yv).item()

def train(steps):
    w = nd.zeros(ds.dim(), 1).to(device)
    scores = []
    for step in range(steps):
        xb, yb = ds.batch(step, 32, device)
        w, loss = nd.sgd(w, xb, yb, 0.1)
        if step % 50 == 49:
            scores.append(evaluate(w, step // 50))
        probe.tick(step)
    return scores[-1]
"#;

const MATMUL_ORDER: &str = r#"
def train(steps):
    w = nd.zeros(ds.dim(), 1).to(device)
    scores = []
    for step in range(steps):
        xb, yb = ds.batch(step, 32, device)
        w, loss = nd.sgd(w, xb, yb, 0.1)
        if step % 50 == 49:
            xv, yv, labels = ds.shard(step // 50, 64, device)
            pred = nd.matmul(w, xv)
            scores.append(nd.mse(pred, yv).item())
        probe.tick(step)
    return scores[-1] + loss.item()
"#;

const EVAL_WORKSPACE: &str = r#"
def train(steps):
    w = nd.zeros(ds.dim(), 1).to(device)
    eval_units = 4096
    scores = []
    for step in range(steps):
        xb, yb = ds.batch(step, 32, device)
        ws = nd.workspace(device, 64)
        w, loss = nd.sgd(w, xb, yb, 0.1)
        ws.free()
        if step % 50 == 49:
            buf = nd.workspace(device, eval_units)
            xv, yv, labels = ds.shard(step // 50, 64, device)
            scores.append(nd.mse(nd.matmul(xv, w), yv).item())
            buf.free()
        probe.tick(step)
    return scores[-1]
"#;

const PLAN_MEMORY: &str = r#"
def plan_memory(batch):
    return batch * batch * 4

def train(steps):
    w = nd.zeros(ds.dim(), 1).to(device)
    for step in range(steps):
        batch = 16 if step < 100 else 32
        xb, yb = ds.batch(step, batch, device)
        ws = nd.workspace(device, plan_memory(batch))
        w, loss = nd.sgd(w, xb, yb, 0.1)
        ws.free()
        probe.tick(step)
    return loss.item()
"#;

const LOCAL_DEVICE: &str = r#"
def train(steps):
    dev = device
    w = nd.zeros(ds.dim(), 1).to(dev)
    for step in range(steps):
        xb, yb = ds.batch(step, 32, dev)
        ws = nd.workspace(dev, 64)
        w, loss = nd.sgd(w, xb, yb, 0.1)
        ws.free()
        probe.tick(step)
    return loss.item()
"#;

const MODEL_DEVICE: &str = r#"
model = {"w": nd.zeros(ds.dim(), 1).to(device), "best": 1000000.0}

def train(steps):
    for step in range(steps):
        xb, yb = ds.batch(step, 32, device)
        ws = nd.workspace(device, 64)
        model["w"], loss = nd.sgd(model["w"], xb, yb, 0.1)
        ws.free()
        model["best"] = min(model["best"], loss.item())
        probe.tick(step)
    return model["best"] + loss.item()
"#;

const SCALE_FILE: &str = r#"
data_dir = "@DIR@/data"

def train(steps):
    w = nd.zeros(ds.dim(), 1).to(device)
    lr = 0.1
    for step in range(steps):
        if step % 40 == 0:
            lr = float(fs.read_text(fs.join(data_dir, "lr.txt")).strip()) / (1 + step // 40)
        xb, yb = ds.batch(step, 32, device)
        w, loss = nd.sgd(w, xb, yb, lr)
        probe.tick(step)
    return loss.item()
"#;

const LABEL_FILE: &str = r#"
data_dir = "@DIR@/data"

def train(steps):
    w = nd.zeros(ds.dim(), 1).to(device)
    for step in range(steps):
        xb, yb = ds.batch(step, 32, device)
        w, loss = nd.sgd(w, xb, yb, 0.1)
        if step % 50 == 49:
            names = fs.read_text(fs.join(data_dir, "labels.txt")).split()
            print("eval", names[step // 50 % len(names)], loss.item())
        probe.tick(step)
    return loss.item()
"#;

const VALID_AUC: &str = r#"
def train(steps):
    w = nd.zeros(ds.dim(), 1).to(device)
    aucs = []
    for step in range(steps):
        xb, yb = ds.batch(step, 32, device)
        w, loss = nd.sgd(w, xb, yb, 0.1)
        if step % 50 == 49:
            xv, yv, labels = ds.shard(step // 50, 64, device)
            aucs.append(nd.roc_auc(labels, nd.matmul(xv, w)))
        probe.tick(step)
    return sum(aucs) / len(aucs) + loss.item()
"#;

const NAN_BATCH: &str = r#"
def train(steps):
    w = nd.zeros(ds.dim(), 1).to(device)
    seen = 0
    for step in range(steps):
        xb, yb = ds.batch(step, 32, device)
        w, loss = nd.sgd(w, xb, yb, 0.1)
        seen = seen + 1
        probe.tick(step)
    return loss.item() + seen
"#;

const TRANSFER: &str = r#"
def train(steps):
    w = nd.zeros(ds.dim(), 1).to(device)
    for step in range(steps):
        xb, yb = ds.batch(step, 32, device)
        xb = xb.to(device)
        w, loss = nd.sgd(w, xb, yb, 0.1)
        time.sleep(@SLEEP@)
        probe.tick(step)
    return loss.item()
"#;

const CHECKPOINT: &str = r#"
model = {"w": nd.zeros(ds.dim(), 1).to(device)}

def train(steps):
    for step in range(steps):
        xb, yb = ds.batch(step, 32, device)
        model["w"], loss = nd.sgd(model["w"], xb, yb, 0.1)
        if step % 25 == 24:
            nd.save(fs.join("@DIR@", "ckpt.json"), model["w"])
        probe.tick(step)
    return loss.item()
"#;

fn nth_call(op: &str, nth: u64, exception: &str, message: &str, clears: Option<&str>) -> Injector {
    Injector::NthCall {
        op: op.into(),
        nth,
        exception: exception.into(),
        message: message.into(),
        clears: clears.map(str::to_string),
    }
}

/// Every registered scenario, recoverable ones first.
pub fn all() -> Vec<Scenario> {
    use Category::*;
    let lr_file: &[(&str, &str)] = &[("data/lr.txt", "0.2\n")];
    let label_file: &[(&str, &str)] = &[("data/labels.txt", "cat dog bird fish\n")];
    let cases = vec![
        Case {
            name: "api-misuse-eval-index",
            category: ApiMisuse,
            body: EVAL_INDEX,
            edits: &[("return loss[0]", "return loss.item()")],
            injector: Injector::BuggySource,
            fix: Fix::Surgery("evaluate"),
            recoverable: true,
            files: &[],
        },
        Case {
            name: "api-misuse-loss-tolist",
            category: ApiMisuse,
            body: LOSS_TOLIST,
            edits: &[("history.append(loss.tolist()[0])", "history.append(loss.item())")],
            injector: Injector::BuggySource,
            fix: Fix::Surgery("train"),
            recoverable: true,
            files: &[],
        },
        Case {
            name: "tensor-mismatch-features",
            category: TensorMismatch,
            body: FEATURES_T,
            edits: &[("return xv.t()", "return xv")],
            injector: Injector::BuggySource,
            fix: Fix::Surgery("features"),
            recoverable: true,
            files: &[],
        },
        Case {
            name: "tensor-mismatch-matmul-order",
            category: TensorMismatch,
            body: MATMUL_ORDER,
            edits: &[("pred = nd.matmul(w, xv)", "pred = nd.matmul(xv, w)")],
            injector: Injector::BuggySource,
            fix: Fix::Surgery("train"),
            recoverable: true,
            files: &[],
        },
        Case {
            name: "resource-bug-eval-buffer",
            category: ResourceBug,
            body: EVAL_WORKSPACE,
            edits: &[("eval_units = 4096", "eval_units = 256")],
            injector: Injector::BuggySource,
            fix: Fix::Action("eval_units = 256"),
            recoverable: true,
            files: &[],
        },
        Case {
            name: "resource-bug-plan-memory",
            category: ResourceBug,
            body: PLAN_MEMORY,
            edits: &[("return batch * batch * 4", "return batch * 16")],
            injector: Injector::BuggySource,
            fix: Fix::Surgery("plan_memory"),
            recoverable: true,
            files: &[],
        },
        Case {
            name: "contention-local-device",
            category: Contention,
            body: LOCAL_DEVICE,
            edits: &[("dev = device", "dev = \"dev1\"")],
            injector: Injector::Contention {
                at: 80,
                device: "dev0".into(),
                leave: 16,
            },
            fix: Fix::Action("dev = \"dev1\"\nw = w.to(dev)\nxb = xb.to(dev)\nyb = yb.to(dev)"),
            recoverable: true,
            files: &[],
        },
        Case {
            name: "contention-model-dict",
            category: Contention,
            body: MODEL_DEVICE,
            edits: &[("device = \"dev0\"", "device = \"dev1\"")],
            injector: Injector::Contention {
                at: 120,
                device: "dev0".into(),
                leave: 16,
            },
            fix: Fix::Action(
                "device = \"dev1\"\nmodel[\"w\"] = model[\"w\"].to(device)\nxb = xb.to(device)\nyb = yb.to(device)",
            ),
            recoverable: true,
            files: &[],
        },
        Case {
            name: "path-problem-moved-dir",
            category: PathProblem,
            body: SCALE_FILE,
            edits: &[("data_dir = \"@DIR@/data\"", "data_dir = \"@DIR@/data_v2\"")],
            injector: Injector::RenameFile {
                at: 120,
                from: "data".into(),
                to: "data_v2".into(),
            },
            fix: Fix::Action("data_dir = \"@DIR@/data_v2\""),
            recoverable: true,
            files: lr_file,
        },
        Case {
            name: "path-problem-renamed-file",
            category: PathProblem,
            body: LABEL_FILE,
            edits: &[("\"labels.txt\"", "\"labels.csv\"")],
            injector: Injector::RenameFile {
                at: 100,
                from: "data/labels.txt".into(),
                to: "data/labels.csv".into(),
            },
            fix: Fix::Surgery("train"),
            recoverable: true,
            files: label_file,
        },
        Case {
            name: "exceptional-data-single-class",
            category: ExceptionalData,
            body: VALID_AUC,
            edits: &[(
                "            aucs.append(nd.roc_auc(labels, nd.matmul(xv, w)))",
                "            if min(labels) != max(labels):\n                aucs.append(nd.roc_auc(labels, nd.matmul(xv, w)))",
            )],
            injector: Injector::SingleClassShard { shard: 2 },
            fix: Fix::Surgery("train"),
            recoverable: true,
            files: &[],
        },
        Case {
            name: "exceptional-data-nan-batch",
            category: ExceptionalData,
            body: NAN_BATCH,
            edits: &[(
                "        w, loss = nd.sgd(w, xb, yb, 0.1)\n        seen = seen + 1",
                "        if nd.isfinite(xb):\n            w, loss = nd.sgd(w, xb, yb, 0.1)\n            seen = seen + 1",
            )],
            injector: Injector::NanBatch { batch: 130 },
            fix: Fix::Surgery("train"),
            recoverable: true,
            files: &[],
        },
        Case {
            name: "runtime-error-transfer",
            category: RuntimeError,
            body: TRANSFER,
            edits: &[],
            injector: nth_call("to", 78, "RuntimeError", "device error: an illegal memory access was encountered", None),
            fix: Fix::Pass,
            recoverable: true,
            files: &[],
        },
        Case {
            name: "runtime-error-checkpoint",
            category: RuntimeError,
            body: CHECKPOINT,
            edits: &[],
            injector: nth_call("save", 3, "OSError", "[Errno 5] Input/output error", None),
            fix: Fix::Pass,
            recoverable: true,
            files: &[],
        },
        Case {
            name: "runtime-error-state-wiped",
            category: RuntimeError,
            body: CHECKPOINT,
            edits: &[],
            injector: nth_call(
                "save",
                3,
                "RuntimeError",
                "checkpoint writer failed after releasing the state dict",
                Some("model"),
            ),
            fix: Fix::Pass,
            recoverable: false,
            files: &[],
        },
    ];
    cases
        .into_iter()
        .map(Case::build)
        .map(|mut s| {
            s.workload = s.workload.replace("@SLEEP@", "0");
            s.fixed = s.fixed.replace("@SLEEP@", "0");
            s
        })
        .collect()
}

pub fn find(name: &str) -> Option<Scenario> {
    all().into_iter().find(|s| s.name == name)
}

/// The restore-time loop: `steps` iterations of about `sleep` seconds each,
/// with a transient transfer fault in iteration `crash_at`, fixed by `pass`.
pub fn restore_loop(steps: u32, crash_at: u32, sleep: f64) -> Scenario {
    let workload = program(TRANSFER).replace("@SLEEP@", &sleep.to_string());
    Scenario {
        name: format!("restore-loop-{crash_at}"),
        category: Category::RuntimeError,
        fixed: workload.clone(),
        workload,
        // the entry moves the initial weights once, then one call per iteration
        injector: nth_call(
            "to",
            crash_at as u64 + 2,
            "RuntimeError",
            "device error: transfer timed out",
            None,
        ),
        expected_recovery: vec![RecoveryCommand::Pass],
        recoverable: true,
        files: Vec::new(),
        steps,
        sleep,
    }
}

/// Crash-free toy loop used for overhead measurement; each iteration spends
/// most of its time in native numerics, as a training step would.
pub fn toy_loop(steps: u32) -> Scenario {
    let body = r#"
big = nd.dataset(11, 4096, 48)
proj = nd.randn(5, 48, 48)

def train(steps):
    w = nd.zeros(big.dim(), 1).to(device)
    total = 0.0
    for step in range(steps):
        xb, yb = big.batch(step, 192, device)
        feats = nd.matmul(xb, proj)
        w, loss = nd.sgd(w, feats, yb, 0.001)
        total = total + loss.item()
        probe.tick(step)
    return total
"#;
    let workload = program(body);
    Scenario {
        name: "toy-loop".into(),
        category: Category::RuntimeError,
        fixed: workload.clone(),
        workload,
        injector: Injector::BuggySource,
        expected_recovery: Vec::new(),
        recoverable: true,
        files: Vec::new(),
        steps,
        sleep: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn def_text_stops_at_next_top_level_line() {
        let src = "x = 1\ndef f(a):\n    return a\n\n    \ny = 2\ndef g():\n    pass\n";
        assert_eq!(def_text(src, "f").unwrap(), "def f(a):\n    return a\n");
        assert_eq!(def_text(src, "g").unwrap(), "def g():\n    pass\n");
        assert!(def_text(src, "h").is_none());
    }

    #[test]
    fn registry_covers_every_category_twice() {
        let all = all();
        for c in Category::ALL {
            let n = all.iter().filter(|s| s.category == c && s.recoverable).count();
            assert!(n >= 2, "{c}: {n}");
        }
        assert_eq!(all.iter().filter(|s| !s.recoverable).count(), 1);
        for s in &all {
            crate::lang::parse_module(&s.workload).unwrap();
            crate::lang::parse_module(&s.fixed).unwrap();
        }
    }
}
