//! Runs scenarios under each recovery mode and measures restore time,
//! overhead and the per-operation cost of vaccination.

use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::rc::Rc;
use std::str::FromStr;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::scenarios::{Category, Injector, Scenario};
use super::tensor::{self, Devices, Fault, NdEnv};
use crate::lang::interp::Output;
use crate::lang::natives::fixed_args;
use crate::lang::value::Module;
use crate::runtime::{CrashSite, Decision, RecoveryHandler};
use crate::update::{Policy, RecoverySession, ScriptSource};
use crate::{Granularity, Interp, Value};

/// Units per device; the spare `dev1` is always provisioned.
pub const DEVICE_CAPACITY: u64 = 2048;
/// Retries granted per crash site in pass-only mode.
pub const PASS_RETRIES: u32 = 3;
/// Standard deviation of per-repetition overhead above which a measurement is unstable.
pub const UNSTABLE_STDDEV: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Restart,
    InSitu,
    PassOnly,
    NoFd,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Restart, Mode::InSitu, Mode::PassOnly, Mode::NoFd];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Restart => "restart",
            Mode::InSitu => "in-situ",
            Mode::PassOnly => "pass-only",
            Mode::NoFd => "no-fd",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Mode, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode '{s}' (expected restart, in-situ, pass-only or no-fd)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Recovered,
    Failed,
    NotApplicable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub category: Category,
    pub mode: Mode,
    pub restore_time_s: Option<f64>,
    pub overhead_fraction: Option<f64>,
    pub outcome: Outcome,
    pub final_metric: Option<f64>,
    pub crash_iteration: Option<u32>,
    #[serde(default)]
    pub detail: String,
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("scenario setup failed: {0}")]
    Setup(#[from] std::io::Error),
    #[error("injector failed: {0}")]
    Injector(String),
    #[error("injected fault never fired in {0}")]
    NoCrash(String),
    #[error("workload does not define a numeric `result`: {0}")]
    Metric(String),
}

// ----- environment -------------------------------------------------------

enum SiblingMsg {
    Take(String, u64),
    Stop,
}

/// A competing job that grabs device memory when told and keeps it.
struct Sibling {
    tx: mpsc::Sender<SiblingMsg>,
    ack: mpsc::Receiver<Result<(), String>>,
    handle: Option<thread::JoinHandle<()>>,
}

impl Sibling {
    fn spawn(devices: std::sync::Arc<std::sync::Mutex<Devices>>) -> Sibling {
        let (tx, rx) = mpsc::channel();
        let (ack_tx, ack) = mpsc::channel();
        let handle = thread::spawn(move || {
            let mut held: Vec<(String, u64)> = Vec::new();
            while let Ok(msg) = rx.recv() {
                match msg {
                    SiblingMsg::Take(device, leave) => {
                        let mut d = devices.lock().unwrap();
                        let take = d.free(&device).saturating_sub(leave);
                        let r = d.allocate(&device, take);
                        if r.is_ok() {
                            held.push((device, take));
                        }
                        let _ = ack_tx.send(r);
                    }
                    SiblingMsg::Stop => break,
                }
            }
            let mut d = devices.lock().unwrap();
            for (device, units) in held {
                d.release(&device, units);
            }
        });
        Sibling {
            tx,
            ack,
            handle: Some(handle),
        }
    }

    fn take(&self, device: &str, leave: u64) -> Result<(), String> {
        self.tx
            .send(SiblingMsg::Take(device.to_string(), leave))
            .map_err(|e| e.to_string())?;
        self.ack.recv().map_err(|e| e.to_string())?
    }
}

impl Drop for Sibling {
    fn drop(&mut self) {
        let _ = self.tx.send(SiblingMsg::Stop);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

enum Arm {
    Rename(PathBuf, PathBuf),
    Contend(String, u64),
}

/// The iteration-counter probe: `probe.tick(i)` at the end of iteration `i`.
#[derive(Default)]
struct Probe {
    ticks: RefCell<Vec<(u32, Instant)>>,
    armed: RefCell<Option<(u32, Arm)>>,
    sibling: RefCell<Option<Sibling>>,
    failure: RefCell<Option<String>>,
}

impl Probe {
    fn tick(&self, i: u32) {
        self.ticks.borrow_mut().push((i, Instant::now()));
        self.fire_if(i + 1);
    }

    fn fire_if(&self, next: u32) {
        let due = matches!(&*self.armed.borrow(), Some((at, _)) if *at == next);
        if !due {
            return;
        }
        let (_, arm) = self.armed.borrow_mut().take().expect("checked above");
        let r = match arm {
            Arm::Rename(from, to) => std::fs::rename(&from, &to).map_err(|e| format!("rename {}: {e}", from.display())),
            Arm::Contend(device, leave) => match &*self.sibling.borrow() {
                Some(s) => s.take(&device, leave),
                None => Err("no sibling".into()),
            },
        };
        if let Err(e) = r {
            *self.failure.borrow_mut() = Some(e);
        }
    }

    /// Next iteration to start, judged from completed ones.
    fn next_iteration(&self) -> u32 {
        self.ticks.borrow().last().map_or(0, |(i, _)| i + 1)
    }

    fn finished(&self, iteration: u32, after: Instant) -> Option<Instant> {
        self.ticks
            .borrow()
            .iter()
            .find(|(i, t)| *i == iteration && *t >= after)
            .map(|(_, t)| *t)
    }

    fn module(self: &Rc<Self>) -> Value {
        let m = Module::new("probe");
        let p = self.clone();
        m.func("tick", move |_, a, _| {
            let [i] = fixed_args::<1>("tick", a)?;
            p.tick(i.as_int().unwrap_or(0).max(0) as u32);
            Ok(Value::None)
        });
        Value::Module(Rc::new(m))
    }
}

/// State a scenario's runs share: scratch files, devices, armed faults.
struct Env {
    dir: tempfile::TempDir,
    nd: Rc<NdEnv>,
    probe: Rc<Probe>,
}

impl Env {
    fn new(s: &Scenario, armed: bool) -> Result<Env, HarnessError> {
        let dir = tempfile::tempdir()?;
        for (rel, content) in &s.files {
            let p = dir.path().join(rel);
            if let Some(parent) = p.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(p, content)?;
        }
        let devices = Devices::with(&[("dev0", DEVICE_CAPACITY), ("dev1", DEVICE_CAPACITY)]);
        let nd = NdEnv::new(devices.clone());
        let probe = Rc::new(Probe::default());
        if armed {
            match &s.injector {
                Injector::BuggySource => {}
                Injector::RenameFile { at, from, to } => {
                    *probe.armed.borrow_mut() = Some((*at, Arm::Rename(dir.path().join(from), dir.path().join(to))));
                }
                Injector::NanBatch { batch } => {
                    nd.nan_batches.borrow_mut().insert(*batch);
                }
                Injector::SingleClassShard { shard } => {
                    nd.single_class_shards.borrow_mut().insert(*shard);
                }
                Injector::NthCall {
                    op,
                    nth,
                    exception,
                    message,
                    clears,
                } => {
                    *nd.fault.borrow_mut() = Some(Fault {
                        op: op.clone(),
                        nth: *nth,
                        kind: exception.clone(),
                        message: message.clone(),
                        clear_global: clears.clone(),
                    });
                }
                Injector::Contention { at, device, leave } => {
                    *probe.sibling.borrow_mut() = Some(Sibling::spawn(devices));
                    *probe.armed.borrow_mut() = Some((*at, Arm::Contend(device.clone(), *leave)));
                }
            }
            probe.fire_if(0);
        }
        Ok(Env { dir, nd, probe })
    }

    fn text(&self, s: &str) -> String {
        s.replace("@DIR@", &self.dir.path().to_string_lossy())
    }

    fn interp(&self, gran: Granularity) -> Interp {
        let mut interp = Interp::new();
        interp.output = Output::Writer(Rc::new(RefCell::new(std::io::sink())));
        interp.host.granularity = gran;
        interp.register_module("nd", tensor::module(self.nd.clone()));
        interp.register_module("probe", self.probe.module());
        interp
    }

    fn check_injector(&self) -> Result<(), HarnessError> {
        match self.probe.failure.borrow_mut().take() {
            Some(e) => Err(HarnessError::Injector(e)),
            None => Ok(()),
        }
    }
}

fn setup_source(src: &str, vaccinate: bool) -> String {
    if vaccinate {
        format!("{src}\ntrain = insitu.vaccinate(train)\n")
    } else {
        src.to_string()
    }
}

fn metric(interp: &Interp) -> Result<f64, HarnessError> {
    interp
        .global("result")
        .and_then(|v| v.as_f64())
        .ok_or_else(|| HarnessError::Metric("missing after run".into()))
}

struct Exec {
    result: Result<f64, String>,
    ended: Instant,
}

fn execute(
    env: &Env,
    src: &str,
    steps: u32,
    gran: Granularity,
    vaccinate: bool,
    handler: Option<Box<dyn RecoveryHandler>>,
) -> Exec {
    env.probe.ticks.borrow_mut().clear();
    let mut interp = env.interp(gran);
    interp.host.handler = handler;
    let program = format!("{}result = train({steps})\n", setup_source(&env.text(src), vaccinate));
    let run = interp.run_source(&program);
    let ended = Instant::now();
    interp.host.handler = None;
    let result = match run {
        Ok(()) => metric(&interp).map_err(|e| e.to_string()),
        Err(e) => Err(e.to_string()),
    };
    Exec { result, ended }
}

/// Records when the first crash was intercepted and which iteration it hit.
struct Timed<H> {
    inner: H,
    probe: Rc<Probe>,
    first: Rc<Cell<Option<(Instant, u32)>>>,
}

impl<H: RecoveryHandler> RecoveryHandler for Timed<H> {
    fn on_crash(&mut self, interp: &mut Interp, site: &CrashSite) -> Decision {
        if self.first.get().is_none() {
            self.first.set(Some((Instant::now(), self.probe.next_iteration())));
        }
        self.inner.on_crash(interp, site)
    }
}

fn report(s: &Scenario, mode: Mode) -> RunReport {
    RunReport {
        scenario: s.name.clone(),
        category: s.category,
        mode,
        restore_time_s: None,
        overhead_fraction: None,
        outcome: Outcome::Failed,
        final_metric: None,
        crash_iteration: None,
        detail: String::new(),
    }
}

/// Runs the workload with its fault armed and recovers it as `mode` dictates.
pub fn run_scenario(s: &Scenario, mode: Mode) -> Result<RunReport, HarnessError> {
    let env = Env::new(s, true)?;
    let mut rep = report(s, mode);
    if mode == Mode::Restart {
        let crashed = execute(&env, &s.workload, s.steps, Granularity::Cells, false, None);
        env.check_injector()?;
        let Err(err) = crashed.result else {
            return Err(HarnessError::NoCrash(s.name.clone()));
        };
        let (t0, k) = (crashed.ended, env.probe.next_iteration());
        let rerun = execute(&env, &s.fixed, s.steps, Granularity::Cells, false, None);
        env.check_injector()?;
        rep.crash_iteration = Some(k);
        rep.restore_time_s = env.probe.finished(k, t0).map(|t| (t - t0).as_secs_f64());
        match rerun.result {
            Ok(m) => {
                rep.outcome = Outcome::Recovered;
                rep.final_metric = Some(m);
                rep.detail = format!("restarted after: {}", first_line(&err));
            }
            Err(e) => rep.detail = first_line(&e),
        }
        return Ok(rep);
    }
    let (gran, policy, commands) = match mode {
        Mode::InSitu => (Granularity::Cells, Policy::Commands, s.expected_recovery.clone()),
        Mode::NoFd => (Granularity::Statements, Policy::Commands, s.expected_recovery.clone()),
        _ => (Granularity::Cells, Policy::PassOnly(PASS_RETRIES), Vec::new()),
    };
    let commands = commands.into_iter().map(|c| substitute(c, &env)).collect();
    let session = Rc::new(RefCell::new(
        RecoverySession::new(ScriptSource::new(commands)).with_policy(policy),
    ));
    let first = Rc::new(Cell::new(None));
    let handler = Timed {
        inner: session.clone(),
        probe: env.probe.clone(),
        first: first.clone(),
    };
    let run = execute(&env, &s.workload, s.steps, gran, true, Some(Box::new(handler)));
    env.check_injector()?;
    let Some((t0, k)) = first.get() else {
        return Err(HarnessError::NoCrash(s.name.clone()));
    };
    rep.crash_iteration = Some(k);
    rep.restore_time_s = env.probe.finished(k, t0).map(|t| (t - t0).as_secs_f64());
    let session = session.borrow();
    match run.result {
        Ok(m) => {
            rep.outcome = Outcome::Recovered;
            rep.final_metric = Some(m);
            rep.detail = format!("{} crash(es) handled", session.records.len());
        }
        Err(e) => {
            rep.restore_time_s = None;
            let errors: Vec<&str> = session
                .records
                .iter()
                .flat_map(|r| r.errors.iter().map(String::as_str))
                .collect();
            rep.detail = match errors.first() {
                Some(first) => format!("{}; {}", first_line(&e), first),
                None => first_line(&e),
            };
        }
    }
    let _ = run.ended;
    Ok(rep)
}

fn substitute(cmd: crate::update::RecoveryCommand, env: &Env) -> crate::update::RecoveryCommand {
    use crate::update::RecoveryCommand::*;
    match cmd {
        Pass => Pass,
        Action { code, resume } => Action {
            code: env.text(&code),
            resume,
        },
        Surgery { source, resume } => Surgery {
            source: env.text(&source),
            resume,
        },
    }
}

fn first_line(s: &str) -> String {
    s.lines().last().unwrap_or("").trim().to_string()
}

/// `run_scenario` on its own thread; a run that outlives `timeout` is failed.
pub fn run_scenario_within(s: &Scenario, mode: Mode, timeout: Duration) -> Result<RunReport, HarnessError> {
    let (tx, rx) = mpsc::channel();
    let owned = s.clone();
    thread::spawn(move || {
        let _ = tx.send(run_scenario(&owned, mode));
    });
    match rx.recv_timeout(timeout) {
        Ok(r) => r,
        Err(_) => {
            let mut rep = report(s, mode);
            rep.detail = format!("timed out after {:.0} s", timeout.as_secs_f64());
            Ok(rep)
        }
    }
}

/// Final metric with nothing injected; a defect that ships in the source
/// counts as injected, so those scenarios run their patched variant.
pub fn run_clean(s: &Scenario) -> Result<f64, HarnessError> {
    let env = Env::new(s, false)?;
    let src = match s.injector {
        Injector::BuggySource => &s.fixed,
        _ => &s.workload,
    };
    let out = execute(&env, src, s.steps, Granularity::Cells, false, None);
    out.result.map_err(HarnessError::Metric)
}

// ----- overhead ----------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct OverheadReport {
    pub original_s: Vec<f64>,
    pub vaccinated_s: Vec<f64>,
    pub fractions: Vec<f64>,
    pub overhead_fraction: f64,
    pub unstable: bool,
}

/// Number of alternating slices each repetition is cut into.
pub const OVERHEAD_SLICES: u32 = 20;

fn loaded(env: &Env, s: &Scenario, vaccinate: bool) -> Result<Interp, HarnessError> {
    let mut interp = env.interp(Granularity::Cells);
    interp
        .run_source(&setup_source(&env.text(&s.fixed), vaccinate))
        .map_err(|e| HarnessError::Metric(e.to_string()))?;
    Ok(interp)
}

fn time_call(interp: &mut Interp, steps: u32) -> Result<f64, HarnessError> {
    let start = Instant::now();
    interp
        .call_global("train", vec![Value::Int(steps as i64)])
        .map_err(|e| HarnessError::Metric(e.to_string()))?;
    Ok(start.elapsed().as_secs_f64())
}

/// Mean of (T_e - T_o) / T_o over repetitions. Within a repetition both
/// programs run the workload in alternating slices, so machine noise lands
/// on both sides alike instead of on whichever ran during a busy moment.
pub fn measure_overhead(s: &Scenario, reps: u32) -> Result<OverheadReport, HarnessError> {
    let env = Env::new(s, false)?;
    let mut original = loaded(&env, s, false)?;
    let mut vaccinated = loaded(&env, s, true)?;
    let slice = (s.steps / OVERHEAD_SLICES).max(1);
    time_call(&mut original, slice)?;
    time_call(&mut vaccinated, slice)?;
    let (mut o, mut e) = (Vec::new(), Vec::new());
    for _ in 0..reps {
        let (mut to, mut te) = (0.0, 0.0);
        for k in 0..OVERHEAD_SLICES {
            if k % 2 == 0 {
                to += time_call(&mut original, slice)?;
                te += time_call(&mut vaccinated, slice)?;
            } else {
                te += time_call(&mut vaccinated, slice)?;
                to += time_call(&mut original, slice)?;
            }
        }
        o.push(to);
        e.push(te);
    }
    let fractions: Vec<f64> = o.iter().zip(&e).map(|(o, e)| (e - o) / o).collect();
    let n = fractions.len().max(1) as f64;
    let mean = fractions.iter().sum::<f64>() / n;
    let var = fractions.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n;
    Ok(OverheadReport {
        original_s: o,
        vaccinated_s: e,
        fractions,
        overhead_fraction: mean,
        unstable: var.sqrt() > UNSTABLE_STDDEV,
    })
}

// ----- microbenchmarks ---------------------------------------------------

const MICRO: &str = r#"
import insitu
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

v_empty = insitu.vaccinate(empty)
v_binding = insitu.vaccinate(binding)
v_resolving = insitu.vaccinate(resolving)
"#;

/// Per-operation cost in nanoseconds.
#[derive(Debug, Clone, Serialize)]
pub struct Microbench {
    pub iterations: u32,
    /// One `print` statement writing to a real file descriptor.
    pub print_ns: f64,
    pub barrier_ns: f64,
    pub bind_ns: f64,
    pub resolve_ns: f64,
}

impl Microbench {
    pub fn ratios(&self) -> [(&'static str, f64); 3] {
        [
            ("barrier", self.barrier_ns / self.print_ns),
            ("bind", self.bind_ns / self.print_ns),
            ("resolve", self.resolve_ns / self.print_ns),
        ]
    }
}

/// Each figure is the difference of two loops, taking the fastest of `reps`.
pub fn microbench(iterations: u32, reps: u32) -> Result<Microbench, HarnessError> {
    let mut interp = Interp::new();
    let sink = std::fs::OpenOptions::new().write(true).open(null_device())?;
    interp.output = Output::Writer(Rc::new(RefCell::new(sink)));
    interp
        .run_source(MICRO)
        .map_err(|e| HarnessError::Metric(e.to_string()))?;
    let mut best = BTreeMap::new();
    for _ in 0..reps.max(1) {
        for name in ["empty", "printing", "v_empty", "v_binding", "v_resolving"] {
            let start = Instant::now();
            interp
                .call_global(name, vec![Value::Int(iterations as i64)])
                .map_err(|e| HarnessError::Metric(e.to_string()))?;
            let t = start.elapsed().as_secs_f64() * 1e9 / iterations as f64;
            let slot = best.entry(name).or_insert(f64::INFINITY);
            *slot = f64::min(*slot, t);
        }
    }
    let b = |n: &str| best[n];
    Ok(Microbench {
        iterations,
        print_ns: b("printing") - b("empty"),
        barrier_ns: (b("v_empty") - b("empty")).max(0.0),
        bind_ns: (b("v_binding") - b("v_empty")).max(0.0),
        resolve_ns: (b("v_resolving") - b("v_empty")).max(0.0),
    })
}

fn null_device() -> &'static str {
    if cfg!(windows) {
        "NUL"
    } else {
        "/dev/null"
    }
}

// ----- restore time ------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct RestorePoint {
    pub crash_at: u32,
    pub in_situ: RunReport,
    pub restart: RunReport,
}

impl RestorePoint {
    pub fn speedup(&self) -> Option<f64> {
        Some(self.restart.restore_time_s? / self.in_situ.restore_time_s?)
    }
}

/// Both modes at every crash point, all on parallel threads: the loop mostly
/// sleeps, so runs do not disturb each other's timings.
pub fn restore_experiment(steps: u32, sleep: f64, points: &[u32]) -> Result<Vec<RestorePoint>, HarnessError> {
    let handles: Vec<_> = points
        .iter()
        .flat_map(|&k| {
            [Mode::InSitu, Mode::Restart]
                .map(|mode| thread::spawn(move || run_scenario(&super::scenarios::restore_loop(steps, k, sleep), mode)))
        })
        .collect();
    let mut results = Vec::new();
    for h in handles {
        results.push(
            h.join()
                .map_err(|_| HarnessError::Injector("restore run panicked".into()))??,
        );
    }
    let mut it = results.into_iter();
    Ok(points
        .iter()
        .map(|&k| RestorePoint {
            crash_at: k,
            in_situ: it.next().expect("two runs per point"),
            restart: it.next().expect("two runs per point"),
        })
        .collect())
}

// ----- reporting ---------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub runs: Vec<RunReport>,
    /// RT(restart) / RT(in-situ) per scenario where both were measured.
    pub speedup: BTreeMap<String, f64>,
    /// Recovered and total cases per mode and category.
    pub success: BTreeMap<String, BTreeMap<String, (u32, u32)>>,
}

pub fn summarize(reports: &[RunReport]) -> Summary {
    let mut speedup = BTreeMap::new();
    for r in reports.iter().filter(|r| r.mode == Mode::InSitu) {
        let restart = reports
            .iter()
            .find(|o| o.mode == Mode::Restart && o.scenario == r.scenario)
            .and_then(|o| o.restore_time_s);
        if let (Some(a), Some(b)) = (restart, r.restore_time_s) {
            if b > 0.0 {
                speedup.insert(r.scenario.clone(), a / b);
            }
        }
    }
    let mut success: BTreeMap<String, BTreeMap<String, (u32, u32)>> = BTreeMap::new();
    for r in reports.iter().filter(|r| r.outcome != Outcome::NotApplicable) {
        let slot = success
            .entry(r.mode.name().to_string())
            .or_default()
            .entry(r.category.name().to_string())
            .or_default();
        slot.1 += 1;
        if r.outcome == Outcome::Recovered {
            slot.0 += 1;
        }
    }
    Summary {
        runs: reports.to_vec(),
        speedup,
        success,
    }
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or("-".into(), |v| format!("{v:.prec$}"))
}

/// Plain-text rendering of a summary: one row per run, then success counts.
pub fn table(s: &Summary) -> String {
    if s.runs.is_empty() {
        return String::new();
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<32} {:<17} {:<10} {:<10} {:>10} {:>14} {:>9}",
        "scenario", "category", "mode", "outcome", "restore_s", "final_metric", "speedup"
    );
    for r in &s.runs {
        let outcome = match r.outcome {
            Outcome::Recovered => "recovered",
            Outcome::Failed => "failed",
            Outcome::NotApplicable => "n/a",
        };
        let speedup = match r.mode {
            Mode::InSitu => opt(s.speedup.get(&r.scenario).copied(), 1),
            _ => "-".into(),
        };
        let _ = writeln!(
            out,
            "{:<32} {:<17} {:<10} {:<10} {:>10} {:>14} {:>9}",
            r.scenario,
            r.category.name(),
            r.mode.name(),
            outcome,
            opt(r.restore_time_s, 4),
            opt(r.final_metric, 6),
            speedup
        );
    }
    for (mode, cats) in &s.success {
        let (ok, total) = cats.values().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        let cells: Vec<String> = Category::ALL
            .iter()
            .filter_map(|c| cats.get(c.name()).map(|(a, b)| format!("{c} {a}/{b}")))
            .collect();
        let _ = writeln!(out, "{mode}: {ok}/{total} ({})", cells.join(", "));
    }
    out
}

/// Categories in which every recoverable case was recovered.
pub fn categories_recovered(reports: &[RunReport], recoverable: &[String], mode: Mode) -> Vec<Category> {
    Category::ALL
        .into_iter()
        .filter(|c| {
            let runs: Vec<_> = reports
                .iter()
                .filter(|r| r.mode == mode && r.category == *c && recoverable.contains(&r.scenario))
                .collect();
            !runs.is_empty() && runs.iter().all(|r| r.outcome == Outcome::Recovered)
        })
        .collect()
}
