//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fails.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use insitu::crash_bench::conformance::{check_concatenation, check_semantics};
use insitu::crash_bench::dataparallel::{program, FIX_ACTION, STEPS};
use insitu::crash_bench::harness::{categories_recovered, restore_experiment, run_scenario_within};
use insitu::crash_bench::{measure_overhead, microbench, scenarios, Category, Mode, Outcome, RunReport};

const SEMANTIC_FUNCTIONS: u64 = 40;
const CONCAT_CELLS: u64 = 60;
const RUN_TIMEOUT: Duration = Duration::from_secs(120);

const RESTORE_STEPS: u32 = 1000;
const RESTORE_SLEEP: f64 = 0.02;
const IN_SITU_MAX_S: f64 = 1.0;
const RESTART_MIN_S: f64 = 10.0;
const MIN_SPEEDUP: f64 = 10.0;
const IN_SITU_SPREAD: f64 = 2.0;

const OVERHEAD_REPS: u32 = 3;
const OVERHEAD_STEPS: u32 = 400;
const MAX_OVERHEAD: f64 = 0.01;
const MAX_OP_RATIO: f64 = 0.5;

const RQ4_REPS: usize = 10;
const WORLD: u32 = 4;
const DIST_BUDGET: Duration = Duration::from_secs(60);

type Check = Result<String, String>;

fn semantic_preservation() -> Check {
    let t = Instant::now();
    for seed in 0..SEMANTIC_FUNCTIONS {
        check_semantics(seed)?;
    }
    let took = t.elapsed();
    if took > Duration::from_secs(60) {
        return Err(format!("took {took:?}"));
    }
    Ok(format!(
        "{SEMANTIC_FUNCTIONS} entry functions, both granularities, {took:.1?}"
    ))
}

fn resume_concatenation() -> Check {
    let mut splits = 0;
    for seed in 0..CONCAT_CELLS {
        splits += check_concatenation(seed)?.splits;
    }
    Ok(format!("{CONCAT_CELLS} cells, {splits} splits"))
}

fn run_all(mode: Mode) -> Result<Vec<RunReport>, String> {
    scenarios::all()
        .iter()
        .map(|s| run_scenario_within(s, mode, RUN_TIMEOUT).map_err(|e| format!("{}: {e}", s.name)))
        .collect()
}

fn recoverable_names() -> Vec<String> {
    scenarios::all()
        .into_iter()
        .filter(|s| s.recoverable)
        .map(|s| s.name)
        .collect()
}

fn scenario_suite(in_situ: &[RunReport]) -> Check {
    let all = scenarios::all();
    for c in Category::ALL {
        let n = all.iter().filter(|s| s.category == c && s.recoverable).count();
        if n < 2 {
            return Err(format!("{c} has {n} recoverable cases"));
        }
    }
    let unrecoverable = all.iter().filter(|s| !s.recoverable).count();
    if unrecoverable < 1 {
        return Err("no non-recoverable case".into());
    }
    for (s, r) in all.iter().zip(in_situ) {
        let want = if s.recoverable {
            Outcome::Recovered
        } else {
            Outcome::Failed
        };
        if r.outcome != want {
            return Err(format!("{}: {:?}, wanted {want:?} ({})", s.name, r.outcome, r.detail));
        }
    }
    Ok(format!(
        "{} recoverable recovered, {unrecoverable} non-recoverable reported failed",
        all.len() - unrecoverable
    ))
}

fn ablation(in_situ: &[RunReport], pass_only: &[RunReport], no_fd: &[RunReport]) -> Check {
    let names = recoverable_names();
    let full: BTreeSet<_> = categories_recovered(in_situ, &names, Mode::InSitu)
        .into_iter()
        .collect();
    let pass = categories_recovered(pass_only, &names, Mode::PassOnly);
    let nofd: BTreeSet<_> = categories_recovered(no_fd, &names, Mode::NoFd).into_iter().collect();
    // pass-only must not recover any case outside runtime errors either
    let stray: Vec<_> = pass_only
        .iter()
        .filter(|r| r.outcome == Outcome::Recovered && r.category != Category::RuntimeError)
        .map(|r| r.scenario.as_str())
        .collect();
    if pass != [Category::RuntimeError] || !stray.is_empty() {
        return Err(format!("pass-only recovered {pass:?}, stray cases {stray:?}"));
    }
    if !(nofd.is_subset(&full) && nofd.len() < full.len()) {
        return Err(format!("no-fd {nofd:?} vs in-situ {full:?}"));
    }
    Ok(format!(
        "pass-only {pass:?}; no-fd {}/{} categories",
        nofd.len(),
        full.len()
    ))
}

fn restore_time() -> Check {
    let points = restore_experiment(RESTORE_STEPS, RESTORE_SLEEP, &[100, 500, 900]).map_err(|e| e.to_string())?;
    let rt = |r: &RunReport| {
        r.restore_time_s
            .ok_or_else(|| format!("{:?}: no restore time ({})", r.mode, r.detail))
    };
    let mut in_situ = Vec::new();
    let mut restart = Vec::new();
    for p in &points {
        in_situ.push(rt(&p.in_situ)?);
        restart.push(rt(&p.restart)?);
    }
    let mid = points.iter().position(|p| p.crash_at == 500).unwrap();
    let speedup = restart[mid] / in_situ[mid];
    let line = format!(
        "in-situ {:.4?} s, restart {:.2?} s, speedup at 500 {speedup:.0}x",
        in_situ, restart
    );
    let spread = in_situ.iter().cloned().fold(0.0, f64::max) / in_situ.iter().cloned().fold(f64::MAX, f64::min);
    if in_situ[mid] >= IN_SITU_MAX_S || restart[mid] < RESTART_MIN_S || speedup < MIN_SPEEDUP {
        return Err(line);
    }
    if spread >= IN_SITU_SPREAD {
        return Err(format!("{line}; in-situ spread {spread:.2}x"));
    }
    if !restart.windows(2).all(|w| w[0] < w[1]) {
        return Err(format!("{line}; restart not monotone"));
    }
    Ok(line)
}

fn overhead() -> Check {
    let o = measure_overhead(&scenarios::toy_loop(OVERHEAD_STEPS), OVERHEAD_REPS).map_err(|e| e.to_string())?;
    let m = microbench(200_000, 5).map_err(|e| e.to_string())?;
    let ratios = m.ratios();
    let line = format!(
        "loop overhead {:+.3}% over {OVERHEAD_REPS} reps{}; {}",
        o.overhead_fraction * 100.0,
        if o.unstable { " (unstable)" } else { "" },
        ratios
            .iter()
            .map(|(n, r)| format!("{n} {r:.3}x print"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    if o.overhead_fraction >= MAX_OVERHEAD || ratios.iter().any(|(_, r)| *r > MAX_OP_RATIO) {
        return Err(line);
    }
    Ok(line)
}

fn metric_equality(first_in_situ: &[RunReport]) -> Check {
    let mut mismatches = Vec::new();
    let mut compared = 0;
    for s in scenarios::all().iter().filter(|s| s.recoverable) {
        for rep in 0..RQ4_REPS {
            let in_situ = if rep == 0 {
                first_in_situ.iter().find(|r| r.scenario == s.name).cloned().unwrap()
            } else {
                run_scenario_within(s, Mode::InSitu, RUN_TIMEOUT).map_err(|e| e.to_string())?
            };
            let restart = run_scenario_within(s, Mode::Restart, RUN_TIMEOUT).map_err(|e| e.to_string())?;
            compared += 1;
            match (in_situ.final_metric, restart.final_metric) {
                (Some(a), Some(b)) if a.to_bits() == b.to_bits() => {}
                (a, b) => mismatches.push(format!("{} rep {rep}: {a:?} vs {b:?}", s.name)),
            }
        }
    }
    if !mismatches.is_empty() {
        return Err(format!("{} mismatches: {}", mismatches.len(), mismatches.join("; ")));
    }
    Ok(format!("{compared} pairs, zero mismatches"))
}

struct Killed(Child);

impl Drop for Killed {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start_coordinator() -> Result<(Killed, String), String> {
    let mut child = Command::new(env!("CARGO_BIN_EXE_insitu"))
        .args(["coordinator", "--bind", "127.0.0.1:0", "--timeout", "30"])
        .stdout(Stdio::piped())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut line = String::new();
    BufReader::new(child.stdout.as_mut().unwrap())
        .read_line(&mut line)
        .map_err(|e| e.to_string())?;
    let addr = line
        .trim()
        .strip_prefix("coordinator listening on ")
        .ok_or_else(|| format!("unexpected coordinator banner {line:?}"))?
        .to_string();
    Ok((Killed(child), addr))
}

/// Runs `WORLD` worker processes over `program` and returns each one's stdout.
fn run_world(dir: &Path, program: &str, script: Option<&Path>) -> Result<Vec<String>, String> {
    let (_coord, addr) = start_coordinator()?;
    let file = dir.join(format!("train_{}.py", script.is_some()));
    std::fs::write(&file, program).map_err(|e| e.to_string())?;
    let mut workers = Vec::new();
    for rank in 0..WORLD {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_insitu"));
        cmd.arg("run").arg(&file);
        if let Some(s) = script {
            cmd.arg("--script").arg(s);
        }
        let child = cmd
            .env("INSITU_COORDINATOR", &addr)
            .env("INSITU_RANK", rank.to_string())
            .env("INSITU_WORLD", WORLD.to_string())
            .env("INSITU_DIST_TIMEOUT", "30")
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| e.to_string())?;
        workers.push(child);
    }
    let mut outs = Vec::new();
    for (rank, mut w) in workers.into_iter().enumerate() {
        let mut out = String::new();
        w.stdout
            .take()
            .unwrap()
            .read_to_string(&mut out)
            .map_err(|e| e.to_string())?;
        let mut err = String::new();
        w.stderr
            .take()
            .unwrap()
            .read_to_string(&mut err)
            .map_err(|e| e.to_string())?;
        let status = w.wait().map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("rank {rank} exited {status}: {}", err.trim()));
        }
        outs.push(out);
    }
    Ok(outs)
}

fn distributed() -> Check {
    let t = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let clean = run_world(dir.path(), &program(&[], STEPS), None)?;
    let script = dir.path().join("fix.toml");
    let toml = format!("[[command]]\nkind = \"action\"\ninline_payload = '''\n{FIX_ACTION}'''\n");
    std::fs::write(&script, toml).map_err(|e| e.to_string())?;
    let fixed = run_world(dir.path(), &program(&[1, 2], STEPS), Some(&script))?;
    for (rank, (a, b)) in clean.iter().zip(&fixed).enumerate() {
        if a != b {
            return Err(format!("rank {rank} output differs from the crash-free run"));
        }
    }
    let took = t.elapsed();
    if took > DIST_BUDGET {
        return Err(format!("took {took:?}"));
    }
    Ok(format!(
        "{WORLD} processes, ranks 1 and 2 crashed and resumed, outputs equal, {took:.1?}"
    ))
}

fn main() {
    // timing-sensitive measurements go first, before scenario threads exist
    let overhead_check = overhead();
    let restore_check = restore_time();
    let mut failed = 0;
    let mut report = |name: &str, check: Check| match &check {
        Ok(msg) => println!("PASS {name}: {msg}"),
        Err(msg) => {
            failed += 1;
            println!("FAIL {name}: {msg}");
        }
    };
    report("semantic-preservation", semantic_preservation());
    report("resume-concatenation", resume_concatenation());

    let suites = (run_all(Mode::InSitu), run_all(Mode::PassOnly), run_all(Mode::NoFd));
    match suites {
        (Ok(in_situ), Ok(pass_only), Ok(no_fd)) => {
            report("scenario-suite", scenario_suite(&in_situ));
            report("ablation", ablation(&in_situ, &pass_only, &no_fd));
            report("restore-time", restore_check);
            report("overhead", overhead_check);
            report("metric-equality", metric_equality(&in_situ));
        }
        (a, b, c) => {
            let e = [a.err(), b.err(), c.err()]
                .into_iter()
                .flatten()
                .collect::<Vec<_>>()
                .join("; ");
            for name in ["scenario-suite", "ablation", "metric-equality"] {
                report(name, Err(e.clone()));
            }
            report("restore-time", restore_check);
            report("overhead", overhead_check);
        }
    }
    report("distributed", distributed());
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
