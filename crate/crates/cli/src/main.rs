use std::cell::RefCell;
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use insitu::console::{BridgeSource, Repl, TerminalSource, ENV_BRIDGE};
use insitu::crash_bench::harness::{self, restore_experiment, run_scenario_within};
use insitu::crash_bench::{scenarios, summarize, table, Mode};
use insitu::distributed::{dist_module, timeout_from_env, Coordinator, DistributedHandler, WorkerClient};
use insitu::source::parse_function_file;
use insitu::update::{CommandSource, Policy, RecoverySession, ScriptFile, ScriptSource};
use insitu::vaccinator::emit;
use insitu::{decompose, Granularity, Interp};

#[derive(Parser)]
#[command(
    name = "insitu",
    version,
    about = "Run scripts that can be repaired in place when they crash"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the vaccinated form of one function.
    Vaccinate {
        file: PathBuf,
        /// Function to transform.
        #[arg(long, short)]
        function: String,
        #[arg(long, value_enum, default_value = "cells")]
        granularity: Gran,
        /// Write here instead of stdout.
        #[arg(long)]
        emit: Option<PathBuf>,
    },
    /// Run a script; crashes in vaccinated functions open a recovery session.
    Run(RunArgs),
    /// Serve fix coordination for distributed workers.
    Coordinator {
        #[arg(long, default_value = "127.0.0.1:7070")]
        bind: String,
        /// Seconds to wait for workers to resume after a broadcast.
        #[arg(long)]
        timeout: Option<f64>,
    },
    /// Crash-scenario benchmark.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Gran {
    Cells,
    Statements,
}

impl From<Gran> for Granularity {
    fn from(g: Gran) -> Granularity {
        match g {
            Gran::Cells => Granularity::Cells,
            Gran::Statements => Granularity::Statements,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    file: PathBuf,
    /// TOML fix script consumed in order instead of asking interactively.
    #[arg(long, env = insitu::update::ENV_SCRIPT)]
    script: Option<PathBuf>,
    /// Serve sessions to a console bridge client at this address.
    #[arg(long, env = ENV_BRIDGE)]
    bridge: Option<String>,
    #[arg(long, value_enum, default_value = "cells")]
    granularity: Gran,
    /// Only retry, at most this many times per crash site.
    #[arg(long)]
    pass_only: Option<u32>,
    /// Coordinator address; makes this process a distributed worker.
    #[arg(long, env = insitu::distributed::ENV_COORDINATOR)]
    coordinator: Option<String>,
    #[arg(long, env = insitu::distributed::ENV_RANK, default_value_t = 0)]
    rank: u32,
    #[arg(long, env = insitu::distributed::ENV_WORLD, default_value_t = 1)]
    world: u32,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// List registered scenarios.
    List,
    /// Run scenarios and print a table of outcomes.
    Run {
        #[arg(long)]
        scenario: Option<String>,
        /// restart, in-situ, pass-only or no-fd; all modes when omitted.
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long, default_value_t = 1)]
        reps: u32,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-run timeout in seconds.
        #[arg(long, default_value_t = 120.0)]
        timeout: f64,
    },
    /// Per-operation cost of barriers, binds and resolves against `print`.
    Microbench {
        #[arg(long, default_value_t = 200_000)]
        iterations: u32,
        #[arg(long, default_value_t = 5)]
        reps: u32,
    },
    /// Vaccinated against original toy loop.
    Overhead {
        #[arg(long, default_value_t = 3)]
        reps: u32,
        #[arg(long, default_value_t = 400)]
        steps: u32,
    },
    /// Restore time of in-situ recovery and restart at several crash points.
    Restore {
        #[arg(long, default_value_t = 1000)]
        steps: u32,
        #[arg(long, default_value_t = 0.02)]
        sleep: f64,
        #[arg(long, value_delimiter = ',', default_value = "100,500,900")]
        at: Vec<u32>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    };
    std::process::exit(code);
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Vaccinate {
            file,
            function,
            granularity,
            emit: out,
        } => {
            let f = parse_function_file(&file, &function).map_err(|e| anyhow::anyhow!("{e}"))?;
            let d = decompose(&f, granularity.into())?;
            let text = emit(&f, &d);
            match out {
                Some(path) => std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
            Ok(0)
        }
        Command::Run(args) => run(args),
        Command::Coordinator { bind, timeout } => coordinator(&bind, timeout),
        Command::Bench { command } => bench(command),
    }
}

fn source_for(args: &RunArgs) -> Result<Box<dyn CommandSource>> {
    if let Some(path) = &args.script {
        let cmds = ScriptFile::load(path).with_context(|| format!("loading {}", path.display()))?;
        return Ok(Box::new(ScriptSource::new(cmds)));
    }
    let terminal = TerminalSource::new(Repl::terminal());
    match &args.bridge {
        Some(addr) => {
            let bridge = BridgeSource::bind(addr, terminal).with_context(|| format!("binding bridge on {addr}"))?;
            eprintln!("bridge listening on {}", bridge.local_addr()?);
            Ok(Box::new(bridge))
        }
        None => Ok(Box::new(terminal)),
    }
}

fn run(args: RunArgs) -> Result<i32> {
    let text = std::fs::read_to_string(&args.file).with_context(|| format!("reading {}", args.file.display()))?;
    let policy = args.pass_only.map_or(Policy::Commands, Policy::PassOnly);
    let session = RecoverySession::new(source_for(&args)?).with_policy(policy);
    let mut interp = Interp::new();
    interp.host.granularity = args.granularity.into();
    match &args.coordinator {
        Some(addr) => {
            let client = WorkerClient::connect(addr.as_str(), args.rank, args.world, timeout_from_env())
                .with_context(|| format!("connecting to coordinator {addr}"))?;
            let client = Rc::new(RefCell::new(client));
            interp.register_module("dist", dist_module(Some(client.clone())));
            interp.host.handler = Some(Box::new(DistributedHandler::new(client, session)));
        }
        None => {
            interp.register_module("dist", dist_module(None));
            interp.host.handler = Some(Box::new(session));
        }
    }
    let result = interp.run_source(&text);
    interp.host.handler = None;
    match result {
        Ok(()) => Ok(0),
        Err(e) => {
            eprintln!("{e}");
            Ok(1)
        }
    }
}

fn coordinator(bind: &str, timeout: Option<f64>) -> Result<i32> {
    let timeout = timeout.map_or_else(timeout_from_env, Duration::from_secs_f64);
    let coord = Coordinator::start(bind, timeout).with_context(|| format!("binding {bind}"))?;
    println!("coordinator listening on {}", coord.local_addr());
    let mut last = String::new();
    loop {
        std::thread::sleep(Duration::from_millis(200));
        let now = serde_json::to_string(&coord.summaries())?;
        if now != last {
            println!("workers {now}");
            last = now;
        }
    }
}

fn bench(cmd: BenchCommand) -> Result<i32> {
    match cmd {
        BenchCommand::List => {
            for s in scenarios::all() {
                let injector = serde_json::to_value(&s.injector)?;
                println!(
                    "{:<32} {:<17} {:<12} {}",
                    s.name,
                    s.category.name(),
                    if s.recoverable { "recoverable" } else { "unrecoverable" },
                    injector["kind"].as_str().unwrap_or("")
                );
            }
            Ok(0)
        }
        BenchCommand::Run {
            scenario,
            mode,
            reps,
            out,
            timeout,
        } => {
            let selected: Vec<_> = match &scenario {
                Some(name) => vec![scenarios::find(name).with_context(|| format!("no scenario named {name}"))?],
                None => scenarios::all(),
            };
            let modes = mode.map_or(Mode::ALL.to_vec(), |m| vec![m]);
            let mut reports = Vec::new();
            for s in &selected {
                for m in &modes {
                    for _ in 0..reps.max(1) {
                        reports.push(run_scenario_within(s, *m, Duration::from_secs_f64(timeout))?);
                    }
                }
            }
            let summary = summarize(&reports);
            print!("{}", table(&summary));
            if let Some(path) = out {
                write_json(&path, &summary)?;
            }
            Ok(0)
        }
        BenchCommand::Microbench { iterations, reps } => {
            let m = harness::microbench(iterations, reps)?;
            println!("print    {:>9.1} ns", m.print_ns);
            for ((name, ratio), ns) in m.ratios().iter().zip([m.barrier_ns, m.bind_ns, m.resolve_ns]) {
                println!("{name:<8} {ns:>9.1} ns  ({ratio:.3} x print)");
            }
            Ok(0)
        }
        BenchCommand::Overhead { reps, steps } => {
            let o = harness::measure_overhead(&scenarios::toy_loop(steps), reps)?;
            for (i, ((a, b), f)) in o.original_s.iter().zip(&o.vaccinated_s).zip(&o.fractions).enumerate() {
                println!(
                    "rep {i}: original {a:.4} s, vaccinated {b:.4} s, overhead {:+.3}%",
                    f * 100.0
                );
            }
            println!(
                "overhead {:+.3}%{}",
                o.overhead_fraction * 100.0,
                if o.unstable { " (unstable)" } else { "" }
            );
            Ok(0)
        }
        BenchCommand::Restore { steps, sleep, at } => {
            if at.is_empty() {
                bail!("--at needs at least one crash point");
            }
            for p in restore_experiment(steps, sleep, &at)? {
                println!(
                    "crash at {:>5}: in-situ {:>8} s, restart {:>8} s, speedup {}",
                    p.crash_at,
                    fmt_opt(p.in_situ.restore_time_s),
                    fmt_opt(p.restart.restore_time_s),
                    p.speedup().map_or("-".into(), |s| format!("{s:.1}x"))
                );
            }
            Ok(0)
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.4}"))
}

fn write_json(path: &Path, value: &insitu::crash_bench::harness::Summary) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
