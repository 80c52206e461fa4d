//! Crash events, recovery commands and dynamic software update.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::lang::ast::{BlockKind, Stmt};
use crate::lang::interp::{Frame, Locals, Scope};
use crate::lang::value::{preview, TraceEntry, Value};
use crate::lang::{parse_expression, parse_module, Interp};
use crate::runtime::{Activation, CrashSite, Decision, FrameInfo, RecoveryHandler};
use crate::source::{SourceFunction, StatementPath};
use crate::vaccinator::Granularity;

pub const PREVIEW_CHARS: usize = 200;
/// Path of a TOML fix script to run non-interactively.
pub const ENV_SCRIPT: &str = "INSITU_SCRIPT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashLocation {
    pub cell: u32,
    /// Relative to the cell.
    pub path: StatementPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashEvent {
    pub function: String,
    pub exception_kind: String,
    pub message: String,
    /// Innermost first.
    pub cell_frames: Vec<FrameInfo>,
    pub crash_location: CrashLocation,
    /// The crash location as a path in the whole function.
    pub function_path: StatementPath,
    /// Frames of plain functions the exception passed through, innermost first.
    pub trace: Vec<TraceEntry>,
    pub variable_preview: IndexMap<String, String>,
    /// Cell frames with their statement text, innermost first.
    pub stack: Vec<StackLine>,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackLine {
    pub cell: u32,
    /// Position in the whole function.
    pub path: StatementPath,
    pub statement: String,
}

impl CrashEvent {
    pub fn from_site(site: &CrashSite) -> CrashEvent {
        let top = &site.frames[0];
        let mut variable_preview = IndexMap::new();
        for (k, v) in site.act.table.snapshot() {
            if let Some(v) = v {
                if !matches!(v, Value::Function(_) | Value::Module(_)) {
                    variable_preview.insert(k, preview(&v, PREVIEW_CHARS));
                }
            }
        }
        let vf = &site.act.vf;
        let source = vf.source();
        let stack = site
            .frames
            .iter()
            .filter_map(|f| {
                let cell = vf.cell(f.cell)?;
                if f.path.is_empty() {
                    return None;
                }
                let path = cell.full(&f.path);
                let statement = statement_text(&source, &path).unwrap_or_default();
                Some(StackLine {
                    cell: f.cell,
                    path,
                    statement,
                })
            })
            .collect();
        CrashEvent {
            function: site.act.vf.name.clone(),
            exception_kind: site.exception.kind().to_string(),
            message: site.exception.message().to_string(),
            cell_frames: site.frames.clone(),
            crash_location: CrashLocation {
                cell: top.cell,
                path: top.path.clone(),
            },
            function_path: site.crash_path(),
            trace: site.exception.trace.iter().rev().cloned().collect(),
            variable_preview,
            stack,
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or_default(),
        }
    }

    pub fn signature(&self) -> CrashSignature {
        CrashSignature {
            function: self.function.clone(),
            exception_kind: self.exception_kind.clone(),
            location: self.function_path.clone(),
        }
    }

    /// Stack trace annotated with statement text and variable values,
    /// outermost frame first.
    pub fn describe(&self) -> String {
        let mut out = format!("Traceback of {} (most recent call last):\n", self.function);
        for line in self.stack.iter().rev() {
            out.push_str(&format!(
                "  cell {} at {}\n    {}\n",
                line.cell,
                line.path,
                first_line(&line.statement)
            ));
        }
        for t in self.trace.iter().rev() {
            out.push_str(&format!("  in {} at {}\n", t.function, t.path));
        }
        out.push_str(&format!("{}: {}\n", self.exception_kind, self.message));
        if !self.variable_preview.is_empty() {
            out.push_str("Variables:\n");
            for (k, v) in &self.variable_preview {
                out.push_str(&format!("  {k} = {v}\n"));
            }
        }
        out
    }
}

fn first_line(s: &str) -> &str {
    s.lines().next().unwrap_or("")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CrashSignature {
    pub function: String,
    pub exception_kind: String,
    pub location: StatementPath,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RecoveryCommand {
    /// Run the crashing statement again.
    Pass,
    /// Run code against the crashed activation's state, then retry.
    Action {
        code: String,
        #[serde(default = "yes")]
        resume: bool,
    },
    /// Replace functions with the definitions in `source`.
    Surgery {
        source: String,
        #[serde(default = "yes")]
        resume: bool,
    },
}

impl RecoveryCommand {
    pub fn resumes(&self) -> bool {
        match self {
            RecoveryCommand::Pass => true,
            RecoveryCommand::Action { resume, .. } | RecoveryCommand::Surgery { resume, .. } => *resume,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RecoveryCommand::Pass => "pass",
            RecoveryCommand::Action { .. } => "action",
            RecoveryCommand::Surgery { .. } => "surgery",
        }
    }
}

/// A recorded fix: the commands that resolved one crash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixProcedure {
    pub crash_signature: CrashSignature,
    pub commands: Vec<RecoveryCommand>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CommandError {
    #[error("action failed: {0}")]
    Action(String),
    #[error("surgery rejected: {0}")]
    Surgery(String),
    #[error("structure change: {0}")]
    StructureChange(String),
    #[error("fix procedure is for {expected:?}, crash is {actual:?}")]
    SignatureMismatch {
        expected: Box<CrashSignature>,
        actual: Box<CrashSignature>,
    },
}

// ----- scripts -----------------------------------------------------------

/// One record of a recovery script file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptRecord {
    pub kind: String,
    #[serde(default)]
    pub payload_path: Option<PathBuf>,
    #[serde(default)]
    pub inline_payload: Option<String>,
    #[serde(default)]
    pub resume: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptFile {
    #[serde(default, rename = "command")]
    pub commands: Vec<ScriptRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("cannot read {0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("malformed script: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("record {0}: {1}")]
    Record(usize, String),
}

impl ScriptFile {
    pub fn load(path: &Path) -> Result<Vec<RecoveryCommand>, ScriptError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScriptError::Io(path.to_path_buf(), e))?;
        let file: ScriptFile = toml::from_str(&text)?;
        file.resolve(path.parent().unwrap_or(Path::new(".")))
    }

    /// Turns records into commands, reading payload files relative to `dir`.
    pub fn resolve(&self, dir: &Path) -> Result<Vec<RecoveryCommand>, ScriptError> {
        self.commands
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let payload = || -> Result<String, ScriptError> {
                    match (&r.inline_payload, &r.payload_path) {
                        (Some(p), None) => Ok(p.clone()),
                        (None, Some(p)) => {
                            let p = dir.join(p);
                            std::fs::read_to_string(&p).map_err(|e| ScriptError::Io(p, e))
                        }
                        _ => Err(ScriptError::Record(
                            i,
                            "exactly one of payload_path and inline_payload is required".into(),
                        )),
                    }
                };
                let resume = r.resume.unwrap_or(true);
                match r.kind.as_str() {
                    "pass" => Ok(RecoveryCommand::Pass),
                    "action" => Ok(RecoveryCommand::Action {
                        code: payload()?,
                        resume,
                    }),
                    "surgery" => Ok(RecoveryCommand::Surgery {
                        source: payload()?,
                        resume,
                    }),
                    other => Err(ScriptError::Record(i, format!("unknown kind '{other}'"))),
                }
            })
            .collect()
    }
}

// ----- applying commands -------------------------------------------------

/// Applies commands for one crash and tracks where execution resumes.
pub struct Applier<'a> {
    site: &'a CrashSite,
    /// Crash location in the current code.
    crash: StatementPath,
    /// Earliest restart point requested so far, in the current code.
    target: Option<StatementPath>,
}

impl<'a> Applier<'a> {
    pub fn new(site: &'a CrashSite) -> Applier<'a> {
        Applier {
            site,
            crash: site.crash_path(),
            target: None,
        }
    }

    fn request(&mut self, p: StatementPath) {
        self.target = Some(match self.target.take() {
            Some(t) if t <= p => t,
            _ => p,
        });
    }

    pub fn apply(&mut self, interp: &mut Interp, cmd: &RecoveryCommand) -> Result<(), CommandError> {
        match cmd {
            RecoveryCommand::Pass => {
                self.request(self.crash.clone());
                Ok(())
            }
            RecoveryCommand::Action { code, .. } => {
                run_action(interp, &self.site.act, code)?;
                self.request(self.crash.clone());
                Ok(())
            }
            RecoveryCommand::Surgery { source, .. } => self.surgery(interp, source),
        }
    }

    fn surgery(&mut self, interp: &mut Interp, source: &str) -> Result<(), CommandError> {
        let module = parse_module(&crate::source::dedent(source)).map_err(|e| CommandError::Surgery(e.to_string()))?;
        let defs: Vec<_> = module
            .iter()
            .filter_map(|s| match s {
                Stmt::FuncDef(d) => Some(d.clone()),
                _ => None,
            })
            .collect();
        if defs.is_empty() {
            return Err(CommandError::Surgery("payload defines no function".into()));
        }
        let act = self.site.act.clone();
        let entry = defs.iter().find(|d| d.name == act.vf.name);
        if let Some(def) = entry {
            if act.vf.granularity == Granularity::Statements {
                return Err(CommandError::Surgery(
                    "the running function was not decomposed; only helpers can be replaced".into(),
                ));
            }
            let new = SourceFunction::from_def(def, source.to_string());
            self.entry_surgery(new)?;
        }
        let globals = act.vf.globals.clone();
        let frame = Frame::module(globals);
        for def in defs.iter().filter(|d| d.name != act.vf.name) {
            interp
                .exec_stmt(&Stmt::FuncDef(def.clone()), &frame)
                .map_err(|f| CommandError::Surgery(format!("defining {}: {f:?}", def.name)))?;
        }
        if entry.is_none() {
            self.request(self.crash.clone());
        }
        Ok(())
    }

    fn entry_surgery(&mut self, new: SourceFunction) -> Result<(), CommandError> {
        let act = &self.site.act;
        let vf = &act.vf;
        let live: Vec<u32> = act.live_frames().iter().map(|f| f.cell).collect();
        let installed = vf.install(new).map_err(|e| CommandError::Surgery(e.to_string()))?;
        let tree = &installed.new_tree;
        let live_set: HashSet<u32> = live.iter().copied().collect();
        // edits in cells that are not running are picked up on their next call
        let first = installed
            .diff
            .edits
            .iter()
            .map(|e| e.path.clone())
            .filter(|p| live_set.contains(&tree.owner(p)))
            .min();
        self.crash = installed.diff.map_path(&self.crash).0;
        self.target = self.target.take().map(|t| installed.diff.map_path(&t).0);
        let restart = match first {
            Some(f) if f <= self.crash => f,
            _ => self.crash.clone(),
        };
        // frames that survive the restart must still have their cells
        let owner = tree.owner(&restart);
        if let Some(t) = live.iter().rposition(|c| *c == owner) {
            if let Some(missing) = live[..=t].iter().find(|c| tree.get(**c).is_none()) {
                return Err(CommandError::StructureChange(format!(
                    "live cell {missing} has no counterpart in the new code"
                )));
            }
        }
        self.request(restart);
        Ok(())
    }

    /// Where to continue, as a decision for the runtime.
    pub fn decision(&self) -> Decision {
        let Some(target) = &self.target else {
            return Decision::Abort;
        };
        let act = &self.site.act;
        if self.site.inline {
            return Decision::Retry {
                frame: self.site.frames[0].frame,
                path: target.clone(),
            };
        }
        let tree = act.vf.tree();
        let owner = tree.owner(target);
        let frame = act.live_frames().into_iter().rev().find(|f| f.cell == owner);
        match (frame, tree.get(owner).and_then(|c| c.rel(target))) {
            (Some(f), Some(path)) => Decision::Retry { frame: f.id, path },
            _ => Decision::Abort,
        }
    }

    pub fn target(&self) -> Option<&StatementPath> {
        self.target.as_ref()
    }
}

/// Runs action code with the activation's locals in scope.
pub fn run_action(interp: &mut Interp, act: &Rc<Activation>, code: &str) -> Result<(), CommandError> {
    let block = parse_module(&crate::source::dedent(code)).map_err(|e| CommandError::Action(e.to_string()))?;
    let scratch = Scope::new(Rc::default(), None);
    let frame = Frame::new(Locals::Action(scratch), act.vf.globals.clone(), Some(act.clone()));
    interp
        .exec_block(&block, BlockKind::Body, &frame)
        .map_err(|f| CommandError::Action(interp.flow_to_error(f, "<action>").to_string()))
}

/// Evaluates inspection code against a copy of the activation's state.
/// Expressions yield their repr; statements may not assign.
pub fn inspect(interp: &mut Interp, act: &Activation, code: &str) -> Result<String, String> {
    let frame = Frame::new(Locals::ReadOnly(act.snapshot_scope()), act.vf.globals.clone(), None);
    if let Ok(e) = parse_expression(code.trim()) {
        return interp
            .eval(&e, &frame)
            .map(|v| v.repr())
            .map_err(|f| interp.flow_to_error(f, "<eval>").to_string());
    }
    let block = parse_module(&crate::source::dedent(code)).map_err(|e| e.to_string())?;
    interp
        .exec_block(&block, BlockKind::Body, &frame)
        .map(|_| String::new())
        .map_err(|f| interp.flow_to_error(f, "<eval>").to_string())
}

/// Applies a recorded procedure to a crash with the same signature.
pub fn apply_procedure(interp: &mut Interp, site: &CrashSite, proc: &FixProcedure) -> Result<Decision, CommandError> {
    let actual = CrashEvent::from_site(site).signature();
    if actual != proc.crash_signature {
        return Err(CommandError::SignatureMismatch {
            expected: Box::new(proc.crash_signature.clone()),
            actual: Box::new(actual),
        });
    }
    let mut applier = Applier::new(site);
    for cmd in &proc.commands {
        applier.apply(interp, cmd)?;
    }
    Ok(applier.decision())
}

// ----- sessions ----------------------------------------------------------

/// What a command source sees while a crash is being handled.
pub struct SessionCtx<'a> {
    pub interp: &'a mut Interp,
    pub site: &'a CrashSite,
    pub event: &'a CrashEvent,
}

impl SessionCtx<'_> {
    pub fn inspect(&mut self, code: &str) -> Result<String, String> {
        inspect(self.interp, &self.site.act, code)
    }
}

/// Supplies recovery commands: a script, a terminal, or a remote console.
pub trait CommandSource {
    /// Next command, or `None` to give up on this crash.
    fn next_command(&mut self, ctx: &mut SessionCtx) -> Option<RecoveryCommand>;

    /// Outcome of the command just returned, with the restart location
    /// requested so far.
    fn report(&mut self, _cmd: &RecoveryCommand, _result: &Result<(), CommandError>, _restart: Option<&StatementPath>) {
    }

    /// Called once the session resumes or gives up.
    fn finished(&mut self, _event: &CrashEvent, _resumed: bool) {}
}

impl<S: CommandSource + ?Sized> CommandSource for Box<S> {
    fn next_command(&mut self, ctx: &mut SessionCtx) -> Option<RecoveryCommand> {
        (**self).next_command(ctx)
    }

    fn report(&mut self, cmd: &RecoveryCommand, result: &Result<(), CommandError>, restart: Option<&StatementPath>) {
        (**self).report(cmd, result, restart)
    }

    fn finished(&mut self, event: &CrashEvent, resumed: bool) {
        (**self).finished(event, resumed)
    }
}

/// Commands from a fixed list, consumed across crashes.
#[derive(Debug, Default)]
pub struct ScriptSource {
    pub commands: std::collections::VecDeque<RecoveryCommand>,
    pub errors: Vec<String>,
}

impl ScriptSource {
    pub fn new(commands: Vec<RecoveryCommand>) -> ScriptSource {
        ScriptSource {
            commands: commands.into(),
            errors: Vec::new(),
        }
    }
}

impl CommandSource for ScriptSource {
    fn next_command(&mut self, _ctx: &mut SessionCtx) -> Option<RecoveryCommand> {
        self.commands.pop_front()
    }

    fn report(&mut self, cmd: &RecoveryCommand, result: &Result<(), CommandError>, _restart: Option<&StatementPath>) {
        if let Err(e) = result {
            log::warn!("{} failed: {e}", cmd.name());
            self.errors.push(e.to_string());
        }
    }
}

/// How a session chooses commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    /// Commands come from the source.
    Commands,
    /// Only retries, at most this many times per crash site.
    PassOnly(u32),
}

/// One handled crash.
#[derive(Debug, Clone, Serialize)]
pub struct SessionRecord {
    pub event: CrashEvent,
    pub commands: Vec<String>,
    pub errors: Vec<String>,
    pub resumed: bool,
}

/// The recovery handler: turns crashes into decisions using a command source.
pub struct RecoverySession<S: CommandSource> {
    pub source: S,
    pub policy: Policy,
    pub records: Vec<SessionRecord>,
    /// Procedures recorded from successful sessions.
    pub procedures: Vec<FixProcedure>,
    /// Procedures applied without asking when their signature matches.
    pub replay: Vec<FixProcedure>,
    passes: IndexMap<CrashSignature, u32>,
}

impl<S: CommandSource> RecoverySession<S> {
    pub fn new(source: S) -> Self {
        RecoverySession {
            source,
            policy: Policy::Commands,
            records: Vec::new(),
            procedures: Vec::new(),
            replay: Vec::new(),
            passes: IndexMap::new(),
        }
    }

    pub fn with_policy(mut self, policy: Policy) -> Self {
        self.policy = policy;
        self
    }

    fn pass_only(&mut self, event: &CrashEvent, site: &CrashSite, max: u32) -> Decision {
        let n = self.passes.entry(event.signature()).or_insert(0);
        *n += 1;
        let resumed = *n <= max;
        self.records.push(SessionRecord {
            event: event.clone(),
            commands: vec!["pass".into()],
            errors: Vec::new(),
            resumed,
        });
        if !resumed {
            return Decision::Abort;
        }
        let mut applier = Applier::new(site);
        let _ = applier.apply(&mut Interp::new(), &RecoveryCommand::Pass);
        applier.decision()
    }
}

impl<S: CommandSource> RecoveryHandler for RecoverySession<S> {
    fn on_crash(&mut self, interp: &mut Interp, site: &CrashSite) -> Decision {
        let event = CrashEvent::from_site(site);
        if let Policy::PassOnly(max) = self.policy {
            return self.pass_only(&event, site, max);
        }
        let signature = event.signature();
        if let Some(proc) = self.replay.iter().find(|p| p.crash_signature == signature).cloned() {
            let d = apply_procedure(interp, site, &proc);
            let resumed = matches!(d, Ok(Decision::Retry { .. }));
            self.records.push(SessionRecord {
                event: event.clone(),
                commands: proc.commands.iter().map(|c| c.name().to_string()).collect(),
                errors: d.as_ref().err().map(|e| e.to_string()).into_iter().collect(),
                resumed,
            });
            return d.unwrap_or(Decision::Abort);
        }
        let mut applier = Applier::new(site);
        let mut applied = Vec::new();
        let mut errors = Vec::new();
        let decision = loop {
            let mut ctx = SessionCtx {
                interp: &mut *interp,
                site,
                event: &event,
            };
            let Some(cmd) = self.source.next_command(&mut ctx) else {
                break Decision::Abort;
            };
            let r = applier.apply(interp, &cmd);
            self.source.report(&cmd, &r, applier.target());
            match r {
                Ok(()) => {
                    let resume = cmd.resumes();
                    applied.push(cmd);
                    if resume {
                        break applier.decision();
                    }
                }
                Err(e) => errors.push(e.to_string()),
            }
        };
        let resumed = matches!(decision, Decision::Retry { .. });
        if resumed {
            self.procedures.push(FixProcedure {
                crash_signature: signature,
                commands: applied.clone(),
            });
        }
        self.source.finished(&event, resumed);
        self.records.push(SessionRecord {
            event,
            commands: applied.iter().map(|c| c.name().to_string()).collect(),
            errors,
            resumed,
        });
        decision
    }
}

/// Unparsed text of a function, used as a surgery payload.
pub fn function_text(f: &SourceFunction) -> String {
    f.unparse()
}

/// Rewrites a statement path of `f` as the text of the statement there.
pub fn statement_text(f: &SourceFunction, path: &StatementPath) -> Option<String> {
    path.resolve(&f.body)
        .map(|s| crate::lang::unparse::unparse_stmt(s).trim_end().to_string())
}
