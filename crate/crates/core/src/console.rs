//! Recovery console: terminal REPL, session bridge frames, and crash
//! diagnosis through an external completion endpoint.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::time::Duration;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::source::StatementPath;
use crate::update::{CommandError, CommandSource, CrashEvent, RecoveryCommand, SessionCtx};

pub const FRAME_VERSION: u32 = 1;

pub const ENV_BRIDGE: &str = "INSITU_BRIDGE";
pub const ENV_LLM_ENDPOINT: &str = "INSITU_LLM_ENDPOINT";
pub const ENV_LLM_KEY: &str = "INSITU_LLM_KEY";
pub const ENV_LLM_MODEL: &str = "INSITU_LLM_MODEL";
pub const ENV_PROMPT: &str = "INSITU_DIAGNOSE_PROMPT";

const HELP: &str = "\
commands:
  stack               annotated stack trace
  vars [name]         variable previews, or one variable in full
  eval <code>         evaluate against a read-only copy of the variables
  source              source of the crashed function
  pass                run the crashing statement again
  action <file>       run the file's code against the live variables, then retry
  surgery <file>      replace functions with the file's definitions, then resume
  diag                ask the configured model to explain the crash
  quit                give up; the exception propagates
";

// ----- frames ------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePayload {
    pub function: String,
    pub source: String,
    pub variables: IndexMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandPayload {
    /// `pass`, `action`, `surgery`, `eval`, `vars`, `stack`, `source`, `diag` or `quit`.
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resume: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultPayload {
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restart_location: Option<StatementPath>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResumedPayload {
    /// False when the session gave up and the exception propagates.
    pub resumed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerSummary {
    pub rank: u32,
    pub status: String,
    pub fix_host: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "UPPERCASE")]
pub enum FrameBody {
    Crash(Box<CrashEvent>),
    State(StatePayload),
    Command(CommandPayload),
    Result(ResultPayload),
    Resumed(ResumedPayload),
    Workers(Vec<WorkerSummary>),
}

/// One newline-delimited JSON message on the bridge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFrame {
    pub v: u32,
    pub session_id: String,
    pub seq: u64,
    #[serde(flatten)]
    pub body: FrameBody,
}

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("unsupported frame version {0}")]
    Version(u32),
    #[error("frame for session '{got}', expected '{expected}'")]
    Session { expected: String, got: String },
    #[error("out-of-order seq {got}; last accepted was {last}")]
    OutOfOrder { last: u64, got: u64 },
    #[error("only COMMAND frames are accepted from clients")]
    NotCommand,
}

impl SessionFrame {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("frames serialize");
        s.push('\n');
        s
    }

    pub fn parse(line: &str) -> Result<SessionFrame, FrameError> {
        let f: SessionFrame = serde_json::from_str(line.trim()).map_err(|e| FrameError::Malformed(e.to_string()))?;
        if f.v != FRAME_VERSION {
            return Err(FrameError::Version(f.v));
        }
        Ok(f)
    }
}

/// Outgoing numbering and incoming ordering for one session.
#[derive(Debug, Clone)]
pub struct SessionChannel {
    pub session_id: String,
    out_seq: u64,
    in_seq: u64,
}

impl SessionChannel {
    pub fn new(session_id: impl Into<String>) -> Self {
        SessionChannel {
            session_id: session_id.into(),
            out_seq: 0,
            in_seq: 0,
        }
    }

    pub fn frame(&mut self, body: FrameBody) -> SessionFrame {
        self.out_seq += 1;
        SessionFrame {
            v: FRAME_VERSION,
            session_id: self.session_id.clone(),
            seq: self.out_seq,
            body,
        }
    }

    /// Validates a client frame and returns its command.
    pub fn accept(&mut self, line: &str) -> Result<CommandPayload, FrameError> {
        let f = SessionFrame::parse(line)?;
        if f.session_id != self.session_id {
            return Err(FrameError::Session {
                expected: self.session_id.clone(),
                got: f.session_id,
            });
        }
        if f.seq <= self.in_seq {
            return Err(FrameError::OutOfOrder {
                last: self.in_seq,
                got: f.seq,
            });
        }
        let FrameBody::Command(c) = f.body else {
            return Err(FrameError::NotCommand);
        };
        self.in_seq = f.seq;
        Ok(c)
    }
}

// ----- shared command handling -------------------------------------------

/// What a console line or COMMAND frame asks for.
enum Request {
    Recover(RecoveryCommand),
    Reply(Result<String, String>),
    Quit,
}

fn read_payload(arg: Option<&str>, inline: bool) -> Result<String, String> {
    let arg = arg.map(str::trim).filter(|a| !a.is_empty()).ok_or("missing argument")?;
    if inline {
        return Ok(arg.to_string());
    }
    std::fs::read_to_string(arg).map_err(|e| format!("cannot read {arg}: {e}"))
}

fn vars(ctx: &mut SessionCtx, name: Option<&str>) -> Result<String, String> {
    match name.map(str::trim).filter(|n| !n.is_empty()) {
        Some(n) => ctx.inspect(n).map(|v| format!("{n} = {v}")),
        None => Ok(ctx
            .event
            .variable_preview
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()),
    }
}

/// `inline` payloads carry code; otherwise they name a file.
fn dispatch(
    ctx: &mut SessionCtx,
    command: &str,
    arg: Option<&str>,
    resume: bool,
    inline: bool,
    diag: &Diagnoser,
) -> Request {
    match command {
        "pass" => Request::Recover(RecoveryCommand::Pass),
        "action" => match read_payload(arg, inline) {
            Ok(code) => Request::Recover(RecoveryCommand::Action { code, resume }),
            Err(e) => Request::Reply(Err(e)),
        },
        "surgery" => match read_payload(arg, inline) {
            Ok(source) => Request::Recover(RecoveryCommand::Surgery { source, resume }),
            Err(e) => Request::Reply(Err(e)),
        },
        "stack" | "bt" | "where" => Request::Reply(Ok(ctx.event.describe())),
        "vars" => Request::Reply(vars(ctx, arg)),
        "eval" | "p" => Request::Reply(ctx.inspect(arg.unwrap_or(""))),
        "source" => Request::Reply(Ok(ctx.site.act.vf.source().source_text)),
        "diag" => Request::Reply(Ok(diag.diagnose(ctx.event, &ctx.site.act.vf.source().source_text))),
        "quit" | "abort" => Request::Quit,
        "help" => Request::Reply(Ok(HELP.to_string())),
        other => Request::Reply(Err(format!("unknown command '{other}'\n{HELP}"))),
    }
}

// ----- terminal ----------------------------------------------------------

/// Line-oriented console on any reader and writer.
pub struct Repl<R, W> {
    input: R,
    output: W,
    pub diagnoser: Diagnoser,
}

impl Repl<BufReader<std::io::Stdin>, std::io::Stderr> {
    pub fn terminal() -> Self {
        Repl::new(BufReader::new(std::io::stdin()), std::io::stderr())
    }
}

impl<R: BufRead, W: Write> Repl<R, W> {
    pub fn new(input: R, output: W) -> Self {
        Repl {
            input,
            output,
            diagnoser: Diagnoser::from_env(),
        }
    }

    pub fn into_output(self) -> W {
        self.output
    }

    fn say(&mut self, text: &str) {
        let _ = self.output.write_all(text.as_bytes());
        if !text.ends_with('\n') {
            let _ = self.output.write_all(b"\n");
        }
        let _ = self.output.flush();
    }
}

impl<R: BufRead, W: Write> CommandSource for Repl<R, W> {
    fn next_command(&mut self, ctx: &mut SessionCtx) -> Option<RecoveryCommand> {
        loop {
            let _ = write!(self.output, "(insitu) ");
            let _ = self.output.flush();
            let mut line = String::new();
            match self.input.read_line(&mut line) {
                Ok(0) | Err(_) => return None,
                Ok(_) => {}
            }
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (cmd, arg) = match line.split_once(char::is_whitespace) {
                Some((c, a)) => (c, Some(a)),
                None => (line, None),
            };
            match dispatch(ctx, cmd, arg, true, false, &self.diagnoser) {
                Request::Recover(c) => return Some(c),
                Request::Reply(Ok(text)) => self.say(&text),
                Request::Reply(Err(e)) => self.say(&format!("error: {e}")),
                Request::Quit => return None,
            }
        }
    }

    fn report(&mut self, cmd: &RecoveryCommand, result: &Result<(), CommandError>, restart: Option<&StatementPath>) {
        let text = match (result, restart) {
            (Ok(()), Some(p)) => format!("{} applied; restart at {p}", cmd.name()),
            (Ok(()), None) => format!("{} applied", cmd.name()),
            (Err(e), _) => format!("error: {e}"),
        };
        self.say(&text);
    }

    fn finished(&mut self, _event: &CrashEvent, resumed: bool) {
        self.say(if resumed { "resuming" } else { "giving up" });
    }
}

/// Prints the crash, then hands over to the REPL.
pub struct TerminalSource<R, W> {
    pub repl: Repl<R, W>,
    announced: Option<f64>,
}

impl<R: BufRead, W: Write> TerminalSource<R, W> {
    pub fn new(repl: Repl<R, W>) -> Self {
        TerminalSource { repl, announced: None }
    }
}

impl<R: BufRead, W: Write> CommandSource for TerminalSource<R, W> {
    fn next_command(&mut self, ctx: &mut SessionCtx) -> Option<RecoveryCommand> {
        if self.announced != Some(ctx.event.timestamp) {
            self.announced = Some(ctx.event.timestamp);
            self.repl.say(&format!(
                "crash intercepted\n{}type 'help' for commands",
                ctx.event.describe()
            ));
        }
        self.repl.next_command(ctx)
    }

    fn report(&mut self, cmd: &RecoveryCommand, result: &Result<(), CommandError>, restart: Option<&StatementPath>) {
        self.repl.report(cmd, result, restart)
    }

    fn finished(&mut self, event: &CrashEvent, resumed: bool) {
        self.announced = None;
        self.repl.finished(event, resumed)
    }
}

// ----- bridge ------------------------------------------------------------

/// Serves crash sessions to one bridge client at a time; if the client goes
/// away mid-session, the terminal takes over.
pub struct BridgeSource<F: CommandSource> {
    listener: TcpListener,
    client: Option<(BufReader<TcpStream>, TcpStream)>,
    session: Option<SessionChannel>,
    sessions: u64,
    pub fallback: F,
    fell_back: bool,
    pub diagnoser: Diagnoser,
}

impl<F: CommandSource> BridgeSource<F> {
    pub fn bind(addr: &str, fallback: F) -> std::io::Result<Self> {
        Ok(BridgeSource {
            listener: TcpListener::bind(addr)?,
            client: None,
            session: None,
            sessions: 0,
            fallback,
            fell_back: false,
            diagnoser: Diagnoser::from_env(),
        })
    }

    pub fn local_addr(&self) -> std::io::Result<std::net::SocketAddr> {
        self.listener.local_addr()
    }

    fn send(&mut self, body: FrameBody) -> std::io::Result<()> {
        let session = self.session.as_mut().expect("open session");
        let line = session.frame(body).to_line();
        let (_, w) = self.client.as_mut().ok_or(std::io::ErrorKind::NotConnected)?;
        w.write_all(line.as_bytes())?;
        w.flush()
    }

    fn connect(&mut self) -> std::io::Result<()> {
        if self.client.is_none() {
            log::info!("waiting for a bridge client on {}", self.listener.local_addr()?);
            let (stream, _) = self.listener.accept()?;
            stream.set_nodelay(true)?;
            self.client = Some((BufReader::new(stream.try_clone()?), stream));
        }
        Ok(())
    }

    fn open(&mut self, ctx: &SessionCtx) -> std::io::Result<()> {
        self.connect()?;
        self.sessions += 1;
        self.session = Some(SessionChannel::new(format!("{}-{}", ctx.event.function, self.sessions)));
        self.send(FrameBody::Crash(Box::new(ctx.event.clone())))?;
        let source = ctx.site.act.vf.source();
        self.send(FrameBody::State(StatePayload {
            function: ctx.event.function.clone(),
            source: source.source_text,
            variables: ctx.event.variable_preview.clone(),
        }))
    }

    fn serve(&mut self, ctx: &mut SessionCtx) -> std::io::Result<Option<RecoveryCommand>> {
        if self.session.is_none() {
            self.open(ctx)?;
        }
        loop {
            let mut line = String::new();
            let (r, _) = self.client.as_mut().ok_or(std::io::ErrorKind::NotConnected)?;
            if r.read_line(&mut line)? == 0 {
                return Err(std::io::ErrorKind::UnexpectedEof.into());
            }
            if line.trim().is_empty() {
                continue;
            }
            let accepted = self.session.as_mut().expect("open session").accept(&line);
            let c = match accepted {
                Ok(c) => c,
                Err(e) => {
                    self.send(FrameBody::Result(ResultPayload {
                        error: Some(e.to_string()),
                        ..Default::default()
                    }))?;
                    continue;
                }
            };
            let resume = c.resume.unwrap_or(true);
            match dispatch(ctx, &c.command, c.payload.as_deref(), resume, true, &self.diagnoser) {
                Request::Recover(cmd) => return Ok(Some(cmd)),
                Request::Quit => return Ok(None),
                Request::Reply(r) => {
                    let (output, error) = match r {
                        Ok(o) => (Some(o), None),
                        Err(e) => (None, Some(e)),
                    };
                    self.send(FrameBody::Result(ResultPayload {
                        accepted: error.is_none(),
                        output,
                        error,
                        restart_location: None,
                    }))?;
                }
            }
        }
    }

    fn drop_client(&mut self, e: std::io::Error) {
        log::warn!("bridge client lost ({e}); continuing on the terminal");
        self.client = None;
        self.session = None;
        self.fell_back = true;
    }
}

impl<F: CommandSource> CommandSource for BridgeSource<F> {
    fn next_command(&mut self, ctx: &mut SessionCtx) -> Option<RecoveryCommand> {
        if self.fell_back {
            return self.fallback.next_command(ctx);
        }
        match self.serve(ctx) {
            Ok(c) => c,
            Err(e) => {
                self.drop_client(e);
                self.fallback.next_command(ctx)
            }
        }
    }

    fn report(&mut self, cmd: &RecoveryCommand, result: &Result<(), CommandError>, restart: Option<&StatementPath>) {
        if self.fell_back {
            return self.fallback.report(cmd, result, restart);
        }
        let body = FrameBody::Result(ResultPayload {
            accepted: result.is_ok(),
            restart_location: restart.cloned().filter(|_| result.is_ok()),
            output: None,
            error: result.as_ref().err().map(|e| e.to_string()),
        });
        if let Err(e) = self.send(body) {
            self.drop_client(e);
        }
    }

    fn finished(&mut self, event: &CrashEvent, resumed: bool) {
        if self.fell_back {
            self.fell_back = false;
            return self.fallback.finished(event, resumed);
        }
        if let Err(e) = self.send(FrameBody::Resumed(ResumedPayload { resumed })) {
            self.drop_client(e);
            self.fell_back = false;
        }
        self.session = None;
    }
}

// ----- diagnosis ---------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
pub struct PromptConfig {
    #[serde(default)]
    pub system: String,
    pub template: String,
}

impl PromptConfig {
    pub fn builtin() -> PromptConfig {
        toml::from_str(include_str!("../config/diagnose_prompt.toml")).expect("bundled prompt parses")
    }

    pub fn render(&self, trace: &str, source: &str) -> String {
        self.template.replace("{trace}", trace).replace("{source}", source)
    }
}

/// Sends annotated crashes to a chat-completion style endpoint.
#[derive(Debug, Clone)]
pub struct Diagnoser {
    pub endpoint: Option<String>,
    pub key: Option<String>,
    pub model: String,
    pub prompt: PromptConfig,
    pub timeout: Duration,
}

pub const NOT_CONFIGURED: &str =
    "diagnosis is not configured; set INSITU_LLM_ENDPOINT (and INSITU_LLM_KEY if the endpoint needs one)";

impl Diagnoser {
    pub fn from_env() -> Diagnoser {
        let prompt = std::env::var_os(ENV_PROMPT)
            .map(PathBuf::from)
            .or_else(|| Some(PathBuf::from("config/diagnose_prompt.toml")).filter(|p| p.exists()))
            .and_then(|p| {
                match std::fs::read_to_string(&p)
                    .map_err(|e| e.to_string())
                    .and_then(|t| toml::from_str(&t).map_err(|e| e.to_string()))
                {
                    Ok(c) => Some(c),
                    Err(e) => {
                        log::warn!("ignoring prompt file {}: {e}", p.display());
                        None
                    }
                }
            })
            .unwrap_or_else(PromptConfig::builtin);
        Diagnoser {
            endpoint: std::env::var(ENV_LLM_ENDPOINT).ok().filter(|s| !s.is_empty()),
            key: std::env::var(ENV_LLM_KEY).ok().filter(|s| !s.is_empty()),
            model: std::env::var(ENV_LLM_MODEL).unwrap_or_else(|_| "default".into()),
            prompt,
            timeout: Duration::from_secs(60),
        }
    }

    pub fn request_body(&self, event: &CrashEvent, source: &str) -> serde_json::Value {
        serde_json::json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": self.prompt.system},
                {"role": "user", "content": self.prompt.render(&event.describe(), source)},
            ],
        })
    }

    /// The model's answer verbatim, or a notice when it cannot be reached.
    pub fn diagnose(&self, event: &CrashEvent, source: &str) -> String {
        let Some(endpoint) = &self.endpoint else {
            return NOT_CONFIGURED.to_string();
        };
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let mut req = agent.post(endpoint);
        if let Some(k) = &self.key {
            req = req.set("Authorization", &format!("Bearer {k}"));
        }
        let body = match req.send_json(self.request_body(event, source)) {
            Ok(r) => r.into_string(),
            Err(e) => return format!("warning: diagnosis failed: {e}"),
        };
        match body {
            Ok(text) => extract_answer(&text),
            Err(e) => format!("warning: diagnosis failed: {e}"),
        }
    }
}

/// Pulls the answer out of common completion response shapes.
fn extract_answer(body: &str) -> String {
    let Ok(v) = serde_json::from_str::<serde_json::Value>(body) else {
        return body.to_string();
    };
    let candidates = [
        v.pointer("/choices/0/message/content"),
        v.pointer("/choices/0/text"),
        v.pointer("/content/0/text"),
        v.get("completion"),
        v.get("text"),
    ];
    let answer = candidates
        .into_iter()
        .flatten()
        .find_map(|c| c.as_str().map(str::to_string));
    answer.unwrap_or_else(|| body.to_string())
}
