use std::cell::RefCell;
use std::io::{BufRead, BufReader, Cursor, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::rc::Rc;
use std::thread;

use insitu::console::*;
use insitu::update::{CrashEvent, RecoveryCommand, RecoverySession, ScriptSource};
use insitu::Interp;

const LABELS: &str = r#"
import insitu
labels = [1, 1, 1, 1]
def auc(ys):
    if min(ys) == max(ys):
        raise ValueError("Only one class present in y_true")
    return 0.5
def train():
    scores = []
    for epoch in range(3):
        ys = labels
        scores.append(auc(ys))
        print("epoch", epoch)
    print("scores", scores)
train = insitu.vaccinate(train)
train()
"#;

const FIX: &str = "def train():\n    scores = []\n    for epoch in range(3):\n        ys = labels\n        scores.append(auc(ys) if min(ys) != max(ys) else 0.0)\n        print(\"epoch\", epoch)\n    print(\"scores\", scores)\n";

fn event() -> CrashEvent {
    // a real event, captured from a crash
    let (mut interp, _) = Interp::capturing();
    let session = Rc::new(RefCell::new(RecoverySession::new(ScriptSource::default())));
    interp.host.handler = Some(Box::new(session.clone()));
    let _ = interp.run_source(LABELS);
    let ev = session.borrow().records[0].event.clone();
    ev
}

#[test]
fn every_frame_kind_round_trips() {
    let mut ch = SessionChannel::new("train-1");
    let bodies = vec![
        FrameBody::Crash(Box::new(event())),
        FrameBody::State(StatePayload {
            function: "train".into(),
            source: FIX.into(),
            variables: [("x".to_string(), "1".to_string())].into_iter().collect(),
        }),
        FrameBody::Command(CommandPayload {
            command: "surgery".into(),
            payload: Some(FIX.into()),
            resume: Some(true),
        }),
        FrameBody::Result(ResultPayload {
            accepted: true,
            restart_location: Some("body[1]/loop[1]".parse().unwrap()),
            output: None,
            error: None,
        }),
        FrameBody::Resumed(ResumedPayload { resumed: true }),
        FrameBody::Workers(vec![WorkerSummary {
            rank: 2,
            status: "crashed".into(),
            fix_host: true,
            crash: Some("ValueError".into()),
        }]),
    ];
    let mut last = 0;
    for b in bodies {
        let f = ch.frame(b);
        assert!(f.seq > last);
        last = f.seq;
        let line = f.to_line();
        assert!(line.ends_with('\n') && !line.trim_end().contains('\n'));
        assert_eq!(SessionFrame::parse(&line).unwrap(), f);
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["v"], 1);
        assert!(v["kind"].is_string() && v.get("payload").is_some());
    }
}

#[test]
fn crash_frame_carries_the_schema_fields() {
    let mut ch = SessionChannel::new("s");
    let v: serde_json::Value = serde_json::from_str(&ch.frame(FrameBody::Crash(Box::new(event()))).to_line()).unwrap();
    assert_eq!(v["kind"], "CRASH");
    let p = &v["payload"];
    assert_eq!(p["exception_kind"], "ValueError");
    assert_eq!(p["message"], "Only one class present in y_true");
    assert!(p["cell_frames"].as_array().unwrap().len() >= 2);
    assert_eq!(p["variable_preview"]["ys"], "[1, 1, 1, 1]");
}

fn command(session: &str, seq: u64, command: &str, payload: Option<&str>) -> String {
    SessionFrame {
        v: 1,
        session_id: session.into(),
        seq,
        body: FrameBody::Command(CommandPayload {
            command: command.into(),
            payload: payload.map(str::to_string),
            resume: None,
        }),
    }
    .to_line()
}

#[test]
fn ordering_guard_rejects_stale_seq() {
    let mut ch = SessionChannel::new("s");
    assert!(ch.accept(&command("s", 5, "stack", None)).is_ok());
    assert!(matches!(
        ch.accept(&command("s", 5, "stack", None)),
        Err(FrameError::OutOfOrder { .. })
    ));
    assert!(matches!(
        ch.accept(&command("s", 3, "pass", None)),
        Err(FrameError::OutOfOrder { .. })
    ));
    assert!(matches!(
        ch.accept(&command("t", 9, "pass", None)),
        Err(FrameError::Session { .. })
    ));
    assert!(matches!(ch.accept("{not json"), Err(FrameError::Malformed(_))));
    let wrong_version = command("s", 10, "pass", None).replace("\"v\":1", "\"v\":2");
    assert!(matches!(ch.accept(&wrong_version), Err(FrameError::Version(2))));
    assert!(ch.accept(&command("s", 6, "pass", None)).is_ok());
}

fn run_repl(input: &str, labels_fix: bool) -> (Result<(), String>, String, String) {
    let (mut interp, out) = Interp::capturing();
    let repl = Repl::new(Cursor::new(input.to_string()), Vec::<u8>::new());
    let session = Rc::new(RefCell::new(RecoverySession::new(TerminalSource::new(repl))));
    interp.host.handler = Some(Box::new(session.clone()));
    let src = if labels_fix {
        LABELS.replace("labels = [1, 1, 1, 1]", "labels = [1, 1, 1, 1]\nbackup = [0, 1]")
    } else {
        LABELS.to_string()
    };
    let r = interp.run_source(&src).map_err(|e| e.to_string());
    interp.host.handler = None;
    let s = Rc::try_unwrap(session).ok().unwrap().into_inner();
    let console = String::from_utf8(s.source.repl.into_output()).unwrap();
    let o = out.borrow().clone();
    (r, o, console)
}

#[test]
fn repl_stack_lists_crashing_statement_innermost() {
    let (r, _, console) = run_repl("stack\nquit\n", false);
    assert!(r.unwrap_err().contains("ValueError"));
    let trace = console.split("(insitu) ").nth(1).unwrap();
    let last_cell = trace.lines().rfind(|l| l.trim_start().starts_with("cell ")).unwrap();
    assert!(last_cell.contains("loop[1]"), "{trace}");
    assert!(trace.contains("scores.append(auc(ys))"));
    assert!(console.contains("giving up"));
}

#[test]
fn repl_vars_and_read_only_eval() {
    let (r, out, console) = run_repl(
        "vars ys\nvars\neval len(ys)\neval ys = 5\neval ys.append(9)\nvars ys\nbogus\nquit\n",
        false,
    );
    assert!(r.is_err());
    assert_eq!(out, "");
    assert!(console.contains("ys = [1, 1, 1, 1]"));
    assert!(console.contains("scores = []"));
    assert!(console.contains("(insitu) 4\n"));
    assert!(console.contains("error: TypeError"), "{console}");
    assert!(console.contains("unknown command 'bogus'"));
    assert!(console.contains("surgery <file>"));
    // the append went to a copy; the live list is unchanged
    let replies: Vec<&str> = console.split("(insitu) ").collect();
    assert_eq!(replies[6].trim(), "ys = [1, 1, 1, 1]");
}

#[test]
fn repl_action_file_then_resume() {
    let dir = tempfile::tempdir().unwrap();
    let fix = dir.path().join("fix.py");
    std::fs::write(&fix, "labels[0] = 0\nys = labels\n").unwrap();
    let (r, out, console) = run_repl(&format!("action {}\n", fix.display()), false);
    r.unwrap();
    assert_eq!(out, "epoch 0\nepoch 1\nepoch 2\nscores [0.5, 0.5, 0.5]\n");
    assert!(console.contains("action applied; restart at"));
    assert!(console.contains("resuming"));
}

#[test]
fn repl_pass_retries_and_eof_aborts() {
    let (r, _, console) = run_repl("pass\n", false);
    // the retry fails the same way; input is exhausted so the session gives up
    assert!(r.is_err());
    assert!(console.contains("pass applied"));
    assert!(console.contains("giving up"));
}

fn read_frame(r: &mut BufReader<TcpStream>) -> SessionFrame {
    let mut line = String::new();
    r.read_line(&mut line).unwrap();
    SessionFrame::parse(&line).unwrap_or_else(|e| panic!("{e}: {line}"))
}

#[test]
fn bridge_session_end_to_end() {
    let fallback = ScriptSource::default();
    let bridge = BridgeSource::bind("127.0.0.1:0", fallback).unwrap();
    let addr = bridge.local_addr().unwrap();
    let client = thread::spawn(move || {
        let stream = TcpStream::connect(addr).unwrap();
        let mut w = stream.try_clone().unwrap();
        let mut r = BufReader::new(stream);
        let crash = read_frame(&mut r);
        assert_eq!(crash.seq, 1);
        let FrameBody::Crash(ev) = &crash.body else {
            panic!("CRASH must come first")
        };
        assert_eq!(ev.exception_kind, "ValueError");
        let sid = crash.session_id.clone();
        let state = read_frame(&mut r);
        let FrameBody::State(st) = &state.body else { panic!() };
        assert!(st.source.contains("def train"));

        w.write_all(b"garbage\n").unwrap();
        let FrameBody::Result(res) = read_frame(&mut r).body else {
            panic!()
        };
        assert!(!res.accepted && res.error.unwrap().contains("malformed"));

        w.write_all(command(&sid, 1, "eval", Some("ys")).as_bytes()).unwrap();
        let FrameBody::Result(res) = read_frame(&mut r).body else {
            panic!()
        };
        assert_eq!(res.output.as_deref(), Some("[1, 1, 1, 1]"));

        w.write_all(command(&sid, 1, "pass", None).as_bytes()).unwrap();
        let FrameBody::Result(res) = read_frame(&mut r).body else {
            panic!()
        };
        assert!(res.error.unwrap().contains("out-of-order"));

        w.write_all(command(&sid, 2, "surgery", Some(FIX)).as_bytes()).unwrap();
        let res_frame = read_frame(&mut r);
        let FrameBody::Result(res) = res_frame.body else {
            panic!()
        };
        assert!(res.accepted, "{:?}", res.error);
        assert_eq!(res.restart_location.unwrap().to_string(), "body[1]/loop[1]");
        let done = read_frame(&mut r);
        assert!(done.seq > res_frame.seq);
        assert_eq!(done.body, FrameBody::Resumed(ResumedPayload { resumed: true }));
    });
    let (mut interp, out) = Interp::capturing();
    interp.host.handler = Some(Box::new(RecoverySession::new(bridge)));
    interp.run_source(LABELS).unwrap();
    client.join().unwrap();
    assert_eq!(
        out.borrow().as_str(),
        "epoch 0\nepoch 1\nepoch 2\nscores [0.0, 0.0, 0.0]\n"
    );
}

#[test]
fn dropped_bridge_client_falls_back() {
    let fallback = ScriptSource::new(vec![RecoveryCommand::Action {
        code: "labels[0] = 0".into(),
        resume: true,
    }]);
    let bridge = BridgeSource::bind("127.0.0.1:0", fallback).unwrap();
    let addr = bridge.local_addr().unwrap();
    let client = thread::spawn(move || {
        let stream = TcpStream::connect(addr).unwrap();
        let mut r = BufReader::new(stream);
        let crash = read_frame(&mut r);
        assert!(matches!(crash.body, FrameBody::Crash(_)));
        // hang up without sending a command
    });
    let (mut interp, out) = Interp::capturing();
    interp.host.handler = Some(Box::new(RecoverySession::new(bridge)));
    interp.run_source(LABELS).unwrap();
    client.join().unwrap();
    assert!(out.borrow().ends_with("scores [0.5, 0.5, 0.5]\n"));
}

/// Minimal HTTP server: answers one request and returns its body.
fn stub_server(reply: &'static str) -> (String, thread::JoinHandle<String>) {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat", l.local_addr().unwrap());
    let h = thread::spawn(move || {
        let (s, _) = l.accept().unwrap();
        let mut r = BufReader::new(s.try_clone().unwrap());
        let mut len = 0;
        loop {
            let mut line = String::new();
            r.read_line(&mut line).unwrap();
            if line == "\r\n" {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
        }
        let mut body = vec![0; len];
        r.read_exact(&mut body).unwrap();
        let mut s = s;
        write!(
            s,
            "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{}",
            reply.len(),
            reply
        )
        .unwrap();
        String::from_utf8(body).unwrap()
    });
    (url, h)
}

fn diagnoser(endpoint: Option<String>) -> Diagnoser {
    let mut d = Diagnoser::from_env();
    d.endpoint = endpoint;
    d.key = Some("test-key".into());
    d.timeout = std::time::Duration::from_secs(5);
    d
}

#[test]
fn diagnose_without_endpoint_returns_notice() {
    assert_eq!(diagnoser(None).diagnose(&event(), FIX), NOT_CONFIGURED);
}

#[test]
fn diagnose_sends_annotated_trace_and_source() {
    let (url, server) =
        stub_server(r#"{"choices":[{"message":{"content":"labels has one class; guard the metric"}}]}"#);
    let answer = diagnoser(Some(url)).diagnose(&event(), FIX);
    assert_eq!(answer, "labels has one class; guard the metric");
    let sent: serde_json::Value = serde_json::from_str(&server.join().unwrap()).unwrap();
    let prompt = sent["messages"][1]["content"].as_str().unwrap();
    assert!(prompt.contains("scores.append(auc(ys))"));
    assert!(prompt.contains("ys = [1, 1, 1, 1]"));
    assert!(prompt.contains("ValueError: Only one class present"));
    assert!(prompt.contains(FIX));
}

#[test]
fn diagnose_unreachable_endpoint_warns() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let answer = diagnoser(Some(format!("http://127.0.0.1:{port}/"))).diagnose(&event(), FIX);
    assert!(answer.starts_with("warning: diagnosis failed"));
}
