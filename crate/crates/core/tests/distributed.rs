use std::cell::RefCell;
use std::rc::Rc;
use std::thread;
use std::time::{Duration, Instant};

use insitu::crash_bench::dataparallel::{program, FIX_ACTION, STEPS};
use insitu::distributed::*;
use insitu::update::{RecoveryCommand, RecoverySession, ScriptSource};
use insitu::Interp;

struct Outcome {
    output: String,
    result: Result<(), String>,
    reports: Vec<Vec<Delivery>>,
}

fn worker(addr: std::net::SocketAddr, rank: u32, world: u32, src: String, with_fix: bool) -> Outcome {
    let client = Rc::new(RefCell::new(
        WorkerClient::connect(addr, rank, world, Duration::from_secs(20)).unwrap(),
    ));
    let (mut interp, out) = Interp::capturing();
    interp.register_module("dist", dist_module(Some(client.clone())));
    let cmds = if with_fix {
        vec![RecoveryCommand::Action {
            code: FIX_ACTION.into(),
            resume: true,
        }]
    } else {
        vec![]
    };
    let handler = Rc::new(RefCell::new(DistributedHandler::new(
        client,
        RecoverySession::new(ScriptSource::new(cmds)),
    )));
    interp.host.handler = Some(Box::new(handler.clone()));
    let result = interp.run_source(&src).map_err(|e| e.to_string());
    interp.host.handler = None;
    let reports = handler.borrow().reports.clone();
    let output = out.borrow().clone();
    Outcome {
        output,
        result,
        reports,
    }
}

fn run_world(corrupt: &[u32], world: u32, with_fix: bool) -> (Vec<Outcome>, Coordinator) {
    let coord = Coordinator::start("127.0.0.1:0", Duration::from_secs(20)).unwrap();
    let addr = coord.local_addr();
    let src = program(corrupt, STEPS);
    let handles: Vec<_> = (0..world)
        .map(|r| {
            let src = src.clone();
            thread::spawn(move || worker(addr, r, world, src, with_fix))
        })
        .collect();
    let outs = handles.into_iter().map(|h| h.join().unwrap()).collect();
    (outs, coord)
}

#[test]
fn crashed_workers_resume_and_match_the_crash_free_run() {
    let started = Instant::now();
    let (clean, _) = run_world(&[], 4, false);
    for o in &clean {
        o.result.as_ref().unwrap();
    }
    let (fixed, coord) = run_world(&[1, 2], 4, true);
    for (r, o) in fixed.iter().enumerate() {
        o.result.as_ref().unwrap_or_else(|e| panic!("rank {r}: {e}"));
        assert_eq!(o.output, clean[r].output, "rank {r}");
    }
    // exactly one fix host; its report says the other crashed worker resumed
    let reports: Vec<_> = fixed.iter().flat_map(|o| o.reports.iter()).collect();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0].len(), 1);
    assert_eq!(reports[0][0].outcome, "resumed");
    assert!([1, 2].contains(&reports[0][0].worker_id));
    let recs = coord.records();
    assert_eq!(recs.len(), 4);
    assert!(recs
        .iter()
        .all(|r| r.status == WorkerStatus::Running || r.status == WorkerStatus::Resumed));
    assert!(started.elapsed() < Duration::from_secs(60));
}

#[test]
fn without_a_fix_both_crashed_workers_fail() {
    // no command source has anything to offer: the host gives up and the
    // waiting peer is told so rather than hanging
    let coord = Coordinator::start("127.0.0.1:0", Duration::from_secs(5)).unwrap();
    let addr = coord.local_addr();
    let src = program(&[0, 1], 20);
    let hs: Vec<_> = (0..2)
        .map(|r| {
            let src = src.clone();
            thread::spawn(move || worker(addr, r, 2, src, false))
        })
        .collect();
    for h in hs {
        let o = h.join().unwrap();
        assert!(o.result.unwrap_err().contains("TypeError"));
    }
}

#[test]
fn messages_round_trip_with_length_prefix() {
    let msgs = vec![
        Message::Hello {
            worker_id: 3,
            world: 4,
            address: "127.0.0.1:9".into(),
        },
        Message::Resume {
            worker_id: 1,
            ok: false,
            error: Some("x".into()),
        },
        Message::Sync {
            worker_id: 0,
            round: 7,
            value: 0.1,
        },
    ];
    let mut buf = Vec::new();
    for m in &msgs {
        write_message(&mut buf, m).unwrap();
    }
    let len = u32::from_be_bytes(buf[..4].try_into().unwrap()) as usize;
    let first: serde_json::Value = serde_json::from_slice(&buf[4..4 + len]).unwrap();
    assert_eq!(first["v"], 1);
    assert_eq!(first["kind"], "HELLO");
    let mut r = &buf[..];
    for m in &msgs {
        assert_eq!(&read_message(&mut r).unwrap(), m);
    }
}

#[test]
fn lone_or_late_worker_is_registered_and_becomes_fix_host() {
    let coord = Coordinator::start("127.0.0.1:0", Duration::from_secs(5)).unwrap();
    let src = program(&[0], 20);
    let o = worker(coord.local_addr(), 0, 1, src, true);
    o.result.unwrap();
    assert_eq!(o.reports, vec![Vec::<Delivery>::new()]);
    let rec = &coord.records()[0];
    assert_eq!(rec.worker_id, 0);
}

#[test]
fn status_cycle_is_fixed() {
    let mut s = WorkerStatus::Running;
    let mut seen = vec![s];
    for _ in 0..4 {
        s = s.next();
        seen.push(s);
    }
    assert_eq!(
        seen,
        vec![
            WorkerStatus::Running,
            WorkerStatus::Crashed,
            WorkerStatus::Recovering,
            WorkerStatus::Resumed,
            WorkerStatus::Running
        ]
    );
}

#[test]
fn mismatched_signature_is_skipped_in_report() {
    use std::net::TcpStream;
    let coord = Coordinator::start("127.0.0.1:0", Duration::from_secs(2)).unwrap();
    let sig = |k: &str| PeerSignature {
        exception_kind: k.into(),
        location: "body[1]/loop[1]".parse().unwrap(),
    };
    let mut a = TcpStream::connect(coord.local_addr()).unwrap();
    let mut b = TcpStream::connect(coord.local_addr()).unwrap();
    for (id, s, k) in [(0, &mut a, "TypeError"), (1, &mut b, "KeyError")] {
        write_message(
            s,
            &Message::Hello {
                worker_id: id,
                world: 2,
                address: String::new(),
            },
        )
        .unwrap();
        read_message(s).unwrap();
        write_message(
            s,
            &Message::Crash {
                worker_id: id,
                signature: sig(k),
                summary: String::new(),
            },
        )
        .unwrap();
        let Message::Ack { role, .. } = read_message(s).unwrap() else {
            panic!()
        };
        assert_eq!(role, Some(Role::FixHost));
    }
    let proc = insitu::update::FixProcedure {
        crash_signature: insitu::update::CrashSignature {
            function: "train".into(),
            exception_kind: "TypeError".into(),
            location: sig("TypeError").location,
        },
        commands: vec![RecoveryCommand::Pass],
    };
    write_message(
        &mut a,
        &Message::Fix {
            signature: sig("TypeError"),
            procedure: Some(proc),
        },
    )
    .unwrap();
    let Message::Ack { report, .. } = read_message(&mut a).unwrap() else {
        panic!()
    };
    assert_eq!(report.len(), 1);
    assert_eq!(report[0].worker_id, 1);
    assert_eq!(report[0].outcome, "skipped");
    let recs = coord.records();
    assert_eq!(recs[0].status, WorkerStatus::Resumed);
    assert_eq!(recs[1].status, WorkerStatus::Recovering);
}
