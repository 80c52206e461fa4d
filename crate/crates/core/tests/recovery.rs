use std::cell::RefCell;
use std::rc::Rc;

use insitu::update::{Policy, RecoveryCommand, RecoverySession, ScriptSource};
use insitu::{Granularity, Interp};

type Session = Rc<RefCell<RecoverySession<ScriptSource>>>;

fn run(
    src: &str,
    gran: Granularity,
    cmds: Vec<RecoveryCommand>,
    policy: Policy,
) -> (Result<(), String>, String, Session) {
    let (mut interp, out) = Interp::capturing();
    interp.host.granularity = gran;
    let session = Rc::new(RefCell::new(
        RecoverySession::new(ScriptSource::new(cmds)).with_policy(policy),
    ));
    interp.host.handler = Some(Box::new(session.clone()));
    let r = interp.run_source(src).map_err(|e| e.to_string());
    let text = out.borrow().clone();
    (r, text, session)
}

fn cells(src: &str, cmds: Vec<RecoveryCommand>) -> (Result<(), String>, String, Session) {
    run(src, Granularity::Cells, cmds, Policy::Commands)
}

fn action(code: &str) -> RecoveryCommand {
    RecoveryCommand::Action {
        code: code.into(),
        resume: true,
    }
}

fn surgery(source: &str) -> RecoveryCommand {
    RecoveryCommand::Surgery {
        source: source.into(),
        resume: true,
    }
}

const SHORT_DATA: &str = r#"
import insitu
data = [1, 2, 3]
def main():
    total = 0
    for i in range(5):
        print("start", i)
        total = total + data[i]
        print("sum", total)
    print("done", total)
    return total
main = insitu.vaccinate(main)
main()
"#;

#[test]
fn action_fixes_state_and_retries_crashing_statement() {
    let (r, out, s) = cells(SHORT_DATA, vec![action("data.append(4)\ndata.append(5)")]);
    r.unwrap();
    let expected: String = {
        let mut t = 0;
        let mut o = String::new();
        for i in 0..5 {
            o += &format!("start {i}\n");
            t += i + 1;
            o += &format!("sum {t}\n");
        }
        o + "done 15\n"
    };
    assert_eq!(out, expected);
    let s = s.borrow();
    assert_eq!(s.records.len(), 1);
    assert_eq!(s.records[0].event.exception_kind, "IndexError");
    assert!(s.records[0].resumed);
    assert_eq!(s.procedures.len(), 1);
}

#[test]
fn no_command_aborts_with_original_exception() {
    let (r, out, s) = cells(SHORT_DATA, vec![]);
    let err = r.unwrap_err();
    assert!(err.contains("IndexError"), "{err}");
    assert!(out.ends_with("start 3\n"));
    assert!(!s.borrow().records[0].resumed);
}

#[test]
fn failed_action_keeps_session_open() {
    let (r, _, s) = cells(
        SHORT_DATA,
        vec![action("undefined_name + 1"), action("data.extend([4, 5])")],
    );
    r.unwrap();
    let s = s.borrow();
    assert_eq!(s.records[0].errors.len(), 1);
    assert!(s.records[0].errors[0].contains("NameError"));
}

#[test]
fn action_sees_function_locals() {
    let (r, out, _) = cells(SHORT_DATA, vec![action("total = 100\ndata.extend([0, 0])")]);
    r.unwrap();
    assert!(out.contains("sum 100\n"));
    assert!(out.ends_with("done 100\n"));
}

const DIVIDE: &str = r#"
import insitu
def main():
    out = []
    for d in [2, 1, 0, 4]:
        print("pre", d)
        y = 8 // d
        out.append(y)
    print(out)
main = insitu.vaccinate(main)
main()
"#;

#[test]
fn entry_surgery_restarts_at_first_edit_in_live_cell() {
    let fix = r#"
def main():
    out = []
    for d in [2, 1, 0, 4]:
        print("pre", d)
        y = 8 // max(d, 1)
        out.append(y)
    print(out)
"#;
    let (r, out, _) = cells(DIVIDE, vec![surgery(fix)]);
    r.unwrap();
    assert_eq!(out, "pre 2\npre 1\npre 0\npre 4\n[4, 8, 8, 2]\n");
}

#[test]
fn entry_surgery_before_crash_reruns_from_edit() {
    let fix = r#"
def main():
    out = []
    for d in [2, 1, 0, 4]:
        d = d + 1
        print("pre", d)
        y = 8 // d
        out.append(y)
    print(out)
"#;
    let (r, out, _) = cells(DIVIDE, vec![surgery(fix)]);
    r.unwrap();
    // the inserted statement runs for the crashed iteration and all later ones
    assert_eq!(out, "pre 2\npre 1\npre 0\npre 1\npre 5\n[4, 8, 8, 1]\n");
}

#[test]
fn entry_surgery_after_crash_point_applies_on_later_iterations() {
    let fix = r#"
def main():
    out = []
    for d in [2, 1, 0, 4]:
        print("pre", d)
        y = 8 // d
        out.append(y * 10)
    print(out)
"#;
    let (r, out, _) = cells(
        DIVIDE,
        vec![
            RecoveryCommand::Action {
                code: "d = 8".into(),
                resume: false,
            },
            surgery(fix),
        ],
    );
    r.unwrap();
    assert_eq!(out, "pre 2\npre 1\npre 0\npre 4\n[4, 8, 10, 20]\n");
}

#[test]
fn surgery_that_changes_parameters_is_rejected() {
    let bad = "def main(x):\n    pass\n";
    let (r, _, s) = cells(DIVIDE, vec![surgery(bad)]);
    assert!(r.is_err());
    assert!(s.borrow().records[0].errors[0].contains("surgery rejected"));
}

const HELPER: &str = r#"
import insitu
def scale(x):
    return 10 // x
def main():
    acc = 0
    for i in range(4):
        acc = acc + scale(i - 2)
    print(acc)
main = insitu.vaccinate(main)
main()
"#;

#[test]
fn helper_surgery_rebinds_global_and_retries() {
    let fix = "def scale(x):\n    if x == 0:\n        return 0\n    return 10 // x\n";
    let (r, out, s) = cells(HELPER, vec![surgery(fix)]);
    r.unwrap();
    // -5 + -10 + 0 + 10
    assert_eq!(out, "-5\n");
    let ev = &s.borrow().records[0].event;
    assert_eq!(ev.exception_kind, "ZeroDivisionError");
    assert_eq!(ev.trace[0].function, "scale");
}

const NESTED: &str = r#"
import insitu
def main():
    rows = [[1, 2], [3, 0], [5, 6]]
    total = 0
    for row in rows:
        print("row", row)
        for v in row:
            total = total + 12 // v
    print(total)
main = insitu.vaccinate(main)
main()
"#;

#[test]
fn crash_in_inner_loop_resumes_inner_frame_only() {
    let (r, out, s) = cells(NESTED, vec![action("v = 12")]);
    r.unwrap();
    // 12 + 6 + 4 + 1 + 2 + 2
    assert_eq!(out, "row [1, 2]\nrow [3, 0]\nrow [5, 6]\n27\n");
    let ev = &s.borrow().records[0].event;
    assert_eq!(ev.cell_frames.len(), 3);
}

#[test]
fn surgery_on_outer_loop_unwinds_inner_frame() {
    let fix = r#"
def main():
    rows = [[1, 2], [3, 0], [5, 6]]
    total = 0
    for row in rows:
        row = [v for v in row if v != 0]
        print("row", row)
        for v in row:
            total = total + 12 // v
    print(total)
"#;
    let (r, out, _) = cells(NESTED, vec![surgery(fix)]);
    r.unwrap();
    // the crashed row restarts from the inserted filter, so 12 // 3 is added twice
    assert_eq!(out, "row [1, 2]\nrow [3, 0]\nrow [3]\nrow [5, 6]\n30\n");
}

const USER_TRY: &str = r#"
import insitu
def main():
    n = 0
    for i in range(3):
        try:
            x = [1][i]
        except IndexError:
            n = n + 1
    print("caught", n)
main = insitu.vaccinate(main)
main()
"#;

#[test]
fn exceptions_handled_by_user_code_are_not_intercepted() {
    let (r, out, s) = cells(USER_TRY, vec![]);
    r.unwrap();
    assert_eq!(out, "caught 2\n");
    assert!(s.borrow().records.is_empty());
}

const FLAKY: &str = r#"
import insitu
calls = [0]
def fetch(i):
    calls[0] = calls[0] + 1
    if calls[0] % 3 == 0:
        raise RuntimeError("transient")
    return i
def main():
    got = []
    for i in range(4):
        got.append(fetch(i))
    print(got)
main = insitu.vaccinate(main)
main()
"#;

#[test]
fn pass_only_retries_transient_failure() {
    let (r, out, s) = run(FLAKY, Granularity::Cells, vec![], Policy::PassOnly(3));
    r.unwrap();
    assert_eq!(out, "[0, 1, 2, 3]\n");
    assert_eq!(s.borrow().records.len(), 1);
}

#[test]
fn pass_only_gives_up_on_persistent_failure() {
    let (r, _, s) = run(SHORT_DATA, Granularity::Cells, vec![], Policy::PassOnly(3));
    assert!(r.unwrap_err().contains("IndexError"));
    assert_eq!(s.borrow().records.len(), 4);
}

#[test]
fn statement_mode_supports_action_but_not_entry_surgery() {
    let (r, out, _) = run(
        SHORT_DATA,
        Granularity::Statements,
        vec![action("data.extend([4, 5])")],
        Policy::Commands,
    );
    r.unwrap();
    assert!(out.ends_with("done 15\n"));

    let fix = DIVIDE.replace("8 // d", "8 // max(d, 1)");
    let fix = &fix[fix.find("def main").unwrap()..fix.find("main = ").unwrap()];
    let (r, _, s) = run(DIVIDE, Granularity::Statements, vec![surgery(fix)], Policy::Commands);
    assert!(r.is_err());
    assert!(s.borrow().records[0].errors[0].contains("not decomposed"));
}

#[test]
fn replayed_procedure_fixes_matching_crash() {
    let (r, _, s) = cells(SHORT_DATA, vec![action("data.extend([4, 5])")]);
    r.unwrap();
    let proc = s.borrow().procedures[0].clone();

    let (mut interp, out) = Interp::capturing();
    let mut session = RecoverySession::new(ScriptSource::default());
    session.replay.push(proc);
    interp.host.handler = Some(Box::new(session));
    interp.run_source(SHORT_DATA).unwrap();
    assert!(out.borrow().ends_with("done 15\n"));
}

#[test]
fn outer_frame_picks_up_edit_after_inner_loop_returns() {
    let fix = r#"
def main():
    rows = [[1, 2], [3, 0], [5, 6]]
    total = 0
    for row in rows:
        print("row", row)
        for v in row:
            total = total + 12 // v
        print("subtotal", total)
    print(total)
"#;
    let (r, out, _) = cells(
        NESTED,
        vec![
            RecoveryCommand::Action {
                code: "v = 12".into(),
                resume: false,
            },
            surgery(fix),
        ],
    );
    r.unwrap();
    // the running outer iteration already switched to the new code
    assert_eq!(
        out,
        "row [1, 2]\nrow [3, 0]\nsubtotal 23\nrow [5, 6]\nsubtotal 27\n27\n"
    );
}

#[test]
fn surgery_removing_a_live_loop_restarts_in_its_parent() {
    let fix = r#"
def main():
    rows = [[1, 2], [3, 0], [5, 6]]
    total = 0
    for row in rows:
        print("row", row)
        total = total + sum(row)
    print(total)
"#;
    let (r, out, _) = cells(NESTED, vec![surgery(fix)]);
    r.unwrap();
    // 18 + 4 from the abandoned inner loop, then 3 + 11
    assert_eq!(out, "row [1, 2]\nrow [3, 0]\nrow [5, 6]\n36\n");
}

#[test]
fn script_file_loads_inline_and_file_payloads() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("fix.py"), "def scale(x):\n    return 1\n").unwrap();
    let script = dir.path().join("fix.toml");
    std::fs::write(
        &script,
        r#"
[[command]]
kind = "action"
inline_payload = "print('hi')"
resume = false

[[command]]
kind = "surgery"
payload_path = "fix.py"
"#,
    )
    .unwrap();
    let cmds = insitu::update::ScriptFile::load(&script).unwrap();
    assert_eq!(cmds.len(), 2);
    assert!(!cmds[0].resumes());
    let (r, out, _) = cells(HELPER, cmds);
    r.unwrap();
    // -5 + -10 before the crash, then 1 + 1
    assert_eq!(out, "hi\n-13\n");
}

#[test]
fn script_record_needs_exactly_one_payload() {
    let f: insitu::update::ScriptFile = toml::from_str("[[command]]\nkind = \"action\"\n").unwrap();
    assert!(f.resolve(std::path::Path::new(".")).is_err());
}
