//! Checks that vaccination and resumption do not change what programs do.

use crate::lang::ast::{child_block_mut, child_blocks, Block, BlockKind, Expr, Stmt};
use crate::lang::interp::Frame;
use crate::lang::{parse_module, Flow, Interp};
use crate::runtime::{exec_from, synthesize_unfinished};
use crate::source::StatementPath;
use crate::vaccinator::Granularity;

use super::corpus;

/// Observable behaviour of one run: the print log and the result.
#[derive(Debug, Clone, PartialEq)]
pub struct Observed {
    pub output: String,
    pub result: String,
}

fn run_entry(src: &str, arg: i64, vaccinate: Option<Granularity>) -> Result<Observed, String> {
    let (mut interp, out) = Interp::capturing();
    let mut program = src.to_string();
    if let Some(g) = vaccinate {
        interp.host.granularity = g;
        program.push_str("import insitu\nentry = insitu.vaccinate(entry)\n");
    }
    program.push_str(&format!("result = entry({arg})\n"));
    interp.run_source(&program).map_err(|e| e.to_string())?;
    let result = interp.global("result").map(|v| v.repr()).unwrap_or_default();
    let output = out.borrow().clone();
    Ok(Observed { output, result })
}

/// Runs generated entry function `seed` plain and vaccinated at both
/// granularities; any difference is reported with the program text.
pub fn check_semantics(seed: u64) -> Result<Observed, String> {
    let src = corpus::entry_function(seed);
    let arg = (seed % 5) as i64;
    let plain = run_entry(&src, arg, None).map_err(|e| format!("seed {seed}: original failed: {e}\n{src}"))?;
    for g in [Granularity::Cells, Granularity::Statements] {
        let v = run_entry(&src, arg, Some(g)).map_err(|e| format!("seed {seed} {g:?}: {e}\n{src}"))?;
        if v != plain {
            return Err(format!(
                "seed {seed} {g:?} differs\n--- program\n{src}--- original\n{plain:?}\n--- vaccinated\n{v:?}"
            ));
        }
    }
    Ok(plain)
}

/// Every statement position in `block`, in textual order.
pub fn statement_paths(block: &Block, kind: BlockKind) -> Vec<StatementPath> {
    fn walk(block: &Block, prefix: &StatementPath, kind: BlockKind, out: &mut Vec<StatementPath>) {
        for (i, s) in block.iter().enumerate() {
            let p = prefix.child(kind, i as u32);
            out.push(p.clone());
            for (k, b) in child_blocks(s) {
                walk(b, &p, k, out);
            }
        }
    }
    let mut out = Vec::new();
    walk(block, &StatementPath::default(), kind, &mut out);
    out
}

fn replace_at(block: &mut Block, steps: &[(BlockKind, u32)], stmt: Stmt) {
    let (_, i) = steps[0];
    if steps.len() == 1 {
        block[i as usize] = stmt;
        return;
    }
    let inner = child_block_mut(&mut block[i as usize], steps[1].0).expect("path into a child block");
    replace_at(inner, &steps[1..], stmt);
}

const SPLIT: &str = "__split__";

fn state(interp: &Interp, out: &std::cell::RefCell<String>) -> Observed {
    let vars = ["x", "y", "acc"].map(|n| interp.global(n).map(|v| v.repr()).unwrap_or_default());
    Observed {
        output: out.borrow().clone(),
        result: vars.join(" "),
    }
}

/// Runs `block` up to the statement at `path` and reports whether it got there.
fn run_prefix(interp: &mut Interp, block: &Block, path: &StatementPath) -> Result<bool, String> {
    let mut cut = block.clone();
    let marker = Stmt::Raise(Some(Expr::Call {
        func: Box::new(Expr::Name("RuntimeError".into())),
        args: vec![Expr::str(SPLIT)],
        kwargs: Vec::new(),
    }));
    replace_at(&mut cut, &path.steps, marker);
    let frame = Frame::module(interp.globals.clone());
    match interp.exec_block(&cut, BlockKind::Body, &frame) {
        Ok(()) => Ok(false),
        Err(Flow::Raise(e)) if e.message() == SPLIT => Ok(true),
        Err(f) => Err(format!("prefix run failed: {f:?}")),
    }
}

/// Counts of one concatenation check.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SplitStats {
    pub splits: usize,
    /// Positions the uninterrupted run never reaches.
    pub unreached: usize,
}

/// For generated cell `seed`, checks at every reachable statement that the
/// prefix run followed by a resumed suffix equals one whole run, using both
/// the in-place executor and the synthesized remainder block.
pub fn check_concatenation(seed: u64) -> Result<SplitStats, String> {
    let src = corpus::branchy_cell(seed);
    let block = parse_module(&src).map_err(|e| e.to_string())?;
    let (mut whole, whole_out) = Interp::capturing();
    whole
        .exec_block(&block, BlockKind::Body, &Frame::module(whole.globals.clone()))
        .map_err(|f| format!("seed {seed}: whole run failed: {f:?}\n{src}"))?;
    let expected = state(&whole, &whole_out);

    let mut stats = SplitStats::default();
    for path in statement_paths(&block, BlockKind::Body) {
        for synthesized in [false, true] {
            let (mut interp, out) = Interp::capturing();
            if !run_prefix(&mut interp, &block, &path)? {
                stats.unreached += usize::from(!synthesized);
                break;
            }
            let frame = Frame::module(interp.globals.clone());
            let r = if synthesized {
                synthesize_unfinished(&block, BlockKind::Body, &path)
                    .and_then(|rest| interp.exec_block(&rest, BlockKind::Body, &frame))
            } else {
                exec_from(&mut interp, &frame, &block, BlockKind::Body, &path.steps)
            };
            r.map_err(|f| format!("seed {seed}: resume at {path} failed: {f:?}\n{src}"))?;
            let got = state(&interp, &out);
            if got != expected {
                let how = if synthesized { "synthesized" } else { "in place" };
                return Err(format!(
                    "seed {seed}: split at {path} ({how}) differs\n{src}\nwhole: {expected:?}\nsplit: {got:?}"
                ));
            }
            stats.splits += usize::from(!synthesized);
        }
    }
    Ok(stats)
}
