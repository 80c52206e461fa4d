//! Seeded program generators for conformance checks.
//!
//! Entry functions mix loops up to depth three, branches, early exits,
//! list mutation and prints; every value stays small so runs are short.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MAX_LOOP_DEPTH: usize = 3;

struct Gen {
    rng: ChaCha8Rng,
    out: String,
    next: usize,
    /// Loop variables in scope, innermost last.
    loop_vars: Vec<String>,
    /// Statements left in the budget for the whole function.
    budget: usize,
    defs: Vec<String>,
}

impl Gen {
    fn new(seed: u64, budget: usize) -> Gen {
        Gen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            out: String::new(),
            next: 0,
            loop_vars: Vec::new(),
            budget,
            defs: Vec::new(),
        }
    }

    fn id(&mut self) -> usize {
        self.next += 1;
        self.next
    }

    fn line(&mut self, indent: usize, text: &str) {
        for _ in 0..indent {
            self.out.push_str("    ");
        }
        self.out.push_str(text);
        self.out.push('\n');
    }

    fn atom(&mut self) -> String {
        let mut pool = vec!["x".to_string(), "y".to_string(), "len(acc)".to_string()];
        pool.extend(self.loop_vars.iter().cloned());
        if self.rng.gen_bool(0.3) {
            return self.rng.gen_range(0..7).to_string();
        }
        pool[self.rng.gen_range(0..pool.len())].clone()
    }

    fn cond(&mut self) -> String {
        let a = self.atom();
        let b = self.atom();
        let m = self.rng.gen_range(2..5);
        let r = self.rng.gen_range(0..m);
        format!("({a} + {b}) % {m} == {r}")
    }

    fn simple(&mut self, indent: usize) {
        let id = self.id();
        match self.rng.gen_range(0..7) {
            0 | 1 => {
                let a = self.atom();
                self.line(indent, &format!("x = (x + {a} + {id}) % 1000"));
            }
            2 => {
                let a = self.atom();
                self.line(indent, &format!("y = (y * 3 + {a}) % 17"));
            }
            3 => {
                let a = self.atom();
                self.line(indent, &format!("acc.append(x - {a})"));
            }
            4 => {
                let a = self.atom();
                self.line(indent, &format!("print(\"s{id}\", x, {a})"));
            }
            5 => {
                self.line(indent, "if acc:");
                let a = self.atom();
                self.line(indent + 1, &format!("acc[-1] = acc[-1] + {a}"));
            }
            _ => {
                if let Some(h) = self.defs.last().cloned() {
                    self.line(indent, &format!("x = {h}(x) % 1000"));
                } else {
                    self.line(indent, &format!("x = x + {id} % 3"));
                }
            }
        }
    }

    fn block(&mut self, indent: usize, depth: usize, in_loop: bool, len: usize) {
        for _ in 0..len.max(1) {
            self.stmt(indent, depth, in_loop);
        }
    }

    fn stmt(&mut self, indent: usize, depth: usize, in_loop: bool) {
        if self.budget == 0 {
            self.simple(indent);
            return;
        }
        self.budget -= 1;
        let roll = self.rng.gen_range(0..100);
        match roll {
            0..=39 => self.simple(indent),
            40..=54 => {
                let c = self.cond();
                self.line(indent, &format!("if {c}:"));
                let n = self.rng.gen_range(1..3);
                self.block(indent + 1, depth, in_loop, n);
                if self.rng.gen_bool(0.3) {
                    let c = self.cond();
                    self.line(indent, &format!("elif {c}:"));
                    self.block(indent + 1, depth, in_loop, 1);
                }
                if self.rng.gen_bool(0.5) {
                    self.line(indent, "else:");
                    self.block(indent + 1, depth, in_loop, 1);
                }
            }
            55..=69 if depth < MAX_LOOP_DEPTH => {
                let v = format!("i{depth}");
                let k = self.rng.gen_range(1..4);
                self.line(indent, &format!("for {v} in range({k}):"));
                self.loop_vars.push(v);
                let n = self.rng.gen_range(1..4);
                self.block(indent + 1, depth + 1, true, n);
                self.loop_vars.pop();
            }
            70..=77 if depth < MAX_LOOP_DEPTH => {
                let w = format!("w{depth}");
                let k = self.rng.gen_range(1..4);
                self.line(indent, &format!("{w} = 0"));
                self.line(indent, &format!("while {w} < {k}:"));
                self.line(indent + 1, &format!("{w} = {w} + 1"));
                self.loop_vars.push(w);
                let n = self.rng.gen_range(1..3);
                self.block(indent + 1, depth + 1, true, n);
                self.loop_vars.pop();
                if self.rng.gen_bool(0.2) {
                    self.line(indent, "else:");
                    self.line(indent + 1, "print(\"loop-else\", x)");
                }
            }
            78..=85 if in_loop => {
                let c = self.cond();
                self.line(indent, &format!("if {c}:"));
                let kw = if self.rng.gen_bool(0.5) { "break" } else { "continue" };
                self.line(indent + 1, kw);
            }
            86..=89 => {
                let c = self.cond();
                self.line(indent, &format!("if {c} and x > 40:"));
                self.line(indent + 1, "print(\"early\", x)");
                self.line(indent + 1, "return [x, y, len(acc), acc[:3]]");
            }
            90..=94 => {
                let m = self.rng.gen_range(2..6);
                self.line(indent, "try:");
                self.line(indent + 1, &format!("y = acc[x % {m}] % 17"));
                self.line(indent, "except IndexError:");
                self.line(indent + 1, "y = (y + 1) % 17");
            }
            95..=99 if indent == 1 && self.defs.len() < 2 => {
                let name = format!("h{}", self.id());
                let k = self.rng.gen_range(1..5);
                self.line(indent, &format!("def {name}(a):"));
                self.line(indent + 1, &format!("return a * {k} + y"));
                self.defs.push(name);
            }
            _ => self.simple(indent),
        }
    }
}

/// An entry function `entry(n)`; its result is a list of small ints.
pub fn entry_function(seed: u64) -> String {
    let mut g = Gen::new(seed, 14);
    g.line(0, "def entry(n):");
    g.line(1, "x = n");
    g.line(1, "y = 1");
    g.line(1, "acc = []");
    let n = g.rng.gen_range(3..7);
    g.block(1, 0, false, n);
    if !g.out.contains("for ") && !g.out.contains("while ") {
        g.line(1, "for i0 in range(2):");
        g.loop_vars.push("i0".into());
        g.block(2, 1, true, 2);
        g.loop_vars.pop();
    }
    g.line(1, "print(\"end\", x, y, acc)");
    g.line(1, "return [x, y, len(acc)]");
    g.out
}

/// Straight-line module code of at most six top-level statements with
/// branches; used to check that running a prefix and then resuming at any
/// statement equals one uninterrupted run.
pub fn branchy_cell(seed: u64) -> String {
    let mut g = Gen::new(seed, 0);
    let mut out = String::from("x = 3\ny = 1\nacc = [2]\n");
    let n = g.rng.gen_range(3..7);
    for _ in 0..n {
        g.out.clear();
        if g.rng.gen_bool(0.45) {
            let c = g.cond();
            g.line(0, &format!("if {c}:"));
            let k = g.rng.gen_range(1..3);
            for _ in 0..k {
                g.simple(1);
            }
            if g.rng.gen_bool(0.6) {
                g.line(0, "else:");
                g.simple(1);
            }
        } else if g.rng.gen_bool(0.15) {
            g.line(0, "try:");
            g.line(1, "y = acc[x % 4] % 17");
            g.line(0, "except IndexError:");
            g.line(1, "y = y + 1");
        } else {
            g.simple(0);
        }
        out.push_str(&g.out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_module;

    #[test]
    fn generated_code_parses_and_is_deterministic() {
        for seed in 0..50 {
            let f = entry_function(seed);
            parse_module(&f).unwrap_or_else(|e| panic!("{e}\n{f}"));
            assert_eq!(f, entry_function(seed));
            let c = branchy_cell(seed);
            let top = parse_module(&c).unwrap();
            assert!(top.len() <= 9);
        }
    }

    #[test]
    fn loop_nesting_is_bounded() {
        for seed in 0..200 {
            let f = entry_function(seed);
            // loop headers enclosing each line, by indentation
            let mut open: Vec<usize> = Vec::new();
            let mut deepest = 0;
            for l in f.lines() {
                let indent = l.len() - l.trim_start().len();
                while open.last().is_some_and(|i| *i >= indent) {
                    open.pop();
                }
                let t = l.trim_start();
                if t.starts_with("for ") || t.starts_with("while ") {
                    open.push(indent);
                    deepest = deepest.max(open.len());
                }
            }
            assert!(deepest <= MAX_LOOP_DEPTH, "{f}");
        }
    }
}
