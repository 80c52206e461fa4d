//! Source regeneration. Output reparses to a structurally equal tree.

use std::fmt::Write;

use super::ast::*;
use super::format::float_repr;

const INDENT: &str = "    ";

pub fn unparse_block(block: &[Stmt]) -> String {
    let mut out = String::new();
    write_block(&mut out, block, 0);
    out
}

pub fn unparse_stmt(stmt: &Stmt) -> String {
    let mut out = String::new();
    write_stmt(&mut out, stmt, 0);
    out
}

pub fn unparse_expr(expr: &Expr) -> String {
    let mut out = String::new();
    write_expr(&mut out, expr, 0);
    out
}

/// Renders a string literal with single quotes and Python-compatible escapes.
pub fn quote_str(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if (c as u32) < 0x20 || c as u32 == 0x7f => {
                let _ = write!(out, "\\x{:02x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}

fn pad(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str(INDENT);
    }
}

fn write_block(out: &mut String, block: &[Stmt], level: usize) {
    if block.is_empty() {
        pad(out, level);
        out.push_str("pass\n");
        return;
    }
    for s in block {
        write_stmt(out, s, level);
    }
}

fn write_params(out: &mut String, params: &[Param]) {
    for (i, p) in params.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&p.name);
        if let Some(d) = &p.default {
            out.push('=');
            write_expr(out, d, 1);
        }
    }
}

fn write_decorators(out: &mut String, decorators: &[Expr], level: usize) {
    for d in decorators {
        pad(out, level);
        out.push('@');
        write_expr(out, d, 0);
        out.push('\n');
    }
}

fn write_stmt(out: &mut String, stmt: &Stmt, level: usize) {
    match stmt {
        Stmt::If { test, body, orelse } => {
            pad(out, level);
            out.push_str("if ");
            write_expr(out, test, 0);
            out.push_str(":\n");
            write_block(out, body, level + 1);
            write_else(out, orelse, level);
        }
        Stmt::While { test, body, orelse } => {
            pad(out, level);
            out.push_str("while ");
            write_expr(out, test, 0);
            out.push_str(":\n");
            write_block(out, body, level + 1);
            if !orelse.is_empty() {
                pad(out, level);
                out.push_str("else:\n");
                write_block(out, orelse, level + 1);
            }
        }
        Stmt::For {
            target,
            iter,
            body,
            orelse,
        } => {
            pad(out, level);
            out.push_str("for ");
            write_expr(out, target, 0);
            out.push_str(" in ");
            write_expr(out, iter, 0);
            out.push_str(":\n");
            write_block(out, body, level + 1);
            if !orelse.is_empty() {
                pad(out, level);
                out.push_str("else:\n");
                write_block(out, orelse, level + 1);
            }
        }
        Stmt::Try {
            body,
            handlers,
            orelse,
            finalbody,
        } => {
            pad(out, level);
            out.push_str("try:\n");
            write_block(out, body, level + 1);
            for h in handlers {
                pad(out, level);
                out.push_str("except");
                if let Some(k) = &h.kind {
                    out.push(' ');
                    write_expr(out, k, 1);
                    if let Some(n) = &h.name {
                        out.push_str(" as ");
                        out.push_str(n);
                    }
                }
                out.push_str(":\n");
                write_block(out, &h.body, level + 1);
            }
            if !orelse.is_empty() {
                pad(out, level);
                out.push_str("else:\n");
                write_block(out, orelse, level + 1);
            }
            if !finalbody.is_empty() {
                pad(out, level);
                out.push_str("finally:\n");
                write_block(out, finalbody, level + 1);
            }
        }
        Stmt::With { item, target, body } => {
            pad(out, level);
            out.push_str("with ");
            write_expr(out, item, 0);
            if let Some(t) = target {
                out.push_str(" as ");
                write_expr(out, t, 0);
            }
            out.push_str(":\n");
            write_block(out, body, level + 1);
        }
        Stmt::FuncDef(def) => {
            write_decorators(out, &def.decorators, level);
            pad(out, level);
            let _ = write!(out, "def {}(", def.name);
            write_params(out, &def.params);
            out.push_str("):\n");
            write_block(out, &def.body, level + 1);
        }
        Stmt::CellDef(def) => {
            write_decorators(out, &def.decorators, level);
            pad(out, level);
            let _ = write!(out, "def {}(", def.name);
            write_params(out, &def.params);
            out.push_str("):\n");
            for (p, slot) in def.params.iter().zip(&def.slots) {
                pad(out, level + 1);
                let _ = writeln!(out, "__ns__[{}] = {}", quote_str(slot), p.name);
            }
            write_barrier(out, &def.barrier, level + 1);
            pad(out, level);
            let _ = writeln!(out, "__ns__[{}] = {}", quote_str(&def.bind), def.name);
        }
        Stmt::Barrier(b) => write_barrier(out, b, level),
        simple => {
            pad(out, level);
            write_simple(out, simple);
            out.push('\n');
        }
    }
}

fn write_else(out: &mut String, orelse: &Block, level: usize) {
    if orelse.is_empty() {
        return;
    }
    if let [Stmt::If {
        test,
        body,
        orelse: inner,
    }] = orelse.as_slice()
    {
        pad(out, level);
        out.push_str("elif ");
        write_expr(out, test, 0);
        out.push_str(":\n");
        write_block(out, body, level + 1);
        write_else(out, inner, level);
        return;
    }
    pad(out, level);
    out.push_str("else:\n");
    write_block(out, orelse, level + 1);
}

/// Emits the crash barrier and the indicator reaction for a cell call.
fn write_barrier(out: &mut String, b: &Barrier, level: usize) {
    let cell = format!("__cell_{}__", b.cell);
    pad(out, level);
    out.push_str("try:\n");
    pad(out, level + 1);
    let _ = writeln!(out, "__flag__ = {cell}(__ns__)");
    pad(out, level);
    out.push_str("except Exception as __exc__:\n");
    pad(out, level + 1);
    let _ = writeln!(out, "__flag__ = __insitu__.recover(__ns__, {}, __exc__)", b.cell);
    match b.context {
        BarrierContext::Loop => {
            for (kind, action) in [
                ("BREAK", "break"),
                ("CONTINUE", "continue"),
                ("RETURN", "return __flag__"),
            ] {
                pad(out, level);
                let _ = writeln!(out, "if __flag__[0] == '{kind}':");
                pad(out, level + 1);
                let _ = writeln!(out, "{action}");
            }
        }
        BarrierContext::Root | BarrierContext::FuncDef => {
            pad(out, level);
            out.push_str("if __flag__[0] == 'RETURN':\n");
            pad(out, level + 1);
            out.push_str("return __flag__[1]\n");
        }
    }
}

fn write_simple(out: &mut String, stmt: &Stmt) {
    match stmt {
        Stmt::Expr(e) => write_expr(out, e, 0),
        Stmt::Assign { targets, value } => {
            for t in targets {
                write_expr(out, t, 0);
                out.push_str(" = ");
            }
            write_expr(out, value, 0);
        }
        Stmt::AugAssign { target, op, value } => {
            write_expr(out, target, 0);
            let _ = write!(out, " {}= ", op.symbol());
            write_expr(out, value, 0);
        }
        Stmt::Break => out.push_str("break"),
        Stmt::Continue => out.push_str("continue"),
        Stmt::Pass => out.push_str("pass"),
        Stmt::Return(None) => out.push_str("return"),
        Stmt::Return(Some(e)) => {
            out.push_str("return ");
            write_expr(out, e, 0);
        }
        Stmt::Raise(None) => out.push_str("raise"),
        Stmt::Raise(Some(e)) => {
            out.push_str("raise ");
            write_expr(out, e, 0);
        }
        Stmt::Assert { test, msg } => {
            out.push_str("assert ");
            write_expr(out, test, 1);
            if let Some(m) = msg {
                out.push_str(", ");
                write_expr(out, m, 1);
            }
        }
        Stmt::Del(targets) => {
            out.push_str("del ");
            for (i, t) in targets.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_expr(out, t, 2);
            }
        }
        Stmt::Import { module, alias } => {
            let _ = write!(out, "import {module}");
            if let Some(a) = alias {
                let _ = write!(out, " as {a}");
            }
        }
        Stmt::ImportFrom { module, names } => {
            let _ = write!(out, "from {module} import ");
            for (i, (n, a)) in names.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                out.push_str(n);
                if let Some(a) = a {
                    let _ = write!(out, " as {a}");
                }
            }
        }
        Stmt::Signal(kind, value) => {
            let _ = write!(out, "return ('{}',", kind.as_str());
            if let Some(v) = value {
                out.push(' ');
                write_expr(out, v, 1);
            }
            out.push(')');
        }
        _ => unreachable!("compound statement in simple position"),
    }
}

// Precedence levels, loosest first.
const P_LAMBDA: u8 = 0;
const P_IFEXP: u8 = 1;
const P_OR: u8 = 2;
const P_AND: u8 = 3;
const P_NOT: u8 = 4;
const P_CMP: u8 = 5;
const P_ARITH: u8 = 6;
const P_TERM: u8 = 7;
const P_UNARY: u8 = 8;
const P_POWER: u8 = 9;
const P_PRIMARY: u8 = 10;
const P_ATOM: u8 = 11;

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Lambda(_) | Expr::Yield(_) => P_LAMBDA,
        Expr::IfExp { .. } => P_IFEXP,
        Expr::Bool(BoolOp::Or, ..) => P_OR,
        Expr::Bool(BoolOp::And, ..) => P_AND,
        Expr::Unary(UnaryOp::Not, _) => P_NOT,
        Expr::Compare(..) => P_CMP,
        Expr::Binary(BinOp::Add | BinOp::Sub, ..) => P_ARITH,
        Expr::Binary(BinOp::Pow, ..) => P_POWER,
        Expr::Binary(..) => P_TERM,
        Expr::Unary(..) => P_UNARY,
        Expr::Await(_) => P_POWER,
        Expr::Const(Constant::Int(i)) if *i < 0 => P_UNARY,
        Expr::Const(Constant::Float(f)) if f.is_sign_negative() => P_UNARY,
        Expr::Attr(..) | Expr::Index(..) | Expr::Call { .. } => P_PRIMARY,
        _ => P_ATOM,
    }
}

fn write_expr(out: &mut String, e: &Expr, min: u8) {
    let p = prec(e);
    let paren = p < min;
    if paren {
        out.push('(');
    }
    match e {
        Expr::Const(c) => write_const(out, c),
        Expr::Name(n) => out.push_str(n),
        Expr::Ns(n) => {
            let _ = write!(out, "__ns__[{}]", quote_str(n));
        }
        Expr::List(items) => {
            out.push('[');
            write_items(out, items);
            out.push(']');
        }
        Expr::Tuple(items) => {
            out.push('(');
            write_items(out, items);
            if items.len() == 1 {
                out.push(',');
            }
            out.push(')');
        }
        Expr::Dict(pairs) => {
            out.push('{');
            for (i, (k, v)) in pairs.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_expr(out, k, 1);
                out.push_str(": ");
                write_expr(out, v, 1);
            }
            out.push('}');
        }
        Expr::Attr(v, name) => {
            write_expr(out, v, P_PRIMARY);
            out.push('.');
            out.push_str(name);
        }
        Expr::Index(v, idx) => {
            write_expr(out, v, P_PRIMARY);
            out.push('[');
            match &**idx {
                // a bare tuple subscript would reparse identically, but the
                // parenthesized form is unambiguous
                Expr::Slice(a, b, c) => write_slice(out, a, b, c),
                other => write_expr(out, other, 1),
            }
            out.push(']');
        }
        Expr::Slice(a, b, c) => write_slice(out, a, b, c),
        Expr::Call { func, args, kwargs } => {
            write_expr(out, func, P_PRIMARY);
            out.push('(');
            write_items(out, args);
            for (i, (k, v)) in kwargs.iter().enumerate() {
                if i > 0 || !args.is_empty() {
                    out.push_str(", ");
                }
                out.push_str(k);
                out.push('=');
                write_expr(out, v, 1);
            }
            out.push(')');
        }
        Expr::Unary(op, v) => {
            match op {
                UnaryOp::Not => {
                    out.push_str("not ");
                    write_expr(out, v, P_NOT);
                }
                UnaryOp::Neg | UnaryOp::Pos => {
                    out.push(if *op == UnaryOp::Neg { '-' } else { '+' });
                    // avoid `--x`, which is fine, and `-1` literal folding on reparse
                    if matches!(**v, Expr::Const(Constant::Int(_) | Constant::Float(_))) {
                        out.push('(');
                        write_expr(out, v, 0);
                        out.push(')');
                    } else {
                        write_expr(out, v, P_UNARY);
                    }
                }
            }
        }
        Expr::Binary(op, l, r) => {
            if *op == BinOp::Pow {
                write_expr(out, l, P_PRIMARY);
                out.push_str(" ** ");
                write_expr(out, r, P_UNARY);
            } else {
                write_expr(out, l, p);
                let _ = write!(out, " {} ", op.symbol());
                write_expr(out, r, p + 1);
            }
        }
        Expr::Compare(first, rest) => {
            write_expr(out, first, P_ARITH);
            for (op, v) in rest {
                let _ = write!(out, " {} ", op.symbol());
                write_expr(out, v, P_ARITH);
            }
        }
        Expr::Bool(op, l, r) => {
            write_expr(out, l, p);
            out.push_str(if *op == BoolOp::And { " and " } else { " or " });
            write_expr(out, r, p + 1);
        }
        Expr::IfExp { test, body, orelse } => {
            write_expr(out, body, P_OR);
            out.push_str(" if ");
            write_expr(out, test, P_OR);
            out.push_str(" else ");
            write_expr(out, orelse, P_IFEXP);
        }
        Expr::Lambda(l) => {
            out.push_str("lambda");
            if !l.params.is_empty() {
                out.push(' ');
                write_params(out, &l.params);
            }
            out.push_str(": ");
            write_expr(out, &l.body, P_LAMBDA);
        }
        Expr::ListComp { elt, generators } => {
            out.push('[');
            write_expr(out, elt, 1);
            for g in generators {
                out.push_str(" for ");
                write_expr(out, &g.target, 2);
                out.push_str(" in ");
                write_expr(out, &g.iter, P_OR);
                for cond in &g.ifs {
                    out.push_str(" if ");
                    write_expr(out, cond, P_OR);
                }
            }
            out.push(']');
        }
        Expr::Yield(v) => {
            out.push_str("yield");
            if let Some(v) = v {
                out.push(' ');
                write_expr(out, v, 1);
            }
        }
        Expr::Await(v) => {
            out.push_str("await ");
            write_expr(out, v, P_PRIMARY);
        }
    }
    if paren {
        out.push(')');
    }
}

fn write_items(out: &mut String, items: &[Expr]) {
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write_expr(out, item, 1);
    }
}

fn write_slice(out: &mut String, a: &Option<Box<Expr>>, b: &Option<Box<Expr>>, c: &Option<Box<Expr>>) {
    if let Some(a) = a {
        write_expr(out, a, 1);
    }
    out.push(':');
    if let Some(b) = b {
        write_expr(out, b, 1);
    }
    if let Some(c) = c {
        out.push(':');
        write_expr(out, c, 1);
    }
}

fn write_const(out: &mut String, c: &Constant) {
    match c {
        Constant::None => out.push_str("None"),
        Constant::Bool(true) => out.push_str("True"),
        Constant::Bool(false) => out.push_str("False"),
        Constant::Int(i) => {
            let _ = write!(out, "{i}");
        }
        Constant::Float(f) => {
            if f.is_infinite() {
                out.push_str(if *f > 0.0 { "1e999" } else { "-1e999" });
            } else {
                out.push_str(&float_repr(*f));
            }
        }
        Constant::Str(s) => out.push_str(&quote_str(s)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_module;

    fn roundtrip(src: &str) {
        let a = parse_module(src).unwrap();
        let text = unparse_block(&a);
        let b = parse_module(&text).unwrap_or_else(|e| panic!("{e}\n{text}"));
        assert_eq!(a, b, "\n{text}");
    }

    #[test]
    fn roundtrips_statements() {
        roundtrip("def f(a, b=2):\n    for i in range(3):\n        if i == 1:\n            continue\n        elif i > a:\n            break\n        else:\n            b += i\n    else:\n        b = -b\n    return b\n");
        roundtrip("try:\n    x = d['k']\nexcept (KeyError, IndexError) as e:\n    x = None\nelse:\n    y = 1\nfinally:\n    z = 2\n");
        roundtrip("with ctx() as c:\n    c.run(1, k=2)\n");
    }

    #[test]
    fn roundtrips_expressions() {
        roundtrip("x = (-1) ** 2\ny = -(1 ** 2)\nz = -x ** 2\nw = (a + b) * c - d / e // f % g\n");
        roundtrip("v = [i * 2 for i in xs if i % 2 == 0]\nu = lambda a, b=1: a if b else -a\n");
        roundtrip("t = (1,)\ns = 'it\\'s\\n'\nq = x[1:2] + x[::2] + x[a, b]\nr = not (a and b or c)\n");
        roundtrip("f = 1e-05 + 2.5 + 1e+16 + 0.1\n");
    }
}
