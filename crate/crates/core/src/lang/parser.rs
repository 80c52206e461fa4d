//! Recursive-descent parser producing [`ast`](super::ast) trees.

use std::sync::Arc;

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::ParseError;

type Kwargs = Vec<(String, Expr)>;

const KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class", "continue", "def", "del",
    "elif", "else", "except", "finally", "for", "from", "global", "if", "import", "in", "is", "lambda", "nonlocal",
    "not", "or", "pass", "raise", "return", "try", "while", "with", "yield",
];

pub fn parse_module(src: &str) -> Result<Block, ParseError> {
    let tokens = tokenize(src)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        loop_depth: 0,
        def_depth: 0,
    };
    let mut body = Vec::new();
    while !p.at(&Tok::Eof) {
        if p.eat(&Tok::Newline) {
            continue;
        }
        body.extend(p.statement()?);
    }
    Ok(body)
}

/// Parses a single expression (used by `eval` in the console).
pub fn parse_expression(src: &str) -> Result<Expr, ParseError> {
    let tokens = tokenize(src)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        loop_depth: 0,
        def_depth: 0,
    };
    let e = p.expr_list()?;
    while p.eat(&Tok::Newline) {}
    if !p.at(&Tok::Eof) {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(e)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    loop_depth: usize,
    def_depth: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn line(&self) -> usize {
        self.tokens[self.pos].line
    }

    fn at(&self, t: &Tok) -> bool {
        self.peek() == t
    }

    fn at_op(&self, op: &str) -> bool {
        matches!(self.peek(), Tok::Op(o) if *o == op)
    }

    fn at_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Name(n) if n == kw)
    }

    fn advance(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.at(t) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if self.at_op(op) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.at_kw(kw) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn error(&self, msg: impl Into<String>) -> ParseError {
        ParseError::new(self.line(), format!("{} (at {:?})", msg.into(), self.peek()))
    }

    fn expect_op(&mut self, op: &str) -> Result<(), ParseError> {
        if self.eat_op(op) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{op}`")))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{kw}`")))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Name(n) if !KEYWORDS.contains(&n.as_str()) => {
                self.advance();
                Ok(n)
            }
            _ => Err(self.error("expected identifier")),
        }
    }

    fn end_of_simple(&mut self) -> Result<(), ParseError> {
        if self.eat(&Tok::Newline) || self.at(&Tok::Eof) || self.at(&Tok::Dedent) {
            Ok(())
        } else {
            Err(self.error("expected end of statement"))
        }
    }

    // ----- statements -------------------------------------------------

    fn statement(&mut self) -> Result<Vec<Stmt>, ParseError> {
        if let Tok::Name(kw) = self.peek().clone() {
            match kw.as_str() {
                "if" => return Ok(vec![self.if_stmt()?]),
                "while" => return Ok(vec![self.while_stmt()?]),
                "for" => return Ok(vec![self.for_stmt()?]),
                "try" => return Ok(vec![self.try_stmt()?]),
                "with" => return Ok(vec![self.with_stmt()?]),
                "def" => return Ok(vec![self.funcdef(Vec::new())?]),
                "class" => return Err(self.error("class definitions are not supported")),
                "async" => return Err(self.error("async functions are not supported")),
                _ => {}
            }
        }
        if self.at_op("@") {
            let mut decorators = Vec::new();
            while self.eat_op("@") {
                decorators.push(self.expr()?);
                if !self.eat(&Tok::Newline) {
                    return Err(self.error("expected newline after decorator"));
                }
            }
            if !self.at_kw("def") {
                return Err(self.error("decorator must precede a function definition"));
            }
            return Ok(vec![self.funcdef(decorators)?]);
        }
        let mut stmts = vec![self.simple_stmt()?];
        while self.eat_op(";") {
            if self.at(&Tok::Newline) || self.at(&Tok::Eof) {
                break;
            }
            stmts.push(self.simple_stmt()?);
        }
        self.end_of_simple()?;
        Ok(stmts)
    }

    fn block(&mut self) -> Result<Block, ParseError> {
        self.expect_op(":")?;
        if self.eat(&Tok::Newline) {
            if !self.eat(&Tok::Indent) {
                return Err(self.error("expected an indented block"));
            }
            let mut body = Vec::new();
            while !self.eat(&Tok::Dedent) {
                if self.at(&Tok::Eof) {
                    break;
                }
                if self.eat(&Tok::Newline) {
                    continue;
                }
                body.extend(self.statement()?);
            }
            Ok(body)
        } else {
            // single-line suite
            let mut body = vec![self.simple_stmt()?];
            while self.eat_op(";") {
                if self.at(&Tok::Newline) {
                    break;
                }
                body.push(self.simple_stmt()?);
            }
            self.end_of_simple()?;
            Ok(body)
        }
    }

    fn if_stmt(&mut self) -> Result<Stmt, ParseError> {
        self.advance(); // if / elif
        let test = self.expr()?;
        let body = self.block()?;
        let orelse = if self.at_kw("elif") {
            vec![self.if_stmt()?]
        } else if self.eat_kw("else") {
            self.block()?
        } else {
            Vec::new()
        };
        Ok(Stmt::If { test, body, orelse })
    }

    fn loop_block(&mut self) -> Result<Block, ParseError> {
        self.loop_depth += 1;
        let b = self.block();
        self.loop_depth -= 1;
        b
    }

    fn while_stmt(&mut self) -> Result<Stmt, ParseError> {
        self.advance();
        let test = self.expr()?;
        let body = self.loop_block()?;
        let orelse = if self.eat_kw("else") { self.block()? } else { Vec::new() };
        Ok(Stmt::While { test, body, orelse })
    }

    fn for_stmt(&mut self) -> Result<Stmt, ParseError> {
        self.advance();
        let target = self.target_list()?;
        self.expect_kw("in")?;
        let iter = self.expr_list()?;
        let body = self.loop_block()?;
        let orelse = if self.eat_kw("else") { self.block()? } else { Vec::new() };
        Ok(Stmt::For {
            target,
            iter,
            body,
            orelse,
        })
    }

    fn try_stmt(&mut self) -> Result<Stmt, ParseError> {
        self.advance();
        let body = self.block()?;
        let mut handlers = Vec::new();
        while self.eat_kw("except") {
            let (kind, name) = if self.at_op(":") {
                (None, None)
            } else {
                let k = self.expr()?;
                let n = if self.eat_kw("as") { Some(self.ident()?) } else { None };
                (Some(k), n)
            };
            let body = self.block()?;
            handlers.push(Handler { kind, name, body });
        }
        let orelse = if self.eat_kw("else") { self.block()? } else { Vec::new() };
        let finalbody = if self.eat_kw("finally") {
            self.block()?
        } else {
            Vec::new()
        };
        if handlers.is_empty() && finalbody.is_empty() {
            return Err(self.error("try statement needs `except` or `finally`"));
        }
        Ok(Stmt::Try {
            body,
            handlers,
            orelse,
            finalbody,
        })
    }

    fn with_stmt(&mut self) -> Result<Stmt, ParseError> {
        self.advance();
        let item = self.expr()?;
        let target = if self.eat_kw("as") { Some(self.target()?) } else { None };
        if self.at_op(",") {
            return Err(self.error("multiple with-items are not supported"));
        }
        let body = self.block()?;
        Ok(Stmt::With { item, target, body })
    }

    fn funcdef(&mut self, decorators: Vec<Expr>) -> Result<Stmt, ParseError> {
        self.expect_kw("def")?;
        let name = self.ident()?;
        self.expect_op("(")?;
        let params = self.params(")")?;
        self.expect_op(")")?;
        if self.eat_op("->") {
            self.expr()?;
        }
        let saved = self.loop_depth;
        self.loop_depth = 0;
        self.def_depth += 1;
        let body = self.block();
        self.def_depth -= 1;
        self.loop_depth = saved;
        let body = body?;
        let mut seen = std::collections::HashSet::new();
        for p in &params {
            if !seen.insert(p.name.as_str()) {
                return Err(self.error(format!("duplicate parameter `{}`", p.name)));
            }
        }
        Ok(Stmt::FuncDef(Arc::new(FuncDef {
            name,
            params,
            body,
            decorators,
        })))
    }

    fn params(&mut self, close: &str) -> Result<Vec<Param>, ParseError> {
        let mut params: Vec<Param> = Vec::new();
        while !self.at_op(close) {
            let name = self.ident()?;
            if close != ":" && self.eat_op(":") {
                // annotations are parsed and dropped
                self.expr()?;
            }
            let default = if self.eat_op("=") { Some(self.expr()?) } else { None };
            if default.is_none() && params.iter().any(|p| p.default.is_some()) {
                return Err(self.error("non-default parameter follows default parameter"));
            }
            params.push(Param { name, default });
            if !self.eat_op(",") {
                break;
            }
        }
        Ok(params)
    }

    fn simple_stmt(&mut self) -> Result<Stmt, ParseError> {
        if let Tok::Name(kw) = self.peek().clone() {
            match kw.as_str() {
                "pass" => {
                    self.advance();
                    return Ok(Stmt::Pass);
                }
                "break" => {
                    if self.loop_depth == 0 {
                        return Err(self.error("`break` outside loop"));
                    }
                    self.advance();
                    return Ok(Stmt::Break);
                }
                "continue" => {
                    if self.loop_depth == 0 {
                        return Err(self.error("`continue` outside loop"));
                    }
                    self.advance();
                    return Ok(Stmt::Continue);
                }
                "return" => {
                    if self.def_depth == 0 {
                        return Err(self.error("`return` outside function"));
                    }
                    self.advance();
                    if self.at(&Tok::Newline) || self.at_op(";") || self.at(&Tok::Eof) || self.at(&Tok::Dedent) {
                        return Ok(Stmt::Return(None));
                    }
                    return Ok(Stmt::Return(Some(self.expr_list()?)));
                }
                "raise" => {
                    self.advance();
                    if self.at(&Tok::Newline) || self.at_op(";") || self.at(&Tok::Eof) {
                        return Ok(Stmt::Raise(None));
                    }
                    let e = self.expr()?;
                    if self.eat_kw("from") {
                        self.expr()?;
                    }
                    return Ok(Stmt::Raise(Some(e)));
                }
                "assert" => {
                    self.advance();
                    let test = self.expr()?;
                    let msg = if self.eat_op(",") { Some(self.expr()?) } else { None };
                    return Ok(Stmt::Assert { test, msg });
                }
                "del" => {
                    self.advance();
                    let mut targets = vec![self.target()?];
                    while self.eat_op(",") {
                        targets.push(self.target()?);
                    }
                    return Ok(Stmt::Del(targets));
                }
                "import" => {
                    self.advance();
                    let module = self.dotted_name()?;
                    let alias = if self.eat_kw("as") { Some(self.ident()?) } else { None };
                    return Ok(Stmt::Import { module, alias });
                }
                "from" => {
                    self.advance();
                    let module = self.dotted_name()?;
                    self.expect_kw("import")?;
                    let paren = self.eat_op("(");
                    let mut names = Vec::new();
                    loop {
                        let n = self.ident()?;
                        let a = if self.eat_kw("as") { Some(self.ident()?) } else { None };
                        names.push((n, a));
                        if !self.eat_op(",") || (paren && self.at_op(")")) {
                            break;
                        }
                    }
                    if paren {
                        self.expect_op(")")?;
                    }
                    return Ok(Stmt::ImportFrom { module, names });
                }
                "global" | "nonlocal" => return Err(self.error(format!("`{kw}` is not supported"))),
                _ => {}
            }
        }

        let first = self.expr_list()?;
        if let Some(op) = self.aug_op() {
            check_target(&first).map_err(|m| self.error(m))?;
            if matches!(first, Expr::Tuple(_) | Expr::List(_)) {
                return Err(self.error("illegal target for augmented assignment"));
            }
            let value = self.expr_list()?;
            return Ok(Stmt::AugAssign {
                target: first,
                op,
                value,
            });
        }
        if self.at_op("=") {
            let mut targets = vec![first];
            let mut value;
            loop {
                self.expect_op("=")?;
                value = self.expr_list()?;
                if self.at_op("=") {
                    targets.push(value);
                } else {
                    break;
                }
            }
            for t in &targets {
                check_target(t).map_err(|m| self.error(m))?;
            }
            return Ok(Stmt::Assign { targets, value });
        }
        if self.at_op(":") {
            return Err(self.error("variable annotations are not supported"));
        }
        Ok(Stmt::Expr(first))
    }

    fn aug_op(&mut self) -> Option<BinOp> {
        let op = match self.peek() {
            Tok::Op("+=") => BinOp::Add,
            Tok::Op("-=") => BinOp::Sub,
            Tok::Op("*=") => BinOp::Mul,
            Tok::Op("/=") => BinOp::Div,
            Tok::Op("//=") => BinOp::FloorDiv,
            Tok::Op("%=") => BinOp::Mod,
            Tok::Op("**=") => BinOp::Pow,
            _ => return None,
        };
        self.advance();
        Some(op)
    }

    fn dotted_name(&mut self) -> Result<String, ParseError> {
        let mut n = self.ident()?;
        while self.eat_op(".") {
            n.push('.');
            n.push_str(&self.ident()?);
        }
        Ok(n)
    }

    fn target(&mut self) -> Result<Expr, ParseError> {
        let e = self.arith()?;
        check_target(&e).map_err(|m| self.error(m))?;
        Ok(e)
    }

    fn target_list(&mut self) -> Result<Expr, ParseError> {
        let first = self.target()?;
        if !self.at_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.at_kw("in") || self.at_op("=") {
                break;
            }
            items.push(self.target()?);
        }
        Ok(Expr::Tuple(items))
    }

    // ----- expressions ------------------------------------------------

    /// Comma-separated expressions, forming a tuple when more than one.
    fn expr_list(&mut self) -> Result<Expr, ParseError> {
        let first = self.expr()?;
        if !self.at_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.expr_terminates() {
                break;
            }
            items.push(self.expr()?);
        }
        Ok(Expr::Tuple(items))
    }

    fn expr_terminates(&self) -> bool {
        matches!(
            self.peek(),
            Tok::Newline | Tok::Eof | Tok::Dedent | Tok::Op("=") | Tok::Op(")") | Tok::Op(":") | Tok::Op(";")
        ) || self.aug_peek()
    }

    fn aug_peek(&self) -> bool {
        matches!(
            self.peek(),
            Tok::Op("+=")
                | Tok::Op("-=")
                | Tok::Op("*=")
                | Tok::Op("/=")
                | Tok::Op("//=")
                | Tok::Op("%=")
                | Tok::Op("**=")
        )
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        if self.at_kw("lambda") {
            self.advance();
            let params = self.params(":")?;
            self.expect_op(":")?;
            let body = self.expr()?;
            return Ok(Expr::Lambda(Arc::new(Lambda { params, body })));
        }
        if self.at_kw("yield") {
            self.advance();
            if self.expr_terminates() {
                return Ok(Expr::Yield(None));
            }
            return Ok(Expr::Yield(Some(Box::new(self.expr()?))));
        }
        let body = self.or_expr()?;
        if self.at_kw("if") {
            self.advance();
            let test = self.or_expr()?;
            self.expect_kw("else")?;
            let orelse = self.expr()?;
            return Ok(Expr::IfExp {
                test: Box::new(test),
                body: Box::new(body),
                orelse: Box::new(orelse),
            });
        }
        Ok(body)
    }

    fn or_expr(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.and_expr()?;
        while self.eat_kw("or") {
            let right = self.and_expr()?;
            left = Expr::Bool(BoolOp::Or, Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.not_expr()?;
        while self.eat_kw("and") {
            let right = self.not_expr()?;
            left = Expr::Bool(BoolOp::And, Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> Result<Expr, ParseError> {
        if self.eat_kw("not") {
            let e = self.not_expr()?;
            return Ok(Expr::Unary(UnaryOp::Not, Box::new(e)));
        }
        self.comparison()
    }

    fn cmp_op(&mut self) -> Option<CmpOp> {
        let op = match self.peek() {
            Tok::Op("==") => CmpOp::Eq,
            Tok::Op("!=") => CmpOp::NotEq,
            Tok::Op("<") => CmpOp::Lt,
            Tok::Op("<=") => CmpOp::LtE,
            Tok::Op(">") => CmpOp::Gt,
            Tok::Op(">=") => CmpOp::GtE,
            Tok::Name(n) if n == "in" => CmpOp::In,
            Tok::Name(n) if n == "not" && matches!(self.peek_at(1), Tok::Name(m) if m == "in") => {
                self.advance();
                CmpOp::NotIn
            }
            Tok::Name(n) if n == "is" => {
                if matches!(self.peek_at(1), Tok::Name(m) if m == "not") {
                    self.advance();
                    CmpOp::IsNot
                } else {
                    CmpOp::Is
                }
            }
            _ => return None,
        };
        self.advance();
        Some(op)
    }

    fn comparison(&mut self) -> Result<Expr, ParseError> {
        let left = self.arith()?;
        let mut rest = Vec::new();
        while let Some(op) = self.cmp_op() {
            rest.push((op, self.arith()?));
        }
        if rest.is_empty() {
            Ok(left)
        } else {
            Ok(Expr::Compare(Box::new(left), rest))
        }
    }

    fn arith(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.term()?;
        loop {
            let op = if self.eat_op("+") {
                BinOp::Add
            } else if self.eat_op("-") {
                BinOp::Sub
            } else {
                break;
            };
            let right = self.term()?;
            left = Expr::Binary(op, Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.factor()?;
        loop {
            let op = if self.eat_op("*") {
                BinOp::Mul
            } else if self.eat_op("/") {
                BinOp::Div
            } else if self.eat_op("//") {
                BinOp::FloorDiv
            } else if self.eat_op("%") {
                BinOp::Mod
            } else {
                break;
            };
            let right = self.factor()?;
            left = Expr::Binary(op, Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        if self.eat_op("-") {
            let e = self.factor()?;
            // fold negative numeric literals so `-1` round-trips as a constant
            return Ok(match e {
                Expr::Const(Constant::Int(i)) => Expr::Const(Constant::Int(-i)),
                Expr::Const(Constant::Float(f)) => Expr::Const(Constant::Float(-f)),
                e => Expr::Unary(UnaryOp::Neg, Box::new(e)),
            });
        }
        if self.eat_op("+") {
            let e = self.factor()?;
            return Ok(Expr::Unary(UnaryOp::Pos, Box::new(e)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = if self.eat_kw("await") {
            Expr::Await(Box::new(self.primary()?))
        } else {
            self.primary()?
        };
        if self.eat_op("**") {
            let exp = self.factor()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.atom()?;
        loop {
            if self.eat_op(".") {
                let name = self.ident()?;
                e = Expr::Attr(Box::new(e), name);
            } else if self.eat_op("(") {
                let (args, kwargs) = self.call_args()?;
                self.expect_op(")")?;
                e = Expr::Call {
                    func: Box::new(e),
                    args,
                    kwargs,
                };
            } else if self.eat_op("[") {
                let idx = self.subscript()?;
                self.expect_op("]")?;
                e = Expr::Index(Box::new(e), Box::new(idx));
            } else {
                break;
            }
        }
        Ok(e)
    }

    fn call_args(&mut self) -> Result<(Vec<Expr>, Kwargs), ParseError> {
        let mut args = Vec::new();
        let mut kwargs: Vec<(String, Expr)> = Vec::new();
        while !self.at_op(")") {
            if let (Tok::Name(n), Tok::Op("=")) = (self.peek().clone(), self.peek_at(1).clone()) {
                if !KEYWORDS.contains(&n.as_str()) {
                    self.advance();
                    self.advance();
                    if kwargs.iter().any(|(k, _)| *k == n) {
                        return Err(self.error(format!("repeated keyword argument `{n}`")));
                    }
                    kwargs.push((n, self.expr()?));
                    if !self.eat_op(",") {
                        break;
                    }
                    continue;
                }
            }
            if !kwargs.is_empty() {
                return Err(self.error("positional argument follows keyword argument"));
            }
            let e = self.expr()?;
            if self.at_kw("for") {
                let generators = self.comp_for()?;
                args.push(Expr::ListComp {
                    elt: Box::new(e),
                    generators,
                });
            } else {
                args.push(e);
            }
            if !self.eat_op(",") {
                break;
            }
        }
        Ok((args, kwargs))
    }

    fn subscript(&mut self) -> Result<Expr, ParseError> {
        let lower = if self.at_op(":") { None } else { Some(self.expr()?) };
        if !self.at_op(":") {
            let first = lower.ok_or_else(|| self.error("empty subscript"))?;
            if self.at_op(",") {
                let mut items = vec![first];
                while self.eat_op(",") {
                    if self.at_op("]") {
                        break;
                    }
                    items.push(self.expr()?);
                }
                return Ok(Expr::Tuple(items));
            }
            return Ok(first);
        }
        self.expect_op(":")?;
        let upper = if self.at_op("]") || self.at_op(":") {
            None
        } else {
            Some(Box::new(self.expr()?))
        };
        let step = if self.eat_op(":") && !self.at_op("]") {
            Some(Box::new(self.expr()?))
        } else {
            None
        };
        Ok(Expr::Slice(lower.map(Box::new), upper, step))
    }

    fn comp_for(&mut self) -> Result<Vec<Comprehension>, ParseError> {
        let mut gens = Vec::new();
        while self.eat_kw("for") {
            let target = self.target_list()?;
            self.expect_kw("in")?;
            let iter = self.or_expr()?;
            let mut ifs = Vec::new();
            while self.at_kw("if") {
                self.advance();
                ifs.push(self.or_expr_no_cond()?);
            }
            gens.push(Comprehension { target, iter, ifs });
        }
        Ok(gens)
    }

    fn or_expr_no_cond(&mut self) -> Result<Expr, ParseError> {
        self.or_expr()
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let line = self.line();
        match self.advance() {
            Tok::Int(i) => Ok(Expr::Const(Constant::Int(i))),
            Tok::Float(f) => Ok(Expr::Const(Constant::Float(f))),
            Tok::Str(s) => {
                let mut s = s;
                // implicit concatenation of adjacent literals
                while let Tok::Str(next) = self.peek().clone() {
                    self.advance();
                    s.push_str(&next);
                }
                Ok(Expr::Const(Constant::Str(Arc::from(s.as_str()))))
            }
            Tok::Name(n) => match n.as_str() {
                "None" => Ok(Expr::Const(Constant::None)),
                "True" => Ok(Expr::Const(Constant::Bool(true))),
                "False" => Ok(Expr::Const(Constant::Bool(false))),
                k if KEYWORDS.contains(&k) => Err(ParseError::new(line, format!("unexpected keyword `{k}`"))),
                _ => Ok(Expr::Name(n)),
            },
            Tok::Op("(") => {
                if self.eat_op(")") {
                    return Ok(Expr::Tuple(Vec::new()));
                }
                let first = self.expr()?;
                if self.at_kw("for") {
                    let generators = self.comp_for()?;
                    self.expect_op(")")?;
                    return Ok(Expr::ListComp {
                        elt: Box::new(first),
                        generators,
                    });
                }
                if self.eat_op(")") {
                    return Ok(first);
                }
                let mut items = vec![first];
                while self.eat_op(",") {
                    if self.at_op(")") {
                        break;
                    }
                    items.push(self.expr()?);
                }
                self.expect_op(")")?;
                Ok(Expr::Tuple(items))
            }
            Tok::Op("[") => {
                if self.eat_op("]") {
                    return Ok(Expr::List(Vec::new()));
                }
                let first = self.expr()?;
                if self.at_kw("for") {
                    let generators = self.comp_for()?;
                    self.expect_op("]")?;
                    return Ok(Expr::ListComp {
                        elt: Box::new(first),
                        generators,
                    });
                }
                let mut items = vec![first];
                while self.eat_op(",") {
                    if self.at_op("]") {
                        break;
                    }
                    items.push(self.expr()?);
                }
                self.expect_op("]")?;
                Ok(Expr::List(items))
            }
            Tok::Op("{") => {
                let mut pairs = Vec::new();
                while !self.at_op("}") {
                    let k = self.expr()?;
                    self.expect_op(":")?;
                    let v = self.expr()?;
                    pairs.push((k, v));
                    if !self.eat_op(",") {
                        break;
                    }
                }
                self.expect_op("}")?;
                Ok(Expr::Dict(pairs))
            }
            t => Err(ParseError::new(line, format!("unexpected token {t:?}"))),
        }
    }
}

fn check_target(e: &Expr) -> Result<(), String> {
    match e {
        Expr::Name(_) | Expr::Ns(_) | Expr::Attr(..) => Ok(()),
        Expr::Index(_, idx) if !matches!(**idx, Expr::Slice(..)) => Ok(()),
        Expr::Tuple(items) | Expr::List(items) if !items.is_empty() => items.iter().try_for_each(check_target),
        _ => Err("cannot assign to expression".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_function() {
        let m = parse_module("def f(): return 1\n").unwrap();
        let Stmt::FuncDef(def) = &m[0] else { panic!() };
        assert_eq!(def.name, "f");
        assert_eq!(def.body, vec![Stmt::Return(Some(Expr::int(1)))]);
    }

    #[test]
    fn elif_chains_nest_in_else() {
        let m = parse_module("if a:\n  x=1\nelif b:\n  x=2\nelse:\n  x=3\n").unwrap();
        let Stmt::If { orelse, .. } = &m[0] else { panic!() };
        assert!(matches!(orelse[0], Stmt::If { .. }));
    }

    #[test]
    fn break_outside_loop_rejected() {
        assert!(parse_module("def f():\n    break\n").is_err());
        assert!(parse_module("def f():\n    for x in y:\n        def g():\n            break\n").is_err());
    }

    #[test]
    fn operator_precedence() {
        let e = parse_expression("1 + 2 * 3 ** 2").unwrap();
        let Expr::Binary(BinOp::Add, _, rhs) = e else { panic!() };
        let Expr::Binary(BinOp::Mul, _, pow) = *rhs else {
            panic!()
        };
        assert!(matches!(*pow, Expr::Binary(BinOp::Pow, ..)));
    }

    #[test]
    fn comprehension_and_lambda() {
        parse_expression("[x * 2 for x in xs if x > 0]").unwrap();
        parse_expression("sorted(xs, key=lambda p: p[1])").unwrap();
        parse_expression("sum(x for x in xs)").unwrap();
    }

    #[test]
    fn tuple_targets_and_augassign() {
        let m = parse_module("a, b = 1, 2\na += 3\nx[0] = 1\n").unwrap();
        assert_eq!(m.len(), 3);
        assert!(parse_module("f() = 3\n").is_err());
    }

    #[test]
    fn syntax_errors_report_line() {
        let err = parse_module("x = 1\ny = (2\n").unwrap_err();
        assert!(err.line >= 2);
    }
}
