//! Function source model: parsing, statement addressing and structural diff.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::lang::ast::*;
use crate::lang::{parse_module, unparse_block, ParseError};

#[derive(Debug, thiserror::Error)]
pub enum SourceError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("function '{0}' not found")]
    NotFound(String),
    #[error("diff is empty")]
    EmptyDiff,
    #[error("bad statement path '{0}'")]
    BadPath(String),
}

/// Address of a statement: one `(block, index)` step per nesting level,
/// starting from the function body.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct StatementPath {
    pub steps: Vec<(BlockKind, u32)>,
}

impl StatementPath {
    pub fn new(steps: Vec<(BlockKind, u32)>) -> Self {
        StatementPath { steps }
    }

    pub fn from_steps(steps: impl IntoIterator<Item = (BlockKind, u32)>) -> Self {
        StatementPath {
            steps: steps.into_iter().collect(),
        }
    }

    pub fn root(i: u32) -> Self {
        StatementPath::new(vec![(BlockKind::Body, i)])
    }

    pub fn child(&self, kind: BlockKind, i: u32) -> Self {
        let mut steps = self.steps.clone();
        steps.push((kind, i));
        StatementPath { steps }
    }

    pub fn parent(&self) -> Option<StatementPath> {
        if self.steps.is_empty() {
            return None;
        }
        Some(StatementPath::from_steps(
            self.steps[..self.steps.len() - 1].iter().copied(),
        ))
    }

    pub fn last(&self) -> Option<(BlockKind, u32)> {
        self.steps.last().copied()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn starts_with(&self, prefix: &StatementPath) -> bool {
        self.steps.starts_with(&prefix.steps)
    }

    pub fn strip_prefix(&self, prefix: &StatementPath) -> Option<StatementPath> {
        self.steps
            .strip_prefix(prefix.steps.as_slice())
            .map(|s| StatementPath::from_steps(s.iter().copied()))
    }

    pub fn join(&self, rest: &StatementPath) -> StatementPath {
        StatementPath::from_steps(self.steps.iter().chain(rest.steps.iter()).copied())
    }

    /// Same path with the innermost index replaced.
    pub fn with_last_index(&self, i: u32) -> StatementPath {
        let mut p = self.clone();
        if let Some(last) = p.steps.last_mut() {
            last.1 = i;
        }
        p
    }

    /// The statement this path addresses, if any.
    pub fn resolve<'a>(&self, body: &'a Block) -> Option<&'a Stmt> {
        let (first, rest) = self.steps.split_first()?;
        let mut stmt = body.get(first.1 as usize)?;
        for (kind, i) in rest {
            stmt = child_block(stmt, *kind)?.get(*i as usize)?;
        }
        Some(stmt)
    }

    /// The block holding the addressed statement (the statement itself may
    /// be one past the end).
    pub fn resolve_block<'a>(&self, body: &'a Block) -> Option<&'a Block> {
        let mut block = body;
        for w in self.steps.windows(2) {
            let stmt = block.get(w[0].1 as usize)?;
            block = child_block(stmt, w[1].0)?;
        }
        Some(block)
    }
}

impl Ord for StatementPath {
    /// Program order: earlier siblings first, a compound statement before
    /// anything nested in it, sibling blocks in textual order.
    fn cmp(&self, other: &Self) -> Ordering {
        for (a, b) in self.steps.iter().zip(other.steps.iter()) {
            let o = (a.0.ordinal(), a.1).cmp(&(b.0.ordinal(), b.1));
            if o != Ordering::Equal {
                return o;
            }
        }
        self.steps.len().cmp(&other.steps.len())
    }
}

impl PartialOrd for StatementPath {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for StatementPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.steps.is_empty() {
            return f.write_str("<cell>");
        }
        for (n, (kind, i)) in self.steps.iter().enumerate() {
            if n > 0 {
                f.write_str("/")?;
            }
            write!(f, "{kind}[{i}]")?;
        }
        Ok(())
    }
}

impl fmt::Debug for StatementPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

fn parse_kind(s: &str) -> Option<BlockKind> {
    Some(match s {
        "body" => BlockKind::Body,
        "then" => BlockKind::BranchThen,
        "else" => BlockKind::BranchElse,
        "loop" => BlockKind::LoopBody,
        "loop-else" => BlockKind::LoopElse,
        "try" => BlockKind::TryBody,
        "try-else" => BlockKind::TryElse,
        "finally" => BlockKind::Finally,
        "with" => BlockKind::WithBody,
        "def" => BlockKind::DefBody,
        other => BlockKind::Handler(other.strip_prefix("handler")?.parse().ok()?),
    })
}

impl FromStr for StatementPath {
    type Err = SourceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "<cell>" || s.is_empty() {
            return Ok(StatementPath::default());
        }
        let bad = || SourceError::BadPath(s.to_string());
        let mut steps = Vec::new();
        for part in s.split('/') {
            let (kind, rest) = part.split_once('[').ok_or_else(bad)?;
            let idx = rest.strip_suffix(']').ok_or_else(bad)?.parse().map_err(|_| bad())?;
            steps.push((parse_kind(kind).ok_or_else(bad)?, idx));
        }
        Ok(StatementPath { steps })
    }
}

impl Serialize for StatementPath {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for StatementPath {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One function as written by the user.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceFunction {
    pub name: String,
    pub params: Vec<Param>,
    pub body: Block,
    pub decorators: Vec<Expr>,
    pub source_text: String,
    pub origin: (Option<PathBuf>, usize),
}

impl SourceFunction {
    pub fn from_def(def: &FuncDef, source_text: String) -> SourceFunction {
        SourceFunction {
            name: def.name.clone(),
            params: def.params.clone(),
            body: def.body.clone(),
            decorators: def
                .decorators
                .iter()
                .filter(|d| !is_own_decorator(d))
                .cloned()
                .collect(),
            source_text,
            origin: (None, 1),
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn to_def(&self) -> FuncDef {
        FuncDef {
            name: self.name.clone(),
            params: self.params.clone(),
            body: self.body.clone(),
            decorators: self.decorators.clone(),
        }
    }

    /// Canonical source text of the function.
    pub fn unparse(&self) -> String {
        unparse_block(&[Stmt::FuncDef(std::sync::Arc::new(self.to_def()))])
    }
}

fn is_own_decorator(e: &Expr) -> bool {
    match e {
        Expr::Name(n) => n == "vaccinate",
        Expr::Attr(base, n) => n == "vaccinate" && matches!(&**base, Expr::Name(m) if m == "insitu"),
        _ => false,
    }
}

/// Strips the common leading indentation of all non-blank lines.
pub fn dedent(src: &str) -> String {
    let indent = src
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.len() - l.trim_start_matches([' ', '\t']).len())
        .min()
        .unwrap_or(0);
    src.lines()
        .map(|l| {
            if l.len() >= indent {
                &l[indent..]
            } else {
                l.trim_start()
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

pub fn parse_function(source_text: &str, name: &str) -> Result<SourceFunction, SourceError> {
    let text = dedent(source_text);
    let module = parse_module(&text)?;
    let def = module
        .iter()
        .find_map(|s| match s {
            Stmt::FuncDef(d) if d.name == name => Some(d.clone()),
            _ => None,
        })
        .ok_or_else(|| SourceError::NotFound(name.to_string()))?;
    let mut f = SourceFunction::from_def(&def, source_text.to_string());
    let needle = format!("def {name}(");
    if let Some(line) = text.lines().position(|l| l.trim_start().starts_with(&needle)) {
        f.origin.1 = line + 1;
    }
    Ok(f)
}

pub fn parse_function_file(
    path: &std::path::Path,
    name: &str,
) -> Result<SourceFunction, Box<dyn std::error::Error + Send + Sync>> {
    let text = std::fs::read_to_string(path)?;
    let mut f = parse_function(&text, name)?;
    f.origin.0 = Some(path.to_path_buf());
    Ok(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditKind {
    Added,
    Removed,
    Modified,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edit {
    /// Position in the new function; for removals, the position formerly
    /// occupied.
    pub path: StatementPath,
    pub kind: EditKind,
    /// Position in the old function (removed and modified edits).
    pub old_path: Option<StatementPath>,
    /// The new statement (added and modified edits).
    pub stmt: Option<Stmt>,
}

/// Matched statement pairs of one block pair, with the alignments of the
/// child blocks of matched compound statements.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BlockAlign {
    pub pairs: Vec<(usize, usize)>,
    pub children: HashMap<(usize, BlockKind), BlockAlign>,
    pub new_len: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CodeDiff {
    pub edits: Vec<Edit>,
    pub align: BlockAlign,
}

impl CodeDiff {
    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    /// Maps an old-function path to the new function. The flag is false
    /// when some step had no counterpart, in which case the path points at
    /// the position the statement would have occupied.
    pub fn map_path(&self, old: &StatementPath) -> (StatementPath, bool) {
        let mut align = &self.align;
        let mut out = Vec::new();
        for (n, (kind, i)) in old.steps.iter().enumerate() {
            let i = *i as usize;
            match align.pairs.iter().find(|(o, _)| *o == i) {
                Some(&(_, new_i)) => {
                    out.push((*kind, new_i as u32));
                    if let Some((next_kind, _)) = old.steps.get(n + 1) {
                        match align.children.get(&(i, *next_kind)) {
                            Some(child) => align = child,
                            None => {
                                out.push((*next_kind, 0));
                                return (StatementPath::new(out), false);
                            }
                        }
                    }
                }
                None => {
                    let (o_lo, n_lo) = align
                        .pairs
                        .iter()
                        .rev()
                        .find(|(o, _)| *o < i)
                        .map_or((0, 0), |(o, nw)| (o + 1, nw + 1));
                    let n_hi = align
                        .pairs
                        .iter()
                        .find(|(o, _)| *o > i)
                        .map_or(align.new_len, |(_, nw)| *nw);
                    let pos = (n_lo + (i - o_lo)).min(n_hi);
                    out.push((*kind, pos as u32));
                    return (StatementPath::new(out), false);
                }
            }
        }
        (StatementPath::new(out), true)
    }

    /// All matched statements as (old path, new path).
    pub fn aligned_paths(&self) -> Vec<(StatementPath, StatementPath)> {
        fn walk(
            a: &BlockAlign,
            old_prefix: &StatementPath,
            new_prefix: &StatementPath,
            kind: BlockKind,
            out: &mut Vec<(StatementPath, StatementPath)>,
        ) {
            for &(o, n) in &a.pairs {
                let op = old_prefix.child(kind, o as u32);
                let np = new_prefix.child(kind, n as u32);
                for ((co, ck), child) in &a.children {
                    if *co == o {
                        walk(child, &op, &np, *ck, out);
                    }
                }
                out.push((op, np));
            }
        }
        let mut out = Vec::new();
        walk(
            &self.align,
            &StatementPath::default(),
            &StatementPath::default(),
            BlockKind::Body,
            &mut out,
        );
        out.sort_by(|a, b| a.1.cmp(&b.1));
        out
    }
}

/// Statement-level edit script from `old` to `new`.
pub fn diff_functions(old: &SourceFunction, new: &SourceFunction) -> CodeDiff {
    diff_blocks(&old.body, &new.body)
}

pub fn diff_blocks(old: &Block, new: &Block) -> CodeDiff {
    let mut edits = Vec::new();
    let align = diff_block(
        old,
        new,
        &StatementPath::default(),
        &StatementPath::default(),
        BlockKind::Body,
        &mut edits,
    );
    edits.sort_by(|a: &Edit, b: &Edit| a.path.cmp(&b.path));
    CodeDiff { edits, align }
}

fn same_variant(a: &Stmt, b: &Stmt) -> bool {
    a.is_compound() && std::mem::discriminant(a) == std::mem::discriminant(b)
}

/// Weighted LCS: exact matches dominate, same-kind compound statements
/// pair up when nothing better is available.
fn align_seq(old: &[Stmt], new: &[Stmt]) -> Vec<(usize, usize)> {
    let (n, m) = (old.len(), new.len());
    let weight = |i: usize, j: usize| -> u32 {
        if old[i] == new[j] {
            4
        } else if same_variant(&old[i], &new[j]) {
            if header_of(&old[i]) == header_of(&new[j]) {
                2
            } else {
                1
            }
        } else {
            0
        }
    };
    let mut dp = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            let w = weight(i, j);
            let take = if w > 0 { w + dp[i + 1][j + 1] } else { 0 };
            dp[i][j] = take.max(dp[i + 1][j]).max(dp[i][j + 1]);
        }
    }
    let mut pairs = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        let w = weight(i, j);
        if w > 0 && dp[i][j] == w + dp[i + 1][j + 1] {
            pairs.push((i, j));
            i += 1;
            j += 1;
        } else if dp[i][j] == dp[i + 1][j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    pairs
}

fn diff_block(
    old: &Block,
    new: &Block,
    old_prefix: &StatementPath,
    new_prefix: &StatementPath,
    kind: BlockKind,
    edits: &mut Vec<Edit>,
) -> BlockAlign {
    let pairs = align_seq(old, new);
    let mut align = BlockAlign {
        pairs: pairs.clone(),
        children: HashMap::new(),
        new_len: new.len(),
    };
    let gap = |o_lo: usize, o_hi: usize, n_lo: usize, n_hi: usize, edits: &mut Vec<Edit>| {
        let common = (o_hi - o_lo).min(n_hi - n_lo);
        for k in 0..common {
            edits.push(Edit {
                path: new_prefix.child(kind, (n_lo + k) as u32),
                kind: EditKind::Modified,
                old_path: Some(old_prefix.child(kind, (o_lo + k) as u32)),
                stmt: Some(new[n_lo + k].clone()),
            });
        }
        for k in common..(n_hi - n_lo) {
            edits.push(Edit {
                path: new_prefix.child(kind, (n_lo + k) as u32),
                kind: EditKind::Added,
                old_path: None,
                stmt: Some(new[n_lo + k].clone()),
            });
        }
        for k in common..(o_hi - o_lo) {
            edits.push(Edit {
                path: new_prefix.child(kind, (n_lo + common) as u32),
                kind: EditKind::Removed,
                old_path: Some(old_prefix.child(kind, (o_lo + k) as u32)),
                stmt: None,
            });
        }
    };
    let (mut po, mut pn) = (0, 0);
    for &(o, n) in &pairs {
        gap(po, o, pn, n, edits);
        po = o + 1;
        pn = n + 1;
        let (a, b) = (&old[o], &new[n]);
        if a == b {
            // identical subtrees still get child alignments for path mapping
            for ((ka, ba), (_, bb)) in child_blocks(a).into_iter().zip(child_blocks(b)) {
                let mut sink = Vec::new();
                let child = diff_block(
                    ba,
                    bb,
                    &old_prefix.child(kind, o as u32),
                    &new_prefix.child(kind, n as u32),
                    ka,
                    &mut sink,
                );
                align.children.insert((o, ka), child);
            }
            continue;
        }
        let op = old_prefix.child(kind, o as u32);
        let np = new_prefix.child(kind, n as u32);
        let headers_equal = header_of(a) == header_of(b);
        let mut child_edits = Vec::new();
        let ca = child_blocks(a);
        let cb = child_blocks(b);
        for ((ka, ba), (kb, bb)) in ca.iter().zip(cb.iter()) {
            if ka != kb {
                continue;
            }
            let child = diff_block(ba, bb, &op, &np, *ka, &mut child_edits);
            align.children.insert((o, *ka), child);
        }
        if headers_equal && ca.len() == cb.len() {
            edits.extend(child_edits);
        } else {
            edits.push(Edit {
                path: np,
                kind: EditKind::Modified,
                old_path: Some(op),
                stmt: Some(b.clone()),
            });
        }
    }
    gap(po, old.len(), pn, new.len(), edits);
    align
}

pub fn first_modified_location(diff: &CodeDiff) -> Result<StatementPath, SourceError> {
    diff.edits
        .iter()
        .map(|e| e.path.clone())
        .min()
        .ok_or(SourceError::EmptyDiff)
}

/// Rebuilds the new body from the old body and the edit script.
pub fn apply_diff(old: &Block, diff: &CodeDiff) -> Block {
    apply_block(
        old,
        &diff.edits,
        &StatementPath::default(),
        &StatementPath::default(),
        BlockKind::Body,
        &diff.align,
    )
}

fn apply_block(
    old: &Block,
    edits: &[Edit],
    old_prefix: &StatementPath,
    new_prefix: &StatementPath,
    kind: BlockKind,
    align: &BlockAlign,
) -> Block {
    let here = |p: &StatementPath, prefix: &StatementPath| {
        p.len() == prefix.len() + 1 && p.starts_with(prefix) && p.last().map(|l| l.0) == Some(kind)
    };
    let mut placed: Vec<(usize, Stmt)> = Vec::new();
    let mut dropped = std::collections::HashSet::new();
    for e in edits {
        match e.kind {
            EditKind::Added if here(&e.path, new_prefix) => {
                placed.push((e.path.last().unwrap().1 as usize, e.stmt.clone().unwrap()));
            }
            EditKind::Modified if here(&e.path, new_prefix) => {
                placed.push((e.path.last().unwrap().1 as usize, e.stmt.clone().unwrap()));
                if let Some(op) = &e.old_path {
                    dropped.insert(op.last().unwrap().1 as usize);
                }
            }
            EditKind::Removed if e.old_path.as_ref().is_some_and(|op| here(op, old_prefix)) => {
                dropped.insert(e.old_path.as_ref().unwrap().last().unwrap().1 as usize);
            }
            _ => {}
        }
    }
    let mut kept = Vec::new();
    for (o, stmt) in old.iter().enumerate() {
        if dropped.contains(&o) {
            continue;
        }
        let n = align.pairs.iter().find(|(a, _)| *a == o).map(|(_, b)| *b).unwrap_or(o);
        let op = old_prefix.child(kind, o as u32);
        let np = new_prefix.child(kind, n as u32);
        let mut s = stmt.clone();
        let kinds: Vec<BlockKind> = child_blocks(stmt).iter().map(|(k, _)| *k).collect();
        for k in kinds {
            let empty = BlockAlign::default();
            let child_align = align.children.get(&(o, k)).unwrap_or(&empty);
            let old_child = child_block(stmt, k).cloned().unwrap_or_default();
            let rebuilt = apply_block(&old_child, edits, &op, &np, k, child_align);
            if let Some(b) = child_block_mut(&mut s, k) {
                *b = rebuilt;
            }
        }
        kept.push(s);
    }
    let total = kept.len() + placed.len();
    placed.sort_by_key(|(i, _)| *i);
    let mut out = Vec::with_capacity(total);
    let mut kept = kept.into_iter();
    let mut placed = placed.into_iter().peekable();
    for i in 0..total {
        if placed.peek().is_some_and(|(j, _)| *j == i) {
            out.push(placed.next().unwrap().1);
        } else if let Some(s) = kept.next() {
            out.push(s);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(src: &str) -> SourceFunction {
        parse_function(src, "f").unwrap()
    }

    #[test]
    fn parse_strips_own_decorator() {
        let s = f("@insitu.vaccinate\ndef f(a, b=2):\n    return a + b\n");
        assert!(s.decorators.is_empty());
        assert_eq!(s.param_names(), vec!["a", "b"]);
        assert!(matches!(
            parse_function("def g(): pass\n", "f"),
            Err(SourceError::NotFound(_))
        ));
        assert!(matches!(parse_function("def f(:\n", "f"), Err(SourceError::Parse(_))));
    }

    #[test]
    fn path_order_and_text() {
        let a: StatementPath = "body[1]/then[0]".parse().unwrap();
        let b: StatementPath = "body[1]".parse().unwrap();
        let c: StatementPath = "body[1]/else[0]".parse().unwrap();
        let d: StatementPath = "body[2]".parse().unwrap();
        assert!(b < a && a < c && c < d);
        assert_eq!(a.to_string(), "body[1]/then[0]");
        let h: StatementPath = "body[0]/handler1[2]".parse().unwrap();
        assert_eq!(h.to_string().parse::<StatementPath>().unwrap(), h);
    }

    #[test]
    fn identical_functions_have_empty_diff() {
        let a = f("def f(x):\n    y = x + 1\n    return y\n");
        let b = f("def f(x):\n    y = (x + 1)\n    return   y\n");
        assert!(diff_functions(&a, &b).is_empty());
    }

    #[test]
    fn replaced_statement_is_modified() {
        let a = f("def f(t):\n    s = 0\n    for b in t:\n        s += b.data[0]\n    return s\n");
        let b = f("def f(t):\n    s = 0\n    for b in t:\n        s += b.data.item()\n    return s\n");
        let d = diff_functions(&a, &b);
        assert_eq!(d.edits.len(), 1);
        assert_eq!(d.edits[0].kind, EditKind::Modified);
        assert_eq!(first_modified_location(&d).unwrap().to_string(), "body[1]/loop[0]");
        assert_eq!(apply_diff(&a.body, &d), b.body);
    }

    #[test]
    fn appended_statement_is_added_at_end() {
        let a = f("def f():\n    a = 1\n    b = 2\n");
        let b = f("def f():\n    a = 1\n    b = 2\n    c = 3\n");
        let d = diff_functions(&a, &b);
        assert_eq!(d.edits.len(), 1);
        assert_eq!(d.edits[0].kind, EditKind::Added);
        assert_eq!(d.edits[0].path.to_string(), "body[2]");
    }

    #[test]
    fn removal_maps_to_position_formerly_occupied() {
        let a = f("def f():\n    a = 1\n    b = 2\n    c = 3\n");
        let b = f("def f():\n    a = 1\n    c = 3\n");
        let d = diff_functions(&a, &b);
        assert_eq!(d.edits[0].kind, EditKind::Removed);
        assert_eq!(first_modified_location(&d).unwrap().to_string(), "body[1]");
        let (p, exact) = d.map_path(&"body[2]".parse().unwrap());
        assert!(exact);
        assert_eq!(p.to_string(), "body[1]");
        let (p, exact) = d.map_path(&"body[1]".parse().unwrap());
        assert!(!exact);
        assert_eq!(p.to_string(), "body[1]");
        assert_eq!(apply_diff(&a.body, &d), b.body);
    }

    #[test]
    fn branch_edit_precedes_later_edit() {
        let a = f("def f(x):\n    if x:\n        a = 1\n    b = 2\n");
        let b = f("def f(x):\n    if x:\n        a = 5\n    b = 7\n");
        let d = diff_functions(&a, &b);
        assert_eq!(d.edits.len(), 2);
        assert_eq!(first_modified_location(&d).unwrap().to_string(), "body[0]/then[0]");
        assert_eq!(apply_diff(&a.body, &d), b.body);
    }

    #[test]
    fn wrapping_in_try_is_a_modification_of_the_statement_position() {
        let a = f("def f(xs):\n    for x in xs:\n        y = g(x)\n        h(y)\n");
        let b = f("def f(xs):\n    for x in xs:\n        try:\n            y = g(x)\n        except ValueError:\n            continue\n        h(y)\n");
        let d = diff_functions(&a, &b);
        assert_eq!(first_modified_location(&d).unwrap().to_string(), "body[0]/loop[0]");
        assert_eq!(apply_diff(&a.body, &d), b.body);
    }
}
