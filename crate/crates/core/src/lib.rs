//! In-situ crash recovery for long-running script functions.
//!
//! A function is vaccinated once: its loop and nested-function bodies become
//! cells run behind barriers, and its locals move into a per-activation
//! table. When a cell crashes, the process stays up and a recovery session
//! may patch state, swap code, and continue from the crash site.

pub mod console;
pub mod crash_bench;
pub mod distributed;
pub mod lang;
pub mod runtime;
pub mod source;
pub mod update;
pub mod vaccinator;

pub use lang::{Exception, Flow, Interp, Value};
pub use runtime::{Activation, CrashSite, Decision, NamespaceTable, RecoveryHandler, VaccinatedFn};
pub use source::{CodeDiff, SourceFunction, StatementPath};
pub use vaccinator::{decompose, Cell, CellKind, CellTree, Decomposition, Granularity, VaccinationError};
