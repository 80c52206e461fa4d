//! Crash scenarios, recovery modes and the measurements run over them.

pub mod conformance;
pub mod corpus;
pub mod dataparallel;
pub mod harness;
pub mod scenarios;
pub mod tensor;

pub use harness::{measure_overhead, microbench, run_scenario, summarize, table, Mode, Outcome, RunReport};
pub use scenarios::{Category, Injector, Scenario};
