//! Workbench around the `onforest` solver: instance files, seeded and
//! adversarial generators, benchmark runners, and the CLI plumbing.

pub mod adversary;
pub mod bench;
pub mod gen;
pub mod instance;

pub use bench::WorkbenchError;
pub use instance::{InstanceFile, StepSpec};
