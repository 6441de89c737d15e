//! Static analyses and program transformations ahead of execution.

pub mod coarsen;
pub mod duplicate;
pub mod hoist;
pub mod layout;
pub mod lower;
pub mod phases;
pub mod pipeline;
pub mod profile;
pub mod report;
pub mod taint;

pub use duplicate::{duplicate, DuplicationReport};
pub use taint::{analyze_reuse, Class, Ctx, ReuseReport, Source};
pub use pipeline::{compile, compile_typed, Compiled, Toggles};
pub use profile::{profile_invocations, ProfileEntry, ProfileReport};
pub use report::AnalysisReport;
