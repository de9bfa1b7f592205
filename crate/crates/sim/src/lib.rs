//! Scenario runner around the deterministic simulator: declarative TOML
//! scenarios in, CSV/JSON artifacts and pass/fail verdicts out.

pub mod analysis;
pub mod artifacts;
pub mod metrics;
pub mod runner;
pub mod scenario;
