//! Fuzz target bodies. Each parser must return an error rather than panic,
//! and anything it accepts must survive a write/parse round trip unchanged.
//! The bodies live in `checks.rs` so the workspace tests can replay the
//! checked-in corpus through them without libFuzzer.

mod checks;

pub use checks::*;
