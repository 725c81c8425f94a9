//! Command implementations behind the `lqgame` binary.

pub mod candidate;
pub mod commands;
pub mod report;
