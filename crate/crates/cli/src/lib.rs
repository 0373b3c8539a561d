//! Library half of the `creig` command-line tool: configuration parsing,
//! domain construction, Aitken extrapolation of reference values, the
//! experiment runners behind each subcommand, and the output manifest.
//!
//! Everything that writes files funnels through [`runner`], which records
//! each artifact so [`manifest`] can hash them; two runs with the same
//! configuration and seed produce identical outputs apart from the
//! wall-clock column of the adaptive history.

pub mod aitken;
pub mod config;
pub mod manifest;
pub mod runner;
