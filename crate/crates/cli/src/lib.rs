//! Config-driven experiment runner behind the `parabolic-ocp` binary.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod run;

pub use config::{parse_config, parse_config_str, ConfigErrors, ExperimentConfig};
pub use run::{run, Check, Command, FileEntry, Manifest};
