//! Experiment harness around `mcmac-core`: scenario configuration files,
//! sweep execution across methods and seeds, CSV emission, and the
//! invariant verification suite behind the `mcmac verify` subcommand.

pub mod config;
pub mod experiment;
pub mod verify;
