//! Library surface of the fsod command-line tool: run configuration and the
//! evaluation service. The binary in `main.rs` wires these to clap.

pub mod config;
pub mod server;
