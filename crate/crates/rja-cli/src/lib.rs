//! Command implementations behind the `rja` binary.
//!
//! Each command is an ordinary function over an argument struct so tests can
//! drive the exact code paths the binary runs.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{
    cmd_bench, cmd_decode, cmd_encode, cmd_eval, cmd_inspect, cmd_synth, BenchArgs, BenchRow,
    CorpusSpec, DecodeArgs, EncodeArgs, EncodeMode, EvalArgs, InspectArgs, PresetKind, SynthArgs,
};
pub use error::{CliError, EXIT_IO, EXIT_OK, EXIT_PARSE, EXIT_VALIDATION};
