//! Library surface of the experiment harness: configuration, result rows,
//! model serialization, and the command implementations. The `galu` binary
//! is a thin clap front end over these.

pub mod commands;
pub mod config;
pub mod model_io;
pub mod rows;
