//! Command-line front end: EMB1 file I/O, partition files and the
//! `refine`, `analyze`, `simulate` and `sweep` subcommands.

pub mod commands;
pub mod emb;
pub mod error;
pub mod spec;

use clap::Parser;

pub use commands::{run, Command};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "orthoprompt",
    version,
    about = "Dual-subspace refinement of prompt embeddings"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}
