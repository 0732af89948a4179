//! Experiment runner: subcommands, config handling and report rendering.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
pub mod commands;
pub mod output;

use std::path::Path;

use clap::Parser;

use crate::args::{expand_config, Cli};
use crate::commands::usage;
use crate::output::Outcome;

/// Parses a full argument vector (program name first), applying any
/// `--config` file, and runs the subcommand.
pub fn run_args<I, S>(argv: I) -> anyhow::Result<(Cli, Outcome)>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv = expand_config(argv.into_iter().map(Into::into).collect()).map_err(usage)?;
    let cli = Cli::try_parse_from(argv)?;
    let outcome = commands::run(&cli.command)?;
    Ok((cli, outcome))
}

/// Writes the rendered outcome to `path` (or returns it for standard output)
/// and any attachments next to it.
pub fn write_outputs(cli: &Cli, outcome: &Outcome) -> anyhow::Result<Option<String>> {
    let common = cli.command.common();
    let body = outcome.render(common.format)?;
    match &common.out {
        Some(path) => {
            std::fs::write(path, &body)?;
            for (suffix, contents) in &outcome.attachments {
                std::fs::write(with_suffix(path, suffix), contents)?;
            }
            Ok(None)
        }
        None => Ok(Some(body)),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}
