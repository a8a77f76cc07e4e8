//! The `vacoustic` command-line tool: corpus augmentation, feature
//! extraction, cross-validated training, prediction and an HTTP service.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod serve;

use std::ffi::OsString;
use std::io::Write;

use clap::error::ErrorKind;
use clap::Parser;

use crate::args::{Cli, Command};
use crate::config::FileConfig;
use crate::error::{CliError, EXIT_OK, EXIT_USAGE};

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit status.
pub fn run<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let rendered = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(rendered.as_bytes()) } else { err.write_all(rendered.as_bytes()) };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command, inside a dedicated thread pool when `--jobs` is set.
pub fn execute(cli: &Cli, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let file = FileConfig::load_optional(cli.config.as_deref())?;
    match cli.jobs {
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Failed(format!("cannot build thread pool: {e}")))?
            .install(|| dispatch(&cli.command, &file, out)),
        None => dispatch(&cli.command, &file, out),
    }
}

fn dispatch(command: &Command, file: &FileConfig, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    match command {
        Command::Augment(a) => commands::cmd_augment(a, file, out),
        Command::Extract(a) => commands::cmd_extract(a, file, out),
        Command::Train(a) => commands::cmd_train(a, file, out),
        Command::Predict(a) => commands::cmd_predict(a, out),
        Command::Serve(a) => serve::cmd_serve(a, file, out),
        Command::Synth(a) => commands::cmd_synth(a, out),
    }
}
