mod args;
mod commands;
mod heatmap;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;

/// Exit status for a failed run: 2 usage or configuration, 3 input data,
/// 4 numerical divergence, 1 anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    use fcadapt::Error;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) | Error::Input(_) => 2,
                Error::Format { .. } | Error::Io { .. } | Error::Dimension { .. } | Error::DegenerateInput(_) => 3,
                Error::Numerical { .. } => 4,
                Error::Contract(_) => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
