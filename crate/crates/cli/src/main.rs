use std::process::ExitCode;

use clap::Parser;
use cryptoflow_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.effective_config().and_then(|cfg| run(cli.command, &cfg)) {
        Ok(written) => {
            for p in written {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.report());
            ExitCode::FAILURE
        }
    }
}
