use clap::Parser;
use lumendet_cli::{run, Cli, CliError};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        match &e {
            CliError::Runtime(inner) => eprintln!("error: {inner:#}"),
            CliError::Usage(msg) => eprintln!("error: {msg}"),
        }
        std::process::exit(e.exit_code());
    }
}
