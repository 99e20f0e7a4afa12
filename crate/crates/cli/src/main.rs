use std::process::ExitCode;

use clap::Parser;
use uncx_cli::commands::{execute, exit_code, Cli, ErrorBody};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(paths) => {
            let written: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
            println!("{}", serde_json::json!({ "written": written }));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&ErrorBody::from(&e)).unwrap_or_else(|_| e.to_string()));
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
