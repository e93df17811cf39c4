use std::process::ExitCode;

use clap::Parser;
use jne_cli::args::Cli;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let json = serde_json::json!({
                "error": "Config",
                "message": e.kind().to_string(),
                "exit_code": 2,
            });
            let _ = e.print();
            eprintln!("{json}");
            return ExitCode::from(2);
        }
    };
    match jne_cli::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
