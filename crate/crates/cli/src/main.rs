use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use ncgl_cli::{execute, exit_code, Cli, EXIT_USAGE};

fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("NCGL_THREADS") else { return Ok(()) };
    let n: usize = raw.trim().parse().map_err(|_| format!("NCGL_THREADS must be a positive integer, got {raw:?}"))?;
    if n == 0 {
        return Err("NCGL_THREADS must be at least 1".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            return ExitCode::from(code as u8);
        }
    };
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_USAGE as u8);
    }
    let mut stdout = std::io::stdout();
    match execute(cli, &mut stdout) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
