//! `seedbank`: command-line front end for the seed bank scaling-limit toolkit.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails, 2 on usage errors.

mod commands;
mod config;

use std::process::ExitCode;

use config::{parse_config, ParseFailure};

fn main() -> ExitCode {
    let cfg = match parse_config(std::env::args_os()) {
        Ok(cfg) => cfg,
        Err(ParseFailure::Clap(e)) => e.exit(),
        Err(ParseFailure::Usage(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let pool = match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(1);
        }
    };
    let outcome = pool.install(|| commands::run(&cfg)).and_then(|o| commands::emit(&cfg, &o.table).map(|_| o));
    match outcome {
        Ok(o) => {
            eprintln!("{}", o.summary);
            if let Some(path) = &cfg.out {
                eprintln!("wrote {}", path.display());
            }
            if o.pass {
                ExitCode::SUCCESS
            } else {
                eprintln!("check failed");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
