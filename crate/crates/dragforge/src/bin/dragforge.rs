//! Command-line experiment driver.
//!
//! Usage: `dragforge <subcommand> --config <file> [--jobs N] [--out <path>]`
//!
//! Subcommands: sweep-time, sweep-lambda, sweep-epsilon, spectrum, simulate,
//! rwa. Exit codes: 0 on success, 1 on configuration errors, 2 when any
//! sweep point failed and was recorded as NaN.
//!
//! Runs are fully deterministic; the `DRAGFORGE_SEED` environment variable is
//! reserved for future stochastic features and currently ignored.

use std::process::ExitCode;

use dragforge::experiments::{run, Ini};

const USAGE: &str = "usage: dragforge <subcommand> --config <file> [--jobs N] [--out <path>]\n\
    subcommands: sweep-time | sweep-lambda | sweep-epsilon | spectrum | simulate | rwa";

struct Args {
    subcommand: String,
    config: String,
    jobs: Option<usize>,
    out: Option<String>,
}

fn parse_args(argv: &[String]) -> Result<Args, String> {
    let mut it = argv.iter();
    let subcommand = it.next().ok_or_else(|| USAGE.to_string())?.clone();
    if subcommand == "--help" || subcommand == "-h" {
        return Err(USAGE.to_string());
    }
    let mut config = None;
    let mut jobs = None;
    let mut out = None;
    while let Some(flag) = it.next() {
        let mut value = |name: &str| {
            it.next()
                .cloned()
                .ok_or_else(|| format!("{name} requires a value\n{USAGE}"))
        };
        match flag.as_str() {
            "--config" => config = Some(value("--config")?),
            "--out" => out = Some(value("--out")?),
            "--jobs" => {
                let v = value("--jobs")?;
                let n: usize = v
                    .parse()
                    .map_err(|_| format!("--jobs '{v}' is not a positive integer"))?;
                if n == 0 {
                    return Err("--jobs must be >= 1".into());
                }
                jobs = Some(n);
            }
            other => return Err(format!("unknown flag '{other}'\n{USAGE}")),
        }
    }
    let config = config.ok_or_else(|| format!("--config is required\n{USAGE}"))?;
    Ok(Args { subcommand, config, jobs, out })
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let args = match parse_args(&argv) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("{msg}");
            return ExitCode::from(1);
        }
    };
    if let Some(n) = args.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("dragforge: failed to size worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("dragforge: cannot read config '{}': {e}", args.config);
            return ExitCode::from(1);
        }
    };
    let ini = match Ini::parse(&text) {
        Ok(i) => i,
        Err(e) => {
            eprintln!("dragforge: {e}");
            return ExitCode::from(1);
        }
    };
    let output = match run(&args.subcommand, &ini) {
        Ok(o) => o,
        Err(e) => {
            // hard failures before any point ran are configuration problems
            eprintln!("dragforge: {e}");
            return ExitCode::from(1);
        }
    };
    for w in &output.warnings {
        eprintln!("dragforge: warning: {w}");
    }
    match args.out {
        Some(path) => {
            if let Err(e) = std::fs::write(&path, &output.csv) {
                eprintln!("dragforge: cannot write '{path}': {e}");
                return ExitCode::from(1);
            }
        }
        None => print!("{}", output.csv),
    }
    if output.nan_count > 0 {
        eprintln!(
            "dragforge: {} point(s) failed and were recorded as NaN",
            output.nan_count
        );
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}
