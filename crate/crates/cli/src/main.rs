use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use threebody_cli::config::parse_config;
use threebody_cli::run::{run, write_config_failure, Command};

/// Spectral analysis of a three-particle lattice Hamiltonian.
#[derive(Parser, Debug)]
#[command(name = "threebody", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir` of the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 lets the runtime decide.
    #[arg(long, env = "THREEBODY_THREADS", default_value_t = 0)]
    threads: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", cli.config.display());
            return ExitCode::from(1);
        }
    };
    let cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(diags) => {
            for d in &diags {
                eprintln!("{}: {d}", cli.config.display());
            }
            if let Some(out) = &cli.out {
                if let Err(e) = write_config_failure(cli.command, out, &diags) {
                    eprintln!("error: {e}");
                }
            }
            return ExitCode::from(1);
        }
    };
    let out = cli.out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    match run(cli.command, &cfg, &out) {
        Ok(()) => {
            println!("{}", out.join("summary.json").display());
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
