use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sgspde_cli::commands::{self, Outcome, Overrides};
use sgspde_cli::output::OutDir;
use sgspde_cli::{CliError, CliResult, RunManifest};

#[derive(Parser, Debug)]
#[command(name = "sgspde", version, about = "SG-parabolic SPDE simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Problem manifest (TOML).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Overrides the manifest seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "SGSPDE_OUT_DIR", default_value = "sgspde-out")]
    out: PathBuf,
    /// Overrides the number of Monte Carlo paths.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Write field snapshots of path 0.
    #[arg(long, global = true)]
    snapshots: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Check the hypotheses of the existence theorem.
    Check,
    /// Estimate T0, certify it and tabulate moments.
    Simulate,
    /// Run the verification battery.
    Verify,
    /// Dump the Cameron-Martin basis.
    Basis,
    /// Sweep the spectral condition over lambda.
    Spectral,
}

fn run(cli: &Cli) -> CliResult<Outcome> {
    let path = cli
        .manifest
        .as_ref()
        .ok_or_else(|| CliError::Manifest("--manifest is required".into()))?;
    let loaded = RunManifest::read(path)?.load()?;
    let out = OutDir::create(&cli.out)?;
    let overrides = Overrides {
        seed: cli.seed,
        paths: cli.paths,
        snapshots: cli.snapshots,
    };
    match cli.command {
        Command::Check => commands::check(&loaded, &out),
        Command::Simulate => commands::simulate(&loaded, &out, &overrides),
        Command::Verify => commands::verify(&loaded, &out, &overrides),
        Command::Basis => commands::basis(&loaded, &out),
        Command::Spectral => commands::spectral(&loaded, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let result = match pool.build() {
        Ok(pool) => pool.install(|| run(&cli)),
        Err(e) => Err(CliError::Manifest(format!("thread pool: {e}"))),
    };
    let code = match result {
        Ok(o) => {
            println!("{}", o.summary);
            o.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code.clamp(0, 255) as u8)
}
