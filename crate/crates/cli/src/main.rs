use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use obsent::experiment::{execute, write_artifacts, ExperimentConfig};
use obsent::Error;

#[derive(Parser)]
#[command(name = "obsent", version, about = "Observational-entropy thermodynamics experiments")]
struct Cli {
    /// Print the default config with every field explicit, then exit.
    #[arg(long)]
    print_defaults: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run experiments and write their ledger CSV, summary JSON and FT CSV.
    Run {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Run the configs in parallel (thread count capped by OBSENT_THREADS).
        #[arg(long)]
        sweep: bool,
    },
    /// Check a config and its model without running it.
    Validate { config: PathBuf },
    /// Effective inverse temperature of an energy for a config's model.
    #[command(allow_negative_numbers = true)]
    Temperature {
        config: PathBuf,
        energy: f64,
        /// Bath index, starting at 1; defaults to the first bath.
        #[arg(long, conflicts_with = "total")]
        bath: Option<usize>,
        /// Use the full Hamiltonian at t = 0 instead of a bath.
        #[arg(long)]
        total: bool,
    },
    /// Print the default config with every field explicit.
    PrintDefaults,
}

const EXIT_ERROR: u8 = 1;
const EXIT_ASSERTION: u8 = 2;

fn print_defaults() -> ExitCode {
    println!("{}", ExperimentConfig::default().to_json_pretty());
    ExitCode::SUCCESS
}

/// Exit status of one run: 0, or `EXIT_ERROR` / `EXIT_ASSERTION`.
fn run_one(path: &Path) -> u8 {
    let result = ExperimentConfig::from_path(path).and_then(|cfg| {
        let outcome = execute(&cfg)?;
        let written = write_artifacts(&cfg, &outcome)?;
        Ok((outcome, written))
    });
    let name = path.display();
    match result {
        Err(e) => {
            eprintln!("{name}: error: {e}");
            EXIT_ERROR
        }
        Ok((outcome, written)) => {
            for w in &written {
                println!("{name}: wrote {}", w.display());
            }
            for v in &outcome.violations {
                eprintln!("{name}: {v}");
            }
            if outcome.passed() {
                if !outcome.violations.is_empty() {
                    eprintln!("{name}: {} invariant(s) violated (report only)", outcome.violations.len());
                }
                0
            } else {
                eprintln!("{name}: assertion failed: {}", outcome.violations[0].invariant);
                EXIT_ASSERTION
            }
        }
    }
}

fn thread_cap() -> Option<usize> {
    std::env::var("OBSENT_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

fn run(configs: &[PathBuf], sweep: bool) -> ExitCode {
    let codes: Vec<u8> = if sweep && configs.len() > 1 {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = thread_cap() {
            builder = builder.num_threads(n);
        }
        match builder.build() {
            Ok(pool) => pool.install(|| configs.par_iter().map(|p| run_one(p)).collect()),
            Err(e) => {
                eprintln!("error: thread pool: {e}");
                return ExitCode::from(EXIT_ERROR);
            }
        }
    } else {
        configs.iter().map(|p| run_one(p)).collect()
    };
    if codes.contains(&EXIT_ERROR) {
        ExitCode::from(EXIT_ERROR)
    } else if codes.contains(&EXIT_ASSERTION) {
        ExitCode::from(EXIT_ASSERTION)
    } else {
        ExitCode::SUCCESS
    }
}

fn validate(path: &Path) -> ExitCode {
    match ExperimentConfig::from_path(path).and_then(|cfg| cfg.validate()) {
        Ok(model) => {
            println!("{}: ok (dims {:?}, {} bath(s))", path.display(), model.dims, model.baths.len());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}: error: {e}", path.display());
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn temperature(path: &Path, energy: f64, bath: Option<usize>, total: bool) -> ExitCode {
    let bath = match bath {
        Some(0) => {
            eprintln!("error: {}", Error::ConfigInvalid { field: "bath".into(), message: "indices start at 1".into() });
            return ExitCode::from(EXIT_ERROR);
        }
        b => b.map(|b| b - 1),
    };
    match ExperimentConfig::from_path(path).and_then(|cfg| obsent::experiment::temperature(&cfg, energy, bath, total)) {
        Ok(t) => {
            println!("beta* = {:.16e}", t.beta_star);
            println!("T* = {:.16e}", t.temperature());
            if t.is_saturated() {
                println!("saturated: {:?}", t.saturated);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.print_defaults {
        return print_defaults();
    }
    match cli.command {
        Some(Command::Run { configs, sweep }) => run(&configs, sweep),
        Some(Command::Validate { config }) => validate(&config),
        Some(Command::Temperature { config, energy, bath, total }) => temperature(&config, energy, bath, total),
        Some(Command::PrintDefaults) => print_defaults(),
        None => {
            eprintln!("error: no subcommand; see --help");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
