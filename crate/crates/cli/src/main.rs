use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kinfluid::diagnostics::fit_decay;
use kinfluid::SimError;
use kinfluid_cli::config::{ConfigError, RunConfig};
use kinfluid_cli::run::{simulate_to, sweep, RunError};
use kinfluid_cli::series::read_csv;

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 4;

#[derive(Parser)]
#[command(name = "kinfluid", version, about = "Coupled Vlasov / power-law fluid simulator on the periodic box")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration to t_end.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the configuration once per power-law exponent.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated exponents, e.g. 1.5,2,3.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        p: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the decay law to a series.csv and print the fit as JSON.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        p: f64,
    },
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("SIM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| format!("SIM_THREADS must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn load(path: &PathBuf) -> Result<RunConfig, ExitCode> {
    RunConfig::load(path).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_CONFIG)
    })
}

fn fail(e: &RunError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_CONFIG);
    }
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let Some(dir) = out.or_else(|| cfg.output_dir.clone()) else {
                eprintln!("error: no output directory (pass --out or set output_dir)");
                return ExitCode::from(EXIT_CONFIG);
            };
            match simulate_to(&cfg, &dir) {
                Ok(o) => {
                    if let Some(b) = &o.summary.balance {
                        log::info!("balance residuals: r_mod = {:.3e}, r_tot = {:.3e}", b.r_mod, b.r_tot);
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Sweep { config, p, out } => {
            if p.is_empty() {
                eprintln!("error: --p needs at least one exponent");
                return ExitCode::from(EXIT_CONFIG);
            }
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            for &pv in &p {
                if let Err(e) = cfg.with_p(pv).validate() {
                    eprintln!("error: p = {pv}: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            }
            match sweep(&cfg, &p, &out) {
                Ok((_, true)) => ExitCode::SUCCESS,
                Ok((rows, false)) => {
                    let failed = rows.iter().filter(|r| r.status != "ok").count();
                    eprintln!("error: {failed} of {} runs failed (see sweep.csv)", rows.len());
                    ExitCode::from(3)
                }
                Err(e) => fail(&e),
            }
        }
        Command::Fit { input, p } => {
            let rows = match read_csv(&input) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {}: {e}", input.display());
                    return ExitCode::from(EXIT_DATA);
                }
            };
            match fit_decay(&rows, p) {
                Ok(fit) => {
                    println!("{}", serde_json::to_string_pretty(&fit).expect("fit serializes"));
                    ExitCode::SUCCESS
                }
                Err(e @ SimError::InvalidInput(_)) => {
                    eprintln!("error: {}", ConfigError::from(e));
                    ExitCode::from(EXIT_CONFIG)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_DATA)
                }
            }
        }
    }
}
