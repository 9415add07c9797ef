use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rllcap::experiment::{parse_sizes, parse_snrs, run_experiment, Command, ExperimentConfig, Format};
use rllcap::exact::CountMethod;
use rllcap::Schedule;

/// Capacity and information-rate estimates for multi-dimensional
/// run-length-limited constraints via generalized belief propagation.
#[derive(Parser, Debug)]
#[command(name = "rllcap", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Sub {
    /// Estimate the capacity over a sweep of grid sizes.
    Capacity,
    /// Estimate the information rate over an AWGN channel.
    Inforate,
    /// Count admissible arrays exactly.
    Count,
    /// Draw admissible arrays from the GBP beliefs.
    Sample,
    /// Print a region-graph census.
    Regions,
    /// Check 0/1 text grids against the constraint.
    Validate,
}

#[derive(Args, Debug)]
struct Opts {
    /// Constraint, e.g. "1,inf" or "1,inf,2,4".
    #[arg(long, global = true, default_value = "1,inf")]
    constraint: String,
    /// Grid sizes: m, a..b[:step], or AxB[xC], comma separated.
    #[arg(long, global = true)]
    size: Option<String>,
    /// Number of grid axes.
    #[arg(long, global = true, default_value_t = 2)]
    dims: usize,
    /// SNR list in dB: values or a..b:step, comma separated.
    #[arg(long, global = true)]
    snr: Option<String>,
    #[arg(long, global = true, default_value_t = 1000)]
    samples: usize,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value_t = 0.5)]
    damping: f64,
    #[arg(long, global = true, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long = "max-iter", global = true, default_value_t = 10_000)]
    max_iter: usize,
    /// synchronous or sequential.
    #[arg(long, global = true, default_value = "synchronous")]
    schedule: String,
    /// Counting method for `count`: brute or transfer.
    #[arg(long, global = true)]
    method: Option<String>,
    /// Input file for `validate`; "-" reads standard input.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// csv or json.
    #[arg(long, global = true, default_value = "csv")]
    format: String,
    /// Treat non-converged points as failures (exit 4).
    #[arg(long, global = true)]
    strict: bool,
    /// Run independent sweep points concurrently.
    #[arg(long, global = true)]
    parallel: bool,
    /// Use plain damped iteration instead of Newton steps.
    #[arg(long = "plain-gbp", global = true)]
    plain_gbp: bool,
    /// Drop regions with counting number zero.
    #[arg(long, global = true)]
    prune: bool,
}

fn command_of(sub: Sub) -> Command {
    match sub {
        Sub::Capacity => Command::Capacity,
        Sub::Inforate => Command::Inforate,
        Sub::Count => Command::Count,
        Sub::Sample => Command::Sample,
        Sub::Regions => Command::Regions,
        Sub::Validate => Command::Validate,
    }
}

fn build_config(cli: &Cli) -> rllcap::Result<ExperimentConfig> {
    let o = &cli.opts;
    let mut cfg = ExperimentConfig::new(command_of(cli.command), &o.constraint);
    cfg.dims = o.dims;
    if let Some(size) = &o.size {
        cfg.sizes = parse_sizes(size, o.dims)?;
    }
    if let Some(snr) = &o.snr {
        cfg.snrs_db = parse_snrs(snr)?;
    }
    cfg.samples = o.samples;
    cfg.seed = o.seed;
    cfg.gbp.damping = o.damping;
    cfg.gbp.tolerance = o.tol;
    cfg.gbp.max_iterations = o.max_iter;
    cfg.gbp.schedule = o.schedule.parse::<Schedule>()?;
    cfg.gbp.seed = o.seed;
    cfg.gbp.newton_krylov = !o.plain_gbp;
    cfg.regions.drop_zero_counting = o.prune;
    cfg.method = o.method.as_deref().map(str::parse::<CountMethod>).transpose()?;
    cfg.input = o.input.clone();
    cfg.out = o.out.clone();
    cfg.format = o.format.parse::<Format>()?;
    cfg.strict = o.strict;
    cfg.parallel = o.parallel;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match build_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let mut out: Box<dyn Write> = match &cfg.out {
        Some(path) => match File::create(path) {
            Ok(f) => Box::new(BufWriter::new(f)),
            Err(e) => {
                eprintln!("error: --out {}: {e}", path.display());
                return ExitCode::from(2);
            }
        },
        None => Box::new(io::stdout().lock()),
    };
    let status = run_experiment(&cfg, &mut *out);
    if let Err(e) = out.flush() {
        eprintln!("error: writing output: {e}");
        return ExitCode::from(3);
    }
    ExitCode::from(status.code() as u8)
}
