use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use conystrom::matrix_csv::read_matrix;
use conystrom::run::{self, RunConfig, VerifyOptions};
use conystrom::tables;
use conystrom::CliResult;
use conystrom_core::cost::Variant;

#[derive(Parser)]
#[command(name = "conystrom", version, about = "Continual attention verification, benchmarks and cost tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a variant on a seeded stream and compare every step with its oracle.
    Verify(VerifyArgs),
    /// Time steady-state steps over a range of window lengths.
    Bench(BenchArgs),
    /// Print analytic FLOPs and memory for one configuration.
    Cost(CostArgs),
    /// Fit fixed landmarks to a token file with k-means.
    Landmarks(LandmarksArgs),
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|_| format!("unknown variant `{s}`"))
}

#[derive(Args)]
struct StreamArgs {
    #[arg(long, env = "CONY_VARIANT", value_parser = parse_variant)]
    variant: Variant,
    #[arg(long, env = "CONY_D", default_value_t = 64)]
    d: usize,
    #[arg(long, env = "CONY_M")]
    m: Option<usize>,
    #[arg(long, env = "CONY_STEPS", default_value_t = 200)]
    steps: usize,
    #[arg(long, env = "CONY_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "CONY_PINV_ITERS", default_value_t = 16)]
    pinv_iters: usize,
    /// Steps between cache rebuilds; 0 disables them. Default: 10 n.
    #[arg(long, env = "CONY_REFRESH_INTERVAL")]
    refresh_interval: Option<usize>,
    /// Fixed landmarks (m x d matrix CSV) for the fixed-landmark variants.
    #[arg(long, env = "CONY_LANDMARKS")]
    landmarks: Option<PathBuf>,
    /// Output CSV; stdout when absent.
    #[arg(long, env = "CONY_OUT")]
    out: Option<PathBuf>,
}

impl StreamArgs {
    fn config(&self, n: usize, tol: f64) -> RunConfig {
        RunConfig {
            variant: self.variant,
            n,
            d: self.d,
            m: self.m,
            steps: self.steps,
            seed: self.seed,
            pinv_iters: self.pinv_iters,
            refresh_interval: self.refresh_interval,
            tol,
            landmarks: self.landmarks.clone(),
        }
    }
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    stream: StreamArgs,
    #[arg(long, env = "CONY_N", default_value_t = 64)]
    n: usize,
    #[arg(long, env = "CONY_TOL", default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, env = "CONY_SAVE_STATE")]
    save_state: Option<PathBuf>,
    /// Resume from a snapshot; its variant, sizes and seed override the flags.
    #[arg(long, env = "CONY_LOAD_STATE")]
    load_state: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    stream: StreamArgs,
    /// Comma-separated window lengths.
    #[arg(long, env = "CONY_N", value_delimiter = ',', default_value = "64,128,256,512")]
    n: Vec<usize>,
    /// Discarded steps before timing. Default: n.
    #[arg(long, env = "CONY_WARMUP")]
    warmup: Option<usize>,
}

#[derive(Args)]
struct CostArgs {
    /// Variants to list; all when absent.
    #[arg(long, env = "CONY_VARIANT", value_parser = parse_variant, value_delimiter = ',')]
    variant: Vec<Variant>,
    #[arg(long, env = "CONY_N", default_value_t = 64)]
    n: u64,
    #[arg(long, env = "CONY_D", default_value_t = 64)]
    d: u64,
    #[arg(long, env = "CONY_M", default_value_t = 8)]
    m: u64,
    #[arg(long, env = "CONY_LAYERS", default_value_t = 1)]
    layers: u64,
    /// Also write the table as CSV.
    #[arg(long, env = "CONY_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LandmarksArgs {
    /// Token matrix CSV.
    #[arg(long, env = "CONY_INPUT")]
    input: PathBuf,
    #[arg(long, env = "CONY_M")]
    m: usize,
    #[arg(long, env = "CONY_SEED", default_value_t = 0)]
    seed: u64,
    /// Maximum tokens clustered.
    #[arg(long, env = "CONY_CAP", default_value_t = 50_000)]
    cap: usize,
    #[arg(long, env = "CONY_MAX_ITERS", default_value_t = 100)]
    max_iters: usize,
    #[arg(long, env = "CONY_OUT")]
    out: Option<PathBuf>,
}

fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Verify(a) => {
            let config = a.stream.config(a.n, a.tol);
            let opts = VerifyOptions {
                load_state: a.load_state,
                save_state: a.save_state,
            };
            run::verify(&config, &opts, run::output(a.stream.out.as_deref())?)?;
        }
        Command::Bench(a) => {
            let config = a.stream.config(0, 1.0);
            let rows = run::bench(&config, &a.n, a.warmup)?;
            run::write_bench(&rows, run::output(a.stream.out.as_deref())?)?;
        }
        Command::Cost(a) => {
            let variants = if a.variant.is_empty() { Variant::ALL.to_vec() } else { a.variant };
            let rows = tables::cost_rows(&variants, a.n, a.d, a.m, a.layers)?;
            let mut stdout = std::io::stdout().lock();
            tables::print_cost_table(&rows, &mut stdout)?;
            stdout.flush()?;
            if let Some(path) = &a.out {
                tables::write_cost_csv(&rows, File::create(path)?)?;
            }
        }
        Command::Landmarks(a) => {
            let tokens = read_matrix(BufReader::new(File::open(&a.input)?))?;
            let mut out = run::output(a.out.as_deref())?;
            tables::landmarks(&tokens, a.m, a.seed, a.cap, a.max_iters, &mut out)?;
            out.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
