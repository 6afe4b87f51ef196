use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use orderedae_cli::commands::{
    cmd_check_grad, cmd_extract, cmd_generate, cmd_sweep, cmd_table1, cmd_train,
};
use orderedae_cli::{CliError, CliResult, ExperimentConfig, ExperimentId, MethodKind};

#[derive(Parser)]
#[command(
    name = "orderedae",
    version,
    about = "Ordered-variance autoencoders for nonlinear model identification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON file overriding the experiment preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// two_var, five_var or a path to a CSV file.
    #[arg(long, global = true)]
    experiment: Option<String>,
    #[arg(long, global = true, env = "ORDEREDAE_SEED")]
    seed: Option<u64>,
    /// Single q for train/extract/table1; a comma-separated list for sweep.
    #[arg(long, global = true)]
    q: Option<String>,
    #[arg(long, global = true)]
    eps: Option<f64>,
    #[arg(long, global = true, value_enum)]
    method: Option<MethodKind>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Retrain trivial solutions with the residual encoder rows at unit norm.
    #[arg(long, global = true)]
    retry_normalized: bool,
    /// Worker threads (defaults to the available parallelism).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated dataset and its manifest.
    Generate,
    /// Train one model at a single q.
    Train,
    /// Train across the configured q values and plot the results.
    Sweep,
    /// Extract relations from the model written by `train`.
    Extract {
        /// Also retrain with masked residual inputs and write the explicit relation.
        #[arg(long)]
        explicit: bool,
    },
    /// Compare PCA and both autoencoders on the five-variable data.
    Table1,
    /// Check backpropagated gradients against finite differences.
    CheckGrad,
}

fn parse_qs(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("invalid q value '{t}'")))
        })
        .collect()
}

fn build_config(common: &Common, command: &Command) -> CliResult<ExperimentConfig> {
    let experiment = common
        .experiment
        .as_deref()
        .map(str::parse::<ExperimentId>)
        .transpose()?;
    let experiment = match (experiment, command) {
        (None, Command::Table1) if common.config.is_none() => Some(ExperimentId::FiveVar),
        (e, _) => e,
    };
    let mut cfg = ExperimentConfig::load(common.config.as_deref(), experiment, common.method)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(q) = &common.q {
        let qs = parse_qs(q)?;
        match command {
            Command::Sweep => cfg.q_sweep = qs,
            _ if qs.len() == 1 => cfg.q = qs[0],
            _ => return Err(CliError::Usage("--q takes a single value here".into())),
        }
    }
    if let Some(eps) = common.eps {
        cfg.eps = eps;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    cfg.retry_normalized |= common.retry_normalized;
    Ok(cfg)
}

fn run(cli: &Cli) -> CliResult<String> {
    let cfg = build_config(&cli.common, &cli.command)?;
    match &cli.command {
        Command::Generate => cmd_generate(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Sweep => cmd_sweep(&cfg),
        Command::Extract { explicit } => cmd_extract(&cfg, *explicit),
        Command::Table1 => cmd_table1(&cfg),
        Command::CheckGrad => cmd_check_grad(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.common.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(2);
        }
        pool = pool.num_threads(jobs);
    }
    if let Err(e) = pool.build_global() {
        eprintln!("error: cannot start worker pool: {e}");
        return ExitCode::from(4);
    }
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
