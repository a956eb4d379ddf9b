use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mtrack_cli::{
    cmd_ablate, cmd_gen, cmd_report, cmd_run, cmd_train_agent, cmd_train_tagger, parse_modes, AgentKind, CliConfig,
    CliError, Ctx,
};
use mtrack_core::tracker::TrackerMode;

#[derive(Parser)]
#[command(name = "mtrack", version, about = "Milestone tracking testbed for long-horizon instruction following")]
struct Cli {
    /// Master seed (overrides MTRACK_SEED and the config file).
    #[arg(long, global = true, env = "MTRACK_SEED")]
    seed: Option<u64>,
    /// Worker threads for episode evaluation and rollout collection.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for datasets, models and results.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a task dataset as JSON lines.
    Gen {
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Use the unseen room templates and seed range.
        #[arg(long)]
        unseen: bool,
        /// Task type weights, e.g. "Pick&Place=2,Examine=1".
        #[arg(long)]
        mix: Option<String>,
        /// Dataset name (file stem under --out).
        #[arg(long, default_value = "tasks")]
        name: String,
    },
    /// Train the milestone tagger.
    TrainTagger {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        heldout: Option<PathBuf>,
    },
    /// Train policies (and the binary checker when needed).
    TrainAgent {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated tracker modes, or "all".
        #[arg(long, default_value = "all")]
        modes: String,
    },
    /// Evaluate one tracker mode.
    Run {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "proactive")]
        mode: String,
        /// policy, greedy or expert.
        #[arg(long, default_value = "policy")]
        agent: String,
    },
    /// Evaluate several tracker modes on the same tasks.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "off,binary,passive,proactive,oracle")]
        modes: String,
        #[arg(long, default_value = "policy")]
        agent: String,
    },
    /// Rebuild the report tables from stored results.
    Report {
        #[arg(long)]
        results: PathBuf,
    },
}

fn agent_kind(s: &str) -> Result<AgentKind, CliError> {
    AgentKind::parse(s).ok_or_else(|| CliError::Usage(format!("unknown agent {s:?}")))
}

fn run(cli: Cli) -> Result<String, CliError> {
    let config = match &cli.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    let ctx = Ctx::new(cli.out, config, cli.seed);
    eprintln!("config: {}", serde_json::to_string(&ctx.config).expect("config serializes"));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build()
        .map_err(|e| CliError::Invariant(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Gen { n, unseen, mix, name } => cmd_gen(&ctx, *n, *unseen, mix.as_deref(), name),
        Command::TrainTagger { data, heldout } => cmd_train_tagger(&ctx, data, heldout.as_deref()),
        Command::TrainAgent { data, modes } => cmd_train_agent(&ctx, data, &parse_modes(modes)?),
        Command::Run { data, mode, agent } => {
            let mode = TrackerMode::parse(mode).ok_or_else(|| CliError::Usage(format!("unknown tracker mode {mode:?}")))?;
            cmd_run(&ctx, data, mode, agent_kind(agent)?)
        }
        Command::Ablate { data, modes, agent } => cmd_ablate(&ctx, data, &parse_modes(modes)?, agent_kind(agent)?),
        Command::Report { results } => cmd_report(results),
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(s) => {
            print!("{s}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
