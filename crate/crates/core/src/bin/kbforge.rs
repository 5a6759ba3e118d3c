use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kbforge::corpus::InputFormat;
use kbforge::par::ExecMode;
use kbforge::synthetic::SyntheticConfig;
use kbforge::workspace::{self, BackendChoice, RunPolicy, Stage, StageStatus, Workspace, WorkspaceConfig, WorkspaceError};
use tracing_subscriber::EnvFilter;

#[derive(Parser, Debug)]
#[command(name = "kbforge", version, about = "Build a knowledge base from support tickets and evaluate it")]
struct Cli {
    /// Workspace directory (overrides the config file).
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Re-run stages even when their digests are unchanged.
    #[arg(long, global = true)]
    force: bool,
    /// Sampling seed for discovery.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Model backend (overrides the config file).
    #[arg(long, global = true)]
    backend: Option<BackendChoice>,
    /// Run in-stage fan-out on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load and clean the ticket corpus.
    Ingest {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        format: Option<InputFormat>,
    },
    /// Chronological train/val/test split.
    Split,
    /// Discover the category taxonomy from training tickets.
    Discover,
    /// Assign training tickets to categories.
    Categorize,
    /// Synthesize one article per category.
    Synthesize,
    /// Build the retrieval indexes for the configured methods.
    Index,
    /// Generate evaluation queries from held-out tickets.
    GenQueries,
    /// Answer every query with every method.
    Answer,
    /// Score every answer with the judge.
    Judge,
    /// Aggregate scores into report.json and report.md.
    Report,
    /// Run every stage needed for the configured methods.
    Run,
    /// Build, evaluate and report the given methods end to end.
    Compare {
        /// Comma-separated subset of raw, per_ticket, cluster, multi_agent, multi_level.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
    },
    /// Write the bundled synthetic corpus as JSONL.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 120)]
        tickets: usize,
        #[arg(long, default_value_t = SyntheticConfig::default().seed)]
        corpus_seed: u64,
    },
}

fn stage_of(cmd: &Command) -> Option<Stage> {
    Some(match cmd {
        Command::Ingest { .. } => Stage::Ingest,
        Command::Split => Stage::Split,
        Command::Discover => Stage::Discover,
        Command::Categorize => Stage::Categorize,
        Command::Synthesize => Stage::Synthesize,
        Command::Index => Stage::Index,
        Command::GenQueries => Stage::GenQueries,
        Command::Answer => Stage::Answer,
        Command::Judge => Stage::Judge,
        Command::Report => Stage::Report,
        _ => return None,
    })
}

fn load_config(cli: &Cli) -> Result<WorkspaceConfig, WorkspaceError> {
    let mut cfg = match &cli.config {
        Some(p) => WorkspaceConfig::load(p)?,
        None => WorkspaceConfig::default(),
    };
    if let Some(w) = &cli.workspace {
        cfg.workspace_dir = w.clone();
    }
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    if let Some(b) = cli.backend {
        cfg.backend = b;
    }
    if let Command::Ingest { input, format } = &cli.command {
        if input.is_some() {
            cfg.input = input.clone();
        }
        if let Some(f) = format {
            cfg.input_format = *f;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), WorkspaceError> {
    if let Command::SynthCorpus {
        out,
        tickets,
        corpus_seed,
    } = &cli.command
    {
        let n = workspace::write_synthetic_corpus(
            out,
            &SyntheticConfig {
                tickets: *tickets,
                seed: *corpus_seed,
                sizes: None,
            },
        )?;
        println!("wrote {n} tickets to {}", out.display());
        return Ok(());
    }
    let cfg = load_config(&cli)?;
    let mut ws = Workspace::open(cfg)?;
    if cli.sequential {
        ws.set_exec(ExecMode::Sequential);
    }
    let policy = RunPolicy {
        force: cli.force,
        rerun_on_config_change: cli.force,
    };
    let print = |a: &workspace::StageArtifact| {
        let status = match a.status {
            StageStatus::Ran => "ran",
            StageStatus::Cached => "cached",
        };
        println!("{:<12} {:<7} {}", a.stage.as_str(), status, a.output_path);
    };
    match &cli.command {
        Command::Run => {
            for a in ws.run_stages(&ws.pipeline(), policy)? {
                print(&a);
            }
        }
        Command::Compare { methods } => {
            let methods: Vec<&str> = methods.iter().map(String::as_str).collect();
            let report = ws.compare(&methods, cli.force)?;
            print!("{}", report.to_markdown());
        }
        cmd => {
            let stage = stage_of(cmd).expect("every other command is a stage");
            print(&ws.run_stage_with(stage, policy)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
