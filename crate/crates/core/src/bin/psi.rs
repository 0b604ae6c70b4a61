use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use psi_core::commands::{report_from_dir, Backend, CmdError, Runner};
use psi_core::config::{AblationSpec, PipelineConfig};
use psi_core::gateway::MockScript;
use tracing_subscriber::EnvFilter;

/// Principle-guided instruction dataset synthesis.
#[derive(Parser, Debug)]
#[command(name = "psi", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory for stage files.
    #[arg(long = "out", global = true)]
    output_dir: Option<PathBuf>,
    /// Seed dataset (Alpaca JSONL or JSON array).
    #[arg(long = "seed", global = true)]
    seed_file: Option<PathBuf>,
    /// Directory of private knowledge snippets, sent to the generator only.
    #[arg(long = "knowledge", global = true)]
    knowledge_dir: Option<PathBuf>,
    /// Scripted offline transport instead of HTTP endpoints.
    #[arg(long, global = true)]
    mock: Option<PathBuf>,
    /// Recompute stages whose outputs already exist.
    #[arg(long, global = true)]
    force: bool,
    #[arg(long, global = true)]
    rng_seed: Option<u64>,
    /// Maximum concurrent requests.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[arg(long, global = true)]
    reflector_url: Option<String>,
    #[arg(long, global = true)]
    reflector_model: Option<String>,
    #[arg(long, global = true)]
    generator_url: Option<String>,
    #[arg(long, global = true)]
    generator_model: Option<String>,
    #[arg(long, global = true)]
    embedder_url: Option<String>,
    #[arg(long, global = true)]
    embedder_model: Option<String>,
    /// Log verbosity (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Expand the seed into the initial dataset.
    Expand {
        #[arg(long)]
        initial_size: Option<usize>,
    },
    /// Distill the principle pool from the initial dataset.
    Principles {
        /// Reflect on the seed instead of the initial dataset.
        #[arg(long)]
        wo_initial: bool,
        /// Use low-level principles directly, without clustering.
        #[arg(long)]
        wo_cluster: bool,
        /// Number of sampled subsets (T).
        #[arg(long)]
        subsets: Option<usize>,
        #[arg(long)]
        subset_size: Option<usize>,
    },
    /// Generate the final dataset and the usage report.
    Generate {
        /// Pool file; defaults to pool.json in the run directory.
        #[arg(long)]
        pool: Option<PathBuf>,
        /// Target number of instances.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        tasks_per_request: Option<usize>,
        #[arg(long)]
        dedup_threshold: Option<f64>,
        #[arg(long)]
        max_requests: Option<usize>,
    },
    /// Run an ablation under ablations/<mode>/.
    Ablate {
        #[arg(long, value_enum)]
        mode: Mode,
        /// Principle to remove (leave-one-out); all when omitted.
        #[arg(long)]
        index: Option<usize>,
        /// Dataset sizes for the size sweep.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        /// Target size of each ablation dataset.
        #[arg(long)]
        size: Option<usize>,
    },
    /// Re-render the report from the run directory.
    Report,
    /// Print the effective configuration as JSON.
    ShowConfig,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Mode {
    WoInitial,
    WoSample,
    WoCluster,
    LeaveOneOut,
    SizeSweep,
}

fn effective_config(g: &Global) -> Result<PipelineConfig, CmdError> {
    let mut c = match &g.config {
        Some(path) => PipelineConfig::load(path).map_err(CmdError::Config)?,
        None => PipelineConfig::default(),
    };
    if g.output_dir.is_some() {
        c.paths.output_dir = g.output_dir.clone();
    }
    if g.seed_file.is_some() {
        c.paths.seed_file = g.seed_file.clone();
    }
    if g.knowledge_dir.is_some() {
        c.paths.knowledge_dir = g.knowledge_dir.clone();
    }
    if let Some(s) = g.rng_seed {
        c.rng_seed = s;
    }
    if let Some(p) = g.parallelism {
        c.parallelism = p;
    }
    let e = &mut c.endpoints;
    for (value, slot) in [
        (&g.reflector_url, &mut e.reflector.base_url),
        (&g.reflector_model, &mut e.reflector.model_name),
        (&g.generator_url, &mut e.generator.base_url),
        (&g.generator_model, &mut e.generator.model_name),
        (&g.embedder_url, &mut e.embedder.base_url),
        (&g.embedder_model, &mut e.embedder.model_name),
    ] {
        if let Some(v) = value {
            *slot = v.clone();
        }
    }
    Ok(c)
}

fn apply_command_overrides(c: &mut PipelineConfig, cmd: &Command) {
    match cmd {
        Command::Expand { initial_size: Some(n) } => c.target_initial_size = *n,
        Command::Principles { subsets, subset_size, .. } => {
            if let Some(t) = subsets {
                c.principles.subsets = *t;
            }
            if let Some(s) = subset_size {
                c.principles.subset_size = *s;
            }
        }
        Command::Generate { size, tasks_per_request, dedup_threshold, max_requests, .. } => {
            if let Some(n) = size {
                c.target_dataset_size = *n;
            }
            if let Some(n) = tasks_per_request {
                c.generation.tasks_per_request = *n;
            }
            if let Some(t) = dedup_threshold {
                c.generation.dedup_threshold = *t;
            }
            if max_requests.is_some() {
                c.generation.max_requests = *max_requests;
            }
        }
        Command::Ablate { size: Some(n), .. } => c.target_dataset_size = *n,
        _ => {}
    }
}

fn backend(g: &Global) -> Result<Backend, CmdError> {
    match &g.mock {
        None => Ok(Backend::Http),
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| {
                CmdError::Input(format!("cannot read mock script {}: {e}", path.display()))
            })?;
            MockScript::from_json(&bytes)
                .map(Backend::Mock)
                .map_err(|e| CmdError::Config(format!("{}: {e}", path.display())))
        }
    }
}

fn run(cli: Cli) -> Result<(), CmdError> {
    let mut config = effective_config(&cli.global)?;
    apply_command_overrides(&mut config, &cli.command);
    config.validate().map_err(CmdError::Config)?;
    match &cli.command {
        Command::ShowConfig => {
            print!("{}", String::from_utf8_lossy(&config.to_json()));
            return Ok(());
        }
        Command::Report => {
            let dir = config
                .paths
                .output_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("psi_run"));
            print!("{}", report_from_dir(&dir, &config)?);
            return Ok(());
        }
        _ => {}
    }
    let mut runner = Runner::new(config, backend(&cli.global)?, cli.global.force)?;
    match cli.command {
        Command::Expand { .. } => {
            let out = runner.expand()?;
            println!("{}", out.display());
        }
        Command::Principles { wo_initial, wo_cluster, .. } => {
            let out = runner.principles(wo_initial, wo_cluster)?;
            println!("{}", out.display());
        }
        Command::Generate { pool, .. } => {
            let out = runner.generate(pool.as_deref())?;
            println!("{}", out.display());
        }
        Command::Ablate { mode, index, sizes, .. } => {
            let spec = match mode {
                Mode::WoInitial => AblationSpec::WoInitial,
                Mode::WoSample => AblationSpec::WoSample,
                Mode::WoCluster => AblationSpec::WoCluster,
                Mode::LeaveOneOut => AblationSpec::LeaveOneOut { index },
                Mode::SizeSweep => AblationSpec::SizeSweep { sizes },
            };
            for out in runner.ablate(&spec)? {
                println!("{}", out.display());
            }
        }
        Command::Report | Command::ShowConfig => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "psi_core=info",
        1 => "psi_core=debug",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level)))
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("psi: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
