use std::path::PathBuf;
use std::process::ExitCode;

use cftle::commands::{self, Context};
use cftle::manifest::config_hash;
use cftle::{CliError, RunConfig};
use clap::{Parser, Subcommand};

/// Controlled finite-time Lyapunov exponent experiments.
#[derive(Parser)]
#[command(name = "cftle", version)]
struct Cli {
    /// JSON run configuration (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads, 0 = one per core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Refuse to run if anything nondeterministic would be used.
    #[arg(long, global = true)]
    seedless: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// FTLE of the background flow.
    PassiveFtle,
    /// Precompute a receding-horizon policy grid.
    GenPolicy {
        /// Where to write the policy (default `<out>/policy.pol`).
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// FTLE of background flow plus policy.
    Cftle {
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Cost-landscape fields and optimality checks.
    Diagnostics {
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// One controlled FTLE field per sweep value.
    Sweep,
    /// Render a field file as a PGM image.
    Render {
        /// Field file to render.
        #[arg(long)]
        input: PathBuf,
        /// 0/1 field whose nonzero nodes are drawn at full intensity.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Advect particle patches.
    Patches {
        #[arg(long)]
        policy: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let loaded = match &cli.config {
        Some(p) => RunConfig::load(p).map(|(c, _)| c),
        None => Ok(RunConfig::default()),
    };
    let cfg = match loaded {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let out_dir = cli.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let mut ctx = match Context::new(out_dir, cli.threads, config_hash(&cfg)) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    ctx.seedless = cli.seedless;
    let cfg_path = cli.config.as_deref();
    let code = match cli.command {
        Command::PassiveFtle => commands::run("passive-ftle", &cfg, cfg_path, &ctx, commands::passive_ftle),
        Command::GenPolicy { policy } => {
            ctx.policy_path = policy;
            commands::run("gen-policy", &cfg, cfg_path, &ctx, commands::gen_policy)
        }
        Command::Cftle { policy } => {
            ctx.policy_path = policy;
            commands::run("cftle", &cfg, cfg_path, &ctx, commands::cftle)
        }
        Command::Diagnostics { policy } => {
            ctx.policy_path = policy;
            commands::run("diagnostics", &cfg, cfg_path, &ctx, commands::diagnostics)
        }
        Command::Sweep => commands::run("sweep", &cfg, cfg_path, &ctx, commands::sweep),
        Command::Render { input, mask } => {
            commands::run("render", &cfg, cfg_path, &ctx, |c, x| commands::render(c, x, &input, mask.as_deref()))
        }
        Command::Patches { policy } => {
            ctx.policy_path = policy;
            commands::run("patches", &cfg, cfg_path, &ctx, commands::patches)
        }
    };
    ExitCode::from(code as u8)
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}
