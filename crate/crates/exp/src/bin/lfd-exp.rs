use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lfd_exp::{experiments, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(name = "lfd-exp", version, about = "Run learning-from-demonstration experiments and write CSV results")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// BBB vs GP imitation quality as the window grows.
    BbbVsGp(Common),
    /// Accumulated uncertainty vs episodic reward across a context family.
    UncertaintyReward(Common),
    /// Active vs naive learner on a [similar, similar, different] context order.
    SanityOrder(Common),
    /// Active, naive and random learners on shuffled context orders.
    DataEfficiency(Common),
    /// Active learner over a grid of threshold scales and smoothing windows.
    CmSweep(Common),
}

#[derive(Args)]
struct Common {
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: $LFD_EXP_OUT_DIR, else ./results]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    /// Override one config key; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn build_config(kind: ExperimentKind, args: &Common) -> lfd_exp::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::defaults(kind);
    if let Some(path) = &args.config {
        cfg.load_file(path)?;
    }
    if let Some(seeds) = &args.seeds {
        cfg.set("seeds", seeds)?;
    }
    for pair in &args.overrides {
        cfg.apply_pair(pair)?;
    }
    cfg.experiment = kind;
    if let Some(dir) = &args.out_dir {
        cfg.out_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(kind: ExperimentKind, args: &Common) -> lfd_exp::Result<()> {
    let cfg = build_config(kind, args)?;
    for table in experiments::run(&cfg)? {
        let path = table.save(&cfg.out_dir, &cfg)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::BbbVsGp(a) => (ExperimentKind::BbbVsGp, a),
        Command::UncertaintyReward(a) => (ExperimentKind::UncertaintyReward, a),
        Command::SanityOrder(a) => (ExperimentKind::SanityOrder, a),
        Command::DataEfficiency(a) => (ExperimentKind::DataEfficiency, a),
        Command::CmSweep(a) => (ExperimentKind::CmSweep, a),
    };
    match run(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lfd-exp: {e}");
            ExitCode::FAILURE
        }
    }
}
