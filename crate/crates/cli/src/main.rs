use std::path::PathBuf;
use std::process::ExitCode;

use bifent_cli::config::RegionPreset;
use bifent_cli::{load_config, run, RunError, Stage};
use clap::Parser;

/// Bifurcation-entropy experiments for critically marked polynomial families.
#[derive(Debug, Parser)]
#[command(name = "bifent", version)]
struct Cli {
    /// Stage to run.
    #[arg(value_enum, required_unless_present = "dump_config")]
    stage: Option<Stage>,
    /// JSON experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the configuration).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Seed (overrides the configuration).
    #[arg(long)]
    seed: Option<u64>,
    /// Entropy region preset (overrides the configuration).
    #[arg(long, value_enum)]
    region: Option<RegionPreset>,
    /// Print the effective configuration as JSON and exit.
    #[arg(long)]
    dump_config: bool,
    /// Suppress progress messages.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}

fn execute(cli: &Cli) -> Result<(), RunError> {
    if let Some(k) = cli.workers {
        if k == 0 {
            return Err(RunError::Config("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| RunError::Config(e.to_string()))?;
    }
    let mut config = load_config(cli.config.as_deref())?;
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(preset) = cli.region {
        config.apply_preset(preset);
    }
    let Some(stage) = cli.stage.filter(|_| !cli.dump_config) else {
        let json =
            serde_json::to_string_pretty(&config).map_err(|e| RunError::Config(e.to_string()))?;
        println!("{json}");
        return Ok(());
    };
    let summary = run(&config, stage, cli.quiet)?;
    if !cli.quiet {
        for w in &summary.warnings {
            eprintln!("bifent: warning: {w}");
        }
        eprintln!(
            "bifent: wrote {} files to {}",
            summary.outputs.len(),
            config.output_dir.display()
        );
    }
    Ok(())
}
