use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flugap::design::Variant;
use flugap::evaluation::SplitScheme;
use flugap::pipeline::{error_record, run, DataPaths, RunConfig, Stage};
use flugap::Error;

#[derive(Parser)]
#[command(name = "flugap", version, about = "Multi-source influenza hospitalization forecasting and poverty-stratified evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Load and check the input tables.
    Validate,
    /// Generate a synthetic panel with ground truth.
    Synth,
    /// Fit full-data models for every group, variant and horizon.
    Fit,
    /// Score forecasts and write ORMSE grids and plot tables.
    Evaluate,
    /// Permutation test for the between-group ORMSE difference.
    Permute,
    /// Pairwise synchrony, randomization test and PCA.
    Synchrony,
    /// Zip-level burden regression.
    Burden,
    /// Summarize the result files already in the output directory.
    Report,
    /// Every stage in order.
    RunAll,
}

impl Command {
    fn stage(self) -> Stage {
        match self {
            Command::Validate => Stage::Validate,
            Command::Synth => Stage::Synth,
            Command::Fit => Stage::Fit,
            Command::Evaluate => Stage::Evaluate,
            Command::Permute => Stage::Permute,
            Command::Synchrony => Stage::Synchrony,
            Command::Burden => Stage::Burden,
            Command::Report => Stage::Report,
            Command::RunAll => Stage::All,
        }
    }
}

#[derive(Args)]
struct Opts {
    /// JSON run configuration.
    #[arg(long, global = true, env = "FLUGAP_CONFIG")]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true, env = "FLUGAP_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "FLUGAP_OUT")]
    out: Option<PathBuf>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, env = "FLUGAP_JOBS")]
    jobs: Option<usize>,
    /// Source combination(s), e.g. `ili` or `ili+ed+trend`; comma separated.
    #[arg(long, global = true, env = "FLUGAP_VARIANT", value_delimiter = ',')]
    variant: Vec<Variant>,
    /// Forecast horizon(s) in weeks; comma separated.
    #[arg(long, global = true, env = "FLUGAP_HORIZON", value_delimiter = ',')]
    horizon: Vec<usize>,
    /// Split scheme(s): `loo`, `holdout:0.6`, ...; comma separated.
    #[arg(long, global = true, env = "FLUGAP_SCHEME", value_delimiter = ',')]
    scheme: Vec<SplitScheme>,
    /// Surveillance series table (with --hosp and --meta, replaces the config's data section).
    #[arg(long, global = true, env = "FLUGAP_SERIES", requires_all = ["hosp", "meta"])]
    series: Option<PathBuf>,
    #[arg(long, global = true, env = "FLUGAP_HOSP", requires_all = ["series", "meta"])]
    hosp: Option<PathBuf>,
    #[arg(long, global = true, env = "FLUGAP_META", requires_all = ["series", "hosp"])]
    meta: Option<PathBuf>,
}

fn build_config(o: &Opts) -> Result<RunConfig, Error> {
    let mut cfg = match &o.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if o.seed.is_some() {
        cfg.seed = o.seed;
    }
    if o.out.is_some() {
        cfg.output_dir = o.out.clone();
    }
    if o.jobs.is_some() {
        cfg.jobs = o.jobs;
    }
    if !o.variant.is_empty() {
        cfg.variants = o.variant.clone();
        cfg.permutation.variant = Some(o.variant[0].clone());
    }
    if !o.horizon.is_empty() {
        cfg.horizons = o.horizon.clone();
        cfg.permutation.horizon = o.horizon[0];
    }
    if !o.scheme.is_empty() {
        cfg.schemes = o.scheme.clone();
        cfg.permutation.scheme = o.scheme[0];
    }
    if let (Some(series), Some(hosp), Some(meta)) = (&o.series, &o.hosp, &o.meta) {
        cfg.data = Some(DataPaths {
            series: series.clone(),
            hosp: hosp.clone(),
            meta: meta.clone(),
        });
        cfg.synth = None;
    }
    Ok(cfg)
}

fn fail(e: &Error, stage: Stage) -> ExitCode {
    let rec = error_record(e, Some(stage.as_str()));
    eprintln!("{}", serde_json::to_string(&rec).expect("error record serializes"));
    if e.is_validation() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FLUGAP_LOG", "warn")).init();
    let cli = Cli::parse();
    let stage = cli.command.stage();
    let cfg = match build_config(&cli.opts) {
        Ok(c) => c,
        Err(e) => return fail(&e, stage),
    };
    match run(&cfg, stage) {
        Ok(summary) => {
            let m = &summary.manifest;
            println!(
                "{} {}: {} files in {} (config {})",
                m.stage,
                m.status,
                m.files.len(),
                summary.output_dir.display(),
                &m.config_hash[..12]
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e, stage),
    }
}
