use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fissile_uq::config::{load_config, ExperimentConfig};
use fissile_uq::Error;

mod commands;
mod manifest;

#[derive(Parser, Debug)]
#[command(name = "fissile-uq", version, about = "Fissile-material identification from neutron and gamma noise")]
struct Cli {
    /// Experiment configuration (JSON); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one measurement at the configured truth and write its time list.
    Simulate {
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Feynman curves and asymptotic moments of a time list.
    Moments {
        /// Defaults to `timelist.tsv` in the output directory.
        #[arg(long)]
        timelist: Option<PathBuf>,
    },
    /// Generate the training dataset.
    Dataset {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Split the dataset and train surrogates.
    Train {
        #[arg(long, value_enum, default_value_t = Model::All)]
        model: Model,
    },
    /// Validation metrics and coverage curves on the held-out rows.
    Validate {
        #[arg(long, value_enum, default_value_t = Model::All)]
        model: Model,
    },
    /// Sample a posterior for the synthetic observations.
    Invert {
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// Active-learning loop on the joint surrogate.
    Csq {
        #[arg(long)]
        n_new: Option<usize>,
    },
    /// Sobol indices of the joint surrogate mean and the matching weights.
    Sobol,
    /// 2-D marginal density grids from persisted posterior samples.
    Report {
        #[arg(long, default_value_t = 40)]
        bins: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Model {
    Nsm,
    Gsm,
    Jsm,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Neutron,
    Sequential,
    Joint,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Neutron => "neutron",
            Mode::Sequential => "sequential",
            Mode::Joint => "joint",
        }
    }
}

fn configure(cli: &Cli) -> fissile_uq::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate { .. } => "simulate",
        Command::Moments { .. } => "moments",
        Command::Dataset { .. } => "dataset",
        Command::Train { .. } => "train",
        Command::Validate { .. } => "validate",
        Command::Invert { .. } => "invert",
        Command::Csq { .. } => "csq",
        Command::Sobol => "sobol",
        Command::Report { .. } => "report",
    }
}

fn run(cli: &Cli, mut cfg: ExperimentConfig) -> fissile_uq::Result<()> {
    let out: &Path = &cfg.output_dir.clone();
    std::fs::create_dir_all(out)?;
    let ctx = commands::Context::new(&cfg)?;
    let mut failure = None;
    let record = match &cli.command {
        Command::Simulate { duration } => ctx.simulate(duration.unwrap_or(cfg.observations.duration))?,
        Command::Moments { timelist } => ctx.moments(&timelist.clone().unwrap_or_else(|| out.join("timelist.tsv")))?,
        Command::Dataset { n } => {
            if let Some(n) = n {
                cfg.dataset.n = *n;
            }
            commands::Context::new(&cfg)?.dataset()?
        }
        Command::Train { model } => ctx.train(*model)?,
        Command::Validate { model } => ctx.validate(*model)?,
        Command::Invert { mode } => ctx.invert(*mode)?,
        Command::Csq { n_new } => {
            if let Some(n) = n_new {
                cfg.csq.n_new = *n;
            }
            let (record, err) = commands::Context::new(&cfg)?.csq()?;
            failure = err;
            record
        }
        Command::Sobol => ctx.sobol()?,
        Command::Report { bins } => ctx.report(*bins)?,
    };
    let key = match &cli.command {
        Command::Invert { mode } => format!("invert-{}", mode.name()),
        c => subcommand_name(c).to_string(),
    };
    manifest::update(out, &cfg, &key, record)?;
    failure.map_or(Ok(()), Err)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cfg = match configure(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match run(&cli, cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let e = match e {
                Error::Stage { .. } => e,
                other => other.in_stage(subcommand_name(&cli.command)),
            };
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
