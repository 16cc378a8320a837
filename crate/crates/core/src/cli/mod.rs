//! The `routechoice` command line: configuration, dataset files and the
//! staged pipeline.

pub mod config;
pub mod io;
pub mod pipeline;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{Comparison, CvConfig, ElasticityConfig, ModelEntry, RunConfig, Seeds};
pub use pipeline::{gen_data, Artifact, DataSummary, Run, RunData};

use crate::error::{Error, Result};
use crate::eval::report::{comparison_table, curves_csv, parameter_text};
use crate::eval::ModelSpec;

#[derive(Debug, Parser)]
#[command(name = "routechoice", version, about = "Transit route choice models: logit estimation, constrained neural utilities, evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run config (TOML). Built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Dataset directory; defaults to `<run-dir>/data`.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic network and simulated journeys.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to `<output_dir>/data`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Overrides `seeds.data`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `data.n_observations`.
        #[arg(long)]
        n_observations: Option<usize>,
    },
    /// Cross-validate a logit model (MNL or PSL).
    FitDcm {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        model: String,
    },
    /// Cross-validate a neural model, saving one checkpoint per fold.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        model: String,
    },
    /// Recompute a model's report from its saved fold models.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        model: String,
    },
    /// Point-elasticity curves of fitted models.
    Elasticity {
        #[command(flatten)]
        run: RunArgs,
        /// Repeatable; defaults to the config's elasticity models.
        #[arg(long)]
        model: Vec<String>,
    },
    /// Rebuild all reports and tables from saved models.
    Report {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Fit every configured model in order, then report.
    Pipeline {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print the default config.
    DefaultConfig,
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn open_run(args: &RunArgs) -> Result<Run> {
    let config = load_config(args.config.as_ref())?;
    Ok(Run::new(config, args.run_dir.clone(), args.data_dir.clone()))
}

fn fit_family(args: &RunArgs, id: &str, deep: bool) -> Result<()> {
    let run = open_run(args)?;
    let entry = run.config.model(id)?;
    if matches!(entry.spec, ModelSpec::Deep { .. }) != deep {
        let other = if deep { "fit-dcm" } else { "train" };
        return Err(Error::config(format!("`{id}` is fitted with `{other}`")));
    }
    let data = run.load_data()?;
    let report = run.fit(&data, id)?;
    print!("{}", comparison_table(std::slice::from_ref(&report)));
    if !deep {
        print!("{}", parameter_text(id, &report.parameter_table));
    }
    Ok(())
}

/// Execute a parsed command.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            config,
            out_dir,
            seed,
            n_observations,
        } => {
            let mut cfg = load_config(config.as_ref())?;
            if let Some(n) = n_observations {
                cfg.data.n_observations = n;
            }
            cfg.validate()?;
            let out = out_dir.unwrap_or_else(|| cfg.output_dir.join("data"));
            let summary = gen_data(&cfg, &out, seed.unwrap_or(cfg.seeds.data))?;
            println!("{summary}");
            Ok(())
        }
        Command::FitDcm { run, model } => fit_family(&run, &model, false),
        Command::Train { run, model } => fit_family(&run, &model, true),
        Command::Evaluate { run, model } => {
            let run = open_run(&run)?;
            let data = run.load_data()?;
            let report = run.evaluate(&data, &model)?;
            io::write_text(&run.report_path(&model), &crate::eval::report_json(&report)?)?;
            print!("{}", comparison_table(&[report]));
            Ok(())
        }
        Command::Elasticity { run, model } => {
            let run = open_run(&run)?;
            let ids = if model.is_empty() {
                run.config.elasticity_models().iter().map(|m| m.id.clone()).collect()
            } else {
                for id in &model {
                    run.config.model(id)?;
                }
                model
            };
            let data = run.load_data()?;
            let curves = run.elasticities(&data, &ids)?;
            let path = run.tables_dir().join("elasticity.csv");
            io::write_text(&path, &curves_csv(&curves)?)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Report { run } => {
            let run = open_run(&run)?;
            let data = run.load_data()?;
            for p in run.report(&data)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Pipeline { run } => {
            let run = open_run(&run)?;
            let written = run.pipeline(|line| eprintln!("{line}"))?;
            print!("{}", std::fs::read_to_string(run.tables_dir().join("comparison.txt"))?);
            eprintln!("{} files written under {}", written.len(), run.run_dir.display());
            Ok(())
        }
        Command::DefaultConfig => {
            print!("{}", RunConfig::default().to_toml()?);
            Ok(())
        }
    }
}

/// Parse arguments, run, and map the outcome to a process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
