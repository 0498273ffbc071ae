use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use conformal_load_core::experiment::{
    plot_data_from_dir, run_experiment, write_outputs, ExperimentConfig,
};
use conformal_load_core::tntp::{load_dataset, FilterOptions};
use conformal_load_core::Result;

#[derive(Parser)]
#[command(
    name = "conformal-load",
    version,
    about = "Conformal load prediction on road networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train models, calibrate every method and write result tables.
    Run(Box<RunArgs>),
    /// Parse a TNTP dataset directory and print graph statistics.
    Ingest {
        #[arg(long)]
        dataset_dir: PathBuf,
        /// Keep zone-connector links.
        #[arg(long)]
        keep_zone_connectors: bool,
    },
    /// Regenerate edges_*.csv from the artifacts of a finished run.
    PlotData {
        #[arg(long)]
        run_dir: PathBuf,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// key = value configuration file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// TNTP directory, or `synthetic`.
    #[arg(long)]
    dataset_dir: Option<String>,
    /// Comma-separated: cp, cp-erc, cqr, cqr-erc, qr.
    #[arg(long)]
    method: Option<String>,
    /// Comma-separated: gae, digae, lgnn.
    #[arg(long)]
    model: Option<String>,
    /// Comma-separated: gcnconv, graphconv.
    #[arg(long)]
    layer: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// zero, mean or bootstrap.
    #[arg(long)]
    fill_mode: Option<String>,
    #[arg(long)]
    runs: Option<String>,
    #[arg(long)]
    resplits: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
    #[arg(long)]
    retrain_per_resplit: bool,
    /// Extra overrides, `key=value`, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl RunArgs {
    fn into_config(self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let flags = [
            ("dataset_dir", self.dataset_dir),
            ("methods", self.method),
            ("models", self.model),
            ("layers", self.layer),
            ("alpha", self.alpha),
            ("fill_mode", self.fill_mode),
            ("runs", self.runs),
            ("resplits", self.resplits),
            ("seed", self.seed),
            ("out_dir", self.out_dir),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                config.set(key, &v)?;
            }
        }
        if self.retrain_per_resplit {
            config.retrain_per_resplit = true;
        }
        for kv in &self.sets {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                conformal_load_core::Error::Config(format!("--set expects key=value, got `{kv}`"))
            })?;
            config.set(k.trim(), v.trim())?;
        }
        config.validate()?;
        Ok(config)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let config = args.into_config()?;
            log::info!("config hash {}", config.hash());
            let output = run_experiment(&config)?;
            write_outputs(&output, &config.out_dir)?;
            print!(
                "{}",
                std::fs::read_to_string(config.out_dir.join("results.md")).unwrap_or_default()
            );
            println!("results written to {}", config.out_dir.display());
        }
        Command::Ingest {
            dataset_dir,
            keep_zone_connectors,
        } => {
            let dataset = load_dataset(&dataset_dir)?;
            let raw = dataset.graph(&FilterOptions::none())?;
            let filter = FilterOptions {
                drop_zone_connectors: !keep_zone_connectors,
                ..FilterOptions::road_network()
            };
            let graph = dataset.graph(&filter)?;
            println!("dataset        {}", dataset.name);
            for f in &dataset.files {
                println!("file           {}", f.display());
            }
            println!("header nodes   {:?}", dataset.net.num_nodes());
            println!("header links   {:?}", dataset.net.num_links());
            println!(
                "raw graph      {} nodes, {} edges",
                raw.num_nodes(),
                raw.num_edges()
            );
            println!(
                "road network   {} nodes, {} edges",
                graph.num_nodes(),
                graph.num_edges()
            );
            let w = graph.weights();
            let mean = w.iter().sum::<f64>() / w.len().max(1) as f64;
            let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            println!("load mean/max  {mean:.2} / {max:.2}");
        }
        Command::PlotData { run_dir } => {
            for name in plot_data_from_dir(&run_dir)? {
                println!("{}", run_dir.join(name).display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
