use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use fedrewind::experiment::{self, ConfigOverrides};
use serde::de::DeserializeOwned;

/// Run a federated learning experiment (or an alpha sweep) and write metrics.csv and run.json.
#[derive(Debug, Parser)]
#[command(name = "fedrewind", version)]
struct Cli {
    /// JSON config file; a previous run.json also works.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Local epochs per round (E).
    #[arg(long)]
    epochs: Option<usize>,
    /// Share of each round's epochs spent on rewind, in [0, 0.5].
    #[arg(long)]
    lambda: Option<f64>,
    /// Dirichlet concentration of the non-IID split.
    #[arg(long)]
    alpha: Option<f64>,
    /// cyclic, random or star.
    #[arg(long, value_parser = enum_arg::<fedrewind::federation::TopologyKind>)]
    topology: Option<fedrewind::federation::TopologyKind>,
    /// none, source or random_peer.
    #[arg(long, value_parser = enum_arg::<fedrewind::federation::RewindMode>)]
    rewind: Option<fedrewind::federation::RewindMode>,
    /// ring or random.
    #[arg(long, value_parser = enum_arg::<fedrewind::federation::CentralizedPeer>)]
    centralized_peer: Option<fedrewind::federation::CentralizedPeer>,
    /// federated, standalone or joint.
    #[arg(long, value_parser = enum_arg::<experiment::Scheme>)]
    scheme: Option<experiment::Scheme>,
    /// mnist or blobs.
    #[arg(long, value_parser = enum_arg::<experiment::DatasetKind>)]
    dataset: Option<experiment::DatasetKind>,
    /// Directory with the MNIST IDX files (falls back to $FEDREWIND_MNIST_DIR).
    #[arg(long)]
    mnist_dir: Option<String>,
    /// Keep only the first N samples.
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    eval_interval: Option<usize>,
    /// Enable a class-incremental task stream with this many tasks.
    #[arg(long)]
    tasks: Option<usize>,
    #[arg(long)]
    rounds_per_task: Option<usize>,
    #[arg(long)]
    max_offset: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Comma-separated alphas; runs each with rewind on and off and writes sweep.csv.
    #[arg(long, value_delimiter = ',')]
    sweep_alpha: Option<Vec<f64>>,
}

/// Parses the snake_case names the config file uses; dashes are accepted too.
fn enum_arg<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
        .map_err(|e| e.to_string())
}

impl Cli {
    fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            seed: self.seed,
            nodes: self.nodes,
            rounds: self.rounds,
            epochs_per_round: self.epochs,
            lambda: self.lambda,
            alpha_dir: self.alpha,
            topology: self.topology,
            rewind_mode: self.rewind,
            centralized_peer: self.centralized_peer,
            scheme: self.scheme,
            dataset: self.dataset,
            mnist_dir: self.mnist_dir.clone(),
            subset: self.subset,
            hidden_dim: self.hidden,
            learning_rate: self.lr,
            batch_size: self.batch_size,
            test_fraction: self.test_fraction,
            eval_interval: self.eval_interval,
            num_tasks: self.tasks,
            rounds_per_task: self.rounds_per_task,
            max_offset: self.max_offset,
            output_dir: self.out.clone(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: &Cli) -> fedrewind::Result<()> {
    let cfg = experiment::parse_config(cli.config.as_deref(), &cli.overrides())?;
    if let Some(alphas) = &cli.sweep_alpha {
        let rows = experiment::sweep_alpha(&cfg, alphas, &[true, false])?;
        print!("{}", experiment::sweep_csv(&rows));
        return Ok(());
    }
    let record = experiment::run(&cfg)?;
    let f = &record.final_metrics;
    let ff = f.ff.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"));
    println!(
        "round {}: FA {:.4}  FF {ff}  PFA {:.4}",
        f.round, f.fa, f.pfa
    );
    if let Some(g) = f.global_acc {
        println!("server model accuracy {g:.4}");
    }
    println!("wrote {}/metrics.csv and run.json", cfg.output_dir);
    Ok(())
}
