//! Experiment configuration, orchestration and result files.
//!
//! Outputs per run directory:
//! - `metrics.csv`: `round,FA,FF,PFA,acc_i_j...` at every evaluation point
//! - `run.json`: config snapshot, final metrics, history and an environment stamp
//!
//! `sweep_alpha` additionally writes `sweep.csv` (`alpha,rewind,final_FA`).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{self, Dataset, PartitionSpec, Shard};
use crate::federation::{
    build_routing, joint_train_config, make_phase_plan, run_round_centralized,
    run_round_decentralized, run_round_standalone, CentralizedPeer, FederationState, NodeData,
    PhasePlan, RewindMode, RoundConfig, RoundTrace, TopologyKind,
};
use crate::metrics::{cross_accuracy, row_accuracy, MetricsRecord};
use crate::nn::{accuracy, init_model, train, ArchSpec, ModelParams, TrainConfig};
use crate::seed::{self, Stream};
use crate::task_stream::{active_view, make_schedules, TaskSchedule};
use crate::{Error, Result};

pub const MNIST_DIR_ENV: &str = "FEDREWIND_MNIST_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    Blobs,
}

/// Which training regime a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Peer-to-peer or server federation, per `topology`.
    Federated,
    /// Every node trains alone; lower-bound baseline.
    Standalone,
    /// One model on all data; upper-bound baseline.
    Joint,
}

/// Flat experiment configuration. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub mnist_dir: Option<String>,
    /// Keep only the first `subset` samples of the dataset.
    pub subset: Option<usize>,
    pub blob_classes: usize,
    pub blob_dims: usize,
    pub blob_samples_per_class: usize,
    pub blob_spread: f64,
    pub hidden_dim: usize,
    pub scheme: Scheme,
    pub nodes: usize,
    pub rounds: usize,
    pub epochs_per_round: usize,
    pub lambda: f64,
    pub alpha_dir: f64,
    pub topology: TopologyKind,
    pub rewind_mode: RewindMode,
    pub centralized_peer: CentralizedPeer,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub test_fraction: f64,
    pub eval_interval: usize,
    pub seed: u64,
    /// Enables the class-incremental task stream when set.
    pub num_tasks: Option<usize>,
    pub rounds_per_task: usize,
    pub max_offset: usize,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Mnist,
            mnist_dir: None,
            subset: None,
            blob_classes: 10,
            blob_dims: 16,
            blob_samples_per_class: 60,
            blob_spread: 0.2,
            hidden_dim: 64,
            scheme: Scheme::Federated,
            nodes: 10,
            rounds: 15,
            epochs_per_round: 5,
            lambda: 0.2,
            alpha_dir: 0.25,
            topology: TopologyKind::Cyclic,
            rewind_mode: RewindMode::Source,
            centralized_peer: CentralizedPeer::Ring,
            learning_rate: 0.001,
            batch_size: 32,
            test_fraction: 0.2,
            eval_interval: 5,
            seed: 0,
            num_tasks: None,
            rounds_per_task: 5,
            max_offset: 0,
            output_dir: "runs/default".into(),
        }
    }
}

/// Command-line style overrides; `None` leaves the file/default value alone.
#[derive(Debug, Clone, Default)]
pub struct ConfigOverrides {
    pub seed: Option<u64>,
    pub nodes: Option<usize>,
    pub rounds: Option<usize>,
    pub epochs_per_round: Option<usize>,
    pub lambda: Option<f64>,
    pub alpha_dir: Option<f64>,
    pub topology: Option<TopologyKind>,
    pub rewind_mode: Option<RewindMode>,
    pub centralized_peer: Option<CentralizedPeer>,
    pub scheme: Option<Scheme>,
    pub dataset: Option<DatasetKind>,
    pub mnist_dir: Option<String>,
    pub subset: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub test_fraction: Option<f64>,
    pub eval_interval: Option<usize>,
    pub num_tasks: Option<usize>,
    pub rounds_per_task: Option<usize>,
    pub max_offset: Option<usize>,
    pub output_dir: Option<String>,
}

macro_rules! apply_overrides {
    ($cfg:expr, $ov:expr, [$($field:ident),*], [$($opt_field:ident),*]) => {
        $(if let Some(v) = $ov.$field.clone() { $cfg.$field = v; })*
        $(if let Some(v) = $ov.$opt_field.clone() { $cfg.$opt_field = Some(v); })*
    };
}

impl ExperimentConfig {
    /// Parses a flat JSON config. A `run.json` (an object with a nested `config`
    /// object) is also accepted and yields the config it recorded.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let value = match value {
            Value::Object(mut map) if map.get("config").is_some_and(Value::is_object) => {
                map.remove("config").unwrap_or(Value::Null)
            }
            other => other,
        };
        Ok(serde_json::from_value(value)?)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn apply(&mut self, ov: &ConfigOverrides) {
        apply_overrides!(
            self,
            ov,
            [
                seed,
                nodes,
                rounds,
                epochs_per_round,
                lambda,
                alpha_dir,
                topology,
                rewind_mode,
                centralized_peer,
                scheme,
                dataset,
                hidden_dim,
                learning_rate,
                batch_size,
                test_fraction,
                eval_interval,
                rounds_per_task,
                max_offset,
                output_dir
            ],
            [mnist_dir, subset, num_tasks]
        );
    }

    /// The phase plan rounds actually use: `(E, 0, 0)` when rewind is off.
    pub fn phase_plan(&self) -> Result<PhasePlan> {
        let plan = make_phase_plan(self.epochs_per_round, self.lambda)?;
        Ok(if self.rewind_mode == RewindMode::None {
            PhasePlan {
                head: self.epochs_per_round,
                rewind: 0,
                tail: 0,
            }
        } else {
            plan
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.nodes == 0 {
            return fail("nodes must be >= 1".into());
        }
        if self.scheme == Scheme::Federated && self.topology != TopologyKind::Star && self.nodes < 2
        {
            return fail(format!("{:?} topology needs nodes >= 2", self.topology));
        }
        if !(0.0..=0.5).contains(&self.lambda) {
            return fail(format!(
                "lambda must be in [0, 0.5] so the head budget (1 - 2*lambda)*E is non-negative, got {}",
                self.lambda
            ));
        }
        if let Err(e) = make_phase_plan(self.epochs_per_round, self.lambda) {
            return fail(format!("phase minimums violated: {e}"));
        }
        if self.scheme == Scheme::Federated && self.rewind_mode != RewindMode::None {
            if self.lambda == 0.0 {
                return fail(format!(
                    "rewind_mode {:?} requires lambda > 0",
                    self.rewind_mode
                ));
            }
            if self.rewind_mode == RewindMode::RandomPeer && self.nodes < 2 {
                return fail("random_peer rewind needs nodes >= 2".into());
            }
        }
        if !(self.alpha_dir > 0.0 && self.alpha_dir.is_finite()) {
            return fail(format!(
                "alpha_dir must be positive, got {}",
                self.alpha_dir
            ));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return fail(format!(
                "test_fraction must be in (0, 1), got {}",
                self.test_fraction
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if self.eval_interval == 0 {
            return fail("eval_interval must be >= 1".into());
        }
        if self.subset == Some(0) {
            return fail("subset must be >= 1".into());
        }
        if self.dataset == DatasetKind::Blobs {
            if self.blob_classes < 2 || self.blob_dims == 0 || self.blob_samples_per_class == 0 {
                return fail(
                    "blobs need blob_classes >= 2, blob_dims >= 1, blob_samples_per_class >= 1"
                        .into(),
                );
            }
            if !(self.blob_spread >= 0.0 && self.blob_spread.is_finite()) {
                return fail(format!(
                    "blob_spread must be >= 0, got {}",
                    self.blob_spread
                ));
            }
        }
        if let Some(tasks) = self.num_tasks {
            let classes = self.num_classes();
            if tasks == 0 || !classes.is_multiple_of(tasks) {
                return fail(format!(
                    "num_tasks = {tasks} must divide the {classes} classes"
                ));
            }
            if self.rounds_per_task == 0 {
                return fail("rounds_per_task must be >= 1".into());
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        match self.dataset {
            DatasetKind::Mnist => data::MNIST_CLASSES,
            DatasetKind::Blobs => self.blob_classes,
        }
    }

    fn mnist_dir_resolved(&self) -> Result<PathBuf> {
        self.mnist_dir
            .clone()
            .or_else(|| std::env::var(MNIST_DIR_ENV).ok())
            .map(PathBuf::from)
            .ok_or_else(|| Error::Config(format!("MNIST needs --mnist-dir or {MNIST_DIR_ENV}")))
    }

    /// Fills in values taken from the environment so the snapshot is self-contained.
    pub fn resolved(&self) -> Result<Self> {
        let mut cfg = self.clone();
        if cfg.dataset == DatasetKind::Mnist {
            cfg.mnist_dir = Some(cfg.mnist_dir_resolved()?.to_string_lossy().into_owned());
        }
        Ok(cfg)
    }

    pub fn base_train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            shuffle_seed: self.seed,
        }
    }
}

/// Reads an optional config file, applies overrides, validates.
pub fn parse_config(file: Option<&Path>, overrides: &ConfigOverrides) -> Result<ExperimentConfig> {
    let mut cfg = match file {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(overrides);
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let ds = match cfg.dataset {
        DatasetKind::Mnist => data::load_mnist_dir(cfg.mnist_dir_resolved()?)?,
        DatasetKind::Blobs => data::make_blobs(
            cfg.blob_classes,
            cfg.blob_dims,
            cfg.blob_samples_per_class,
            cfg.blob_spread,
            cfg.seed,
        )?,
    };
    match cfg.subset {
        Some(cap) => ds.truncate(cap),
        None => Ok(ds),
    }
}

pub fn partition(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<Vec<Shard>> {
    data::dirichlet_partition(
        dataset,
        &PartitionSpec {
            num_nodes: cfg.nodes,
            alpha_dir: cfg.alpha_dir,
            test_fraction: cfg.test_fraction,
            seed: cfg.seed,
        },
    )
}

pub fn initial_model(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<ModelParams> {
    let arch = ArchSpec::new(dataset.input_dim(), cfg.hidden_dim, dataset.num_classes())?;
    init_model(arch, seed::derive(cfg.seed, Stream::Init, &[]))
}

/// Everything a run produced, in memory.
#[derive(Debug, Clone)]
pub struct RunHistory {
    pub records: Vec<MetricsRecord>,
    pub traces: Vec<RoundTrace>,
    pub final_models: Vec<ModelParams>,
    pub shards: Vec<Shard>,
}

impl RunHistory {
    pub fn final_metrics(&self) -> &MetricsRecord {
        self.records.last().expect("round 0 is always evaluated")
    }
}

fn is_eval_round(t: usize, total: usize, interval: usize) -> bool {
    t.is_multiple_of(interval) || t == total
}

fn evaluate(
    dataset: &Dataset,
    shards: &[Shard],
    state: &FederationState,
    joint: bool,
) -> Result<MetricsRecord> {
    let matrix = if joint {
        row_accuracy(dataset, &state.models[..1], shards, state.round)?
    } else {
        cross_accuracy(dataset, &state.models, shards, state.round)?
    };
    let mut record = MetricsRecord::from_matrix(matrix);
    if let Some(server) = &state.server_model {
        let accs = shards
            .iter()
            .map(|s| accuracy(server, &s.test_view(dataset)))
            .collect::<Result<Vec<f64>>>()?;
        record.global_acc = Some(accs.iter().sum::<f64>() / accs.len() as f64);
    }
    Ok(record)
}

/// Training rows per node for the 0-based round index `round`.
fn round_train_lists(
    dataset: &Dataset,
    shards: &[Shard],
    schedules: Option<&[TaskSchedule]>,
    round: usize,
) -> Vec<Vec<usize>> {
    match schedules {
        None => shards.iter().map(|s| s.train.clone()).collect(),
        Some(sched) => sched
            .iter()
            .zip(shards)
            .map(|(s, shard)| active_view(s, dataset, shard, round).train)
            .collect(),
    }
}

/// Runs the configured experiment against an already loaded dataset.
pub fn run_with_dataset(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<RunHistory> {
    cfg.validate()?;
    let shards = partition(cfg, dataset)?;
    let init = initial_model(cfg, dataset)?;
    let schedules = cfg
        .num_tasks
        .map(|k| {
            make_schedules(
                dataset.num_classes(),
                k,
                cfg.nodes,
                cfg.rounds_per_task,
                cfg.max_offset,
                cfg.seed,
            )
        })
        .transpose()?;

    let base = cfg.base_train_config();
    let epochs = cfg.epochs_per_round;
    let joint = cfg.scheme == Scheme::Joint;
    let topology = match cfg.scheme {
        Scheme::Federated => cfg.topology,
        _ => TopologyKind::Cyclic,
    };
    let mut state = FederationState::new(topology, init, if joint { 1 } else { cfg.nodes });
    let round_cfg = RoundConfig {
        phase: cfg.phase_plan()?,
        mode: cfg.rewind_mode,
        train: base,
        protocol_seed: cfg.seed,
    };

    let mut records = vec![evaluate(dataset, &shards, &state, joint)?];
    let mut traces = Vec::with_capacity(cfg.rounds);
    for t in 1..=cfg.rounds {
        let lists = round_train_lists(dataset, &shards, schedules.as_deref(), t - 1);
        if joint {
            let mut rows: Vec<usize> = lists.into_iter().flatten().collect();
            rows.sort_unstable();
            let model_cfg = joint_train_config(&base, epochs).advanced((t - 1) * epochs);
            let model = if rows.is_empty() {
                state.models[0].clone()
            } else {
                train(&state.models[0], &dataset.view(&rows), epochs, &model_cfg)?
            };
            state = FederationState {
                round: t,
                models: vec![model],
                server_model: None,
            };
        } else {
            let data =
                NodeData::from_index_lists(dataset, lists.iter().map(Vec::as_slice).collect());
            let outcome = match (cfg.scheme, topology) {
                (Scheme::Standalone, _) => run_round_standalone(&state, &data, epochs, &base)?,
                (_, TopologyKind::Star) => {
                    run_round_centralized(&state, &data, cfg.centralized_peer, &round_cfg)?
                }
                (_, kind) => {
                    let plan = build_routing(kind, cfg.nodes, t, cfg.seed)?
                        .expect("peer topologies always produce a plan");
                    run_round_decentralized(&state, &data, &plan, &round_cfg)?
                }
            };
            state = outcome.state;
            traces.push(outcome.trace);
        }
        if is_eval_round(t, cfg.rounds, cfg.eval_interval) {
            records.push(evaluate(dataset, &shards, &state, joint)?);
        }
    }

    Ok(RunHistory {
        records,
        traces,
        final_models: state.models,
        shards,
    })
}

/// Loads the configured dataset and runs.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunHistory> {
    cfg.validate()?;
    let dataset = load_dataset(cfg)?;
    run_with_dataset(cfg, &dataset)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// `metrics.csv` contents. Numbers use shortest round-trip formatting.
pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from("round,FA,FF,PFA");
    if let Some(first) = records.first() {
        for i in 0..first.matrix.rows {
            for j in 0..first.matrix.cols {
                let _ = write!(out, ",acc_{i}_{j}");
            }
        }
    }
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},{},{},{}", r.round, r.fa, fmt_opt(r.ff), r.pfa);
        for a in &r.matrix.acc {
            let _ = write!(out, ",{a}");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub round: usize,
    pub fa: f64,
    pub ff: Option<f64>,
    pub pfa: f64,
    pub global_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub version: String,
    pub os: String,
    pub arch: String,
    pub wall_time_secs: f64,
}

/// The persisted summary of a run (`run.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    #[serde(rename = "final")]
    pub final_metrics: FinalMetrics,
    pub history: Vec<MetricsRecord>,
    pub environment: Environment,
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Runs and writes `metrics.csv` and `run.json` into `cfg.output_dir`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let cfg = cfg.resolved()?;
    let dataset = load_dataset(&cfg)?;
    run_and_write(&cfg, &dataset)
}

fn run_and_write(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<RunRecord> {
    let started = Instant::now();
    let history = run_with_dataset(cfg, dataset)?;
    let wall_time_secs = started.elapsed().as_secs_f64();

    let dir = Path::new(&cfg.output_dir);
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join("metrics.csv"), &metrics_csv(&history.records))?;

    let last = history.final_metrics();
    let record = RunRecord {
        config: cfg.clone(),
        final_metrics: FinalMetrics {
            round: last.round,
            fa: last.fa,
            ff: last.ff,
            pfa: last.pfa,
            global_acc: last.global_acc,
        },
        history: history.records.clone(),
        environment: Environment {
            version: env!("CARGO_PKG_VERSION").to_string(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            wall_time_secs,
        },
    };
    let json = serde_json::to_string_pretty(&record).expect("run record serializes");
    write_atomic(&dir.join("run.json"), &json)?;
    Ok(record)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub rewind: bool,
    pub final_fa: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("alpha,rewind,final_FA\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{}",
            r.alpha,
            if r.rewind { "on" } else { "off" },
            r.final_fa
        );
    }
    out
}

/// One run per `(alpha, rewind)` pair sharing the base seed. Each point writes its
/// own run directory under `output_dir`; the summary goes to `output_dir/sweep.csv`.
pub fn sweep_alpha(
    cfg: &ExperimentConfig,
    alphas: &[f64],
    rewind: &[bool],
) -> Result<Vec<SweepRow>> {
    if alphas.is_empty() || rewind.is_empty() {
        return Err(Error::Config(
            "sweep needs at least one alpha and one rewind setting".into(),
        ));
    }
    let cfg = cfg.resolved()?;
    let on_mode = match cfg.rewind_mode {
        RewindMode::None => RewindMode::Source,
        mode => mode,
    };
    let points: Vec<(f64, bool)> = alphas
        .iter()
        .flat_map(|&a| rewind.iter().map(move |&r| (a, r)))
        .collect();
    let mut point_cfgs = Vec::with_capacity(points.len());
    for &(alpha, on) in &points {
        let mut pc = cfg.clone();
        pc.alpha_dir = alpha;
        pc.rewind_mode = if on { on_mode } else { RewindMode::None };
        pc.output_dir = Path::new(&cfg.output_dir)
            .join(format!(
                "alpha-{alpha}-rewind-{}",
                if on { "on" } else { "off" }
            ))
            .to_string_lossy()
            .into_owned();
        pc.validate()?;
        point_cfgs.push(pc);
    }
    let dataset = load_dataset(&cfg)?;
    let rows = point_cfgs
        .par_iter()
        .zip(&points)
        .map(|(pc, &(alpha, on))| {
            run_and_write(pc, &dataset).map(|rec| SweepRow {
                alpha,
                rewind: on,
                final_fa: rec.final_metrics.fa,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dir = Path::new(&cfg.output_dir);
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join("sweep.csv"), &sweep_csv(&rows))?;
    Ok(rows)
}

/// Rows expected in `metrics.csv` for `rounds` rounds evaluated every `interval`.
pub fn expected_metric_rows(rounds: usize, interval: usize) -> usize {
    rounds / interval + usize::from(!rounds.is_multiple_of(interval)) + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn long_run_setting_accepted() {
        let cfg = ExperimentConfig {
            nodes: 10,
            rounds: 50,
            epochs_per_round: 10,
            lambda: 0.1,
            alpha_dir: 0.25,
            learning_rate: 0.001,
            ..Default::default()
        };
        cfg.validate().unwrap();
        assert_eq!(
            cfg.phase_plan().unwrap(),
            PhasePlan {
                head: 8,
                rewind: 1,
                tail: 1
            }
        );
    }

    #[test]
    fn lambda_and_epoch_constraints() {
        let bad = ExperimentConfig {
            lambda: 0.6,
            ..Default::default()
        };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("lambda"), "{msg}");
        let bad = ExperimentConfig {
            epochs_per_round: 2,
            lambda: 0.1,
            ..Default::default()
        };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("phase minimums"), "{msg}");
        let bad = ExperimentConfig {
            lambda: 0.0,
            rewind_mode: RewindMode::Source,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let ok = ExperimentConfig {
            lambda: 0.0,
            rewind_mode: RewindMode::None,
            ..Default::default()
        };
        ok.validate().unwrap();
    }

    #[test]
    fn unknown_key_rejected() {
        let err = ExperimentConfig::from_json_str(r#"{"nodes": 3, "colour": "red"}"#).unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
    }

    #[test]
    fn overrides_win_over_file() {
        let mut cfg = ExperimentConfig::from_json_str(r#"{"nodes": 3, "rounds": 4}"#).unwrap();
        cfg.apply(&ConfigOverrides {
            nodes: Some(7),
            subset: Some(100),
            ..Default::default()
        });
        assert_eq!((cfg.nodes, cfg.rounds, cfg.subset), (7, 4, Some(100)));
    }

    #[test]
    fn run_json_is_accepted_as_config() {
        let cfg = ExperimentConfig {
            nodes: 4,
            seed: 9,
            ..Default::default()
        };
        let doc = format!(r#"{{"config": {}, "final": {{"fa": 0.5}}}}"#, cfg.to_json());
        assert_eq!(ExperimentConfig::from_json_str(&doc).unwrap(), cfg);
    }

    #[test]
    fn eval_row_count() {
        assert_eq!(expected_metric_rows(0, 5), 1);
        assert_eq!(expected_metric_rows(15, 5), 4);
        assert_eq!(expected_metric_rows(7, 5), 3);
        for t in 0..30 {
            for k in 1..7 {
                let counted = 1 + (1..=t).filter(|&r| is_eval_round(r, t, k)).count();
                assert_eq!(counted, expected_metric_rows(t, k));
            }
        }
    }

    #[test]
    fn task_count_must_divide_classes() {
        let cfg = ExperimentConfig {
            num_tasks: Some(3),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            num_tasks: Some(2),
            ..Default::default()
        };
        cfg.validate().unwrap();
    }
}
