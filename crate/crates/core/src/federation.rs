//! Round engine: routing topologies, rewind phase scheduling, decentralized and
//! centralized rounds, and the standalone / joint baselines.
//!
//! Model indexing: after round `t`, `state.models[j]` is the model last trained on
//! node `j` (`M_j^(t)`). The routing plan of round `t` decides which of those
//! models each node picks up: node `j` continues from `M_{src[j]}^(t-1)`, which is
//! the same as node `i` shipping its model to `dest[i]` at the end of round `t-1`.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DataView, Dataset, Shard};
use crate::nn::{average_params, train, train_counted, ModelParams, TrainConfig};
use crate::seed::{self, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    /// Fixed ring: every round node `j` ships to `j + 1 mod N`.
    Cyclic,
    /// Fresh uniformly random permutation every round.
    Random,
    /// Central server with FedAvg aggregation.
    Star,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewindMode {
    None,
    /// Rewind on the node the model came from.
    Source,
    /// Rewind on a uniformly random node other than the current one.
    RandomPeer,
}

/// Who a node rewinds on in the centralized setting, where models come from the server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CentralizedPeer {
    /// Node `j` rewinds on `j - 1 mod N`.
    #[default]
    Ring,
    /// Per-round random permutation.
    Random,
}

/// Epoch split of one round: `head` on the local shard, `rewind` on the peer's shard,
/// then `tail` on the local shard again.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhasePlan {
    pub head: usize,
    pub rewind: usize,
    pub tail: usize,
}

impl PhasePlan {
    pub fn total(&self) -> usize {
        self.head + self.rewind + self.tail
    }

    pub fn is_rewind(&self) -> bool {
        self.rewind > 0
    }
}

/// `rewind = tail = max(1, round(lambda * E))` for `lambda > 0`, `head` takes the rest.
pub fn make_phase_plan(epochs: usize, lambda: f64) -> Result<PhasePlan> {
    if epochs == 0 {
        return Err(Error::InvalidPhasePlan("E must be >= 1".into()));
    }
    if !(0.0..=0.5).contains(&lambda) {
        return Err(Error::InvalidPhasePlan(format!(
            "lambda must be in [0, 0.5], got {lambda}"
        )));
    }
    if lambda == 0.0 {
        return Ok(PhasePlan {
            head: epochs,
            rewind: 0,
            tail: 0,
        });
    }
    if epochs < 3 {
        return Err(Error::InvalidPhasePlan(format!(
            "rewind needs E >= 3 so every phase gets an epoch, got E = {epochs}"
        )));
    }
    let side = ((lambda * epochs as f64).round() as usize).max(1);
    if 2 * side >= epochs {
        return Err(Error::InvalidPhasePlan(format!(
            "lambda = {lambda} with E = {epochs} leaves no head epoch"
        )));
    }
    Ok(PhasePlan {
        head: epochs - 2 * side,
        rewind: side,
        tail: side,
    })
}

/// Where every node's model goes for one round. `src` is the inverse of `dest`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingPlan {
    pub round: usize,
    pub dest: Vec<usize>,
    pub src: Vec<usize>,
}

impl RoutingPlan {
    pub fn from_dest(round: usize, dest: Vec<usize>) -> Result<Self> {
        let n = dest.len();
        let mut src = vec![usize::MAX; n];
        for (from, &to) in dest.iter().enumerate() {
            if to >= n || src[to] != usize::MAX {
                return Err(Error::InvalidRouting(format!(
                    "destination map is not a bijection on [0, {n})"
                )));
            }
            src[to] = from;
        }
        Ok(Self { round, dest, src })
    }

    pub fn len(&self) -> usize {
        self.dest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dest.is_empty()
    }
}

/// Peer routing for round `round`. Star topologies have no peer plan and yield `None`.
pub fn build_routing(
    kind: TopologyKind,
    n: usize,
    round: usize,
    seed: u64,
) -> Result<Option<RoutingPlan>> {
    let dest = match kind {
        TopologyKind::Star => return Ok(None),
        _ if n < 2 => {
            return Err(Error::InvalidRouting(format!(
                "peer topologies need at least 2 nodes, got {n}"
            )))
        }
        TopologyKind::Cyclic => (0..n).map(|j| (j + 1) % n).collect(),
        TopologyKind::Random => random_permutation(n, seed, round),
    };
    RoutingPlan::from_dest(round, dest).map(Some)
}

fn random_permutation(n: usize, seed: u64, round: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::stream_rng(
        seed,
        Stream::Routing,
        &[round as u64],
    ));
    perm
}

/// Uniform choice among the nodes other than `node`.
fn random_peer(seed: u64, round: usize, node: usize, n: usize) -> Result<usize> {
    if n < 2 {
        return Err(Error::InvalidRouting(
            "random-peer rewind needs at least 2 nodes".into(),
        ));
    }
    let mut rng = seed::stream_rng(seed, Stream::PeerChoice, &[round as u64, node as u64]);
    let k = rng.gen_range(0..n - 1);
    Ok(if k >= node { k + 1 } else { k })
}

/// Rewind peers for a centralized round.
pub fn centralized_peers(peer: CentralizedPeer, n: usize, round: usize, seed: u64) -> Vec<usize> {
    match peer {
        CentralizedPeer::Ring => (0..n).map(|j| (j + n - 1) % n).collect(),
        CentralizedPeer::Random => {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut seed::stream_rng(
                seed,
                Stream::PeerChoice,
                &[round as u64, u64::MAX],
            ));
            perm
        }
    }
}

/// Per-node, per-round training config.
///
/// Node `j` owns the shuffle stream `derive(base, j)`; round `t` starts `(t - 1) * E`
/// epochs into it, so consecutive rounds on one node compose exactly.
pub fn node_train_config(
    base: &TrainConfig,
    node: usize,
    round: usize,
    epochs_per_round: usize,
) -> TrainConfig {
    let node_seed = seed::derive(base.shuffle_seed, Stream::Shuffle, &[node as u64]);
    TrainConfig {
        shuffle_seed: node_seed,
        ..*base
    }
    .advanced(round.saturating_sub(1) * epochs_per_round)
}

/// Training rows each node exposes in the current round.
#[derive(Debug, Clone)]
pub struct NodeData<'a> {
    dataset: &'a Dataset,
    train: Vec<&'a [usize]>,
}

impl<'a> NodeData<'a> {
    pub fn from_shards(dataset: &'a Dataset, shards: &'a [Shard]) -> Self {
        Self {
            dataset,
            train: shards.iter().map(|s| s.train.as_slice()).collect(),
        }
    }

    pub fn from_index_lists(dataset: &'a Dataset, train: Vec<&'a [usize]>) -> Self {
        Self { dataset, train }
    }

    pub fn len(&self) -> usize {
        self.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty()
    }

    pub fn view(&self, node: usize) -> Result<DataView<'a>> {
        self.train
            .get(node)
            .map(|idx| self.dataset.view(idx))
            .ok_or(Error::MissingShard(node))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Head,
    Rewind,
    Tail,
}

/// One training phase as executed: which node trained, on whose shard, for how long.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub node: usize,
    pub phase: Phase,
    pub shard: usize,
    pub epochs: usize,
    pub sgd_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    /// Decentralized rounds: the node whose model each node continued from.
    pub received_from: Option<Vec<usize>>,
    pub phases: Vec<PhaseRecord>,
}

impl RoundTrace {
    /// Total epochs node `node` spent training this round.
    pub fn epochs_of(&self, node: usize) -> usize {
        self.phases
            .iter()
            .filter(|p| p.node == node)
            .map(|p| p.epochs)
            .sum()
    }

    pub fn steps_of(&self, node: usize) -> usize {
        self.phases
            .iter()
            .filter(|p| p.node == node)
            .map(|p| p.sgd_steps)
            .sum()
    }

    pub fn rewind_shard_of(&self, node: usize) -> Option<usize> {
        self.phases
            .iter()
            .find(|p| p.node == node && p.phase == Phase::Rewind)
            .map(|p| p.shard)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationState {
    pub round: usize,
    pub models: Vec<ModelParams>,
    pub server_model: Option<ModelParams>,
}

impl FederationState {
    /// Round-0 state: every node (and the server, for star) holds `init`.
    pub fn new(topology: TopologyKind, init: ModelParams, num_nodes: usize) -> Self {
        Self {
            round: 0,
            models: vec![init.clone(); num_nodes],
            server_model: (topology == TopologyKind::Star).then_some(init),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.models.len()
    }
}

/// What every node does inside a round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundConfig {
    pub phase: PhasePlan,
    pub mode: RewindMode,
    pub train: TrainConfig,
    /// Seed of the peer-choice stream (random-peer rewind, random centralized peers).
    pub protocol_seed: u64,
}

impl RoundConfig {
    fn check(&self) -> Result<()> {
        match (self.mode, self.phase.is_rewind()) {
            (RewindMode::None, true) => Err(Error::PhaseModeMismatch(
                "rewind mode none with a non-empty rewind phase".into(),
            )),
            (RewindMode::Source | RewindMode::RandomPeer, false) => Err(Error::PhaseModeMismatch(
                "rewind enabled but the phase plan has no rewind epochs".into(),
            )),
            _ => self.train.validate(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub state: FederationState,
    pub trace: RoundTrace,
}

/// A rewind request: the model travels to `target`, trains there, and comes back.
struct RewindRequest {
    requester: usize,
    model: ModelParams,
    epochs: usize,
    cfg: TrainConfig,
}

/// Served synchronously by the target node against its own (immutable) training rows.
fn serve_rewind(
    req: RewindRequest,
    target: usize,
    data: &NodeData<'_>,
) -> Result<(ModelParams, PhaseRecord)> {
    let view = data.view(target)?;
    let (model, record) = run_phase(
        req.requester,
        Phase::Rewind,
        target,
        &req.model,
        &view,
        req.epochs,
        &req.cfg,
    )?;
    Ok((model, record))
}

fn run_phase(
    node: usize,
    phase: Phase,
    shard: usize,
    model: &ModelParams,
    view: &DataView<'_>,
    epochs: usize,
    cfg: &TrainConfig,
) -> Result<(ModelParams, PhaseRecord)> {
    // An empty view only arises under task streams (no rows of the active task);
    // the phase is then skipped.
    let epochs = if view.is_empty() { 0 } else { epochs };
    let (model, sgd_steps) = train_counted(model, view, epochs, cfg)?;
    Ok((
        model,
        PhaseRecord {
            node,
            phase,
            shard,
            epochs,
            sgd_steps,
        },
    ))
}

/// head on own rows, optional rewind on `rewind_target`, tail on own rows.
fn train_node(
    node: usize,
    start: &ModelParams,
    data: &NodeData<'_>,
    rewind_target: Option<usize>,
    phase: &PhasePlan,
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<PhaseRecord>)> {
    let own = data.view(node)?;
    let mut records = Vec::with_capacity(3);
    let (model, rec) = run_phase(node, Phase::Head, node, start, &own, phase.head, cfg)?;
    records.push(rec);
    let Some(target) = rewind_target else {
        return Ok((model, records));
    };
    let req = RewindRequest {
        requester: node,
        model,
        epochs: phase.rewind,
        cfg: cfg.advanced(phase.head),
    };
    let (model, rec) = serve_rewind(req, target, data)?;
    records.push(rec);
    let (model, rec) = run_phase(
        node,
        Phase::Tail,
        node,
        &model,
        &own,
        phase.tail,
        &cfg.advanced(phase.head + phase.rewind),
    )?;
    records.push(rec);
    Ok((model, records))
}

fn collect_round(
    results: Vec<Result<(ModelParams, Vec<PhaseRecord>)>>,
) -> Result<(Vec<ModelParams>, Vec<PhaseRecord>)> {
    let mut models = Vec::with_capacity(results.len());
    let mut phases = Vec::new();
    for r in results {
        let (m, recs) = r?;
        models.push(m);
        phases.extend(recs);
    }
    Ok((models, phases))
}

/// One decentralized round under `plan`.
pub fn run_round_decentralized(
    state: &FederationState,
    data: &NodeData<'_>,
    plan: &RoutingPlan,
    cfg: &RoundConfig,
) -> Result<RoundOutcome> {
    cfg.check()?;
    let n = state.num_nodes();
    let round = state.round + 1;
    if data.len() != n {
        return Err(Error::MissingShard(data.len().min(n)));
    }
    if plan.len() != n || plan.round != round {
        return Err(Error::InvalidRouting(format!(
            "plan for round {} over {} nodes used at round {round} with {n} nodes",
            plan.round,
            plan.len()
        )));
    }

    let results: Vec<_> = (0..n)
        .into_par_iter()
        .map(|j| {
            let source = plan.src[j];
            let target = match cfg.mode {
                RewindMode::None => None,
                RewindMode::Source => Some(source),
                RewindMode::RandomPeer => Some(random_peer(cfg.protocol_seed, round, j, n)?),
            };
            let node_cfg = node_train_config(&cfg.train, j, round, cfg.phase.total());
            train_node(
                j,
                &state.models[source],
                data,
                target,
                &cfg.phase,
                &node_cfg,
            )
        })
        .collect();
    let (models, phases) = collect_round(results)?;

    Ok(RoundOutcome {
        state: FederationState {
            round,
            models,
            server_model: None,
        },
        trace: RoundTrace {
            round,
            received_from: Some(plan.src.clone()),
            phases,
        },
    })
}

/// One centralized round: every node starts from the server model, the server
/// averages the results. `state.models` keeps the pre-aggregation node models.
pub fn run_round_centralized(
    state: &FederationState,
    data: &NodeData<'_>,
    peer: CentralizedPeer,
    cfg: &RoundConfig,
) -> Result<RoundOutcome> {
    cfg.check()?;
    let server = state
        .server_model
        .as_ref()
        .ok_or(Error::MissingServerModel)?;
    let n = state.num_nodes();
    let round = state.round + 1;
    if data.len() != n {
        return Err(Error::MissingShard(data.len().min(n)));
    }
    let peers = centralized_peers(peer, n, round, cfg.protocol_seed);

    let results: Vec<_> = (0..n)
        .into_par_iter()
        .map(|j| {
            let target = match cfg.mode {
                RewindMode::None => None,
                RewindMode::Source => Some(peers[j]),
                RewindMode::RandomPeer => Some(random_peer(cfg.protocol_seed, round, j, n)?),
            };
            let node_cfg = node_train_config(&cfg.train, j, round, cfg.phase.total());
            train_node(j, server, data, target, &cfg.phase, &node_cfg)
        })
        .collect();
    let (models, phases) = collect_round(results)?;
    let server_model = average_params(&models)?;

    Ok(RoundOutcome {
        state: FederationState {
            round,
            models,
            server_model: Some(server_model),
        },
        trace: RoundTrace {
            round,
            received_from: None,
            phases,
        },
    })
}

/// One standalone round: every node trains its own model `epochs` epochs, no exchange.
pub fn run_round_standalone(
    state: &FederationState,
    data: &NodeData<'_>,
    epochs: usize,
    base: &TrainConfig,
) -> Result<RoundOutcome> {
    let n = state.num_nodes();
    let round = state.round + 1;
    if data.len() != n {
        return Err(Error::MissingShard(data.len().min(n)));
    }
    let results: Vec<_> = (0..n)
        .into_par_iter()
        .map(|j| {
            let own = data.view(j)?;
            let cfg = node_train_config(base, j, round, epochs);
            let (m, rec) = run_phase(j, Phase::Head, j, &state.models[j], &own, epochs, &cfg)?;
            Ok((m, vec![rec]))
        })
        .collect();
    let (models, phases) = collect_round(results)?;
    Ok(RoundOutcome {
        state: FederationState {
            round,
            models,
            server_model: None,
        },
        trace: RoundTrace {
            round,
            received_from: None,
            phases,
        },
    })
}

/// Each node trains `rounds * epochs` epochs on its own shard only.
pub fn run_standalone(
    init: &ModelParams,
    data: &NodeData<'_>,
    rounds: usize,
    epochs: usize,
    base: &TrainConfig,
) -> Result<Vec<ModelParams>> {
    (0..data.len())
        .into_par_iter()
        .map(|j| {
            train(
                init,
                &data.view(j)?,
                rounds * epochs,
                &node_train_config(base, j, 1, epochs),
            )
        })
        .collect()
}

/// A single model trained `rounds * epochs` epochs on the consolidated shard,
/// using node 0's shuffle stream.
pub fn run_joint(
    init: &ModelParams,
    dataset: &Dataset,
    joint: &Shard,
    rounds: usize,
    epochs: usize,
    base: &TrainConfig,
) -> Result<ModelParams> {
    train(
        init,
        &joint.train_view(dataset),
        rounds * epochs,
        &joint_train_config(base, epochs),
    )
}

/// Shuffle stream used by the joint baseline.
pub fn joint_train_config(base: &TrainConfig, epochs_per_round: usize) -> TrainConfig {
    node_train_config(base, 0, 1, epochs_per_round)
}
