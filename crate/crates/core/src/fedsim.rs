//! Federated supernet training simulator.
//!
//! The supernet is a flat parameter store laid out from the maximal genome.
//! Clients hold masked quadratic objectives, so every step of the round loop
//! (client selection, path assignment, subnet extraction, local training and
//! overlap-aware aggregation) runs on real arrays with exact oracles.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archspace::{decode, ArchGenome, LayerKind, LayerSpec, SearchSpaceConfig};
use crate::error::{Error, Result};
use crate::hybrid;
use crate::pareto_cache::config_hash;
use crate::rng::{derive_seed, seeded};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PNASWTS\0";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// A search space small enough to simulate quickly (about 3·10⁴ parameters
/// at the maximal genome).
pub fn desk_space() -> SearchSpaceConfig {
    SearchSpaceConfig {
        num_stages: 3,
        base_channels: vec![8, 16, 32],
        stem_channels: 8,
        depth_choices: vec![1, 2],
        width_choices: vec![0.25, 0.5, 0.75, 1.0],
        expansion_choices: vec![0.25, 0.5, 0.75, 1.0],
        input_resolution: 8,
        input_channels: 3,
        num_classes: 10,
        stage_strides: vec![1, 2, 2],
        channel_divisor: 1,
        kernel_size: 3,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSlot {
    pub name: String,
    pub kind: LayerKind,
    pub stage: Option<usize>,
    pub block: Option<usize>,
    /// `[c_out, c_in, k, k]`, row-major.
    pub shape: [usize; 4],
    pub offset: usize,
}

impl TensorSlot {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

fn slot_name(layer: &LayerSpec) -> String {
    match (layer.kind, layer.stage, layer.block) {
        (LayerKind::Stem, ..) => "stem".into(),
        (LayerKind::Classifier, ..) => "classifier".into(),
        (kind, Some(s), Some(b)) => {
            let suffix = match kind {
                LayerKind::BlockReduce => "reduce",
                LayerKind::BlockExpand => "expand",
                _ => "shortcut",
            };
            format!("stage{s}.block{b}.{suffix}")
        }
        _ => unreachable!("stage layers always carry their position"),
    }
}

/// Shared supernet weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SupernetState {
    pub slots: Vec<TensorSlot>,
    pub values: Vec<f64>,
    pub round: usize,
    pub global_lr: f64,
    pub space_hash: String,
}

impl SupernetState {
    /// Zero-initialized store shaped by the maximal genome of `cfg`.
    pub fn new(cfg: &SearchSpaceConfig, global_lr: f64) -> Result<Self> {
        cfg.validate()?;
        let full = decode(&ArchGenome::max(cfg), cfg)?;
        let mut offset = 0;
        let slots = full
            .layers
            .iter()
            .map(|l| {
                let shape = [l.c_out, l.c_in, l.kernel, l.kernel];
                let slot =
                    TensorSlot { name: slot_name(l), kind: l.kind, stage: l.stage, block: l.block, shape, offset };
                offset += slot.len();
                slot
            })
            .collect();
        Ok(Self { slots, values: vec![0.0; offset], round: 0, global_lr, space_hash: config_hash(cfg) })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.slots.iter().find(|s| s.name == name).map(|s| &self.values[s.range()])
    }

    fn check_space(&self, cfg: &SearchSpaceConfig) -> Result<()> {
        if self.space_hash == config_hash(cfg) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("supernet was built for a different search space".into()))
        }
    }
}

/// Active entries of the flat store for one genome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivityMask {
    pub active: Vec<bool>,
}

impl ActivityMask {
    pub fn count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn slot<'a>(&'a self, slot: &TensorSlot) -> &'a [bool] {
        &self.active[slot.range()]
    }
}

/// Mask for `genome`: output channel below the active width, input channel
/// below the upstream active width, and only for blocks the genome keeps.
/// The returned weights equal `W` on the mask and zero elsewhere.
pub fn extract_subnet(
    state: &SupernetState,
    cfg: &SearchSpaceConfig,
    genome: &ArchGenome,
) -> Result<(Vec<f64>, ActivityMask)> {
    state.check_space(cfg)?;
    let inst = decode(genome, cfg)?;
    let mut active = vec![false; state.len()];
    for layer in &inst.layers {
        let slot = state
            .slots
            .iter()
            .find(|s| s.kind == layer.kind && s.stage == layer.stage && s.block == layer.block)
            .ok_or_else(|| Error::ShapeMismatch(format!("no tensor for {}", slot_name(layer))))?;
        let [_, c_in, k, _] = slot.shape;
        let kk = k * k;
        for o in 0..layer.c_out {
            let row = slot.offset + o * c_in * kk;
            active[row..row + layer.c_in * kk].fill(true);
        }
    }
    let weights = state.values.iter().zip(&active).map(|(&w, &a)| if a { w } else { 0.0 }).collect();
    Ok((weights, ActivityMask { active }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientState {
    pub id: usize,
    pub data_weight: f64,
    /// Synthetic per-parameter optimum.
    pub target: Vec<f64>,
    pub local_lr: f64,
    pub local_epochs: usize,
    pub min_count: usize,
    pub max_count: usize,
}

impl ClientState {
    /// `½‖mask ⊙ (w − w*)‖²`.
    pub fn loss(&self, weights: &[f64], mask: &ActivityMask) -> f64 {
        let se: f64 = weights
            .iter()
            .zip(&self.target)
            .zip(&mask.active)
            .filter(|(_, &a)| a)
            .map(|((w, t), _)| (w - t) * (w - t))
            .sum();
        0.5 * se
    }
}

/// `local_epochs` full gradient steps on the client's masked quadratic.
/// Returns `w′ − w`, zero outside the mask.
pub fn local_train(client: &ClientState, weights: &[f64], mask: &ActivityMask) -> Vec<f64> {
    weights
        .iter()
        .zip(&client.target)
        .zip(&mask.active)
        .map(|((&w0, &t), &a)| {
            if !a {
                return 0.0;
            }
            let mut w = w0;
            for _ in 0..client.local_epochs {
                w -= client.local_lr * (w - t);
            }
            w - w0
        })
        .collect()
}

/// Overlap-aware aggregation. Per parameter θ:
///
/// `Δθ = [β·I_max·Δ_max + (1−β)·Σ I_k·Δ_k] / [β·I_max + (1−β)·Σ I_k + ε]`
///
/// with the sums over every client other than `k_max`, accumulated in client
/// order.
pub fn maxnet_aggregate(
    deltas: &[Vec<f64>],
    masks: &[&ActivityMask],
    k_max: usize,
    beta: f64,
    epsilon: f64,
) -> Result<Vec<f64>> {
    if deltas.len() != masks.len() || k_max >= deltas.len() {
        return Err(Error::Dimension(format!("{} deltas, {} masks, k_max {k_max}", deltas.len(), masks.len())));
    }
    let p = deltas[k_max].len();
    if deltas.iter().any(|d| d.len() != p) || masks.iter().any(|m| m.active.len() != p) {
        return Err(Error::Dimension("delta and mask lengths differ".into()));
    }
    let mut num = vec![0.0; p];
    let mut den = vec![0.0; p];
    for (k, (d, m)) in deltas.iter().zip(masks).enumerate() {
        if k == k_max {
            continue;
        }
        for ((n, c), (&dk, &a)) in num.iter_mut().zip(den.iter_mut()).zip(d.iter().zip(&m.active)) {
            let ind = if a { 1.0 } else { 0.0 };
            *n += ind * dk;
            *c += ind;
        }
    }
    let (d_max, m_max) = (&deltas[k_max], &masks[k_max].active);
    Ok((0..p)
        .map(|i| {
            let ind = if m_max[i] { 1.0 } else { 0.0 };
            (beta * ind * d_max[i] + (1.0 - beta) * num[i]) / (beta * ind + (1.0 - beta) * den[i] + epsilon)
        })
        .collect())
}

/// Cosine decay from 1 to 0 over the first 80% of `total` rounds, then 0.
pub fn beta_schedule(t: usize, total: usize) -> f64 {
    if total == 0 || 5 * t >= 4 * total {
        return 0.0;
    }
    let phase = (5 * t) as f64 / (4 * total) as f64;
    0.5 * (1.0 + (std::f64::consts::PI * phase).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathRole {
    Min,
    Max,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub client: usize,
    pub role: PathRole,
    /// Index into the cache.
    pub path: usize,
}

/// Assign cache paths to the selected clients.
///
/// The selected client with the fewest smallest-path assignments gets the
/// smallest path, the one (of the rest) with the fewest largest-path
/// assignments gets the largest, and everyone else draws uniformly from the
/// cache. Ties for the smallest path go to the lowest client id; ties for the
/// largest go to the first client after the smallest-path client in cyclic id
/// order, which keeps both counters level under full participation. Counters
/// are updated.
pub fn path_sample<R: Rng + ?Sized>(
    selected: &[usize],
    clients: &mut [ClientState],
    cache_len: usize,
    rng: &mut R,
) -> Result<Vec<Assignment>> {
    if cache_len == 0 {
        return Err(Error::EmptyCache);
    }
    if selected.len() < 2 {
        return Err(Error::Config("each round needs at least two clients".into()));
    }
    let k_min =
        selected.iter().copied().min_by_key(|&c| (clients[c].min_count, c)).expect("at least two selected clients");
    let n = clients.len();
    let k_max = selected
        .iter()
        .copied()
        .filter(|&c| c != k_min)
        .min_by_key(|&c| (clients[c].max_count, (c + n - k_min) % n))
        .expect("at least two selected clients");
    clients[k_min].min_count += 1;
    clients[k_max].max_count += 1;
    Ok(selected
        .iter()
        .map(|&client| {
            if client == k_min {
                Assignment { client, role: PathRole::Min, path: 0 }
            } else if client == k_max {
                Assignment { client, role: PathRole::Max, path: cache_len - 1 }
            } else {
                Assignment { client, role: PathRole::Sampled, path: rng.random_range(0..cache_len) }
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedConfig {
    pub num_clients: usize,
    /// Fraction C of clients selected each round.
    pub participation: f64,
    pub rounds: usize,
    pub local_epochs: usize,
    pub local_lr: f64,
    pub global_lr: f64,
    /// Spread of per-client optima around the shared optimum.
    pub target_spread: f64,
    /// Standard deviation of the initial weights.
    pub init_scale: f64,
    /// Client data sizes are drawn uniformly from this inclusive range.
    pub data_size_range: (usize, usize),
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            num_clients: 10,
            participation: 1.0,
            rounds: 200,
            local_epochs: 5,
            local_lr: 0.1,
            global_lr: 1.0,
            target_spread: 0.1,
            init_scale: 1.0,
            data_size_range: (100, 1000),
            epsilon: DEFAULT_EPSILON,
            seed: 0,
        }
    }
}

impl FedConfig {
    pub fn clients_per_round(&self) -> usize {
        ((self.participation * self.num_clients as f64).ceil() as usize).min(self.num_clients)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return bad("participation must lie in (0, 1]");
        }
        if self.clients_per_round() < 2 {
            return bad("each round needs at least two clients");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 || !self.local_lr.is_finite() || !self.global_lr.is_finite() {
            return bad("epsilon must be positive and step sizes finite");
        }
        if self.data_size_range.0 == 0 || self.data_size_range.0 > self.data_size_range.1 {
            return bad("data_size_range must be a non-empty range of positive sizes");
        }
        if !(self.target_spread >= 0.0 && self.init_scale >= 0.0) {
            return bad("target_spread and init_scale must be non-negative");
        }
        Ok(())
    }
}

/// Random initial weights and clients with optima scattered around a shared
/// optimum.
pub fn init_federation(cfg: &SearchSpaceConfig, fed: &FedConfig) -> Result<(SupernetState, Vec<ClientState>)> {
    fed.validate()?;
    let mut state = SupernetState::new(cfg, fed.global_lr)?;
    let mut rng = seeded(derive_seed(fed.seed, 0));
    for v in &mut state.values {
        *v = fed.init_scale * Distribution::<f64>::sample(&StandardNormal, &mut rng);
    }
    let mut rng = seeded(derive_seed(fed.seed, 1));
    let shared: Vec<f64> = (0..state.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let clients = (0..fed.num_clients)
        .map(|id| {
            let data = rng.random_range(fed.data_size_range.0..=fed.data_size_range.1);
            let target = shared
                .iter()
                .map(|&s| s + fed.target_spread * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect();
            ClientState {
                id,
                data_weight: data as f64,
                target,
                local_lr: fed.local_lr,
                local_epochs: fed.local_epochs,
                min_count: 0,
                max_count: 0,
            }
        })
        .collect();
    Ok((state, clients))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub beta: f64,
    /// Data-weighted mean of the selected clients' losses on their assigned
    /// subnets, after the update.
    pub objective: f64,
    /// Data-weighted mean loss of all clients on the smallest path.
    pub loss_min_path: f64,
    /// Same, on the largest path.
    pub loss_max_path: f64,
}

fn weighted_loss(clients: &[&ClientState], state: &SupernetState, mask: &ActivityMask) -> f64 {
    let total: f64 = clients.iter().map(|c| c.data_weight).sum();
    clients.iter().map(|c| c.data_weight * c.loss(&state.values, mask)).sum::<f64>() / total
}

/// Run `fed.rounds` rounds. `cache` lists genomes from smallest to largest
/// budget.
pub fn run_training(
    cfg: &SearchSpaceConfig,
    fed: &FedConfig,
    state: &mut SupernetState,
    clients: &mut [ClientState],
    cache: &[ArchGenome],
) -> Result<Vec<RoundMetrics>> {
    fed.validate()?;
    if cache.is_empty() {
        return Err(Error::EmptyCache);
    }
    if clients.len() != fed.num_clients || clients.iter().any(|c| c.target.len() != state.len()) {
        return Err(Error::Config("client states do not match the run configuration".into()));
    }
    let masks: Vec<ActivityMask> =
        cache.iter().map(|g| extract_subnet(state, cfg, g).map(|(_, m)| m)).collect::<Result<_>>()?;
    let mut rng = seeded(derive_seed(fed.seed, 2));
    let mut trace = Vec::with_capacity(fed.rounds);
    for t in 0..fed.rounds {
        let beta = beta_schedule(t, fed.rounds);
        let mut selected = sample(&mut rng, fed.num_clients, fed.clients_per_round()).into_vec();
        selected.sort_unstable();
        let plan = path_sample(&selected, clients, cache.len(), &mut rng)?;

        let snapshot: &SupernetState = state;
        let deltas: Vec<Vec<f64>> = plan
            .par_iter()
            .map(|a| {
                let mask = &masks[a.path];
                let local: Vec<f64> =
                    snapshot.values.iter().zip(&mask.active).map(|(&w, &on)| if on { w } else { 0.0 }).collect();
                local_train(&clients[a.client], &local, mask)
            })
            .collect();
        let plan_masks: Vec<&ActivityMask> = plan.iter().map(|a| &masks[a.path]).collect();
        let k_max = plan.iter().position(|a| a.role == PathRole::Max).expect("plan has a max assignee");
        let update = maxnet_aggregate(&deltas, &plan_masks, k_max, beta, fed.epsilon)?;

        for (i, u) in update.iter().enumerate() {
            if plan_masks.iter().any(|m| m.active[i]) {
                state.values[i] += state.global_lr * u;
            }
        }
        state.round += 1;

        let total: f64 = plan.iter().map(|a| clients[a.client].data_weight).sum();
        let objective = plan
            .iter()
            .map(|a| {
                let c = &clients[a.client];
                c.data_weight * c.loss(&state.values, &masks[a.path])
            })
            .sum::<f64>()
            / total;
        let everyone: Vec<&ClientState> = clients.iter().collect();
        trace.push(RoundMetrics {
            round: t,
            beta,
            objective,
            loss_min_path: weighted_loss(&everyone, state, &masks[0]),
            loss_max_path: weighted_loss(&everyone, state, &masks[cache.len() - 1]),
        });
    }
    Ok(trace)
}

pub fn write_trace_csv<W: Write>(trace: &[RoundMetrics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["round", "beta", "objective", "loss_min_path", "loss_max_path"])?;
    for m in trace {
        w.write_record([
            m.round.to_string(),
            m.beta.to_string(),
            m.objective.to_string(),
            m.loss_min_path.to_string(),
            m.loss_max_path.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    round: usize,
    global_lr: f64,
    space_hash: String,
    tensors: Vec<TensorSlot>,
}

pub fn write_checkpoint<W: Write>(state: &SupernetState, out: W) -> Result<()> {
    let header = CheckpointHeader {
        round: state.round,
        global_lr: state.global_lr,
        space_hash: state.space_hash.clone(),
        tensors: state.slots.clone(),
    };
    hybrid::write(out, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, &header, &state.values)
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<SupernetState> {
    let (header, values): (CheckpointHeader, Vec<f64>) = hybrid::read(input, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let len: usize = header.tensors.iter().map(TensorSlot::len).sum();
    if values.len() != len {
        return Err(Error::Format(format!("checkpoint holds {} values, expected {len}", values.len())));
    }
    Ok(SupernetState {
        slots: header.tensors,
        values,
        round: header.round,
        global_lr: header.global_lr,
        space_hash: header.space_hash,
    })
}

pub fn save_checkpoint(state: &SupernetState, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(state, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<SupernetState> {
    read_checkpoint(std::fs::File::open(path)?)
}
