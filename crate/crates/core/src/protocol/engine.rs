//! Round loop driving server and clients, with every message passing
//! through the ledger.

use rand::seq::index;
use rayon::prelude::*;

use crate::accounting::{ByteLedger, Direction};
use crate::clustering::KMeansConfig;
use crate::error::{Error, Result};
use crate::model::{FlatParams, LabeledDataset, Mlp, TrainConfig};
use crate::seed;

use super::client::{client_update, ClientContext, ClientState};
use super::message::TransferMsg;
use super::schedule::Schedule;
use super::server::ServerState;

/// Model, per-client training data and the shared test set.
#[derive(Debug, Clone)]
pub struct Federation {
    pub model: Mlp,
    pub clients: Vec<LabeledDataset>,
    pub test: LabeledDataset,
    pub initial: FlatParams,
}

impl Federation {
    pub fn param_count(&self) -> usize {
        self.model.param_count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub rounds: u32,
    /// Fraction ρ of clients sampled per round.
    pub participation: f64,
    pub schedule: Schedule,
    pub kmeans: KMeansConfig,
    pub train: TrainConfig,
    pub seed: u64,
    /// Worker threads for client updates; 0 uses the global pool.
    pub threads: usize,
    pub wordlength: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u32,
    pub test_accuracy: f64,
    pub participants: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    pub records: Vec<RoundRecord>,
    pub ledger: ByteLedger,
    pub final_params: FlatParams,
    pub param_count: usize,
}

/// A message as it leaves its sender.
#[derive(Debug, Clone, Copy)]
pub struct MessageEvent<'a> {
    pub round: u32,
    pub direction: Direction,
    pub client_id: usize,
    pub msg: &'a TransferMsg,
}

/// ⌈ρ·N⌉ distinct clients, ascending, drawn from a stream keyed by (seed, round).
pub fn sample_clients(num_clients: usize, participation: f64, seed: u64, round: u32) -> Vec<usize> {
    let want = ((participation * num_clients as f64) - 1e-9).ceil() as usize;
    let want = want.clamp(1, num_clients);
    if want == num_clients {
        return (0..num_clients).collect();
    }
    let mut rng = seed::rng_from(seed, &[seed::TAG_SAMPLE, round as u64]);
    let mut picked = index::sample(&mut rng, num_clients, want).into_vec();
    picked.sort_unstable();
    picked
}

pub(crate) fn client_seed(seed: u64, round: u32, client_id: usize) -> u64 {
    seed::derive_seed(seed, &[seed::TAG_CLIENT, round as u64, client_id as u64])
}

pub(crate) fn check_setup(fed: &Federation, cfg: &SimulationConfig) -> Result<()> {
    if fed.clients.is_empty() {
        return Err(Error::config("num_clients", "need at least one client"));
    }
    if !(cfg.participation > 0.0 && cfg.participation <= 1.0) {
        return Err(Error::config("participation", "must lie in (0, 1]"));
    }
    if cfg.rounds == 0 {
        return Err(Error::config("rounds", "must be at least 1"));
    }
    if cfg.wordlength == 0 {
        return Err(Error::config("wordlength", "must be positive"));
    }
    if fed.initial.len() != fed.model.param_count() {
        return Err(Error::Dimension(
            "initial parameters do not match the model".into(),
        ));
    }
    cfg.kmeans.validate()?;
    cfg.train.validate()?;
    Ok(())
}

/// Runs `f` on a dedicated pool of `threads` workers, or inline when 0.
pub(crate) fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Argument(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn run_fedcode(fed: &Federation, cfg: &SimulationConfig) -> Result<SimulationOutput> {
    run_fedcode_observed(fed, cfg, &mut |_| {})
}

/// Like [`run_fedcode`], calling `observer` for every message sent.
pub fn run_fedcode_observed(
    fed: &Federation,
    cfg: &SimulationConfig,
    observer: &mut dyn FnMut(MessageEvent<'_>),
) -> Result<SimulationOutput> {
    check_setup(fed, cfg)?;
    let p = fed.param_count();
    let mut server = ServerState::new(fed.initial.clone(), cfg.schedule, cfg.kmeans.clone());
    let mut clients: Vec<ClientState> = fed
        .clients
        .iter()
        .enumerate()
        .map(|(id, data)| ClientState::new(id, fed.initial.clone(), data.clone()))
        .collect();
    let ctx = ClientContext {
        model: &fed.model,
        train: &cfg.train,
        kmeans: &cfg.kmeans,
        schedule: &cfg.schedule,
    };
    let mut ledger = ByteLedger::new(cfg.wordlength);
    let mut records = Vec::with_capacity(cfg.rounds as usize);

    for round in 1..=cfg.rounds {
        let participants = sample_clients(clients.len(), cfg.participation, cfg.seed, round);
        let (downlink, next) = server.broadcast()?;
        server = next;
        for &id in &participants {
            ledger.record_msg(round, Direction::Down, id, &downlink, p as u64)?;
            observer(MessageEvent {
                round,
                direction: Direction::Down,
                client_id: id,
                msg: &downlink,
            });
        }

        let updates = in_pool(cfg.threads, || {
            participants
                .par_iter()
                .map(|&id| {
                    client_update(
                        &clients[id],
                        &downlink,
                        round,
                        &ctx,
                        client_seed(cfg.seed, round, id),
                    )
                })
                .collect::<Result<Vec<_>>>()
        })??;

        let mut uplinks = Vec::with_capacity(updates.len());
        for (&id, (uplink, state)) in participants.iter().zip(updates) {
            ledger.record_msg(round, Direction::Up, id, &uplink, p as u64)?;
            observer(MessageEvent {
                round,
                direction: Direction::Up,
                client_id: id,
                msg: &uplink,
            });
            let n = state.sample_count();
            clients[id] = state;
            uplinks.push((uplink, n));
        }

        server = server.aggregate(&uplinks, round)?;
        let test_accuracy = fed.model.evaluate(&server.global_params, &fed.test)?;
        records.push(RoundRecord {
            round,
            test_accuracy,
            participants,
        });
    }

    Ok(SimulationOutput {
        records,
        ledger,
        final_params: server.global_params,
        param_count: p,
    })
}
