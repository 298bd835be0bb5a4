//! Reference runners: plain FedAvg with full weights, and FedAvg over
//! weight-clustered messages (codebook + indices every round, both ways).

use rayon::prelude::*;

use crate::accounting::{full_weights_bits, ByteLedger, Direction};
use crate::clustering::{decompress, kmeans_fit};
use crate::error::Result;
use crate::model::FlatParams;

use super::engine::{
    check_setup, client_seed, in_pool, sample_clients, Federation, RoundRecord, SimulationConfig,
    SimulationOutput,
};
use super::message::TransferMsg;
use super::server::weighted_average;

/// Full-precision FedAvg. The schedule and clustering settings are ignored.
pub fn run_fedavg(fed: &Federation, cfg: &SimulationConfig) -> Result<SimulationOutput> {
    check_setup(fed, cfg)?;
    let p = fed.param_count();
    let full = full_weights_bits(p as u64, cfg.wordlength);
    let mut global = fed.initial.clone();
    let mut ledger = ByteLedger::new(cfg.wordlength);
    let mut records = Vec::with_capacity(cfg.rounds as usize);

    for round in 1..=cfg.rounds {
        let participants = sample_clients(fed.clients.len(), cfg.participation, cfg.seed, round);
        for &id in &participants {
            ledger.record(round, Direction::Down, id, full)?;
        }
        let trained = in_pool(cfg.threads, || {
            participants
                .par_iter()
                .map(|&id| {
                    let data = &fed.clients[id];
                    let theta = fed.model.local_train(
                        &global,
                        data,
                        &cfg.train,
                        client_seed(cfg.seed, round, id),
                    )?;
                    Ok((theta, data.len()))
                })
                .collect::<Result<Vec<(FlatParams, usize)>>>()
        })??;
        for &id in &participants {
            ledger.record(round, Direction::Up, id, full)?;
        }
        global = weighted_average(&trained)?;
        records.push(RoundRecord {
            round,
            test_accuracy: fed.model.evaluate(&global, &fed.test)?,
            participants,
        });
    }

    Ok(SimulationOutput {
        records,
        ledger,
        final_params: global,
        param_count: p,
    })
}

/// FedAvg where both directions carry a clustered model every round.
pub fn run_fedavg_ws(fed: &Federation, cfg: &SimulationConfig) -> Result<SimulationOutput> {
    check_setup(fed, cfg)?;
    let p = fed.param_count();
    let mut global = fed.initial.clone();
    let mut ledger = ByteLedger::new(cfg.wordlength);
    let mut records = Vec::with_capacity(cfg.rounds as usize);

    for round in 1..=cfg.rounds {
        let participants = sample_clients(fed.clients.len(), cfg.participation, cfg.seed, round);

        let fit = kmeans_fit(&global, &cfg.kmeans)?;
        let down = TransferMsg::with_weights(fit.codebook, fit.weights)?;
        for &id in &participants {
            ledger.record_msg(round, Direction::Down, id, &down, p as u64)?;
        }

        let ups = in_pool(cfg.threads, || {
            participants
                .par_iter()
                .map(|&id| {
                    let data = &fed.clients[id];
                    let start = decompress(down.weights().expect("weights"), down.codebook())?;
                    let theta = fed.model.local_train(
                        &start,
                        data,
                        &cfg.train,
                        client_seed(cfg.seed, round, id),
                    )?;
                    let fit = kmeans_fit(&theta, &cfg.kmeans)?;
                    Ok((
                        TransferMsg::with_weights(fit.codebook, fit.weights)?,
                        data.len(),
                    ))
                })
                .collect::<Result<Vec<(TransferMsg, usize)>>>()
        })??;

        let mut models = Vec::with_capacity(ups.len());
        for (&id, (msg, n)) in participants.iter().zip(&ups) {
            ledger.record_msg(round, Direction::Up, id, msg, p as u64)?;
            models.push((
                decompress(msg.weights().expect("weights"), msg.codebook())?,
                *n,
            ));
        }
        global = weighted_average(&models)?;
        records.push(RoundRecord {
            round,
            test_accuracy: fed.model.evaluate(&global, &fed.test)?,
            participants,
        });
    }

    Ok(SimulationOutput {
        records,
        ledger,
        final_params: global,
        param_count: p,
    })
}
