use crate::clustering::{concat_sorted, decompress, kmeans_fit, snap, KMeansConfig};
use crate::error::{Error, Result};
use crate::model::FlatParams;

use super::message::{MessageKind, TransferMsg};
use super::schedule::Schedule;

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub global_params: FlatParams,
    /// 1-based index of the round about to run.
    pub round: u32,
    pub schedule: Schedule,
    pub kmeans: KMeansConfig,
}

impl ServerState {
    pub fn new(global_params: FlatParams, schedule: Schedule, kmeans: KMeansConfig) -> Self {
        ServerState {
            global_params,
            round: 1,
            schedule,
            kmeans,
        }
    }

    /// Clusters the global model and builds this round's downlink. The
    /// returned state stores the snapped weights, so server and clients
    /// share one representation.
    pub fn broadcast(&self) -> Result<(TransferMsg, ServerState)> {
        let fit = kmeans_fit(&self.global_params, &self.kmeans)?;
        let snapped = fit.snapped();
        let msg = match self.schedule.downlink_kind(self.round) {
            MessageKind::CodebookPlusWeights => TransferMsg::CodebookPlusWeights {
                codebook: fit.codebook,
                weights: fit.weights,
            },
            MessageKind::CodebookOnly => TransferMsg::CodebookOnly {
                codebook: fit.codebook,
            },
        };
        let next = ServerState {
            global_params: snapped,
            ..self.clone()
        };
        Ok((msg, next))
    }

    /// Folds the uplinks (in ascending client order) into the global model.
    /// Calibration rounds average decompressed weights by sample count;
    /// codebook rounds snap the global weights onto the union of all client
    /// codebooks.
    pub fn aggregate(&self, uplinks: &[(TransferMsg, usize)], round: u32) -> Result<ServerState> {
        let first = uplinks
            .first()
            .ok_or_else(|| Error::Argument("no uplinks to aggregate".into()))?;
        if round != self.round {
            return Err(Error::Protocol(format!(
                "aggregating round {round} but server is at round {}",
                self.round
            )));
        }
        let kind = first.0.kind();
        if uplinks.iter().any(|(m, _)| m.kind() != kind) {
            return Err(Error::Protocol(format!(
                "round {round} mixes codebook-only and calibration uplinks"
            )));
        }
        let p = self.global_params.len();

        let global = match kind {
            MessageKind::CodebookPlusWeights => {
                let models = uplinks
                    .iter()
                    .map(|(msg, n)| {
                        msg.validate(Some(p))?;
                        let weights = msg.weights().expect("calibration message");
                        Ok((decompress(weights, msg.codebook())?, *n))
                    })
                    .collect::<Result<Vec<_>>>()?;
                weighted_average(&models)?
            }
            MessageKind::CodebookOnly => {
                let books: Vec<_> = uplinks.iter().map(|(m, _)| m.codebook().clone()).collect();
                let merged = concat_sorted(&books)?;
                snap(&self.global_params, &merged)
            }
        };
        Ok(ServerState {
            global_params: global,
            round: self.round + 1,
            ..self.clone()
        })
    }
}

pub fn server_broadcast(state: &ServerState) -> Result<(TransferMsg, ServerState)> {
    state.broadcast()
}

pub fn server_aggregate(
    state: &ServerState,
    uplinks: &[(TransferMsg, usize)],
    round: u32,
) -> Result<ServerState> {
    state.aggregate(uplinks, round)
}

/// Σ (N_m / N) · θ_m, accumulated in the given order.
pub fn weighted_average(models: &[(FlatParams, usize)]) -> Result<FlatParams> {
    let (head, _) = models
        .first()
        .ok_or_else(|| Error::Argument("nothing to average".into()))?;
    let p = head.len();
    if models.iter().any(|(m, _)| m.len() != p) {
        return Err(Error::Dimension(
            "models disagree on parameter count".into(),
        ));
    }
    let total: usize = models.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::Argument("total sample count is zero".into()));
    }
    let mut out = vec![0.0; p];
    for (model, n) in models {
        let share = *n as f64 / total as f64;
        for (o, v) in out.iter_mut().zip(model.as_slice()) {
            *o += share * v;
        }
    }
    FlatParams::new(out)
}
