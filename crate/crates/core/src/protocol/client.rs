use crate::clustering::{decompress, kmeans_fit, snap, KMeansConfig};
use crate::error::{Error, Result};
use crate::model::{FlatParams, LabeledDataset, Mlp, TrainConfig};

use super::message::{MessageKind, TransferMsg};
use super::schedule::Schedule;

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub client_id: usize,
    pub local_params: FlatParams,
    pub dataset: LabeledDataset,
}

impl ClientState {
    pub fn new(client_id: usize, local_params: FlatParams, dataset: LabeledDataset) -> Self {
        ClientState {
            client_id,
            local_params,
            dataset,
        }
    }

    /// N_m, the client's sample count.
    pub fn sample_count(&self) -> usize {
        self.dataset.len()
    }
}

/// Everything a client needs besides its own state.
#[derive(Debug, Clone, Copy)]
pub struct ClientContext<'a> {
    pub model: &'a Mlp,
    pub train: &'a TrainConfig,
    pub kmeans: &'a KMeansConfig,
    pub schedule: &'a Schedule,
}

/// Applies the downlink, trains locally, re-clusters and builds the uplink.
pub fn client_update(
    state: &ClientState,
    msg: &TransferMsg,
    round: u32,
    ctx: &ClientContext<'_>,
    seed: u64,
) -> Result<(TransferMsg, ClientState)> {
    let p = ctx.model.param_count();
    if state.local_params.len() != p {
        return Err(Error::Dimension(format!(
            "client {} holds {} parameters, model has {p}",
            state.client_id,
            state.local_params.len()
        )));
    }
    msg.validate(Some(p)).map_err(|e| match e {
        Error::CorruptMessage(m) => Error::Protocol(format!("client {}: {m}", state.client_id)),
        other => other,
    })?;

    let received = match msg {
        TransferMsg::CodebookOnly { codebook } => snap(&state.local_params, codebook),
        TransferMsg::CodebookPlusWeights { codebook, weights } => decompress(weights, codebook)?,
    };

    let trained = ctx
        .model
        .local_train(&received, &state.dataset, ctx.train, seed)?;
    let fit = kmeans_fit(&trained, ctx.kmeans)?;
    let local_params = fit.snapped();

    let uplink = match ctx.schedule.uplink_kind(round) {
        MessageKind::CodebookPlusWeights => TransferMsg::CodebookPlusWeights {
            codebook: fit.codebook,
            weights: fit.weights,
        },
        MessageKind::CodebookOnly => TransferMsg::CodebookOnly {
            codebook: fit.codebook,
        },
    };
    Ok((
        uplink,
        ClientState {
            local_params,
            ..state.clone()
        },
    ))
}
