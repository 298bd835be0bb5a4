//! Codebook-transfer federated learning: the server round loop, the client
//! update procedure, and the transmission schedule that decides when
//! compressed weights travel with the codebook.

mod baseline;
mod client;
mod engine;
mod message;
mod schedule;
mod server;

pub use baseline::{run_fedavg, run_fedavg_ws};
pub use client::{client_update, ClientContext, ClientState};
pub(crate) use engine::in_pool;
pub use engine::{
    run_fedcode, run_fedcode_observed, sample_clients, Federation, MessageEvent, RoundRecord,
    SimulationConfig, SimulationOutput,
};
pub use message::{MessageKind, TransferMsg};
pub use schedule::{downlink_kind, uplink_kind, Period, Schedule};
pub use server::{server_aggregate, server_broadcast, weighted_average, ServerState};
