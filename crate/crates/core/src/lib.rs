//! Federated learning where clients and server exchange K-means codebooks
//! of the model weights, and only periodically the cluster indices.
//!
//! Every message passes through a [`ByteLedger`], so transmitted volumes
//! and reduction ratios are exact bit counts rather than estimates.

pub mod accounting;
pub mod clustering;
mod error;
pub mod experiment;
pub mod model;
pub mod partition;
pub mod protocol;
pub mod seed;

pub use accounting::{
    dtr_empirical, dtr_theoretical, message_bits, ByteLedger, Direction, DtrReport,
};
pub use clustering::{kmeans_fit, Codebook, CompressedWeights, KMeansConfig};
pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, Method, RunReport};
pub use model::{FlatParams, LabeledDataset, Mlp, ModelSpec, TrainConfig};
pub use protocol::{MessageKind, Schedule, TransferMsg};
