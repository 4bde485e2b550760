//! The federated server: FedAvg baseline and the FedFV round.
//!
//! A FedFV round samples clients, lets survivors of dropout train locally,
//! records their pseudo-gradients in the [`GradientHistory`], orders them by
//! training loss, removes internal conflicts by sequential projection,
//! removes conflicts with stale gradients of absent clients, and finally
//! rescales the update to the length of the plain mean before applying it.

mod mitigation;
mod sampling;
mod server;

pub use mitigation::{
    arrange_order, build_projecting_order, conflict_pairs, mitigate_external, mitigate_internal,
    plain_mean, project_sequentially, projected_count, ExternalOutcome, GradientHistory,
    HistoryEntry, InternalOutcome, OrderMode, ProjectingOrder,
};
pub use sampling::{apply_dropout, sample_clients};
pub use server::{
    fedavg_aggregate, fedfv_aggregate, Algorithm, ClientLoss, FedFvAggregate, FedFvConfig,
    FederatedRun, RoundLog, RunSettings,
};
