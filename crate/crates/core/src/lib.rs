//! Discrete-event model of GPU-initiated put-with-signal communication.
//!
//! The crate simulates device-initiated one-sided transfers flowing through a
//! per-PE proxy FIFO (or straight to the NIC on GPU-direct transports), the NIC's
//! per-connection ordering machinery, and an MoE dispatch workload with
//! tile-level receive-side compute. Four signaling protocols are provided:
//!
//! * coupled put+fence+signal with proxy-side drains (the vanilla baseline),
//! * decoupled signaling, where leaders issue one fence per group of puts,
//! * NIC-side ordering, where the fence becomes a per-request hardware flag,
//! * both mechanisms combined.
//!
//! [`metrics`] turns the resulting [`trace::RunTrace`] into fence accounting,
//! signaling efficiency, alpha-beta fits and ordering verdicts.

pub mod error;
pub mod metrics;
pub mod protocols;
pub mod sim;
pub mod trace;
pub mod transport;
pub mod workload;

pub use error::{Result, SimError};
pub use protocols::{run_dispatch, Ordering, ProtocolConfig, Signaling, TransportKind};
pub use trace::RunTrace;
pub use transport::{LatencyModel, QpPolicy};
pub use workload::{ClusterConfig, DispatchWorkload, ModelConfig};
