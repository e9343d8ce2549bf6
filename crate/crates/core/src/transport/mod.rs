//! Submission path and NIC ordering machinery.
//!
//! GPU threads enqueue [`WorkRequest`]s into a per-PE [`ProxyChannel`]; the proxy
//! drains it in FIFO order into the PE's [`Nic`], which keeps one in-order
//! [`NicConnection`] per (local PE, remote PE, QP index). Ordering between a put
//! and the signal announcing it is enforced either by a proxy-side drain or by a
//! per-request fence flag that the NIC honors within one connection only.

mod heap;
mod link;
mod nic;
mod proxy;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::sim::SimTime;

pub use heap::{Extent, SymmetricHeap};
pub use link::SharedLink;
pub use nic::{ConnKey, Nic, NicConnection, NicReleased};
pub use proxy::{DrainAction, FenceMode, ProxyChannel, ProxyStats};

pub type PeId = u32;
pub type ReqId = u64;

/// Size of a signal flag word in bytes.
pub const SIGNAL_BYTES: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReqKind {
    Put,
    Signal,
    FenceMarker,
}

/// One proxy/NIC submission unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkRequest {
    pub id: ReqId,
    pub kind: ReqKind,
    pub src_pe: PeId,
    pub dst_pe: PeId,
    /// Payload bytes for puts, [`SIGNAL_BYTES`] for signals, 0 for fence markers.
    pub size: u64,
    /// NIC-side ordering bit. Never set on a fence marker.
    pub fence_flag: bool,
    pub group_id: Option<u32>,
    /// For a put, the payload it carries; for a signal, the put it announces.
    pub tile_id: Option<u64>,
    /// Position in the owning channel's FIFO, assigned on submit (1-based).
    pub submit_seq: u64,
    /// QP index chosen when the request is routed to the NIC.
    pub qp: Option<u32>,
}

impl WorkRequest {
    pub fn put(id: ReqId, src_pe: PeId, dst_pe: PeId, size: u64, tile_id: u64) -> Self {
        Self {
            id,
            kind: ReqKind::Put,
            src_pe,
            dst_pe,
            size,
            fence_flag: false,
            group_id: None,
            tile_id: Some(tile_id),
            submit_seq: 0,
            qp: None,
        }
    }

    pub fn signal(id: ReqId, src_pe: PeId, dst_pe: PeId, tile_id: u64) -> Self {
        Self {
            id,
            kind: ReqKind::Signal,
            src_pe,
            dst_pe,
            size: SIGNAL_BYTES,
            fence_flag: false,
            group_id: None,
            tile_id: Some(tile_id),
            submit_seq: 0,
            qp: None,
        }
    }

    pub fn fence(id: ReqId, src_pe: PeId) -> Self {
        Self {
            id,
            kind: ReqKind::FenceMarker,
            src_pe,
            dst_pe: src_pe,
            size: 0,
            fence_flag: false,
            group_id: None,
            tile_id: None,
            submit_seq: 0,
            qp: None,
        }
    }

    pub fn with_group(mut self, group: u32) -> Self {
        self.group_id = Some(group);
        self
    }
}

/// Timing parameters of the network path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyModel {
    /// Unloaded round trip from service start to completion notification, ns.
    pub base_rtt: u64,
    /// Injection bandwidth of one NIC, bytes per ns.
    pub bandwidth: f64,
    /// Growth of the round trip per additional active destination.
    pub completion_tail_coeff: f64,
    /// Doorbell/WQE processing per request; serialized per NIC, ns.
    pub per_request_nic_service: u64,
    /// Proxy re-check interval while a fence drains, ns.
    pub proxy_poll_quantum: u64,
    /// Transmissions sharing the injection link at once; later ones queue.
    pub link_concurrency: u32,
    /// Largest share of the bandwidth a single transmission can use.
    pub flow_fraction: f64,
    /// What a fence-flagged request holds back while it waits.
    pub fence_stall: FenceStall,
    /// Under `FenceStall::Engine`, stalled flagged requests set aside before
    /// the engine blocks.
    pub parked_fences: u32,
    /// Which destinations count towards the contention term.
    pub contention: ContentionScope,
}

/// Reach of a NIC-side fence stall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FenceStall {
    /// Only later requests on the same connection wait.
    Connection,
    /// The NIC releases requests in posting order, so once its parking
    /// slots are full every later request waits.
    Engine,
}

/// How D, the number of other active destinations, is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentionScope {
    /// Distinct remote destinations the sender targets in the whole dispatch.
    Dispatch,
    /// Distinct destinations with requests at the NIC and not yet completed.
    InFlight,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self::slingshot_like()
    }
}

impl LatencyModel {
    /// Calibrated preset for a proxy-based dragonfly fabric.
    ///
    /// Chosen so that the per-PE drain time of 96 coupled 4 KB transfers grows
    /// between 4x and 8x from 2 to 8 nodes (see the calibration section of the README).
    pub fn slingshot_like() -> Self {
        Self {
            base_rtt: 1200,
            bandwidth: 12.5,
            completion_tail_coeff: 0.45,
            per_request_nic_service: 30,
            proxy_poll_quantum: 500,
            link_concurrency: 4,
            flow_fraction: 0.8,
            fence_stall: FenceStall::Engine,
            parked_fences: 0,
            contention: ContentionScope::Dispatch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(SimError::config("bandwidth must be positive"));
        }
        if !(self.completion_tail_coeff >= 0.0 && self.completion_tail_coeff.is_finite()) {
            return Err(SimError::config("completion_tail_coeff must be >= 0"));
        }
        if self.link_concurrency == 0 {
            return Err(SimError::config("link_concurrency must be >= 1"));
        }
        if !(self.flow_fraction > 0.0 && self.flow_fraction <= 1.0) {
            return Err(SimError::config("flow_fraction must be in (0, 1]"));
        }
        if self.proxy_poll_quantum == 0 {
            return Err(SimError::config("proxy_poll_quantum must be >= 1 ns"));
        }
        Ok(())
    }

    /// Propagation part of the round trip for `contention` extra active destinations.
    pub fn propagation(&self, contention: u32) -> u64 {
        (self.base_rtt as f64 * (1.0 + self.completion_tail_coeff * contention as f64)).floor()
            as u64
    }

    /// Serialization time of `bytes` on an otherwise idle link.
    pub fn serialization(&self, bytes: u64) -> f64 {
        bytes as f64 / self.bandwidth
    }
}

/// Latency from service start to completion notification on an idle link:
/// `base_rtt * (1 + c * D) + size / bandwidth`, floored to whole nanoseconds.
///
/// `contention` is D, the number of distinct remote destinations active for the
/// sender besides the request's own.
pub fn transfer_completion_time(
    req: &WorkRequest,
    model: &LatencyModel,
    contention: u32,
) -> Result<SimTime> {
    if req.kind == ReqKind::FenceMarker {
        return Err(SimError::model(
            "fence markers have no transfer time; they never reach the wire",
        ));
    }
    let t = model.base_rtt as f64 * (1.0 + model.completion_tail_coeff * contention as f64)
        + model.serialization(req.size);
    Ok(t.floor() as SimTime)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpPolicy {
    RoundRobin,
    PeerHash,
}

/// Per-channel QP chooser.
#[derive(Debug, Clone)]
pub struct QpSelector {
    policy: QpPolicy,
    num_qps: u32,
    counter: u64,
}

impl QpSelector {
    pub fn new(policy: QpPolicy, num_qps: u32) -> Result<Self> {
        if num_qps == 0 {
            return Err(SimError::config("num_qps must be >= 1"));
        }
        Ok(Self {
            policy,
            num_qps,
            counter: 0,
        })
    }

    pub fn policy(&self) -> QpPolicy {
        self.policy
    }

    pub fn num_qps(&self) -> u32 {
        self.num_qps
    }

    pub fn select(&mut self, peer: PeId) -> u32 {
        select_qp(self.policy, peer, self.num_qps, &mut self.counter)
    }
}

/// `PeerHash` pins a peer to `peer % num_qps`; `RoundRobin` rotates a counter
/// that advances on every call regardless of peer.
pub fn select_qp(policy: QpPolicy, peer: PeId, num_qps: u32, counter: &mut u64) -> u32 {
    debug_assert!(num_qps >= 1);
    match policy {
        QpPolicy::PeerHash => peer % num_qps,
        QpPolicy::RoundRobin => {
            let qp = (*counter % num_qps as u64) as u32;
            *counter += 1;
            qp
        }
    }
}

/// Outstanding (submitted, not yet completed) remote requests of one sender, per destination.
#[derive(Debug, Clone, Default)]
pub struct DestinationTracker {
    per_dst: BTreeMap<PeId, u32>,
}

impl DestinationTracker {
    pub fn add(&mut self, dst: PeId) {
        *self.per_dst.entry(dst).or_default() += 1;
    }

    pub fn remove(&mut self, dst: PeId) {
        if let Some(n) = self.per_dst.get_mut(&dst) {
            *n -= 1;
            if *n == 0 {
                self.per_dst.remove(&dst);
            }
        }
    }

    pub fn active(&self) -> usize {
        self.per_dst.len()
    }

    /// D for a request to `dst`: active destinations including `dst`, minus one.
    pub fn contention_for(&self, dst: PeId) -> u32 {
        let n = self.per_dst.len() + usize::from(!self.per_dst.contains_key(&dst));
        (n - 1) as u32
    }
}
