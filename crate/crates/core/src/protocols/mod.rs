//! The four signaling protocols, signal-group assignment and the dispatch driver.

mod world;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::transport::{FenceMode, PeId, QpPolicy};

pub use world::{run_dispatch, run_dispatch_default};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signaling {
    /// Every transfer is put, fence, signal.
    Coupled,
    /// Puts first; a group leader issues one fence and all of the group's signals.
    Decoupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    ProxyFence,
    NicFence,
}

impl From<Ordering> for FenceMode {
    fn from(o: Ordering) -> Self {
        match o {
            Ordering::ProxyFence => FenceMode::ProxyFence,
            Ordering::NicFence => FenceMode::NicFence,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    /// Requests pass through the host proxy FIFO.
    Proxy,
    /// GPU threads ring the NIC directly; each connection delivers in order.
    GpuDirect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub signaling: Signaling,
    pub ordering: Ordering,
    /// Transfers per signal group; `None` groups by destination PE.
    pub group_size: Option<u32>,
    pub transport: TransportKind,
    pub qp_policy: QpPolicy,
    /// CTA time to stage one put, ns.
    pub issue_cost: u64,
    /// CTA time to issue one signal, ns.
    pub signal_issue_cost: u64,
    /// Extra staging time per request when the GPU drives the NIC itself, ns.
    pub gpu_direct_issue_cost: u64,
    /// Fixed delivery latency of an intra-node transfer, ns.
    pub nvlink_latency: u64,
    /// A proxy fence also waits for outstanding signals.
    pub fence_waits_on_signals: bool,
    /// A leader whose group is not complete computes instead of blocking.
    pub leader_may_compute: bool,
    /// Test hook: the proxy retires fence markers without honoring them.
    pub ignore_fences: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self::vanilla()
    }
}

impl ProtocolConfig {
    pub fn vanilla() -> Self {
        Self {
            signaling: Signaling::Coupled,
            ordering: Ordering::ProxyFence,
            group_size: None,
            transport: TransportKind::Proxy,
            qp_policy: QpPolicy::PeerHash,
            issue_cost: 200,
            signal_issue_cost: 50,
            gpu_direct_issue_cost: 300,
            nvlink_latency: 2_000,
            fence_waits_on_signals: true,
            leader_may_compute: false,
            ignore_fences: false,
        }
    }

    pub fn decoupled(group_size: Option<u32>) -> Self {
        Self {
            signaling: Signaling::Decoupled,
            group_size,
            ..Self::vanilla()
        }
    }

    pub fn nic_ordering() -> Self {
        Self {
            ordering: Ordering::NicFence,
            ..Self::vanilla()
        }
    }

    /// Decoupled signaling with NIC-side ordering.
    pub fn combined() -> Self {
        Self {
            ordering: Ordering::NicFence,
            ..Self::decoupled(None)
        }
    }

    pub fn gpu_direct(signaling: Signaling) -> Self {
        Self {
            signaling,
            transport: TransportKind::GpuDirect,
            ..Self::vanilla()
        }
    }

    pub fn with_group_size(mut self, group_size: Option<u32>) -> Self {
        self.group_size = group_size;
        self
    }

    pub fn with_qp_policy(mut self, policy: QpPolicy) -> Self {
        self.qp_policy = policy;
        self
    }

    /// NIC-side ordering on round-robin QPs cannot order a put against its signal.
    pub fn is_unsafe(&self) -> bool {
        self.transport == TransportKind::Proxy
            && self.ordering == Ordering::NicFence
            && self.qp_policy == QpPolicy::RoundRobin
            || self.ignore_fences
    }

    pub fn label(&self) -> String {
        if self.transport == TransportKind::GpuDirect {
            return match self.signaling {
                Signaling::Coupled => "gpu_direct".into(),
                Signaling::Decoupled => "gpu_direct_decoupled".into(),
            };
        }
        match (self.signaling, self.ordering) {
            (Signaling::Coupled, Ordering::ProxyFence) => "vanilla".into(),
            (Signaling::Decoupled, Ordering::ProxyFence) => "decoupled".into(),
            (Signaling::Coupled, Ordering::NicFence) => "nic_ordering".into(),
            (Signaling::Decoupled, Ordering::NicFence) => "combined".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_size == Some(0) {
            return Err(SimError::config("group_size must be >= 1"));
        }
        Ok(())
    }
}

/// One group of transfers whose signals share a single fence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalGroup {
    pub group_id: u32,
    /// Indices into the sender's sorted remote transfer list.
    pub members: Vec<usize>,
    pub dst_pes: Vec<PeId>,
    pub leader_cta: u32,
    /// Phase-1 puts issued so far.
    pub counter: u32,
    pub target: u32,
}

impl SignalGroup {
    pub fn ready(&self) -> bool {
        self.counter == self.target
    }

    /// Record one Phase-1 put; returns true when the group just became complete.
    pub fn arrive(&mut self) -> Result<bool> {
        if self.counter >= self.target {
            return Err(SimError::model(format!(
                "group {} received more phase-1 puts than members",
                self.group_id
            )));
        }
        self.counter += 1;
        Ok(self.ready())
    }
}

/// CTA that issues transfer `i` of `n`. Each CTA takes a contiguous block;
/// when blocks differ in length the shorter ones come first.
pub fn issuing_cta(i: usize, n: usize, ctas: u32) -> u32 {
    let w = ctas as usize;
    let q = n / w;
    if q == 0 {
        return i as u32;
    }
    let short = w - n % w;
    let cta = if i < short * q {
        i / q
    } else {
        short + (i - short * q) / (q + 1)
    };
    cta as u32
}

/// Partition a sender's remote transfers into signal groups.
///
/// `remote` is `(expert, dst_pe)` in submission order, already sorted by
/// `(dst_pe, expert)`; transfer `i` is issued by [`issuing_cta`]. With a group
/// size, group `g` holds transfers `g*size .. (g+1)*size`; without one, each
/// destination PE forms one group. The leader is the CTA of the first member.
pub fn assign_groups(
    remote: &[(u32, PeId)],
    group_size: Option<u32>,
    ctas: u32,
) -> Result<Vec<SignalGroup>> {
    if ctas == 0 {
        return Err(SimError::config("at least one CTA per PE is required"));
    }
    let mut bounds: Vec<(usize, usize)> = Vec::new();
    match group_size {
        Some(0) => return Err(SimError::config("group_size must be >= 1")),
        Some(g) => {
            let g = g as usize;
            if !remote.len().is_multiple_of(g) {
                return Err(SimError::config(format!(
                    "group size {g} does not divide {} remote transfers",
                    remote.len()
                )));
            }
            bounds.extend((0..remote.len() / g).map(|i| (i * g, (i + 1) * g)));
        }
        None => {
            let mut start = 0;
            for i in 1..=remote.len() {
                if i == remote.len() || remote[i].1 != remote[start].1 {
                    bounds.push((start, i));
                    start = i;
                }
            }
        }
    }
    Ok(bounds
        .into_iter()
        .enumerate()
        .map(|(gid, (lo, hi))| {
            let mut dst_pes: Vec<PeId> = remote[lo..hi].iter().map(|r| r.1).collect();
            dst_pes.dedup();
            SignalGroup {
                group_id: gid as u32,
                members: (lo..hi).collect(),
                dst_pes,
                leader_cta: issuing_cta(lo, remote.len(), ctas),
                counter: 0,
                target: (hi - lo) as u32,
            }
        })
        .collect())
}
