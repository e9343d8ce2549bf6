use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::sim::SimTime;

use super::{PeId, QpPolicy, QpSelector, ReqKind, WorkRequest};

/// How the proxy honors a fence marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FenceMode {
    /// Stop draining until every outstanding request has completed.
    ProxyFence,
    /// Remember the fence and attach a NIC fence flag to the next signal(s).
    NicFence,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProxyStats {
    pub fences_seen: u64,
    pub block_episodes: u64,
    pub blocked_total: u64,
    pub per_fence_drain: Vec<u64>,
    pub flagged_signals: u64,
}

/// What one drain step did.
#[derive(Debug, Clone, PartialEq)]
pub enum DrainAction {
    /// FIFO empty.
    Idle,
    /// A put or signal left the FIFO for the NIC (QP assigned, flag possibly set).
    Forward(WorkRequest),
    /// A fence marker left the FIFO. `drained` is the blocking time it cost, if any.
    FenceRetired { drained: Option<(SimTime, SimTime)> },
    /// The head fence must wait; re-check after one poll quantum.
    Blocked { began: bool },
}

/// The single host-resident FIFO of one PE and the proxy thread draining it.
#[derive(Debug, Clone)]
pub struct ProxyChannel {
    pe: PeId,
    fifo: VecDeque<WorkRequest>,
    next_seq: u64,
    outstanding_puts: u64,
    outstanding_signals: u64,
    pending_fence: bool,
    /// Connections that already carried a flagged signal since the last NIC-side fence.
    flagged_since_fence: BTreeSet<(PeId, u32)>,
    blocked_since: Option<SimTime>,
    selector: QpSelector,
    /// When false a proxy fence waits only for puts.
    fence_waits_on_signals: bool,
    /// Test hook: retire fence markers without waiting or flagging.
    ignore_fences: bool,
    pub stats: ProxyStats,
}

impl ProxyChannel {
    pub fn new(pe: PeId, policy: QpPolicy, num_qps: u32) -> Result<Self> {
        Ok(Self {
            pe,
            fifo: VecDeque::new(),
            next_seq: 0,
            outstanding_puts: 0,
            outstanding_signals: 0,
            pending_fence: false,
            flagged_since_fence: BTreeSet::new(),
            blocked_since: None,
            selector: QpSelector::new(policy, num_qps)?,
            fence_waits_on_signals: true,
            ignore_fences: false,
            stats: ProxyStats::default(),
        })
    }

    pub fn with_fence_waits_on_signals(mut self, yes: bool) -> Self {
        self.fence_waits_on_signals = yes;
        self
    }

    pub fn with_ignored_fences(mut self, yes: bool) -> Self {
        self.ignore_fences = yes;
        self
    }

    pub fn pe(&self) -> PeId {
        self.pe
    }

    pub fn len(&self) -> usize {
        self.fifo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fifo.is_empty()
    }

    pub fn fifo(&self) -> impl Iterator<Item = &WorkRequest> {
        self.fifo.iter()
    }

    pub fn outstanding(&self) -> u64 {
        self.outstanding_puts + self.outstanding_signals
    }

    pub fn outstanding_puts(&self) -> u64 {
        self.outstanding_puts
    }

    pub fn pending_fence(&self) -> bool {
        self.pending_fence
    }

    pub fn is_blocked(&self) -> bool {
        self.blocked_since.is_some()
    }

    /// Append `req` to the FIFO. Does not advance time.
    pub fn submit(&mut self, mut req: WorkRequest) -> Result<u64> {
        if req.src_pe != self.pe {
            return Err(SimError::model(format!(
                "request from PE {} submitted to the channel of PE {}",
                req.src_pe, self.pe
            )));
        }
        if req.kind == ReqKind::FenceMarker && req.fence_flag {
            return Err(SimError::model("fence markers never carry a fence flag"));
        }
        self.next_seq += 1;
        req.submit_seq = self.next_seq;
        self.fifo.push_back(req);
        Ok(self.next_seq)
    }

    /// A request this channel forwarded has completed at the NIC.
    pub fn on_completion(&mut self, kind: ReqKind) -> Result<()> {
        let slot = match kind {
            ReqKind::Put => &mut self.outstanding_puts,
            ReqKind::Signal => &mut self.outstanding_signals,
            ReqKind::FenceMarker => return Err(SimError::model("fence markers never complete")),
        };
        *slot = slot
            .checked_sub(1)
            .ok_or_else(|| SimError::model("completion without an outstanding request"))?;
        Ok(())
    }

    fn drain_done(&self) -> bool {
        if self.fence_waits_on_signals {
            self.outstanding() == 0
        } else {
            self.outstanding_puts == 0
        }
    }

    /// Process the FIFO head at time `now`.
    pub fn drain_step(&mut self, mode: FenceMode, now: SimTime) -> DrainAction {
        let Some(head) = self.fifo.front() else {
            return DrainAction::Idle;
        };
        match head.kind {
            ReqKind::FenceMarker => {
                if self.ignore_fences {
                    self.fifo.pop_front();
                    return DrainAction::FenceRetired { drained: None };
                }
                match mode {
                    FenceMode::ProxyFence => {
                        if !self.drain_done() {
                            let began = self.blocked_since.is_none();
                            if began {
                                self.blocked_since = Some(now);
                                self.stats.block_episodes += 1;
                            }
                            return DrainAction::Blocked { began };
                        }
                        self.fifo.pop_front();
                        self.stats.fences_seen += 1;
                        let drained = self.blocked_since.take().map(|start| {
                            let d = now - start;
                            self.stats.blocked_total += d;
                            self.stats.per_fence_drain.push(d);
                            (start, now)
                        });
                        if drained.is_none() {
                            self.stats.per_fence_drain.push(0);
                        }
                        DrainAction::FenceRetired { drained }
                    }
                    FenceMode::NicFence => {
                        self.fifo.pop_front();
                        self.stats.fences_seen += 1;
                        self.pending_fence = true;
                        self.flagged_since_fence.clear();
                        DrainAction::FenceRetired { drained: None }
                    }
                }
            }
            ReqKind::Put => {
                let mut req = self.fifo.pop_front().expect("head exists");
                req.qp = Some(self.selector.select(req.dst_pe));
                self.outstanding_puts += 1;
                DrainAction::Forward(req)
            }
            ReqKind::Signal => {
                let mut req = self.fifo.pop_front().expect("head exists");
                let qp = self.selector.select(req.dst_pe);
                req.qp = Some(qp);
                // Later signals on an already-flagged connection are ordered behind
                // the flagged one by the connection itself.
                if self.pending_fence && self.flagged_since_fence.insert((req.dst_pe, qp)) {
                    req.fence_flag = true;
                    self.stats.flagged_signals += 1;
                }
                self.outstanding_signals += 1;
                DrainAction::Forward(req)
            }
        }
    }
}
