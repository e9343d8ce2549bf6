use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use crate::sim::SimTime;

use super::ReqId;

/// A NIC injection link shared fairly by the transmissions in progress.
///
/// At most `max_active` transmissions are on the wire at once; later ones wait
/// in arrival order. With `n` active transmissions each receives
/// `bandwidth / max(n, min_share)`, so a single transmission can be held below
/// the full link rate while enough concurrent ones still saturate it. Progress is kept
/// as the cumulative bytes one continuously active transmission would have
/// received (`attained`), so each transmission finishes when `attained` reaches
/// its start value plus its size. A lone transmission therefore takes exactly
/// `size / bandwidth` when `min_share` is 1.
#[derive(Debug, Clone)]
pub struct SharedLink {
    bandwidth: f64,
    attained: f64,
    last_update: SimTime,
    active: BinaryHeap<Pending>,
    waiting: VecDeque<(ReqId, u64)>,
    max_active: usize,
    min_share: f64,
    next_seq: u64,
    /// Bumped whenever the projected next finish changes.
    version: u64,
}

#[derive(Debug, Clone)]
struct Pending {
    finish_at: f64,
    seq: u64,
    req: ReqId,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    // min-heap on (finish_at, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .finish_at
            .total_cmp(&self.finish_at)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

// Slack for accumulated floating point error when deciding a transmission is done.
const DONE_EPS: f64 = 1e-6;

impl SharedLink {
    /// A link with unlimited concurrent transmissions.
    pub fn new(bandwidth: f64) -> Self {
        Self::with_max_active(bandwidth, usize::MAX)
    }

    pub fn with_max_active(bandwidth: f64, max_active: usize) -> Self {
        Self::with_limits(bandwidth, max_active, 1.0)
    }

    /// `flow_fraction` is the largest share of `bandwidth` one transmission may use.
    pub fn with_limits(bandwidth: f64, max_active: usize, flow_fraction: f64) -> Self {
        Self {
            bandwidth,
            attained: 0.0,
            last_update: 0,
            active: BinaryHeap::new(),
            waiting: VecDeque::new(),
            max_active: max_active.max(1),
            min_share: 1.0 / flow_fraction.clamp(f64::MIN_POSITIVE, 1.0),
            next_seq: 0,
            version: 0,
        }
    }

    pub fn active(&self) -> usize {
        self.active.len()
    }

    pub fn waiting(&self) -> usize {
        self.waiting.len()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    fn advance(&mut self, now: SimTime) {
        debug_assert!(now >= self.last_update);
        let n = self.active.len();
        if n > 0 {
            self.attained += self.bandwidth * (now - self.last_update) as f64 / self.shares(n);
        }
        self.last_update = now;
    }

    fn shares(&self, n: usize) -> f64 {
        (n as f64).max(self.min_share)
    }

    /// Start transmitting `bytes` for `req` at `now`.
    pub fn start(&mut self, now: SimTime, req: ReqId, bytes: u64) {
        self.advance(now);
        if self.active.len() >= self.max_active {
            self.waiting.push_back((req, bytes));
            return;
        }
        self.admit(req, bytes);
        self.version += 1;
    }

    fn admit(&mut self, req: ReqId, bytes: u64) {
        self.active.push(Pending {
            finish_at: self.attained + bytes as f64,
            seq: self.next_seq,
            req,
        });
        self.next_seq += 1;
    }

    /// Remove and return every transmission finished by `now`, in finish order.
    pub fn finish_due(&mut self, now: SimTime) -> Vec<ReqId> {
        self.advance(now);
        let mut done = Vec::new();
        while let Some(top) = self.active.peek() {
            if top.finish_at <= self.attained + DONE_EPS {
                done.push(self.active.pop().expect("peeked").req);
            } else {
                break;
            }
        }
        if !done.is_empty() {
            while self.active.len() < self.max_active {
                let Some((req, bytes)) = self.waiting.pop_front() else {
                    break;
                };
                self.admit(req, bytes);
            }
            self.version += 1;
        }
        done
    }

    /// Projected time of the next finishing transmission given the current active set.
    pub fn next_finish(&self) -> Option<SimTime> {
        let top = self.active.peek()?;
        let n = self.shares(self.active.len());
        let remaining = (top.finish_at - self.attained).max(0.0);
        let dt = (remaining * n / self.bandwidth).ceil() as SimTime;
        Some(self.last_update + dt)
    }
}
