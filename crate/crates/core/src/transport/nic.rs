use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::sim::SimTime;

use super::{PeId, ReqId, SharedLink, WorkRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConnKey {
    pub local: PeId,
    pub remote: PeId,
    pub qp: u32,
}

/// An in-order pipeline to one remote PE on one QP.
#[derive(Debug, Clone)]
pub struct NicConnection {
    pub key: ConnKey,
    pipeline: VecDeque<WorkRequest>,
    /// Released for service and not yet completed.
    in_flight: u32,
    /// Completions are delivered in submission order (RC-style placement).
    ordered: bool,
    ordered_pending: VecDeque<(ReqId, Option<SimTime>)>,
    last_delivery: SimTime,
    blocked_since: Option<SimTime>,
    pub block_episodes: u64,
}

impl NicConnection {
    fn new(key: ConnKey, ordered: bool) -> Self {
        Self {
            key,
            pipeline: VecDeque::new(),
            in_flight: 0,
            ordered,
            ordered_pending: VecDeque::new(),
            last_delivery: 0,
            blocked_since: None,
            block_episodes: 0,
        }
    }

    pub fn queued(&self) -> usize {
        self.pipeline.len()
    }

    pub fn in_flight(&self) -> u32 {
        self.in_flight
    }

    /// Head carries a fence flag and earlier requests are still in flight.
    pub fn blocked_head(&self) -> bool {
        self.pipeline
            .front()
            .is_some_and(|h| h.fence_flag && self.in_flight > 0)
    }
}

/// Effect of advancing one connection.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NicReleased {
    pub released: usize,
    pub block_began: bool,
    /// `(begin, end)` of a head-of-line fence stall that just ended.
    pub block_ended: Option<(SimTime, SimTime)>,
}

#[derive(Debug, Clone)]
struct InService {
    conn: usize,
    req: WorkRequest,
    contention: u32,
}

/// The NIC of one PE: its connections, the serialized WQE engine and the injection link.
#[derive(Debug, Clone)]
pub struct Nic {
    pe: PeId,
    ordered: bool,
    connections: Vec<NicConnection>,
    index: BTreeMap<ConnKey, usize>,
    wqe_queue: VecDeque<(usize, WorkRequest)>,
    /// Connection of every submitted, unreleased request in posting order;
    /// only kept when a stalled fence holds back the whole engine.
    posted: Option<VecDeque<usize>>,
    /// Stalled flagged requests the engine sets aside before it blocks.
    parking: usize,
    wqe_busy: bool,
    in_service: BTreeMap<ReqId, InService>,
    pub link: SharedLink,
}

impl Nic {
    pub fn new(pe: PeId, bandwidth: f64, ordered: bool) -> Self {
        Self::with_link(pe, SharedLink::new(bandwidth), ordered)
    }

    pub fn with_link(pe: PeId, link: SharedLink, ordered: bool) -> Self {
        Self {
            pe,
            ordered,
            connections: Vec::new(),
            index: BTreeMap::new(),
            wqe_queue: VecDeque::new(),
            posted: None,
            parking: 0,
            wqe_busy: false,
            in_service: BTreeMap::new(),
            link,
        }
    }

    /// Release requests in posting order across connections. Up to `parking`
    /// stalled flagged requests are set aside; one more holds back every
    /// later request.
    pub fn with_head_of_line(mut self, parking: usize) -> Self {
        self.posted = Some(VecDeque::new());
        self.parking = parking;
        self
    }

    pub fn pe(&self) -> PeId {
        self.pe
    }

    pub fn connection(&self, idx: usize) -> &NicConnection {
        &self.connections[idx]
    }

    pub fn connections(&self) -> &[NicConnection] {
        &self.connections
    }

    pub fn connection_for(&mut self, remote: PeId, qp: u32) -> usize {
        let key = ConnKey {
            local: self.pe,
            remote,
            qp,
        };
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        let i = self.connections.len();
        self.connections.push(NicConnection::new(key, self.ordered));
        self.index.insert(key, i);
        i
    }

    /// Append `req` to its connection and release whatever is eligible.
    pub fn submit(&mut self, conn: usize, req: WorkRequest, now: SimTime) -> NicReleased {
        self.connections[conn].pipeline.push_back(req);
        if let Some(posted) = self.posted.as_mut() {
            posted.push_back(conn);
        }
        self.advance(conn, now)
    }

    /// Release heads until the pipeline is empty or a flagged head must wait.
    pub fn advance(&mut self, conn: usize, now: SimTime) -> NicReleased {
        let mut out = NicReleased::default();
        match self.posted.take() {
            None => while self.release_head(conn, now, &mut out) {},
            Some(mut posted) => {
                let mut parked: Vec<usize> = Vec::new();
                let mut i = 0;
                while i < posted.len() {
                    let c = posted[i];
                    if parked.contains(&c) {
                        i += 1;
                    } else if self.release_head(c, now, &mut out) {
                        posted.remove(i);
                    } else if parked.len() < self.parking {
                        parked.push(c);
                        i += 1;
                    } else {
                        break;
                    }
                }
                self.posted = Some(posted);
            }
        }
        out
    }

    fn release_head(&mut self, conn: usize, now: SimTime, out: &mut NicReleased) -> bool {
        let c = &mut self.connections[conn];
        let Some(head) = c.pipeline.front() else {
            return false;
        };
        if head.fence_flag && c.in_flight > 0 {
            if c.blocked_since.is_none() {
                c.blocked_since = Some(now);
                c.block_episodes += 1;
                out.block_began = true;
            }
            return false;
        }
        if let Some(start) = c.blocked_since.take() {
            out.block_ended = Some((start, now));
        }
        let req = c.pipeline.pop_front().expect("head exists");
        c.in_flight += 1;
        if c.ordered {
            c.ordered_pending.push_back((req.id, None));
        }
        self.wqe_queue.push_back((conn, req));
        out.released += 1;
        true
    }

    /// Start the next WQE if the engine is idle. The caller records `contention`
    /// (computed at service start) and schedules the end of WQE processing.
    pub fn start_wqe(&mut self, contention: impl Fn(&WorkRequest) -> u32) -> Option<WorkRequest> {
        if self.wqe_busy {
            return None;
        }
        let (conn, req) = self.wqe_queue.pop_front()?;
        self.wqe_busy = true;
        let d = contention(&req);
        self.in_service.insert(
            req.id,
            InService {
                conn,
                req: req.clone(),
                contention: d,
            },
        );
        Some(req)
    }

    pub fn wqe_done(&mut self) {
        self.wqe_busy = false;
    }

    pub fn wqe_busy(&self) -> bool {
        self.wqe_busy
    }

    pub fn request(&self, id: ReqId) -> Option<&WorkRequest> {
        self.in_service.get(&id).map(|s| &s.req)
    }

    pub fn contention_of(&self, id: ReqId) -> Option<u32> {
        self.in_service.get(&id).map(|s| s.contention)
    }

    pub fn conn_of(&self, id: ReqId) -> Option<usize> {
        self.in_service.get(&id).map(|s| s.conn)
    }

    /// The transmission of `id` finished and its notification is due at `due`.
    /// Returns the `(request, delivery time)` pairs now ready to be scheduled;
    /// ordered connections hold back later requests until earlier ones are known.
    pub fn delivery_known(&mut self, id: ReqId, due: SimTime) -> Result<Vec<(ReqId, SimTime)>> {
        let conn = self
            .conn_of(id)
            .ok_or_else(|| SimError::model(format!("request {id} is not in service")))?;
        let c = &mut self.connections[conn];
        if !c.ordered {
            return Ok(vec![(id, due)]);
        }
        let slot = c
            .ordered_pending
            .iter_mut()
            .find(|(r, _)| *r == id)
            .ok_or_else(|| SimError::model(format!("request {id} missing from ordered queue")))?;
        slot.1 = Some(due);
        let mut ready = Vec::new();
        while let Some(&(r, Some(t))) = c.ordered_pending.front() {
            let at = t.max(c.last_delivery);
            c.last_delivery = at;
            ready.push((r, at));
            c.ordered_pending.pop_front();
        }
        Ok(ready)
    }

    /// Retire a completed request; returns it with its connection index.
    pub fn complete(&mut self, id: ReqId) -> Result<(usize, WorkRequest)> {
        let s = self
            .in_service
            .remove(&id)
            .ok_or_else(|| SimError::model(format!("completion for unknown request {id}")))?;
        let c = &mut self.connections[s.conn];
        c.in_flight = c
            .in_flight
            .checked_sub(1)
            .ok_or_else(|| SimError::model("connection in_flight underflow"))?;
        Ok((s.conn, s.req))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::ReqKind;

    fn flagged_signal(id: ReqId, dst: PeId) -> WorkRequest {
        let mut s = WorkRequest::signal(id, 0, dst, id);
        s.fence_flag = true;
        s
    }

    fn drain_wqes(nic: &mut Nic) -> Vec<ReqId> {
        let mut ids = Vec::new();
        while let Some(r) = nic.start_wqe(|_| 0) {
            ids.push(r.id);
            nic.wqe_done();
        }
        ids
    }

    #[test]
    fn put_on_empty_connection_enters_service() {
        let mut nic = Nic::new(0, 10.0, false);
        let c = nic.connection_for(4, 0);
        let r = nic.submit(c, WorkRequest::put(1, 0, 4, 4096, 1), 0);
        assert_eq!(r.released, 1);
        assert_eq!(drain_wqes(&mut nic), [1]);
    }

    #[test]
    fn flagged_signal_waits_behind_in_flight_puts() {
        let mut nic = Nic::new(0, 10.0, false);
        let c = nic.connection_for(4, 0);
        nic.submit(c, WorkRequest::put(1, 0, 4, 4096, 1), 0);
        nic.submit(c, WorkRequest::put(2, 0, 4, 4096, 2), 0);
        let r = nic.submit(c, flagged_signal(3, 4), 0);
        assert!(r.block_began);
        assert!(nic.connection(c).blocked_head());
        assert_eq!(drain_wqes(&mut nic), [1, 2]);
        nic.complete(1).unwrap();
        assert_eq!(nic.advance(c, 50).released, 0);
        nic.complete(2).unwrap();
        let r = nic.advance(c, 80);
        assert_eq!(r.released, 1);
        assert_eq!(r.block_ended, Some((0, 80)));
        assert_eq!(nic.connection(c).block_episodes, 1);
    }

    #[test]
    fn flag_only_orders_its_own_connection() {
        let mut nic = Nic::new(0, 10.0, false);
        let qp0 = nic.connection_for(4, 0);
        let qp1 = nic.connection_for(4, 1);
        nic.submit(qp0, WorkRequest::put(1, 0, 4, 4096, 1), 0);
        nic.submit(qp0, WorkRequest::put(2, 0, 4, 4096, 2), 0);
        let r = nic.submit(qp1, flagged_signal(3, 4), 0);
        assert_eq!(r.released, 1);
        assert!(!r.block_began);
    }

    #[test]
    fn unflagged_requests_pipeline() {
        let mut nic = Nic::new(0, 10.0, false);
        let c = nic.connection_for(4, 0);
        nic.submit(c, WorkRequest::put(1, 0, 4, 64, 1), 0);
        let r = nic.submit(c, WorkRequest::put(2, 0, 4, 64, 2), 0);
        assert_eq!(r.released, 1);
        assert_eq!(nic.connection(c).in_flight(), 2);
    }

    #[test]
    fn only_first_flag_stalls_after_puts_finish() {
        let mut nic = Nic::new(0, 10.0, false);
        let c = nic.connection_for(4, 0);
        nic.submit(c, WorkRequest::put(1, 0, 4, 64, 1), 0);
        drain_wqes(&mut nic);
        nic.complete(1).unwrap();
        let r1 = nic.submit(c, flagged_signal(2, 4), 10);
        let r2 = nic.submit(c, WorkRequest::signal(3, 0, 4, 1), 10);
        let r3 = nic.submit(c, WorkRequest::signal(4, 0, 4, 1), 10);
        assert_eq!(r1.released + r2.released + r3.released, 3);
        assert_eq!(nic.connection(c).block_episodes, 0);
    }

    #[test]
    fn ordered_connection_delivers_in_submission_order() {
        let mut nic = Nic::new(0, 10.0, true);
        let c = nic.connection_for(4, 0);
        nic.submit(c, WorkRequest::put(1, 0, 4, 4096, 1), 0);
        nic.submit(c, WorkRequest::signal(2, 0, 4, 1), 0);
        drain_wqes(&mut nic);
        // signal's transmission finishes first but must not overtake the put
        assert!(nic.delivery_known(2, 100).unwrap().is_empty());
        assert_eq!(
            nic.delivery_known(1, 500).unwrap(),
            vec![(1, 500), (2, 500)]
        );
        assert_eq!(nic.request(2).unwrap().kind, ReqKind::Signal);
    }
}
