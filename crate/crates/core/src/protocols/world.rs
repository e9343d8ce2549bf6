use std::collections::{BTreeSet, VecDeque};

use sha2::{Digest, Sha256};

use crate::error::{Result, SimError};
use crate::sim::{Scheduler, SimTime};
use crate::trace::{RecordKind, RunMeta, RunTrace, TraceRecord};
use crate::transport::{
    ContentionScope, DestinationTracker, DrainAction, FenceMode, FenceStall, LatencyModel, Nic,
    NicReleased, PeId, ProxyChannel, QpSelector, ReqId, ReqKind, SharedLink, SymmetricHeap,
    WorkRequest,
};
use crate::workload::{DispatchWorkload, Route};

use super::{assign_groups, issuing_cta, ProtocolConfig, SignalGroup, Signaling, TransportKind};

#[derive(Debug, Clone)]
enum Action {
    OpDone { pe: PeId, cta: u32 },
    ProxyPoll { pe: PeId },
    WqeDone { pe: PeId, req: ReqId },
    LinkCheck { pe: PeId, version: u64 },
    Deliver { pe: PeId, req: ReqId },
    Notify { pe: PeId, kind: ReqKind },
    NvlinkArrive { transfer: usize },
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Coupled(usize),
    Phase1(usize, usize),
    Nvlink(usize),
    Phase2(usize),
}

#[derive(Debug, Clone, Copy)]
enum Busy {
    Op(Op),
    Tile(usize),
}

#[derive(Debug, Default)]
struct Cta {
    program: VecDeque<Op>,
    busy: Option<Busy>,
    waiting: Option<usize>,
    deferred: Vec<usize>,
}

struct PeState {
    proxy: Option<ProxyChannel>,
    nic: Nic,
    tracker: DestinationTracker,
    /// Distinct remote destinations of this sender's dispatch.
    fanout: u32,
    selector: QpSelector,
    poll_scheduled: bool,
    ctas: Vec<Cta>,
    idle: BTreeSet<u32>,
    ready_tiles: VecDeque<(usize, u64)>,
    groups: Vec<SignalGroup>,
    /// Sender-side transfer index of each remote list position.
    remote: Vec<usize>,
    last: SimTime,
}

struct World<'a> {
    proto: &'a ProtocolConfig,
    wl: &'a DispatchWorkload,
    lat: &'a LatencyModel,
    sched: Scheduler<Action>,
    pes: Vec<PeState>,
    heap: SymmetricHeap,
    trace: RunTrace,
    /// Transfer index of each request id; `usize::MAX` for fence markers.
    req_transfer: Vec<usize>,
    put_bytes: u64,
    group_base: Vec<u32>,
}

/// Run one dispatch under `protocol` with the default latency preset.
pub fn run_dispatch_default(
    protocol: &ProtocolConfig,
    workload: &DispatchWorkload,
) -> Result<RunTrace> {
    run_dispatch(protocol, workload, &LatencyModel::default())
}

/// Simulate one dispatch of `workload` under `protocol` until every request,
/// signal and dependent compute tile has finished.
pub fn run_dispatch(
    protocol: &ProtocolConfig,
    workload: &DispatchWorkload,
    latency: &LatencyModel,
) -> Result<RunTrace> {
    protocol.validate()?;
    latency.validate()?;
    let mut w = World::new(protocol, workload, latency)?;
    w.start()?;
    while let Some(ev) = w.sched.pop() {
        w.handle(ev.payload)?;
    }
    w.finish()
}

fn config_hash(p: &ProtocolConfig, wl: &DispatchWorkload, lat: &LatencyModel) -> String {
    let text = serde_json::to_string(&(p, lat, wl)).expect("config serializes");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl<'a> World<'a> {
    fn new(
        proto: &'a ProtocolConfig,
        wl: &'a DispatchWorkload,
        lat: &'a LatencyModel,
    ) -> Result<Self> {
        let pes = wl.pes();
        let ctas = wl.compute.processors_per_pe;
        if ctas == 0 {
            return Err(SimError::config("processors_per_pe must be >= 1"));
        }
        let gpu_direct = proto.transport == TransportKind::GpuDirect;
        let mut states = Vec::with_capacity(pes as usize);
        let mut group_base = Vec::with_capacity(pes as usize);
        let mut next_group = 0u32;
        for pe in 0..pes {
            let proxy = if gpu_direct {
                None
            } else {
                Some(
                    ProxyChannel::new(pe, proto.qp_policy, wl.cluster.num_qps)?
                        .with_fence_waits_on_signals(proto.fence_waits_on_signals)
                        .with_ignored_fences(proto.ignore_fences),
                )
            };
            let remote: Vec<usize> = wl
                .transfers
                .iter()
                .enumerate()
                .filter(|(_, t)| t.src == pe && t.route == Route::Remote)
                .map(|(i, _)| i)
                .collect();
            let fanout = remote
                .iter()
                .map(|&i| wl.transfers[i].dst)
                .collect::<BTreeSet<_>>()
                .len() as u32;
            let decoupled = proto.signaling == Signaling::Decoupled && !wl.put_only;
            let groups = if decoupled {
                let keys: Vec<(u32, PeId)> = remote
                    .iter()
                    .map(|&i| (wl.transfers[i].expert, wl.transfers[i].dst))
                    .collect();
                assign_groups(&keys, proto.group_size, ctas)?
            } else {
                Vec::new()
            };
            let mut member_group = vec![0usize; remote.len()];
            for (g, grp) in groups.iter().enumerate() {
                for &m in &grp.members {
                    member_group[m] = g;
                }
            }
            let mut cta_states: Vec<Cta> = (0..ctas).map(|_| Cta::default()).collect();
            for (i, &t) in remote.iter().enumerate() {
                let op = if decoupled {
                    Op::Phase1(t, member_group[i])
                } else {
                    Op::Coupled(t)
                };
                cta_states[issuing_cta(i, remote.len(), ctas) as usize]
                    .program
                    .push_back(op);
                if decoupled {
                    let grp = &groups[member_group[i]];
                    if grp.members.last() == Some(&i) {
                        cta_states[grp.leader_cta as usize]
                            .program
                            .push_back(Op::Phase2(member_group[i]));
                    }
                }
            }
            let nvlink = wl
                .transfers
                .iter()
                .enumerate()
                .filter(|(_, t)| t.src == pe && t.route == Route::Nvlink)
                .map(|(i, _)| i);
            for (j, t) in nvlink.enumerate() {
                cta_states[(remote.len() + j) % ctas as usize]
                    .program
                    .push_back(Op::Nvlink(t));
            }
            group_base.push(next_group);
            next_group += groups.len() as u32;
            let mut nic = Nic::with_link(
                pe,
                SharedLink::with_limits(
                    lat.bandwidth,
                    lat.link_concurrency as usize,
                    lat.flow_fraction,
                ),
                gpu_direct,
            );
            if lat.fence_stall == FenceStall::Engine {
                nic = nic.with_head_of_line(lat.parked_fences as usize);
            }
            states.push(PeState {
                proxy,
                nic,
                tracker: DestinationTracker::default(),
                fanout,
                selector: QpSelector::new(proto.qp_policy, wl.cluster.num_qps)?,
                poll_scheduled: false,
                ctas: cta_states,
                idle: BTreeSet::new(),
                ready_tiles: VecDeque::new(),
                groups,
                remote,
                last: 0,
            });
        }
        let mut trace = RunTrace::default();
        trace.meta.config_hash = config_hash(proto, wl, lat);
        trace.meta.seed = wl.seed;
        Ok(Self {
            proto,
            wl,
            lat,
            sched: Scheduler::new(),
            pes: states,
            heap: SymmetricHeap::new(),
            trace,
            req_transfer: Vec::new(),
            put_bytes: 0,
            group_base,
        })
    }

    fn now(&self) -> SimTime {
        self.sched.now()
    }

    fn record(&mut self, rec: TraceRecord) {
        self.trace.push(rec);
    }

    fn start(&mut self) -> Result<()> {
        let wl = self.wl;
        for (i, t) in wl.transfers.iter().enumerate() {
            if t.route == Route::Local {
                self.heap.write(t.dst, t.offset, t.bytes, t.src, t.id, 0)?;
                self.heap.deliver_signal(t.dst, t.id, 0)?;
                self.tiles_ready(t.dst, i);
            }
        }
        for pe in 0..self.pes.len() {
            for cta in 0..self.pes[pe].ctas.len() {
                if self.pes[pe].ctas[cta].busy.is_none() {
                    self.pes[pe].idle.remove(&(cta as u32));
                    self.cta_next(pe as PeId, cta as u32)?;
                }
            }
        }
        Ok(())
    }

    fn handle(&mut self, action: Action) -> Result<()> {
        match action {
            Action::OpDone { pe, cta } => self.op_done(pe, cta),
            Action::ProxyPoll { pe } => self.proxy_poll(pe),
            Action::WqeDone { pe, req } => self.wqe_done(pe, req),
            Action::LinkCheck { pe, version } => self.link_check(pe, version),
            Action::Deliver { pe, req } => self.deliver(pe, req),
            Action::Notify { pe, kind } => self.notify(pe, kind),
            Action::NvlinkArrive { transfer } => self.nvlink_arrive(transfer),
        }
    }

    fn gd_extra(&self) -> u64 {
        if self.proto.transport == TransportKind::GpuDirect {
            self.proto.gpu_direct_issue_cost
        } else {
            0
        }
    }

    fn op_cost(&self, pe: PeId, op: Op) -> u64 {
        let p = self.proto;
        let gd = self.gd_extra();
        match op {
            Op::Coupled(_) if self.wl.put_only => p.issue_cost + gd,
            Op::Coupled(_) => p.issue_cost + p.signal_issue_cost + 2 * gd,
            Op::Phase1(..) => p.issue_cost + gd,
            Op::Nvlink(_) => p.issue_cost,
            Op::Phase2(g) => {
                let n = self.pes[pe as usize].groups[g].target as u64;
                n * (p.signal_issue_cost + gd)
            }
        }
    }

    fn begin_op(&mut self, pe: PeId, cta: u32, op: Op) -> Result<()> {
        let cost = self.op_cost(pe, op);
        self.pes[pe as usize].ctas[cta as usize].busy = Some(Busy::Op(op));
        self.sched.schedule_in(cost, Action::OpDone { pe, cta })?;
        Ok(())
    }

    fn begin_tile(&mut self, pe: PeId, cta: u32, transfer: usize, ns: u64) -> Result<()> {
        let now = self.now();
        let tile = self.wl.transfers[transfer].id;
        self.record(TraceRecord::for_tile(
            now,
            pe,
            RecordKind::ComputeStart,
            tile,
        ));
        self.pes[pe as usize].ctas[cta as usize].busy = Some(Busy::Tile(transfer));
        self.sched.schedule_in(ns, Action::OpDone { pe, cta })?;
        Ok(())
    }

    /// Give a free CTA its next piece of work.
    fn cta_next(&mut self, pe: PeId, cta: u32) -> Result<()> {
        let may_compute = self.proto.leader_may_compute;
        loop {
            let st = &mut self.pes[pe as usize];
            if may_compute {
                let c = &st.ctas[cta as usize];
                if let Some(pos) = c.deferred.iter().position(|&g| st.groups[g].ready()) {
                    let g = st.ctas[cta as usize].deferred.remove(pos);
                    return self.begin_op(pe, cta, Op::Phase2(g));
                }
            }
            match st.ctas[cta as usize].program.pop_front() {
                Some(Op::Phase2(g)) => {
                    if st.groups[g].ready() {
                        return self.begin_op(pe, cta, Op::Phase2(g));
                    }
                    if may_compute {
                        st.ctas[cta as usize].deferred.push(g);
                        continue;
                    }
                    st.ctas[cta as usize].waiting = Some(g);
                    return Ok(());
                }
                Some(op) => return self.begin_op(pe, cta, op),
                None => {
                    if let Some((t, ns)) = st.ready_tiles.pop_front() {
                        return self.begin_tile(pe, cta, t, ns);
                    }
                    st.idle.insert(cta);
                    return Ok(());
                }
            }
        }
    }

    fn tiles_ready(&mut self, pe: PeId, transfer: usize) {
        let tiles = self.wl.compute_tiles(&self.wl.transfers[transfer]);
        self.pes[pe as usize]
            .ready_tiles
            .extend(tiles.into_iter().map(|ns| (transfer, ns)));
    }

    fn dispatch_idle(&mut self, pe: PeId) -> Result<()> {
        loop {
            let st = &mut self.pes[pe as usize];
            if st.ready_tiles.is_empty() {
                return Ok(());
            }
            let Some(cta) = st.idle.pop_first() else {
                return Ok(());
            };
            let (t, ns) = st.ready_tiles.pop_front().expect("non-empty");
            self.begin_tile(pe, cta, t, ns)?;
        }
    }

    fn new_request(&mut self, req: WorkRequest, transfer: usize) -> WorkRequest {
        debug_assert_eq!(req.id as usize, self.req_transfer.len());
        self.req_transfer.push(transfer);
        req
    }

    fn next_id(&self) -> ReqId {
        self.req_transfer.len() as ReqId
    }

    fn make_put(&mut self, t: usize, group: Option<u32>) -> WorkRequest {
        let tr = &self.wl.transfers[t];
        let mut r = WorkRequest::put(self.next_id(), tr.src, tr.dst, tr.bytes, tr.id);
        r.group_id = group;
        self.put_bytes += tr.bytes;
        self.new_request(r, t)
    }

    fn make_signal(&mut self, t: usize, group: Option<u32>) -> WorkRequest {
        let tr = &self.wl.transfers[t];
        let mut r = WorkRequest::signal(self.next_id(), tr.src, tr.dst, tr.id);
        r.group_id = group;
        self.new_request(r, t)
    }

    fn make_fence(&mut self, pe: PeId, group: Option<u32>) -> WorkRequest {
        let mut r = WorkRequest::fence(self.next_id(), pe);
        r.group_id = group;
        self.new_request(r, usize::MAX)
    }

    fn op_done(&mut self, pe: PeId, cta: u32) -> Result<()> {
        let busy = self.pes[pe as usize].ctas[cta as usize]
            .busy
            .take()
            .ok_or_else(|| SimError::model("operation finished on an idle CTA"))?;
        let proxy = self.proto.transport == TransportKind::Proxy;
        match busy {
            Busy::Tile(t) => {
                let now = self.now();
                let tile = self.wl.transfers[t].id;
                self.record(TraceRecord::for_tile(now, pe, RecordKind::ComputeEnd, tile));
                let st = &mut self.pes[pe as usize];
                st.last = st.last.max(now);
            }
            Busy::Op(Op::Coupled(t)) => {
                let put = self.make_put(t, None);
                self.submit(pe, put)?;
                if !self.wl.put_only {
                    if proxy {
                        let f = self.make_fence(pe, None);
                        self.submit(pe, f)?;
                    }
                    let s = self.make_signal(t, None);
                    self.submit(pe, s)?;
                }
            }
            Busy::Op(Op::Phase1(t, g)) => {
                let gid = self.group_base[pe as usize] + g as u32;
                let put = self.make_put(t, Some(gid));
                self.submit(pe, put)?;
                if self.pes[pe as usize].groups[g].arrive()? {
                    self.wake_leader(pe, g)?;
                }
            }
            Busy::Op(Op::Nvlink(t)) => {
                self.sched.schedule_in(
                    self.proto.nvlink_latency,
                    Action::NvlinkArrive { transfer: t },
                )?;
            }
            Busy::Op(Op::Phase2(g)) => {
                let gid = self.group_base[pe as usize] + g as u32;
                if proxy {
                    let f = self.make_fence(pe, Some(gid));
                    self.submit(pe, f)?;
                }
                let members: Vec<usize> = {
                    let st = &self.pes[pe as usize];
                    st.groups[g].members.iter().map(|&m| st.remote[m]).collect()
                };
                for t in members {
                    let s = self.make_signal(t, Some(gid));
                    self.submit(pe, s)?;
                }
            }
        }
        self.cta_next(pe, cta)
    }

    fn wake_leader(&mut self, pe: PeId, g: usize) -> Result<()> {
        let st = &mut self.pes[pe as usize];
        let leader = st.groups[g].leader_cta;
        let c = &mut st.ctas[leader as usize];
        if c.waiting == Some(g) {
            c.waiting = None;
            return self.begin_op(pe, leader, Op::Phase2(g));
        }
        if c.deferred.contains(&g) && st.idle.remove(&leader) {
            return self.cta_next(pe, leader);
        }
        Ok(())
    }

    fn submit(&mut self, pe: PeId, mut req: WorkRequest) -> Result<()> {
        let now = self.now();
        self.record(TraceRecord::for_request(now, pe, RecordKind::Submit, &req));
        let st = &mut self.pes[pe as usize];
        match st.proxy.as_mut() {
            Some(proxy) => {
                proxy.submit(req)?;
                if !st.poll_scheduled {
                    st.poll_scheduled = true;
                    self.sched.schedule(now, Action::ProxyPoll { pe })?;
                }
                Ok(())
            }
            None => {
                req.qp = Some(st.selector.select(req.dst_pe));
                self.nic_submit(pe, req)
            }
        }
    }

    fn nic_released(&mut self, pe: PeId, rel: NicReleased) {
        let now = self.now();
        if let Some((_, _)) = rel.block_ended {
            self.record(TraceRecord::bare(now, pe, RecordKind::NicBlockEnd));
        }
        if rel.block_began {
            self.record(TraceRecord::bare(now, pe, RecordKind::NicBlockBegin));
        }
    }

    fn nic_submit(&mut self, pe: PeId, req: WorkRequest) -> Result<()> {
        let now = self.now();
        let qp = req.qp.unwrap_or(0);
        let st = &mut self.pes[pe as usize];
        if self.lat.contention == ContentionScope::InFlight {
            st.tracker.add(req.dst_pe);
        }
        let nic = &mut st.nic;
        let conn = nic.connection_for(req.dst_pe, qp);
        let rel = nic.submit(conn, req, now);
        self.nic_released(pe, rel);
        self.try_start_wqe(pe)
    }

    fn try_start_wqe(&mut self, pe: PeId) -> Result<()> {
        let now = self.now();
        let st = &mut self.pes[pe as usize];
        let tracker = &st.tracker;
        let fanout = st.fanout;
        let scope = self.lat.contention;
        let contention = |r: &WorkRequest| match scope {
            ContentionScope::Dispatch => fanout.saturating_sub(1),
            ContentionScope::InFlight => tracker.contention_for(r.dst_pe),
        };
        if let Some(req) = st.nic.start_wqe(contention) {
            self.record(TraceRecord::for_request(
                now,
                pe,
                RecordKind::NicServiceStart,
                &req,
            ));
            self.sched.schedule_in(
                self.lat.per_request_nic_service,
                Action::WqeDone { pe, req: req.id },
            )?;
        }
        Ok(())
    }

    fn wqe_done(&mut self, pe: PeId, id: ReqId) -> Result<()> {
        let now = self.now();
        let st = &mut self.pes[pe as usize];
        st.nic.wqe_done();
        let size = st
            .nic
            .request(id)
            .ok_or_else(|| SimError::model(format!("WQE finished for unknown request {id}")))?
            .size;
        st.nic.link.start(now, id, size);
        self.schedule_link_check(pe)?;
        self.try_start_wqe(pe)
    }

    fn schedule_link_check(&mut self, pe: PeId) -> Result<()> {
        let link = &self.pes[pe as usize].nic.link;
        if let Some(at) = link.next_finish() {
            let version = link.version();
            self.sched
                .schedule(at.max(self.now()), Action::LinkCheck { pe, version })?;
        }
        Ok(())
    }

    fn link_check(&mut self, pe: PeId, version: u64) -> Result<()> {
        let now = self.now();
        let st = &mut self.pes[pe as usize];
        if st.nic.link.version() != version {
            return Ok(());
        }
        let done = st.nic.link.finish_due(now);
        let mut deliveries = Vec::new();
        let mut notices = Vec::new();
        for id in done {
            let d = st
                .nic
                .contention_of(id)
                .ok_or_else(|| SimError::model(format!("no contention recorded for {id}")))?;
            let kind = st
                .nic
                .request(id)
                .ok_or_else(|| SimError::model(format!("link finished unknown request {id}")))?
                .kind;
            if st.proxy.is_some() {
                notices.push((kind, now + self.lat.propagation(d)));
            }
            deliveries.extend(st.nic.delivery_known(id, now + self.lat.propagation(0))?);
        }
        for (kind, at) in notices {
            self.sched.schedule(at, Action::Notify { pe, kind })?;
        }
        for (req, at) in deliveries {
            self.sched.schedule(at, Action::Deliver { pe, req })?;
        }
        self.schedule_link_check(pe)
    }

    fn deliver(&mut self, pe: PeId, id: ReqId) -> Result<()> {
        let now = self.now();
        let st = &mut self.pes[pe as usize];
        let (conn, req) = st.nic.complete(id)?;
        if self.lat.contention == ContentionScope::InFlight {
            st.tracker.remove(req.dst_pe);
        }
        st.last = st.last.max(now);
        self.record(TraceRecord::for_request(
            now,
            pe,
            RecordKind::Completion,
            &req,
        ));
        let t = self.req_transfer[id as usize];
        let tr = &self.wl.transfers[t];
        match req.kind {
            ReqKind::Put => {
                self.heap
                    .write(tr.dst, tr.offset, tr.bytes, tr.src, tr.id, now)?;
                if self.wl.put_only {
                    self.tiles_ready(tr.dst, t);
                    self.dispatch_idle(tr.dst)?;
                }
            }
            ReqKind::Signal => {
                self.heap.deliver_signal(tr.dst, tr.id, now)?;
                self.record(TraceRecord::for_request(
                    now,
                    tr.dst,
                    RecordKind::SignalVisible,
                    &req,
                ));
                let dst = &mut self.pes[tr.dst as usize];
                dst.last = dst.last.max(now);
                self.tiles_ready(tr.dst, t);
                self.dispatch_idle(tr.dst)?;
            }
            ReqKind::FenceMarker => {
                return Err(SimError::model("fence marker reached the wire"));
            }
        }
        let rel = self.pes[pe as usize].nic.advance(conn, now);
        self.nic_released(pe, rel);
        self.try_start_wqe(pe)
    }

    /// The proxy learns of a completion only after the contention-dependent tail.
    fn notify(&mut self, pe: PeId, kind: ReqKind) -> Result<()> {
        match self.pes[pe as usize].proxy.as_mut() {
            Some(proxy) => proxy.on_completion(kind),
            None => Err(SimError::model("completion notice without a proxy")),
        }
    }

    fn nvlink_arrive(&mut self, t: usize) -> Result<()> {
        let now = self.now();
        let tr = &self.wl.transfers[t];
        self.heap
            .write(tr.dst, tr.offset, tr.bytes, tr.src, tr.id, now)?;
        self.heap.deliver_signal(tr.dst, tr.id, now)?;
        let mut rec = TraceRecord::for_tile(now, tr.dst, RecordKind::SignalVisible, tr.id);
        rec.src = Some(tr.src);
        rec.dst = Some(tr.dst);
        rec.size = Some(tr.bytes);
        self.record(rec);
        let dst = tr.dst;
        let st = &mut self.pes[dst as usize];
        st.last = st.last.max(now);
        self.tiles_ready(dst, t);
        self.dispatch_idle(dst)
    }

    fn proxy_poll(&mut self, pe: PeId) -> Result<()> {
        let now = self.now();
        let mode: FenceMode = self.proto.ordering.into();
        self.pes[pe as usize].poll_scheduled = false;
        loop {
            let st = &mut self.pes[pe as usize];
            let proxy = st
                .proxy
                .as_mut()
                .ok_or_else(|| SimError::model("proxy poll without a proxy"))?;
            match proxy.drain_step(mode, now) {
                DrainAction::Idle => return Ok(()),
                DrainAction::Forward(req) => self.nic_submit(pe, req)?,
                DrainAction::FenceRetired { drained } => {
                    if drained.is_some() {
                        self.record(TraceRecord::bare(now, pe, RecordKind::ProxyBlockEnd));
                    }
                }
                DrainAction::Blocked { began } => {
                    if began {
                        self.record(TraceRecord::bare(now, pe, RecordKind::ProxyBlockBegin));
                    }
                    self.pes[pe as usize].poll_scheduled = true;
                    self.sched
                        .schedule_in(self.lat.proxy_poll_quantum, Action::ProxyPoll { pe })?;
                    return Ok(());
                }
            }
        }
    }

    fn finish(mut self) -> Result<RunTrace> {
        for (pe, st) in self.pes.iter().enumerate() {
            if st.proxy.as_ref().is_some_and(|p| !p.is_empty()) {
                return Err(SimError::model(format!(
                    "proxy FIFO of PE {pe} never drained"
                )));
            }
            if let Some(g) = st.groups.iter().find(|g| !g.ready()) {
                return Err(SimError::model(format!(
                    "group {} on PE {pe} never completed phase 1",
                    g.group_id
                )));
            }
            if st
                .ctas
                .iter()
                .any(|c| c.waiting.is_some() || !c.deferred.is_empty())
            {
                return Err(SimError::model(format!(
                    "a leader on PE {pe} never ran phase 2"
                )));
            }
        }
        let per_pe: Vec<SimTime> = self.pes.iter().map(|s| s.last).collect();
        self.trace.meta = RunMeta {
            makespan: per_pe.iter().copied().max().unwrap_or(0),
            per_pe_makespan: per_pe,
            heap_digest: self.heap.digest(),
            put_bytes_submitted: self.put_bytes,
            heap_bytes: self.heap.total_bytes(),
            ..std::mem::take(&mut self.trace.meta)
        };
        Ok(self.trace)
    }
}
