//! Analyses over finished traces: efficiency, fence accounting, alpha-beta fits,
//! speedup decomposition, ordering verification and conservation checks.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::sim::SimTime;
use crate::trace::{RecordKind, RunTrace};
use crate::transport::{PeId, ReqKind};
use crate::workload::{DispatchWorkload, Route};

/// Put-only makespan over coupled makespan for the same bytes.
pub fn signaling_efficiency(coupled: &RunTrace, put_only: &RunTrace) -> Result<f64> {
    if coupled.meta.put_bytes_submitted != put_only.meta.put_bytes_submitted {
        return Err(SimError::Mismatch(format!(
            "traces move different byte counts ({} vs {})",
            coupled.meta.put_bytes_submitted, put_only.meta.put_bytes_submitted
        )));
    }
    if coupled.makespan() == 0 {
        return Ok(1.0);
    }
    Ok(put_only.makespan() as f64 / coupled.makespan() as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FenceAccounting {
    pub fence_count: u64,
    /// Sum of proxy drain intervals over all PEs, ns.
    pub proxy_blocked_total: u64,
    /// Length of every proxy drain interval, in trace order.
    pub per_fence: Vec<u64>,
    pub proxy_stops: u64,
    pub nic_stall_total: u64,
    pub nic_stalls: u64,
    pub flagged_signal_count: u64,
}

fn intervals(trace: &RunTrace, begin: RecordKind, end: RecordKind) -> Result<Vec<u64>> {
    let mut open: HashMap<PeId, Vec<SimTime>> = HashMap::new();
    let mut out = Vec::new();
    for r in &trace.records {
        if r.kind == begin {
            open.entry(r.pe).or_default().push(r.time);
        } else if r.kind == end {
            let start = open.get_mut(&r.pe).and_then(Vec::pop).ok_or_else(|| {
                SimError::MalformedTrace(format!(
                    "{end:?} on PE {} at {} without a begin",
                    r.pe, r.time
                ))
            })?;
            out.push(r.time - start);
        }
    }
    if let Some((pe, _)) = open.iter().find(|(_, v)| !v.is_empty()) {
        return Err(SimError::MalformedTrace(format!(
            "{begin:?} on PE {pe} never ended"
        )));
    }
    Ok(out)
}

pub fn fence_accounting(trace: &RunTrace) -> Result<FenceAccounting> {
    let per_fence = intervals(
        trace,
        RecordKind::ProxyBlockBegin,
        RecordKind::ProxyBlockEnd,
    )?;
    let nic = intervals(trace, RecordKind::NicBlockBegin, RecordKind::NicBlockEnd)?;
    // the flag is attached when the proxy forwards, so count it at service start
    let flagged_signal_count = trace
        .iter_kind(RecordKind::NicServiceStart)
        .filter(|r| r.req_kind == Some(ReqKind::Signal) && r.fence_flag == Some(true))
        .count() as u64;
    Ok(FenceAccounting {
        fence_count: trace.submitted(ReqKind::FenceMarker) as u64,
        proxy_blocked_total: per_fence.iter().sum(),
        proxy_stops: per_fence.len() as u64,
        per_fence,
        nic_stall_total: nic.iter().sum(),
        nic_stalls: nic.len() as u64,
        flagged_signal_count,
    })
}

/// Where communication time went, summed over sending PEs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CommBreakdown {
    /// Sum over PEs of the time of their last completion, ns.
    pub total: u64,
    /// Proxy drains plus NIC stalls, ns.
    pub fence: u64,
    /// Everything else, including signals.
    pub transfer_with_signals: u64,
    /// Byte-proportional share of the non-fence time spent on signal words.
    pub signal: u64,
    pub transfer: u64,
}

impl CommBreakdown {
    pub fn fence_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.fence as f64 / self.total as f64
        }
    }
}

pub fn comm_breakdown(trace: &RunTrace) -> Result<CommBreakdown> {
    let acc = fence_accounting(trace)?;
    let mut last: BTreeMap<PeId, SimTime> = BTreeMap::new();
    let (mut put_bytes, mut sig_bytes) = (0u64, 0u64);
    for r in trace.iter_kind(RecordKind::Completion) {
        let e = last.entry(r.pe).or_default();
        *e = (*e).max(r.time);
        match r.req_kind {
            Some(ReqKind::Signal) => sig_bytes += r.size.unwrap_or(0),
            _ => put_bytes += r.size.unwrap_or(0),
        }
    }
    let total: u64 = last.values().sum();
    let fence = (acc.proxy_blocked_total + acc.nic_stall_total).min(total);
    let rest = total - fence;
    let wire = put_bytes + sig_bytes;
    let signal = if wire == 0 {
        0
    } else {
        (rest as f64 * sig_bytes as f64 / wire as f64).round() as u64
    };
    Ok(CommBreakdown {
        total,
        fence,
        transfer_with_signals: rest,
        signal,
        transfer: rest - signal,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaBetaFit {
    /// Fixed cost, ns.
    pub alpha: f64,
    /// Per-byte cost, ns/byte.
    pub beta: f64,
    pub r_squared: f64,
}

/// Ordinary least squares for `T = alpha + beta * M` over `(M, T)` points.
pub fn fit_alpha_beta(points: &[(f64, f64)]) -> Result<AlphaBetaFit> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return Err(SimError::Model("need at least two points to fit".into()));
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(SimError::Model(
            "degenerate fit: all message sizes equal".into(),
        ));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let beta = sxy / sxx;
    let alpha = my - beta * mx;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - alpha - beta * p.0).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(AlphaBetaFit {
        alpha,
        beta,
        r_squared,
    })
}

/// The four runs that separate the sources of improvement.
#[derive(Debug, Clone, Copy)]
pub struct DecompositionRuns<'a> {
    pub coupled: &'a RunTrace,
    pub decoupled_gs1: &'a RunTrace,
    pub decoupled_knee: &'a RunTrace,
    pub combined: &'a RunTrace,
}

/// Latency deltas in ns; positive means the step made the dispatch faster.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub total: i64,
    pub reordering: i64,
    pub fence_reduction: i64,
    pub nic_ordering: i64,
}

impl Decomposition {
    fn frac(&self, part: i64) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            part as f64 / self.total as f64
        }
    }

    pub fn reordering_fraction(&self) -> f64 {
        self.frac(self.reordering)
    }

    pub fn fence_reduction_fraction(&self) -> f64 {
        self.frac(self.fence_reduction)
    }

    pub fn nic_ordering_fraction(&self) -> f64 {
        self.frac(self.nic_ordering)
    }
}

pub fn speedup_decomposition(runs: DecompositionRuns<'_>) -> Result<Decomposition> {
    let all = [
        runs.coupled,
        runs.decoupled_gs1,
        runs.decoupled_knee,
        runs.combined,
    ];
    let base = &runs.coupled.meta;
    for t in &all[1..] {
        if t.meta.put_bytes_submitted != base.put_bytes_submitted
            || t.meta.heap_digest != base.heap_digest
        {
            return Err(SimError::Mismatch(
                "decomposition runs do not share one workload".into(),
            ));
        }
    }
    let m: Vec<i64> = all.iter().map(|t| t.makespan() as i64).collect();
    Ok(Decomposition {
        total: m[0] - m[3],
        reordering: m[0] - m[1],
        fence_reduction: m[1] - m[2],
        nic_ordering: m[2] - m[3],
    })
}

/// A signal that became visible before a put it announces had completed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub signal: u64,
    pub put: Option<u64>,
    pub src: PeId,
    pub tile: u64,
    pub signal_visible: SimTime,
    /// `None` when the put never completed.
    pub put_completed: Option<SimTime>,
}

/// Every ordering violation in `trace`.
pub fn verify_ordering(trace: &RunTrace) -> Vec<Violation> {
    let mut puts: HashMap<(PeId, u64), (u64, SimTime)> = HashMap::new();
    let mut submitted: HashMap<(PeId, u64), u64> = HashMap::new();
    for r in &trace.records {
        if r.req_kind != Some(ReqKind::Put) {
            continue;
        }
        let (Some(src), Some(tile), Some(id)) = (r.src, r.tile, r.req_id) else {
            continue;
        };
        match r.kind {
            RecordKind::Submit => {
                submitted.insert((src, tile), id);
            }
            RecordKind::Completion => {
                puts.insert((src, tile), (id, r.time));
            }
            _ => {}
        }
    }
    let mut out = Vec::new();
    for r in trace.iter_kind(RecordKind::SignalVisible) {
        if r.req_kind != Some(ReqKind::Signal) {
            continue;
        }
        let (Some(src), Some(tile), Some(id)) = (r.src, r.tile, r.req_id) else {
            continue;
        };
        match puts.get(&(src, tile)) {
            Some(&(_, done)) if done <= r.time => {}
            found => out.push(Violation {
                signal: id,
                put: found
                    .map(|p| p.0)
                    .or_else(|| submitted.get(&(src, tile)).copied()),
                src,
                tile,
                signal_visible: r.time,
                put_completed: found.map(|p| p.1),
            }),
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConservationReport {
    pub failures: Vec<String>,
}

impl ConservationReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Byte conservation, one signal per transfer and every flag set exactly once.
pub fn conservation_check(trace: &RunTrace, workload: &DispatchWorkload) -> ConservationReport {
    let mut failures = Vec::new();
    let mut completed: HashMap<u64, u64> = HashMap::new();
    for r in trace.iter_kind(RecordKind::Completion) {
        if let Some(id) = r.req_id {
            *completed.entry(id).or_default() += 1;
        }
    }
    let mut put_bytes = 0;
    for r in trace.iter_kind(RecordKind::Submit) {
        let Some(id) = r.req_id else { continue };
        match r.req_kind {
            Some(ReqKind::Put) => {
                put_bytes += r.size.unwrap_or(0);
                match completed.get(&id) {
                    Some(1) => {}
                    Some(n) => failures.push(format!("put {id} completed {n} times")),
                    None => failures.push(format!(
                        "put {id} (tile {:?}, PE {:?} -> {:?}) never completed",
                        r.tile, r.src, r.dst
                    )),
                }
            }
            Some(ReqKind::Signal) if completed.get(&id) != Some(&1) => {
                failures.push(format!("signal {id} did not complete exactly once"));
            }
            _ => {}
        }
    }
    let remote_bytes = workload.remote_bytes();
    if put_bytes != remote_bytes {
        failures.push(format!(
            "submitted {put_bytes} put bytes, workload moves {remote_bytes}"
        ));
    }
    let completed_bytes: u64 = trace
        .iter_kind(RecordKind::Completion)
        .filter(|r| r.req_kind == Some(ReqKind::Put))
        .map(|r| r.size.unwrap_or(0))
        .sum();
    if completed_bytes != remote_bytes {
        failures.push(format!(
            "delivered {completed_bytes} put bytes, workload moves {remote_bytes}"
        ));
    }
    if !workload.put_only {
        let mut flags: HashMap<u64, u32> = HashMap::new();
        for r in trace.iter_kind(RecordKind::SignalVisible) {
            if let Some(tile) = r.tile {
                *flags.entry(tile).or_default() += 1;
            }
        }
        for t in workload
            .transfers
            .iter()
            .filter(|t| t.route != Route::Local)
        {
            match flags.get(&t.id).copied().unwrap_or(0) {
                1 => {}
                n => failures.push(format!("flag {} set {n} times", t.id)),
            }
        }
    }
    ConservationReport { failures }
}
