//! Timestamped record of a run and its newline-delimited JSON serialization.
//!
//! One record per line, fields always in this order:
//! `time, pe, kind, req_id, req_kind, src, dst, size, fence_flag, group, tile, qp`.
//! Fields that do not apply are `null`. The first line is a `meta` object.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::sim::SimTime;
use crate::transport::{PeId, ReqKind, WorkRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Submit,
    NicServiceStart,
    Completion,
    SignalVisible,
    ComputeStart,
    ComputeEnd,
    ProxyBlockBegin,
    ProxyBlockEnd,
    NicBlockBegin,
    NicBlockEnd,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: SimTime,
    pub pe: PeId,
    pub kind: RecordKind,
    pub req_id: Option<u64>,
    pub req_kind: Option<ReqKind>,
    pub src: Option<PeId>,
    pub dst: Option<PeId>,
    pub size: Option<u64>,
    pub fence_flag: Option<bool>,
    pub group: Option<u32>,
    pub tile: Option<u64>,
    pub qp: Option<u32>,
}

impl TraceRecord {
    pub fn bare(time: SimTime, pe: PeId, kind: RecordKind) -> Self {
        Self {
            time,
            pe,
            kind,
            req_id: None,
            req_kind: None,
            src: None,
            dst: None,
            size: None,
            fence_flag: None,
            group: None,
            tile: None,
            qp: None,
        }
    }

    pub fn for_request(time: SimTime, pe: PeId, kind: RecordKind, req: &WorkRequest) -> Self {
        Self {
            time,
            pe,
            kind,
            req_id: Some(req.id),
            req_kind: Some(req.kind),
            src: Some(req.src_pe),
            dst: Some(req.dst_pe),
            size: Some(req.size),
            fence_flag: Some(req.fence_flag),
            group: req.group_id,
            tile: req.tile_id,
            qp: req.qp,
        }
    }

    pub fn for_tile(time: SimTime, pe: PeId, kind: RecordKind, tile: u64) -> Self {
        Self {
            tile: Some(tile),
            ..Self::bare(time, pe, kind)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config_hash: String,
    pub seed: u64,
    pub makespan: SimTime,
    pub per_pe_makespan: Vec<SimTime>,
    pub heap_digest: String,
    pub put_bytes_submitted: u64,
    pub heap_bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTrace {
    pub meta: RunMeta,
    pub records: Vec<TraceRecord>,
}

impl RunTrace {
    pub fn push(&mut self, rec: TraceRecord) {
        debug_assert!(self.records.last().is_none_or(|l| l.time <= rec.time));
        self.records.push(rec);
    }

    pub fn makespan(&self) -> SimTime {
        self.meta.makespan
    }

    pub fn iter_kind(&self, kind: RecordKind) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    pub fn count(&self, kind: RecordKind) -> usize {
        self.iter_kind(kind).count()
    }

    /// Submissions of a given request kind.
    pub fn submitted(&self, kind: ReqKind) -> usize {
        self.iter_kind(RecordKind::Submit)
            .filter(|r| r.req_kind == Some(kind))
            .count()
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = serde_json::to_string(&self.meta).expect("meta serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_ndjson(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let meta_line = lines
            .next()
            .ok_or_else(|| SimError::MalformedTrace("empty trace".into()))?;
        let meta = serde_json::from_str(meta_line)
            .map_err(|e| SimError::MalformedTrace(format!("meta: {e}")))?;
        let records = lines
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| SimError::MalformedTrace(format!("line {}: {e}", i + 2)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { meta, records })
    }
}
