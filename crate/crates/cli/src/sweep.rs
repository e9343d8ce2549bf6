//! Grid sweeps: one simulation per point, one summary row per point.

use std::path::{Path, PathBuf};

use fencesim::metrics::{fence_accounting, signaling_efficiency, verify_ordering};
use fencesim::workload::{
    build_dispatch, message_size, microbenchmark_workload, DispatchSpec, MicroMode,
};
use fencesim::{
    run_dispatch, ClusterConfig, DispatchWorkload, ProtocolConfig, RunTrace, Signaling,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{named_protocol, ExperimentConfig, SweepKind};
use crate::error::CliError;
use crate::output::{csv_table, write_atomic};
use crate::RunOptions;

pub const SCHEMA: &str = "fencesim-sweep/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: String,
    pub protocol: String,
    pub nodes: u32,
    pub tokens: Option<u64>,
    pub concurrency: Option<u32>,
    pub size: Option<u64>,
    /// Empty when signals are grouped by destination PE.
    pub group_size: Option<u32>,
    pub message_bytes: u64,
    pub makespan_ns: u64,
    pub fences_per_pe: f64,
    pub proxy_stops: u64,
    pub proxy_blocked_ns: u64,
    pub nic_stalls: u64,
    pub nic_stall_ns: u64,
    pub flagged_signals: u64,
    /// Put-only over signaled makespan; microbenchmark sweeps only.
    pub efficiency: Option<f64>,
    pub violations: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PointRecord {
    config_hash: String,
    row: SweepRow,
}

struct Point {
    id: String,
    protocol: ProtocolConfig,
    cluster: ClusterConfig,
    tokens: Option<u64>,
    concurrency: Option<u32>,
    size: Option<u64>,
    workload: DispatchWorkload,
}

#[derive(Debug)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
    pub ran: usize,
    pub reused: usize,
    pub csv: PathBuf,
}

fn axis<T: Copy>(values: &[T], fallback: T) -> Vec<Option<T>> {
    if values.is_empty() {
        vec![Some(fallback)]
    } else {
        values.iter().copied().map(Some).collect()
    }
}

/// Every grid point with its workload, or a config error if any point is invalid.
fn plan(cfg: &ExperimentConfig) -> Result<Vec<Point>, CliError> {
    let s = &cfg.sweep;
    let micro = s.kind == SweepKind::Microbenchmark;
    if micro {
        if !s.tokens.is_empty() {
            return Err(CliError::Config(
                "a microbenchmark sweep has no tokens axis".into(),
            ));
        }
        if s.concurrency.is_empty() || s.size.is_empty() {
            return Err(CliError::Config(
                "a microbenchmark sweep needs concurrency and size axes".into(),
            ));
        }
    } else if !s.concurrency.is_empty() || !s.size.is_empty() {
        return Err(CliError::Config(
            "concurrency and size axes need kind = \"microbenchmark\"".into(),
        ));
    }
    let protocols: Vec<ProtocolConfig> = if s.protocols.is_empty() {
        vec![cfg.protocol.clone()]
    } else {
        s.protocols
            .iter()
            .map(|n| named_protocol(n, &cfg.protocol))
            .collect::<Result<_, _>>()?
    };
    let group_sizes: Vec<Option<u32>> = if s.group_size.is_empty() {
        vec![None]
    } else {
        s.group_size.iter().map(|&g| Some(g)).collect()
    };
    let nodes = axis(&s.nodes, cfg.workload.cluster.nodes);
    let tokens = if micro {
        vec![None]
    } else {
        axis(&s.tokens, cfg.workload.tokens)
    };
    let conc: Vec<Option<u32>> = s.concurrency.iter().copied().map(Some).collect();
    let sizes: Vec<Option<u64>> = s.size.iter().copied().map(Some).collect();
    let conc = if micro { conc } else { vec![None] };
    let sizes = if micro { sizes } else { vec![None] };

    let mut points = Vec::new();
    for proto in &protocols {
        for &n in &nodes {
            for &t in &tokens {
                for &c in &conc {
                    for &b in &sizes {
                        for &g in &group_sizes {
                            let mut protocol = proto.clone();
                            if g.is_some() {
                                protocol.group_size = g;
                            }
                            protocol.validate()?;
                            let mut cluster = cfg.workload.cluster.clone();
                            cluster.nodes = n.expect("axis value");
                            let workload = match (c, b) {
                                (Some(c), Some(b)) => microbenchmark_workload(
                                    c,
                                    b,
                                    cluster.clone(),
                                    MicroMode::Coupled,
                                )?,
                                _ => build_dispatch(&dispatch_spec(cfg, &cluster, t.unwrap()))?,
                            };
                            check_groups(&protocol, &workload)?;
                            let mut id = format!(
                                "{:04}-{}-n{}",
                                points.len(),
                                protocol.label(),
                                cluster.nodes
                            );
                            for (tag, v) in [
                                ("s", t),
                                ("c", c.map(u64::from)),
                                ("b", b),
                                ("g", g.map(u64::from)),
                            ] {
                                if let Some(v) = v {
                                    id.push_str(&format!("-{tag}{v}"));
                                }
                            }
                            points.push(Point {
                                id,
                                protocol,
                                cluster,
                                tokens: t,
                                concurrency: c,
                                size: b,
                                workload,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(points)
}

pub(crate) fn dispatch_spec(
    cfg: &ExperimentConfig,
    cluster: &ClusterConfig,
    tokens: u64,
) -> DispatchSpec {
    let w = &cfg.workload;
    let mut spec = DispatchSpec::new(cfg.model(), cluster.clone(), tokens);
    spec.skew = w.skew;
    spec.tile_mode = w.tile_mode;
    spec.tile_bytes = w.tile_bytes;
    spec.seed = cfg.seed;
    spec.compute = w.compute.clone();
    spec
}

/// A fixed group size must divide every sender's remote transfer count.
fn check_groups(p: &ProtocolConfig, w: &DispatchWorkload) -> Result<(), CliError> {
    let Some(g) = p.group_size else {
        return Ok(());
    };
    if p.signaling != Signaling::Decoupled {
        return Ok(());
    }
    for pe in 0..w.pes() {
        let n = w.remote_from(pe).count() as u32;
        if !n.is_multiple_of(g) {
            return Err(CliError::Config(format!(
                "group size {g} does not divide the {n} remote transfers of PE {pe} at {} nodes",
                w.cluster.nodes
            )));
        }
    }
    Ok(())
}

pub(crate) fn summarize(trace: &RunTrace, pes: u32) -> Result<SummaryCounts, CliError> {
    let f = fence_accounting(trace)?;
    Ok(SummaryCounts {
        makespan_ns: trace.makespan(),
        fences_per_pe: f.fence_count as f64 / f64::from(pes),
        proxy_stops: f.proxy_stops,
        proxy_blocked_ns: f.proxy_blocked_total,
        nic_stalls: f.nic_stalls,
        nic_stall_ns: f.nic_stall_total,
        flagged_signals: f.flagged_signal_count,
        violations: verify_ordering(trace).len() as u64,
    })
}

pub(crate) struct SummaryCounts {
    pub makespan_ns: u64,
    pub fences_per_pe: f64,
    pub proxy_stops: u64,
    pub proxy_blocked_ns: u64,
    pub nic_stalls: u64,
    pub nic_stall_ns: u64,
    pub flagged_signals: u64,
    pub violations: u64,
}

fn run_point(cfg: &ExperimentConfig, p: &Point) -> Result<(SweepRow, RunTrace), CliError> {
    let trace = run_dispatch(&p.protocol, &p.workload, &cfg.latency)?;
    let s = summarize(&trace, p.cluster.pes())?;
    let (message_bytes, efficiency) = match (p.concurrency, p.size) {
        (Some(c), Some(b)) => {
            let po = microbenchmark_workload(c, b, p.cluster.clone(), MicroMode::PutOnly)?;
            let base = run_dispatch(&p.protocol, &po, &cfg.latency)?;
            (b, Some(signaling_efficiency(&trace, &base)?))
        }
        _ => {
            let m = &p.workload.model;
            let tokens = p.tokens.unwrap_or(0);
            (message_size(tokens, m.top_k, m.experts, m.hidden), None)
        }
    };
    let row = SweepRow {
        point: p.id.clone(),
        protocol: p.protocol.label(),
        nodes: p.cluster.nodes,
        tokens: p.tokens,
        concurrency: p.concurrency,
        size: p.size,
        group_size: p.protocol.group_size,
        message_bytes,
        makespan_ns: s.makespan_ns,
        fences_per_pe: s.fences_per_pe,
        proxy_stops: s.proxy_stops,
        proxy_blocked_ns: s.proxy_blocked_ns,
        nic_stalls: s.nic_stalls,
        nic_stall_ns: s.nic_stall_ns,
        flagged_signals: s.flagged_signals,
        efficiency,
        violations: s.violations,
    };
    Ok((row, trace))
}

fn reuse(path: &Path, hash: &str) -> Option<SweepRow> {
    let text = std::fs::read_to_string(path).ok()?;
    let rec: PointRecord = serde_json::from_str(&text).ok()?;
    (rec.config_hash == hash).then_some(rec.row)
}

pub fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs must be >= 1".into()));
        }
        b = b.num_threads(j);
    }
    b.build().map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn cmd_sweep(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<SweepSummary, CliError> {
    let points = plan(cfg)?;
    let hash = cfg.hash();
    let dir = cfg.run_dir();
    write_atomic(&dir.join("config.json"), &serde_json::to_vec_pretty(cfg)?)?;
    let pool = thread_pool(opts.jobs)?;
    let results: Vec<Result<(SweepRow, bool), CliError>> = pool.install(|| {
        points
            .par_iter()
            .map(|p| {
                let file = dir.join("points").join(format!("{}.json", p.id));
                let trace_file = dir.join("traces").join(format!("{}.ndjson", p.id));
                if !opts.force && (!opts.trace || trace_file.exists()) {
                    if let Some(row) = reuse(&file, &hash) {
                        return Ok((row, false));
                    }
                }
                let (row, trace) = run_point(cfg, p)?;
                if opts.trace {
                    write_atomic(&trace_file, trace.to_ndjson().as_bytes())?;
                }
                let rec = PointRecord {
                    config_hash: hash.clone(),
                    row,
                };
                write_atomic(&file, &serde_json::to_vec_pretty(&rec)?)?;
                Ok((rec.row, true))
            })
            .collect()
    });
    let mut rows = Vec::with_capacity(results.len());
    let mut ran = 0;
    for r in results {
        let (row, fresh) = r?;
        ran += usize::from(fresh);
        rows.push(row);
    }
    let csv = dir.join("sweep.csv");
    write_atomic(&csv, &csv_table(SCHEMA, &hash, &rows)?)?;
    Ok(SweepSummary {
        reused: rows.len() - ran,
        rows,
        ran,
        csv,
    })
}

/// Rows of every point file under `<dir>/points`, sorted by point id.
pub fn load_point_rows(dir: &Path) -> Result<Vec<SweepRow>, CliError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir.join("points"))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files
        .iter()
        .map(|f| {
            let rec: PointRecord = serde_json::from_str(&std::fs::read_to_string(f)?)?;
            Ok(rec.row)
        })
        .collect()
}
