//! Vanilla against decoupled-only, NIC-ordering-only and combined on one workload.

use std::path::PathBuf;

use fencesim::workload::build_dispatch;
use fencesim::{run_dispatch, Ordering};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{named_protocol, ExperimentConfig};
use crate::error::CliError;
use crate::output::{csv_table, write_atomic};
use crate::sweep::{dispatch_spec, summarize, thread_pool};
use crate::RunOptions;

pub const SCHEMA: &str = "fencesim-ablate/1";
pub const VARIANTS: [&str; 4] = ["vanilla", "decoupled", "nic_ordering", "combined"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub protocol: String,
    pub makespan_ns: u64,
    pub speedup: f64,
    pub fences_per_pe: f64,
    /// `proxy_drain` when the proxy blocks on each fence, `nic_stall` when the NIC does.
    pub fence_cost: String,
    pub proxy_stops: u64,
    pub proxy_blocked_ns: u64,
    pub nic_stalls: u64,
    pub nic_stall_ns: u64,
    pub violations: u64,
}

pub fn cmd_ablate(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<(Vec<AblationRow>, PathBuf), CliError> {
    let cluster = &cfg.workload.cluster;
    let workload = build_dispatch(&dispatch_spec(cfg, cluster, cfg.workload.tokens))?;
    let protocols = VARIANTS
        .iter()
        .map(|n| named_protocol(n, &cfg.protocol))
        .collect::<Result<Vec<_>, _>>()?;
    let dir = cfg.run_dir();
    let pool = thread_pool(opts.jobs)?;
    let runs: Vec<Result<_, CliError>> = pool.install(|| {
        protocols
            .par_iter()
            .map(|p| {
                let trace = run_dispatch(p, &workload, &cfg.latency)?;
                if opts.trace {
                    let file = dir
                        .join("traces")
                        .join(format!("ablate-{}.ndjson", p.label()));
                    write_atomic(&file, trace.to_ndjson().as_bytes())?;
                }
                Ok((p.clone(), summarize(&trace, cluster.pes())?))
            })
            .collect()
    });
    let mut rows = Vec::new();
    let mut base = None;
    for r in runs {
        let (p, s) = r?;
        let base_ns = *base.get_or_insert(s.makespan_ns);
        let speedup = if s.makespan_ns == 0 {
            1.0
        } else {
            base_ns as f64 / s.makespan_ns as f64
        };
        let fence_cost = match p.ordering {
            Ordering::ProxyFence => "proxy_drain",
            Ordering::NicFence => "nic_stall",
        };
        rows.push(AblationRow {
            protocol: p.label(),
            makespan_ns: s.makespan_ns,
            speedup,
            fences_per_pe: s.fences_per_pe,
            fence_cost: fence_cost.into(),
            proxy_stops: s.proxy_stops,
            proxy_blocked_ns: s.proxy_blocked_ns,
            nic_stalls: s.nic_stalls,
            nic_stall_ns: s.nic_stall_ns,
            violations: s.violations,
        });
    }
    let csv = dir.join("ablate.csv");
    write_atomic(&csv, &csv_table(SCHEMA, &cfg.hash(), &rows)?)?;
    write_atomic(&dir.join("config.json"), &serde_json::to_vec_pretty(cfg)?)?;
    Ok((rows, csv))
}
