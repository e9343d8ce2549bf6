//! Alpha-beta fits of makespan against message size, one per configuration.

use std::collections::BTreeMap;
use std::path::Path;

use fencesim::metrics::fit_alpha_beta;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::sweep::load_point_rows;

pub const SCHEMA: &str = "fencesim-fit/1";

/// The columns a fit needs; sweep CSVs carry these and more.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitInput {
    pub protocol: String,
    pub nodes: u32,
    #[serde(default)]
    pub group_size: Option<u32>,
    #[serde(default)]
    pub concurrency: Option<u32>,
    pub message_bytes: f64,
    pub makespan_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub protocol: String,
    pub nodes: u32,
    pub group_size: Option<u32>,
    pub concurrency: Option<u32>,
    pub points: usize,
    pub alpha_ns: Option<f64>,
    pub beta_ns_per_byte: Option<f64>,
    pub r_squared: Option<f64>,
    /// Set instead of the fit when the points cannot determine a line.
    pub error: Option<String>,
}

/// Rows from a sweep CSV, or from the point files of a sweep output directory.
pub fn read_inputs(path: &Path) -> Result<Vec<FitInput>, CliError> {
    if path.is_dir() {
        return Ok(load_point_rows(path)?
            .into_iter()
            .map(|r| FitInput {
                protocol: r.protocol,
                nodes: r.nodes,
                group_size: r.group_size,
                concurrency: r.concurrency,
                message_bytes: r.message_bytes as f64,
                makespan_ns: r.makespan_ns as f64,
            })
            .collect());
    }
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(file);
    rdr.deserialize()
        .map(|r| r.map_err(|e| CliError::Config(format!("{}: {e}", path.display()))))
        .collect()
}

type Key = (String, u32, Option<u32>, Option<u32>);

pub fn fit_table(inputs: &[FitInput]) -> Vec<FitRow> {
    let mut groups: BTreeMap<Key, Vec<(f64, f64)>> = BTreeMap::new();
    for i in inputs {
        let key = (i.protocol.clone(), i.nodes, i.group_size, i.concurrency);
        groups
            .entry(key)
            .or_default()
            .push((i.message_bytes, i.makespan_ns));
    }
    groups
        .into_iter()
        .map(|((protocol, nodes, group_size, concurrency), pts)| {
            let mut row = FitRow {
                protocol,
                nodes,
                group_size,
                concurrency,
                points: pts.len(),
                alpha_ns: None,
                beta_ns_per_byte: None,
                r_squared: None,
                error: None,
            };
            match fit_alpha_beta(&pts) {
                Ok(f) => {
                    row.alpha_ns = Some(f.alpha);
                    row.beta_ns_per_byte = Some(f.beta);
                    row.r_squared = Some(f.r_squared);
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect()
}
