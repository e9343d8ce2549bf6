//! MoE dispatch workloads: expert placement, token routing, per-transfer sizes
//! and the tile-level receive-side compute model.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::sim::SeededRng;
use crate::transport::PeId;

/// Bytes per activation element (BF16).
pub const BYTES_PER_ELEMENT: u64 = 2;

/// Default transfer/compute granularity: a 128x64 BF16 tile.
pub const DEFAULT_TILE_BYTES: u64 = 16 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub hidden: u64,
    pub intermediate: u64,
    pub experts: u32,
    pub top_k: u32,
    /// Receive-side compute per byte moved, TFLOPs/GB.
    pub compute_intensity: Option<f64>,
}

impl ModelConfig {
    pub fn qwen3_30b() -> Self {
        Self {
            name: "qwen3-30b".into(),
            hidden: 2048,
            intermediate: 768,
            experts: 128,
            top_k: 8,
            compute_intensity: Some(4.6),
        }
    }

    pub fn gpt_oss_120b() -> Self {
        Self {
            name: "gpt-oss-120b".into(),
            hidden: 2880,
            intermediate: 2880,
            experts: 128,
            top_k: 4,
            compute_intensity: Some(17.3),
        }
    }

    /// Ships without a compute intensity; end-to-end runs must supply one.
    pub fn deepseek_v3() -> Self {
        Self {
            name: "deepseek-v3".into(),
            hidden: 7168,
            intermediate: 2048,
            experts: 256,
            top_k: 8,
            compute_intensity: None,
        }
    }

    pub fn llama4_scout() -> Self {
        Self {
            name: "llama4-scout".into(),
            hidden: 5120,
            intermediate: 8192,
            experts: 16,
            top_k: 1,
            compute_intensity: Some(49.2),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "qwen3-30b" => Ok(Self::qwen3_30b()),
            "gpt-oss-120b" => Ok(Self::gpt_oss_120b()),
            "deepseek-v3" => Ok(Self::deepseek_v3()),
            "llama4-scout" => Ok(Self::llama4_scout()),
            other => Err(SimError::config(format!("unknown model preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.intermediate == 0 || self.experts == 0 || self.top_k == 0 {
            return Err(SimError::config("model dimensions must be positive"));
        }
        if self.top_k > self.experts {
            return Err(SimError::config("top_k exceeds expert count"));
        }
        if let Some(ci) = self.compute_intensity {
            if !(ci >= 0.0 && ci.is_finite()) {
                return Err(SimError::config("compute_intensity must be >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    pub nodes: u32,
    pub gpus_per_node: u32,
    #[serde(default = "default_num_qps")]
    pub num_qps: u32,
}

fn default_num_qps() -> u32 {
    1
}

impl ClusterConfig {
    pub fn new(nodes: u32, gpus_per_node: u32) -> Self {
        Self {
            nodes,
            gpus_per_node,
            num_qps: 1,
        }
    }

    /// Four GPUs per node, one QP per peer.
    pub fn perlmutter(nodes: u32) -> Self {
        Self::new(nodes, 4)
    }

    pub fn pes(&self) -> u32 {
        self.nodes * self.gpus_per_node
    }

    pub fn node_of(&self, pe: PeId) -> u32 {
        pe / self.gpus_per_node
    }

    pub fn same_node(&self, a: PeId, b: PeId) -> bool {
        self.node_of(a) == self.node_of(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 || self.gpus_per_node == 0 || self.num_qps == 0 {
            return Err(SimError::config("cluster sizes must be positive"));
        }
        Ok(())
    }
}

/// Receive-side compute slots and their throughput.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComputeModel {
    /// CTAs per PE; they issue transfers first and then compute tiles.
    pub processors_per_pe: u32,
    /// Sustained throughput of one CTA, TFLOP/s.
    pub slot_tflops: f64,
}

impl Default for ComputeModel {
    fn default() -> Self {
        Self {
            processors_per_pe: 64,
            slot_tflops: 4.0,
        }
    }
}

impl ComputeModel {
    /// Compute time of a tile of `bytes` at `intensity` TFLOPs/GB, in ns.
    pub fn tile_ns(&self, bytes: u64, intensity: f64) -> u64 {
        // bytes * intensity * 1e3 FLOP over slot_tflops * 1e3 FLOP/ns
        (bytes as f64 * intensity / self.slot_tflops).round() as u64
    }
}

/// `(P - P_local) * (E / P)`: transfers one PE sends through its proxy per dispatch.
pub fn remote_transfer_count(experts: u32, pes: u32, local_pes: u32) -> Result<u64> {
    if pes == 0 || !experts.is_multiple_of(pes) {
        return Err(SimError::config(format!(
            "{experts} experts cannot be spread evenly over {pes} PEs"
        )));
    }
    if local_pes > pes {
        return Err(SimError::config("P_local exceeds P"));
    }
    Ok(u64::from(pes - local_pes) * u64::from(experts / pes))
}

/// Bytes of one expert transfer under balanced routing: `(S*k/E) * H * 2`.
pub fn message_size(tokens: u64, top_k: u32, experts: u32, hidden: u64) -> u64 {
    tokens * u64::from(top_k) / u64::from(experts) * hidden * BYTES_PER_ELEMENT
}

/// Deterministic balanced routing: token `t` picks experts `(t*k + j) mod E`.
pub fn balanced_route(tokens: u64, experts: u32, top_k: u32) -> Vec<u64> {
    let mut counts = vec![0u64; experts as usize];
    for t in 0..tokens {
        for j in 0..u64::from(top_k) {
            counts[((t * u64::from(top_k) + j) % u64::from(experts)) as usize] += 1;
        }
    }
    counts
}

/// Rank-frequency weights `r^-s` for ranks 1..=n, normalized.
pub fn zipf_pmf(n: u32, exponent: f64) -> Vec<f64> {
    let w: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-exponent)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Seeded random ranking of experts: `ranking[r]` is the expert at rank `r + 1`.
pub fn expert_ranking(experts: u32, seed: u64) -> Vec<u32> {
    let mut ranking: Vec<u32> = (0..experts).collect();
    SeededRng::new(seed).fork(0).shuffle(&mut ranking);
    ranking
}

fn sample_tokens(
    tokens: u64,
    top_k: u32,
    ranking: &[u32],
    exponent: f64,
    rng: &mut SeededRng,
) -> Vec<u64> {
    let experts = ranking.len();
    let mut counts = vec![0u64; experts];
    let mut cdf = zipf_pmf(experts as u32, exponent);
    let mut acc = 0.0;
    for p in cdf.iter_mut() {
        acc += *p;
        *p = acc;
    }
    let mut chosen = Vec::with_capacity(top_k as usize);
    for _ in 0..tokens {
        chosen.clear();
        while chosen.len() < top_k as usize {
            let u = rng.unit() * acc;
            let rank = cdf.partition_point(|&c| c <= u).min(experts - 1);
            if !chosen.contains(&rank) {
                chosen.push(rank);
            }
        }
        for &rank in &chosen {
            counts[ranking[rank] as usize] += 1;
        }
    }
    counts
}

/// Zipf-skewed routing of `tokens` tokens, each to `top_k` distinct experts.
///
/// Returns per-expert token counts. Exponent 0 is uniform sampling.
pub fn zipf_route(tokens: u64, experts: u32, exponent: f64, top_k: u32, seed: u64) -> Vec<u64> {
    let ranking = expert_ranking(experts, seed);
    let mut rng = SeededRng::new(seed).fork(1);
    sample_tokens(tokens, top_k, &ranking, exponent, &mut rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Destination expert lives on the sending PE.
    Local,
    /// Same node, delivered over NVLink without the proxy.
    Nvlink,
    /// Crosses the RDMA fabric.
    Remote,
}

/// One payload moving from a source PE to the PE hosting `expert`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    /// Unique per workload; doubles as tile id and flag id.
    pub id: u64,
    pub src: PeId,
    pub dst: PeId,
    pub expert: u32,
    /// Chunk index when payloads are split into tiles, else 0.
    pub chunk: u32,
    pub tokens: u64,
    pub bytes: u64,
    pub route: Route,
    /// Symmetric offset of this payload in the destination's receive buffer.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchWorkload {
    pub model: ModelConfig,
    pub cluster: ClusterConfig,
    pub tokens_per_pe: u64,
    pub skew: f64,
    pub seed: u64,
    pub tile_bytes: u64,
    pub tile_mode: bool,
    pub compute: ComputeModel,
    /// Issue puts only; no fences, no signals.
    pub put_only: bool,
    /// Transfers in per-PE order sorted by `(src, dst, expert, chunk)`.
    pub transfers: Vec<Transfer>,
}

impl DispatchWorkload {
    pub fn pes(&self) -> u32 {
        self.cluster.pes()
    }

    pub fn experts_per_pe(&self) -> u32 {
        self.model.experts / self.cluster.pes()
    }

    pub fn host_of(&self, expert: u32) -> PeId {
        expert % self.cluster.pes()
    }

    pub fn from_pe(&self, pe: PeId) -> impl Iterator<Item = &Transfer> {
        self.transfers.iter().filter(move |t| t.src == pe)
    }

    pub fn remote_from(&self, pe: PeId) -> impl Iterator<Item = &Transfer> {
        self.from_pe(pe).filter(|t| t.route == Route::Remote)
    }

    pub fn remote_bytes(&self) -> u64 {
        self.transfers
            .iter()
            .filter(|t| t.route == Route::Remote)
            .map(|t| t.bytes)
            .sum()
    }

    /// Receive-side compute tiles of a transfer: `(tile bytes, compute ns)`.
    pub fn compute_tiles(&self, t: &Transfer) -> Vec<u64> {
        let Some(intensity) = self.model.compute_intensity else {
            return Vec::new();
        };
        if intensity == 0.0 || t.bytes == 0 {
            return Vec::new();
        }
        let mut left = t.bytes;
        let mut tiles = Vec::new();
        while left > 0 {
            let b = left.min(self.tile_bytes);
            tiles.push(self.compute.tile_ns(b, intensity));
            left -= b;
        }
        tiles
    }

    /// An empty workload: no PEs send anything.
    pub fn empty(cluster: ClusterConfig) -> Self {
        Self {
            model: ModelConfig::qwen3_30b(),
            cluster,
            tokens_per_pe: 0,
            skew: 0.0,
            seed: 0,
            tile_bytes: DEFAULT_TILE_BYTES,
            tile_mode: false,
            compute: ComputeModel::default(),
            put_only: false,
            transfers: Vec::new(),
        }
    }
}

/// Inputs to [`build_dispatch`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSpec {
    pub model: ModelConfig,
    pub cluster: ClusterConfig,
    pub tokens_per_pe: u64,
    pub skew: f64,
    pub tile_bytes: u64,
    pub tile_mode: bool,
    pub seed: u64,
    pub compute: ComputeModel,
}

impl DispatchSpec {
    pub fn new(model: ModelConfig, cluster: ClusterConfig, tokens_per_pe: u64) -> Self {
        Self {
            model,
            cluster,
            tokens_per_pe,
            skew: 0.0,
            tile_bytes: DEFAULT_TILE_BYTES,
            tile_mode: false,
            seed: 0,
            compute: ComputeModel::default(),
        }
    }
}

/// Route every PE's tokens and emit one transfer per (source PE, destination expert).
///
/// Experts are placed round-robin (`expert % P`). Skew 0 uses deterministic
/// balanced routing; positive skew samples Zipf routing with one global
/// popularity ranking. Experts receiving no tokens produce no transfer.
pub fn build_dispatch(spec: &DispatchSpec) -> Result<DispatchWorkload> {
    spec.model.validate()?;
    spec.cluster.validate()?;
    let pes = spec.cluster.pes();
    let experts = spec.model.experts;
    if !experts.is_multiple_of(pes) {
        return Err(SimError::config(format!(
            "{experts} experts cannot be spread evenly over {pes} PEs"
        )));
    }
    if spec.skew.is_nan() || spec.skew < 0.0 {
        return Err(SimError::config("skew exponent must be >= 0"));
    }
    if spec.tile_bytes == 0 {
        return Err(SimError::config("tile_bytes must be positive"));
    }
    let row_bytes = spec.model.hidden * BYTES_PER_ELEMENT;
    let ranking = expert_ranking(experts, spec.seed);
    let root = SeededRng::new(spec.seed);
    let per_pe_experts = experts / pes;

    let mut transfers = Vec::new();
    for src in 0..pes {
        let counts = if spec.skew == 0.0 {
            balanced_route(spec.tokens_per_pe, experts, spec.model.top_k)
        } else {
            let mut rng = root.fork(u64::from(src) + 2);
            sample_tokens(
                spec.tokens_per_pe,
                spec.model.top_k,
                &ranking,
                spec.skew,
                &mut rng,
            )
        };
        let mut order: Vec<u32> = (0..experts).collect();
        order.sort_by_key(|&e| (e % pes, e));
        for e in order {
            let tokens = counts[e as usize];
            if tokens == 0 {
                continue;
            }
            let dst = e % pes;
            let route = if dst == src {
                Route::Local
            } else if spec.cluster.same_node(src, dst) {
                Route::Nvlink
            } else {
                Route::Remote
            };
            let bytes = tokens * row_bytes;
            // Each source owns a disjoint slice of every expert's receive buffer.
            let slot = u64::from(e / pes) * u64::from(pes) + u64::from(src);
            let stride = spec.tokens_per_pe * u64::from(spec.model.top_k) * row_bytes;
            let base = slot * stride.max(1);
            let chunks: Vec<u64> = if spec.tile_mode {
                let n = bytes.div_ceil(spec.tile_bytes);
                (0..n)
                    .map(|i| (bytes - i * spec.tile_bytes).min(spec.tile_bytes))
                    .collect()
            } else {
                vec![bytes]
            };
            let mut off = 0;
            for (chunk, b) in chunks.into_iter().enumerate() {
                transfers.push(Transfer {
                    id: transfers.len() as u64,
                    src,
                    dst,
                    expert: e,
                    chunk: chunk as u32,
                    tokens: if chunk == 0 { tokens } else { 0 },
                    bytes: b,
                    route,
                    offset: base + off,
                });
                off += b;
            }
        }
        debug_assert!(per_pe_experts > 0);
    }
    Ok(DispatchWorkload {
        model: spec.model.clone(),
        cluster: spec.cluster.clone(),
        tokens_per_pe: spec.tokens_per_pe,
        skew: spec.skew,
        seed: spec.seed,
        tile_bytes: spec.tile_bytes,
        tile_mode: spec.tile_mode,
        compute: spec.compute.clone(),
        put_only: false,
        transfers,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MicroMode {
    PutOnly,
    Coupled,
    /// Decoupled signaling with NIC-side ordering.
    Combined,
}

/// Synthetic microbenchmark: every PE sends `concurrency` transfers of `size`
/// bytes, destinations round-robin over its remote PEs, with no compute.
pub fn microbenchmark_workload(
    concurrency: u32,
    size: u64,
    cluster: ClusterConfig,
    mode: MicroMode,
) -> Result<DispatchWorkload> {
    if concurrency == 0 {
        return Err(SimError::config("concurrency must be >= 1"));
    }
    cluster.validate()?;
    let pes = cluster.pes();
    let mut transfers = Vec::new();
    for src in 0..pes {
        let remotes: Vec<PeId> = (0..pes).filter(|&p| !cluster.same_node(src, p)).collect();
        if remotes.is_empty() {
            return Err(SimError::config("microbenchmark needs at least two nodes"));
        }
        let mut mine: Vec<(PeId, u32)> = (0..concurrency)
            .map(|i| (remotes[i as usize % remotes.len()], i))
            .collect();
        // Submission order groups transfers by destination, as build_dispatch does.
        mine.sort();
        for (dst, i) in mine {
            transfers.push(Transfer {
                id: transfers.len() as u64,
                src,
                dst,
                expert: i,
                chunk: 0,
                tokens: 0,
                bytes: size,
                route: Route::Remote,
                offset: (u64::from(src) * u64::from(concurrency) + u64::from(i)) * size,
            });
        }
    }
    let mut model = ModelConfig::qwen3_30b();
    model.name = "microbenchmark".into();
    model.compute_intensity = None;
    Ok(DispatchWorkload {
        model,
        cluster,
        tokens_per_pe: 0,
        skew: 0.0,
        seed: 0,
        tile_bytes: DEFAULT_TILE_BYTES,
        tile_mode: false,
        compute: ComputeModel::default(),
        put_only: mode == MicroMode::PutOnly,
        transfers,
    })
}
