#![allow(dead_code)]

use fencesim::protocols::Signaling;
use fencesim::workload::{build_dispatch, DispatchSpec};
use fencesim::{
    run_dispatch, ClusterConfig, DispatchWorkload, LatencyModel, ModelConfig, ProtocolConfig,
    RunTrace,
};
use proptest::prelude::*;

/// Shapes whose PE count divides every expert count used below.
pub const SHAPES: [(u32, u32); 7] = [(1, 2), (1, 4), (2, 1), (2, 2), (2, 4), (4, 1), (4, 2)];

#[derive(Debug, Clone)]
pub struct WorkloadParams {
    pub experts: u32,
    pub hidden: u64,
    pub top_k: u32,
    pub intensity: f64,
    pub shape: (u32, u32),
    pub num_qps: u32,
    pub tokens: u64,
    pub skew: f64,
    pub tile_mode: bool,
    pub seed: u64,
}

impl WorkloadParams {
    pub fn build(&self) -> DispatchWorkload {
        let model = ModelConfig {
            name: "prop".into(),
            hidden: self.hidden,
            intermediate: 512,
            experts: self.experts,
            top_k: self.top_k,
            compute_intensity: Some(self.intensity),
        };
        let mut cluster = ClusterConfig::new(self.shape.0, self.shape.1);
        cluster.num_qps = self.num_qps;
        let mut spec = DispatchSpec::new(model, cluster, self.tokens);
        spec.skew = self.skew;
        spec.tile_mode = self.tile_mode;
        spec.tile_bytes = 4096;
        spec.seed = self.seed;
        build_dispatch(&spec).expect("workload")
    }
}

pub fn workload_params(min_nodes: u32) -> impl Strategy<Value = WorkloadParams> {
    let shapes: Vec<(u32, u32)> = SHAPES.into_iter().filter(|s| s.0 >= min_nodes).collect();
    (
        prop::sample::select(vec![8u32, 16, 32]),
        prop::sample::select(vec![1024u64, 2048]),
        prop::sample::select(vec![1u32, 2, 4]),
        0.5f64..20.0,
        prop::sample::select(shapes),
        1u32..=3,
        1u64..=32,
        prop::sample::select(vec![0.0, 0.6, 1.2]),
        any::<bool>(),
        any::<u64>(),
    )
        .prop_map(
            |(experts, hidden, top_k, intensity, shape, num_qps, tokens, skew, tile_mode, seed)| {
                WorkloadParams {
                    experts,
                    hidden,
                    top_k,
                    intensity,
                    shape,
                    num_qps,
                    tokens,
                    skew,
                    tile_mode,
                    seed,
                }
            },
        )
}

/// Every mode that must never violate ordering.
pub fn safe_modes() -> Vec<ProtocolConfig> {
    vec![
        ProtocolConfig::vanilla(),
        ProtocolConfig::decoupled(None),
        ProtocolConfig::decoupled(Some(1)),
        ProtocolConfig::nic_ordering(),
        ProtocolConfig::combined(),
        ProtocolConfig::gpu_direct(Signaling::Coupled),
        ProtocolConfig::gpu_direct(Signaling::Decoupled),
    ]
}

pub fn run(p: &ProtocolConfig, w: &DispatchWorkload) -> RunTrace {
    run_dispatch(p, w, &LatencyModel::default()).expect("run")
}
