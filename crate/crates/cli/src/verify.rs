//! Randomized ordering checks over every safe mode, plus the known-unsafe one.

use fencesim::metrics::verify_ordering;
use fencesim::sim::SeededRng;
use fencesim::workload::{build_dispatch, microbenchmark_workload, DispatchSpec, MicroMode};
use fencesim::{
    run_dispatch, ClusterConfig, DispatchWorkload, LatencyModel, ModelConfig, ProtocolConfig,
    QpPolicy, Signaling,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

const SHAPES: [(u32, u32); 7] = [(1, 2), (1, 4), (2, 1), (2, 2), (2, 4), (4, 1), (4, 2)];

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

fn pick<T: Copy>(rng: &mut SeededRng, xs: &[T]) -> T {
    xs[rng.below(xs.len() as u64) as usize]
}

/// A small dispatch with every shape parameter drawn from `rng`.
pub fn random_workload(rng: &mut SeededRng, min_nodes: u32) -> Result<DispatchWorkload, CliError> {
    let model = ModelConfig {
        name: "random".into(),
        hidden: pick(rng, &[1024, 2048]),
        intermediate: 512,
        experts: pick(rng, &[8, 16, 32]),
        top_k: pick(rng, &[1, 2, 4]),
        compute_intensity: Some(0.5 + 19.5 * rng.unit()),
    };
    let shapes: Vec<(u32, u32)> = SHAPES.into_iter().filter(|s| s.0 >= min_nodes).collect();
    let (nodes, gpus) = pick(rng, &shapes);
    let mut cluster = ClusterConfig::new(nodes, gpus);
    cluster.num_qps = 1 + rng.below(3) as u32;
    let mut spec = DispatchSpec::new(model, cluster, 1 + rng.below(48));
    spec.skew = pick(rng, &[0.0, 0.6, 1.2]);
    spec.tile_mode = rng.unit() < 0.3;
    spec.tile_bytes = 4096;
    spec.seed = rng.below(u64::MAX);
    Ok(build_dispatch(&spec)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedTrial {
    pub trial: u32,
    pub protocol: String,
    pub violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub trials: u32,
    pub fault_injected: bool,
    pub safe_violations: u64,
    /// At most the first 20, in trial order.
    pub failed_trials: Vec<FailedTrial>,
    pub unsafe_protocol: String,
    pub unsafe_violations: u64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.safe_violations == 0 && self.unsafe_violations >= 1
    }
}

/// Trial `i` uses stream `i` of `seed` and safe mode `i % 7`. With
/// `inject_fault` every trial runs vanilla with fences ignored.
pub fn cmd_verify(
    lat: &LatencyModel,
    seed: u64,
    trials: u32,
    inject_fault: bool,
    pool: &rayon::ThreadPool,
) -> Result<VerifyReport, CliError> {
    if trials == 0 {
        return Err(CliError::Config("trials must be >= 1".into()));
    }
    let modes = safe_modes();
    let base = SeededRng::new(seed);
    let outcomes: Vec<Result<FailedTrial, CliError>> = pool.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|i| {
                let mut rng = base.fork(u64::from(i));
                let (p, min_nodes) = if inject_fault {
                    let mut p = ProtocolConfig::vanilla();
                    p.ignore_fences = true;
                    (p, 2)
                } else {
                    (modes[i as usize % modes.len()].clone(), 1)
                };
                let w = random_workload(&mut rng, min_nodes)?;
                let t = run_dispatch(&p, &w, lat)?;
                Ok(FailedTrial {
                    trial: i,
                    protocol: p.label(),
                    violations: verify_ordering(&t).len() as u64,
                })
            })
            .collect()
    });
    let mut safe_violations = 0;
    let mut failed_trials = Vec::new();
    for o in outcomes {
        let o = o?;
        safe_violations += o.violations;
        if o.violations > 0 && failed_trials.len() < 20 {
            failed_trials.push(o);
        }
    }

    let mut cluster = ClusterConfig::perlmutter(2);
    cluster.num_qps = 2;
    let w = microbenchmark_workload(1, 1 << 20, cluster, MicroMode::Coupled)?;
    let rr = ProtocolConfig::nic_ordering().with_qp_policy(QpPolicy::RoundRobin);
    let unsafe_violations = verify_ordering(&run_dispatch(&rr, &w, lat)?).len() as u64;
    Ok(VerifyReport {
        trials,
        fault_injected: inject_fault,
        safe_violations,
        failed_trials,
        unsafe_protocol: "nic_ordering+round_robin".into(),
        unsafe_violations,
    })
}
