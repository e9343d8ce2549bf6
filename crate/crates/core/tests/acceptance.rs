//! One PASS/FAIL line per acceptance criterion. Run with `--nocapture` to see them.

use std::collections::BTreeMap;

use fencesim::metrics::{
    fence_accounting, fit_alpha_beta, signaling_efficiency, speedup_decomposition, verify_ordering,
    DecompositionRuns,
};
use fencesim::trace::RunTrace;
use fencesim::transport::{QpPolicy, ReqKind};
use fencesim::workload::{
    build_dispatch, message_size, microbenchmark_workload, DispatchSpec, MicroMode,
};
use fencesim::{
    run_dispatch, ClusterConfig, DispatchWorkload, LatencyModel, ModelConfig, ProtocolConfig,
    Signaling,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

// Tokens per PE for the dispatch-level trend checks.
const TREND_S: u64 = 256;

fn run(p: &ProtocolConfig, w: &DispatchWorkload) -> RunTrace {
    run_dispatch(p, w, &LatencyModel::default()).expect("run")
}

fn qwen(nodes: u32, s: u64, skew: f64, seed: u64) -> DispatchWorkload {
    let mut spec = DispatchSpec::new(
        ModelConfig::qwen3_30b(),
        ClusterConfig::perlmutter(nodes),
        s,
    );
    spec.skew = skew;
    spec.seed = seed;
    build_dispatch(&spec).expect("workload")
}

fn fences_per_pe(t: &RunTrace, pes: u32) -> Vec<usize> {
    let mut v = vec![0; pes as usize];
    for r in t.iter_kind(fencesim::trace::RecordKind::Submit) {
        if r.req_kind == Some(ReqKind::FenceMarker) {
            v[r.pe as usize] += 1;
        }
    }
    v
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fence_count_arithmetic() -> Outcome {
    let w4 = qwen(4, TREND_S, 0.0, 0);
    let van = fences_per_pe(&run(&ProtocolConfig::vanilla(), &w4), 16);
    let dec = fences_per_pe(&run(&ProtocolConfig::decoupled(None), &w4), 16);
    let w8 = qwen(8, TREND_S, 0.0, 0);
    let mut sweep = Vec::new();
    for gs in [1, 4, 28, 112] {
        let f = fences_per_pe(&run(&ProtocolConfig::decoupled(Some(gs)), &w8), 32);
        sweep.push(f);
    }
    let ok = van.iter().all(|&c| c == 96)
        && dec.iter().all(|&c| c == 12)
        && sweep
            .iter()
            .zip([112, 28, 4, 1])
            .all(|(f, want)| f.iter().all(|&c| c == want));
    check(
        ok,
        format!(
            "4 nodes vanilla {} / decoupled {} per PE; 8 nodes gs 1,4,28,112 -> {:?}",
            van[0],
            dec[0],
            sweep.iter().map(|f| f[0]).collect::<Vec<_>>()
        ),
    )
}

fn three_transfer_scenario() -> Outcome {
    let mut w = microbenchmark_workload(3, 4096, ClusterConfig::new(2, 1), MicroMode::Coupled)
        .map_err(|e| e.to_string())?;
    w.transfers.retain(|t| t.src == 0);
    let modes = [
        ProtocolConfig::vanilla(),
        ProtocolConfig::decoupled(Some(3)),
        ProtocolConfig::nic_ordering(),
        ProtocolConfig::combined().with_group_size(Some(3)),
    ];
    let got: Vec<(u64, u64)> = modes
        .iter()
        .map(|p| {
            let a = fence_accounting(&run(p, &w)).expect("accounting");
            (a.proxy_stops, a.nic_stalls)
        })
        .collect();
    check(
        got == [(3, 0), (1, 0), (0, 3), (0, 1)],
        format!("(proxy stops, NIC stalls) = {got:?}"),
    )
}

fn random_workload(rng: &mut ChaCha8Rng, min_nodes: u32) -> DispatchWorkload {
    let experts = [8u32, 16, 32][rng.gen_range(0..3)];
    let model = ModelConfig {
        name: "random".into(),
        hidden: [1024u64, 2048][rng.gen_range(0..2)],
        intermediate: 512,
        experts,
        top_k: [1u32, 2, 4][rng.gen_range(0..3)],
        compute_intensity: Some(rng.gen_range(0.5..20.0)),
    };
    let shapes: Vec<(u32, u32)> = [(1, 2), (1, 4), (2, 1), (2, 2), (2, 4), (4, 1), (4, 2)]
        .into_iter()
        .filter(|s| s.0 >= min_nodes)
        .collect();
    let (nodes, gpus) = shapes[rng.gen_range(0..shapes.len())];
    let mut cluster = ClusterConfig::new(nodes, gpus);
    cluster.num_qps = rng.gen_range(1..=3);
    let mut spec = DispatchSpec::new(model, cluster, rng.gen_range(1..=48));
    spec.skew = [0.0, 0.6, 1.2][rng.gen_range(0..3)];
    spec.tile_mode = rng.gen_bool(0.3);
    spec.tile_bytes = 4096;
    spec.seed = rng.gen();
    build_dispatch(&spec).expect("random workload")
}

fn safe_modes() -> Vec<ProtocolConfig> {
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

fn ordering_safety() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let modes = safe_modes();
    let mut bad = 0;
    for i in 0..1000 {
        let w = random_workload(&mut rng, 1);
        let p = &modes[i % modes.len()];
        if !verify_ordering(&run(p, &w)).is_empty() {
            bad += 1;
        }
    }
    let proxy_modes = &modes[..5];
    let mut caught = 0;
    let trials = 400;
    for i in 0..trials {
        let w = random_workload(&mut rng, 2);
        let mut p = proxy_modes[i % proxy_modes.len()].clone();
        p.ignore_fences = true;
        if !verify_ordering(&run(&p, &w)).is_empty() {
            caught += 1;
        }
    }
    let rate = caught as f64 / trials as f64;
    check(
        bad == 0 && rate >= 0.99,
        format!("{bad} violating safe trials of 1000; fault injection caught {caught}/{trials} ({rate:.3})"),
    )
}

fn qp_bug() -> Outcome {
    let mut cluster = ClusterConfig::perlmutter(2);
    cluster.num_qps = 2;
    let w = microbenchmark_workload(1, 1 << 20, cluster, MicroMode::Coupled)
        .map_err(|e| e.to_string())?;
    let rr = verify_ordering(&run(
        &ProtocolConfig::nic_ordering().with_qp_policy(QpPolicy::RoundRobin),
        &w,
    ))
    .len();
    let ph = verify_ordering(&run(
        &ProtocolConfig::nic_ordering().with_qp_policy(QpPolicy::PeerHash),
        &w,
    ))
    .len();
    check(
        rr >= 1 && ph == 0,
        format!("round-robin {rr} violation(s), peer-hash {ph}"),
    )
}

struct Grid {
    vanilla: BTreeMap<(u32, u64, u32), f64>,
    combined: BTreeMap<(u32, u64, u32), f64>,
    fence_per_pe: BTreeMap<(u32, u64, u32), f64>,
}

const GRID_N: [u32; 9] = [1, 2, 4, 8, 16, 32, 64, 96, 128];
const GRID_SIZES: [u64; 6] = [4096, 16384, 65536, 262144, 1 << 20, 4 << 20];
const GRID_NODES: [u32; 3] = [2, 4, 8];

fn microbench_grid() -> Grid {
    let mut g = Grid {
        vanilla: BTreeMap::new(),
        combined: BTreeMap::new(),
        fence_per_pe: BTreeMap::new(),
    };
    for nodes in GRID_NODES {
        let c = ClusterConfig::perlmutter(nodes);
        for size in GRID_SIZES {
            for n in GRID_N {
                let po = microbenchmark_workload(n, size, c.clone(), MicroMode::PutOnly).unwrap();
                let cw = microbenchmark_workload(n, size, c.clone(), MicroMode::Coupled).unwrap();
                let tp = run(&ProtocolConfig::vanilla(), &po);
                let tv = run(&ProtocolConfig::vanilla(), &cw);
                let tc = run(&ProtocolConfig::combined(), &cw);
                let k = (nodes, size, n);
                g.vanilla.insert(k, signaling_efficiency(&tv, &tp).unwrap());
                g.combined
                    .insert(k, signaling_efficiency(&tc, &tp).unwrap());
                let blocked = fence_accounting(&tv).unwrap().proxy_blocked_total;
                g.fence_per_pe.insert(k, blocked as f64 / c.pes() as f64);
            }
        }
    }
    g
}

fn collapse(g: &Grid) -> Outcome {
    let at = g.vanilla[&(8, 4096, 96)];
    let mut increases = Vec::new();
    for nodes in GRID_NODES {
        for size in GRID_SIZES {
            for w in GRID_N.windows(2) {
                if g.vanilla[&(nodes, size, w[1])] > g.vanilla[&(nodes, size, w[0])] {
                    increases.push(format!("N {}->{} at {nodes} nodes {size} B", w[0], w[1]));
                }
            }
        }
    }
    for size in GRID_SIZES {
        for n in GRID_N {
            for w in GRID_NODES.windows(2) {
                if g.vanilla[&(w[1], size, n)] > g.vanilla[&(w[0], size, n)] {
                    increases.push(format!("nodes {}->{} at N={n} {size} B", w[0], w[1]));
                }
            }
        }
    }
    let growth = g.fence_per_pe[&(8, 4096, 96)] / g.fence_per_pe[&(2, 4096, 96)];
    check(
        at <= 0.10 && increases.is_empty() && (4.0..=8.0).contains(&growth),
        format!(
            "vanilla efficiency {at:.3} at (96, 4 KB, 8 nodes); {} monotonicity breaks {:?}; 2->8 node fence time x{growth:.2}",
            increases.len(),
            increases.iter().take(3).collect::<Vec<_>>()
        ),
    )
}

fn recovery(g: &Grid) -> Outcome {
    let at = g.combined[&(8, 4096, 96)];
    let large = g
        .combined
        .iter()
        .filter(|(k, _)| k.1 >= 1 << 20)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    check(
        at >= 0.70 && large >= 0.95,
        format!("combined efficiency {at:.3} at (96, 4 KB, 8 nodes); min {large:.3} at >= 1 MB"),
    )
}

fn decomposition() -> Outcome {
    let w = qwen(8, TREND_S, 0.0, 0);
    let coupled = run(&ProtocolConfig::vanilla(), &w);
    let gs1 = run(&ProtocolConfig::decoupled(Some(1)), &w);
    let (knee, knee_run) = (1..=112u32)
        .filter(|g| 112 % g == 0)
        .map(|g| (g, run(&ProtocolConfig::decoupled(Some(g)), &w)))
        .min_by_key(|(g, t)| (t.makespan(), *g))
        .unwrap();
    let combined = run(&ProtocolConfig::combined().with_group_size(Some(knee)), &w);
    let d = speedup_decomposition(DecompositionRuns {
        coupled: &coupled,
        decoupled_gs1: &gs1,
        decoupled_knee: &knee_run,
        combined: &combined,
    })
    .map_err(|e| e.to_string())?;
    let first = d.reordering as f64 / coupled.makespan() as f64;
    let second = d.fence_reduction as f64 / gs1.makespan() as f64;
    let additive = d.reordering + d.fence_reduction + d.nic_ordering == d.total;
    check(
        first >= 0.05 && second >= 0.20 && additive,
        format!(
            "reordering {:.1}%, fence reduction to knee gs={knee} a further {:.1}%, parts sum exactly: {additive}",
            100.0 * first,
            100.0 * second
        ),
    )
}

fn ablation_crossover() -> Outcome {
    let mut means = BTreeMap::new();
    for nodes in [2u32, 8] {
        let (mut dec, mut nic) = (0.0, 0.0);
        for seed in 0..5 {
            let w = qwen(nodes, TREND_S, 0.0, seed);
            let v = run(&ProtocolConfig::vanilla(), &w).makespan() as f64;
            dec += v / run(&ProtocolConfig::decoupled(None), &w).makespan() as f64 / 5.0;
            nic += v / run(&ProtocolConfig::nic_ordering(), &w).makespan() as f64 / 5.0;
        }
        means.insert(nodes, (dec, nic));
    }
    let (d2, n2) = means[&2];
    let (d8, n8) = means[&8];
    check(
        d2 > n2 && n8 > d8,
        format!("2 nodes decoupled {d2:.2}x vs NIC {n2:.2}x; 8 nodes decoupled {d8:.2}x vs NIC {n8:.2}x"),
    )
}

fn alpha_beta() -> Outcome {
    let model = ModelConfig::qwen3_30b();
    let mut alphas: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut worst_r2 = 1.0f64;
    for (name, p) in [
        ("vanilla", ProtocolConfig::vanilla()),
        ("combined", ProtocolConfig::combined()),
    ] {
        for nodes in [2u32, 4, 8, 16] {
            let pts: Vec<(f64, f64)> = [1024u64, 4096, 16384, 65536]
                .iter()
                .map(|&s| {
                    let m = message_size(s, model.top_k, model.experts, model.hidden);
                    (m as f64, run(&p, &qwen(nodes, s, 0.0, 0)).makespan() as f64)
                })
                .collect();
            let fit = fit_alpha_beta(&pts).map_err(|e| e.to_string())?;
            worst_r2 = worst_r2.min(fit.r_squared);
            alphas.entry(name).or_default().push(fit.alpha);
        }
    }
    let van = &alphas["vanilla"];
    let per = &alphas["combined"];
    let rising = van.windows(2).all(|w| w[1] > w[0]);
    let lo = per.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = per.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let spread = (hi - lo) / lo;
    check(
        worst_r2 > 0.99 && rising && spread < 0.25,
        format!(
            "min R2 {worst_r2:.5}; vanilla alpha {:?} ns; combined alpha {:?} ns (spread {:.1}%)",
            van.iter().map(|a| a.round()).collect::<Vec<_>>(),
            per.iter().map(|a| a.round()).collect::<Vec<_>>(),
            100.0 * spread
        ),
    )
}

fn all_variants() -> Vec<ProtocolConfig> {
    let mut v = safe_modes();
    v.push(ProtocolConfig::combined().with_group_size(Some(1)));
    v
}

fn state_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    for _ in 0..20 {
        let w = random_workload(&mut rng, 1);
        let digests: Vec<String> = all_variants()
            .iter()
            .map(|p| run(p, &w).meta.heap_digest)
            .collect();
        if digests.iter().any(|d| d != &digests[0]) {
            return Err(format!("digests differ: {digests:?}"));
        }
        checked += 1;
    }
    let w = qwen(4, TREND_S, 1.0, 3);
    let digests: Vec<String> = all_variants()
        .iter()
        .map(|p| run(p, &w).meta.heap_digest)
        .collect();
    check(
        digests.iter().all(|d| d == &digests[0]),
        format!(
            "{} variants agree on {} workloads",
            all_variants().len(),
            checked + 1
        ),
    )
}

fn skew_robustness() -> Outcome {
    let mut speedups = Vec::new();
    for skew in [0.0, 0.5, 1.0, 1.5] {
        let w = qwen(8, TREND_S, skew, 1);
        let v = run(&ProtocolConfig::vanilla(), &w).makespan() as f64;
        let c = run(&ProtocolConfig::combined(), &w).makespan() as f64;
        speedups.push(v / c);
    }
    check(
        speedups.iter().all(|&s| s > 1.3),
        format!(
            "combined over vanilla at s = 0, 0.5, 1.0, 1.5: {:?}",
            speedups
                .iter()
                .map(|s| format!("{s:.2}x"))
                .collect::<Vec<_>>()
        ),
    )
}

fn determinism() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut n = 0;
    for p in all_variants() {
        let w = random_workload(&mut rng, 2);
        let a = run(&p, &w).to_ndjson();
        let b = run(&p, &w).to_ndjson();
        if a != b {
            return Err(format!("{} produced different traces", p.label()));
        }
        n += 1;
    }
    let w = qwen(2, 64, 1.2, 9);
    let same = run(&ProtocolConfig::combined(), &w).to_ndjson()
        == run(&ProtocolConfig::combined(), &qwen(2, 64, 1.2, 9)).to_ndjson();
    check(same, format!("{} repeated runs byte-identical", n + 1))
}

fn main() {
    let grid = microbench_grid();
    let results: Vec<(&str, Outcome)> = vec![
        ("fence-count arithmetic", fence_count_arithmetic()),
        (
            "three-transfer stop/stall counts",
            three_transfer_scenario(),
        ),
        ("ordering safety", ordering_safety()),
        ("multi-QP ordering bug", qp_bug()),
        ("collapse trend", collapse(&grid)),
        ("recovery trend", recovery(&grid)),
        ("decomposition shape", decomposition()),
        ("ablation crossover", ablation_crossover()),
        ("alpha-beta behavior", alpha_beta()),
        ("protocol state equivalence", state_equivalence()),
        ("skew robustness", skew_robustness()),
        ("determinism", determinism()),
    ];
    let mut failed = Vec::new();
    for (i, (name, r)) in results.iter().enumerate() {
        match r {
            Ok(d) => println!("PASS {:>2} {name}: {d}", i + 1),
            Err(d) => {
                println!("FAIL {:>2} {name}: {d}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
