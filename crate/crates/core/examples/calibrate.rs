//! Prints the headline numbers of a latency preset over the microbenchmark grid.
//!
//! Usage: calibrate [base_rtt c service quantum bandwidth [link_concurrency [flow_fraction]]]

use std::collections::BTreeMap;

use fencesim::metrics::{fence_accounting, signaling_efficiency};
use fencesim::workload::{microbenchmark_workload, MicroMode};
use fencesim::{run_dispatch, ClusterConfig, LatencyModel, ProtocolConfig};

fn main() -> fencesim::Result<()> {
    let args: Vec<f64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().unwrap())
        .collect();
    let mut lat = LatencyModel::default();
    if args.len() >= 5 {
        lat.base_rtt = args[0] as u64;
        lat.completion_tail_coeff = args[1];
        lat.per_request_nic_service = args[2] as u64;
        lat.proxy_poll_quantum = args[3] as u64;
        lat.bandwidth = args[4];
    }
    if args.len() >= 6 {
        lat.link_concurrency = args[5] as u32;
    }
    if args.len() >= 7 {
        lat.flow_fraction = args[6];
    }
    let ns = [1u32, 2, 4, 8, 16, 32, 64, 96, 128];
    let sizes = [4096u64, 16384, 65536, 262144, 1 << 20, 4 << 20];
    let mut van = BTreeMap::new();
    let mut comb = BTreeMap::new();
    let mut fence = BTreeMap::new();
    for nodes in [2u32, 4, 8] {
        for &size in &sizes {
            for &n in &ns {
                let c = ClusterConfig::perlmutter(nodes);
                let po = microbenchmark_workload(n, size, c.clone(), MicroMode::PutOnly)?;
                let cw = microbenchmark_workload(n, size, c.clone(), MicroMode::Coupled)?;
                let tp = run_dispatch(&ProtocolConfig::vanilla(), &po, &lat)?;
                let tv = run_dispatch(&ProtocolConfig::vanilla(), &cw, &lat)?;
                let tc = run_dispatch(&ProtocolConfig::combined(), &cw, &lat)?;
                van.insert((nodes, size, n), signaling_efficiency(&tv, &tp)?);
                comb.insert((nodes, size, n), signaling_efficiency(&tc, &tp)?);
                fence.insert(
                    (nodes, size, n),
                    fence_accounting(&tv)?.proxy_blocked_total as f64 / c.pes() as f64,
                );
            }
        }
    }
    println!(
        "vanilla(96,4K,8)={:.3} combined={:.3}",
        van[&(8, 4096, 96)],
        comb[&(8, 4096, 96)]
    );
    let min_big = comb
        .iter()
        .filter(|(k, _)| k.1 >= 1 << 20)
        .map(|(_, v)| *v)
        .fold(1.0, f64::min);
    println!("min combined >=1MB: {min_big:.3}");
    for size in [4096u64, 1 << 20] {
        println!(
            "fence per PE N=96 size={size}: 2n={:.0} 8n={:.0} ratio={:.2}",
            fence[&(2, size, 96)],
            fence[&(8, size, 96)],
            fence[&(8, size, 96)] / fence[&(2, size, 96)]
        );
    }
    let mut worst = 0.0f64;
    for nodes in [2u32, 4, 8] {
        for &size in &sizes {
            for w in ns.windows(2) {
                let up = van[&(nodes, size, w[1])] - van[&(nodes, size, w[0])];
                if up > 0.0 {
                    println!(
                        "N-violation nodes={nodes} size={size} {}->{} +{up:.3e}",
                        w[0], w[1]
                    );
                    worst = worst.max(up);
                }
            }
            for &n in &ns {
                for nn in [[2u32, 4], [4, 8]] {
                    let up = van[&(nn[1], size, n)] - van[&(nn[0], size, n)];
                    if up > 0.0 {
                        println!("node-violation size={size} n={n} {:?} +{up:.3e}", nn);
                        worst = worst.max(up);
                    }
                }
            }
        }
    }
    println!("worst increase {worst:.3e}");
    for &size in &sizes {
        let row: Vec<String> = ns
            .iter()
            .map(|&n| format!("{:.3}", van[&(8, size, n)]))
            .collect();
        println!("8n vanilla size={size}: {}", row.join(" "));
    }
    Ok(())
}
