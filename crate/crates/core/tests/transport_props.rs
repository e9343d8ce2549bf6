mod common;

use std::collections::HashMap;

use common::{run, safe_modes, workload_params};
use fencesim::metrics::conservation_check;
use fencesim::protocols::Signaling;
use fencesim::trace::RecordKind;
use fencesim::transport::{FenceStall, ReqKind, SharedLink};
use fencesim::{run_dispatch, LatencyModel, ProtocolConfig, RunTrace};
use proptest::prelude::*;

type Conn = (u32, u32, u32);

/// Submission rank of every request that reached a NIC, and its connection.
fn wire_requests(t: &RunTrace) -> (HashMap<u64, usize>, HashMap<u64, Conn>) {
    let mut rank = HashMap::new();
    for r in t.iter_kind(RecordKind::Submit) {
        if r.req_kind != Some(ReqKind::FenceMarker) {
            rank.insert(r.req_id.unwrap(), rank.len());
        }
    }
    let conn = t
        .iter_kind(RecordKind::NicServiceStart)
        .map(|r| (r.req_id.unwrap(), (r.pe, r.dst.unwrap(), r.qp.unwrap_or(0))))
        .collect();
    (rank, conn)
}

fn check_connections(t: &RunTrace) -> Result<(), TestCaseError> {
    let (rank, conn) = wire_requests(t);
    let completion: HashMap<u64, u64> = t
        .iter_kind(RecordKind::Completion)
        .map(|r| (r.req_id.unwrap(), r.time))
        .collect();
    let mut started: HashMap<Conn, Vec<u64>> = HashMap::new();
    for r in t.iter_kind(RecordKind::NicServiceStart) {
        let id = r.req_id.unwrap();
        let earlier = started.entry(conn[&id]).or_default();
        if let Some(&prev) = earlier.last() {
            prop_assert!(
                rank[&prev] < rank[&id],
                "connection {:?} reordered",
                conn[&id]
            );
        }
        if r.fence_flag == Some(true) {
            for e in earlier.iter() {
                prop_assert!(
                    completion[e] <= r.time,
                    "flagged {id} started at {} before {e} completed at {}",
                    r.time,
                    completion[e]
                );
            }
        }
        earlier.push(id);
    }
    Ok(())
}

#[test]
fn lone_transfer_is_capped_by_flow_fraction() {
    let mut link = SharedLink::with_limits(10.0, 4, 0.5);
    link.start(0, 1, 1000);
    assert_eq!(link.next_finish(), Some(200));
}

#[test]
fn round_trip_grows_linearly_with_contention() {
    let lat = LatencyModel {
        base_rtt: 1000,
        completion_tail_coeff: 0.5,
        ..LatencyModel::default()
    };
    assert_eq!(lat.propagation(0), 1000);
    assert_eq!(lat.propagation(1), 1500);
    assert_eq!(lat.propagation(4), 3000);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn connections_keep_order_and_respect_flags(p in workload_params(2), mode in 0usize..7) {
        let w = p.build();
        check_connections(&run(&safe_modes()[mode], &w))?;
    }

    #[test]
    fn per_connection_stalls_keep_the_same_guarantees(p in workload_params(2), mode in 0usize..7) {
        let w = p.build();
        let lat = LatencyModel { fence_stall: FenceStall::Connection, ..LatencyModel::default() };
        check_connections(&run_dispatch(&safe_modes()[mode], &w, &lat).unwrap())?;
    }

    #[test]
    fn requests_reach_the_engine_in_posting_order(p in workload_params(2), mode in 0usize..7) {
        let w = p.build();
        let t = run(&safe_modes()[mode], &w);
        let (rank, _) = wire_requests(&t);
        let mut per_pe: HashMap<u32, usize> = HashMap::new();
        for r in t.iter_kind(RecordKind::NicServiceStart) {
            let k = rank[&r.req_id.unwrap()];
            if let Some(prev) = per_pe.insert(r.pe, k) {
                prop_assert!(prev < k, "PE {} serviced rank {k} after {prev}", r.pe);
            }
        }
    }

    #[test]
    fn gpu_direct_delivers_in_queue_order(p in workload_params(2), decoupled in any::<bool>()) {
        let w = p.build();
        let sig = if decoupled { Signaling::Decoupled } else { Signaling::Coupled };
        let t = run(&ProtocolConfig::gpu_direct(sig), &w);
        let (rank, conn) = wire_requests(&t);
        let mut last: HashMap<Conn, (usize, u64)> = HashMap::new();
        let mut done: Vec<(usize, u64, u64)> = t
            .iter_kind(RecordKind::Completion)
            .map(|r| (rank[&r.req_id.unwrap()], r.req_id.unwrap(), r.time))
            .collect();
        done.sort();
        for (k, id, time) in done {
            if let Some((pk, pt)) = last.insert(conn[&id], (k, time)) {
                prop_assert!(pk < k && pt <= time, "in-QP order broken on {:?}", conn[&id]);
            }
        }
    }

    #[test]
    fn bytes_and_requests_are_conserved(p in workload_params(1), mode in 0usize..7) {
        let w = p.build();
        let t = run(&safe_modes()[mode], &w);
        let report = conservation_check(&t, &w);
        prop_assert!(report.passed(), "{:?}", report.failures);
        prop_assert_eq!(t.meta.put_bytes_submitted, w.remote_bytes());
        prop_assert_eq!(t.meta.heap_bytes, w.transfers.iter().map(|x| x.bytes).sum::<u64>());
        let puts = t.submitted(ReqKind::Put);
        let put_done = t
            .iter_kind(RecordKind::Completion)
            .filter(|r| r.req_kind == Some(ReqKind::Put))
            .count();
        prop_assert_eq!(puts, put_done);
    }
}
