use std::collections::HashSet;
use std::net::TcpListener;
use std::time::Duration;

use tor_core::gbsgen::{haar_unitary, random_valid_matrix, sampling_matrix, SqueezeSpec};
use tor_core::parallel::{tor_parallel_with_stats, ParallelOptions};
use tor_core::torontonian::Addend;
use tor_core::worksharing::{
    check_trace, run_local_tcp_cohort, run_rank_tcp, simulate, CohortOutcome, MessageKind,
    SimConfig, TcpTransport, WorkerConfig,
};
use tor_core::{tor_recursive, CholeskyPrecision, ComplexMatrix, EvalOptions};

const EXT: CholeskyPrecision = CholeskyPrecision::Extended;

fn cfg(leaf: usize) -> WorkerConfig {
    WorkerConfig {
        leaf_cutoff: leaf,
        recording: true,
        ..WorkerConfig::default()
    }
}

fn gbs(d: usize, seed: u64) -> ComplexMatrix {
    sampling_matrix(&SqueezeSpec::uniform(d, 0.8, seed), &haar_unitary(d, seed))
}

fn masks(v: &[Addend]) -> Vec<u64> {
    let mut m: Vec<u64> = v.iter().map(|a| a.0).collect();
    m.sort_unstable();
    m
}

fn assert_complete(out: &CohortOutcome, d: usize, ranks: usize) {
    assert_eq!(out.result.addend_count, 1 << d);
    assert_eq!(out.ranks.iter().map(|r| r.addends).sum::<u64>(), 1 << d);
    assert!(out.ranks.iter().all(|r| r.terminated));
    assert_eq!(
        masks(out.addends.as_ref().unwrap()),
        (0..1u64 << d).collect::<Vec<_>>()
    );
    check_trace(&out.trace, ranks, true).unwrap();
}

#[test]
fn single_rank_reproduces_shared_memory_addends() {
    let a = gbs(9, 3);
    let out = simulate(
        &a,
        1,
        EvalOptions::recursive(EXT),
        cfg(3),
        SimConfig::seeded(1),
    )
    .unwrap();
    let (_, _, rec) = tor_parallel_with_stats(
        &a,
        EvalOptions::recursive(EXT),
        ParallelOptions::threads(2),
        true,
    )
    .unwrap();
    let bits = |v: Vec<Addend>| {
        let mut b: Vec<_> = v
            .into_iter()
            .map(|(m, x)| (m, x.hi.to_bits(), x.lo.to_bits()))
            .collect();
        b.sort_unstable();
        b
    };
    assert_eq!(bits(out.addends.clone().unwrap()), bits(rec.unwrap()));
    assert!(out.trace.is_empty());
}

#[test]
fn four_ranks_d10_match_serial() {
    let a = random_valid_matrix(10, 0.9, 10);
    let serial = tor_recursive(&a, EvalOptions::recursive(EXT))
        .unwrap()
        .value;
    for seed in 0..20 {
        let out = simulate(
            &a,
            4,
            EvalOptions::recursive(EXT),
            cfg(3),
            SimConfig::seeded(seed),
        )
        .unwrap();
        assert_complete(&out, 10, 4);
        let rel = ((out.result.value - serial) / serial).abs().to_f64();
        assert!(rel < 1e-20, "seed {seed}: {rel:e}");
    }
}

#[test]
fn randomized_interleavings_terminate() {
    let mut offloads = 0;
    for seed in 0..1200u64 {
        let d = 1 + (seed % 8) as usize;
        let ranks = 2 + (seed / 8 % 4) as usize;
        let a = gbs(d, seed);
        let leaf = (seed / 32 % 3) as usize;
        let out = simulate(
            &a,
            ranks,
            EvalOptions::recursive(CholeskyPrecision::Double),
            cfg(leaf),
            SimConfig::seeded(seed),
        )
        .unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        assert_complete(&out, d, ranks);
        offloads += out.ranks.iter().map(|r| r.items_offloaded).sum::<u64>();
    }
    assert!(offloads > 100, "only {offloads} offloads");
}

#[test]
fn result_is_interleaving_independent_with_counting() {
    let a = gbs(8, 4);
    let opts = EvalOptions::recursive(EXT).with_counting(true);
    let base = simulate(&a, 3, opts, cfg(1), SimConfig::seeded(0)).unwrap();
    for seed in 1..30 {
        let out = simulate(&a, 3, opts, cfg(1), SimConfig::seeded(seed)).unwrap();
        let rel = ((out.result.value - base.result.value) / base.result.value)
            .abs()
            .to_f64();
        assert!(rel < 1e-20);
        assert!(out.result.flos.count > 0);
    }
}

#[test]
fn surplus_rank_receives_offloaded_work() {
    // d = 2 leaves rank 2 without initial work.
    let a = gbs(2, 8);
    let mut received = 0;
    for seed in 0..200 {
        let c = WorkerConfig {
            min_pending: 1,
            ..cfg(0)
        };
        let out = simulate(
            &a,
            3,
            EvalOptions::recursive(EXT),
            c,
            SimConfig::seeded(seed),
        )
        .unwrap();
        assert_complete(&out, 2, 3);
        assert!(out.ranks[2].idle_broadcasts >= 1);
        let idle_sent = out
            .trace
            .iter()
            .any(|e| e.from == 2 && e.msg == MessageKind::Status);
        assert!(idle_sent);
        received += out.ranks[2].items_received;
    }
    assert!(received > 0);
}

#[test]
fn idle_ranks_share_a_large_tree() {
    let a = gbs(8, 11);
    let out = simulate(
        &a,
        10,
        EvalOptions::recursive(EXT),
        cfg(2),
        SimConfig::seeded(5),
    )
    .unwrap();
    assert_complete(&out, 8, 10);
    assert!(out.ranks[8].items_received + out.ranks[9].items_received > 0);
    let serial = tor_recursive(&a, EvalOptions::recursive(EXT))
        .unwrap()
        .value;
    assert!(((out.result.value - serial) / serial).abs().to_f64() < 1e-20);
}

#[test]
fn empty_matrix_cohort() {
    let out = simulate(
        &ComplexMatrix::zeros(0),
        3,
        EvalOptions::recursive(EXT),
        cfg(2),
        SimConfig::seeded(0),
    )
    .unwrap();
    assert_eq!(out.result.addend_count, 1);
    assert!(out.ranks.iter().all(|r| r.terminated));
}

#[test]
fn tcp_cohorts_match_serial() {
    let a = gbs(9, 21);
    let serial = tor_recursive(&a, EvalOptions::recursive(EXT))
        .unwrap()
        .value;
    for ranks in [1, 2, 3] {
        let out = run_local_tcp_cohort(&a, ranks, EvalOptions::recursive(EXT), cfg(3), 2).unwrap();
        assert_eq!(out.result.addend_count, 1 << 9);
        let got: HashSet<u64> = masks(out.addends.as_ref().unwrap()).into_iter().collect();
        assert_eq!(got.len(), 1 << 9);
        assert!(((out.result.value - serial) / serial).abs().to_f64() < 1e-20);
        check_trace(&out.trace, ranks, false).unwrap();
    }
}

#[test]
fn tcp_bootstrap_through_rank_zero() {
    let a = gbs(7, 2);
    let serial = tor_recursive(&a, EvalOptions::recursive(EXT))
        .unwrap()
        .value;
    let listeners: Vec<TcpListener> = (0..3)
        .map(|_| TcpListener::bind("127.0.0.1:0").unwrap())
        .collect();
    let root = listeners[0].local_addr().unwrap().to_string();
    let opts = EvalOptions::recursive(EXT);
    let totals: Vec<_> = std::thread::scope(|s| {
        let hs: Vec<_> = listeners
            .iter()
            .enumerate()
            .map(|(rank, l)| {
                let (a, root) = (&a, root.clone());
                s.spawn(move || {
                    let timeout = Duration::from_secs(20);
                    let mut t = if rank == 0 {
                        TcpTransport::bootstrap_root(l, 3, timeout).unwrap()
                    } else {
                        TcpTransport::bootstrap_peer(rank, l, &root, timeout).unwrap()
                    };
                    run_rank_tcp(
                        a,
                        &mut t,
                        opts,
                        WorkerConfig {
                            leaf_cutoff: 2,
                            ..WorkerConfig::default()
                        },
                        1,
                    )
                    .unwrap()
                })
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let total = totals[0].total.unwrap();
    assert!(totals[1].total.is_none());
    assert_eq!(total.addend_count, 1 << 7);
    assert!(((total.value - serial) / serial).abs().to_f64() < 1e-20);
}
