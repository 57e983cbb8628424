//! End-to-end tie handling: symmetric users force a tied certificate, a
//! single decoding order cannot meet the targets, and the time-sharing
//! stage repairs the split by averaging candidate orders.

mod common;

use common::random_channel;
use mcmac_core::channel::ChannelSet;
use mcmac_core::ordering;
use mcmac_core::solver::{min_energy_allocate, RateRequirement, SolverOptions};
use mcmac_core::timeshare;

/// Three users with literally identical channels.
fn identical_users_channel(seed: u64, ly: usize, n: usize, sigma2: f64) -> ChannelSet {
    let one = random_channel(seed, 1, ly, n, sigma2);
    let per_sc: Vec<_> = (0..n).map(|sc| one.h(0, sc).clone()).collect();
    ChannelSet::new(vec![per_sc.clone(), per_sc.clone(), per_sc], sigma2).unwrap()
}

#[test]
fn symmetric_users_need_time_sharing() {
    let ch = identical_users_channel(4242, 2, 8, 0.5);
    let target = 6.0;
    let req = RateRequirement::with_unit_weights(vec![target; 3]);
    let opt = SolverOptions::default();
    let out = min_energy_allocate(&ch, &req, &opt).unwrap();

    // Identical users must produce an exactly tied certificate.
    let oc = ordering::derive_order(&out.cert, opt.eps_theta);
    assert_eq!(oc.clusters.len(), 1, "expected one tie cluster, got {:?}", oc.clusters);
    assert_eq!(oc.num_arrangements(), 6);

    // No single order meets the symmetric target...
    let orders = ordering::enumerate_orders(&oc, 720).unwrap();
    let cand = timeshare::rates_per_order(&ch, &out.alloc, &orders).unwrap();
    for row in &cand.rates {
        let worst = row.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(
            worst < target * (1.0 - 1e-3),
            "a single order already meets the target: {row:?}"
        );
    }
    for single in &orders {
        let one = timeshare::rates_per_order(&ch, &out.alloc, core::slice::from_ref(single)).unwrap();
        assert!(timeshare::solve_timeshare(&one, &req.b_min, 1e-3).is_err());
    }

    // ...but a schedule over at most three orders does.
    let sched = timeshare::solve_timeshare(&cand, &req.b_min, 1e-3).unwrap();
    assert!(sched.entries.len() <= 3, "schedule used {} orders", sched.entries.len());
    assert!(sched.entries.len() >= 2);
    let avg = sched.averaged_rates(&cand);
    for (u, a) in avg.iter().enumerate() {
        assert!(
            (a - target).abs() <= 1e-3 * target,
            "user {u} scheduled rate {a} misses {target}"
        );
    }
    let wsum: f64 = sched.entries.iter().map(|(_, w)| *w).sum();
    assert!((wsum - 1.0).abs() < 1e-9);
}

#[test]
fn two_tied_users_among_three() {
    // Users 0 and 1 share a channel; user 2 is distinct and further away
    // in gain, so exactly one pair ties.
    let base = random_channel(77, 2, 2, 6, 0.5);
    let one = random_channel(78, 1, 2, 6, 0.5);
    let per_sc0: Vec<_> = (0..6).map(|sc| one.h(0, sc).clone()).collect();
    let mut weak: Vec<_> = (0..6).map(|sc| base.h(1, sc).clone()).collect();
    for m in weak.iter_mut() {
        *m = mcmac_core::linalg::CMat::from_fn(2, 1, |r, c| m.at(r, c) * 0.4);
    }
    let ch = ChannelSet::new(vec![per_sc0.clone(), per_sc0, weak], 0.5).unwrap();

    let req = RateRequirement::with_unit_weights(vec![4.0, 4.0, 2.0]);
    let opt = SolverOptions::default();
    let out = min_energy_allocate(&ch, &req, &opt).unwrap();
    let oc = ordering::derive_order(&out.cert, opt.eps_theta);
    let pair_cluster = oc.clusters.iter().find(|c| c.len() == 2);
    assert!(
        pair_cluster.map(|c| c.as_slice()) == Some(&[0, 1][..]),
        "expected users 0 and 1 tied, clusters {:?} theta {:?}",
        oc.clusters,
        out.cert.theta
    );

    let orders = ordering::enumerate_orders(&oc, 720).unwrap();
    assert_eq!(orders.len(), 2);
    let cand = timeshare::rates_per_order(&ch, &out.alloc, &orders).unwrap();
    let sched = timeshare::solve_timeshare(&cand, &req.b_min, 1e-3).unwrap();
    let avg = sched.averaged_rates(&cand);
    for u in 0..3 {
        assert!(
            avg[u] >= req.b_min[u] * (1.0 - 2e-3),
            "user {u} scheduled rate {} misses {}",
            avg[u],
            req.b_min[u]
        );
    }
}
