//! Decoding-order derivation from the dual certificate.
//!
//! The optimal SIC order sorts users by their rate multipliers: the user
//! with the smallest `theta` is decoded first (it pays the least for a
//! rate shortfall and therefore tolerates the most interference), the
//! largest is decoded last. Equal multipliers leave the order ambiguous;
//! those users form a tie cluster, and every arrangement of a cluster is
//! a candidate order with the same power allocation. The time-sharing
//! module averages over candidate orders when a single one cannot meet
//! the targets.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::rate::DecodingOrder;
use crate::solver::DualCertificate;

/// Default relative tolerance below which two multipliers count as tied.
pub const DEFAULT_EPS_THETA: f64 = 1e-6;

/// Absolute floor for the relative tie comparison, so exact zeros tie.
pub const THETA_FLOOR: f64 = 1e-12;

/// Tie clusters in decode order plus the canonical representative order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderClusters {
    /// Partition of the users; earliest-decoded cluster first. Users
    /// within a cluster are listed in ascending index order.
    pub clusters: Vec<Vec<usize>>,
    /// Lexicographically-first arrangement: clusters in sequence, ties
    /// broken by ascending user index.
    pub canonical_order: DecodingOrder,
}

impl OrderClusters {
    /// Number of candidate decoding orders this clustering generates
    /// (the product of per-cluster factorials).
    pub fn num_arrangements(&self) -> u128 {
        self.clusters
            .iter()
            .map(|c| (1..=c.len() as u128).product::<u128>())
            .product()
    }
}

fn tied(a: f64, b: f64, eps: f64) -> bool {
    (a - b).abs() <= eps * a.abs().max(b.abs()).max(THETA_FLOOR)
}

/// Cluster raw multiplier values: sort ascending, then chain-merge
/// adjacent values whose relative gap is within `eps_theta`.
pub fn cluster_values(theta: &[f64], eps_theta: f64) -> OrderClusters {
    let mut idx: Vec<usize> = (0..theta.len()).collect();
    // Ascending theta; ascending user index among exact ties keeps the
    // sort stable and the canonical order deterministic.
    idx.sort_by(|&a, &b| theta[a].partial_cmp(&theta[b]).unwrap().then(a.cmp(&b)));

    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for &u in &idx {
        let start_new = match clusters.last() {
            Some(c) => {
                let last = *c.last().unwrap();
                !tied(theta[last], theta[u], eps_theta)
            }
            None => true,
        };
        if start_new {
            clusters.push(vec![u]);
        } else {
            clusters.last_mut().unwrap().push(u);
        }
    }
    for c in clusters.iter_mut() {
        c.sort_unstable();
    }
    let order: Vec<usize> = clusters.iter().flatten().copied().collect();
    OrderClusters {
        clusters,
        canonical_order: DecodingOrder::new(order).expect("flattened partition is a permutation"),
    }
}

/// Derive the decoding order and tie clusters from a dual certificate.
/// Users sort ascending by `theta` (smallest decoded first); multipliers
/// within `eps_theta` relative of each other merge into one cluster.
pub fn derive_order(cert: &DualCertificate, eps_theta: f64) -> OrderClusters {
    cluster_values(&cert.theta, eps_theta)
}

/// Enumerate every candidate decoding order consistent with the cluster
/// structure: the Cartesian product of within-cluster permutations, with
/// cluster positions fixed. Deterministic lexicographic output; the
/// canonical order always comes first.
pub fn enumerate_orders(oc: &OrderClusters, max_orders: usize) -> Result<Vec<DecodingOrder>> {
    let required = oc.num_arrangements();
    if required > max_orders as u128 {
        return Err(Error::TooManyOrders { required, max: max_orders });
    }
    // Lexicographic permutations per cluster.
    let per_cluster: Vec<Vec<Vec<usize>>> = oc
        .clusters
        .iter()
        .map(|c| {
            let mut p = c.clone();
            let mut all = vec![p.clone()];
            while next_permutation(&mut p) {
                all.push(p.clone());
            }
            all
        })
        .collect();

    let mut result = Vec::with_capacity(required as usize);
    let mut choice = vec![0usize; per_cluster.len()];
    loop {
        let mut order = Vec::with_capacity(oc.canonical_order.num_users());
        for (ci, perms) in per_cluster.iter().enumerate() {
            order.extend_from_slice(&perms[choice[ci]]);
        }
        result.push(DecodingOrder::new(order).expect("cluster product is a permutation"));
        // Advance the rightmost counter (earlier clusters vary slowest,
        // which keeps the concatenated sequences lexicographic).
        let mut ci = per_cluster.len();
        loop {
            if ci == 0 {
                return Ok(result);
            }
            ci -= 1;
            choice[ci] += 1;
            if choice[ci] < per_cluster[ci].len() {
                break;
            }
            choice[ci] = 0;
        }
    }
}

/// In-place lexicographic next permutation; false once exhausted.
fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cert(theta: &[f64]) -> DualCertificate {
        DualCertificate { theta: theta.to_vec(), lambda: vec![0.0; theta.len()] }
    }

    #[test]
    fn distinct_thetas_give_singletons_in_ascending_order() {
        let oc = derive_order(&cert(&[0.1, 0.5, 0.3]), DEFAULT_EPS_THETA);
        assert_eq!(oc.clusters, vec![vec![0], vec![2], vec![1]]);
        assert_eq!(oc.canonical_order.order(), &[0, 2, 1]);
        assert_eq!(oc.num_arrangements(), 1);
    }

    #[test]
    fn equal_thetas_form_one_cluster() {
        let oc = derive_order(&cert(&[0.7, 0.7, 0.7]), DEFAULT_EPS_THETA);
        assert_eq!(oc.clusters, vec![vec![0, 1, 2]]);
        assert_eq!(oc.num_arrangements(), 6);
    }

    #[test]
    fn tolerance_band_clusters_near_ties() {
        let oc = derive_order(&cert(&[0.2, 0.2 + 1e-9, 0.9]), 1e-6);
        assert_eq!(oc.clusters, vec![vec![0, 1], vec![2]]);
        assert_eq!(oc.canonical_order.order(), &[0, 1, 2]);
    }

    #[test]
    fn zero_thetas_tie_through_the_floor() {
        let oc = derive_order(&cert(&[0.0, 0.0, 1.0]), 1e-6);
        assert_eq!(oc.clusters, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn chaining_merges_across_adjacent_pairs() {
        // Each adjacent pair is within tolerance even though the
        // endpoints are not: chaining merges all three.
        let t = 1.0;
        let eps = 1e-6;
        let oc = derive_order(&cert(&[t, t * (1.0 + 0.9e-6), t * (1.0 + 1.8e-6)]), eps);
        assert_eq!(oc.clusters.len(), 1);
    }

    #[test]
    fn enumeration_counts_and_first_element() {
        let oc = derive_order(&cert(&[0.1, 0.2, 0.3]), 1e-6);
        let orders = enumerate_orders(&oc, 720).unwrap();
        assert_eq!(orders.len(), 1);

        let oc = derive_order(&cert(&[0.5, 0.5, 0.5]), 1e-6);
        let orders = enumerate_orders(&oc, 720).unwrap();
        assert_eq!(orders.len(), 6);
        assert_eq!(orders[0], oc.canonical_order);
        // Lexicographic: identity first, then 0,2,1, ...
        assert_eq!(orders[1].order(), &[0, 2, 1]);
    }

    #[test]
    fn two_pair_clusters_keep_cluster_positions() {
        let oc = derive_order(&cert(&[0.1, 0.1, 0.9, 0.9]), 1e-6);
        assert_eq!(oc.clusters, vec![vec![0, 1], vec![2, 3]]);
        let orders = enumerate_orders(&oc, 720).unwrap();
        assert_eq!(orders.len(), 4);
        for o in &orders {
            // Cluster-1 users always decoded before cluster-2 users.
            let pos = o.positions();
            assert!(pos[0].max(pos[1]) < pos[2].min(pos[3]));
        }
        assert_eq!(orders[0], oc.canonical_order);
    }

    #[test]
    fn enumeration_respects_multiplier_monotonicity() {
        let theta = [0.4, 0.1, 0.4, 0.7];
        let oc = derive_order(&cert(&theta), 1e-6);
        for o in enumerate_orders(&oc, 720).unwrap() {
            let seq: Vec<f64> = o.order().iter().map(|&u| theta[u]).collect();
            for w in seq.windows(2) {
                assert!(w[0] <= w[1] + 1e-12);
            }
        }
    }

    #[test]
    fn order_cap_is_enforced() {
        let oc = derive_order(&cert(&[1.0; 7]), 1e-6);
        assert!(matches!(
            enumerate_orders(&oc, 720),
            Err(Error::TooManyOrders { required: 5040, max: 720 })
        ));
    }
}
