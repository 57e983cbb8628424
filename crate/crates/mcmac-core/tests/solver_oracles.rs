//! Independent oracles for the allocation solvers: closed forms, grid
//! searches, water-filling, finite differences, and duality round trips.

mod common;

use common::{assert_close, random_channel, scalar_channel};
use mcmac_core::linalg::{C64, CMat};
use mcmac_core::ordering;
use mcmac_core::rate::{self, DecodingOrder};
use mcmac_core::solver::{
    inner_weighted_max, max_rate_allocate, min_energy_allocate, EnergyBudget, RateRequirement,
    SolverOptions,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LN2: f64 = core::f64::consts::LN_2;

// ---------------------------------------------------------------------------
// inner_weighted_max
// ---------------------------------------------------------------------------

#[test]
fn inner_zero_weights_allocate_nothing() {
    let h = vec![
        CMat::from_rows(&[vec![C64::new(1.0, 0.0)]]),
        CMat::from_rows(&[vec![C64::new(0.5, 0.5)]]),
    ];
    let p = inner_weighted_max(&h, 1.0, &[0.0, 0.0], &[1.0, 1.0], &SolverOptions::default())
        .unwrap();
    assert_eq!(p, vec![0.0, 0.0]);
}

#[test]
fn inner_single_user_matches_water_filling_stationarity() {
    // p = max(0, theta/(price ln2) - sigma^2/|h|^2)
    let sigma2 = 0.7;
    let h = vec![CMat::from_rows(&[vec![C64::new(1.3, 0.4)]])];
    let g = 1.3f64 * 1.3 + 0.4 * 0.4;
    for (theta, price) in [(2.0, 1.0), (0.5, 1.0), (0.1, 1.0), (3.0, 2.5)] {
        let p = inner_weighted_max(&h, sigma2, &[theta], &[price], &SolverOptions::default())
            .unwrap();
        let expected = (theta / (price * LN2) - sigma2 / g).max(0.0);
        assert_close(p[0], expected, 1e-6, "single-user inner power");
    }
}

#[test]
fn inner_two_user_matches_grid_search() {
    let sigma2 = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..5 {
        let g1 = 0.5 + rng.gen::<f64>() * 1.5;
        let g2 = 0.5 + rng.gen::<f64>() * 1.5;
        let h = vec![
            CMat::from_rows(&[vec![C64::new(g1.sqrt(), 0.0)]]),
            CMat::from_rows(&[vec![C64::new(g2.sqrt(), 0.0)]]),
        ];
        let theta = [1.0 + rng.gen::<f64>(), 2.0 + rng.gen::<f64>()];
        let price = [1.0, 1.0];
        let p = inner_weighted_max(&h, sigma2, &theta, &price, &SolverOptions::default()).unwrap();

        // Objective under the ascending-theta decode order (user 0 first).
        let objective = |p1: f64, p2: f64| -> f64 {
            let b2 = (1.0 + g2 * p2 / sigma2).log2();
            let b1 = (1.0 + (g1 * p1 + g2 * p2) / sigma2).log2() - b2;
            theta[0] * b1 + theta[1] * b2 - price[0] * p1 - price[1] * p2
        };
        let got = objective(p[0], p[1]);
        let pmax = 3.0 * theta[1] / LN2;
        let steps = 600;
        let mut best = f64::NEG_INFINITY;
        for i in 0..=steps {
            for j in 0..=steps {
                let v = objective(
                    pmax * i as f64 / steps as f64,
                    pmax * j as f64 / steps as f64,
                );
                if v > best {
                    best = v;
                }
            }
        }
        assert!(
            got >= best - 0.01 * best.abs().max(1e-9),
            "case {case}: inner {got} vs grid {best}"
        );
    }
}

// ---------------------------------------------------------------------------
// min_energy_allocate
// ---------------------------------------------------------------------------

#[test]
fn min_energy_single_user_single_carrier_closed_form() {
    // |h|^2 = 1: e = sigma^2 (2^b - 1).
    let sigma2 = 0.9;
    let ch = scalar_channel(&[vec![1.0]], sigma2);
    for b in [0.5, 1.0, 3.0] {
        let req = RateRequirement::with_unit_weights(vec![b]);
        let out = min_energy_allocate(&ch, &req, &SolverOptions::default()).unwrap();
        let expected = sigma2 * ((2f64).powf(b) - 1.0);
        assert_close(out.alloc.e[0][0], expected, 1e-3, "closed-form energy");
        assert!(out.rates.user_total(0) >= b * (1.0 - 1e-4));
    }
}

#[test]
fn min_energy_zero_targets_zero_energy() {
    let ch = random_channel(3, 2, 2, 4, 0.5);
    let req = RateRequirement::with_unit_weights(vec![0.0, 0.0]);
    let out = min_energy_allocate(&ch, &req, &SolverOptions::default()).unwrap();
    assert_eq!(out.alloc.total(), 0.0);
    assert_eq!(out.rates.total(), 0.0);
    assert_eq!(out.cert.theta, vec![0.0, 0.0]);
}

#[test]
fn min_energy_zero_channel_is_infeasible() {
    let ch = scalar_channel(&[vec![0.0, 0.0], vec![1.0, 1.0]], 1.0);
    let req = RateRequirement::with_unit_weights(vec![1.0, 1.0]);
    assert!(matches!(
        min_energy_allocate(&ch, &req, &SolverOptions::default()),
        Err(mcmac_core::Error::Infeasible(_))
    ));
}

/// Exact minimum energy for a 2-user scalar subcarrier at a given rate
/// pair: the polymatroid feasible set in (e1, e2) is three half-planes,
/// so the optimum sits at one of two corners.
fn pair_min_energy(b1: f64, b2: f64, g1: f64, g2: f64, sigma2: f64, w: (f64, f64)) -> f64 {
    let a1 = sigma2 * ((2f64).powf(b1) - 1.0) / g1;
    let a2 = sigma2 * ((2f64).powf(b2) - 1.0) / g2;
    let s = sigma2 * ((2f64).powf(b1 + b2) - 1.0);
    let corner1 = w.0 * a1 + w.1 * ((s - g1 * a1) / g2).max(a2);
    let corner2 = w.0 * ((s - g2 * a2) / g1).max(a1) + w.1 * a2;
    corner1.min(corner2)
}

/// Enumerate per-subcarrier rate splits of `total` bits over `n`
/// subcarriers on a simplex grid with `m` steps, calling `f` with each.
fn for_each_split(total: f64, n: usize, m: usize, f: &mut impl FnMut(&[f64])) {
    fn rec(total: f64, m_left: usize, m: usize, idx: usize, cur: &mut Vec<f64>, f: &mut impl FnMut(&[f64])) {
        if idx + 1 == cur.len() {
            cur[idx] = total * m_left as f64 / m as f64;
            f(cur);
            return;
        }
        for k in 0..=m_left {
            cur[idx] = total * k as f64 / m as f64;
            rec(total, m_left - k, m, idx + 1, cur, f);
        }
    }
    let mut cur = vec![0.0; n];
    rec(total, m, m, 0, &mut cur, f);
}

/// Grid oracle: exhaustive search over per-user per-subcarrier rate
/// splits with the exact per-subcarrier minimum-energy corner solve.
fn grid_oracle_two_users(
    g: &[Vec<f64>; 2],
    sigma2: f64,
    b_min: (f64, f64),
    weights: (f64, f64),
    m: usize,
) -> f64 {
    let n = g[0].len();
    let mut best = f64::INFINITY;
    for_each_split(b_min.0, n, m, &mut |split1| {
        let split1 = split1.to_vec();
        for_each_split(b_min.1, n, m, &mut |split2| {
            let mut cost = 0.0;
            for sc in 0..n {
                cost += pair_min_energy(
                    split1[sc],
                    split2[sc],
                    g[0][sc],
                    g[1][sc],
                    sigma2,
                    weights,
                );
                if cost >= best {
                    return;
                }
            }
            best = cost;
        });
    });
    best
}

#[test]
fn min_energy_two_user_grid_oracle() {
    let sigma2 = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for case in 0..5 {
        let n = 4;
        let g: [Vec<f64>; 2] = [
            (0..n).map(|_| 0.3 + rng.gen::<f64>() * 1.7).collect(),
            (0..n).map(|_| 0.3 + rng.gen::<f64>() * 1.7).collect(),
        ];
        let b1 = 1.0 + rng.gen::<f64>() * 2.0;
        let b2 = 1.0 + rng.gen::<f64>() * 2.0;
        let ch = scalar_channel(
            &[g[0].iter().map(|v| v.sqrt()).collect(), g[1].iter().map(|v| v.sqrt()).collect()],
            sigma2,
        );
        let req = RateRequirement::with_unit_weights(vec![b1, b2]);
        let out = min_energy_allocate(&ch, &req, &SolverOptions::default()).unwrap();
        let solver_cost = out.alloc.total();
        let oracle = grid_oracle_two_users(&g, sigma2, (b1, b2), (1.0, 1.0), 28);
        assert!(
            (solver_cost - oracle).abs() <= 0.02 * oracle,
            "case {case}: solver {solver_cost} vs oracle {oracle}"
        );
        // The returned rates must re-derive from the allocation.
        for u in 0..2 {
            assert!(out.rates.user_total(u) >= req.b_min[u] * (1.0 - 1e-4));
        }
    }
}

#[test]
fn min_energy_scaling_weights_scales_theta_only() {
    let ch = random_channel(55, 2, 2, 4, 0.8);
    let req = RateRequirement::with_unit_weights(vec![2.0, 3.0]);
    let out1 = min_energy_allocate(&ch, &req, &SolverOptions::default()).unwrap();
    let scaled = RateRequirement { b_min: req.b_min.clone(), weights: vec![7.0, 7.0] };
    let out2 = min_energy_allocate(&ch, &scaled, &SolverOptions::default()).unwrap();
    assert_close(out2.alloc.total(), out1.alloc.total(), 1e-3, "total energy under scaling");
    for u in 0..2 {
        assert_close(out2.cert.theta[u], 7.0 * out1.cert.theta[u], 1e-3, "theta scaling");
    }
}

#[test]
fn min_energy_trace_and_weak_duality() {
    let ch = random_channel(77, 2, 1, 4, 0.5);
    let req = RateRequirement::with_unit_weights(vec![2.0, 1.5]);
    let opt = SolverOptions { record_trace: true, ..SolverOptions::default() };
    let out = min_energy_allocate(&ch, &req, &opt).unwrap();
    let trace = out.trace.as_ref().unwrap();
    assert!(!trace.is_empty());
    // Every dual value is a lower bound on the primal cost (up to inner
    // solve tolerance), and the recorded best never decreases.
    let primal = out.alloc.total();
    let mut best = f64::NEG_INFINITY;
    for pt in trace {
        best = best.max(pt.dual_value);
        assert!(best >= pt.dual_value);
        assert!(pt.dual_value <= primal * (1.0 + 1e-3) + 1e-9);
    }
    assert!(best >= primal * (1.0 - 1e-2), "best dual {best} far below primal {primal}");
}

#[test]
fn min_energy_order_matches_certificate() {
    for seed in [5u64, 6, 7, 8] {
        let ch = random_channel(seed, 3, 2, 6, 0.4);
        let req = RateRequirement::with_unit_weights(vec![2.0, 3.0, 1.0]);
        let out = min_energy_allocate(&ch, &req, &SolverOptions::default()).unwrap();
        let oc = ordering::derive_order(&out.cert, ordering::DEFAULT_EPS_THETA);
        let again = rate::sic_rates(&ch, &out.alloc, &oc.canonical_order).unwrap();
        assert_eq!(again, out.rates, "seed {seed}: rates must re-derive from cert order");
    }
}

#[test]
fn min_energy_kkt_marginals_match_prices() {
    let ch = random_channel(91, 2, 2, 3, 0.7);
    let req = RateRequirement::with_unit_weights(vec![2.0, 2.5]);
    let opt = SolverOptions::default();
    let out = min_energy_allocate(&ch, &req, &opt).unwrap();
    let oc = ordering::derive_order(&out.cert, opt.eps_theta);
    let ord = &oc.canonical_order;
    // For every loaded entry, the theta-weighted marginal rate equals
    // the energy price (finite differences through the rate module).
    for u in 0..2 {
        for sc in 0..3 {
            let e = out.alloc.e[u][sc];
            if e < 1e-9 * out.alloc.total() {
                continue;
            }
            let delta = e * 1e-5;
            let weighted = |alloc: &mcmac_core::rate::PowerAllocation| -> f64 {
                let r = rate::sic_rates(&ch, alloc, ord).unwrap();
                (0..2).map(|v| out.cert.theta[v] * r.user_total(v)).sum()
            };
            let mut up = out.alloc.clone();
            up.e[u][sc] += delta;
            let mut dn = out.alloc.clone();
            dn.e[u][sc] -= delta;
            let marginal = (weighted(&up) - weighted(&dn)) / (2.0 * delta);
            assert_close(marginal, 1.0, 1e-4, "stationarity at loaded entry");
        }
    }
}

// ---------------------------------------------------------------------------
// max_rate_allocate
// ---------------------------------------------------------------------------

#[test]
fn max_rate_single_user_matches_water_filling_oracle() {
    let sigma2 = 0.6;
    let gains_sqrt = vec![1.2, 0.5, 0.9, 1.6];
    let ch = scalar_channel(&[gains_sqrt.clone()], sigma2);
    let budget = EnergyBudget::with_unit_weights(vec![2.5]);
    let out = max_rate_allocate(&ch, &budget, &SolverOptions::default()).unwrap();

    // Independent closed-form water-filling oracle.
    let g: Vec<f64> = gains_sqrt.iter().map(|v| v * v / sigma2).collect();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| g[b].partial_cmp(&g[a]).unwrap());
    let mut best_rate = 0.0f64;
    for m in 1..=4 {
        let inv: f64 = order[..m].iter().map(|&i| 1.0 / g[i]).sum();
        let mu = (2.5 + inv) / m as f64;
        if order[..m].iter().all(|&i| mu >= 1.0 / g[i]) {
            let rate: f64 = order[..m].iter().map(|&i| (mu * g[i]).log2()).sum();
            best_rate = best_rate.max(rate);
        }
    }
    assert_close(out.rates.total(), best_rate, 1e-5, "water-filling rate");
    assert!(out.alloc.user_total(0) <= 2.5 * (1.0 + 1e-6));
}

#[test]
fn max_rate_zero_budget_zero_everything() {
    let ch = random_channel(13, 2, 2, 4, 0.5);
    let budget = EnergyBudget::with_unit_weights(vec![0.0, 0.0]);
    let out = max_rate_allocate(&ch, &budget, &SolverOptions::default()).unwrap();
    assert_eq!(out.alloc.total(), 0.0);
    assert_eq!(out.rates.total(), 0.0);
}

#[test]
fn max_rate_budgets_bind_and_respect_caps() {
    let ch = random_channel(29, 3, 2, 6, 0.4);
    let budget = EnergyBudget::with_unit_weights(vec![1.0, 2.0, 0.7]);
    let out = max_rate_allocate(&ch, &budget, &SolverOptions::default()).unwrap();
    for u in 0..3 {
        let total = out.alloc.user_total(u);
        assert!(total <= budget.e_max[u] * (1.0 + 1e-6), "user {u} over budget");
        assert!(total >= budget.e_max[u] * (1.0 - 1e-3), "user {u} budget slack");
    }
}

#[test]
fn max_rate_kkt_marginals_match_budget_prices() {
    let ch = random_channel(41, 2, 2, 4, 0.5);
    let budget = EnergyBudget::with_unit_weights(vec![1.5, 0.8]);
    let opt = SolverOptions::default();
    let out = max_rate_allocate(&ch, &budget, &opt).unwrap();
    let ord = DecodingOrder::identity(2);
    for u in 0..2 {
        for sc in 0..4 {
            let e = out.alloc.e[u][sc];
            if e < 1e-6 * out.alloc.total() {
                continue;
            }
            let delta = e * 1e-5;
            let weighted = |alloc: &mcmac_core::rate::PowerAllocation| -> f64 {
                let r = rate::sic_rates(&ch, alloc, &ord).unwrap();
                (0..2).map(|v| out.cert.theta[v] * r.user_total(v)).sum()
            };
            let mut up = out.alloc.clone();
            up.e[u][sc] += delta;
            let mut dn = out.alloc.clone();
            dn.e[u][sc] -= delta;
            let marginal = (weighted(&up) - weighted(&dn)) / (2.0 * delta);
            assert_close(marginal, out.cert.lambda[u], 1e-4, "budget-price stationarity");
        }
    }
}

#[test]
fn duality_round_trip_recovers_targets() {
    for seed in [101u64, 102, 103] {
        let ch = random_channel(seed, 2, 2, 4, 0.6);
        let req = RateRequirement::with_unit_weights(vec![2.0, 3.0]);
        let fwd = min_energy_allocate(&ch, &req, &SolverOptions::default()).unwrap();
        let budget = EnergyBudget {
            e_max: (0..2).map(|u| fwd.alloc.user_total(u)).collect(),
            theta_w: fwd.cert.theta.clone(),
        };
        let back = max_rate_allocate(&ch, &budget, &SolverOptions::default()).unwrap();
        for u in 0..2 {
            assert_close(
                back.rates.user_total(u),
                req.b_min[u],
                0.01,
                &format!("seed {seed} user {u} round-trip rate"),
            );
        }
    }
}
