//! Time sharing across candidate decoding orders.
//!
//! When the dual certificate ties several users, no single decoding
//! order delivers the per-user targets — each order is a vertex of the
//! capacity region and the target sits strictly inside a face. Running
//! different orders for fractions of time averages the vertices: find
//! weights `t_w >= 0`, `sum t_w = 1`, with `sum_i t_w_i * s_i = b_min`,
//! using as few orders as possible (switching orders costs air time).
//!
//! The minimum-support program is solved exactly by cardinality-ordered
//! subset enumeration: the candidate count is at most 720 and a convex
//! combination on an affine set of dimension `U` never needs more than
//! `U + 1` support points, so enumeration with a per-subset
//! equality-constrained least-squares solve is both exact and cheap.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::rate::{self, DecodingOrder, PowerAllocation};

/// Per-user aggregate rates achieved by each candidate decoding order
/// under one fixed power allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRates {
    /// Candidate orders, one row each.
    pub orders: Vec<DecodingOrder>,
    /// `rates[i][u]`: rate of user `u` under order `i`. Units are the
    /// caller's choice (bits per symbol set or Mbps); targets passed to
    /// [`solve_timeshare`] must use the same units.
    pub rates: Vec<Vec<f64>>,
}

impl CandidateRates {
    pub fn num_orders(&self) -> usize {
        self.orders.len()
    }

    pub fn num_users(&self) -> usize {
        if self.rates.is_empty() { 0 } else { self.rates[0].len() }
    }
}

/// A time-sharing schedule: decoding orders with the fraction of time
/// each one runs. Weights are nonnegative and sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeShareSchedule {
    pub entries: Vec<(DecodingOrder, f64)>,
}

impl TimeShareSchedule {
    /// Time-averaged per-user rates given the candidate table the
    /// schedule was built from.
    pub fn averaged_rates(&self, cand: &CandidateRates) -> Vec<f64> {
        let nu = cand.num_users();
        let mut avg = vec![0.0; nu];
        for (ord, w) in &self.entries {
            let row = cand
                .orders
                .iter()
                .position(|o| o == ord)
                .expect("schedule entry comes from the candidate table");
            for u in 0..nu {
                avg[u] += w * cand.rates[row][u];
            }
        }
        avg
    }

    /// CSV rendering: one row per entry with the dash-joined 1-based
    /// order, its weight, and the per-user rates of that order.
    pub fn to_csv(&self, cand: &CandidateRates) -> String {
        let nu = cand.num_users();
        let mut out = String::from("order,weight");
        for u in 0..nu {
            out.push_str(&format!(",rate_user{}", u + 1));
        }
        out.push('\n');
        for (ord, w) in &self.entries {
            let row = cand
                .orders
                .iter()
                .position(|o| o == ord)
                .expect("schedule entry comes from the candidate table");
            out.push_str(&ord.to_dash_string());
            out.push_str(&format!(",{w:.6}"));
            for u in 0..nu {
                out.push_str(&format!(",{:.6}", cand.rates[row][u]));
            }
            out.push('\n');
        }
        out
    }
}

/// Evaluate the per-user rates of every candidate order under one fixed
/// allocation. Rows share the same user sum (the allocation fixes the
/// total); they differ only in how the total splits.
pub fn rates_per_order(
    ch: &ChannelSet,
    alloc: &PowerAllocation,
    orders: &[DecodingOrder],
) -> Result<CandidateRates> {
    if orders.is_empty() {
        return Err(Error::InvalidInput("need at least one candidate order".into()));
    }
    let mut rates = Vec::with_capacity(orders.len());
    for ord in orders {
        let rm = rate::sic_rates(ch, alloc, ord)?;
        rates.push(rm.user_totals());
    }
    Ok(CandidateRates { orders: orders.to_vec(), rates })
}

/// Find the smallest set of candidate orders whose time average meets
/// `b_min` within a per-user relative tolerance, and the weights that do
/// it. Subsets of equal cardinality are tried in lexicographic order and
/// the first feasible one wins.
pub fn solve_timeshare(
    cand: &CandidateRates,
    b_min: &[f64],
    tol: f64,
) -> Result<TimeShareSchedule> {
    let m = cand.num_orders();
    let nu = cand.num_users();
    if m == 0 {
        return Err(Error::InvalidInput("empty candidate table".into()));
    }
    if b_min.len() != nu {
        return Err(Error::InvalidInput(format!(
            "target has {} entries for {nu} users",
            b_min.len()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    let b_ref = b_min.iter().copied().fold(0.0_f64, f64::max);
    let tol_abs: Vec<f64> = b_min.iter().map(|&b| tol * b.max(1e-9 * b_ref).max(1e-12)).collect();

    // A convex combination hitting a point of an affine set of dimension
    // at most nu never needs more than nu + 1 support points.
    let k_max = m.min(nu + 1);
    let mut subset: Vec<usize> = Vec::new();
    for k in 1..=k_max {
        subset.clear();
        subset.extend(0..k);
        loop {
            if let Some(weights) = try_subset(cand, b_min, &tol_abs, &subset) {
                let mut entries: Vec<(DecodingOrder, f64)> = subset
                    .iter()
                    .zip(weights.iter())
                    .filter(|(_, &w)| w > 1e-12)
                    .map(|(&i, &w)| (cand.orders[i].clone(), w))
                    .collect();
                let total: f64 = entries.iter().map(|(_, w)| *w).sum();
                for e in entries.iter_mut() {
                    e.1 /= total;
                }
                return Ok(TimeShareSchedule { entries });
            }
            if !next_combination(&mut subset, m) {
                break;
            }
        }
    }
    Err(Error::Infeasible(
        "targets are outside the convex hull of the candidate rates".into(),
    ))
}

/// Solve the equality system on one subset and check nonnegativity and
/// per-user tolerance. Returns the weights when feasible.
fn try_subset(
    cand: &CandidateRates,
    b_min: &[f64],
    tol_abs: &[f64],
    subset: &[usize],
) -> Option<Vec<f64>> {
    let k = subset.len();
    let nu = cand.num_users();

    let weights = if k == 1 {
        vec![1.0]
    } else {
        // Least squares of |S t - b|^2 subject to sum(t) = 1 via its KKT
        // system; the subset is skipped when the system is singular
        // (duplicate rows — a smaller subset already covers it).
        let mut m = vec![vec![0.0_f64; k + 2]; k + 1];
        for a in 0..k {
            for b in 0..k {
                let mut dot = 0.0;
                for u in 0..nu {
                    dot += cand.rates[subset[a]][u] * cand.rates[subset[b]][u];
                }
                m[a][b] = dot;
            }
            m[a][k] = 1.0;
            m[k][a] = 1.0;
            let mut rhs = 0.0;
            for u in 0..nu {
                rhs += cand.rates[subset[a]][u] * b_min[u];
            }
            m[a][k + 1] = rhs;
        }
        m[k][k] = 0.0;
        m[k][k + 1] = 1.0;
        solve_dense(&mut m)?[..k].to_vec()
    };

    if weights.iter().any(|&w| w < -1e-9) {
        return None;
    }
    let weights: Vec<f64> = weights.iter().map(|&w| w.max(0.0)).collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }

    for u in 0..nu {
        let avg: f64 = subset
            .iter()
            .zip(weights.iter())
            .map(|(&i, &w)| w * cand.rates[i][u])
            .sum::<f64>()
            / total;
        if (avg - b_min[u]).abs() > tol_abs[u] {
            return None;
        }
    }
    Some(weights)
}

/// Gaussian elimination with partial pivoting on an augmented
/// `n x (n+1)` system; `None` when singular.
fn solve_dense(m: &mut [Vec<f64>]) -> Option<Vec<f64>> {
    let n = m.len();
    let scale = m
        .iter()
        .flat_map(|r| r[..n].iter())
        .fold(0.0_f64, |acc, &v| acc.max(v.abs()))
        .max(1e-300);
    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, m[r][col].abs()))
            .fold((col, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot <= 1e-12 * scale {
            return None;
        }
        m.swap(col, pivot_row);
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[r][col] / m[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..=n {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    Some((0..n).map(|r| m[r][n] / m[r][r]).collect())
}

/// Advance `subset` to the next k-combination of `0..m` in lexicographic
/// order; false once exhausted.
fn next_combination(subset: &mut [usize], m: usize) -> bool {
    let k = subset.len();
    let mut i = k;
    loop {
        if i == 0 {
            return false;
        }
        i -= 1;
        if subset[i] < m - (k - i) {
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn order(v: &[usize]) -> DecodingOrder {
        DecodingOrder::new(v.to_vec()).unwrap()
    }

    fn table(rows: &[(&[usize], &[f64])]) -> CandidateRates {
        CandidateRates {
            orders: rows.iter().map(|(o, _)| order(o)).collect(),
            rates: rows.iter().map(|(_, r)| r.to_vec()).collect(),
        }
    }

    #[test]
    fn published_three_order_schedule() {
        // Three candidate orders for three users, per-user targets of
        // 500 apiece; the known minimum-support solution uses all three
        // rows with weights near (0.52, 0.17, 0.31).
        let cand = table(&[
            (&[2, 1, 0], &[398.01, 470.48, 632.23]),
            (&[0, 2, 1], &[691.78, 242.32, 565.91]),
            (&[1, 0, 2], &[565.91, 691.78, 242.32]),
        ]);
        let sched = solve_timeshare(&cand, &[500.0, 500.0, 500.0], 1e-3).unwrap();
        assert_eq!(sched.entries.len(), 3);
        let w: Vec<f64> = sched.entries.iter().map(|(_, w)| *w).collect();
        assert!((w[0] - 0.52).abs() < 0.01, "w = {w:?}");
        assert!((w[1] - 0.17).abs() < 0.01, "w = {w:?}");
        assert!((w[2] - 0.31).abs() < 0.01, "w = {w:?}");
        let avg = sched.averaged_rates(&cand);
        for a in avg {
            assert!((a - 500.0).abs() < 0.5, "avg {a}");
        }
    }

    #[test]
    fn exact_row_match_uses_one_order() {
        let cand = table(&[
            (&[0, 1], &[2.0, 1.0]),
            (&[1, 0], &[1.0, 2.0]),
        ]);
        let sched = solve_timeshare(&cand, &[1.0, 2.0], 1e-6).unwrap();
        assert_eq!(sched.entries.len(), 1);
        assert_eq!(sched.entries[0].0, order(&[1, 0]));
        assert!((sched.entries[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_midpoint_splits_evenly() {
        let cand = table(&[(&[0, 1], &[2.0, 0.0]), (&[1, 0], &[0.0, 2.0])]);
        let sched = solve_timeshare(&cand, &[1.0, 1.0], 1e-6).unwrap();
        assert_eq!(sched.entries.len(), 2);
        for (_, w) in &sched.entries {
            assert!((w - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn target_outside_hull_is_infeasible() {
        let cand = table(&[(&[0, 1], &[2.0, 0.0]), (&[1, 0], &[0.0, 2.0])]);
        let err = solve_timeshare(&cand, &[1.5, 1.0], 1e-3).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn weights_sum_to_one() {
        let cand = table(&[
            (&[0, 1, 2], &[1.0, 2.0, 3.0]),
            (&[2, 1, 0], &[3.0, 2.0, 1.0]),
            (&[1, 0, 2], &[2.0, 1.0, 3.0]),
        ]);
        let sched = solve_timeshare(&cand, &[2.0, 2.0, 2.0], 1e-3).unwrap();
        let total: f64 = sched.entries.iter().map(|(_, w)| *w).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn duplicate_rows_do_not_break_the_search() {
        let cand = table(&[
            (&[0, 1], &[2.0, 0.0]),
            (&[0, 1], &[2.0, 0.0]),
            (&[1, 0], &[0.0, 2.0]),
        ]);
        let sched = solve_timeshare(&cand, &[1.0, 1.0], 1e-6).unwrap();
        assert_eq!(sched.entries.len(), 2);
    }

    #[test]
    fn minimality_against_grid_search() {
        // Random tables with a feasible target; the reported support
        // size must match a brute-force grid check of all smaller
        // cardinalities.
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let tol = 1e-3;
        for case in 0..40 {
            let nu = 3;
            let m = rng.gen_range(3..6);
            let base_sum = 6.0;
            let mut rows = Vec::new();
            for _ in 0..m {
                let mut r: Vec<f64> = (0..nu).map(|_| rng.gen::<f64>()).collect();
                let s: f64 = r.iter().sum();
                for v in r.iter_mut() {
                    *v *= base_sum / s;
                }
                rows.push(r);
            }
            // Feasible target: a convex combination of the rows.
            let mut w: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
            let ws: f64 = w.iter().sum();
            for v in w.iter_mut() {
                *v /= ws;
            }
            let target: Vec<f64> = (0..nu)
                .map(|u| (0..m).map(|i| w[i] * rows[i][u]).sum())
                .collect();

            let cand = CandidateRates {
                orders: (0..m)
                    .map(|i| {
                        let mut o: Vec<usize> = (0..nu).collect();
                        o.rotate_left(i % nu);
                        DecodingOrder::new(o).unwrap()
                    })
                    .collect(),
                rates: rows.clone(),
            };
            let sched = solve_timeshare(&cand, &target, tol).unwrap();
            let k = sched.entries.len();

            // Grid oracle: any strictly smaller support that meets the
            // target within half the tolerance would contradict
            // minimality (the exact solve can only do better than a
            // grid point).
            let feasible_at = |kk: usize| -> bool {
                let idx: Vec<usize> = (0..m).collect();
                let mut comb: Vec<usize> = (0..kk).collect();
                loop {
                    if grid_feasible(&rows, &comb, &target, 0.5 * tol) {
                        return true;
                    }
                    if !advance(&mut comb, idx.len()) {
                        return false;
                    }
                }
            };
            for smaller in 1..k {
                assert!(
                    !feasible_at(smaller),
                    "case {case}: grid found support {smaller} < reported {k}"
                );
            }
        }

        fn advance(c: &mut [usize], m: usize) -> bool {
            super::next_combination(c, m)
        }

        fn grid_feasible(rows: &[Vec<f64>], comb: &[usize], target: &[f64], tol: f64) -> bool {
            let steps = 400usize;
            let nu = target.len();
            let check = |w: &[f64]| -> bool {
                (0..nu).all(|u| {
                    let avg: f64 = comb.iter().zip(w).map(|(&i, &wi)| wi * rows[i][u]).sum();
                    (avg - target[u]).abs() <= tol * target[u].max(1e-12)
                })
            };
            match comb.len() {
                1 => check(&[1.0]),
                2 => (0..=steps).any(|a| {
                    let t = a as f64 / steps as f64;
                    check(&[t, 1.0 - t])
                }),
                3 => (0..=steps).any(|a| {
                    let ta = a as f64 / steps as f64;
                    (0..=(steps - a)).any(|b| {
                        let tb = b as f64 / steps as f64;
                        check(&[ta, tb, 1.0 - ta - tb])
                    })
                }),
                _ => false,
            }
        }
    }

    #[test]
    fn csv_rendering_lists_entries() {
        let cand = table(&[(&[1, 0], &[0.0, 2.0]), (&[0, 1], &[2.0, 0.0])]);
        let sched = solve_timeshare(&cand, &[1.0, 1.0], 1e-6).unwrap();
        let csv = sched.to_csv(&cand);
        let lines: Vec<&str> = csv.trim().lines().collect();
        assert_eq!(lines[0], "order,weight,rate_user1,rate_user2");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("2-1,0.5") || lines[1].starts_with("1-2,0.5"));
    }
}
