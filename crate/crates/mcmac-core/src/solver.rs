//! Primal–dual power and subcarrier allocation.
//!
//! Two coupled problems are solved over the same machinery:
//!
//! * **Energy minimization** ([`min_energy_allocate`]): minimize the
//!   weighted transmit energy sum subject to per-user minimum aggregate
//!   rates. The Lagrange multipliers `theta` of the rate constraints form
//!   the dual certificate; their sort order *is* the optimal SIC decoding
//!   order (smallest decoded first).
//! * **Rate maximization** ([`max_rate_allocate`]): maximize a weighted
//!   rate sum subject to per-user energy budgets, with multipliers
//!   `lambda` on the budgets.
//!
//! Both decompose per subcarrier once the multipliers are fixed: the
//! inner problem maximizes `sum_u theta_u * b_u(p) - sum_u price_u * p_u`
//! on one subcarrier, where the rates are SIC rates under the order that
//! sorts `theta` ascending-decoded-first. Rewriting the weighted rate sum
//! by partial summation turns it into a nonnegative combination of
//! concave log-det terms, so the inner problem is concave and is solved
//! by projected gradient ascent with a backtracking line search
//! ([`inner_weighted_max`] is the public entry point).
//!
//! The outer loop is a projected subgradient ascent on the multipliers
//! with per-user sign-adaptive step sizes, plus a tie-snapping finalizer:
//! when several `theta` converge to a common value the solver snaps them
//! exactly together, verifies that the targets stay reachable inside the
//! tied cluster (a polymatroid-face check), and reports the tie in the
//! certificate so the time-sharing stage can average over the cluster's
//! candidate orders.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::linalg::{C64, CMat};
use crate::ordering;
use crate::rate::{self, DecodingOrder, PowerAllocation, RateMatrix};

const LN2: f64 = core::f64::consts::LN_2;

/// Coarse relative tolerance for detecting *forming* multiplier ties in
/// the outer loop. Convergence and certificate reporting use the strict
/// `SolverOptions::eps_theta` instead.
const GROUP_EPS: f64 = 0.05;

/// Per-user rate targets and energy weights for the primal problem.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRequirement {
    /// Minimum aggregate rate per user, in bits per subcarrier-symbol
    /// summed over subcarriers. Zero disables the constraint.
    pub b_min: Vec<f64>,
    /// Positive energy weights in the objective.
    pub weights: Vec<f64>,
}

impl RateRequirement {
    /// Equal unit weights.
    pub fn with_unit_weights(b_min: Vec<f64>) -> Self {
        let n = b_min.len();
        RateRequirement { b_min, weights: vec![1.0; n] }
    }

    fn validate(&self, num_users: usize) -> Result<()> {
        if self.b_min.len() != num_users || self.weights.len() != num_users {
            return Err(Error::InvalidInput(format!(
                "requirement sized {}/{} for {num_users} users",
                self.b_min.len(),
                self.weights.len()
            )));
        }
        if self.b_min.iter().any(|&b| !(b >= 0.0) || !b.is_finite()) {
            return Err(Error::InvalidInput("rate targets must be finite and nonnegative".into()));
        }
        // A zero weight makes that user's energy free and the dual
        // decomposition degenerate, so strict positivity is required.
        if self.weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput("energy weights must be finite and positive".into()));
        }
        Ok(())
    }
}

/// Per-user energy budgets and rate weights for the dual problem.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyBudget {
    /// Total energy budget per user (linear watts across subcarriers).
    pub e_max: Vec<f64>,
    /// Nonnegative rate weights of the objective.
    pub theta_w: Vec<f64>,
}

impl EnergyBudget {
    /// Equal unit rate weights.
    pub fn with_unit_weights(e_max: Vec<f64>) -> Self {
        let n = e_max.len();
        EnergyBudget { e_max, theta_w: vec![1.0; n] }
    }

    fn validate(&self, num_users: usize) -> Result<()> {
        if self.e_max.len() != num_users || self.theta_w.len() != num_users {
            return Err(Error::InvalidInput(format!(
                "budget sized {}/{} for {num_users} users",
                self.e_max.len(),
                self.theta_w.len()
            )));
        }
        if self.e_max.iter().any(|&e| !(e >= 0.0) || !e.is_finite()) {
            return Err(Error::InvalidInput("energy budgets must be finite and nonnegative".into()));
        }
        if self.theta_w.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
            return Err(Error::InvalidInput("rate weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Dual certificate: the rate multipliers whose order encodes the
/// optimal decoding order, plus the budget multipliers when the rate
/// maximization produced the result.
#[derive(Debug, Clone, PartialEq)]
pub struct DualCertificate {
    /// Rate-constraint multipliers (primal) or the given rate weights
    /// (dual problem). Larger values are decoded later.
    pub theta: Vec<f64>,
    /// Budget multipliers; zero for the primal problem.
    pub lambda: Vec<f64>,
}

/// Knobs of the iterative solver.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Relative tolerance on the rate (or budget) residuals.
    pub rate_tol: f64,
    /// Relative tolerance of the inner projected-gradient stationarity
    /// residual, measured against the energy prices.
    pub inner_tol: f64,
    /// Outer iteration cap.
    pub max_outer_iters: usize,
    /// Multiplier on the initial outer step sizes.
    pub step_scale: f64,
    /// Divergence guard on the total transmit energy, in watts. `None`
    /// derives a cap from the channel: the energy that would place a
    /// per-subcarrier received SNR of 1e6 on every subcarrier of each
    /// constrained user.
    pub energy_cap: Option<f64>,
    /// Relative tolerance under which multipliers count as tied.
    pub eps_theta: f64,
    /// Record a per-iteration trace in the outcome.
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            rate_tol: 1e-4,
            inner_tol: 1e-8,
            max_outer_iters: 5000,
            step_scale: 1.0,
            energy_cap: None,
            eps_theta: ordering::DEFAULT_EPS_THETA,
            record_trace: false,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        let pos = [self.rate_tol, self.inner_tol, self.step_scale, self.eps_theta];
        if pos.iter().any(|&v| !(v > 0.0) || !v.is_finite()) || self.max_outer_iters == 0 {
            return Err(Error::InvalidInput("solver options must be positive".into()));
        }
        if let Some(cap) = self.energy_cap {
            if !(cap > 0.0) {
                return Err(Error::InvalidInput("energy_cap must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One outer-iteration trace record.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub iter: usize,
    pub dual_value: f64,
    pub max_residual: f64,
}

/// Solver output: the allocation, the rates re-derived from it through
/// the rate module, the dual certificate, and an optional trace.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub alloc: PowerAllocation,
    pub rates: RateMatrix,
    pub cert: DualCertificate,
    pub trace: Option<Vec<TracePoint>>,
}

// ---------------------------------------------------------------------------
// Per-subcarrier signatures and the concave inner problem
// ---------------------------------------------------------------------------

/// Channel columns scaled by `1/sqrt(L_x * sigma^2)` so that
/// `I + sum_u p_u * G_u G_u^H` is the normalized interference-plus-noise
/// matrix and all determinant ratios lose the noise scale exactly.
struct Signatures {
    /// `cols[n][u]` are the scaled columns of user `u` on subcarrier `n`.
    cols: Vec<Vec<Vec<Vec<C64>>>>,
    /// `gain[u][n]`: received SNR per unit transmit energy (trace of the
    /// scaled gram), used for initialization and divergence guards.
    gain: Vec<Vec<f64>>,
    ly: usize,
}

impl Signatures {
    fn build(ch: &ChannelSet) -> Self {
        let nu = ch.num_users();
        let n = ch.num_subcarriers();
        let sigma2 = ch.noise_variance();
        let mut cols = Vec::with_capacity(n);
        let mut gain = vec![vec![0.0; n]; nu];
        for sc in 0..n {
            let mut per_user = Vec::with_capacity(nu);
            for u in 0..nu {
                let h = ch.h(u, sc);
                let scale = 1.0 / (h.cols() as f64 * sigma2).sqrt();
                let mut user_cols = Vec::with_capacity(h.cols());
                let mut tr = 0.0;
                for c in 0..h.cols() {
                    let col: Vec<C64> = (0..h.rows()).map(|r| h.at(r, c) * scale).collect();
                    tr += col.iter().map(|z| z.norm_sqr()).sum::<f64>();
                    user_cols.push(col);
                }
                gain[u][sc] = tr;
                per_user.push(user_cols);
            }
            cols.push(per_user);
        }
        Signatures { cols, gain, ly: ch.ap_antennas() }
    }
}

/// Mutable per-subcarrier solver state kept across outer iterations.
struct ScState {
    /// Power per (global) user on this subcarrier.
    p: Vec<f64>,
}

/// Result of one inner solve: per-user rates on the subcarrier (global
/// indexing) and the inner objective value.
struct InnerEval {
    rates: Vec<f64>,
    objective: f64,
}

/// Maximize `sum theta_u b_u(p) - sum price_u p_u` on one subcarrier for
/// the participants listed in decode order. `theta` must be nondecreasing
/// along `decode`; powers of non-participants are forced to zero.
fn solve_subcarrier(
    sig: &Signatures,
    sc: usize,
    decode: &[usize],
    theta: &[f64],
    price: &[f64],
    state: &mut ScState,
    inner_tol: f64,
    max_iters: usize,
) -> InnerEval {
    let nu = theta.len();
    let k = decode.len();
    let mut rates = vec![0.0; nu];
    // Zero any stale power of users not participating on this subcarrier.
    let mut in_set = vec![false; nu];
    for &u in decode {
        in_set[u] = true;
    }
    for u in 0..nu {
        if !in_set[u] {
            state.p[u] = 0.0;
        }
    }
    if k == 0 {
        return InnerEval { rates, objective: 0.0 };
    }

    // Partial-summation coefficients: c[0] = theta[first decoded],
    // c[j] = theta[j] - theta[j-1] >= 0 along the decode order.
    let mut coef = vec![0.0; k];
    for j in 0..k {
        let t = theta[decode[j]];
        let prev = if j == 0 { 0.0 } else { theta[decode[j - 1]] };
        coef[j] = (t - prev).max(0.0);
    }

    // One pass over the chain matrices A_j = I + sum_{i>=j} p_i G_i G_i^H
    // yields the objective, the per-position rates, and (through the
    // whitened signatures Y_{j,u} = L_j^{-1} G_u at positions with a
    // positive coefficient) the exact gradient and Hessian:
    //
    //   grad_u  = (1/ln2) sum_{j<=u} c_j ||Y_{j,u}||_F^2            - price_u
    //   hess_uv = -(1/ln2) sum_{j<=min(u,v)} c_j ||Y_{j,v}^H Y_{j,u}||_F^2
    struct Curvature {
        obj: f64,
        rates: Vec<f64>,
        grad: Vec<f64>,
        neg_hess: Vec<Vec<f64>>,
    }
    let eval = |p: &[f64]| -> Curvature {
        let mut a = CMat::identity(sig.ly);
        let mut lds = vec![0.0; k + 1];
        let mut grad = vec![0.0; k];
        let mut neg_hess = vec![vec![0.0; k]; k];
        for j in (0..k).rev() {
            let u = decode[j];
            for col in &sig.cols[sc][u] {
                a.add_scaled_outer(col, p[u]);
            }
            let l = a.cholesky().expect("normalized chain matrix is PD");
            lds[j] = CMat::log2_det_from_chol(&l);
            if coef[j] <= 0.0 {
                continue;
            }
            // Whitened columns of every user still present in A_j.
            let whitened: Vec<Vec<Vec<C64>>> = (j..k)
                .map(|m| {
                    sig.cols[sc][decode[m]]
                        .iter()
                        .map(|col| l.forward_solve(col))
                        .collect()
                })
                .collect();
            for m in j..k {
                let quad: f64 = whitened[m - j]
                    .iter()
                    .map(|y| y.iter().map(|z| z.norm_sqr()).sum::<f64>())
                    .sum();
                grad[m] += coef[j] * quad;
                for mm in m..k {
                    let mut cross = 0.0;
                    for ya in &whitened[m - j] {
                        for yb in &whitened[mm - j] {
                            let dot: C64 = ya
                                .iter()
                                .zip(yb.iter())
                                .map(|(x, y)| x.conj() * y)
                                .sum();
                            cross += dot.norm_sqr();
                        }
                    }
                    neg_hess[m][mm] += coef[j] * cross;
                    if mm != m {
                        neg_hess[mm][m] += coef[j] * cross;
                    }
                }
            }
        }
        let mut obj = 0.0;
        for j in 0..k {
            obj += coef[j] * lds[j];
            obj -= price[decode[j]] * p[decode[j]];
            grad[j] = grad[j] / LN2 - price[decode[j]];
            for v in neg_hess[j].iter_mut() {
                *v /= LN2;
            }
        }
        let rates = (0..k).map(|j| (lds[j] - lds[j + 1]).max(0.0)).collect();
        Curvature { obj, rates, grad, neg_hess }
    };

    let price_scale: Vec<f64> = decode.iter().map(|&u| price[u].max(1e-300)).collect();

    let mut cur = eval(&state.p);
    for _ in 0..max_iters {
        // Projected stationarity residual relative to the energy price.
        let mut resid = 0.0_f64;
        for j in 0..k {
            let u = decode[j];
            let pg = if state.p[u] > 0.0 { cur.grad[j].abs() } else { cur.grad[j].max(0.0) };
            resid = resid.max(pg / price_scale[j]);
        }
        if resid <= inner_tol {
            break;
        }

        // Free set: positive powers plus zero powers pushed inward.
        let free: Vec<usize> =
            (0..k).filter(|&j| state.p[decode[j]] > 0.0 || cur.grad[j] > 0.0).collect();
        if free.is_empty() {
            break;
        }
        // Newton direction on the free set; fall back to a Cauchy-scaled
        // gradient when the reduced Hessian solve fails.
        let nf = free.len();
        let mut sys = vec![vec![0.0; nf + 1]; nf];
        let mut ridge = 0.0_f64;
        for &ja in &free {
            ridge = ridge.max(cur.neg_hess[ja][ja]);
        }
        ridge = ridge.max(1e-300) * 1e-12;
        for (a, &ja) in free.iter().enumerate() {
            for (b, &jb) in free.iter().enumerate() {
                sys[a][b] = cur.neg_hess[ja][jb];
            }
            sys[a][a] += ridge;
            sys[a][nf] = cur.grad[ja];
        }
        let mut dir = vec![0.0; k];
        let newton = solve_linear(&mut sys);
        let mut ascent = false;
        if let Some(d) = newton {
            let dot: f64 = free.iter().enumerate().map(|(a, &j)| d[a] * cur.grad[j]).sum();
            if dot > 0.0 && d.iter().all(|v| v.is_finite()) {
                for (a, &j) in free.iter().enumerate() {
                    dir[j] = d[a];
                }
                ascent = true;
            }
        }
        if !ascent {
            // Cauchy step: exact maximizer of the quadratic model along
            // the gradient.
            let mut gg = 0.0;
            let mut ghg = 0.0;
            for (a, &ja) in free.iter().enumerate() {
                gg += cur.grad[ja] * cur.grad[ja];
                for &jb in free.iter().skip(a + 1) {
                    ghg += 2.0 * cur.grad[ja] * cur.neg_hess[ja][jb] * cur.grad[jb];
                }
                ghg += cur.grad[ja] * cur.neg_hess[ja][ja] * cur.grad[ja];
            }
            let t = if ghg > 0.0 { gg / ghg } else { 1.0 };
            for &j in &free {
                dir[j] = t * cur.grad[j];
            }
        }

        // Backtracking line search on the projected arc.
        let mut t = 1.0_f64;
        let mut accepted = false;
        for _ in 0..60 {
            let mut p_try = state.p.clone();
            let mut dlin = 0.0;
            for j in 0..k {
                let u = decode[j];
                let v = (state.p[u] + t * dir[j]).max(0.0);
                dlin += cur.grad[j] * (v - state.p[u]);
                p_try[u] = v;
            }
            if dlin <= 0.0 {
                break;
            }
            let try_cur = eval(&p_try);
            if try_cur.obj >= cur.obj + 1e-4 * dlin {
                state.p = p_try;
                cur = try_cur;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    for j in 0..k {
        rates[decode[j]] = cur.rates[j];
    }
    InnerEval { rates, objective: cur.obj }
}

/// Gaussian elimination with partial pivoting on an augmented
/// `n x (n+1)` system; `None` when singular.
fn solve_linear(m: &mut [Vec<f64>]) -> Option<Vec<f64>> {
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
        if pivot <= 1e-14 * scale {
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

/// Public per-subcarrier oracle: maximize the theta-weighted rate sum
/// minus linear energy prices for one subcarrier's channel matrices.
/// The SIC order is derived internally by sorting `theta` ascending
/// (ties resolved toward ascending user index). Returns the per-user
/// powers.
pub fn inner_weighted_max(
    channels: &[CMat],
    noise_variance: f64,
    theta: &[f64],
    prices: &[f64],
    opt: &SolverOptions,
) -> Result<Vec<f64>> {
    opt.validate()?;
    let nu = channels.len();
    if nu == 0 || theta.len() != nu || prices.len() != nu {
        return Err(Error::InvalidInput("channels, theta, and prices must share one length".into()));
    }
    if !(noise_variance > 0.0) {
        return Err(Error::Domain("noise variance must be positive".into()));
    }
    if theta.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
        return Err(Error::InvalidInput("theta must be finite and nonnegative".into()));
    }
    if prices.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
        return Err(Error::InvalidInput("energy prices must be finite and positive".into()));
    }
    let ch = ChannelSet::new(
        channels.iter().map(|m| vec![m.clone()]).collect(),
        noise_variance,
    )?;
    let sig = Signatures::build(&ch);
    let decode = ordering::cluster_values(theta, opt.eps_theta).canonical_order;
    let mut state = ScState { p: vec![0.0; nu] };
    solve_subcarrier(&sig, 0, decode.order(), theta, prices, &mut state, opt.inner_tol, 400);
    Ok(state.p)
}

// ---------------------------------------------------------------------------
// Shared outer-loop plumbing
// ---------------------------------------------------------------------------

/// Sweep every subcarrier at fixed multipliers. Returns per-user
/// aggregate rates and energies plus the summed inner objective.
fn sweep(
    sig: &Signatures,
    participants: &ParticipantPlan,
    theta: &[f64],
    price: &[f64],
    states: &mut [ScState],
    inner_tol: f64,
    max_iters: usize,
) -> (Vec<f64>, Vec<f64>, f64) {
    let nu = theta.len();
    let mut b = vec![0.0; nu];
    let mut e = vec![0.0; nu];
    let mut obj = 0.0;
    for sc in 0..states.len() {
        let decode = participants.decode_order(sc);
        let ev = solve_subcarrier(sig, sc, decode, theta, price, &mut states[sc], inner_tol, max_iters);
        obj += ev.objective;
        for u in 0..nu {
            b[u] += ev.rates[u];
            e[u] += states[sc].p[u];
        }
    }
    (b, e, obj)
}

/// Which users participate on each subcarrier, already in decode order.
enum ParticipantPlan {
    /// Every user on every subcarrier, common order.
    Uniform(Vec<usize>),
    /// Per-subcarrier participant lists (restricted schemes).
    PerSubcarrier(Vec<Vec<usize>>),
}

impl ParticipantPlan {
    fn decode_order(&self, sc: usize) -> &[usize] {
        match self {
            ParticipantPlan::Uniform(v) => v,
            ParticipantPlan::PerSubcarrier(v) => &v[sc],
        }
    }
}

fn extract_alloc(states: &[ScState], nu: usize) -> PowerAllocation {
    let n = states.len();
    let mut e = vec![vec![0.0; n]; nu];
    for (sc, st) in states.iter().enumerate() {
        for u in 0..nu {
            e[u][sc] = st.p[u];
        }
    }
    PowerAllocation { e }
}

/// Exact budget water-filling over per-unit-energy gains; returns the
/// per-entry energies and the water level.
pub(crate) fn waterfill_budget(gains: &[f64], budget: f64) -> (Vec<f64>, f64) {
    let mut idx: Vec<usize> = (0..gains.len()).filter(|&i| gains[i] > 0.0).collect();
    let mut e = vec![0.0; gains.len()];
    if idx.is_empty() || budget <= 0.0 {
        return (e, 0.0);
    }
    idx.sort_by(|&a, &b| gains[b].partial_cmp(&gains[a]).unwrap());
    let inv: Vec<f64> = idx.iter().map(|&i| 1.0 / gains[i]).collect();
    let mut prefix = 0.0;
    let mut level = 0.0;
    let mut active = 0;
    for m in 1..=inv.len() {
        prefix += inv[m - 1];
        let mu = (budget + prefix) / m as f64;
        if mu > inv[m - 1] {
            level = mu;
            active = m;
        }
    }
    for j in 0..active {
        e[idx[j]] = level - inv[j];
    }
    (e, level)
}

/// Water level and energies meeting a rate target with minimum energy.
pub(crate) fn waterfill_target(gains: &[f64], target_bits: f64) -> Result<(Vec<f64>, f64)> {
    let mut e = vec![0.0; gains.len()];
    if target_bits <= 0.0 {
        return Ok((e, 0.0));
    }
    let gmax = gains.iter().copied().fold(0.0_f64, f64::max);
    if gmax <= 0.0 {
        return Err(Error::Infeasible("rate target on an all-zero channel".into()));
    }
    let bits = |mu: f64| -> f64 {
        gains
            .iter()
            .map(|&g| if g > 0.0 && mu * g > 1.0 { (mu * g).log2() } else { 0.0 })
            .sum()
    };
    let mut lo = 1.0 / gmax;
    let mut hi = lo.max(1e-300);
    let mut guard = 0;
    while bits(hi) < target_bits {
        hi *= 2.0;
        guard += 1;
        if guard > 4000 {
            return Err(Error::Infeasible("water level diverged".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if bits(mid) >= target_bits {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    for (i, &g) in gains.iter().enumerate() {
        if g > 0.0 {
            e[i] = (hi - 1.0 / g).max(0.0);
        }
    }
    Ok((e, hi))
}

/// Sign-adaptive step state for one multiplier.
struct Gain {
    step: f64,
    prev_sign: f64,
    floor: f64,
    cap: f64,
}

impl Gain {
    fn new(step: f64) -> Self {
        Gain { step, prev_sign: 0.0, floor: step * 1e-12, cap: step * 1e6 }
    }

    /// Update the step from the residual sign and return the signed step.
    fn advance(&mut self, residual: f64) -> f64 {
        let s = if residual > 0.0 {
            1.0
        } else if residual < 0.0 {
            -1.0
        } else {
            0.0
        };
        if s != 0.0 && self.prev_sign != 0.0 {
            if s == self.prev_sign {
                self.step = (self.step * 1.3).min(self.cap);
            } else {
                self.step = (self.step * 0.5).max(self.floor);
            }
        }
        if s != 0.0 {
            self.prev_sign = s;
        }
        self.step * s
    }
}

// ---------------------------------------------------------------------------
// Energy minimization (primal)
// ---------------------------------------------------------------------------

/// Minimize the weighted energy sum subject to per-user aggregate rate
/// targets. Returns the allocation, rates re-derived from it, and the
/// dual certificate `theta` whose ascending order is the decoding order.
pub fn min_energy_allocate(
    ch: &ChannelSet,
    req: &RateRequirement,
    opt: &SolverOptions,
) -> Result<SolveOutcome> {
    opt.validate()?;
    req.validate(ch.num_users())?;
    let nu = ch.num_users();
    let n = ch.num_subcarriers();
    let mut trace = opt.record_trace.then(Vec::new);

    let active: Vec<bool> = req.b_min.iter().map(|&b| b > 0.0).collect();
    if active.iter().all(|&a| !a) {
        return Ok(SolveOutcome {
            alloc: PowerAllocation::zeros(nu, n),
            rates: RateMatrix::zeros(nu, n),
            cert: DualCertificate { theta: vec![0.0; nu], lambda: vec![0.0; nu] },
            trace,
        });
    }

    let sig = Signatures::build(ch);

    // Upfront infeasibility: a constrained user with a dead channel.
    for u in 0..nu {
        if active[u] && sig.gain[u].iter().all(|&g| g <= 0.0) {
            return Err(Error::Infeasible(format!(
                "user {u} has a rate target but a zero channel on every subcarrier"
            )));
        }
    }

    // Single-user water-level initialization: exact for U = 1 and the
    // right order of magnitude otherwise.
    let mut theta = vec![0.0; nu];
    for u in 0..nu {
        if active[u] {
            let (_, level) = waterfill_target(&sig.gain[u], req.b_min[u])?;
            theta[u] = req.weights[u] * level * LN2;
        }
    }

    let energy_cap = opt.energy_cap.unwrap_or_else(|| {
        (0..nu)
            .filter(|&u| active[u])
            .map(|u| {
                let gmax = sig.gain[u].iter().copied().fold(0.0_f64, f64::max);
                1e6 * n as f64 / gmax
            })
            .sum()
    });

    let mut states: Vec<ScState> = (0..n).map(|_| ScState { p: vec![0.0; nu] }).collect();
    let mut ind_gain: Vec<Gain> =
        theta.iter().map(|&t| Gain::new(0.1 * opt.step_scale * t.max(1e-300))).collect();
    let mut com_gain: Vec<Gain> =
        theta.iter().map(|&t| Gain::new(0.1 * opt.step_scale * t.max(1e-300))).collect();

    let b_scale: Vec<f64> = req.b_min.iter().map(|&b| b.max(1e-12)).collect();
    let mut last_resid = f64::INFINITY;

    for it in 1..=opt.max_outer_iters {
        let clusters = ordering::cluster_values(&theta, opt.eps_theta);
        let order: Vec<usize> = clusters.canonical_order.order().to_vec();
        let plan = ParticipantPlan::Uniform(order);
        let (b, e, obj) = sweep(&sig, &plan, &theta, &req.weights, &mut states, opt.inner_tol, 200);

        // Dual function value through the inner objective:
        // g(theta) = min_e [sum w E - sum theta (b - b_min)] = -obj + sum theta b_min.
        let dual_value: f64 = -obj + (0..nu).map(|u| theta[u] * req.b_min[u]).sum::<f64>();

        // Cluster-aggregate residuals: within a tie cluster only the sum
        // is controllable by the allocation; the split is the
        // time-sharing module's job.
        let mut max_rel = 0.0_f64;
        for c in &clusters.clusters {
            let shortfall: f64 = c.iter().map(|&u| req.b_min[u] - b[u]).sum();
            let scale: f64 = c.iter().map(|&u| b_scale[u]).sum::<f64>().max(1e-12);
            max_rel = max_rel.max(shortfall.abs() / scale);
        }
        last_resid = max_rel;
        if let Some(t) = trace.as_mut() {
            t.push(TracePoint { iter: it, dual_value, max_residual: max_rel });
        }

        if max_rel <= opt.rate_tol {
            if let Some(outcome) =
                finalize_min_energy(ch, &sig, req, opt, &theta, &mut states, trace.clone())?
            {
                return Ok(outcome);
            }
        }

        let total_energy: f64 = e.iter().sum();
        if total_energy > energy_cap && max_rel > opt.rate_tol {
            return Err(Error::Infeasible(format!(
                "energy {total_energy:.3e} W exceeded the divergence guard {energy_cap:.3e} W \
                 with rate residual {max_rel:.3e}"
            )));
        }

        // Per-user sign-adaptive multiplier updates, plus a common-mode
        // term per near-tied group: inside a tie the per-user residuals
        // oscillate with the decode position and never settle, so only a
        // shared drift can close the group's aggregate shortfall. Groups
        // are detected with a coarse tolerance; the strict tolerance
        // stays reserved for the convergence check.
        let mut delta = vec![0.0; nu];
        for u in 0..nu {
            if !active[u] {
                continue;
            }
            delta[u] += ind_gain[u].advance((req.b_min[u] - b[u]) / b_scale[u]);
        }
        let groups = ordering::cluster_values(&theta, GROUP_EPS);
        for c in &groups.clusters {
            if c.len() < 2 {
                continue;
            }
            let shortfall: f64 = c.iter().map(|&u| req.b_min[u] - b[u]).sum();
            for &u in c {
                if active[u] {
                    delta[u] += com_gain[u].advance(shortfall);
                }
            }
        }
        for u in 0..nu {
            theta[u] = (theta[u] + delta[u]).max(0.0);
        }
    }

    Err(Error::NotConverged { residual: last_resid })
}

/// Snap tied multipliers to their cluster means, re-solve, and accept the
/// result if the rate targets remain reachable inside every tie cluster.
fn finalize_min_energy(
    ch: &ChannelSet,
    sig: &Signatures,
    req: &RateRequirement,
    opt: &SolverOptions,
    theta: &[f64],
    states: &mut [ScState],
    trace: Option<Vec<TracePoint>>,
) -> Result<Option<SolveOutcome>> {
    let nu = ch.num_users();
    let clusters = ordering::cluster_values(theta, opt.eps_theta);
    let mut theta_snap = theta.to_vec();
    for c in &clusters.clusters {
        if c.len() < 2 {
            continue;
        }
        let mean: f64 = c.iter().map(|&u| theta[u]).sum::<f64>() / c.len() as f64;
        for &u in c {
            theta_snap[u] = mean;
        }
    }
    let snapped = ordering::cluster_values(&theta_snap, opt.eps_theta);
    let order: Vec<usize> = snapped.canonical_order.order().to_vec();
    let plan = ParticipantPlan::Uniform(order.clone());
    let (b, _e, _obj) =
        sweep(sig, &plan, &theta_snap, &req.weights, states, opt.inner_tol, 400);

    // Cluster sums must still satisfy the targets after the snap.
    for c in &snapped.clusters {
        let shortfall: f64 = c.iter().map(|&u| req.b_min[u] - b[u]).sum();
        let scale: f64 = c.iter().map(|&u| req.b_min[u].max(1e-12)).sum();
        if shortfall.abs() > 1.5 * opt.rate_tol * scale.max(1e-12) {
            return Ok(None);
        }
    }

    let alloc = extract_alloc(states, nu);

    // Inside every tie cluster the targets must lie on the face spanned
    // by the cluster's candidate orders: every proper subset of the
    // cluster must obey its conditional capacity bound.
    let positions = snapped.canonical_order.positions();
    for c in &snapped.clusters {
        if c.len() < 2 {
            continue;
        }
        let last_pos = c.iter().map(|&u| positions[u]).max().unwrap();
        let later: Vec<usize> = (0..nu).filter(|&u| positions[u] > last_pos).collect();
        let subsets = proper_subsets(c);
        for s in &subsets {
            let need: f64 = s.iter().map(|&u| req.b_min[u]).sum();
            if need <= 0.0 {
                continue;
            }
            let cap = rate::conditional_capacity(ch, &alloc, &later, s)?;
            if need > cap * (1.0 + opt.rate_tol) + 1e-12 {
                return Ok(None);
            }
        }
    }

    let rates = rate::sic_rates(ch, &alloc, &snapped.canonical_order)?;
    Ok(Some(SolveOutcome {
        alloc,
        rates,
        cert: DualCertificate { theta: theta_snap, lambda: vec![0.0; nu] },
        trace,
    }))
}

/// All proper non-empty subsets of a small set.
fn proper_subsets(set: &[usize]) -> Vec<Vec<usize>> {
    let n = set.len();
    let mut out = Vec::new();
    for mask in 1..((1u32 << n) - 1) {
        let mut s = Vec::new();
        for (i, &u) in set.iter().enumerate() {
            if mask & (1 << i) != 0 {
                s.push(u);
            }
        }
        out.push(s);
    }
    out
}

// ---------------------------------------------------------------------------
// Rate maximization (dual)
// ---------------------------------------------------------------------------

/// Maximize the `theta_w`-weighted rate sum subject to per-user energy
/// budgets. The certificate carries the given weights as `theta` and the
/// budget multipliers as `lambda`.
pub fn max_rate_allocate(
    ch: &ChannelSet,
    budget: &EnergyBudget,
    opt: &SolverOptions,
) -> Result<SolveOutcome> {
    budget.validate(ch.num_users())?;
    let order = ordering::cluster_values(&budget.theta_w, opt.eps_theta).canonical_order;
    budget_loop(ch, budget, &order, None, opt)
}

/// Shared budget-constrained loop. `order` fixes the decoding order used
/// both inside the inner optimization (its weights must be nondecreasing
/// along it) and for the final rate evaluation. `participants` optionally
/// restricts which users may transmit on each subcarrier.
pub(crate) fn budget_loop(
    ch: &ChannelSet,
    budget: &EnergyBudget,
    order: &DecodingOrder,
    participants: Option<Vec<Vec<usize>>>,
    opt: &SolverOptions,
) -> Result<SolveOutcome> {
    opt.validate()?;
    budget.validate(ch.num_users())?;
    let nu = ch.num_users();
    let n = ch.num_subcarriers();
    let mut trace = opt.record_trace.then(Vec::new);

    let sig = Signatures::build(ch);
    let gmax: Vec<f64> = (0..nu).map(|u| sig.gain[u].iter().copied().fold(0.0, f64::max)).collect();

    // A user participates in the optimization only with budget, weight,
    // and a live channel; everyone else transmits nothing.
    let active: Vec<bool> = (0..nu)
        .map(|u| budget.e_max[u] > 0.0 && budget.theta_w[u] > 0.0 && gmax[u] > 0.0)
        .collect();

    // Reported budget multiplier for excluded users: the zero-power
    // marginal rate value, which certifies e = 0 as optimal.
    let mut lambda = vec![0.0; nu];
    for u in 0..nu {
        if !active[u] {
            lambda[u] = budget.theta_w[u] * gmax[u] / LN2;
        }
    }

    if active.iter().all(|&a| !a) {
        return Ok(SolveOutcome {
            alloc: PowerAllocation::zeros(nu, n),
            rates: RateMatrix::zeros(nu, n),
            cert: DualCertificate { theta: budget.theta_w.clone(), lambda },
            trace,
        });
    }

    // Water-level initialization of the budget prices.
    for u in 0..nu {
        if active[u] {
            let (_, level) = waterfill_budget(&sig.gain[u], budget.e_max[u]);
            let level = level.max(1.0 / gmax[u]);
            lambda[u] = budget.theta_w[u] / (level * LN2);
        }
    }

    // Restrict decode order to participants per subcarrier.
    let plan = match &participants {
        Some(per_sc) => {
            let mut lists = Vec::with_capacity(n);
            for sc in 0..n {
                let allowed = &per_sc[sc];
                let mut l: Vec<usize> = order
                    .order()
                    .iter()
                    .copied()
                    .filter(|u| allowed.contains(u) && active[*u])
                    .collect();
                l.shrink_to_fit();
                lists.push(l);
            }
            ParticipantPlan::PerSubcarrier(lists)
        }
        None => ParticipantPlan::Uniform(
            order.order().iter().copied().filter(|&u| active[u]).collect(),
        ),
    };

    let mut states: Vec<ScState> = (0..n).map(|_| ScState { p: vec![0.0; nu] }).collect();
    let mut gains: Vec<Gain> = (0..nu).map(|_| Gain::new(0.2 * opt.step_scale)).collect();

    for it in 1..=opt.max_outer_iters {
        let (_b, e, obj) = sweep(&sig, &plan, &budget.theta_w, &lambda, &mut states, opt.inner_tol, 200);
        let dual_value = obj + (0..nu).map(|u| lambda[u] * budget.e_max[u]).sum::<f64>();
        let mut max_rel = 0.0_f64;
        for u in 0..nu {
            if active[u] {
                max_rel = max_rel.max((e[u] - budget.e_max[u]).abs() / budget.e_max[u]);
            }
        }
        if let Some(t) = trace.as_mut() {
            t.push(TracePoint { iter: it, dual_value, max_residual: max_rel });
        }
        if max_rel <= opt.rate_tol {
            break;
        }
        if it == opt.max_outer_iters {
            return Err(Error::NotConverged { residual: max_rel });
        }
        for u in 0..nu {
            if !active[u] {
                continue;
            }
            let resid = (e[u] - budget.e_max[u]) / budget.e_max[u];
            let rel = gains[u].advance(resid).clamp(-0.6, 0.6);
            lambda[u] *= 1.0 + rel;
            lambda[u] = lambda[u].max(1e-12 * budget.theta_w[u] * gmax[u] / LN2);
        }
    }

    // Hard-project onto the budgets: scale down any residual overshoot.
    let mut alloc = extract_alloc(&states, nu);
    for u in 0..nu {
        let total = alloc.user_total(u);
        if total > budget.e_max[u] && total > 0.0 {
            let s = budget.e_max[u] / total;
            for v in alloc.e[u].iter_mut() {
                *v *= s;
            }
        }
    }
    let rates = rate::sic_rates(ch, &alloc, order)?;
    Ok(SolveOutcome {
        alloc,
        rates,
        cert: DualCertificate { theta: budget.theta_w.clone(), lambda },
        trace,
    })
}
