//! SIC rate evaluation and capacity bounds for the uplink channel.
//!
//! A receiver running successive interference cancellation decodes users
//! one at a time; the user decoded at position `k` sees the users decoded
//! later as residual interference. Its per-subcarrier rate is the
//! log-det ratio of the interference-plus-noise covariance before and
//! after its own signal is removed:
//!
//! ```text
//! b[k] = log2 det(R + sum_{i>=k} e_i H_i H_i^H) - log2 det(R + sum_{i>k} e_i H_i H_i^H)
//! ```
//!
//! Summed over a decoding order this telescopes to the full-set capacity,
//! which is why every order achieves the same rate *sum* while splitting
//! it differently among users. All determinants are evaluated through a
//! Cholesky factorization of the (well-conditioned) normalized matrix
//! `I + sum(e/sigma^2 * H H^H)`, so the noise scale cancels exactly.
//!
//! Users with more than one transmit antenna are handled by spreading the
//! scalar per-subcarrier energy isotropically over their antennas
//! (`R_xx = e/L_x * I`).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::linalg::CMat;

/// A SIC decoding order. `order()[k]` is the (0-based) user decoded at
/// position `k`; position 0 is decoded first and sees every later user as
/// interference.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DecodingOrder {
    order: Vec<usize>,
}

impl DecodingOrder {
    /// Validates that `order` is a permutation of `0..order.len()`.
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        let mut seen = vec![false; n];
        for &u in &order {
            if u >= n || seen[u] {
                return Err(Error::InvalidInput(format!(
                    "decoding order {order:?} is not a permutation of 0..{n}"
                )));
            }
            seen[u] = true;
        }
        Ok(DecodingOrder { order })
    }

    /// Natural order: user 0 decoded first.
    pub fn identity(num_users: usize) -> Self {
        DecodingOrder { order: (0..num_users).collect() }
    }

    pub fn num_users(&self) -> usize {
        self.order.len()
    }

    /// Users in decode sequence (first decoded first).
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Position at which each user is decoded: `positions()[u] = k` iff
    /// user `u` is decoded at position `k`.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0usize; self.order.len()];
        for (k, &u) in self.order.iter().enumerate() {
            pos[u] = k;
        }
        pos
    }

    /// Render as a dash-joined 1-based user list, e.g. `3-2-1`.
    pub fn to_dash_string(&self) -> alloc::string::String {
        let mut s = alloc::string::String::new();
        for (i, &u) in self.order.iter().enumerate() {
            if i > 0 {
                s.push('-');
            }
            s.push_str(&format!("{}", u + 1));
        }
        s
    }
}

/// Per-user, per-subcarrier transmit energies (linear watts). This is the
/// trace of the per-user signal covariance on each subcarrier and the
/// decision variable of the solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    /// `e[u][n]` is the energy of user `u` on subcarrier `n`.
    pub e: Vec<Vec<f64>>,
}

impl PowerAllocation {
    pub fn zeros(num_users: usize, num_subcarriers: usize) -> Self {
        PowerAllocation { e: vec![vec![0.0; num_subcarriers]; num_users] }
    }

    /// Validates shape and nonnegativity.
    pub fn new(e: Vec<Vec<f64>>) -> Result<Self> {
        for (u, row) in e.iter().enumerate() {
            if row.len() != e[0].len() {
                return Err(Error::InvalidInput("ragged power allocation".into()));
            }
            for (n, &v) in row.iter().enumerate() {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "energy e[{u}][{n}] = {v} must be finite and nonnegative"
                    )));
                }
            }
        }
        Ok(PowerAllocation { e })
    }

    pub fn num_users(&self) -> usize {
        self.e.len()
    }

    pub fn num_subcarriers(&self) -> usize {
        if self.e.is_empty() { 0 } else { self.e[0].len() }
    }

    /// Total energy of one user across subcarriers.
    pub fn user_total(&self, u: usize) -> f64 {
        self.e[u].iter().sum()
    }

    /// Total energy across users and subcarriers.
    pub fn total(&self) -> f64 {
        self.e.iter().map(|row| row.iter().sum::<f64>()).sum()
    }
}

/// Per-user, per-subcarrier achieved rates in bits per subcarrier-symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    /// `b[u][n]` is the rate of user `u` on subcarrier `n`.
    pub b: Vec<Vec<f64>>,
}

impl RateMatrix {
    pub fn zeros(num_users: usize, num_subcarriers: usize) -> Self {
        RateMatrix { b: vec![vec![0.0; num_subcarriers]; num_users] }
    }

    pub fn num_users(&self) -> usize {
        self.b.len()
    }

    /// Aggregate rate of one user across subcarriers.
    pub fn user_total(&self, u: usize) -> f64 {
        self.b[u].iter().sum()
    }

    /// Per-user aggregate rates.
    pub fn user_totals(&self) -> Vec<f64> {
        (0..self.b.len()).map(|u| self.user_total(u)).collect()
    }

    /// Sum rate across users and subcarriers.
    pub fn total(&self) -> f64 {
        self.b.iter().map(|row| row.iter().sum::<f64>()).sum()
    }
}

fn check_shapes(ch: &ChannelSet, alloc: &PowerAllocation) -> Result<()> {
    if alloc.num_users() != ch.num_users() || alloc.num_subcarriers() != ch.num_subcarriers() {
        return Err(Error::InvalidInput(format!(
            "allocation shape {}x{} does not match channel {}x{}",
            alloc.num_users(),
            alloc.num_subcarriers(),
            ch.num_users(),
            ch.num_subcarriers()
        )));
    }
    if !(ch.noise_variance() > 0.0) {
        return Err(Error::Domain("noise variance must be positive".into()));
    }
    Ok(())
}

/// Per-user SIC rates under a given decoding order (bits per
/// subcarrier-symbol, one entry per subcarrier).
///
/// The user decoded last gets its single-user capacity; earlier users see
/// later users as noise. All outputs are nonnegative.
pub fn sic_rates(ch: &ChannelSet, alloc: &PowerAllocation, ord: &DecodingOrder) -> Result<RateMatrix> {
    check_shapes(ch, alloc)?;
    if ord.num_users() != ch.num_users() {
        return Err(Error::InvalidInput("decoding order has wrong user count".into()));
    }
    let ly = ch.ap_antennas();
    let sigma2 = ch.noise_variance();
    let mut rates = RateMatrix::zeros(ch.num_users(), ch.num_subcarriers());
    for n in 0..ch.num_subcarriers() {
        // Accumulate users from last decoded to first; the log-det after
        // each addition minus the one before it is that user's rate.
        let mut a = CMat::identity(ly);
        let mut prev = 0.0;
        for k in (0..ord.num_users()).rev() {
            let u = ord.order()[k];
            let h = ch.h(u, n);
            let scale = alloc.e[u][n] / (h.cols() as f64 * sigma2);
            a.add_scaled_gram(h, scale);
            let ld = CMat::log2_det_from_chol(&a.cholesky()?);
            rates.b[u][n] = (ld - prev).max(0.0);
            prev = ld;
        }
    }
    Ok(rates)
}

/// Aggregate capacity bound for a subset of users: the log-det bound that
/// the subset's rate sum can never exceed, summed over subcarriers.
///
/// Monotone nondecreasing in the subset and in every energy entry.
pub fn subset_capacity(ch: &ChannelSet, alloc: &PowerAllocation, subset: &[usize]) -> Result<f64> {
    conditional_capacity(ch, alloc, &[], subset)
}

/// Capacity of `subset` conditioned on the interference of `given` users
/// being present and not cancelled:
///
/// ```text
/// sum_n log2 det(R + S_given + S_subset) - log2 det(R + S_given)
/// ```
///
/// With `given` empty this is [`subset_capacity`]. It bounds what the
/// subset can jointly achieve when decoded before the `given` users.
pub fn conditional_capacity(
    ch: &ChannelSet,
    alloc: &PowerAllocation,
    given: &[usize],
    subset: &[usize],
) -> Result<f64> {
    check_shapes(ch, alloc)?;
    if subset.is_empty() {
        return Err(Error::Domain("user subset must be non-empty".into()));
    }
    let mut seen = vec![false; ch.num_users()];
    for &u in given.iter().chain(subset.iter()) {
        if u >= ch.num_users() || seen[u] {
            return Err(Error::InvalidInput(format!("bad or repeated user index {u}")));
        }
        seen[u] = true;
    }
    let ly = ch.ap_antennas();
    let sigma2 = ch.noise_variance();
    let mut total = 0.0;
    for n in 0..ch.num_subcarriers() {
        let mut base = CMat::identity(ly);
        for &u in given {
            let h = ch.h(u, n);
            base.add_scaled_gram(h, alloc.e[u][n] / (h.cols() as f64 * sigma2));
        }
        let ld_base = CMat::log2_det_from_chol(&base.cholesky()?);
        let mut full = base;
        for &u in subset {
            let h = ch.h(u, n);
            full.add_scaled_gram(h, alloc.e[u][n] / (h.cols() as f64 * sigma2));
        }
        let ld_full = CMat::log2_det_from_chol(&full.cholesky()?);
        total += (ld_full - ld_base).max(0.0);
    }
    Ok(total)
}

/// Convert per-user aggregate rates (bits per subcarrier-symbol, summed
/// over subcarriers) to megabits per second: each subcarrier carries
/// `W/N` symbols per second.
pub fn throughput_mbps(rates: &RateMatrix, bandwidth_hz: f64, num_subcarriers: usize) -> Result<Vec<f64>> {
    if !(bandwidth_hz > 0.0) {
        return Err(Error::Domain("bandwidth must be positive".into()));
    }
    if num_subcarriers == 0 {
        return Err(Error::Domain("subcarrier count must be positive".into()));
    }
    let symbol_rate = bandwidth_hz / num_subcarriers as f64;
    Ok(rates.user_totals().iter().map(|&b| b * symbol_rate / 1e6).collect())
}
