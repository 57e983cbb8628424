//! Reference multiple-access schemes used for benchmarking.
//!
//! * **OMA**: disjoint subcarriers per user (round-robin assignment) with
//!   a linear receiver; each user water-fills its own subcarriers, either
//!   to maximize rate under a budget or to minimize energy for a target.
//! * **NOMA**: every user spreads its budget flat across the whole band;
//!   the receiver runs SIC in channel-strength order.
//! * **MC-NOMA**: per-subcarrier power optimization with the same budget
//!   machinery as the proposed allocator, but each subcarrier is shared
//!   by at most two users (the per-subcarrier strongest ones) and the SIC
//!   order is fixed to the aggregate channel-strength order instead of
//!   being derived from the dual certificate.
//!
//! None of these compute rates privately: every output is evaluated
//! through the rate module, so the comparison cannot drift from the
//! measurement core.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::rate::{self, DecodingOrder, PowerAllocation, RateMatrix};
use crate::solver::{self, EnergyBudget, RateRequirement, SolverOptions};

/// Maximum users sharing one subcarrier under MC-NOMA.
pub const MC_NOMA_USERS_PER_SUBCARRIER: usize = 2;

/// Subcarrier ownership map for OMA.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OmaAssignment {
    /// `subcarrier_owner[n]` is the user that owns subcarrier `n`.
    pub subcarrier_owner: Vec<usize>,
}

/// What the OMA allocator should aim for.
#[derive(Debug, Clone)]
pub enum OmaGoal<'a> {
    /// Maximize each user's rate under its energy budget.
    Budget(&'a EnergyBudget),
    /// Meet each user's rate target with minimum energy.
    Target(&'a RateRequirement),
}

/// OMA allocation result.
#[derive(Debug, Clone)]
pub struct OmaOutcome {
    pub assignment: OmaAssignment,
    pub alloc: PowerAllocation,
    pub rates: RateMatrix,
}

/// Round-robin OFDMA with per-user water-filling. Needs at least as many
/// subcarriers as users. Rates are interference-free single-user rates
/// with maximal-ratio combining across the AP antennas, evaluated through
/// the rate module.
pub fn oma_allocate(ch: &ChannelSet, goal: OmaGoal<'_>) -> Result<OmaOutcome> {
    let nu = ch.num_users();
    let n = ch.num_subcarriers();
    if n < nu {
        return Err(Error::InvalidInput(format!(
            "OMA needs at least one subcarrier per user ({n} < {nu})"
        )));
    }
    let owner: Vec<usize> = (0..n).map(|sc| sc % nu).collect();
    let sigma2 = ch.noise_variance();

    let mut alloc = PowerAllocation::zeros(nu, n);
    for u in 0..nu {
        let owned: Vec<usize> = (0..n).filter(|&sc| owner[sc] == u).collect();
        // Per-unit-energy received SNR with isotropic antenna splitting.
        let gains: Vec<f64> = owned
            .iter()
            .map(|&sc| {
                let h = ch.h(u, sc);
                h.norm_sqr() / (h.cols() as f64 * sigma2)
            })
            .collect();
        let energies = match goal {
            OmaGoal::Budget(b) => {
                b.validate_for(nu)?;
                solver::waterfill_budget(&gains, b.e_max[u]).0
            }
            OmaGoal::Target(t) => {
                t.validate_for(nu)?;
                if t.b_min[u] > 0.0 && gains.iter().all(|&g| g <= 0.0) {
                    return Err(Error::Infeasible(format!(
                        "user {u} has a rate target but zero channel on its OMA subcarriers"
                    )));
                }
                solver::waterfill_target(&gains, t.b_min[u])?.0
            }
        };
        for (k, &sc) in owned.iter().enumerate() {
            alloc.e[u][sc] = energies[k];
        }
    }

    // Ownership is disjoint per subcarrier, so any decoding order gives
    // the same interference-free rates.
    let rates = rate::sic_rates(ch, &alloc, &DecodingOrder::identity(nu))?;
    Ok(OmaOutcome { assignment: OmaAssignment { subcarrier_owner: owner }, alloc, rates })
}

/// Decoding order by aggregate channel energy, strongest decoded first;
/// ties break toward the lower user index.
pub fn channel_strength_order(ch: &ChannelSet) -> DecodingOrder {
    let mut idx: Vec<usize> = (0..ch.num_users()).collect();
    let energy: Vec<f64> = idx.iter().map(|&u| ch.user_channel_energy(u)).collect();
    idx.sort_by(|&a, &b| energy[b].partial_cmp(&energy[a]).unwrap().then(a.cmp(&b)));
    DecodingOrder::new(idx).expect("sorted indices form a permutation")
}

/// Power-domain NOMA: every user spreads its budget flat across all
/// subcarriers; SIC runs in channel-strength order.
pub fn noma_rates(ch: &ChannelSet, budget: &EnergyBudget) -> Result<RateMatrix> {
    budget.validate_for(ch.num_users())?;
    let nu = ch.num_users();
    let n = ch.num_subcarriers();
    let mut alloc = PowerAllocation::zeros(nu, n);
    for u in 0..nu {
        let per_sc = budget.e_max[u] / n as f64;
        for sc in 0..n {
            alloc.e[u][sc] = per_sc;
        }
    }
    rate::sic_rates(ch, &alloc, &channel_strength_order(ch))
}

/// MC-NOMA outcome: the optimized allocation and the rates under the
/// fixed channel-strength decoding order.
#[derive(Debug, Clone)]
pub struct McNomaOutcome {
    pub alloc: PowerAllocation,
    pub rates: RateMatrix,
}

/// Multi-carrier NOMA: per-subcarrier power optimization with equal rate
/// weights and per-user budget prices, but with subcarrier sharing capped
/// at the two per-subcarrier strongest users and the decoding order fixed
/// to the channel-strength heuristic.
pub fn mc_noma_allocate(
    ch: &ChannelSet,
    budget: &EnergyBudget,
    opt: &SolverOptions,
) -> Result<McNomaOutcome> {
    budget.validate_for(ch.num_users())?;
    let nu = ch.num_users();
    let n = ch.num_subcarriers();
    let equal = EnergyBudget { e_max: budget.e_max.clone(), theta_w: vec![1.0; nu] };
    let order = channel_strength_order(ch);

    // Schedule the per-subcarrier strongest users.
    let mut participants: Vec<Vec<usize>> = Vec::with_capacity(n);
    for sc in 0..n {
        let mut idx: Vec<usize> = (0..nu).collect();
        let strength: Vec<f64> = (0..nu).map(|u| ch.h(u, sc).norm_sqr()).collect();
        idx.sort_by(|&a, &b| strength[b].partial_cmp(&strength[a]).unwrap().then(a.cmp(&b)));
        idx.truncate(MC_NOMA_USERS_PER_SUBCARRIER);
        participants.push(idx);
    }

    let outcome = solver::budget_loop(ch, &equal, &order, Some(participants), opt)?;
    Ok(McNomaOutcome { alloc: outcome.alloc, rates: outcome.rates })
}

// Budget/requirement validation is private to the solver module; expose
// thin wrappers so the baselines can validate without duplicating rules.
trait ValidateFor {
    fn validate_for(&self, num_users: usize) -> Result<()>;
}

impl ValidateFor for EnergyBudget {
    fn validate_for(&self, num_users: usize) -> Result<()> {
        if self.e_max.len() != num_users {
            return Err(Error::InvalidInput("budget user count mismatch".into()));
        }
        if self.e_max.iter().any(|&e| !(e >= 0.0) || !e.is_finite()) {
            return Err(Error::InvalidInput("energy budgets must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

impl ValidateFor for RateRequirement {
    fn validate_for(&self, num_users: usize) -> Result<()> {
        if self.b_min.len() != num_users {
            return Err(Error::InvalidInput("requirement user count mismatch".into()));
        }
        if self.b_min.iter().any(|&b| !(b >= 0.0) || !b.is_finite()) {
            return Err(Error::InvalidInput("rate targets must be finite and nonnegative".into()));
        }
        Ok(())
    }
}
