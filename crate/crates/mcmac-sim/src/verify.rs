//! Invariant suite behind `mcmac verify`: quick randomized checks of the
//! identities and dominance relations the library is built on.

use mcmac_core::baselines::{self, OmaGoal};
use mcmac_core::channel::{generate_channels, substream, ChannelSet, PathLossModel, ScenarioConfig};
use mcmac_core::ordering;
use mcmac_core::rate::{self, DecodingOrder, PowerAllocation};
use mcmac_core::solver::{
    max_rate_allocate, min_energy_allocate, EnergyBudget, RateRequirement, SolverOptions,
};
use mcmac_core::timeshare;
use rand::Rng;

use crate::experiment::budgets_for_receive_snr;

type Check = (&'static str, fn(u64) -> Result<(), String>);

/// Every check in the suite, in run order.
pub fn checks() -> Vec<Check> {
    vec![
        ("path-loss closed form and continuity", check_path_loss),
        ("shadow fading moments", check_shadow),
        ("noise power level", check_noise_power),
        ("channel determinism", check_determinism),
        ("telescoping rate identity", check_telescoping),
        ("decoding-order rate-sum invariance", check_order_sum),
        ("polymatroid subset bounds", check_polymatroid),
        ("single-user energy inversion", check_single_user_inversion),
        ("single-user water-filling", check_water_filling),
        ("duality round trip", check_duality),
        ("reference time-sharing schedule", check_reference_schedule),
        ("tied users need time sharing", check_tie_pipeline),
        ("method dominance (smoke)", check_dominance),
    ]
}

/// Run the whole suite, printing one line per check. Returns the number
/// of failures.
pub fn run(seed: u64) -> usize {
    let mut failures = 0;
    for (name, f) in checks() {
        match f(seed) {
            Ok(()) => println!("PASS {name}"),
            Err(e) => {
                println!("FAIL {name}: {e}");
                failures += 1;
            }
        }
    }
    failures
}

fn small_cfg(seed: u64, num_users: usize, ap: usize, n: usize) -> ScenarioConfig {
    ScenarioConfig {
        num_users,
        antennas_per_user: vec![1; num_users],
        ap_antennas: ap,
        num_subcarriers: n,
        distances_m: (0..num_users).map(|u| 2.0 + u as f64).collect(),
        seed,
        ..ScenarioConfig::default()
    }
}

fn gen(seed: u64, num_users: usize, ap: usize, n: usize) -> Result<ChannelSet, String> {
    generate_channels(&small_cfg(seed, num_users, ap, n), &PathLossModel::default())
        .map_err(|e| e.to_string())
}

fn random_alloc(ch: &ChannelSet, seed: u64, scale: f64) -> PowerAllocation {
    let mut rng = substream(seed, &[0x414c_4c4f]);
    let mut alloc = PowerAllocation::zeros(ch.num_users(), ch.num_subcarriers());
    for u in 0..ch.num_users() {
        for sc in 0..ch.num_subcarriers() {
            alloc.e[u][sc] = rng.gen::<f64>() * scale;
        }
    }
    alloc
}

fn check_path_loss(_seed: u64) -> Result<(), String> {
    let m = PathLossModel::default();
    let v = m.path_loss_db(1.0, 1.0).map_err(|e| e.to_string())?;
    if (v + 147.5).abs() > 1e-9 {
        return Err(format!("loss at (1 m, 1 Hz) = {v}, expected -147.5"));
    }
    let v = m.path_loss_db(3.0, 5e9).map_err(|e| e.to_string())?;
    if (v - 56.0218).abs() > 1e-3 {
        return Err(format!("loss at (3 m, 5 GHz) = {v}, expected 56.0218"));
    }
    let below = m.path_loss_db(5.0 - 1e-9, 5e9).unwrap();
    let above = m.path_loss_db(5.0 + 1e-9, 5e9).unwrap();
    if (below - above).abs() > 1e-6 {
        return Err("discontinuous at the breakpoint".into());
    }
    if m.path_loss_db(8.0, 5e9).unwrap() <= m.path_loss_db(4.0, 5e9).unwrap() {
        return Err("not increasing in distance".into());
    }
    Ok(())
}

fn check_shadow(seed: u64) -> Result<(), String> {
    let m = PathLossModel::default();
    for (d, sigma) in [(3.0, 3.0), (8.0, 4.0)] {
        let mut rng = substream(seed, &[d as u64, 0x53]);
        let draws = 20_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..draws {
            let v = m.sample_shadow_db(d, &mut rng).map_err(|e| e.to_string())?;
            sum += v;
            sq += v * v;
        }
        let mean = sum / draws as f64;
        let std = (sq / draws as f64 - mean * mean).sqrt();
        if mean.abs() > 0.1 || (std - sigma).abs() > 0.1 * sigma {
            return Err(format!("at d={d}: mean {mean:.3}, std {std:.3} (expected 0, {sigma})"));
        }
    }
    Ok(())
}

fn check_noise_power(_seed: u64) -> Result<(), String> {
    let cfg = ScenarioConfig::default();
    let total_dbm = 10.0 * (cfg.noise_variance() * cfg.num_subcarriers as f64).log10() + 30.0;
    if (total_dbm + 94.9).abs() > 0.1 {
        return Err(format!("total noise power {total_dbm:.2} dBm, expected -94.9"));
    }
    Ok(())
}

fn check_determinism(seed: u64) -> Result<(), String> {
    let a = gen(seed, 2, 2, 16)?;
    let b = gen(seed, 2, 2, 16)?;
    if a != b {
        return Err("same seed produced different channels".into());
    }
    Ok(())
}

fn check_telescoping(seed: u64) -> Result<(), String> {
    for k in 0..100 {
        let ch = gen(seed.wrapping_add(k), 3, 2, 8)?;
        let alloc = random_alloc(&ch, seed.wrapping_add(k), 1e-6);
        let rates = rate::sic_rates(&ch, &alloc, &DecodingOrder::identity(3))
            .map_err(|e| e.to_string())?;
        let cap = rate::subset_capacity(&ch, &alloc, &[0, 1, 2]).map_err(|e| e.to_string())?;
        let sum = rates.total();
        if (sum - cap).abs() > 1e-9 * cap.max(1e-9) {
            return Err(format!("case {k}: rate sum {sum} != capacity {cap}"));
        }
    }
    Ok(())
}

fn check_order_sum(seed: u64) -> Result<(), String> {
    let perms: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    for k in 0..30 {
        let ch = gen(seed.wrapping_add(k), 3, 2, 4)?;
        let alloc = random_alloc(&ch, seed.wrapping_add(1000 + k), 1e-6);
        let sums: Vec<f64> = perms
            .iter()
            .map(|p| {
                rate::sic_rates(&ch, &alloc, &DecodingOrder::new(p.to_vec()).unwrap())
                    .unwrap()
                    .total()
            })
            .collect();
        for s in &sums[1..] {
            if (s - sums[0]).abs() > 1e-9 * sums[0].max(1e-9) {
                return Err(format!("case {k}: order sums differ: {sums:?}"));
            }
        }
    }
    Ok(())
}

fn check_polymatroid(seed: u64) -> Result<(), String> {
    let subsets: [&[usize]; 7] = [&[0], &[1], &[2], &[0, 1], &[0, 2], &[1, 2], &[0, 1, 2]];
    for k in 0..30 {
        let ch = gen(seed.wrapping_add(7 * k), 3, 2, 4)?;
        let alloc = random_alloc(&ch, seed.wrapping_add(31 * k), 1e-6);
        let rates = rate::sic_rates(&ch, &alloc, &DecodingOrder::new(vec![2, 0, 1]).unwrap())
            .map_err(|e| e.to_string())?;
        for t in subsets {
            let cap = rate::subset_capacity(&ch, &alloc, t).map_err(|e| e.to_string())?;
            let sum: f64 = t.iter().map(|&u| rates.user_total(u)).sum();
            if sum > cap + 1e-9 * cap.max(1.0) {
                return Err(format!("case {k}: subset {t:?} rate {sum} above bound {cap}"));
            }
        }
    }
    Ok(())
}

fn check_single_user_inversion(seed: u64) -> Result<(), String> {
    let ch = gen(seed, 1, 1, 1)?;
    let target = 3.0;
    let req = RateRequirement::with_unit_weights(vec![target]);
    let out = min_energy_allocate(&ch, &req, &SolverOptions::default()).map_err(|e| e.to_string())?;
    let g = ch.h(0, 0).norm_sqr() / ch.noise_variance();
    let expected = ((2f64).powf(target) - 1.0) / g;
    let got = out.alloc.total();
    if (got - expected).abs() > 1e-3 * expected {
        return Err(format!("energy {got:.3e}, closed form {expected:.3e}"));
    }
    Ok(())
}

fn check_water_filling(seed: u64) -> Result<(), String> {
    let ch = gen(seed, 1, 1, 4)?;
    let budget_w = budgets_for_receive_snr(&ch, 10.0);
    let out = max_rate_allocate(&ch, &EnergyBudget::with_unit_weights(budget_w.clone()), &SolverOptions::default())
        .map_err(|e| e.to_string())?;
    // Closed-form water-filling.
    let g: Vec<f64> = (0..4).map(|sc| ch.h(0, sc).norm_sqr() / ch.noise_variance()).collect();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| g[b].partial_cmp(&g[a]).unwrap());
    let mut best = 0.0f64;
    for m in 1..=4 {
        let inv: f64 = order[..m].iter().map(|&i| 1.0 / g[i]).sum();
        let mu = (budget_w[0] + inv) / m as f64;
        if order[..m].iter().all(|&i| mu >= 1.0 / g[i]) {
            best = best.max(order[..m].iter().map(|&i| (mu * g[i]).log2()).sum());
        }
    }
    let got = out.rates.total();
    if (got - best).abs() > 1e-4 * best {
        return Err(format!("rate {got}, water-filling {best}"));
    }
    Ok(())
}

fn check_duality(seed: u64) -> Result<(), String> {
    for k in 0..2 {
        let ch = gen(seed.wrapping_add(97 * k), 2, 2, 4)?;
        let base = budgets_for_receive_snr(&ch, 5.0);
        let probe = max_rate_allocate(&ch, &EnergyBudget::with_unit_weights(base), &SolverOptions::default())
            .map_err(|e| e.to_string())?;
        let targets: Vec<f64> = probe.rates.user_totals().iter().map(|r| 0.7 * r).collect();
        let req = RateRequirement::with_unit_weights(targets.clone());
        let fwd = min_energy_allocate(&ch, &req, &SolverOptions::default()).map_err(|e| e.to_string())?;
        let budget = EnergyBudget {
            e_max: (0..2).map(|u| fwd.alloc.user_total(u)).collect(),
            theta_w: fwd.cert.theta.clone(),
        };
        let back = max_rate_allocate(&ch, &budget, &SolverOptions::default()).map_err(|e| e.to_string())?;
        for u in 0..2 {
            let got = back.rates.user_total(u);
            if (got - targets[u]).abs() > 0.01 * targets[u].max(1e-9) {
                return Err(format!("case {k}: user {u} rate {got} vs target {}", targets[u]));
            }
        }
    }
    Ok(())
}

fn check_reference_schedule(_seed: u64) -> Result<(), String> {
    let (cand, b_min) = reference_candidates();
    let sched = timeshare::solve_timeshare(&cand, &b_min, 1e-3).map_err(|e| e.to_string())?;
    let w: Vec<f64> = sched.entries.iter().map(|(_, w)| *w).collect();
    let expected = [0.52, 0.17, 0.31];
    if w.len() != 3 || w.iter().zip(expected).any(|(a, b)| (a - b).abs() > 0.01) {
        return Err(format!("weights {w:?}, expected about {expected:?}"));
    }
    for avg in sched.averaged_rates(&cand) {
        if (avg - 500.0).abs() > 0.5 {
            return Err(format!("scheduled rate {avg} not within 0.5 of 500"));
        }
    }
    Ok(())
}

/// Built-in demo: three candidate decoding orders for three users with
/// 500 Mbps targets apiece.
pub fn reference_candidates() -> (timeshare::CandidateRates, Vec<f64>) {
    let orders = vec![
        DecodingOrder::new(vec![2, 1, 0]).unwrap(),
        DecodingOrder::new(vec![0, 2, 1]).unwrap(),
        DecodingOrder::new(vec![1, 0, 2]).unwrap(),
    ];
    let rates = vec![
        vec![398.01, 470.48, 632.23],
        vec![691.78, 242.32, 565.91],
        vec![565.91, 691.78, 242.32],
    ];
    (timeshare::CandidateRates { orders, rates }, vec![500.0, 500.0, 500.0])
}

fn check_tie_pipeline(seed: u64) -> Result<(), String> {
    // Three identical users; single orders fail, a short schedule works.
    let one = gen(seed.wrapping_add(5), 1, 2, 8)?;
    let per_sc: Vec<_> = (0..8).map(|sc| one.h(0, sc).clone()).collect();
    let ch = ChannelSet::new(vec![per_sc.clone(), per_sc.clone(), per_sc], one.noise_variance())
        .map_err(|e| e.to_string())?;
    let req = RateRequirement::with_unit_weights(vec![6.0; 3]);
    let opt = SolverOptions::default();
    let out = min_energy_allocate(&ch, &req, &opt).map_err(|e| e.to_string())?;
    let oc = ordering::derive_order(&out.cert, opt.eps_theta);
    if oc.num_arrangements() < 2 {
        return Err(format!("expected tied multipliers, got {:?}", out.cert.theta));
    }
    let orders = ordering::enumerate_orders(&oc, 720).map_err(|e| e.to_string())?;
    let cand = timeshare::rates_per_order(&ch, &out.alloc, &orders).map_err(|e| e.to_string())?;
    let sched = timeshare::solve_timeshare(&cand, &req.b_min, 1e-3).map_err(|e| e.to_string())?;
    if sched.entries.len() < 2 {
        return Err("one order sufficed; tie was not binding".into());
    }
    Ok(())
}

fn check_dominance(seed: u64) -> Result<(), String> {
    let mut sums = [0.0f64; 4];
    for k in 0..3 {
        let cfg = ScenarioConfig {
            num_subcarriers: 16,
            distances_m: Vec::new(),
            seed: seed.wrapping_add(11 * k),
            ..ScenarioConfig::default()
        };
        let cfg = crate::experiment::scenario_for(
            &crate::experiment::ExperimentSpec {
                scenario: cfg,
                ..crate::experiment::ExperimentSpec::default()
            },
            None,
            seed.wrapping_add(11 * k),
        )
        .map_err(|e| e.to_string())?;
        let ch = generate_channels(&cfg, &PathLossModel::default()).map_err(|e| e.to_string())?;
        let e_max = budgets_for_receive_snr(&ch, 0.0);
        let opt = SolverOptions::default();
        let budget = EnergyBudget::with_unit_weights(e_max.clone());
        sums[0] += max_rate_allocate(&ch, &budget, &opt).map_err(|e| e.to_string())?.rates.total();
        sums[1] += baselines::mc_noma_allocate(&ch, &budget, &opt)
            .map_err(|e| e.to_string())?
            .rates
            .total();
        sums[2] += baselines::noma_rates(&ch, &budget).map_err(|e| e.to_string())?.total();
        sums[3] += baselines::oma_allocate(&ch, OmaGoal::Budget(&budget))
            .map_err(|e| e.to_string())?
            .rates
            .total();
    }
    if !(sums[0] >= sums[1] && sums[1] > sums[2] && sums[2] > sums[3]) {
        return Err(format!(
            "mean sums not ordered: proposed {} mc-noma {} noma {} oma {}",
            sums[0], sums[1], sums[2], sums[3]
        ));
    }
    Ok(())
}
