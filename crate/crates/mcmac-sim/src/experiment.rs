//! Scenario runner: executes every (sweep point, seed, method) cell of an
//! experiment and collects plot-ready CSV rows.

use std::fmt;
use std::io::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use mcmac_core::baselines::{self, OmaGoal};
use mcmac_core::channel::{generate_channels, substream, ChannelSet, PathLossModel, ScenarioConfig};
use mcmac_core::ordering;
use mcmac_core::rate::{self, PowerAllocation};
use mcmac_core::solver::{
    max_rate_allocate, min_energy_allocate, EnergyBudget, RateRequirement, SolverOptions,
    TracePoint,
};
use mcmac_core::timeshare;
use rand::Rng;

/// Benchmarked schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Proposed,
    Oma,
    Noma,
    McNoma,
}

impl Method {
    pub fn parse(s: &str) -> Result<Method> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "proposed" => Method::Proposed,
            "oma" => Method::Oma,
            "noma" => Method::Noma,
            "mc_noma" | "mcnoma" | "mc-noma" => Method::McNoma,
            other => bail!("unknown method '{other}' (expected proposed|oma|noma|mc_noma)"),
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Proposed => "proposed",
            Method::Oma => "oma",
            Method::Noma => "noma",
            Method::McNoma => "mc_noma",
        };
        f.write_str(s)
    }
}

/// Whether the experiment minimizes energy at rate targets or maximizes
/// rates under energy budgets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    MinEnergy,
    MaxRate,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Mode> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "min_energy" | "min-energy" => Mode::MinEnergy,
            "max_rate" | "max-rate" => Mode::MaxRate,
            other => bail!("unknown mode '{other}' (expected min_energy|max_rate)"),
        })
    }
}

/// Swept scenario variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVar {
    Snr,
    ApAntennas,
    NumUsers,
    NumSubcarriers,
}

impl SweepVar {
    pub fn parse(s: &str) -> Result<SweepVar> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "snr" => SweepVar::Snr,
            "ap_antennas" | "ap-antennas" => SweepVar::ApAntennas,
            "num_users" | "num-users" => SweepVar::NumUsers,
            "num_subcarriers" | "num-subcarriers" => SweepVar::NumSubcarriers,
            other => bail!("unknown sweep variable '{other}'"),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepVar::Snr => "snr",
            SweepVar::ApAntennas => "ap_antennas",
            SweepVar::NumUsers => "num_users",
            SweepVar::NumSubcarriers => "num_subcarriers",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Sweep {
    pub variable: SweepVar,
    pub values: Vec<f64>,
}

/// A full experiment description. Per-user vectors of length one
/// broadcast to the scenario's user count.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    /// Base scenario; `distances_m` may be empty, in which case every
    /// trial samples fresh positions uniformly from `[d_min, d_max]`.
    pub scenario: ScenarioConfig,
    pub mode: Mode,
    /// Rate targets in Mbps (min-energy mode).
    pub b_min_mbps: Vec<f64>,
    /// Energy weights (min-energy mode).
    pub weights: Vec<f64>,
    /// Receive-SNR normalization of the budgets, in dB (max-rate mode).
    pub snr_db: Option<f64>,
    /// Absolute per-user budgets in dBm (max-rate mode alternative).
    pub budget_dbm: Option<Vec<f64>>,
    /// Rate weights of the dual objective (max-rate mode).
    pub theta_w: Vec<f64>,
    pub sweep: Option<Sweep>,
    pub methods: Vec<Method>,
    /// Number of seeds; trial `t` uses `scenario.seed + t`.
    pub trials: u64,
    pub solver: SolverOptions,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            scenario: ScenarioConfig { distances_m: Vec::new(), ..ScenarioConfig::default() },
            mode: Mode::MaxRate,
            b_min_mbps: vec![500.0],
            weights: vec![1.0],
            snr_db: Some(0.0),
            budget_dbm: None,
            theta_w: vec![1.0],
            sweep: None,
            methods: vec![Method::Proposed, Method::Oma, Method::Noma, Method::McNoma],
            trials: 1,
            solver: SolverOptions::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            bail!("trials must be at least 1");
        }
        if self.methods.is_empty() {
            bail!("at least one method is required");
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                bail!("sweep needs at least one value");
            }
            if sweep.variable != SweepVar::Snr
                && sweep.values.iter().any(|&v| v < 1.0 || v.fract() != 0.0)
            {
                bail!("{} sweep values must be positive integers", sweep.variable.name());
            }
        }
        match self.mode {
            Mode::MinEnergy => {
                if self.methods.iter().any(|m| matches!(m, Method::Noma | Method::McNoma)) {
                    bail!("noma and mc_noma are budget-driven schemes; only proposed and oma run in min_energy mode");
                }
                if self.b_min_mbps.is_empty() || self.b_min_mbps.iter().any(|&b| b < 0.0) {
                    bail!("b_min_mbps must be nonnegative");
                }
            }
            Mode::MaxRate => {
                if self.snr_db.is_none() && self.budget_dbm.is_none() {
                    bail!("max_rate mode needs snr_db or budget_dbm");
                }
            }
        }
        Ok(())
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub sweep_var: String,
    pub sweep_value: f64,
    pub seed: u64,
    pub user_rates_mbps: Vec<f64>,
    pub user_power_dbm: Vec<f64>,
    pub sum_rate_mbps: f64,
    pub total_power_dbm: f64,
    pub schedule: String,
    pub status: String,
}

/// Collected results plus metadata comment lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultsTable {
    pub meta: Vec<String>,
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.status != "ok").count()
    }
}

/// Per-row allocation dump (written when `--dump-alloc` is set).
#[derive(Debug, Clone)]
pub struct AllocDump {
    pub rows: Vec<(String, f64, u64, PowerAllocation)>,
}

const DIST_STREAM: u64 = 0x4449_5354;

/// Resolve the scenario for one sweep point and trial seed: apply the
/// sweep variable, then fix distances (explicit if they match the user
/// count, sampled from `[d_min, d_max]` otherwise).
pub fn scenario_for(spec: &ExperimentSpec, sweep_value: Option<f64>, seed: u64) -> Result<ScenarioConfig> {
    let mut cfg = spec.scenario.clone();
    cfg.seed = seed;
    if let (Some(sweep), Some(v)) = (&spec.sweep, sweep_value) {
        match sweep.variable {
            SweepVar::Snr => {}
            SweepVar::ApAntennas => cfg.ap_antennas = v as usize,
            SweepVar::NumUsers => cfg.num_users = v as usize,
            SweepVar::NumSubcarriers => cfg.num_subcarriers = v as usize,
        }
    }
    // Broadcast the per-user antenna counts.
    if cfg.antennas_per_user.len() == 1 && cfg.num_users > 1 {
        cfg.antennas_per_user = vec![cfg.antennas_per_user[0]; cfg.num_users];
    }
    if cfg.antennas_per_user.len() != cfg.num_users {
        bail!(
            "antennas_per_user has {} entries for {} users",
            cfg.antennas_per_user.len(),
            cfg.num_users
        );
    }
    if cfg.distances_m.len() != cfg.num_users {
        if !cfg.distances_m.is_empty() && spec.sweep.as_ref().map(|s| s.variable) != Some(SweepVar::NumUsers) {
            bail!(
                "distances_m has {} entries for {} users",
                cfg.distances_m.len(),
                cfg.num_users
            );
        }
        let mut rng = substream(seed, &[DIST_STREAM]);
        cfg.distances_m = (0..cfg.num_users)
            .map(|_| cfg.d_min_m + rng.gen::<f64>() * (cfg.d_max_m - cfg.d_min_m))
            .collect();
    }
    cfg.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(cfg)
}

/// Equal per-user budgets that put the given mean per-antenna receive SNR
/// at the AP: with flat transmission, the per-subcarrier per-antenna
/// received power over the noise power equals `snr_db`.
pub fn budgets_for_receive_snr(ch: &ChannelSet, snr_db: f64) -> Vec<f64> {
    let nu = ch.num_users();
    let n = ch.num_subcarriers() as f64;
    let snr = 10f64.powf(snr_db / 10.0);
    let mean_gain_sum: f64 = (0..nu).map(|u| ch.user_channel_energy(u) / n).sum();
    let e = snr * ch.noise_variance() * ch.ap_antennas() as f64 * n / mean_gain_sum.max(1e-300);
    vec![e; nu]
}

fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

fn watts_to_dbm(w: f64) -> f64 {
    if w <= 0.0 { f64::NEG_INFINITY } else { 10.0 * w.log10() + 30.0 }
}

fn broadcast(v: &[f64], n: usize, what: &str) -> Result<Vec<f64>> {
    if v.len() == n {
        Ok(v.to_vec())
    } else if v.len() == 1 {
        Ok(vec![v[0]; n])
    } else {
        bail!("{what} has {} entries for {n} users", v.len())
    }
}

fn mbps_to_bits(mbps: f64, bandwidth_hz: f64, num_subcarriers: usize) -> f64 {
    mbps * 1e6 * num_subcarriers as f64 / bandwidth_hz
}

struct CellOutput {
    rates_mbps: Vec<f64>,
    alloc: PowerAllocation,
    schedule: String,
    trace: Option<Vec<TracePoint>>,
}

fn run_cell(
    spec: &ExperimentSpec,
    cfg: &ScenarioConfig,
    ch: &ChannelSet,
    method: Method,
    want_trace: bool,
) -> Result<CellOutput> {
    let nu = ch.num_users();
    let n = ch.num_subcarriers();
    let to_mbps = |bits: &[f64]| -> Vec<f64> {
        bits.iter().map(|b| b * cfg.bandwidth_hz / n as f64 / 1e6).collect()
    };
    let mut opt = spec.solver.clone();
    opt.record_trace = want_trace && method == Method::Proposed;

    match spec.mode {
        Mode::MaxRate => {
            let e_max = match (&spec.budget_dbm, spec.snr_db) {
                (Some(dbm), _) => broadcast(dbm, nu, "budget_dbm")?
                    .iter()
                    .map(|&d| dbm_to_watts(d))
                    .collect(),
                (None, Some(snr)) => budgets_for_receive_snr(ch, snr),
                (None, None) => bail!("max_rate mode needs snr_db or budget_dbm"),
            };
            match method {
                Method::Proposed => {
                    let budget =
                        EnergyBudget { e_max, theta_w: broadcast(&spec.theta_w, nu, "theta_w")? };
                    let out = max_rate_allocate(ch, &budget, &opt).map_err(anyhow::Error::msg)?;
                    let oc = ordering::cluster_values(&out.cert.theta, opt.eps_theta);
                    Ok(CellOutput {
                        rates_mbps: to_mbps(&out.rates.user_totals()),
                        alloc: out.alloc,
                        schedule: format!("{}:1", oc.canonical_order.to_dash_string()),
                        trace: out.trace,
                    })
                }
                Method::Oma => {
                    let budget = EnergyBudget::with_unit_weights(e_max);
                    let out =
                        baselines::oma_allocate(ch, OmaGoal::Budget(&budget)).map_err(anyhow::Error::msg)?;
                    Ok(CellOutput {
                        rates_mbps: to_mbps(&out.rates.user_totals()),
                        alloc: out.alloc,
                        schedule: "-".into(),
                        trace: None,
                    })
                }
                Method::Noma => {
                    let budget = EnergyBudget::with_unit_weights(e_max.clone());
                    let rates = baselines::noma_rates(ch, &budget).map_err(anyhow::Error::msg)?;
                    let mut alloc = PowerAllocation::zeros(nu, n);
                    for u in 0..nu {
                        for sc in 0..n {
                            alloc.e[u][sc] = e_max[u] / n as f64;
                        }
                    }
                    let ord = baselines::channel_strength_order(ch);
                    Ok(CellOutput {
                        rates_mbps: to_mbps(&rates.user_totals()),
                        alloc,
                        schedule: format!("{}:1", ord.to_dash_string()),
                        trace: None,
                    })
                }
                Method::McNoma => {
                    let budget = EnergyBudget::with_unit_weights(e_max);
                    let out =
                        baselines::mc_noma_allocate(ch, &budget, &opt).map_err(anyhow::Error::msg)?;
                    let ord = baselines::channel_strength_order(ch);
                    Ok(CellOutput {
                        rates_mbps: to_mbps(&out.rates.user_totals()),
                        alloc: out.alloc,
                        schedule: format!("{}:1", ord.to_dash_string()),
                        trace: None,
                    })
                }
            }
        }
        Mode::MinEnergy => {
            let mbps = broadcast(&spec.b_min_mbps, nu, "b_min_mbps")?;
            let b_min: Vec<f64> =
                mbps.iter().map(|&m| mbps_to_bits(m, cfg.bandwidth_hz, n)).collect();
            match method {
                Method::Proposed => {
                    let req = RateRequirement {
                        b_min: b_min.clone(),
                        weights: broadcast(&spec.weights, nu, "weights")?,
                    };
                    let out = min_energy_allocate(ch, &req, &opt).map_err(anyhow::Error::msg)?;
                    let oc = ordering::derive_order(&out.cert, opt.eps_theta);
                    let (schedule, avg_bits) = if oc.num_arrangements() <= 1 {
                        (
                            format!("{}:1", oc.canonical_order.to_dash_string()),
                            out.rates.user_totals(),
                        )
                    } else {
                        let orders =
                            ordering::enumerate_orders(&oc, 720).map_err(anyhow::Error::msg)?;
                        let cand = timeshare::rates_per_order(ch, &out.alloc, &orders)
                            .map_err(anyhow::Error::msg)?;
                        let sched = timeshare::solve_timeshare(&cand, &b_min, 1e-3)
                            .map_err(anyhow::Error::msg)?;
                        let text = sched
                            .entries
                            .iter()
                            .map(|(o, w)| format!("{}:{}", o.to_dash_string(), format_sig(*w, 6)))
                            .collect::<Vec<_>>()
                            .join("|");
                        (text, sched.averaged_rates(&cand))
                    };
                    Ok(CellOutput {
                        rates_mbps: to_mbps(&avg_bits),
                        alloc: out.alloc,
                        schedule,
                        trace: out.trace,
                    })
                }
                Method::Oma => {
                    let req = RateRequirement {
                        b_min,
                        weights: broadcast(&spec.weights, nu, "weights")?,
                    };
                    let out =
                        baselines::oma_allocate(ch, OmaGoal::Target(&req)).map_err(anyhow::Error::msg)?;
                    Ok(CellOutput {
                        rates_mbps: to_mbps(&out.rates.user_totals()),
                        alloc: out.alloc,
                        schedule: "-".into(),
                        trace: None,
                    })
                }
                Method::Noma | Method::McNoma => {
                    bail!("{method} does not define a min_energy mode")
                }
            }
        }
    }
}

/// Execute the experiment. Cells run in parallel; rows come back in a
/// deterministic (sweep value, seed, method) order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<(ResultsTable, AllocDump, Vec<String>)> {
    spec.validate()?;
    let model = PathLossModel::default();
    let sweep_points: Vec<Option<f64>> = match &spec.sweep {
        Some(s) => s.values.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let sweep_name = spec.sweep.as_ref().map(|s| s.variable.name()).unwrap_or("-").to_string();

    let mut cells = Vec::new();
    for &sv in &sweep_points {
        for trial in 0..spec.trials {
            for &method in &spec.methods {
                cells.push((sv, spec.scenario.seed + trial, method));
            }
        }
    }

    let outputs: Vec<(ResultRow, Option<PowerAllocation>, Vec<String>)> = cells
        .par_iter()
        .map(|&(sv, seed, method)| {
            let sweep_value = sv.unwrap_or(f64::NAN);
            let built = scenario_for(spec, sv, seed)
                .and_then(|cfg| {
                    let ch = generate_channels(&cfg, &model).map_err(anyhow::Error::msg)?;
                    run_cell(spec, &cfg, &ch, method, true).map(|out| (cfg, out))
                });
            match built {
                Ok((_cfg, out)) => {
                    let total_w: f64 = (0..out.alloc.num_users()).map(|u| out.alloc.user_total(u)).sum();
                    let row = ResultRow {
                        method: method.to_string(),
                        sweep_var: sweep_name.clone(),
                        sweep_value,
                        seed,
                        user_power_dbm: (0..out.alloc.num_users())
                            .map(|u| watts_to_dbm(out.alloc.user_total(u)))
                            .collect(),
                        sum_rate_mbps: out.rates_mbps.iter().sum(),
                        user_rates_mbps: out.rates_mbps,
                        total_power_dbm: watts_to_dbm(total_w),
                        schedule: out.schedule,
                        status: "ok".into(),
                    };
                    let trace_lines = out
                        .trace
                        .map(|t| {
                            t.iter()
                                .map(|pt| {
                                    format!(
                                        "{},{},{},{},{}",
                                        format_sig(sweep_value, 6),
                                        seed,
                                        pt.iter,
                                        format_sig(pt.dual_value, 9),
                                        format_sig(pt.max_residual, 6)
                                    )
                                })
                                .collect()
                        })
                        .unwrap_or_default();
                    (row, Some(out.alloc), trace_lines)
                }
                Err(e) => (
                    ResultRow {
                        method: method.to_string(),
                        sweep_var: sweep_name.clone(),
                        sweep_value,
                        seed,
                        user_rates_mbps: Vec::new(),
                        user_power_dbm: Vec::new(),
                        sum_rate_mbps: f64::NAN,
                        total_power_dbm: f64::NAN,
                        schedule: "-".into(),
                        status: format!("failed: {e}"),
                    },
                    None,
                    Vec::new(),
                ),
            }
        })
        .collect();

    let mut meta = Vec::new();
    if spec.mode == Mode::MaxRate && spec.budget_dbm.is_none() {
        meta.push(
            "receive-SNR normalization: equal per-user budgets scaled so mean per-antenna \
             received power per subcarrier equals snr_db over the noise power"
                .to_string(),
        );
    }

    let mut table = ResultsTable { meta, rows: Vec::with_capacity(outputs.len()) };
    let mut dump = AllocDump { rows: Vec::new() };
    let mut trace_lines = Vec::new();
    for (row, alloc, tl) in outputs {
        if let Some(a) = alloc {
            dump.rows.push((row.method.clone(), row.sweep_value, row.seed, a));
        }
        trace_lines.extend(tl);
        table.rows.push(row);
    }
    Ok((table, dump, trace_lines))
}

/// Format with six significant digits (fixed or scientific, whichever is
/// shorter to round-trip).
pub fn format_sig(v: f64, sig: usize) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if exp >= -3 && exp < sig as i32 {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        format!("{v:.decimals$}")
    } else {
        format!("{:.*e}", sig - 1, v)
    }
}

fn join_sig(values: &[f64]) -> String {
    values.iter().map(|&v| format_sig(v, 6)).collect::<Vec<_>>().join(";")
}

pub const CSV_HEADER: &str = "method,sweep_var,sweep_value,seed,user_rates_mbps,user_power_dbm,sum_rate_mbps,total_power_dbm,schedule,status";

/// Write the results table: optional `#` metadata lines, a header row,
/// then one line per row with floats at six significant digits.
pub fn emit_csv(table: &ResultsTable, path: &Path) -> Result<()> {
    let mut out = String::new();
    for m in &table.meta {
        out.push_str("# ");
        out.push_str(m);
        out.push('\n');
    }
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.sweep_var,
            format_sig(r.sweep_value, 6),
            r.seed,
            join_sig(&r.user_rates_mbps),
            join_sig(&r.user_power_dbm),
            format_sig(r.sum_rate_mbps, 6),
            format_sig(r.total_power_dbm, 6),
            r.schedule,
            r.status
        ));
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Companion allocation dump: full-precision energies so rates can be
/// recomputed bit-for-bit through the rate module.
pub fn emit_alloc_dump(dump: &AllocDump, path: &Path) -> Result<()> {
    let mut out = String::from("method,sweep_value,seed,user,subcarrier,energy_w\n");
    for (method, sv, seed, alloc) in &dump.rows {
        for u in 0..alloc.num_users() {
            for sc in 0..alloc.num_subcarriers() {
                let e = alloc.e[u][sc];
                if e > 0.0 {
                    out.push_str(&format!(
                        "{method},{},{seed},{},{},{e:.17e}\n",
                        format_sig(*sv, 6),
                        u + 1,
                        sc
                    ));
                }
            }
        }
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Per-iteration solver trace for the proposed method.
pub fn emit_trace(lines: &[String], path: &Path) -> Result<()> {
    let mut out = String::from("sweep_value,seed,iter,dual_value,max_residual\n");
    for l in lines {
        out.push_str(l);
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Parse a CSV produced by [`emit_csv`] back into rows (used by tests and
/// downstream tooling; skips `#` metadata lines).
pub fn parse_csv(text: &str) -> Result<ResultsTable> {
    let mut rows = Vec::new();
    let mut meta = Vec::new();
    let mut saw_header = false;
    for line in text.lines() {
        if let Some(m) = line.strip_prefix("# ") {
            meta.push(m.to_string());
            continue;
        }
        if !saw_header {
            if line != CSV_HEADER {
                bail!("unexpected header: {line}");
            }
            saw_header = true;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.splitn(10, ',').collect();
        if parts.len() != 10 {
            bail!("bad row: {line}");
        }
        let list = |s: &str| -> Result<Vec<f64>> {
            if s.is_empty() {
                return Ok(Vec::new());
            }
            s.split(';')
                .map(|v| v.parse::<f64>().map_err(|e| anyhow::anyhow!("{e}: {v}")))
                .collect()
        };
        rows.push(ResultRow {
            method: parts[0].to_string(),
            sweep_var: parts[1].to_string(),
            sweep_value: parts[2].parse()?,
            seed: parts[3].parse()?,
            user_rates_mbps: list(parts[4])?,
            user_power_dbm: list(parts[5])?,
            sum_rate_mbps: parts[6].parse()?,
            total_power_dbm: parts[7].parse()?,
            schedule: parts[8].to_string(),
            status: parts[9].to_string(),
        });
    }
    Ok(ResultsTable { meta, rows })
}
