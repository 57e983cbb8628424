//! Experiment configuration: a TOML file with `[scenario]` and
//! `[experiment]` tables whose keys match the scenario field names, plus
//! CLI flag overrides applied on top.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;

use mcmac_core::channel::ScenarioConfig;

use crate::experiment::{ExperimentSpec, Method, Mode, Sweep, SweepVar};

/// A value that may be given as a scalar or a per-user list.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawScenario {
    pub num_users: Option<usize>,
    pub antennas_per_user: Option<OneOrMany<usize>>,
    pub ap_antennas: Option<usize>,
    pub num_subcarriers: Option<usize>,
    pub bandwidth_hz: Option<f64>,
    pub center_freq_hz: Option<f64>,
    pub distances_m: Option<Vec<f64>>,
    pub d_min_m: Option<f64>,
    pub d_max_m: Option<f64>,
    pub noise_psd_dbm_per_hz: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSweep {
    pub variable: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawExperiment {
    pub mode: Option<String>,
    pub methods: Option<Vec<String>>,
    pub trials: Option<u64>,
    pub snr_db: Option<f64>,
    pub budget_dbm: Option<OneOrMany<f64>>,
    pub b_min_mbps: Option<OneOrMany<f64>>,
    pub theta_w: Option<Vec<f64>>,
    pub weights: Option<Vec<f64>>,
    pub sweep: Option<RawSweep>,
    pub rate_tol: Option<f64>,
    pub max_outer_iters: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub scenario: Option<RawScenario>,
    pub experiment: Option<RawExperiment>,
}

impl RawConfig {
    pub fn load(path: &Path) -> Result<RawConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Merge the file onto the defaults and produce a runnable spec.
    pub fn into_spec(self) -> Result<ExperimentSpec> {
        let mut spec = ExperimentSpec::default();
        let raw_s = self.scenario.unwrap_or_default();
        let s = &mut spec.scenario;
        if let Some(v) = raw_s.num_users {
            s.num_users = v;
        }
        if let Some(v) = raw_s.ap_antennas {
            s.ap_antennas = v;
        }
        if let Some(v) = raw_s.num_subcarriers {
            s.num_subcarriers = v;
        }
        if let Some(v) = raw_s.bandwidth_hz {
            s.bandwidth_hz = v;
        }
        if let Some(v) = raw_s.center_freq_hz {
            s.center_freq_hz = v;
        }
        if let Some(v) = raw_s.d_min_m {
            s.d_min_m = v;
        }
        if let Some(v) = raw_s.d_max_m {
            s.d_max_m = v;
        }
        if let Some(v) = raw_s.noise_psd_dbm_per_hz {
            s.noise_psd_dbm_per_hz = v;
        }
        if let Some(v) = raw_s.seed {
            s.seed = v;
        }
        if let Some(v) = raw_s.distances_m {
            s.distances_m = v;
        }
        s.antennas_per_user = match raw_s.antennas_per_user {
            Some(v) => v.into_vec(),
            None => vec![1],
        };

        let raw_e = self.experiment.unwrap_or_default();
        if let Some(v) = raw_e.mode {
            spec.mode = Mode::parse(&v)?;
        }
        if let Some(v) = raw_e.methods {
            spec.methods = v.iter().map(|m| Method::parse(m)).collect::<Result<_>>()?;
        }
        if let Some(v) = raw_e.trials {
            spec.trials = v;
        }
        if raw_e.snr_db.is_some() {
            spec.snr_db = raw_e.snr_db;
        }
        if let Some(v) = raw_e.budget_dbm {
            spec.budget_dbm = Some(v.into_vec());
            spec.snr_db = None;
        }
        if let Some(v) = raw_e.b_min_mbps {
            spec.b_min_mbps = v.into_vec();
        }
        if let Some(v) = raw_e.theta_w {
            spec.theta_w = v;
        }
        if let Some(v) = raw_e.weights {
            spec.weights = v;
        }
        if let Some(v) = raw_e.rate_tol {
            spec.solver.rate_tol = v;
        }
        if let Some(v) = raw_e.max_outer_iters {
            spec.solver.max_outer_iters = v;
        }
        if let Some(sw) = raw_e.sweep {
            spec.sweep = Some(Sweep { variable: SweepVar::parse(&sw.variable)?, values: sw.values });
        }
        Ok(spec)
    }
}

/// Parse a comma-separated list of numbers, e.g. `3,3,3` or `-10,0,10`.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .with_context(|| format!("parsing number '{v}' in list '{s}'"))
        })
        .collect()
}

/// Default scenario matched to the reference experiment parameters.
pub fn default_scenario() -> ScenarioConfig {
    ScenarioConfig { distances_m: Vec::new(), ..ScenarioConfig::default() }
}
