//! Reproducible synthetic multi-carrier channel generation.
//!
//! Each user–AP link is modelled as an 8-tap tapped delay line with an
//! exponentially decaying power-delay profile (30 ns decay constant,
//! taps spaced at the sample period `1/W`, total power normalized to 1),
//! i.i.d. circular complex Gaussian taps per antenna pair, an N-point DFT
//! to obtain per-subcarrier coefficients, and a distance-dependent
//! path-loss plus log-normal shadow-fading amplitude scale. Shadow fading
//! is drawn once per user (it is a link-geometry effect); small-scale
//! fading is independent per antenna pair.
//!
//! Path loss follows the indoor WLAN breakpoint model: free-space slope
//! up to the breakpoint distance, a steeper fixed slope beyond it, and a
//! shadow standard deviation that grows past the breakpoint.
//!
//! All draws come from per-link counter-based substreams of the scenario
//! seed, so regeneration is bit-identical no matter in which order links
//! are produced.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{C64, CMat};

/// Number of taps in the synthetic impulse response.
pub const NUM_TAPS: usize = 8;

/// Decay constant of the exponential power-delay profile, in seconds.
pub const PDP_DECAY_S: f64 = 30e-9;

/// Scenario description: geometry, OFDM numerology, and noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Number of uplink users `U`.
    pub num_users: usize,
    /// Transmit antennas per user (one entry per user).
    pub antennas_per_user: Vec<usize>,
    /// Receive antennas at the access point `L_y`.
    pub ap_antennas: usize,
    /// OFDM subcarriers `N`.
    pub num_subcarriers: usize,
    /// Channel bandwidth in Hz.
    pub bandwidth_hz: f64,
    /// Carrier frequency in Hz.
    pub center_freq_hz: f64,
    /// User–AP distances in meters, one per user.
    pub distances_m: Vec<f64>,
    /// Smallest admissible distance (used when sampling positions).
    pub d_min_m: f64,
    /// Largest admissible distance (used when sampling positions).
    pub d_max_m: f64,
    /// Noise power spectral density in dBm/Hz.
    pub noise_psd_dbm_per_hz: f64,
    /// Master seed for all randomness derived from this scenario.
    pub seed: u64,
}

impl Default for ScenarioConfig {
    /// Three single-antenna users at 3 m from a 2-antenna AP on an
    /// 80 MHz, 64-subcarrier, 5 GHz channel with -174 dBm/Hz noise.
    fn default() -> Self {
        ScenarioConfig {
            num_users: 3,
            antennas_per_user: alloc::vec![1; 3],
            ap_antennas: 2,
            num_subcarriers: 64,
            bandwidth_hz: 80e6,
            center_freq_hz: 5e9,
            distances_m: alloc::vec![3.0; 3],
            d_min_m: 1.0,
            d_max_m: 10.0,
            noise_psd_dbm_per_hz: -174.0,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    /// Check the documented invariants.
    pub fn validate(&self) -> Result<()> {
        if self.num_users < 1 {
            return Err(Error::InvalidInput("num_users must be at least 1".into()));
        }
        if self.ap_antennas < 1 {
            return Err(Error::InvalidInput("ap_antennas must be at least 1".into()));
        }
        if self.num_subcarriers < 1 {
            return Err(Error::InvalidInput("num_subcarriers must be at least 1".into()));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::InvalidInput("bandwidth_hz must be positive".into()));
        }
        if !(self.center_freq_hz > 0.0) {
            return Err(Error::InvalidInput("center_freq_hz must be positive".into()));
        }
        if self.antennas_per_user.len() != self.num_users {
            return Err(Error::InvalidInput(format!(
                "antennas_per_user has {} entries for {} users",
                self.antennas_per_user.len(),
                self.num_users
            )));
        }
        if self.antennas_per_user.iter().any(|&l| l < 1) {
            return Err(Error::InvalidInput("each user needs at least one antenna".into()));
        }
        if self.distances_m.len() != self.num_users {
            return Err(Error::InvalidInput(format!(
                "distances_m has {} entries for {} users",
                self.distances_m.len(),
                self.num_users
            )));
        }
        if self.distances_m.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::InvalidInput("all distances must be positive".into()));
        }
        if !(self.d_min_m > 0.0) || !(self.d_max_m >= self.d_min_m) {
            return Err(Error::InvalidInput("need 0 < d_min_m <= d_max_m".into()));
        }
        if !self.noise_psd_dbm_per_hz.is_finite() {
            return Err(Error::InvalidInput("noise PSD must be finite".into()));
        }
        Ok(())
    }

    /// Per-subcarrier noise power in linear watts:
    /// `10^((psd_dbm + 10 log10(W/N) - 30) / 10)`.
    pub fn noise_variance(&self) -> f64 {
        let per_sc_hz = self.bandwidth_hz / self.num_subcarriers as f64;
        let dbm = self.noise_psd_dbm_per_hz + 10.0 * per_sc_hz.log10();
        10f64.powf((dbm - 30.0) / 10.0)
    }
}

/// Breakpoint path-loss model with distance-dependent shadow deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLossModel {
    /// Breakpoint distance in meters.
    pub d_break_m: f64,
    /// Loss slope beyond the breakpoint, dB per decade of distance.
    pub slope_after_break_db: f64,
    /// Shadow-fading standard deviation up to the breakpoint, dB.
    pub sigma_shadow_before_db: f64,
    /// Shadow-fading standard deviation beyond the breakpoint, dB.
    pub sigma_shadow_after_db: f64,
}

impl Default for PathLossModel {
    fn default() -> Self {
        PathLossModel {
            d_break_m: 5.0,
            slope_after_break_db: 35.0,
            sigma_shadow_before_db: 3.0,
            sigma_shadow_after_db: 4.0,
        }
    }
}

impl PathLossModel {
    /// Deterministic path loss in dB, excluding shadow fading.
    ///
    /// `20 log10(f) + 20 log10(d) - 147.5` up to the breakpoint; beyond
    /// it the free-space term freezes at the breakpoint and a
    /// `slope_after_break_db * log10(d/d_break)` term takes over, so the
    /// curve is continuous at `d_break`.
    pub fn path_loss_db(&self, d_m: f64, f_hz: f64) -> Result<f64> {
        if !(d_m > 0.0) {
            return Err(Error::Domain(format!("distance {d_m} must be positive")));
        }
        if !(f_hz > 0.0) {
            return Err(Error::Domain(format!("frequency {f_hz} must be positive")));
        }
        if !(self.d_break_m > 0.0) {
            return Err(Error::InvalidInput("d_break_m must be positive".into()));
        }
        let free_space = |d: f64| 20.0 * f_hz.log10() + 20.0 * d.log10() - 147.5;
        if d_m <= self.d_break_m {
            Ok(free_space(d_m))
        } else {
            Ok(free_space(self.d_break_m)
                + self.slope_after_break_db * (d_m / self.d_break_m).log10())
        }
    }

    /// Shadow-fading standard deviation at distance `d_m`, in dB.
    pub fn shadow_sigma_db(&self, d_m: f64) -> f64 {
        if d_m <= self.d_break_m {
            self.sigma_shadow_before_db
        } else {
            self.sigma_shadow_after_db
        }
    }

    /// One zero-mean Gaussian shadow-fading draw in dB.
    pub fn sample_shadow_db(&self, d_m: f64, rng: &mut impl Rng) -> Result<f64> {
        if !(d_m > 0.0) {
            return Err(Error::Domain(format!("distance {d_m} must be positive")));
        }
        let (g, _) = gaussian_pair(rng);
        Ok(g * self.shadow_sigma_db(d_m))
    }
}

/// Immutable per-user, per-subcarrier channel matrices plus the
/// per-subcarrier noise variance (noise is spatially and spectrally
/// white: `R_nn = sigma^2 * I`).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    h: Vec<Vec<CMat>>,
    noise_variance: f64,
    ap_antennas: usize,
}

impl ChannelSet {
    /// Build from explicit matrices. `h[u][n]` must be `L_y x L_{x,u}`
    /// with a common row count across all users and subcarriers.
    pub fn new(h: Vec<Vec<CMat>>, noise_variance: f64) -> Result<Self> {
        if h.is_empty() || h[0].is_empty() {
            return Err(Error::InvalidInput("channel set needs at least one user and subcarrier".into()));
        }
        if !(noise_variance > 0.0) || !noise_variance.is_finite() {
            return Err(Error::Domain("noise variance must be positive and finite".into()));
        }
        let n = h[0].len();
        let ly = h[0][0].rows();
        if ly < 1 {
            return Err(Error::InvalidInput("need at least one AP antenna row".into()));
        }
        for (u, per_sc) in h.iter().enumerate() {
            if per_sc.len() != n {
                return Err(Error::InvalidInput(format!("user {u} has {} subcarriers, expected {n}", per_sc.len())));
            }
            let cols = per_sc[0].cols();
            for m in per_sc {
                if m.rows() != ly || m.cols() != cols || cols < 1 {
                    return Err(Error::InvalidInput(format!("user {u} has inconsistent matrix shape")));
                }
            }
        }
        Ok(ChannelSet { h, noise_variance, ap_antennas: ly })
    }

    pub fn num_users(&self) -> usize {
        self.h.len()
    }

    pub fn num_subcarriers(&self) -> usize {
        self.h[0].len()
    }

    pub fn ap_antennas(&self) -> usize {
        self.ap_antennas
    }

    /// Transmit antennas of user `u`.
    pub fn antennas_of(&self, u: usize) -> usize {
        self.h[u][0].cols()
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// Channel matrix of user `u` on subcarrier `n`.
    pub fn h(&self, u: usize, n: usize) -> &CMat {
        &self.h[u][n]
    }

    /// Aggregate squared channel energy of a user across subcarriers.
    pub fn user_channel_energy(&self, u: usize) -> f64 {
        self.h[u].iter().map(|m| m.norm_sqr()).sum()
    }
}

/// Generate a channel realization for the scenario. Deterministic in
/// `(cfg, model)`: the same inputs always produce a bit-identical set.
pub fn generate_channels(cfg: &ScenarioConfig, model: &PathLossModel) -> Result<ChannelSet> {
    cfg.validate()?;
    let n = cfg.num_subcarriers;
    let ly = cfg.ap_antennas;

    // Sample-spaced exponential PDP, normalized to unit total power so
    // the per-subcarrier coefficients are flat in expectation.
    let dt = 1.0 / cfg.bandwidth_hz;
    let mut pdp = [0.0f64; NUM_TAPS];
    let mut total = 0.0;
    for (k, p) in pdp.iter_mut().enumerate() {
        *p = (-(k as f64) * dt / PDP_DECAY_S).exp();
        total += *p;
    }
    for p in pdp.iter_mut() {
        *p /= total;
    }

    let mut h: Vec<Vec<CMat>> = Vec::with_capacity(cfg.num_users);
    for u in 0..cfg.num_users {
        let d = cfg.distances_m[u];
        let mut shadow_rng = substream(cfg.seed, &[STREAM_SHADOW, u as u64]);
        let shadow_db = model.sample_shadow_db(d, &mut shadow_rng)?;
        let loss_db = model.path_loss_db(d, cfg.center_freq_hz)? + shadow_db;
        let amplitude = 10f64.powf(-loss_db / 20.0);

        let lx = cfg.antennas_per_user[u];
        let mut per_sc: Vec<CMat> = (0..n).map(|_| CMat::zeros(ly, lx)).collect();
        for a in 0..lx {
            for r in 0..ly {
                let mut rng = substream(cfg.seed, &[STREAM_TAPS, u as u64, a as u64, r as u64]);
                let mut taps = [C64::new(0.0, 0.0); NUM_TAPS];
                for (k, t) in taps.iter_mut().enumerate() {
                    let (g1, g2) = gaussian_pair(&mut rng);
                    let s = (pdp[k] / 2.0).sqrt();
                    *t = C64::new(g1 * s, g2 * s);
                }
                for (sc, m) in per_sc.iter_mut().enumerate() {
                    let mut coef = C64::new(0.0, 0.0);
                    for (k, t) in taps.iter().enumerate() {
                        let angle = -2.0 * core::f64::consts::PI * (k as f64) * (sc as f64) / n as f64;
                        coef += t * C64::new(angle.cos(), angle.sin());
                    }
                    *m.at_mut(r, a) = coef * amplitude;
                }
            }
        }
        h.push(per_sc);
    }

    ChannelSet::new(h, cfg.noise_variance())
}

const STREAM_SHADOW: u64 = 0x5348_4144;
const STREAM_TAPS: u64 = 0x5441_5053;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent, order-insensitive random substream from the
/// master seed and a list of integer tags.
pub fn substream(master: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = master;
    let _ = splitmix64(&mut state);
    for &t in tags {
        state ^= t.wrapping_mul(0xA24B_AED4_963E_E407);
        let _ = splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// One pair of independent standard Gaussian draws (Box–Muller).
pub fn gaussian_pair(rng: &mut impl Rng) -> (f64, f64) {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let phi = 2.0 * core::f64::consts::PI * u2;
    (r * phi.cos(), r * phi.sin())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_loss_closed_form_points() {
        let m = PathLossModel::default();
        // Both log terms vanish.
        assert!((m.path_loss_db(1.0, 1.0).unwrap() + 147.5).abs() < 1e-12);
        // Hand-evaluated: 20 log10(5e9) + 20 log10(3) - 147.5.
        let v = m.path_loss_db(3.0, 5e9).unwrap();
        assert!((v - 56.021825181113624).abs() < 1e-9, "got {v}");
    }

    #[test]
    fn path_loss_continuous_at_breakpoint() {
        let m = PathLossModel::default();
        let below = m.path_loss_db(5.0 - 1e-9, 5e9).unwrap();
        let above = m.path_loss_db(5.0 + 1e-9, 5e9).unwrap();
        assert!((below - above).abs() < 1e-6);
    }

    #[test]
    fn path_loss_monotone_in_distance_and_frequency() {
        let m = PathLossModel::default();
        let mut rng = substream(99, &[1]);
        for _ in 0..200 {
            let d1 = rng.gen::<f64>() * 9.9 + 0.1;
            let d2 = d1 + rng.gen::<f64>() * 5.0 + 1e-6;
            let f1 = rng.gen::<f64>() * 5e9 + 1e8;
            let f2 = f1 * (1.0 + rng.gen::<f64>());
            assert!(m.path_loss_db(d2, f1).unwrap() > m.path_loss_db(d1, f1).unwrap());
            assert!(m.path_loss_db(d1, f2).unwrap() > m.path_loss_db(d1, f1).unwrap());
        }
    }

    #[test]
    fn path_loss_rejects_bad_arguments() {
        let m = PathLossModel::default();
        assert!(m.path_loss_db(0.0, 5e9).is_err());
        assert!(m.path_loss_db(3.0, -1.0).is_err());
    }

    #[test]
    fn shadow_fading_moments() {
        let m = PathLossModel::default();
        let draws = 100_000;
        for (d, sigma) in [(3.0, 3.0), (8.0, 4.0)] {
            let mut rng = substream(7, &[d as u64]);
            let mut sum = 0.0;
            let mut sq = 0.0;
            for _ in 0..draws {
                let v = m.sample_shadow_db(d, &mut rng).unwrap();
                sum += v;
                sq += v * v;
            }
            let mean = sum / draws as f64;
            let std = (sq / draws as f64 - mean * mean).sqrt();
            assert!(mean.abs() < 0.05, "mean {mean} at d={d}");
            assert!((std - sigma).abs() < 0.05 * sigma, "std {std} at d={d}");
        }
    }

    #[test]
    fn generated_shapes_and_determinism() {
        let cfg = ScenarioConfig {
            num_users: 3,
            antennas_per_user: alloc::vec![1; 3],
            ap_antennas: 2,
            num_subcarriers: 64,
            distances_m: alloc::vec![3.0, 5.0, 8.0],
            ..ScenarioConfig::default()
        };
        let model = PathLossModel::default();
        let a = generate_channels(&cfg, &model).unwrap();
        assert_eq!(a.num_users(), 3);
        assert_eq!(a.num_subcarriers(), 64);
        for u in 0..3 {
            for n in 0..64 {
                assert_eq!(a.h(u, n).rows(), 2);
                assert_eq!(a.h(u, n).cols(), 1);
            }
        }
        let b = generate_channels(&cfg, &model).unwrap();
        assert_eq!(a, b);
        // A different seed must change the realization.
        let c = generate_channels(&ScenarioConfig { seed: 2, ..cfg }, &model).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noise_power_matches_reference_level() {
        let cfg = ScenarioConfig::default();
        let total_dbm = 10.0 * (cfg.noise_variance() * 64.0).log10() + 30.0;
        assert!((total_dbm + 94.9).abs() < 0.1, "total noise {total_dbm} dBm");
    }

    #[test]
    fn mean_channel_power_decreases_with_distance() {
        let model = PathLossModel::default();
        let mut near = 0.0;
        let mut far = 0.0;
        for seed in 0..1000u64 {
            let cfg = ScenarioConfig {
                num_users: 2,
                antennas_per_user: alloc::vec![1, 1],
                ap_antennas: 1,
                num_subcarriers: 8,
                distances_m: alloc::vec![3.0, 8.0],
                seed,
                ..ScenarioConfig::default()
            };
            let ch = generate_channels(&cfg, &model).unwrap();
            near += ch.user_channel_energy(0);
            far += ch.user_channel_energy(1);
        }
        assert!(far < near, "far {far} should be below near {near}");
    }

    #[test]
    fn subcarrier_power_is_flat_in_expectation() {
        let model = PathLossModel::default();
        let n = 8;
        let mut per_sc = alloc::vec![0.0f64; n];
        let seeds = 4000;
        for seed in 0..seeds {
            let cfg = ScenarioConfig {
                num_users: 1,
                antennas_per_user: alloc::vec![1],
                ap_antennas: 1,
                num_subcarriers: n,
                distances_m: alloc::vec![3.0],
                seed,
                ..ScenarioConfig::default()
            };
            let ch = generate_channels(&cfg, &model).unwrap();
            for (sc, acc) in per_sc.iter_mut().enumerate() {
                *acc += ch.h(0, sc).norm_sqr();
            }
        }
        let mean: f64 = per_sc.iter().sum::<f64>() / n as f64;
        for (sc, &p) in per_sc.iter().enumerate() {
            assert!(
                (p - mean).abs() < 0.10 * mean,
                "subcarrier {sc} power {p} deviates from mean {mean}"
            );
        }
    }

    #[test]
    fn substreams_are_order_insensitive() {
        let mut a = substream(42, &[STREAM_TAPS, 1, 0, 0]);
        let mut b = substream(42, &[STREAM_TAPS, 1, 0, 0]);
        assert_eq!(a.gen::<u64>(), b.gen::<u64>());
        let mut c = substream(42, &[STREAM_TAPS, 1, 0, 1]);
        assert_ne!(a.gen::<u64>(), c.gen::<u64>());
    }

    #[test]
    fn config_validation_catches_errors() {
        let mut cfg = ScenarioConfig::default();
        cfg.distances_m = alloc::vec![3.0, -1.0, 2.0];
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::default();
        cfg.antennas_per_user = alloc::vec![1, 1];
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::default();
        cfg.bandwidth_hz = 0.0;
        assert!(cfg.validate().is_err());
    }
}
