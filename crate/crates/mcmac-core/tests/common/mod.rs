//! Shared helpers for the integration tests.

use mcmac_core::channel::ChannelSet;
use mcmac_core::linalg::{C64, CMat};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random complex channel set with unit-scale entries.
pub fn random_channel(seed: u64, num_users: usize, ly: usize, n: usize, sigma2: f64) -> ChannelSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = (0..num_users)
        .map(|_| {
            (0..n)
                .map(|_| {
                    CMat::from_fn(ly, 1, |_, _| {
                        C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * 2.0
                    })
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>();
    ChannelSet::new(users, sigma2).unwrap()
}

/// Real scalar channels (L_y = 1) from explicit gains.
pub fn scalar_channel(h: &[Vec<f64>], sigma2: f64) -> ChannelSet {
    let users = h
        .iter()
        .map(|row| {
            row.iter()
                .map(|&v| CMat::from_rows(&[vec![C64::new(v, 0.0)]]))
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>();
    ChannelSet::new(users, sigma2).unwrap()
}

pub fn assert_close(got: f64, want: f64, rel: f64, what: &str) {
    let scale = want.abs().max(1e-12);
    assert!(
        (got - want).abs() <= rel * scale,
        "{what}: got {got}, want {want} (rel {})",
        (got - want).abs() / scale
    );
}
