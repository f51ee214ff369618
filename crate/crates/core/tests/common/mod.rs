#![allow(dead_code)]

use hgflow::signal::{Constellation, BUILTIN_NAMES};
use hgflow::{generate, Allocation, GainModel, GenerateParams, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A scenario with random shape drawn from `seed`: N <= `max_n`, J <= `max_j`,
/// K <= 4, any built-in constellation per stream, static or block-random
/// gains, and a mean power per access log-uniform over 0.1 to 100.
pub fn mixed(seed: u64, max_n: usize, max_j: usize) -> Scenario {
    mixed_with_power(seed, max_n, max_j, 100.0)
}

pub fn mixed_with_power(seed: u64, max_n: usize, max_j: usize, max_power: f64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_5eed);
    let j = rng.random_range(1..=max_j);
    let n = rng.random_range(j..=max_n);
    let k = rng.random_range(1..=4);
    let constellations = (0..k)
        .map(|_| Constellation::builtin(BUILTIN_NAMES[rng.random_range(0..BUILTIN_NAMES.len())]).unwrap())
        .collect();
    let gain_model = match rng.random_range(0..3) {
        0 => GainModel::Static,
        1 => GainModel::BlockRandom { block_len: 1 },
        _ => GainModel::BlockRandom { block_len: rng.random_range(2..=8) },
    };
    generate(&GenerateParams {
        n,
        k,
        ts: 0.01,
        packets: j,
        total_energy: n as f64 * 0.01 * 10f64.powf(rng.random_range(-1.0..max_power.log10())),
        gain_model,
        constant_across_streams: rng.random_bool(0.2),
        constellations,
        seed,
    })
    .unwrap()
}

/// `max |a - b| / max |a|` over all powers.
pub fn rel_diff(a: &Allocation, b: &Allocation) -> f64 {
    let scale = a.powers.iter().flatten().fold(0f64, |m, p| m.max(p.abs()));
    let diff = a
        .powers
        .iter()
        .flatten()
        .zip(b.powers.iter().flatten())
        .fold(0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 { diff } else { diff / scale }
}

/// Largest `spent / harvested - 1` over access prefixes; spending
/// at access `n` may use packets arriving at `n`.
pub fn worst_prefix_excess(sc: &Scenario, alloc: &Allocation) -> f64 {
    let (mut spent, mut harvested, mut worst) = (0.0, 0.0, f64::NEG_INFINITY);
    for n in 0..sc.n {
        harvested += sc.arrivals.iter().filter(|a| a.access == n + 1).map(|a| a.joules).sum::<f64>();
        spent += sc.ts * alloc.powers.iter().map(|row| row[n]).sum::<f64>();
        worst = worst.max(spent / harvested - 1.0);
    }
    worst
}
