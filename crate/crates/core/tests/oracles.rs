//! Independent oracles for the signal functions: Monte Carlo estimates,
//! brute-force integration and finite differences.

use hgflow::signal::{
    conditional_mean, mmse_derivative, mmse_exact, mutual_information, Constellation, TableConfig, TableSet,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn builtin(name: &str) -> Constellation {
    Constellation::builtin(name).unwrap()
}

fn grid20() -> Vec<f64> {
    (0..20).map(|i| 10f64.powf(-2.0 + 4.0 * i as f64 / 19.0)).collect()
}

/// Sample mean and its standard error.
fn mean_and_se(samples: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for x in samples {
        n += 1.0;
        let d = x - mean;
        mean += d / n;
        m2 += d * (x - mean);
    }
    (mean, (m2 / (n - 1.0) / n).sqrt())
}

/// BPSK squared error `(x - tanh(sqrt(snr) y))^2` with x = +1; the -1 half is
/// its mirror image.
fn mc_bpsk_mmse(snr: f64, samples: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = snr.sqrt();
    mean_and_se((0..samples).map(|_| {
        let n: f64 = StandardNormal.sample(&mut rng);
        let e = 1.0 - (a * (a + n)).tanh();
        e * e
    }))
}

#[test]
fn bpsk_mmse_at_unit_snr_within_monte_carlo_interval() {
    let (mc, se) = mc_bpsk_mmse(1.0, 10_000_000, 7);
    let exact = mmse_exact(&Constellation::bpsk(), 1.0).unwrap();
    assert!((exact - mc).abs() <= 3.0 * se, "exact {exact}, MC {mc} +/- {}", 3.0 * se);
    assert!(se < 5e-4);
}

#[test]
fn bpsk_inverse_mmse_within_monte_carlo_interval() {
    let tables = TableSet::build(&[Constellation::bpsk()], TableConfig::default()).unwrap();
    let snr = tables[0].mmse_inverse(0.5).unwrap();
    let (mc, se) = mc_bpsk_mmse(snr, 10_000_000, 11);
    assert!((mc - 0.5).abs() <= 3.0 * se, "snr {snr}: MC mmse {mc} +/- {}", 3.0 * se);
}

#[test]
fn pam4_mutual_information_within_monte_carlo_interval() {
    let c = builtin("4pam");
    let (points, probs) = c.support().unwrap();
    let snr = 2.0f64;
    let a = snr.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mc, se) = mean_and_se((0..2_000_000).map(|i| {
        let x = points[i % points.len()];
        let n: f64 = StandardNormal.sample(&mut rng);
        let y = a * x + n;
        let own = (-0.5 * n * n).exp();
        let mix: f64 = points.iter().zip(probs).map(|(s, p)| p * (-0.5 * (y - a * s).powi(2)).exp()).sum();
        (own / mix).log2()
    }));
    let exact = mutual_information(&c, snr).unwrap();
    assert!((exact - mc).abs() <= 3.0 * se, "exact {exact}, MC {mc} +/- {}", 3.0 * se);
}

/// `1 - E[E[x|y]^2]` by a fine trapezoid over y with the posterior written
/// out as a direct sum.
fn integrated_mmse(c: &Constellation, snr: f64) -> f64 {
    let (points, probs) = c.support().unwrap();
    let a = snr.sqrt();
    let (lo, hi, steps) = (-a * 2.0 - 12.0, a * 2.0 + 12.0, 200_000);
    let h = (hi - lo) / steps as f64;
    let mut acc = 0.0;
    for i in 0..=steps {
        let y = lo + h * i as f64;
        let w: Vec<f64> = points.iter().zip(probs).map(|(s, p)| p * (-0.5 * (y - a * s).powi(2)).exp()).collect();
        let py: f64 = w.iter().sum();
        let m: f64 = w.iter().zip(points).map(|(w, s)| w * s).sum::<f64>() / py;
        let f = py * m * m / (2.0 * std::f64::consts::PI).sqrt();
        acc += if i == 0 || i == steps { 0.5 * f } else { f };
    }
    1.0 - acc * h
}

#[test]
fn mmse_matches_brute_force_integration() {
    for (name, snr) in [("bpsk", 0.3), ("4pam", 2.0), ("16pam", 5.0), ("32pam", 40.0)] {
        let c = builtin(name);
        let want = integrated_mmse(&c, snr);
        let got = mmse_exact(&c, snr).unwrap();
        assert!((got - want).abs() < 1e-9, "{name} at {snr}: {got} vs {want}");
    }
}

#[test]
fn conditional_mean_matches_direct_sum() {
    let c = builtin("16pam");
    let (points, probs) = c.support().unwrap();
    for (y, snr) in [(-3.1, 0.5), (0.2, 4.0), (2.5, 30.0), (9.0, 100.0)] {
        let a = f64::sqrt(snr);
        let w: Vec<f64> = points.iter().zip(probs).map(|(s, p)| p * (-0.5 * (y - a * s).powi(2)).exp()).collect();
        let want = w.iter().zip(points).map(|(w, s)| w * s).sum::<f64>() / w.iter().sum::<f64>();
        let got = conditional_mean(&c, y, snr).unwrap();
        assert!((got - want).abs() < 1e-12, "y {y} snr {snr}: {got} vs {want}");
    }
}

#[test]
fn mmse_derivative_matches_finite_difference() {
    for name in ["bpsk", "4pam", "16pam", "32pam", "gaussian"] {
        let c = builtin(name);
        for s in grid20() {
            let h = 1e-4 * s.max(1.0);
            let fd = (mmse_exact(&c, s + h).unwrap() - mmse_exact(&c, s - h).unwrap()) / (2.0 * h);
            let d = mmse_derivative(&c, s).unwrap();
            assert!(d <= 0.0, "{name} at {s}: {d}");
            assert!((d - fd).abs() <= 1e-5, "{name} at {s}: {d} vs {fd}");
        }
    }
}

#[test]
fn mutual_information_slope_is_half_the_mmse() {
    for name in ["bpsk", "4pam", "16pam", "32pam", "gaussian"] {
        let c = builtin(name);
        for s in grid20() {
            let h = 1e-4 * s.max(1.0);
            let nats = |x: f64| mutual_information(&c, x).unwrap() * std::f64::consts::LN_2;
            let di = (nats(s + h) - nats(s - h)) / (2.0 * h);
            let half = 0.5 * mmse_exact(&c, s).unwrap();
            assert!((di - half).abs() <= 1e-5, "{name} at {s}: {di} vs {half}");
        }
    }
}

#[test]
fn mutual_information_below_gaussian_and_entropy() {
    for name in ["bpsk", "4pam", "16pam", "32pam"] {
        let c = builtin(name);
        let q = c.cardinality().unwrap() as f64;
        for s in grid20().into_iter().chain([300.0, 3000.0]) {
            let mi = mutual_information(&c, s).unwrap();
            assert!(mi <= 0.5 * (1.0 + s).log2() + 1e-12, "{name} at {s}");
            assert!(mi <= q.log2() + 1e-12, "{name} at {s}");
        }
    }
}

#[test]
fn tables_track_exact_values() {
    let cs: Vec<Constellation> = ["bpsk", "4pam", "16pam", "32pam"].map(builtin).to_vec();
    let tables = TableSet::build(&cs, TableConfig::default()).unwrap();
    for (c, t) in cs.iter().zip(tables.iter()) {
        for s in grid20().into_iter().map(|s| s * 1.37) {
            let (m, i) = (mmse_exact(c, s).unwrap(), mutual_information(c, s).unwrap());
            assert!((t.mmse_at(s).unwrap() - m).abs() <= 1e-7 * m, "{} mmse at {s}", c.label());
            assert!((t.mi_at(s).unwrap() - i).abs() <= 1e-7 * i.max(1e-3), "{} mi at {s}", c.label());
            let back = t.mmse_inverse(m).unwrap();
            assert!((back - s).abs() <= 1e-6 * s, "{} inverse at {s}: {back}", c.label());
        }
    }
}
