//! Log-domain quadrature of posterior moments for a discrete input observed
//! through `y = sqrt(snr) * x + n`, `n ~ N(0, 1)`.
//!
//! All three integrals have the form `∫ p(y) F(w(y)) dy` where `w(y)` is the
//! posterior over the alphabet and `F` is the posterior variance, its square,
//! or the posterior entropy. Each `F` is carried as a logarithm so that
//! exponentially small values (BPSK at snr 1e4 has mmse near e^-5000) keep
//! full relative precision.
//!
//! The integrand is analytic in a strip whose half-width is about `pi / d`,
//! `d` being the largest scaled spacing between adjacent points, and it
//! decays at least like `exp(-t^2/2 - |t| d/2)` away from the crossover
//! points. The trapezoid rule on a uniform grid with step proportional to
//! `1/d`, restricted to windows around the crossovers, therefore converges
//! geometrically. Convergence is checked by halving the step.

use std::f64::consts::{LN_2, PI};

use crate::error::{Error, Result};

/// Relative agreement required between step `h` and `h/2`.
pub(crate) const REL_TOL: f64 = 1e-8;

/// Trapezoid step in units of the strip scale `min(1, 2/d)`.
const STEP_FACTOR: f64 = 0.15;

/// Log-decay from the crossover at which a window is truncated.
const WINDOW_DECAY: f64 = 70.0;

/// Terms whose log-weight trails the largest neighbour by more than this are
/// dropped from the posterior sums.
const NEIGHBOUR_CUTOFF: f64 = 60.0;

/// Posterior moments at one snr, all as natural logarithms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LogMoments {
    /// ln E[var(X | Y)] = ln mmse
    pub ln_mmse: f64,
    /// ln E[var(X | Y)^2] = ln(-d mmse / d snr)
    pub ln_neg_dmmse: f64,
    /// ln E[H(X | Y = y)], the equivocation in nats.
    pub ln_equivocation: f64,
}

/// Streaming `ln Σ exp(a_i)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogSum {
    max: f64,
    scaled: f64,
}

impl LogSum {
    pub fn new() -> Self {
        LogSum { max: f64::NEG_INFINITY, scaled: 0.0 }
    }

    pub fn add(&mut self, ln_x: f64) {
        if ln_x == f64::NEG_INFINITY {
            return;
        }
        if ln_x <= self.max {
            self.scaled += (ln_x - self.max).exp();
        } else {
            self.scaled = self.scaled * (self.max - ln_x).exp() + 1.0;
            self.max = ln_x;
        }
    }

    pub fn ln(&self) -> f64 {
        if self.scaled == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

/// Scratch buffers and constants for one (constellation, snr) evaluation.
struct Posterior<'a> {
    points: &'a [f64],
    ln_probs: Vec<f64>,
    means: Vec<f64>,
    ln_w: Vec<f64>,
}

/// Log-integrands of the three moments at one observation.
struct NodeValues {
    ln_density: f64,
    ln_var: f64,
    ln_entropy: f64,
}

impl<'a> Posterior<'a> {
    fn new(points: &'a [f64], probs: &[f64], snr: f64) -> Self {
        let amp = snr.sqrt();
        Posterior {
            points,
            ln_probs: probs.iter().map(|p| p.ln()).collect(),
            means: points.iter().map(|s| amp * s).collect(),
            ln_w: vec![0.0; points.len()],
        }
    }

    fn eval(&mut self, y: f64) -> NodeValues {
        let q = self.points.len();
        let mut best = 0;
        for c in 0..q {
            let r = y - self.means[c];
            self.ln_w[c] = self.ln_probs[c] - 0.5 * r * r;
            if self.ln_w[c] > self.ln_w[best] {
                best = c;
            }
        }
        let top = self.ln_w[best];
        let mut runner_up = f64::NEG_INFINITY;
        for c in 0..q {
            self.ln_w[c] -= top;
            if c != best && self.ln_w[c] > runner_up {
                runner_up = self.ln_w[c];
            }
        }
        let cutoff = runner_up - NEIGHBOUR_CUTOFF;

        // ln R, R = Σ_{c != best} w_c / w_best
        let mut rest = LogSum::new();
        for c in 0..q {
            if c != best && self.ln_w[c] >= cutoff {
                rest.add(self.ln_w[c]);
            }
        }
        let ln_rest = rest.ln();
        let ln_norm = ln_rest.exp().ln_1p();
        let ln_density = top + ln_norm - 0.5 * (2.0 * PI).ln();

        let s_best = self.points[best];
        let mut spread = LogSum::new();
        let mut drift_pos = LogSum::new();
        let mut drift_neg = LogSum::new();
        let mut entropy = LogSum::new();
        for c in 0..q {
            if c == best || self.ln_w[c] < cutoff {
                continue;
            }
            let lw = self.ln_w[c] - ln_norm;
            let diff = self.points[c] - s_best;
            let ln_abs = diff.abs().ln();
            spread.add(lw + 2.0 * ln_abs);
            if diff > 0.0 {
                drift_pos.add(lw + ln_abs);
            } else {
                drift_neg.add(lw + ln_abs);
            }
            entropy.add(lw + (-lw).ln());
        }

        // var = Σ w_c (s_c - s*)^2 - δ^2 with δ = Σ w_c (s_c - s*); δ^2 is at
        // most (1 - w*) times the first sum, so the difference is benign.
        let ln_spread = spread.ln();
        let ln_drift = ln_abs_diff(drift_pos.ln(), drift_neg.ln());
        let ratio = (2.0 * ln_drift - ln_spread).exp();
        let ln_var = ln_spread + (-ratio).ln_1p();

        // -w* ln w* = ln(1+R) / (1+R)
        let ln_log1p_rest = if ln_rest < -30.0 {
            ln_rest - 0.5 * ln_rest.exp()
        } else {
            ln_norm.ln()
        };
        entropy.add(ln_log1p_rest - ln_norm);

        NodeValues { ln_density, ln_var, ln_entropy: entropy.ln() }
    }
}

/// `ln |e^a - e^b|`.
fn ln_abs_diff(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let d = (lo - hi).exp();
    if d >= 1.0 {
        f64::NEG_INFINITY
    } else {
        hi + (-d).ln_1p()
    }
}

/// Integration windows (merged, sorted) and the trapezoid step.
fn layout(means: &[f64], probs: &[f64]) -> (Vec<(f64, f64)>, f64) {
    let mut windows: Vec<(f64, f64)> = Vec::new();
    let mut d_max: f64 = 0.0;
    for i in 0..means.len() - 1 {
        let (a, b) = (means[i], means[i + 1]);
        let d = b - a;
        d_max = d_max.max(d);
        let cross = if d > 0.0 {
            (0.5 * (a + b) + (probs[i] / probs[i + 1]).ln() / d).clamp(a, b)
        } else {
            a
        };
        // t^2/2 + t d/2 = WINDOW_DECAY
        let half = -0.5 * d + (0.25 * d * d + 2.0 * WINDOW_DECAY).sqrt();
        windows.push((cross - half, cross + half));
    }
    windows.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(windows.len());
    for w in windows {
        match merged.last_mut() {
            Some(last) if w.0 <= last.1 => last.1 = last.1.max(w.1),
            _ => merged.push(w),
        }
    }
    let step = STEP_FACTOR * if d_max > 2.0 { 2.0 / d_max } else { 1.0 };
    (merged, step)
}

/// Posterior moments of a discrete input at `snr > 0`.
pub(crate) fn log_moments(points: &[f64], probs: &[f64], snr: f64) -> Result<LogMoments> {
    debug_assert!(snr > 0.0 && snr.is_finite());
    let mut post = Posterior::new(points, probs, snr);
    let (windows, h) = layout(&post.means, probs);

    // coarse grid at offsets 0, h, 2h, ...; fine grid adds the midpoints
    let mut coarse = [LogSum::new(), LogSum::new(), LogSum::new()];
    let mut mids = [LogSum::new(), LogSum::new(), LogSum::new()];
    for &(lo, hi) in &windows {
        let n = ((hi - lo) / h).ceil() as usize;
        for i in 0..=n {
            let y = lo + i as f64 * h;
            accumulate(&mut coarse, post.eval(y));
            if i < n {
                accumulate(&mut mids, post.eval(y + 0.5 * h));
            }
        }
    }

    let names = ["mmse", "mmse derivative", "equivocation"];
    let mut out = [0.0; 3];
    for m in 0..3 {
        let ln_coarse = coarse[m].ln() + h.ln();
        let mut fine = coarse[m];
        fine.add(mids[m].ln());
        let ln_fine = fine.ln() + (0.5 * h).ln();
        let rel = (ln_fine - ln_coarse).exp_m1().abs();
        if !(rel <= REL_TOL) {
            return Err(Error::Accuracy {
                what: format!("{} at snr {snr}", names[m]),
                first: ln_coarse.exp(),
                second: ln_fine.exp(),
            });
        }
        out[m] = ln_fine;
    }
    Ok(LogMoments { ln_mmse: out[0], ln_neg_dmmse: out[1], ln_equivocation: out[2] })
}

fn accumulate(acc: &mut [LogSum; 3], v: NodeValues) {
    acc[0].add(v.ln_density + v.ln_var);
    acc[1].add(v.ln_density + 2.0 * v.ln_var);
    acc[2].add(v.ln_density + v.ln_entropy);
}

/// E[X | Y = y] for a discrete input.
pub(crate) fn conditional_mean(points: &[f64], probs: &[f64], y: f64, snr: f64) -> f64 {
    let amp = snr.sqrt();
    let ln_w: Vec<f64> = points
        .iter()
        .zip(probs)
        .map(|(s, p)| {
            let r = y - amp * s;
            p.ln() - 0.5 * r * r
        })
        .collect();
    let top = ln_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (s, lw) in points.iter().zip(&ln_w) {
        let w = (lw - top).exp();
        num += w * s;
        den += w;
    }
    num / den
}

/// Bits per nat.
pub(crate) const BITS: f64 = 1.0 / LN_2;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsum_matches_direct() {
        let xs = [-3.0, 0.5, -700.0, 2.0, 1.0];
        let mut acc = LogSum::new();
        for x in xs {
            acc.add(x);
        }
        let direct: f64 = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((acc.ln() - direct).abs() < 1e-14);
        assert_eq!(LogSum::new().ln(), f64::NEG_INFINITY);
    }

    #[test]
    fn ln_abs_diff_cases() {
        assert!((ln_abs_diff(2f64.ln(), 0.0) - 0.0).abs() < 1e-15);
        assert_eq!(ln_abs_diff(1.0, 1.0), f64::NEG_INFINITY);
        assert!((ln_abs_diff(f64::NEG_INFINITY, 0.0)).abs() < 1e-15);
    }

    #[test]
    fn windows_shrink_with_spacing() {
        let (w, h) = layout(&[-100.0, 100.0], &[0.5, 0.5]);
        assert_eq!(w.len(), 1);
        assert!(w[0].1 - w[0].0 < 2.0);
        assert!(h < 0.002);
        let (w, h) = layout(&[-0.01, 0.01], &[0.5, 0.5]);
        assert!(w[0].1 - w[0].0 > 20.0);
        assert_eq!(h, STEP_FACTOR);
    }

    #[test]
    fn bpsk_high_snr_stays_finite() {
        let m = log_moments(&[-1.0, 1.0], &[0.5, 0.5], 1e4).unwrap();
        // mmse ~ exp(-snr/2) up to polynomial factors
        assert!(m.ln_mmse < -4990.0 && m.ln_mmse > -5020.0, "{}", m.ln_mmse);
        assert!(m.ln_neg_dmmse < m.ln_mmse);
    }
}
