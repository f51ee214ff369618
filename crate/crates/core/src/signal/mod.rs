//! Input constellations and their estimation-theoretic functions: conditional
//! mean, MMSE and its derivative, mutual information, and the tabulated
//! inverse MMSE / mercury factor used by the allocators.
//!
//! snr is linear throughout; mutual information is in bits.

mod constellation;
mod quadrature;
mod table;

pub use constellation::{Constellation, BUILTIN_NAMES};
pub use table::{build_table, MmseTable, TableConfig, TableSet};

use crate::error::{Error, Result};
use quadrature::{log_moments, LogMoments, BITS};

fn check_snr(snr: f64) -> Result<()> {
    if !snr.is_finite() || snr < 0.0 {
        return Err(Error::invalid(format!("snr must be finite and >= 0, got {snr}")));
    }
    Ok(())
}

/// Moments at a strictly positive snr, or the exact snr = 0 values.
pub(crate) fn moments(points: &[f64], probs: &[f64], snr: f64) -> Result<LogMoments> {
    if snr == 0.0 {
        // prior variance is 1 and the posterior equals the prior
        let h: f64 = -probs.iter().map(|p| p * p.ln()).sum::<f64>();
        return Ok(LogMoments { ln_mmse: 0.0, ln_neg_dmmse: 0.0, ln_equivocation: h.ln() });
    }
    log_moments(points, probs, snr)
}

/// Conditional mean estimate `E[x | sqrt(snr) x + n = y]`.
pub fn conditional_mean(c: &Constellation, y: f64, snr: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::invalid(format!("observation must be finite, got {y}")));
    }
    check_snr(snr)?;
    Ok(match c.support() {
        None => snr.sqrt() / (1.0 + snr) * y,
        Some((points, probs)) => quadrature::conditional_mean(points, probs, y, snr),
    })
}

/// `mmse(snr) = E[(x - E[x|y])^2]`, clamped to [0, 1].
pub fn mmse_exact(c: &Constellation, snr: f64) -> Result<f64> {
    check_snr(snr)?;
    match c.support() {
        None => Ok(1.0 / (1.0 + snr)),
        Some((points, probs)) => Ok(moments(points, probs, snr)?.ln_mmse.exp().clamp(0.0, 1.0)),
    }
}

/// `ln mmse(snr)`, finite even where the mmse underflows.
pub(crate) fn ln_mmse_exact(c: &Constellation, snr: f64) -> Result<f64> {
    check_snr(snr)?;
    match c.support() {
        None => Ok(-snr.ln_1p()),
        Some((points, probs)) => Ok(moments(points, probs, snr)?.ln_mmse.min(0.0)),
    }
}

/// `d mmse / d snr = -E[var(x|y)^2]`.
pub fn mmse_derivative(c: &Constellation, snr: f64) -> Result<f64> {
    check_snr(snr)?;
    match c.support() {
        None => Ok(-1.0 / ((1.0 + snr) * (1.0 + snr))),
        Some((points, probs)) => Ok(-moments(points, probs, snr)?.ln_neg_dmmse.exp()),
    }
}

/// `I(x; sqrt(snr) x + n)` in bits.
pub fn mutual_information(c: &Constellation, snr: f64) -> Result<f64> {
    check_snr(snr)?;
    match c.support() {
        None => Ok(0.5 * snr.ln_1p() * BITS),
        Some((points, probs)) => {
            let m = moments(points, probs, snr)?;
            Ok(mi_from_equivocation(c.entropy_bits(), m.ln_equivocation))
        }
    }
}

pub(crate) fn mi_from_equivocation(entropy_bits: f64, ln_equivocation: f64) -> f64 {
    (entropy_bits - ln_equivocation.exp() * BITS).max(0.0)
}
