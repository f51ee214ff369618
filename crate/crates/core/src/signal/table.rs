//! Tabulated MMSE, its inverse, mutual information and the mercury factor.
//!
//! Grid: `snr = 0` plus log-spaced points from `1e-3` (or `snr_max / 10` if
//! smaller) to `snr_max`. The table keeps `ln mmse` and `ln(-mmse')` at each
//! node, so every interpolant is a cubic Hermite with exact end slopes:
//!
//! * first interval `[0, snr_1]`: linear coordinates;
//! * elsewhere: `ln snr` against `ln mmse` (forward and inverse) and
//!   `ln snr` against mutual information, whose slope follows from the
//!   I-MMSE relation.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::ops::Deref;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::quadrature::BITS;
use super::{moments, mi_from_equivocation, Constellation};
use crate::error::{Error, Result};
use crate::fmt_f64;

const LOW_ANCHOR: f64 = 1e-3;

/// Grid parameters of an [`MmseTable`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableConfig {
    pub snr_max: f64,
    pub n_points: usize,
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig { snr_max: 1e4, n_points: 2048 }
    }
}

/// Monotone `snr -> (mmse, mi)` grid for one constellation.
#[derive(Debug, Clone)]
pub struct MmseTable {
    constellation: Constellation,
    snr: Vec<f64>,
    ln_mmse: Vec<f64>,
    ln_neg_dmmse: Vec<f64>,
    mi_bits: Vec<f64>,
}

fn grid(cfg: TableConfig) -> Result<Vec<f64>> {
    if !(cfg.snr_max.is_finite() && cfg.snr_max > 0.0) {
        return Err(Error::invalid(format!("snr_max must be positive, got {}", cfg.snr_max)));
    }
    if cfg.n_points < 64 {
        return Err(Error::invalid(format!("table needs at least 64 points, got {}", cfg.n_points)));
    }
    let lo = LOW_ANCHOR.min(cfg.snr_max / 10.0);
    let (l0, l1) = (lo.ln(), cfg.snr_max.ln());
    let m = cfg.n_points - 1;
    let mut snr = Vec::with_capacity(cfg.n_points);
    snr.push(0.0);
    for i in 0..m {
        snr.push((l0 + (l1 - l0) * i as f64 / (m - 1) as f64).exp());
    }
    *snr.last_mut().unwrap() = cfg.snr_max;
    Ok(snr)
}

/// Builds the table of `c` over `[0, snr_max]` with `n_points` nodes.
pub fn build_table(c: &Constellation, snr_max: f64, n_points: usize) -> Result<MmseTable> {
    let snr = grid(TableConfig { snr_max, n_points })?;
    let n = snr.len();
    let mut ln_mmse = Vec::with_capacity(n);
    let mut ln_neg_dmmse = Vec::with_capacity(n);
    let mut mi_bits = Vec::with_capacity(n);
    match c.support() {
        None => {
            for &s in &snr {
                ln_mmse.push(-s.ln_1p());
                ln_neg_dmmse.push(-2.0 * s.ln_1p());
                mi_bits.push(0.5 * s.ln_1p() * BITS);
            }
        }
        Some((points, probs)) => {
            let h = c.entropy_bits();
            for &s in &snr {
                let m = moments(points, probs, s)?;
                ln_mmse.push(m.ln_mmse.min(0.0));
                ln_neg_dmmse.push(m.ln_neg_dmmse);
                mi_bits.push(mi_from_equivocation(h, m.ln_equivocation));
            }
        }
    }
    let table = MmseTable { constellation: c.clone(), snr, ln_mmse, ln_neg_dmmse, mi_bits };
    table.check_monotone()?;
    Ok(table)
}

fn hermite(x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64, x: f64) -> f64 {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let (t2, t3) = (t * t, t * t * t);
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0
        + (t3 - 2.0 * t2 + t) * h * d0
        + (-2.0 * t3 + 3.0 * t2) * y1
        + (t3 - t2) * h * d1
}

/// Fritsch-Carlson limiter: adjusts end slopes so the cubic is monotone.
fn monotone_slopes(x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64) -> (f64, f64) {
    let delta = (y1 - y0) / (x1 - x0);
    if delta == 0.0 {
        return (0.0, 0.0);
    }
    let (mut a, mut b) = (d0 / delta, d1 / delta);
    if a < 0.0 {
        a = 0.0;
    }
    if b < 0.0 {
        b = 0.0;
    }
    let r = a * a + b * b;
    if r > 9.0 {
        let tau = 3.0 / r.sqrt();
        a *= tau;
        b *= tau;
    }
    (a * delta, b * delta)
}

fn monotone_hermite(x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64, x: f64) -> f64 {
    let (d0, d1) = monotone_slopes(x0, x1, y0, y1, d0, d1);
    hermite(x0, x1, y0, y1, d0, d1, x)
}

impl MmseTable {
    fn check_monotone(&self) -> Result<()> {
        let bad: Vec<usize> = (0..self.len() - 1)
            .filter(|&i| !(self.ln_mmse[i + 1] < self.ln_mmse[i]))
            .collect();
        if !bad.is_empty() {
            return Err(Error::TableBuild(format!(
                "{}: mmse not strictly decreasing at indices {:?}",
                self.label(),
                &bad[..bad.len().min(16)]
            )));
        }
        let bad: Vec<usize> = (0..self.len() - 1)
            .filter(|&i| self.mi_bits[i + 1] < self.mi_bits[i])
            .collect();
        if !bad.is_empty() {
            return Err(Error::TableBuild(format!(
                "{}: mutual information decreasing at indices {:?}",
                self.label(),
                &bad[..bad.len().min(16)]
            )));
        }
        Ok(())
    }

    pub fn label(&self) -> &str {
        self.constellation.label()
    }

    pub fn constellation(&self) -> &Constellation {
        &self.constellation
    }

    pub fn is_gaussian(&self) -> bool {
        self.constellation.is_gaussian()
    }

    pub fn len(&self) -> usize {
        self.snr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snr.is_empty()
    }

    pub fn snr_grid(&self) -> &[f64] {
        &self.snr
    }

    pub fn snr_max(&self) -> f64 {
        *self.snr.last().unwrap()
    }

    /// Tabulated mmse values. Entries below the smallest positive double
    /// read as 0; use [`MmseTable::ln_mmse_values`] for the exact values.
    pub fn mmse_values(&self) -> Vec<f64> {
        self.ln_mmse.iter().map(|v| v.exp()).collect()
    }

    pub fn ln_mmse_values(&self) -> &[f64] {
        &self.ln_mmse
    }

    pub fn mi_values(&self) -> &[f64] {
        &self.mi_bits
    }

    /// `ln mmse(snr_max)`: inversion below this level is a range error.
    pub fn ln_floor(&self) -> f64 {
        *self.ln_mmse.last().unwrap()
    }

    fn slope_ln(&self, i: usize) -> f64 {
        // d ln mmse / d ln snr
        -self.snr[i] * (self.ln_neg_dmmse[i] - self.ln_mmse[i]).exp()
    }

    /// mmse at `snr` by interpolation; exact evaluation beyond `snr_max`.
    pub fn mmse_at(&self, snr: f64) -> Result<f64> {
        if !(snr >= 0.0) || snr.is_infinite() {
            return Err(Error::invalid(format!("snr must be finite and >= 0, got {snr}")));
        }
        if self.is_gaussian() {
            return Ok(1.0 / (1.0 + snr));
        }
        if snr > self.snr_max() {
            return super::mmse_exact(&self.constellation, snr);
        }
        let i = self.snr.partition_point(|&s| s <= snr).clamp(1, self.len() - 1) - 1;
        if i == 0 {
            let m1 = self.ln_mmse[1].exp();
            let d0 = -self.ln_neg_dmmse[0].exp();
            let d1 = -self.ln_neg_dmmse[1].exp();
            return Ok(monotone_hermite(0.0, self.snr[1], 1.0, m1, d0, d1, snr).clamp(0.0, 1.0));
        }
        let v = monotone_hermite(
            self.snr[i].ln(),
            self.snr[i + 1].ln(),
            self.ln_mmse[i],
            self.ln_mmse[i + 1],
            self.slope_ln(i),
            self.slope_ln(i + 1),
            snr.ln(),
        );
        Ok(v.exp())
    }

    /// Mutual information in bits at `snr`.
    pub fn mi_at(&self, snr: f64) -> Result<f64> {
        if !(snr >= 0.0) || snr.is_infinite() {
            return Err(Error::invalid(format!("snr must be finite and >= 0, got {snr}")));
        }
        if self.is_gaussian() {
            return Ok(0.5 * snr.ln_1p() * BITS);
        }
        if snr > self.snr_max() {
            return super::mutual_information(&self.constellation, snr);
        }
        let i = self.snr.partition_point(|&s| s <= snr).clamp(1, self.len() - 1) - 1;
        let half = 0.5 * BITS;
        let v = if i == 0 {
            let d0 = half * self.ln_mmse[0].exp();
            let d1 = half * self.ln_mmse[1].exp();
            monotone_hermite(0.0, self.snr[1], self.mi_bits[0], self.mi_bits[1], d0, d1, snr)
        } else {
            let d = |j: usize| half * self.snr[j] * self.ln_mmse[j].exp();
            monotone_hermite(
                self.snr[i].ln(),
                self.snr[i + 1].ln(),
                self.mi_bits[i],
                self.mi_bits[i + 1],
                d(i),
                d(i + 1),
                snr.ln(),
            )
        };
        Ok(v.max(0.0))
    }

    /// snr at which the mmse equals `psi`.
    pub fn mmse_inverse(&self, psi: f64) -> Result<f64> {
        if !(psi > 0.0) {
            return Err(Error::Range(format!("mmse inverse needs psi > 0, got {psi}")));
        }
        if psi >= 1.0 {
            return Ok(0.0);
        }
        if self.is_gaussian() {
            return Ok(1.0 / psi - 1.0);
        }
        let v = psi.ln();
        if v < self.ln_floor() {
            return Err(Error::Range(format!(
                "{}: mmse {psi:e} is below the table floor at snr {}; increase snr_max",
                self.label(),
                self.snr_max()
            )));
        }
        // ln_mmse is decreasing: first index with ln_mmse <= v
        let j = self.ln_mmse.partition_point(|&m| m > v).clamp(1, self.len() - 1);
        let i = j - 1;
        if i == 0 {
            let m1 = self.ln_mmse[1].exp();
            let d0 = -1.0 / self.ln_neg_dmmse[0].exp();
            let d1 = -1.0 / self.ln_neg_dmmse[1].exp();
            let s = monotone_hermite(1.0, m1, 0.0, self.snr[1], d0, d1, psi);
            return Ok(s.clamp(0.0, self.snr[1]));
        }
        let u = monotone_hermite(
            self.ln_mmse[i],
            self.ln_mmse[j],
            self.snr[i].ln(),
            self.snr[j].ln(),
            1.0 / self.slope_ln(i),
            1.0 / self.slope_ln(j),
            v,
        );
        Ok(u.exp().clamp(self.snr[i], self.snr[j]))
    }

    /// Mercury factor `G(psi) = 1/psi - mmse^{-1}(psi)` for `psi < 1`, and 1
    /// otherwise.
    pub fn mercury_factor(&self, psi: f64) -> Result<f64> {
        if !(psi > 0.0) {
            return Err(Error::Range(format!("mercury factor needs psi > 0, got {psi}")));
        }
        if psi >= 1.0 || self.is_gaussian() {
            return Ok(1.0);
        }
        Ok(1.0 / psi - self.mmse_inverse(psi)?)
    }

    /// Inspection CSV with columns `snr,mmse,mi`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["snr", "mmse", "mi"])?;
        for i in 0..self.len() {
            w.write_record([
                fmt_f64(self.snr[i]),
                fmt_f64(self.ln_mmse[i].exp()),
                fmt_f64(self.mi_bits[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Lossless cache CSV with columns `snr,ln_mmse,ln_neg_dmmse,mi`.
    pub fn write_cache<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["snr", "ln_mmse", "ln_neg_dmmse", "mi"])?;
        for i in 0..self.len() {
            w.write_record([
                fmt_f64(self.snr[i]),
                fmt_f64(self.ln_mmse[i]),
                fmt_f64(self.ln_neg_dmmse[i]),
                fmt_f64(self.mi_bits[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a cache written by [`MmseTable::write_cache`] for `c`.
    pub fn read_cache<R: Read>(c: &Constellation, input: R) -> Result<MmseTable> {
        let mut r = csv::Reader::from_reader(input);
        let (mut snr, mut ln_mmse, mut ln_neg_dmmse, mut mi_bits) = (vec![], vec![], vec![], vec![]);
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::TableBuild(format!("cache row {}: bad column {k}", line + 1)))
            };
            snr.push(field(0)?);
            ln_mmse.push(field(1)?);
            ln_neg_dmmse.push(field(2)?);
            mi_bits.push(field(3)?);
        }
        if snr.len() < 64 || snr[0] != 0.0 {
            return Err(Error::TableBuild("cache is truncated or malformed".into()));
        }
        let t = MmseTable { constellation: c.clone(), snr, ln_mmse, ln_neg_dmmse, mi_bits };
        t.check_monotone()?;
        Ok(t)
    }
}

/// One shared table per stream.
#[derive(Debug, Clone)]
pub struct TableSet(Vec<Arc<MmseTable>>);

type CacheKey = (String, Vec<u64>, u64, usize);

fn cache() -> &'static Mutex<HashMap<CacheKey, Arc<MmseTable>>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Arc<MmseTable>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn key(c: &Constellation, cfg: TableConfig) -> CacheKey {
    let bits = match c.support() {
        None => vec![],
        Some((p, q)) => p.iter().chain(q).map(|v| v.to_bits()).collect(),
    };
    (c.label().to_string(), bits, cfg.snr_max.to_bits(), cfg.n_points)
}

impl TableSet {
    pub fn new(tables: Vec<Arc<MmseTable>>) -> Self {
        TableSet(tables)
    }

    /// Tables for each stream's constellation. Tables are memoized per
    /// process; distinct constellations are built in parallel.
    pub fn build(constellations: &[Constellation], cfg: TableConfig) -> Result<Self> {
        let mut missing: Vec<&Constellation> = Vec::new();
        {
            let cached = cache().lock().unwrap();
            for c in constellations {
                if !cached.contains_key(&key(c, cfg)) && !missing.iter().any(|m| key(m, cfg) == key(c, cfg)) {
                    missing.push(c);
                }
            }
        }
        let built: Vec<Result<MmseTable>> = missing
            .par_iter()
            .map(|c| build_table(c, cfg.snr_max, cfg.n_points))
            .collect();
        {
            let mut cached = cache().lock().unwrap();
            for t in built {
                let t = t?;
                cached.insert(key(&t.constellation, cfg), Arc::new(t));
            }
        }
        let cached = cache().lock().unwrap();
        Ok(TableSet(constellations.iter().map(|c| cached[&key(c, cfg)].clone()).collect()))
    }

    /// `k` Gaussian streams.
    pub fn gaussian(k: usize) -> Self {
        let t = Arc::new(build_table(&Constellation::gaussian(), 1e4, 64).expect("gaussian table"));
        TableSet(vec![t; k])
    }

    /// Inserts an externally loaded table into the process-wide memo.
    pub fn remember(table: MmseTable, cfg: TableConfig) -> Arc<MmseTable> {
        let t = Arc::new(table);
        cache().lock().unwrap().insert(key(&t.constellation, cfg), t.clone());
        t
    }

    /// Whether the memo already holds a table for `c`.
    pub fn is_cached(c: &Constellation, cfg: TableConfig) -> bool {
        cache().lock().unwrap().contains_key(&key(c, cfg))
    }
}

impl Deref for TableSet {
    type Target = [Arc<MmseTable>];
    fn deref(&self) -> &Self::Target {
        &self.0
    }
}
