//! Mercury/waterfilling over one epoch: a single water level `W` shared by
//! every stream and access, powers `sigma2 = (1/lambda) mmse^{-1}(min{1, 1/(W lambda)})`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::signal::MmseTable;

const ENERGY_RTOL: f64 = 1e-9;
const MAX_ITER: usize = 200;

/// Power of a stream with gain `gain` under water level `level`.
///
/// Zero when `level * gain <= 1`.
pub fn power_at_level(table: &MmseTable, gain: f64, level: f64) -> Result<f64> {
    if !(gain > 0.0 && gain.is_finite()) {
        return Err(Error::invalid(format!("gain must be positive and finite, got {gain}")));
    }
    if !(level >= 0.0) {
        return Err(Error::invalid(format!("water level must be >= 0, got {level}")));
    }
    let wl = level * gain;
    if wl <= 1.0 {
        return Ok(0.0);
    }
    if table.is_gaussian() {
        return Ok(level - 1.0 / gain);
    }
    let psi = 1.0 / wl;
    if psi == 0.0 {
        return Err(Error::Range(format!(
            "{}: water level {level:e} leaves the floating-point range (mmse below 1e-308)",
            table.label()
        )));
    }
    Ok(table.mmse_inverse(psi)? / gain)
}

/// Mercury level `H = G(1/(W lambda)) / lambda`; the power is `(W - H)^+`.
pub fn mercury_level(table: &MmseTable, gain: f64, level: f64) -> Result<f64> {
    if level * gain <= 1.0 {
        return Ok(1.0 / gain);
    }
    Ok(table.mercury_factor(1.0 / (level * gain))? / gain)
}

/// One epoch: the accesses it spans, per-stream gains over those accesses and
/// the energy to spend.
#[derive(Debug, Clone)]
pub struct EpochProblem {
    /// Channel-access indices (0-based) covered by the epoch.
    pub accesses: Vec<usize>,
    /// `gains[k][i]` is the gain of stream `k` at `accesses[i]`.
    pub gains: Vec<Vec<f64>>,
    pub tables: Vec<Arc<MmseTable>>,
    pub budget: f64,
    pub ts: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSolution {
    pub water_level: f64,
    /// `powers[k][i]`, same layout as [`EpochProblem::gains`].
    pub powers: Vec<Vec<f64>>,
    pub spent_energy: f64,
    pub hg_calls: usize,
}

impl EpochProblem {
    fn validate(&self) -> Result<()> {
        if self.gains.len() != self.tables.len() {
            return Err(Error::invalid(format!(
                "{} gain rows for {} streams",
                self.gains.len(),
                self.tables.len()
            )));
        }
        if self.gains.is_empty() || self.accesses.is_empty() {
            return Err(Error::invalid("epoch has no streams or no accesses"));
        }
        for (k, row) in self.gains.iter().enumerate() {
            if row.len() != self.accesses.len() {
                return Err(Error::invalid(format!("stream {k}: {} gains for {} accesses", row.len(), self.accesses.len())));
            }
            if let Some(g) = row.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
                return Err(Error::invalid(format!("stream {k}: gain {g} is not positive and finite")));
            }
        }
        if !(self.budget >= 0.0 && self.budget.is_finite()) {
            return Err(Error::invalid(format!("budget must be finite and >= 0, got {}", self.budget)));
        }
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(Error::invalid(format!("ts must be positive, got {}", self.ts)));
        }
        Ok(())
    }

    fn powers_at(&self, level: f64) -> Result<Vec<Vec<f64>>> {
        self.gains
            .iter()
            .zip(&self.tables)
            .map(|(row, t)| row.iter().map(|&g| power_at_level(t, g, level)).collect())
            .collect()
    }

    fn energy(&self, powers: &[Vec<f64>]) -> f64 {
        self.ts * powers.iter().flatten().sum::<f64>()
    }

    /// Spent energy at `level`, `None` when the level leaves the table range.
    fn spent_at(&self, level: f64) -> Option<f64> {
        let mut total = 0.0;
        for (row, t) in self.gains.iter().zip(&self.tables) {
            for &g in row {
                total += power_at_level(t, g, level).ok()?;
            }
        }
        Some(self.ts * total)
    }

    fn range_culprit(&self, level: f64) -> Error {
        for (k, (row, t)) in self.gains.iter().zip(&self.tables).enumerate() {
            for (i, &g) in row.iter().enumerate() {
                if let Err(e) = power_at_level(t, g, level) {
                    return Error::Range(format!(
                        "budget {} unattainable: stream {} ({}) at access {} saturates: {e}",
                        self.budget,
                        k + 1,
                        t.label(),
                        self.accesses[i] + 1,
                    ));
                }
            }
        }
        Error::Range(format!("budget {} unattainable within table range", self.budget))
    }
}

/// An epoch whose budget needs a water level beyond what the tables (or
/// f64) represent. Levels up to `floor` are known to spend less.
#[derive(Debug)]
pub(crate) struct Unreachable {
    pub floor: f64,
    pub error: Error,
}

/// Solves one epoch by bisection on the water level.
///
/// Stops as soon as `budget (1 - 1e-9) <= spent <= budget`, so the returned
/// allocation never spends more than the budget.
pub fn solve_epoch(p: &EpochProblem) -> Result<EpochSolution> {
    solve_bounded(p)?.map_err(|u| u.error)
}

pub(crate) fn solve_bounded(p: &EpochProblem) -> Result<std::result::Result<EpochSolution, Unreachable>> {
    p.validate()?;
    if p.budget == 0.0 {
        let powers = p.gains.iter().map(|r| vec![0.0; r.len()]).collect();
        return Ok(Ok(EpochSolution { water_level: 0.0, powers, spent_energy: 0.0, hg_calls: 1 }));
    }
    let target_lo = p.budget * (1.0 - ENERGY_RTOL);
    let accept = |spent: f64| spent >= target_lo && spent <= p.budget;

    // every stream is silent up to min 1/lambda; some still are below max 1/lambda
    let (mut lo, mut hi) = p
        .gains
        .iter()
        .flatten()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &g| (a.min(1.0 / g), b.max(1.0 / g)));
    loop {
        match p.spent_at(hi) {
            Some(s) if accept(s) => return finish(p, hi).map(Ok),
            Some(s) if s > p.budget => break,
            Some(_) => {
                lo = hi;
                hi *= 4.0;
            }
            None => break,
        }
        if !hi.is_finite() {
            return Ok(Err(Unreachable { floor: lo, error: p.range_culprit(hi) }));
        }
    }
    for _ in 0..MAX_ITER {
        // geometric steps while the bracket spans orders of magnitude
        let mid = if hi > 2.0 * lo { lo * (hi / lo).sqrt() } else { 0.5 * (lo + hi) };
        if mid <= lo || mid >= hi {
            return blend(p, lo, hi);
        }
        match p.spent_at(mid) {
            Some(s) if accept(s) => return finish(p, mid).map(Ok),
            Some(s) if s < target_lo => lo = mid,
            _ => hi = mid,
        }
    }
    Err(Error::Accuracy {
        what: format!("water level bisection for budget {}", p.budget),
        first: lo,
        second: hi,
    })
}

/// The level is pinned between two adjacent doubles but the budget falls
/// between their energies: mix the two allocations.
fn blend(p: &EpochProblem, lo: f64, hi: f64) -> Result<std::result::Result<EpochSolution, Unreachable>> {
    if p.spent_at(hi).is_none() {
        return Ok(Err(Unreachable { floor: lo, error: p.range_culprit(hi) }));
    }
    let (a, b) = (p.powers_at(lo)?, p.powers_at(hi)?);
    let (ea, eb) = (p.energy(&a), p.energy(&b));
    let goal = p.budget * (1.0 - 0.5 * ENERGY_RTOL);
    let theta = if eb > ea { ((goal - ea) / (eb - ea)).clamp(0.0, 1.0) } else { 0.0 };
    let powers: Vec<Vec<f64>> = a
        .iter()
        .zip(&b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x + theta * (y - x)).collect())
        .collect();
    let spent_energy = p.energy(&powers);
    let water_level = if theta < 0.5 { lo } else { hi };
    Ok(Ok(EpochSolution { water_level, powers, spent_energy, hg_calls: 1 }))
}

fn finish(p: &EpochProblem, level: f64) -> Result<EpochSolution> {
    let powers = p.powers_at(level)?;
    let spent_energy = p.energy(&powers);
    Ok(EpochSolution { water_level: level, powers, spent_energy, hg_calls: 1 })
}

/// Gaussian-input waterfilling by the exact sorted-gain method.
///
/// `gains[k][i]` as in [`EpochProblem`]; powers are `(W - 1/lambda)^+`.
pub fn classical_wf(gains: &[Vec<f64>], budget: f64, ts: f64) -> Result<EpochSolution> {
    let flat: Vec<f64> = gains.iter().flatten().copied().collect();
    if flat.is_empty() {
        return Err(Error::invalid("classical waterfilling needs at least one gain"));
    }
    if let Some(g) = flat.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
        return Err(Error::invalid(format!("gain {g} is not positive and finite")));
    }
    if !(budget >= 0.0 && budget.is_finite()) || !(ts > 0.0 && ts.is_finite()) {
        return Err(Error::invalid(format!("need budget >= 0 and ts > 0, got {budget}, {ts}")));
    }
    let level = if budget == 0.0 {
        0.0
    } else {
        let mut inv: Vec<f64> = flat.iter().map(|g| 1.0 / g).collect();
        inv.sort_by(f64::total_cmp);
        let p = budget / ts;
        let mut acc = 0.0;
        let mut level = 0.0;
        for m in 0..inv.len() {
            acc += inv[m];
            level = (p + acc) / (m + 1) as f64;
            if m + 1 == inv.len() || level <= inv[m + 1] {
                break;
            }
        }
        level
    };
    let powers: Vec<Vec<f64>> = gains
        .iter()
        .map(|row| row.iter().map(|g| (level - 1.0 / g).max(0.0)).collect())
        .collect();
    let spent_energy = ts * powers.iter().flatten().sum::<f64>();
    Ok(EpochSolution { water_level: level, powers, spent_energy, hg_calls: 1 })
}
