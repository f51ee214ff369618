//! Offline mercury/water-flowing: epoch search by merging (NDA) or forward
//! transition-pool search (FSA), plus a KKT verifier.

use std::ops::Range;

use crate::allocation::{Allocation, Epoch, RunStats};
use crate::error::{Error, Result};
use crate::scenario::{Arrival, Scenario};
use crate::signal::{ln_mmse_exact, TableSet};
use crate::waterflow::{classical_wf, solve_bounded, EpochProblem, EpochSolution, Unreachable};

const ECC_RTOL: f64 = 1e-9;

/// Accesses between two consecutive energy arrivals.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    /// 0-based pool index j.
    pub index: usize,
    /// 0-based access range.
    pub accesses: Range<usize>,
    /// Energy harvested at the start of the pool.
    pub energy: f64,
}

impl Pool {
    /// 1-based access at which the packet arrives.
    pub fn arrival_access(&self) -> usize {
        self.accesses.start + 1
    }
}

/// Splits accesses `1..=n` at the arrival accesses.
pub fn build_pools(arrivals: &[Arrival], n: usize) -> Result<Vec<Pool>> {
    match arrivals.first() {
        None => return Err(Error::invalid("no energy arrivals")),
        Some(a) if a.access != 1 => {
            return Err(Error::invalid(format!("first arrival must be at access 1, got {}", a.access)))
        }
        _ => {}
    }
    for (j, w) in arrivals.windows(2).enumerate() {
        if w[1].access <= w[0].access {
            return Err(Error::invalid(format!("arrival {} at access {} is not after {}", j + 2, w[1].access, w[0].access)));
        }
    }
    let last = arrivals.last().unwrap();
    if last.access > n {
        return Err(Error::invalid(format!("arrival at access {} beyond N = {n}", last.access)));
    }
    if let Some(a) = arrivals.iter().find(|a| !(a.joules >= 0.0 && a.joules.is_finite())) {
        return Err(Error::invalid(format!("packet energy {} must be finite and >= 0", a.joules)));
    }
    Ok(arrivals
        .iter()
        .enumerate()
        .map(|(j, a)| {
            let end = arrivals.get(j + 1).map_or(n, |b| b.access - 1);
            Pool { index: j, accesses: a.access - 1..end, energy: a.joules }
        })
        .collect())
}

struct Planner<'a> {
    sc: &'a Scenario,
    tables: &'a TableSet,
    pools: Vec<Pool>,
    calls: usize,
}

impl<'a> Planner<'a> {
    fn new(sc: &'a Scenario, tables: &'a TableSet) -> Result<Self> {
        sc.validate()?;
        if tables.len() != sc.k {
            return Err(Error::invalid(format!("{} tables for {} streams", tables.len(), sc.k)));
        }
        Ok(Planner { sc, tables, pools: sc.pools()?, calls: 0 })
    }

    fn accesses(&self, pools: &Range<usize>) -> Range<usize> {
        self.pools[pools.start].accesses.start..self.pools[pools.end - 1].accesses.end
    }

    fn solve(&mut self, pools: &Range<usize>) -> Result<EpochSolution> {
        self.solve_bounded(pools)?.map_err(|u| u.error)
    }

    fn solve_bounded(&mut self, pools: &Range<usize>) -> Result<Part> {
        let acc = self.accesses(pools);
        let p = EpochProblem {
            accesses: acc.clone().collect(),
            gains: self.sc.gains.iter().map(|row| row[acc.clone()].to_vec()).collect(),
            tables: self.tables.to_vec(),
            budget: self.pools[pools.clone()].iter().map(|p| p.energy).sum(),
            ts: self.sc.ts,
        };
        self.calls += 1;
        solve_bounded(&p)
    }

    /// Whether some interior energy-causality constraint of the epoch is
    /// broken by its own solution.
    fn violates_ecc(&self, pools: &Range<usize>, sol: &EpochSolution) -> bool {
        let slack = ECC_RTOL * self.sc.total_energy();
        let start = self.pools[pools.start].accesses.start;
        let (mut harvested, mut spent) = (0.0, 0.0);
        for p in &self.pools[pools.start..pools.end - 1] {
            harvested += p.energy;
            for n in p.accesses.clone() {
                spent += self.sc.ts * sol.powers.iter().map(|r| r[n - start]).sum::<f64>();
            }
            if spent > harvested + slack {
                return true;
            }
        }
        false
    }

    fn assemble(self, parts: Vec<(Range<usize>, EpochSolution)>) -> Allocation {
        let mut powers = vec![vec![0.0; self.sc.n]; self.sc.k];
        let mut epochs = Vec::with_capacity(parts.len());
        for (pools, sol) in parts {
            let acc = self.accesses(&pools);
            for (k, row) in sol.powers.iter().enumerate() {
                powers[k][acc.clone()].copy_from_slice(row);
            }
            epochs.push(Epoch { pools, accesses: acc, water_level: sol.water_level });
        }
        Allocation { powers, epochs, stats: RunStats { hg_calls: self.calls } }
    }
}

/// Merge-on-decrease: one epoch per pool, then repeatedly merge the first
/// adjacent pair whose level decreases and re-solve it.
///
/// A pool whose level exceeds the representable range still merges into a
/// right neighbour whose level lies below the last level known to underspend
/// it.
pub fn nda_solve(sc: &Scenario, tables: &TableSet) -> Result<Allocation> {
    let mut pl = Planner::new(sc, tables)?;
    let mut parts = Vec::with_capacity(pl.pools.len());
    for j in 0..pl.pools.len() {
        let sol = pl.solve_bounded(&(j..j + 1))?;
        parts.push((j..j + 1, sol));
    }
    loop {
        let mut merge = None;
        for m in 0..parts.len().saturating_sub(1) {
            match decreases(&parts[m].1, &parts[m + 1].1) {
                Some(true) => {
                    merge = Some(m);
                    break;
                }
                Some(false) => {}
                None => {
                    let i = if parts[m].1.is_err() { m } else { m + 1 };
                    return Err(parts.swap_remove(i).1.unwrap_err().error);
                }
            }
        }
        let Some(m) = merge else { break };
        let (right, _) = parts.remove(m + 1);
        let merged = parts[m].0.start..right.end;
        let sol = pl.solve_bounded(&merged)?;
        parts[m] = (merged, sol);
    }
    let mut solved = Vec::with_capacity(parts.len());
    for (pools, part) in parts {
        match part {
            Ok(sol) => solved.push((pools, sol)),
            Err(u) => return Err(u.error),
        }
    }
    Ok(pl.assemble(solved))
}

type Part = std::result::Result<EpochSolution, Unreachable>;

/// Whether the level falls from `a` to `b`; `None` when a level beyond range
/// makes that undecidable.
fn decreases(a: &Part, b: &Part) -> Option<bool> {
    match (a, b) {
        (Ok(x), Ok(y)) => Some(x.water_level > y.water_level),
        (Err(u), Ok(y)) if u.floor >= y.water_level => Some(true),
        (Ok(x), Err(u)) if x.water_level <= u.floor => Some(false),
        _ => None,
    }
}

/// Verdict hook for [`fsa_solve`]: `oracle(first, last)` says whether the
/// candidate epoch over pools `first..=last` (0-based) satisfies its energy
/// causality constraints.
pub type EccOracle<'o> = &'o dyn Fn(usize, usize) -> bool;

/// Forward search: try the longest remaining epoch, shrink it from the right
/// until its causality constraints hold, commit, continue after it.
///
/// With `oracle`, verdicts come from the oracle rather than the solution,
/// which only makes the call count meaningful.
pub fn fsa_solve(sc: &Scenario, tables: &TableSet, oracle: Option<EccOracle<'_>>) -> Result<Allocation> {
    let mut pl = Planner::new(sc, tables)?;
    let j_total = pl.pools.len();
    let mut parts = Vec::new();
    let mut s = 0;
    while s < j_total {
        let mut e = j_total;
        loop {
            let cand = s..e;
            let sol = pl.solve(&cand)?;
            let ok = e - s == 1
                || match oracle {
                    Some(f) => f(s, e - 1),
                    None => !pl.violates_ecc(&cand, &sol),
                };
            if ok {
                parts.push((cand, sol));
                s = e;
                break;
            }
            e -= 1;
        }
    }
    Ok(pl.assemble(parts))
}

/// Outcome of one KKT condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub passed: bool,
    /// Largest normalized violation seen (0 when none).
    pub worst: f64,
    /// First failing location, if any.
    pub failure: Option<String>,
}

impl Check {
    fn new() -> Self {
        Check { passed: true, worst: 0.0, failure: None }
    }

    fn record(&mut self, excess: f64, tol: f64, what: impl FnOnce() -> String) {
        self.worst = self.worst.max(excess);
        if excess > tol && self.passed {
            self.passed = false;
            self.failure = Some(what());
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    /// `lambda mmse(lambda sigma2) = 1/W` on active streams and
    /// `lambda W <= 1` on silent ones.
    pub stationarity: Check,
    /// Prefix energy causality, with an empty battery after the last pool.
    pub ecc: Check,
    /// Pool water levels never decrease.
    pub nondecreasing_levels: Check,
    /// Levels only rise after a pool that ends with an empty battery.
    pub level_changes: Check,
}

impl KktReport {
    pub fn passed(&self) -> bool {
        self.stationarity.passed && self.ecc.passed && self.nondecreasing_levels.passed && self.level_changes.passed
    }
}

/// Checks the sufficient optimality conditions of `alloc`.
///
/// Stationarity uses the exact mmse (not the interpolation table) and is
/// measured relatively, `|lambda mmse W - 1|`. Energy conditions are
/// measured against `tol` times the total harvested energy.
pub fn kkt_verify(sc: &Scenario, alloc: &Allocation, tol: f64) -> Result<KktReport> {
    sc.validate()?;
    if alloc.powers.len() != sc.k || alloc.powers.iter().any(|r| r.len() != sc.n) {
        return Err(Error::invalid(format!("allocation is not {}x{}", sc.k, sc.n)));
    }
    let pools = sc.pools()?;
    let levels = alloc.access_levels(sc.n);

    let mut stationarity = Check::new();
    for k in 0..sc.k {
        let c = &sc.constellations[k];
        for n in 0..sc.n {
            let (g, p, w) = (sc.gains[k][n], alloc.powers[k][n], levels[n]);
            let at = || format!("stream {} access {}", k + 1, n + 1);
            if !(p >= 0.0 && p.is_finite()) {
                stationarity.record(f64::INFINITY, tol, || format!("{}: power {p}", at()));
            } else if p > 0.0 {
                if w <= 0.0 {
                    stationarity.record(f64::INFINITY, tol, || format!("{}: power without water level", at()));
                    continue;
                }
                let r = (g.ln() + ln_mmse_exact(c, g * p)? + w.ln()).exp_m1().abs();
                stationarity.record(r, tol, || format!("{}: residual {r:e}", at()));
            } else {
                let r = g * w - 1.0;
                stationarity.record(r.max(0.0), tol, || format!("{}: silent but lambda W - 1 = {r:e}", at()));
            }
        }
    }

    let spent = alloc.access_energy(sc.ts);
    let total = sc.total_energy();
    let scale = total.max(f64::MIN_POSITIVE);
    let mut ecc = Check::new();
    let mut residual = Vec::with_capacity(pools.len());
    let (mut harvested, mut used) = (0.0, 0.0);
    for p in &pools {
        harvested += p.energy;
        used += spent[p.accesses.clone()].iter().sum::<f64>();
        let over = (used - harvested) / scale;
        ecc.record(over, tol, || format!("pool {}: spent {used} of {harvested}", p.index + 1));
        residual.push(harvested - used);
    }
    let left = residual.last().copied().unwrap_or(0.0) / scale;
    ecc.record(left.abs(), tol, || format!("battery holds {} after the last pool", left * scale));

    let pool_level: Vec<f64> = pools.iter().map(|p| levels[p.accesses.start]).collect();
    let mut nondecreasing = Check::new();
    let mut changes = Check::new();
    for j in 0..pools.len().saturating_sub(1) {
        let (a, b) = (pool_level[j], pool_level[j + 1]);
        let drop = (a - b) / a.max(f64::MIN_POSITIVE);
        nondecreasing.record(drop.max(0.0), tol, || format!("level falls from {a} to {b} after pool {}", j + 1));
        if b > a * (1.0 + tol) {
            let stored = residual[j] / scale;
            changes.record(stored.abs(), tol, || {
                format!("level rises after pool {} with {} J left in the battery", j + 1, residual[j])
            });
        }
    }
    Ok(KktReport { stationarity, ecc, nondecreasing_levels: nondecreasing, level_changes: changes })
}

/// Gaussian-input directional waterfilling, computed independently of the
/// epoch solvers: from each start pool, the epoch ends at the last pool
/// attaining the lowest cumulative waterfilling level.
pub fn directional_waterfilling(sc: &Scenario) -> Result<Allocation> {
    sc.validate()?;
    let pools = sc.pools()?;
    let mut powers = vec![vec![0.0; sc.n]; sc.k];
    let mut epochs = Vec::new();
    let mut calls = 0;
    let mut s = 0;
    while s < pools.len() {
        let mut best: Option<(usize, EpochSolution)> = None;
        let mut budget = 0.0;
        for e in s..pools.len() {
            budget += pools[e].energy;
            let acc = pools[s].accesses.start..pools[e].accesses.end;
            let gains: Vec<Vec<f64>> = sc.gains.iter().map(|r| r[acc.clone()].to_vec()).collect();
            let sol = classical_wf(&gains, budget, sc.ts)?;
            calls += 1;
            let lower = match &best {
                None => true,
                Some((_, b)) => sol.water_level <= b.water_level * (1.0 + 1e-12),
            };
            if lower {
                best = Some((e, sol));
            }
        }
        let (e, sol) = best.unwrap();
        let acc = pools[s].accesses.start..pools[e].accesses.end;
        for (k, row) in sol.powers.iter().enumerate() {
            powers[k][acc.clone()].copy_from_slice(row);
        }
        epochs.push(Epoch { pools: s..e + 1, accesses: acc, water_level: sol.water_level });
        s = e + 1;
    }
    Ok(Allocation { powers, epochs, stats: RunStats { hg_calls: calls } })
}
