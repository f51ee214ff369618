//! Baselines, mutual-information scoring, energy sweeps, per-access traces
//! and complexity ensembles.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::allocation::{Allocation, Epoch, RunStats};
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::offline::{fsa_solve, nda_solve};
use crate::online::online_solve;
use crate::scenario::{generate, Arrival, GenerateParams, Scenario};
use crate::signal::{Constellation, TableConfig, TableSet};
use crate::waterflow::{classical_wf, mercury_level, solve_epoch, EpochProblem};

/// Achieved mutual information in bits over all accesses and streams.
///
/// Uses the table interpolation (exact evaluation above the table range).
pub fn evaluate_mi(sc: &Scenario, tables: &TableSet, alloc: &Allocation) -> Result<f64> {
    if tables.len() != sc.k || alloc.powers.len() != sc.k {
        return Err(Error::invalid("allocation, tables and scenario disagree on K"));
    }
    let mut total = 0.0;
    for (k, t) in tables.iter().enumerate() {
        for (g, p) in sc.gains[k].iter().zip(&alloc.powers[k]) {
            if *p > 0.0 {
                total += t.mi_at(g * p)?;
            }
        }
    }
    Ok(total)
}

/// Which per-pool solver a pool-by-pool baseline uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PbpInputs {
    /// Classical waterfilling, as if inputs were Gaussian.
    Gaussian,
    /// Mercury/waterfilling with the scenario's constellations.
    Tables,
}

/// Each pool spends exactly its own packet.
pub fn pbp_solve(sc: &Scenario, tables: &TableSet, inputs: PbpInputs) -> Result<Allocation> {
    sc.validate()?;
    let pools = sc.pools()?;
    let mut powers = vec![vec![0.0; sc.n]; sc.k];
    let mut epochs = Vec::with_capacity(pools.len());
    for p in &pools {
        let acc = p.accesses.clone();
        let gains: Vec<Vec<f64>> = sc.gains.iter().map(|r| r[acc.clone()].to_vec()).collect();
        let sol = match inputs {
            PbpInputs::Gaussian => classical_wf(&gains, p.energy, sc.ts)?,
            PbpInputs::Tables => solve_epoch(&EpochProblem {
                accesses: acc.clone().collect(),
                gains,
                tables: tables.to_vec(),
                budget: p.energy,
                ts: sc.ts,
            })?,
        };
        for (k, row) in sol.powers.iter().enumerate() {
            powers[k][acc.clone()].copy_from_slice(row);
        }
        epochs.push(Epoch { pools: p.index..p.index + 1, accesses: acc, water_level: sol.water_level });
    }
    Ok(Allocation { powers, epochs, stats: RunStats { hg_calls: pools.len() } })
}

/// Optimal allocation for Gaussian inputs on the same channel and arrivals.
pub fn dwf_solve(sc: &Scenario) -> Result<Allocation> {
    nda_solve(&sc.with_gaussian_inputs(), &TableSet::gaussian(sc.k))
}

/// Allocation strategies compared in sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Offline optimum (NDA).
    MwFlow,
    /// Flowing-window online allocation.
    Online,
    PbpHgwf,
    PbpWf,
    /// Gaussian-optimal allocation scored with the true inputs.
    Dwf,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [Strategy::MwFlow, Strategy::Online, Strategy::PbpHgwf, Strategy::PbpWf, Strategy::Dwf];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::MwFlow => "mwflow",
            Strategy::Online => "online",
            Strategy::PbpHgwf => "pbp-hgwf",
            Strategy::PbpWf => "pbp-wf",
            Strategy::Dwf => "dwf",
        }
    }

    pub fn solve(self, sc: &Scenario, tables: &TableSet, window: usize) -> Result<Allocation> {
        match self {
            Strategy::MwFlow => nda_solve(sc, tables),
            Strategy::Online => online_solve(sc, tables, window),
            Strategy::PbpHgwf => pbp_solve(sc, tables, PbpInputs::Tables),
            Strategy::PbpWf => pbp_solve(sc, tables, PbpInputs::Gaussian),
            Strategy::Dwf => dwf_solve(sc),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.label() == s)
            .ok_or_else(|| Error::invalid(format!("unknown strategy `{s}`")))
    }
}

/// Mean mutual information per strategy over an energy grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub energies: Vec<f64>,
    pub strategies: Vec<Strategy>,
    /// `mi[s][i]`: mean bits of `strategies[s]` at `energies[i]`.
    pub mi: Vec<Vec<f64>>,
}

impl SweepResult {
    pub fn curve(&self, s: Strategy) -> Option<&[f64]> {
        self.strategies.iter().position(|x| *x == s).map(|i| self.mi[i].as_slice())
    }

    /// Rows `energy,strategy,mi_bits`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["energy", "strategy", "mi_bits"])?;
        for (i, e) in self.energies.iter().enumerate() {
            for (s, curve) in self.strategies.iter().zip(&self.mi) {
                w.write_record([fmt_f64(*e), s.label().to_string(), fmt_f64(curve[i])])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs every strategy on the scenario generated from `base` with each total
/// energy and seed, averaging over seeds. Packets are rescaled between
/// energy points; arrival times and gains are fixed per seed.
pub fn sweep_energy(
    base: &GenerateParams,
    energies: &[f64],
    seeds: &[u64],
    strategies: &[Strategy],
    window: usize,
    cfg: TableConfig,
) -> Result<SweepResult> {
    if energies.is_empty() || seeds.is_empty() || strategies.is_empty() {
        return Err(Error::invalid("sweep needs energies, seeds and strategies"));
    }
    let tables = TableSet::build(&base.constellations, cfg)?;
    let jobs: Vec<(usize, u64)> = (0..energies.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let scores: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let sc = generate(&GenerateParams { total_energy: energies[i], seed, ..base.clone() })?;
            strategies
                .iter()
                .map(|s| evaluate_mi(&sc, &tables, &s.solve(&sc, &tables, window)?))
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut mi = vec![vec![0.0; energies.len()]; strategies.len()];
    for (&(i, _), row) in jobs.iter().zip(&scores) {
        for (s, v) in row.iter().enumerate() {
            mi[s][i] += v / seeds.len() as f64;
        }
    }
    Ok(SweepResult { energies: energies.to_vec(), strategies: strategies.to_vec(), mi })
}

/// Flowing window in `1..=max_window` with the highest mean mutual
/// information over `scenarios`, with that value.
pub fn best_window(scenarios: &[Scenario], tables: &TableSet, max_window: usize) -> Result<(usize, f64)> {
    if scenarios.is_empty() || max_window == 0 {
        return Err(Error::invalid("window search needs scenarios and max_window >= 1"));
    }
    let scores: Vec<f64> = (1..=max_window)
        .into_par_iter()
        .map(|w| {
            let mut total = 0.0;
            for sc in scenarios {
                total += evaluate_mi(sc, tables, &online_solve(sc, tables, w)?)?;
            }
            Ok(total / scenarios.len() as f64)
        })
        .collect::<Result<_>>()?;
    let (i, v) = scores.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
    Ok((i + 1, v))
}

/// One row of a per-access level trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// 1-based access.
    pub n: usize,
    /// 1-based stream.
    pub k: usize,
    pub inv_gain: f64,
    pub mercury_level: f64,
    pub water_level: f64,
    pub power: f64,
}

/// Inverse gain, mercury level, water level and power per access and
/// stream.
pub fn trace(sc: &Scenario, tables: &TableSet, alloc: &Allocation) -> Result<Vec<TraceRow>> {
    let levels = alloc.access_levels(sc.n);
    let mut rows = Vec::with_capacity(sc.n * sc.k);
    for (n, &w) in levels.iter().enumerate() {
        for k in 0..sc.k {
            let g = sc.gains[k][n];
            rows.push(TraceRow {
                n: n + 1,
                k: k + 1,
                inv_gain: 1.0 / g,
                mercury_level: mercury_level(&tables[k], g, w)?,
                water_level: w,
                power: alloc.powers[k][n],
            });
        }
    }
    Ok(rows)
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "k", "inv_gain", "mercury_level", "water_level", "power"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.k.to_string(),
            fmt_f64(r.inv_gain),
            fmt_f64(r.mercury_level),
            fmt_f64(r.water_level),
            fmt_f64(r.power),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Solver call counts of one ensemble run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComplexityRun {
    pub j: usize,
    pub seed: u64,
    pub nda_calls: usize,
    pub fsa_calls: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityEnsemble {
    pub runs: Vec<ComplexityRun>,
    /// Least-squares fit of `E[C_nda] = J (q + 1) - q`.
    pub q: f64,
    /// Least-squares fit of `E[C_fsa] = (J^2/2 + J/2 - 1) p + 1`.
    pub p: f64,
}

impl ComplexityEnsemble {
    /// Per J: (J, mean NDA calls, mean FSA calls).
    pub fn means(&self) -> Vec<(usize, f64, f64)> {
        let mut js: Vec<usize> = self.runs.iter().map(|r| r.j).collect();
        js.sort_unstable();
        js.dedup();
        js.into_iter()
            .map(|j| {
                let rs: Vec<&ComplexityRun> = self.runs.iter().filter(|r| r.j == j).collect();
                let m = rs.len() as f64;
                (
                    j,
                    rs.iter().map(|r| r.nda_calls as f64).sum::<f64>() / m,
                    rs.iter().map(|r| r.fsa_calls as f64).sum::<f64>() / m,
                )
            })
            .collect()
    }

    /// Rows `J,seed,alg,calls`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["J", "seed", "alg", "calls"])?;
        for r in &self.runs {
            w.write_record([r.j.to_string(), r.seed.to_string(), "nda".into(), r.nda_calls.to_string()])?;
            w.write_record([r.j.to_string(), r.seed.to_string(), "fsa".into(), r.fsa_calls.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Least-squares `q` for `C = J + q (J - 1)`.
pub fn fit_q(samples: &[(usize, f64)]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for &(j, c) in samples {
        let x = j as f64 - 1.0;
        num += (c - j as f64) * x;
        den += x * x;
    }
    num / den
}

/// Least-squares `p` for `C - 1 = (J^2/2 + J/2 - 1) p`.
pub fn fit_p(samples: &[(usize, f64)]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for &(j, c) in samples {
        let j = j as f64;
        let x = j * j / 2.0 + j / 2.0 - 1.0;
        num += (c - 1.0) * x;
        den += x * x;
    }
    num / den
}

/// `runs` seeded scenarios per J (seeds `base.seed + r`), each solved by NDA
/// and FSA.
pub fn complexity_ensemble(j_grid: &[usize], runs: usize, base: &GenerateParams, cfg: TableConfig) -> Result<ComplexityEnsemble> {
    if j_grid.is_empty() || runs == 0 {
        return Err(Error::invalid("complexity ensemble needs a J grid and runs >= 1"));
    }
    let tables = TableSet::build(&base.constellations, cfg)?;
    let jobs: Vec<(usize, u64)> = j_grid
        .iter()
        .flat_map(|&j| (0..runs as u64).map(move |r| (j, r)))
        .collect();
    let out: Vec<ComplexityRun> = jobs
        .par_iter()
        .map(|&(j, r)| {
            let seed = base.seed.wrapping_add(r);
            let sc = generate(&GenerateParams { packets: j, seed, ..base.clone() })?;
            let nda = nda_solve(&sc, &tables)?;
            let fsa = fsa_solve(&sc, &tables, None)?;
            Ok(ComplexityRun { j, seed, nda_calls: nda.stats.hg_calls, fsa_calls: fsa.stats.hg_calls })
        })
        .collect::<Result<_>>()?;
    let nda: Vec<(usize, f64)> = out.iter().map(|r| (r.j, r.nda_calls as f64)).collect();
    let fsa: Vec<(usize, f64)> = out.iter().map(|r| (r.j, r.fsa_calls as f64)).collect();
    Ok(ComplexityEnsemble { runs: out, q: fit_q(&nda), p: fit_p(&fsa) })
}

/// FSA call count when the constraints marked `true` in `broken` (the
/// transition from pool `j` to `j + 1`) fail and all others hold.
pub fn fsa_pattern_calls(broken: &[bool]) -> Result<usize> {
    let j = broken.len() + 1;
    let arrivals = (0..j).map(|i| Arrival { access: i + 1, joules: 1.0 }).collect();
    let sc = Scenario::new(1.0, vec![vec![1.0; j]], arrivals, vec![Constellation::gaussian()])?;
    let oracle = |s: usize, e: usize| !(s..e).any(|c| broken[c]);
    Ok(fsa_solve(&sc, &TableSet::gaussian(1), Some(&oracle))?.stats.hg_calls)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(energies: &[f64]) -> Scenario {
        let a = energies.iter().enumerate().map(|(j, e)| Arrival { access: j + 1, joules: *e }).collect();
        Scenario::new(1.0, vec![vec![1.0; energies.len()]], a, vec![Constellation::gaussian()]).unwrap()
    }

    #[test]
    fn zero_allocation_scores_zero() {
        let sc = flat(&[1.0, 1.0]);
        let t = TableSet::gaussian(1);
        let a = Allocation { powers: vec![vec![0.0; 2]], epochs: vec![], stats: RunStats::default() };
        assert_eq!(evaluate_mi(&sc, &t, &a).unwrap(), 0.0);
    }

    #[test]
    fn gaussian_score_is_closed_form() {
        let sc = flat(&[3.0, 1.0]);
        let t = TableSet::gaussian(1);
        let a = Allocation { powers: vec![vec![3.0, 1.0]], epochs: vec![], stats: RunStats::default() };
        let want = 0.5 * 4f64.log2() + 0.5 * 2f64.log2();
        assert!((evaluate_mi(&sc, &t, &a).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn pool_by_pool_spends_own_packet() {
        let sc = flat(&[3.0, 1.0]);
        let t = TableSet::gaussian(1);
        let a = pbp_solve(&sc, &t, PbpInputs::Gaussian).unwrap();
        assert_eq!(a.powers, vec![vec![3.0, 1.0]]);
        let opt = nda_solve(&sc, &t).unwrap();
        assert!(evaluate_mi(&sc, &t, &a).unwrap() <= evaluate_mi(&sc, &t, &opt).unwrap());
    }

    #[test]
    fn fits_recover_exact_models() {
        let q: Vec<(usize, f64)> = (2..10).map(|j| (j, j as f64 * 1.9 - 0.9)).collect();
        assert!((fit_q(&q) - 0.9).abs() < 1e-12);
        let p: Vec<(usize, f64)> = (2..10).map(|j| (j, (j * j) as f64 * 0.1 + j as f64 * 0.1 - 0.2 + 1.0)).collect();
        assert!((fit_p(&p) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn fsa_call_counts_three_pools() {
        assert_eq!(fsa_pattern_calls(&[false, false]).unwrap(), 1);
        assert_eq!(fsa_pattern_calls(&[false, true]).unwrap(), 3);
        assert_eq!(fsa_pattern_calls(&[true, false]).unwrap(), 4);
        assert_eq!(fsa_pattern_calls(&[true, true]).unwrap(), 6);
    }

    #[test]
    fn strategy_labels_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.label().parse::<Strategy>().unwrap(), s);
        }
        assert!("nope".parse::<Strategy>().is_err());
    }
}
