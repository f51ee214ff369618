//! Causal flowing-window allocation: re-plan at every channel change or
//! energy arrival using only the battery content and the current gains.

use crate::allocation::{Allocation, Epoch, RunStats};
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::signal::TableSet;
use crate::waterflow::{solve_epoch, EpochProblem};

/// Accesses (0-based) where some gain changes or a packet arrives, always
/// starting with access 0.
pub fn detect_events(sc: &Scenario) -> Vec<usize> {
    let mut events: Vec<usize> = sc.arrivals.iter().map(|a| a.access - 1).collect();
    events.push(0);
    for n in 1..sc.n {
        if sc.gains.iter().any(|row| row[n] != row[n - 1]) {
            events.push(n);
        }
    }
    events.sort_unstable();
    events.dedup();
    events
}

/// Flowing-window allocation with window length `window` accesses.
///
/// At event `s` the battery (harvested up to `s` minus spent before `s`) is
/// spread over `s .. s + window` with the gains frozen at `s`; the plan is
/// committed until the next event. Accesses no window reaches stay silent.
pub fn online_solve(sc: &Scenario, tables: &TableSet, window: usize) -> Result<Allocation> {
    if window < 1 {
        return Err(Error::invalid("flowing window must be at least 1 access"));
    }
    sc.validate()?;
    if tables.len() != sc.k {
        return Err(Error::invalid(format!("{} tables for {} streams", tables.len(), sc.k)));
    }
    let pools = sc.pools()?;
    let events = detect_events(sc);
    let mut powers = vec![vec![0.0; sc.n]; sc.k];
    let mut epochs = Vec::new();
    let (mut harvested, mut spent) = (0.0, 0.0);
    let mut next_packet = 0;
    for (t, &s) in events.iter().enumerate() {
        while next_packet < sc.arrivals.len() && sc.arrivals[next_packet].access - 1 <= s {
            harvested += sc.arrivals[next_packet].joules;
            next_packet += 1;
        }
        let end = (s + window).min(sc.n);
        let p = EpochProblem {
            accesses: (s..end).collect(),
            gains: sc.gains.iter().map(|row| vec![row[s]; end - s]).collect(),
            tables: tables.to_vec(),
            budget: (harvested - spent).max(0.0),
            ts: sc.ts,
        };
        let sol = solve_epoch(&p)?;
        let commit = end.min(events.get(t + 1).copied().unwrap_or(sc.n));
        for (k, row) in sol.powers.iter().enumerate() {
            powers[k][s..commit].copy_from_slice(&row[..commit - s]);
        }
        spent += sc.ts * (s..commit).map(|n| powers.iter().map(|r| r[n]).sum::<f64>()).sum::<f64>();
        let first = pools.partition_point(|p| p.accesses.end <= s);
        let last = pools.partition_point(|p| p.accesses.end < commit);
        epochs.push(Epoch { pools: first..last + 1, accesses: s..commit, water_level: sol.water_level });
    }
    Ok(Allocation { powers, epochs, stats: RunStats { hg_calls: events.len() } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Arrival;
    use crate::signal::Constellation;

    fn scenario(gains: Vec<f64>, arrivals: &[(usize, f64)]) -> Scenario {
        let a = arrivals.iter().map(|&(access, joules)| Arrival { access, joules }).collect();
        Scenario::new(1.0, vec![gains], a, vec![Constellation::gaussian()]).unwrap()
    }

    #[test]
    fn events_static_channel() {
        let sc = scenario(vec![1.0; 6], &[(1, 1.0), (5, 1.0)]);
        assert_eq!(detect_events(&sc), vec![0, 4]);
    }

    #[test]
    fn events_gain_change() {
        let sc = scenario(vec![1.0, 1.0, 2.0, 2.0], &[(1, 1.0)]);
        assert_eq!(detect_events(&sc), vec![0, 2]);
    }

    #[test]
    fn unit_window_spends_battery_at_events() {
        let sc = scenario(vec![1.0; 4], &[(1, 1.0), (3, 1.0)]);
        let a = online_solve(&sc, &TableSet::gaussian(1), 1).unwrap();
        assert!((a.powers[0][0] - 1.0).abs() < 1e-8);
        assert!((a.powers[0][2] - 1.0).abs() < 1e-8);
        assert_eq!((a.powers[0][1], a.powers[0][3]), (0.0, 0.0));
        assert_eq!(a.stats.hg_calls, 2);
        assert_eq!(a.epoch_of(1), None);
    }

    #[test]
    fn zero_window_rejected() {
        let sc = scenario(vec![1.0; 2], &[(1, 1.0)]);
        assert!(online_solve(&sc, &TableSet::gaussian(1), 0).is_err());
    }
}
