//! Power allocations over a whole scenario and their CSV form.

use std::io::{Read, Write};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::scenario::Scenario;

/// A run of consecutive accesses sharing one water level.
///
/// Offline solvers produce epochs made of whole pools; the online solver
/// produces one epoch per event, covering the accesses it committed.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    /// Pool indices (0-based) overlapped by the epoch.
    pub pools: Range<usize>,
    /// Access indices (0-based).
    pub accesses: Range<usize>,
    pub water_level: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunStats {
    /// Number of per-epoch solves.
    pub hg_calls: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    /// `powers[k][n]` in watts.
    pub powers: Vec<Vec<f64>>,
    /// Ordered, non-overlapping epochs. Accesses outside every epoch are
    /// silent.
    pub epochs: Vec<Epoch>,
    pub stats: RunStats,
}

impl Allocation {
    /// Epoch index (0-based) containing access `n`.
    pub fn epoch_of(&self, n: usize) -> Option<usize> {
        let i = self.epochs.partition_point(|e| e.accesses.end <= n);
        (i < self.epochs.len() && self.epochs[i].accesses.contains(&n)).then_some(i)
    }

    /// Water level in force at each access, 0 where silent.
    pub fn access_levels(&self, n: usize) -> Vec<f64> {
        (0..n).map(|i| self.epoch_of(i).map_or(0.0, |e| self.epochs[e].water_level)).collect()
    }

    /// Energy spent at each access.
    pub fn access_energy(&self, ts: f64) -> Vec<f64> {
        let n = self.powers.first().map_or(0, Vec::len);
        (0..n).map(|i| ts * self.powers.iter().map(|r| r[i]).sum::<f64>()).collect()
    }

    /// CSV rows `n,k,lambda,sigma2,W_of_pool,pool,epoch` with 1-based
    /// indices; `epoch` is 0 for silent accesses.
    pub fn write_csv<W: Write>(&self, sc: &Scenario, out: W) -> Result<()> {
        let pools = sc.pools()?;
        let levels = self.access_levels(sc.n);
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "k", "lambda", "sigma2", "W_of_pool", "pool", "epoch"])?;
        let mut pool = 0;
        for n in 0..sc.n {
            while pools[pool].accesses.end <= n {
                pool += 1;
            }
            let epoch = self.epoch_of(n).map_or(0, |e| e + 1);
            for k in 0..sc.k {
                w.write_record([
                    (n + 1).to_string(),
                    (k + 1).to_string(),
                    fmt_f64(sc.gains[k][n]),
                    fmt_f64(self.powers[k][n]),
                    fmt_f64(levels[n]),
                    (pool + 1).to_string(),
                    epoch.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads an allocation written by [`Allocation::write_csv`]. `hg_calls`
    /// is not stored and reads as 0.
    pub fn read_csv<R: Read>(sc: &Scenario, input: R) -> Result<Allocation> {
        let pools = sc.pools()?;
        let mut powers = vec![vec![f64::NAN; sc.n]; sc.k];
        let mut tags: Vec<Option<(usize, f64)>> = vec![None; sc.n];
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let col = |name: &str| {
            header
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::validation("allocation", format!("missing column `{name}`")))
        };
        let (cn, ck, cs, cw, ce) = (col("n")?, col("k")?, col("sigma2")?, col("W_of_pool")?, col("epoch")?);
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let at = || format!("allocation row {}", row + 1);
            let get = |c: usize| rec.get(c).map(str::trim).unwrap_or("");
            let int = |c: usize| get(c).parse::<usize>().map_err(|e| Error::validation(at(), e.to_string()));
            let real = |c: usize| get(c).parse::<f64>().map_err(|e| Error::validation(at(), e.to_string()));
            let (n, k, epoch) = (int(cn)?, int(ck)?, int(ce)?);
            if n == 0 || n > sc.n || k == 0 || k > sc.k {
                return Err(Error::validation(at(), format!("index (n={n}, k={k}) outside {}x{}", sc.n, sc.k)));
            }
            powers[k - 1][n - 1] = real(cs)?;
            if epoch > 0 {
                tags[n - 1] = Some((epoch, real(cw)?));
            }
        }
        if let Some(k) = powers.iter().position(|r| r.iter().any(|p| p.is_nan())) {
            return Err(Error::validation("allocation", format!("missing rows for stream {}", k + 1)));
        }
        let mut epochs: Vec<(usize, Epoch)> = Vec::new();
        for (n, tag) in tags.iter().enumerate() {
            let Some((id, level)) = *tag else { continue };
            match epochs.last_mut() {
                Some((last, e)) if *last == id && e.accesses.end == n => e.accesses.end = n + 1,
                _ => epochs.push((id, Epoch { pools: 0..0, accesses: n..n + 1, water_level: level })),
            }
        }
        let epochs = epochs
            .into_iter()
            .map(|(_, mut e)| {
                let first = pools.iter().position(|p| p.accesses.contains(&e.accesses.start)).unwrap();
                let last = pools.iter().position(|p| p.accesses.contains(&(e.accesses.end - 1))).unwrap();
                e.pools = first..last + 1;
                e
            })
            .collect();
        Ok(Allocation { powers, epochs, stats: RunStats::default() })
    }
}
