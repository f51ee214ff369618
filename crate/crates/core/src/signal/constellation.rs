use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROB_SUM_TOL: f64 = 1e-12;
const UNIT_POWER_TOL: f64 = 1e-10;

/// Names accepted by [`Constellation::builtin`].
pub const BUILTIN_NAMES: [&str; 5] = ["bpsk", "4pam", "16pam", "32pam", "gaussian"];

/// A real, zero-mean, unit-power input distribution for one stream.
///
/// Discrete constellations keep their points sorted in increasing order
/// (probabilities permuted accordingly).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constellation {
    label: String,
    kind: Kind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Kind {
    Gaussian,
    Discrete { points: Vec<f64>, probs: Vec<f64> },
}

impl Constellation {
    /// Ideal unit-variance Gaussian signalling.
    pub fn gaussian() -> Self {
        Constellation { label: "gaussian".into(), kind: Kind::Gaussian }
    }

    /// Validates and builds a discrete constellation.
    pub fn discrete(label: impl Into<String>, points: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        let label = label.into();
        if points.len() != probs.len() {
            return Err(Error::InvalidConstellation(format!(
                "{label}: {} points but {} probabilities",
                points.len(),
                probs.len()
            )));
        }
        if points.len() < 2 {
            return Err(Error::InvalidConstellation(format!("{label}: needs at least 2 points")));
        }
        if points.iter().chain(&probs).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConstellation(format!("{label}: non-finite value")));
        }
        if let Some(p) = probs.iter().find(|&&p| p <= 0.0) {
            return Err(Error::InvalidConstellation(format!("{label}: probability {p} is not positive")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidConstellation(format!(
                "{label}: probabilities sum to {total}, expected 1"
            )));
        }
        let mean: f64 = points.iter().zip(&probs).map(|(s, p)| p * s).sum();
        if mean.abs() > UNIT_POWER_TOL {
            return Err(Error::InvalidConstellation(format!("{label}: mean {mean}, expected 0")));
        }
        let power: f64 = points.iter().zip(&probs).map(|(s, p)| p * s * s).sum();
        if (power - 1.0).abs() > UNIT_POWER_TOL {
            return Err(Error::InvalidConstellation(format!(
                "{label}: average power {power}, expected 1"
            )));
        }

        let mut pairs: Vec<(f64, f64)> = points.into_iter().zip(probs).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidConstellation(format!("{label}: repeated point")));
        }
        let (points, probs) = pairs.into_iter().unzip();
        Ok(Constellation { label, kind: Kind::Discrete { points, probs } })
    }

    /// Uniform `q`-PAM with unit average power.
    pub fn pam(q: usize) -> Result<Self> {
        if q < 2 {
            return Err(Error::InvalidConstellation(format!("{q}-PAM needs q >= 2")));
        }
        let raw: Vec<f64> = (0..q).map(|i| (2 * i) as f64 - (q - 1) as f64).collect();
        let scale = (raw.iter().map(|s| s * s).sum::<f64>() / q as f64).sqrt();
        let points = raw.into_iter().map(|s| s / scale).collect();
        let label = if q == 2 { "bpsk".to_string() } else { format!("{q}pam") };
        Constellation::discrete(label, points, vec![1.0 / q as f64; q])
    }

    pub fn bpsk() -> Self {
        Constellation::pam(2).expect("bpsk is valid")
    }

    /// Looks up a built-in constellation by name (case-insensitive, dashes
    /// ignored): `bpsk`, `4pam`, `16pam`, `32pam`, `gaussian`.
    pub fn builtin(name: &str) -> Result<Self> {
        let key: String = name.chars().filter(|c| *c != '-' && *c != '_').collect::<String>().to_lowercase();
        match key.as_str() {
            "gaussian" | "gauss" => Ok(Constellation::gaussian()),
            "bpsk" | "2pam" => Ok(Constellation::bpsk()),
            "4pam" => Constellation::pam(4),
            "16pam" => Constellation::pam(16),
            "32pam" => Constellation::pam(32),
            _ => Err(Error::InvalidConstellation(format!("unknown built-in constellation `{name}`"))),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.kind, Kind::Gaussian)
    }

    /// Sorted points and matching probabilities, `None` for Gaussian inputs.
    pub fn support(&self) -> Option<(&[f64], &[f64])> {
        match &self.kind {
            Kind::Gaussian => None,
            Kind::Discrete { points, probs } => Some((points, probs)),
        }
    }

    /// Alphabet size Q, `None` for Gaussian inputs.
    pub fn cardinality(&self) -> Option<usize> {
        self.support().map(|(p, _)| p.len())
    }

    /// Input entropy H(X) in bits; the saturation value of the mutual
    /// information. Infinite for Gaussian inputs.
    pub fn entropy_bits(&self) -> f64 {
        match self.support() {
            None => f64::INFINITY,
            Some((_, probs)) => -probs.iter().map(|p| p * p.log2()).sum::<f64>(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_unit_power() {
        for name in BUILTIN_NAMES {
            let c = Constellation::builtin(name).unwrap();
            if let Some((pts, probs)) = c.support() {
                let power: f64 = pts.iter().zip(probs).map(|(s, p)| p * s * s).sum();
                assert!((power - 1.0).abs() < 1e-14, "{name}");
            }
        }
        assert_eq!(Constellation::builtin("16-PAM").unwrap().cardinality(), Some(16));
    }

    #[test]
    fn rejects_bad_probabilities() {
        let err = Constellation::discrete("x", vec![-1.0, 1.0], vec![0.5, 0.6]).unwrap_err();
        assert!(matches!(err, Error::InvalidConstellation(_)));
        let err = Constellation::discrete("x", vec![-1.0, 1.0], vec![1.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidConstellation(_)));
    }

    #[test]
    fn rejects_non_unit_power_and_duplicates() {
        assert!(Constellation::discrete("x", vec![-2.0, 2.0], vec![0.5, 0.5]).is_err());
        assert!(Constellation::discrete("x", vec![1.0, 1.0], vec![0.5, 0.5]).is_err());
        assert!(Constellation::discrete("x", vec![1.0], vec![1.0]).is_err());
    }

    #[test]
    fn rejects_nonzero_mean() {
        let e = Constellation::discrete("ook", vec![0.0, 2f64.sqrt()], vec![0.5, 0.5]).unwrap_err();
        assert!(e.to_string().contains("mean"), "{e}");
    }

    #[test]
    fn sorts_points() {
        // asymmetric unit-power ternary input
        let a = (2.0f64 / 3.0).sqrt();
        let c = Constellation::discrete("t", vec![a * 1.5, -a * 1.5, 0.0], vec![1.0 / 3.0; 3]).unwrap();
        let (pts, _) = c.support().unwrap();
        assert!(pts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn entropy() {
        assert!((Constellation::pam(16).unwrap().entropy_bits() - 4.0).abs() < 1e-12);
        assert!(Constellation::gaussian().entropy_bits().is_infinite());
    }
}
