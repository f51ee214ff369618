//! Scenario data model, seeded generation and JSON persistence.
//!
//! Random draws use ChaCha8 seeded through `seed_from_u64`, in this order:
//! arrival accesses, packet energies, gains.

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::offline::{build_pools, Pool};
use crate::signal::Constellation;

/// An energy packet harvested at the start of channel access `access`
/// (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arrival {
    pub access: usize,
    pub joules: f64,
}

/// N channel accesses of K parallel streams with timed energy arrivals.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub n: usize,
    pub k: usize,
    /// Symbol duration in seconds.
    pub ts: f64,
    /// `gains[k][n]`, linear power gains.
    pub gains: Vec<Vec<f64>>,
    pub arrivals: Vec<Arrival>,
    pub constellations: Vec<Constellation>,
    pub seed: Option<u64>,
}

impl Scenario {
    pub fn new(
        ts: f64,
        gains: Vec<Vec<f64>>,
        arrivals: Vec<Arrival>,
        constellations: Vec<Constellation>,
    ) -> Result<Self> {
        let k = gains.len();
        let n = gains.first().map_or(0, Vec::len);
        let s = Scenario { n, k, ts, gains, arrivals, constellations, seed: None };
        s.validate()?;
        Ok(s)
    }

    /// Checks dimensions, gains, ts and arrival ordering.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 {
            return Err(Error::validation("n", "need at least one access and one stream"));
        }
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(Error::validation("ts_seconds", format!("must be positive, got {}", self.ts)));
        }
        if self.gains.len() != self.k {
            return Err(Error::validation("gains", format!("{} rows, expected k = {}", self.gains.len(), self.k)));
        }
        for (k, row) in self.gains.iter().enumerate() {
            if row.len() != self.n {
                return Err(Error::validation(
                    format!("gains[{k}]"),
                    format!("{} entries, expected n = {}", row.len(), self.n),
                ));
            }
            if let Some((i, g)) = row.iter().enumerate().find(|(_, g)| !(**g > 0.0 && g.is_finite())) {
                return Err(Error::validation(format!("gains[{k}][{i}]"), format!("gain {g} must be positive and finite")));
            }
        }
        if self.constellations.len() != self.k {
            return Err(Error::validation(
                "constellations",
                format!("{} entries, expected k = {}", self.constellations.len(), self.k),
            ));
        }
        for (j, a) in self.arrivals.iter().enumerate() {
            if !(a.joules >= 0.0 && a.joules.is_finite()) {
                return Err(Error::validation(format!("arrivals[{j}].joules"), format!("{} must be finite and >= 0", a.joules)));
            }
        }
        build_pools(&self.arrivals, self.n)
            .map(|_| ())
            .map_err(|e| Error::validation("arrivals", e.to_string()))
    }

    pub fn pools(&self) -> Result<Vec<Pool>> {
        build_pools(&self.arrivals, self.n)
    }

    pub fn total_energy(&self) -> f64 {
        self.arrivals.iter().map(|a| a.joules).sum()
    }

    /// Same scenario with every stream using a Gaussian input.
    pub fn with_gaussian_inputs(&self) -> Scenario {
        Scenario { constellations: vec![Constellation::gaussian(); self.k], ..self.clone() }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: RawScenario = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        raw.resolve()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Scenario::from_json(&std::fs::read_to_string(path)?)
    }

    /// Explicit form: full gain matrix and arrival list, numbers in
    /// shortest round-trip notation.
    pub fn to_json(&self) -> String {
        let raw = RawScenario {
            n: self.n,
            k: self.k,
            ts_seconds: self.ts,
            arrivals: ArrivalSpec::List(self.arrivals.clone()),
            gains: GainSpec::Matrix(self.gains.clone()),
            constellations: self.constellations.iter().map(ConstellationSpec::from).collect(),
            seed: self.seed,
        };
        let mut s = serde_json::to_string_pretty(&raw).expect("scenario serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// How gains evolve over channel accesses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum GainModel {
    /// One draw per stream, held for all accesses.
    Static,
    /// A fresh draw every `block_len` accesses.
    BlockRandom { block_len: usize },
}

/// Parameters of [`generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct GenerateParams {
    pub n: usize,
    pub k: usize,
    pub ts: f64,
    /// Number of energy packets J.
    pub packets: usize,
    pub total_energy: f64,
    pub gain_model: GainModel,
    /// Use the same gain on every stream at a given access.
    pub constant_across_streams: bool,
    pub constellations: Vec<Constellation>,
    pub seed: u64,
}

impl GenerateParams {
    /// Default benchmark setup: i.i.d. gains per access, BPSK/4-PAM/16-PAM/32-PAM
    /// cycled over the streams.
    pub fn standard(n: usize, k: usize, packets: usize, total_energy: f64, seed: u64) -> Self {
        let names = ["bpsk", "4pam", "16pam", "32pam"];
        GenerateParams {
            n,
            k,
            ts: 0.01,
            packets,
            total_energy,
            gain_model: GainModel::BlockRandom { block_len: 1 },
            constant_across_streams: false,
            constellations: (0..k).map(|i| Constellation::builtin(names[i % 4]).unwrap()).collect(),
            seed,
        }
    }
}

impl GenerateParams {
    /// Generator parameters from a config whose `arrivals` and `gains` are
    /// both generator forms.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: RawScenario = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        let ArrivalSpec::Generator(a) = raw.arrivals else {
            return Err(Error::validation("arrivals", "expected {packets, total_energy}"));
        };
        let GainSpec::Generator(g) = raw.gains else {
            return Err(Error::validation("gains", "expected a generator such as {\"model\": \"static\"}"));
        };
        let seed = raw.seed.ok_or_else(|| Error::validation("seed", "required for generated scenarios"))?;
        let constellations = resolve_constellations(raw.constellations)?;
        let p = GenerateParams {
            n: raw.n,
            k: raw.k,
            ts: raw.ts_seconds,
            packets: a.packets,
            total_energy: a.total_energy,
            gain_model: g.model,
            constant_across_streams: g.constant_across_streams,
            constellations,
            seed,
        };
        generate(&p)?;
        Ok(p)
    }
}

fn resolve_constellations(specs: Vec<ConstellationSpec>) -> Result<Vec<Constellation>> {
    specs
        .into_iter()
        .enumerate()
        .map(|(i, spec)| {
            let path = format!("constellations[{i}]");
            match spec {
                ConstellationSpec::Name(name) => Constellation::builtin(&name),
                ConstellationSpec::Custom { label, points, probs } => {
                    Constellation::discrete(label.unwrap_or_else(|| format!("custom{}", i + 1)), points, probs)
                }
            }
            .map_err(|e| Error::validation(path, e.to_string()))
        })
        .collect()
}

fn draw_arrivals(rng: &mut ChaCha8Rng, n: usize, packets: usize, total_energy: f64) -> Result<Vec<Arrival>> {
    if packets == 0 || packets > n {
        return Err(Error::invalid(format!("need 1 <= J <= N, got J = {packets}, N = {n}")));
    }
    if !(total_energy >= 0.0 && total_energy.is_finite()) {
        return Err(Error::invalid(format!("total energy must be finite and >= 0, got {total_energy}")));
    }
    let mut accesses: Vec<usize> = sample(rng, n - 1, packets - 1).into_iter().map(|i| i + 2).collect();
    accesses.sort_unstable();
    accesses.insert(0, 1);
    let raw: Vec<f64> = (0..packets).map(|_| rng.random::<f64>()).collect();
    let sum: f64 = raw.iter().sum();
    let joules: Vec<f64> = if sum > 0.0 {
        raw.iter().map(|u| total_energy * u / sum).collect()
    } else {
        vec![total_energy / packets as f64; packets]
    };
    Ok(accesses.into_iter().zip(joules).map(|(access, joules)| Arrival { access, joules }).collect())
}

fn chi_square_1(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z != 0.0 {
            return z * z;
        }
    }
}

fn draw_gains(rng: &mut ChaCha8Rng, n: usize, k: usize, model: GainModel, constant_across_streams: bool) -> Result<Vec<Vec<f64>>> {
    let block = match model {
        GainModel::Static => n,
        GainModel::BlockRandom { block_len } if block_len >= 1 => block_len,
        GainModel::BlockRandom { .. } => return Err(Error::invalid("block_len must be >= 1")),
    };
    let blocks = n.div_ceil(block);
    let rows = if constant_across_streams { 1 } else { k };
    let drawn: Vec<Vec<f64>> = (0..rows).map(|_| (0..blocks).map(|_| chi_square_1(rng)).collect()).collect();
    Ok((0..k)
        .map(|s| {
            let row = &drawn[if constant_across_streams { 0 } else { s }];
            (0..n).map(|i| row[i / block]).collect()
        })
        .collect())
}

/// Seeded random scenario.
pub fn generate(p: &GenerateParams) -> Result<Scenario> {
    if p.constellations.len() != p.k {
        return Err(Error::invalid(format!("{} constellations for k = {}", p.constellations.len(), p.k)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let arrivals = draw_arrivals(&mut rng, p.n, p.packets, p.total_energy)?;
    let gains = draw_gains(&mut rng, p.n, p.k, p.gain_model, p.constant_across_streams)?;
    let s = Scenario {
        n: p.n,
        k: p.k,
        ts: p.ts,
        gains,
        arrivals,
        constellations: p.constellations.clone(),
        seed: Some(p.seed),
    };
    s.validate()?;
    Ok(s)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    n: usize,
    k: usize,
    ts_seconds: f64,
    arrivals: ArrivalSpec,
    gains: GainSpec,
    constellations: Vec<ConstellationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum ArrivalSpec {
    List(Vec<Arrival>),
    Generator(ArrivalGenerator),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrivalGenerator {
    packets: usize,
    total_energy: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum GainSpec {
    Matrix(Vec<Vec<f64>>),
    Generator(GainGenerator),
}

#[derive(Debug, Serialize, Deserialize)]
struct GainGenerator {
    #[serde(flatten)]
    model: GainModel,
    #[serde(default)]
    constant_across_streams: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum ConstellationSpec {
    Name(String),
    Custom {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
        points: Vec<f64>,
        probs: Vec<f64>,
    },
}

impl From<&Constellation> for ConstellationSpec {
    fn from(c: &Constellation) -> Self {
        if Constellation::builtin(c.label()).is_ok_and(|b| &b == c) {
            return ConstellationSpec::Name(c.label().to_string());
        }
        match c.support() {
            None => ConstellationSpec::Name("gaussian".into()),
            Some((points, probs)) => ConstellationSpec::Custom {
                label: Some(c.label().to_string()),
                points: points.to_vec(),
                probs: probs.to_vec(),
            },
        }
    }
}

impl RawScenario {
    fn resolve(self) -> Result<Scenario> {
        let constellations = resolve_constellations(self.constellations)?;

        let needs_rng = matches!(self.arrivals, ArrivalSpec::Generator(_)) || matches!(self.gains, GainSpec::Generator(_));
        let mut rng = match (needs_rng, self.seed) {
            (true, None) => return Err(Error::validation("seed", "required when arrivals or gains are generated")),
            (_, seed) => ChaCha8Rng::seed_from_u64(seed.unwrap_or(0)),
        };
        let arrivals = match self.arrivals {
            ArrivalSpec::List(a) => a,
            ArrivalSpec::Generator(g) => draw_arrivals(&mut rng, self.n, g.packets, g.total_energy)
                .map_err(|e| Error::validation("arrivals", e.to_string()))?,
        };
        let gains = match self.gains {
            GainSpec::Matrix(m) => m,
            GainSpec::Generator(g) => draw_gains(&mut rng, self.n, self.k, g.model, g.constant_across_streams)
                .map_err(|e| Error::validation("gains", e.to_string()))?,
        };
        let s = Scenario { n: self.n, k: self.k, ts: self.ts_seconds, gains, arrivals, constellations, seed: self.seed };
        s.validate()?;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_packet_takes_all_energy() {
        let mut p = GenerateParams::standard(10, 2, 1, 5.0, 3);
        p.gain_model = GainModel::Static;
        let s = generate(&p).unwrap();
        assert_eq!(s.arrivals, vec![Arrival { access: 1, joules: 5.0 }]);
        assert!(s.gains.iter().all(|r| r.iter().all(|g| *g == r[0])));
    }

    #[test]
    fn deterministic_and_structured() {
        let p = GenerateParams::standard(100, 4, 40, 10.0, 1);
        let a = generate(&p).unwrap();
        assert_eq!(a.to_json(), generate(&p).unwrap().to_json());
        assert_eq!(a.arrivals.len(), 40);
        assert_eq!(a.arrivals[0].access, 1);
        assert!(a.arrivals.windows(2).all(|w| w[0].access < w[1].access));
        assert!(a.arrivals.iter().all(|x| x.access <= 100));
        assert!((a.total_energy() - 10.0).abs() <= 1e-12 * 10.0);
    }

    #[test]
    fn constant_across_streams() {
        let mut p = GenerateParams::standard(20, 4, 6, 1.0, 5);
        p.constant_across_streams = true;
        let s = generate(&p).unwrap();
        assert!(s.gains.iter().all(|r| r == &s.gains[0]));
    }

    #[test]
    fn too_many_packets() {
        assert!(generate(&GenerateParams::standard(3, 1, 4, 1.0, 0)).is_err());
    }

    #[test]
    fn json_round_trip() {
        let s = generate(&GenerateParams::standard(12, 3, 4, 2.0, 9)).unwrap();
        assert_eq!(Scenario::from_json(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn missing_ts_is_schema_error() {
        let text = r#"{"n": 2, "k": 1, "arrivals": [{"access": 1, "joules": 1}], "gains": [[1, 1]], "constellations": ["bpsk"]}"#;
        match Scenario::from_json(text) {
            Err(Error::Schema { message, .. }) => assert!(message.contains("ts_seconds"), "{message}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negative_gain_is_validation_error() {
        let text = r#"{"n": 2, "k": 1, "ts_seconds": 1, "arrivals": [{"access": 1, "joules": 1}], "gains": [[1, -1]], "constellations": ["bpsk"]}"#;
        match Scenario::from_json(text) {
            Err(Error::Validation { path, .. }) => assert_eq!(path, "gains[0][1]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn generator_forms_match_generate() {
        let text = r#"{"n": 30, "k": 4, "ts_seconds": 0.01, "seed": 11,
            "arrivals": {"packets": 5, "total_energy": 3.0},
            "gains": {"model": "block_random", "block_len": 1},
            "constellations": ["bpsk", "4pam", "16pam", "32pam"]}"#;
        let s = Scenario::from_json(text).unwrap();
        assert_eq!(s, generate(&GenerateParams::standard(30, 4, 5, 3.0, 11)).unwrap());
    }

    #[test]
    fn custom_constellation_round_trip() {
        let c = Constellation::discrete("tri", vec![-1.5f64.sqrt(), 0.0, 1.5f64.sqrt()], vec![1.0 / 3.0; 3]).unwrap();
        let s = Scenario::new(1.0, vec![vec![1.0, 2.0]], vec![Arrival { access: 1, joules: 1.0 }], vec![c]).unwrap();
        assert_eq!(Scenario::from_json(&s.to_json()).unwrap(), s);
    }
}
