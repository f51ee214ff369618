//! `hgflow`: generate scenarios, run the allocators and write CSV reports.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hgflow::evaluation::{self, Strategy};
use hgflow::signal::{build_table, Constellation, MmseTable, TableConfig, TableSet, BUILTIN_NAMES};
use hgflow::{fsa_solve, kkt_verify, Allocation, ErrorClass, GenerateParams, KktReport, Scenario};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

/// Directory holding persisted MMSE tables, shared across runs.
const CACHE_ENV: &str = "HGFLOW_TABLE_CACHE";

#[derive(Parser)]
#[command(name = "hgflow", version, about = "Mercury/water-flowing power allocation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build MMSE / mutual information tables and write them as CSV.
    Tables {
        #[command(flatten)]
        common: Common,
        /// Constellations to tabulate (default: those in --config, else all built-ins).
        #[arg(long, value_delimiter = ',')]
        constellations: Vec<String>,
    },
    /// Solve one scenario and write its allocation.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Alg::Nda)]
        alg: Alg,
        /// Flowing window length (online only).
        #[arg(long, default_value_t = 11, value_parser = clap::value_parser!(u64).range(1..))]
        window: u64,
        /// Tolerance for the optimality check in the summary.
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
    },
    /// Mean mutual information of every strategy versus total energy.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Explicit energy grid in Joules (overrides --e-min/--e-max/--points).
        #[arg(long, value_delimiter = ',')]
        energies: Vec<f64>,
        #[arg(long, default_value_t = 0.01)]
        e_min: f64,
        #[arg(long, default_value_t = 100.0)]
        e_max: f64,
        /// Number of log-spaced energy points.
        #[arg(long, default_value_t = 10)]
        points: usize,
        /// Scenarios per energy point, seeded from --seed upwards.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<String>,
        #[arg(long, default_value_t = 11, value_parser = clap::value_parser!(u64).range(1..))]
        window: u64,
        /// Worker threads (0: one per core).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Solver call counts of NDA and FSA over a J grid.
    Complexity {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [10usize, 20, 30, 40, 50, 60, 70, 80, 90, 100])]
        j_grid: Vec<usize>,
        /// Seeded runs per J.
        #[arg(long, default_value_t = 20)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Per-access inverse gain, mercury level, water level and power.
    Trace {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Alg::Nda)]
        alg: Alg,
        #[arg(long, default_value_t = 11, value_parser = clap::value_parser!(u64).range(1..))]
        window: u64,
    },
    /// Check a stored allocation against the optimality conditions.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Allocation CSV written by `run`.
        #[arg(long)]
        allocation: PathBuf,
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Largest tabulated snr.
    #[arg(long, default_value_t = TableConfig::default().snr_max)]
    snr_max: f64,
    /// Table grid size.
    #[arg(long, default_value_t = TableConfig::default().n_points)]
    table_points: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Alg {
    Nda,
    Fsa,
    Online,
    Dwf,
    #[value(name = "pbp-wf")]
    PbpWf,
    #[value(name = "pbp-hgwf")]
    PbpHgwf,
}

impl Alg {
    fn label(self) -> &'static str {
        match self {
            Alg::Nda => "nda",
            Alg::Fsa => "fsa",
            Alg::Online => "online",
            Alg::Dwf => "dwf",
            Alg::PbpWf => "pbp-wf",
            Alg::PbpHgwf => "pbp-hgwf",
        }
    }
}

enum Failure {
    Usage(String),
    Lib(hgflow::Error),
    Io(String),
    Verification(String),
}

impl From<hgflow::Error> for Failure {
    fn from(e: hgflow::Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl Failure {
    fn report(&self) -> (u8, Value) {
        match self {
            Failure::Usage(m) => (2, json!({"error": "usage", "message": m})),
            Failure::Io(m) => (2, json!({"error": "io", "message": m})),
            Failure::Verification(m) => (4, json!({"error": "verification", "message": m})),
            Failure::Lib(e) => match e.class() {
                ErrorClass::Config => (2, json!({"error": "config", "message": e.to_string()})),
                ErrorClass::Numeric => (3, json!({"error": "numeric", "message": e.to_string()})),
            },
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            return fail(Failure::Usage(first));
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => fail(f),
    }
}

fn fail(f: Failure) -> ExitCode {
    let (code, line) = f.report();
    eprintln!("{line}");
    ExitCode::from(code)
}

fn dispatch(cmd: Command) -> Outcome {
    match cmd {
        Command::Tables { common, constellations } => tables(&common, &constellations),
        Command::Run { common, alg, window, tol } => run(&common, alg, window as usize, tol),
        Command::Sweep { common, energies, e_min, e_max, points, seeds, strategies, window, jobs } => {
            let energies = if energies.is_empty() { log_grid(e_min, e_max, points)? } else { energies };
            sweep(&common, &energies, seeds, &strategies, window as usize, jobs)
        }
        Command::Complexity { common, j_grid, runs, jobs } => complexity(&common, &j_grid, runs, jobs),
        Command::Trace { common, alg, window } => trace(&common, alg, window as usize),
        Command::Verify { common, allocation, tol } => verify(&common, &allocation, tol),
    }
}

impl Common {
    fn table_config(&self) -> TableConfig {
        TableConfig { snr_max: self.snr_max, n_points: self.table_points }
    }

    /// Config text with the `--seed` override applied.
    fn config_text(&self) -> std::result::Result<Option<String>, Failure> {
        let Some(path) = &self.config else { return Ok(None) };
        let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        let Some(seed) = self.seed else { return Ok(Some(text)) };
        let mut v: Value = serde_json::from_str(&text)
            .map_err(|e| hgflow::Error::Schema { path: ".".into(), message: e.to_string() })?;
        if let Value::Object(m) = &mut v {
            m.insert("seed".into(), json!(seed));
        }
        Ok(Some(v.to_string()))
    }

    fn scenario(&self) -> std::result::Result<Scenario, Failure> {
        let text = self.config_text()?.ok_or_else(|| Failure::Usage("--config is required".into()))?;
        Ok(Scenario::from_json(&text)?)
    }

    /// Generator parameters from --config, or the default 100-access,
    /// 4-stream setup.
    fn generator(&self, packets: usize) -> std::result::Result<GenerateParams, Failure> {
        match self.config_text()? {
            Some(text) => Ok(GenerateParams::from_json(&text)?),
            None => Ok(GenerateParams::standard(100, 4, packets, 1.0, self.seed.unwrap_or(0))),
        }
    }

    fn create(&self, name: &str) -> std::result::Result<BufWriter<File>, Failure> {
        fs::create_dir_all(&self.out)?;
        let path = self.out.join(name);
        let f = File::create(&path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        Ok(BufWriter::new(f))
    }
}

fn log_grid(lo: f64, hi: f64, points: usize) -> std::result::Result<Vec<f64>, Failure> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) || points == 0 {
        return Err(Failure::Usage("energy grid needs 0 < e_min <= e_max and points >= 1".into()));
    }
    if points == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.log10(), hi.log10());
    Ok((0..points).map(|i| 10f64.powf(a + (b - a) * i as f64 / (points - 1) as f64)).collect())
}

fn threads(jobs: usize) {
    // ignore the error if a pool already exists
    let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
}

fn cache_key(c: &Constellation, cfg: TableConfig) -> String {
    let mut h = Sha256::new();
    h.update(c.label().as_bytes());
    if let Some((points, probs)) = c.support() {
        for v in points.iter().chain(probs) {
            h.update(v.to_le_bytes());
        }
    }
    h.update(cfg.snr_max.to_le_bytes());
    h.update((cfg.n_points as u64).to_le_bytes());
    let digest = h.finalize();
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Tables for `constellations`, read from or persisted to the cache
/// directory when one is configured.
fn load_tables(constellations: &[Constellation], cfg: TableConfig) -> std::result::Result<TableSet, Failure> {
    if let Some(dir) = std::env::var_os(CACHE_ENV) {
        let dir = PathBuf::from(dir);
        fs::create_dir_all(&dir)?;
        for c in constellations {
            if c.is_gaussian() || TableSet::is_cached(c, cfg) {
                continue;
            }
            let path = dir.join(format!("{}-{}.csv", c.label(), cache_key(c, cfg)));
            let table = match File::open(&path) {
                Ok(f) => MmseTable::read_cache(c, BufReader::new(f))?,
                Err(_) => {
                    let t = build_table(c, cfg.snr_max, cfg.n_points)?;
                    persist(&t, &path)?;
                    t
                }
            };
            TableSet::remember(table, cfg);
        }
    }
    Ok(TableSet::build(constellations, cfg)?)
}

fn persist(t: &MmseTable, path: &Path) -> std::result::Result<(), Failure> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    let mut w = BufWriter::new(File::create(&tmp)?);
    t.write_cache(&mut w)?;
    w.flush()?;
    drop(w);
    fs::rename(&tmp, path)?;
    Ok(())
}

fn tables(common: &Common, names: &[String]) -> Outcome {
    let constellations: Vec<Constellation> = if !names.is_empty() {
        names.iter().map(|n| Constellation::builtin(n)).collect::<hgflow::Result<_>>()?
    } else if common.config.is_some() {
        common.scenario()?.constellations
    } else {
        BUILTIN_NAMES.iter().map(|n| Constellation::builtin(n)).collect::<hgflow::Result<_>>()?
    };
    threads(1);
    let set = load_tables(&constellations, common.table_config())?;
    let mut written: Vec<&str> = Vec::new();
    for t in set.iter() {
        if written.contains(&t.label()) {
            continue;
        }
        let mut w = common.create(&format!("table-{}.csv", t.label()))?;
        t.write_csv(&mut w)?;
        w.flush()?;
        written.push(t.label());
    }
    println!("tables={} points={} snr_max={}", written.join(","), common.table_points, common.snr_max);
    Ok(())
}

fn solve(sc: &Scenario, tables: &TableSet, alg: Alg, window: usize) -> hgflow::Result<Allocation> {
    match alg {
        Alg::Nda => Strategy::MwFlow.solve(sc, tables, window),
        Alg::Fsa => fsa_solve(sc, tables, None),
        Alg::Online => Strategy::Online.solve(sc, tables, window),
        Alg::Dwf => Strategy::Dwf.solve(sc, tables, window),
        Alg::PbpWf => Strategy::PbpWf.solve(sc, tables, window),
        Alg::PbpHgwf => Strategy::PbpHgwf.solve(sc, tables, window),
    }
}

/// Fixed-point form with at most six decimals and no trailing zeros.
fn short(x: f64) -> String {
    let s = format!("{x:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn run(common: &Common, alg: Alg, window: usize, tol: f64) -> Outcome {
    let sc = common.scenario()?;
    threads(1);
    let tables = load_tables(&sc.constellations, common.table_config())?;
    let alloc = solve(&sc, &tables, alg, window)?;
    let mi = evaluation::evaluate_mi(&sc, &tables, &alloc)?;
    let report = kkt_verify(&sc, &alloc, tol)?;
    let mut w = common.create("allocation.csv")?;
    alloc.write_csv(&sc, &mut w)?;
    w.flush()?;
    let levels: Vec<String> = alloc.epochs.iter().map(|e| short(e.water_level)).collect();
    println!(
        "alg={} mi_bits={} hg_calls={} epochs={} W={} kkt_pass={}",
        alg.label(),
        hgflow::fmt_f64(mi),
        alloc.stats.hg_calls,
        alloc.epochs.len(),
        levels.join(";"),
        report.passed()
    );
    Ok(())
}

fn sweep(common: &Common, energies: &[f64], seeds: u64, strategies: &[String], window: usize, jobs: usize) -> Outcome {
    let base = common.generator(40)?;
    let strategies: Vec<Strategy> = if strategies.is_empty() {
        Strategy::ALL.to_vec()
    } else {
        strategies.iter().map(|s| s.parse()).collect::<hgflow::Result<_>>()?
    };
    if seeds == 0 {
        return Err(Failure::Usage("--seeds must be at least 1".into()));
    }
    threads(jobs);
    load_tables(&base.constellations, common.table_config())?;
    let seed_list: Vec<u64> = (0..seeds).map(|i| base.seed.wrapping_add(i)).collect();
    let res = evaluation::sweep_energy(&base, energies, &seed_list, &strategies, window, common.table_config())?;
    let mut w = common.create("sweep.csv")?;
    res.write_csv(&mut w)?;
    w.flush()?;
    println!("energies={} seeds={} strategies={}", energies.len(), seeds, strategies.len());
    Ok(())
}

fn complexity(common: &Common, j_grid: &[usize], runs: usize, jobs: usize) -> Outcome {
    let base = common.generator(j_grid.iter().copied().max().unwrap_or(1))?;
    threads(jobs);
    load_tables(&base.constellations, common.table_config())?;
    let ens = evaluation::complexity_ensemble(j_grid, runs, &base, common.table_config())?;
    let mut w = common.create("complexity.csv")?;
    ens.write_csv(&mut w)?;
    w.flush()?;
    println!("runs={} q={} p={}", ens.runs.len(), hgflow::fmt_f64(ens.q), hgflow::fmt_f64(ens.p));
    Ok(())
}

fn trace(common: &Common, alg: Alg, window: usize) -> Outcome {
    let sc = common.scenario()?;
    threads(1);
    let tables = load_tables(&sc.constellations, common.table_config())?;
    let alloc = solve(&sc, &tables, alg, window)?;
    let rows = evaluation::trace(&sc, &tables, &alloc)?;
    let mut w = common.create("trace.csv")?;
    evaluation::write_trace_csv(&rows, &mut w)?;
    w.flush()?;
    println!("alg={} rows={}", alg.label(), rows.len());
    Ok(())
}

fn verify(common: &Common, path: &Path, tol: f64) -> Outcome {
    let sc = common.scenario()?;
    let f = File::open(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let alloc = Allocation::read_csv(&sc, BufReader::new(f))?;
    let r = kkt_verify(&sc, &alloc, tol)?;
    println!(
        "kkt_pass={} stationarity={} ecc={} nondecreasing_levels={} level_changes={}",
        r.passed(),
        hgflow::fmt_f64(r.stationarity.worst),
        hgflow::fmt_f64(r.ecc.worst),
        hgflow::fmt_f64(r.nondecreasing_levels.worst),
        hgflow::fmt_f64(r.level_changes.worst),
    );
    if r.passed() {
        Ok(())
    } else {
        Err(Failure::Verification(first_failure(&r)))
    }
}

fn first_failure(r: &KktReport) -> String {
    [
        ("stationarity", &r.stationarity),
        ("ecc", &r.ecc),
        ("nondecreasing_levels", &r.nondecreasing_levels),
        ("level_changes", &r.level_changes),
    ]
    .into_iter()
    .find(|(_, c)| !c.passed)
    .map(|(name, c)| format!("{name}: {}", c.failure.clone().unwrap_or_default()))
    .unwrap_or_default()
}
