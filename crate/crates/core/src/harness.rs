//! Experiment orchestration: specs, replica dispatch, aggregation and file
//! output.
//!
//! Replica `i` of every group draws from stream `(seed, i)`. Replicas run on
//! a rayon pool and are merged in replica order, so outputs depend only on
//! the spec, never on the worker count.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::ballgame::{dominance_samples, Approach, DominanceReport};
use crate::config::Configuration;
use crate::coupling::EtaZetaCoupling;
use crate::error::{Error, Result};
use crate::observables::{fluid, sup_deviation, ETracker, OnesRecorder, Series};
use crate::oracle::{
    ctmc_mean_ones, death_law, exact_var_c0, expected_counts, ldp_constants, ldp_convergence,
    InitialLaw, CTMC_MAX_VERTICES,
};
use crate::rng::{RngStream, SimRng};
use crate::sim::{run, Engine, FlipRule, Simulation};
use crate::torus::TorusShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Simulate,
    Couple,
    Sweep,
    Ballgame,
    Oracle,
    Ldp,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Couple => "couple",
            Mode::Sweep => "sweep",
            Mode::Ballgame => "ballgame",
            Mode::Oracle => "oracle",
            Mode::Ldp => "ldp",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "simulate" => Mode::Simulate,
            "couple" => Mode::Couple,
            "sweep" => Mode::Sweep,
            "ballgame" => Mode::Ballgame,
            "oracle" => Mode::Oracle,
            "ldp" => Mode::Ldp,
            other => return Err(format!("unknown mode {other:?}")),
        })
    }
}

/// A validated experiment description.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSpec {
    pub mode: Mode,
    pub d: Vec<usize>,
    pub r: usize,
    pub p: Vec<f64>,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub replicas: usize,
    pub seed: u64,
    /// Number of points of the uniform reporting grid on `[0, T]`.
    pub grid: usize,
    #[serde(skip)]
    pub out: PathBuf,
    #[serde(skip)]
    pub workers: Option<usize>,
    /// Fixed initial state (vertex 0 first) instead of a product measure.
    pub init: Option<String>,
    #[serde(serialize_with = "ser_engine")]
    pub engine: Engine,
}

fn ser_engine<S: serde::Serializer>(e: &Engine, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(match e {
        Engine::ActiveSet => "active",
        Engine::Uniform => "uniform",
    })
}

/// Partially specified experiment: every field optional, so a config file
/// and command-line flags can be layered.
#[derive(Debug, Clone, Default)]
pub struct SpecInput {
    pub mode: Option<Mode>,
    pub d: Option<Vec<usize>>,
    pub r: Option<usize>,
    pub p: Option<Vec<f64>>,
    pub horizon: Option<f64>,
    pub replicas: Option<usize>,
    pub seed: Option<u64>,
    pub grid: Option<usize>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub init: Option<String>,
    pub engine: Option<Engine>,
}

fn parse_list<T: FromStr>(key: &str, v: &str, errs: &mut Vec<String>) -> Option<Vec<T>> {
    let items: std::result::Result<Vec<T>, _> = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect();
    match items {
        Ok(xs) => Some(xs),
        Err(_) => {
            errs.push(format!("{key}: cannot parse {v:?}"));
            None
        }
    }
}

fn parse_one<T: FromStr>(key: &str, v: &str, errs: &mut Vec<String>) -> Option<T> {
    match v.trim().parse() {
        Ok(x) => Some(x),
        Err(_) => {
            errs.push(format!("{key}: cannot parse {v:?}"));
            None
        }
    }
}

pub fn parse_engine(v: &str) -> std::result::Result<Engine, String> {
    match v {
        "active" => Ok(Engine::ActiveSet),
        "uniform" => Ok(Engine::Uniform),
        other => Err(format!("unknown engine {other:?} (active|uniform)")),
    }
}

impl SpecInput {
    /// Parses flat `key = value` lines; `#` starts a comment. Keys mirror
    /// the command-line flags.
    pub fn parse_kv(text: &str) -> Result<Self> {
        let mut s = SpecInput::default();
        let mut errs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                errs.push(format!("line {}: expected key=value", lineno + 1));
                continue;
            };
            let (k, v) = (k.trim(), v.trim());
            match k {
                "mode" => match v.parse() {
                    Ok(m) => s.mode = Some(m),
                    Err(e) => errs.push(format!("mode: {e}")),
                },
                "d" => s.d = parse_list(k, v, &mut errs),
                "r" => s.r = parse_one(k, v, &mut errs),
                "p" => s.p = parse_list(k, v, &mut errs),
                "T" | "t" => s.horizon = parse_one(k, v, &mut errs),
                "replicas" => s.replicas = parse_one(k, v, &mut errs),
                "seed" => s.seed = parse_one(k, v, &mut errs),
                "grid" => s.grid = parse_one(k, v, &mut errs),
                "out" => s.out = Some(PathBuf::from(v)),
                "workers" => s.workers = parse_one(k, v, &mut errs),
                "init" => s.init = Some(v.to_string()),
                "engine" => match parse_engine(v) {
                    Ok(e) => s.engine = Some(e),
                    Err(e) => errs.push(format!("engine: {e}")),
                },
                other => errs.push(format!("line {}: unknown key {other:?}", lineno + 1)),
            }
        }
        if errs.is_empty() {
            Ok(s)
        } else {
            Err(Error::Validation(errs))
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_kv(&text)
    }

    /// Fields set in `top` win.
    pub fn overlay(self, top: SpecInput) -> SpecInput {
        SpecInput {
            mode: top.mode.or(self.mode),
            d: top.d.or(self.d),
            r: top.r.or(self.r),
            p: top.p.or(self.p),
            horizon: top.horizon.or(self.horizon),
            replicas: top.replicas.or(self.replicas),
            seed: top.seed.or(self.seed),
            grid: top.grid.or(self.grid),
            out: top.out.or(self.out),
            workers: top.workers.or(self.workers),
            init: top.init.or(self.init),
            engine: top.engine.or(self.engine),
        }
    }

    /// Fills defaults and validates.
    pub fn build(self) -> Result<ExperimentSpec> {
        let mode = self
            .mode
            .ok_or_else(|| Error::Validation(vec!["mode: missing".into()]))?;
        let default_d = if mode == Mode::Sweep {
            vec![6, 8, 10]
        } else {
            vec![6]
        };
        let spec = ExperimentSpec {
            mode,
            d: self.d.unwrap_or(default_d),
            r: self.r.unwrap_or(2),
            p: self.p.unwrap_or_else(|| vec![0.2]),
            horizon: self.horizon.unwrap_or(1.0),
            replicas: self.replicas.unwrap_or(100),
            seed: self.seed.unwrap_or(0),
            grid: self.grid.unwrap_or(21),
            out: self.out.unwrap_or_else(|| PathBuf::from("out")),
            workers: self.workers,
            init: self.init,
            engine: self.engine.unwrap_or_default(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl ExperimentSpec {
    /// Collects every invalid field into one [`Error::Validation`].
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.d.is_empty() {
            errs.push("d: empty list".to_string());
        }
        if self.d.contains(&0) {
            errs.push("d: dimensions must be >= 1".to_string());
        }
        if self.r < 2 {
            errs.push(format!("r: must be >= 2, got {}", self.r));
        }
        if self.p.is_empty() {
            errs.push("p: empty list".to_string());
        }
        if let Some(p) = self.p.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            errs.push(format!("p: {p} outside [0, 1]"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            errs.push(format!(
                "T: must be positive and finite, got {}",
                self.horizon
            ));
        }
        if self.replicas < 1 {
            errs.push("replicas: must be >= 1".to_string());
        }
        if self.grid < 2 {
            errs.push(format!("grid: need at least 2 points, got {}", self.grid));
        }
        if self.workers == Some(0) {
            errs.push("workers: must be >= 1".to_string());
        }
        if self.mode == Mode::Sweep {
            if self.d.len() < 3 {
                errs.push(format!(
                    "d: sweep needs at least 3 dimensions, got {}",
                    self.d.len()
                ));
            }
            if self.d.windows(2).any(|w| w[0] >= w[1]) {
                errs.push("d: sweep list must be strictly increasing".to_string());
            }
        }
        if self.init.is_some() {
            if self.d.len() != 1 {
                errs.push("init: needs exactly one dimension".to_string());
            }
            if matches!(self.mode, Mode::Sweep | Mode::Ballgame | Mode::Ldp) {
                errs.push(format!("init: not supported in {} mode", self.mode));
            }
        }
        if matches!(self.mode, Mode::Ballgame | Mode::Ldp) {
            if let Some(p) = self.p.iter().find(|p| !(**p > 0.0 && **p < 0.5)) {
                errs.push(format!("p: {} mode needs 0 < p < 1/2, got {p}", self.mode));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    /// `grid` evenly spaced times from 0 to `T` inclusive.
    pub fn time_grid(&self) -> Vec<f64> {
        time_grid(self.horizon, self.grid)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(w) = self.workers {
            b = b.num_threads(w);
        }
        b.build()
            .map_err(|e| Error::Capacity(format!("cannot start worker pool: {e}")))
    }
}

pub fn time_grid(horizon: f64, points: usize) -> Vec<f64> {
    let last = (points - 1) as f64;
    (0..points)
        .map(|i| {
            if i + 1 == points {
                horizon
            } else {
                horizon * i as f64 / last
            }
        })
        .collect()
}

/// Mean, standard error and median of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    pub se: f64,
    pub median: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quantiles {
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn stats(xs: &[f64]) -> Stats {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Stats {
        n,
        mean,
        se: (var / n as f64).sqrt(),
        median: quantile_sorted(&sorted(xs), 0.5),
    }
}

pub fn quantiles(xs: &[f64]) -> Quantiles {
    let s = sorted(xs);
    Quantiles {
        q10: quantile_sorted(&s, 0.1),
        q50: quantile_sorted(&s, 0.5),
        q90: quantile_sorted(&s, 0.9),
        max: s.last().copied().unwrap_or(f64::NAN),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeStat {
    pub t: f64,
    pub mean: f64,
    pub se: f64,
}

/// Aggregates for one `(d, p)` group.
#[derive(Debug, Clone, Serialize)]
pub struct GroupSummary {
    pub d: usize,
    pub r: usize,
    pub p: f64,
    pub replicas: usize,
    pub stats: BTreeMap<String, Stats>,
    pub quantiles: BTreeMap<String, Quantiles>,
    /// Replica mean of `frac_ones` at each grid time.
    pub per_time: Vec<TimeStat>,
    pub values: BTreeMap<String, f64>,
}

/// Per-`p` trend of the sweep medians over the `d` list.
#[derive(Debug, Clone, Serialize)]
pub struct Trend {
    pub p: f64,
    pub d: Vec<usize>,
    pub median: Vec<f64>,
    pub p90: Vec<f64>,
    pub decreasing_pairs: usize,
    pub pairs: usize,
    pub strictly_decreasing: bool,
    /// Least-squares slope of `ln(median)` against `d`.
    pub log_slope: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub spec: ExperimentSpec,
    pub groups: Vec<GroupSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub trends: Vec<Trend>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub dominance: Vec<DominanceSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DominanceSummary {
    pub d: usize,
    pub p: f64,
    pub checks: usize,
    pub violations: usize,
}

/// One replica of a simulate/sweep/couple group, sampled on the grid.
#[derive(Debug, Clone)]
pub struct ReplicaTrace {
    pub replica: usize,
    pub frac: Vec<f64>,
    pub sup_deviation: f64,
    /// Mode-specific columns, each sampled on the grid.
    pub extras: Vec<Vec<f64>>,
}

/// Formats with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

const BASE_COLUMNS: [&str; 9] = [
    "mode",
    "d",
    "r",
    "p",
    "replica",
    "t",
    "frac_ones",
    "fluid",
    "deviation",
];

/// Extra column names per mode.
pub fn extra_columns(mode: Mode) -> &'static [&'static str] {
    match mode {
        Mode::Simulate | Mode::Sweep => &["ones", "e_frac", "sup_deviation"],
        Mode::Couple => &["death_frac", "death_mean", "violations", "sup_deviation"],
        Mode::Ballgame => &["e", "c_hat", "c_bar", "c_tilde"],
        Mode::Oracle => &[
            "death_mean",
            "death_var",
            "expected_c0",
            "var_c0",
            "ldp_k",
            "ldp_c",
        ],
        Mode::Ldp => &["ldp_k", "rate", "drift"],
    }
}

/// `(shape, p, fixed initial state)` for each group in spec order.
fn groups(spec: &ExperimentSpec) -> Result<Vec<(TorusShape, f64, Option<Configuration>)>> {
    let mut out = Vec::new();
    for &d in &spec.d {
        let shape = TorusShape::new(d, spec.r)?;
        if let Some(s) = &spec.init {
            let cfg = Configuration::parse(&shape, s)?;
            out.push((shape, cfg.fraction_ones(), Some(cfg)));
            continue;
        }
        for &p in &spec.p {
            out.push((shape.clone(), p, None));
        }
    }
    Ok(out)
}

fn initial(
    shape: &TorusShape,
    p: f64,
    init: &Option<Configuration>,
    rng: &mut SimRng,
) -> Result<Configuration> {
    match init {
        Some(c) => Ok(c.clone()),
        None => Configuration::sample_product(shape, p, rng),
    }
}

/// Replicas of the threshold voter model for one group.
pub fn simulate_group(
    spec: &ExperimentSpec,
    shape: &TorusShape,
    p: f64,
    init: &Option<Configuration>,
) -> Result<Vec<ReplicaTrace>> {
    let grid = spec.time_grid();
    let n = shape.n() as f64;
    let pool = spec.pool()?;
    pool.install(|| {
        (0..spec.replicas)
            .into_par_iter()
            .map(|i| {
                let mut rng = RngStream::new(spec.seed, i as u64).rng();
                let cfg = initial(shape, p, init, &mut rng)?;
                let mut ones = OnesRecorder::new();
                let mut e = ETracker::new();
                let mut sim = Simulation::with_engine(cfg, FlipRule::Threshold, spec.engine);
                run(&mut sim, spec.horizon, &mut [&mut ones, &mut e], &mut rng);
                let frac = ones.series().scaled(n);
                Ok(ReplicaTrace {
                    replica: i,
                    frac: frac.sample(&grid),
                    sup_deviation: sup_deviation(&frac, p),
                    extras: vec![
                        ones.series().sample(&grid),
                        e.series().scaled(n).sample(&grid),
                    ],
                })
            })
            .collect()
    })
}

/// Replicas of the threshold/death coupling for one group.
pub fn couple_group(
    spec: &ExperimentSpec,
    shape: &TorusShape,
    p: f64,
    init: &Option<Configuration>,
) -> Result<Vec<ReplicaTrace>> {
    let grid = spec.time_grid();
    let n = shape.n() as f64;
    let pool = spec.pool()?;
    pool.install(|| {
        (0..spec.replicas)
            .into_par_iter()
            .map(|i| {
                let mut rng = RngStream::new(spec.seed, i as u64).rng();
                let cfg = initial(shape, p, init, &mut rng)?;
                let tr = EtaZetaCoupling::new(cfg.clone(), cfg)?.run(spec.horizon, &mut rng);
                let upper: Vec<f64> = tr
                    .upper
                    .ones_at(&grid)
                    .into_iter()
                    .map(|c| c as f64 / n)
                    .collect();
                let lower: Vec<f64> = tr
                    .lower
                    .ones_at(&grid)
                    .into_iter()
                    .map(|c| c as f64 / n)
                    .collect();
                let mut series = Series::new(0.0, tr.upper.initial.fraction_ones(), spec.horizon);
                tr.upper.replay(|c, ev| {
                    if let Some(ev) = ev {
                        series.push(ev.time, c.fraction_ones());
                    }
                });
                Ok(ReplicaTrace {
                    replica: i,
                    frac: upper,
                    sup_deviation: sup_deviation(&series, p),
                    extras: vec![lower, vec![tr.violations as f64; grid.len()]],
                })
            })
            .collect()
    })
}

struct RowWriter {
    w: csv::Writer<fs::File>,
    path: PathBuf,
}

impl RowWriter {
    fn create(path: PathBuf, header: &[&str]) -> Result<Self> {
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(header).map_err(|e| csv_err(&path, e))?;
        Ok(Self { w, path })
    }

    fn row(&mut self, fields: &[String]) -> Result<()> {
        self.w
            .write_record(fields)
            .map_err(|e| csv_err(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

fn rows_header(mode: Mode) -> Vec<&'static str> {
    BASE_COLUMNS
        .iter()
        .chain(extra_columns(mode))
        .copied()
        .collect()
}

fn base_fields(
    spec: &ExperimentSpec,
    d: usize,
    p: f64,
    replica: Option<usize>,
    t: Option<f64>,
) -> Vec<String> {
    vec![
        spec.mode.name().to_string(),
        d.to_string(),
        spec.r.to_string(),
        fmt_f64(p),
        replica.map(|i| i.to_string()).unwrap_or_default(),
        t.map(fmt_f64).unwrap_or_default(),
    ]
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Runs the experiment and writes `rows.csv`, `summary.json` and, per
/// mode, `sweep.csv` or `dominance.csv` under `spec.out`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Summary> {
    spec.validate()?;
    // the rate computation needs no torus, so huge d is fine there
    let groups = if spec.mode == Mode::Ldp {
        Vec::new()
    } else {
        groups(spec)?
    };
    fs::create_dir_all(&spec.out).map_err(|e| Error::io(&spec.out, e))?;
    let mut rows = RowWriter::create(spec.out.join("rows.csv"), &rows_header(spec.mode))?;
    let mut summary = Summary {
        spec: spec.clone(),
        groups: Vec::new(),
        trends: Vec::new(),
        dominance: Vec::new(),
    };
    match spec.mode {
        Mode::Simulate | Mode::Sweep | Mode::Couple => {
            let grid = spec.time_grid();
            for (shape, p, init) in &groups {
                let traces = if spec.mode == Mode::Couple {
                    couple_group(spec, shape, *p, init)?
                } else {
                    simulate_group(spec, shape, *p, init)?
                };
                for tr in &traces {
                    for (j, &t) in grid.iter().enumerate() {
                        let fl = fluid(*p, t).value;
                        let mut f = base_fields(spec, shape.d(), *p, Some(tr.replica), Some(t));
                        f.push(fmt_f64(tr.frac[j]));
                        f.push(fmt_f64(fl));
                        f.push(fmt_f64((tr.frac[j] - fl).abs()));
                        if spec.mode == Mode::Couple {
                            f.push(fmt_f64(tr.extras[0][j]));
                            f.push(fmt_f64(tr.frac[0] * (-t).exp()));
                            f.push(fmt_f64(tr.extras[1][j]));
                        } else {
                            f.push(fmt_f64(tr.extras[0][j]));
                            f.push(fmt_f64(tr.extras[1][j]));
                        }
                        f.push(fmt_f64(tr.sup_deviation));
                        rows.row(&f)?;
                    }
                }
                summary
                    .groups
                    .push(summarize_traces(spec, shape, *p, &traces, &grid));
            }
            if spec.mode == Mode::Sweep {
                summary.trends = trends(&summary.groups);
                write_sweep(spec, &summary.trends)?;
            }
        }
        Mode::Ballgame => {
            let path = spec.out.join("dominance.csv");
            let mut dom = RowWriter::create(
                path,
                &["d", "p", "approach", "M", "survival", "stderr", "replicas"],
            )?;
            for (shape, p, _) in &groups {
                let pool = spec.pool()?;
                let samples = pool.install(|| {
                    dominance_samples(shape, *p, spec.horizon, spec.replicas, spec.seed)
                })?;
                let fl = fluid(*p, spec.horizon).value;
                for i in 0..spec.replicas {
                    let mut f = base_fields(spec, shape.d(), *p, Some(i), Some(spec.horizon));
                    f.push(fmt_f64(samples.frac_ones[i]));
                    f.push(fmt_f64(fl));
                    f.push(fmt_f64((samples.frac_ones[i] - fl).abs()));
                    for a in Approach::CHAIN {
                        f.push(fmt_f64(samples.get(a)[i]));
                    }
                    rows.row(&f)?;
                }
                let report: DominanceReport = samples.report(&samples.linear_grid(spec.grid));
                for row in &report.rows {
                    dom.row(&[
                        shape.d().to_string(),
                        fmt_f64(*p),
                        row.approach.to_string(),
                        fmt_f64(row.m),
                        fmt_f64(row.survival),
                        fmt_f64(row.stderr),
                        row.replicas.to_string(),
                    ])?;
                }
                let mut g = empty_group(spec, shape, *p);
                g.stats
                    .insert("final_frac".into(), stats(&samples.frac_ones));
                for a in Approach::CHAIN {
                    g.stats.insert(a.name().into(), stats(samples.get(a)));
                }
                summary.groups.push(g);
                summary.dominance.push(DominanceSummary {
                    d: shape.d(),
                    p: *p,
                    checks: report.orderings.len(),
                    violations: report.violations().count(),
                });
            }
            dom.finish()?;
        }
        Mode::Oracle => {
            let grid = spec.time_grid();
            for (shape, p, init) in &groups {
                let mut g = empty_group(spec, shape, *p);
                let n = shape.n() as f64;
                let law = match init {
                    Some(c) => InitialLaw::State(c.clone()),
                    None => InitialLaw::Product(*p),
                };
                let small = shape.n() <= CTMC_MAX_VERTICES;
                let c0 = expected_counts::<f64>(shape, *p, shape.d())?.c0;
                let var = exact_var_c0::<f64>(shape, *p)?;
                let ldp = ldp_constants::<f64>(*p, shape.r()).ok();
                g.values.insert("expected_c0".into(), c0);
                g.values.insert("var_c0".into(), var);
                if let Some(l) = ldp {
                    g.values.insert("ldp_k".into(), l.k);
                    g.values.insert("ldp_c".into(), l.c);
                }
                for &t in &grid {
                    let exact = if small {
                        Some(ctmc_mean_ones(shape, &law, t)? / n)
                    } else {
                        None
                    };
                    let fl = fluid(*p, t).value;
                    let death = death_law::<f64>(shape, *p, t)?;
                    let mut f = base_fields(spec, shape.d(), *p, None, Some(t));
                    f.push(opt(exact));
                    f.push(fmt_f64(fl));
                    f.push(opt(exact.map(|e| (e - fl).abs())));
                    f.push(fmt_f64(death.mean));
                    f.push(fmt_f64(death.variance));
                    f.push(fmt_f64(c0));
                    f.push(fmt_f64(var));
                    f.push(opt(ldp.map(|l| l.k)));
                    f.push(opt(ldp.map(|l| l.c)));
                    rows.row(&f)?;
                    if let Some(e) = exact {
                        g.per_time.push(TimeStat {
                            t,
                            mean: e,
                            se: 0.0,
                        });
                    }
                }
                summary.groups.push(g);
            }
        }
        Mode::Ldp => {
            let d_max = *spec.d.iter().max().expect("validated non-empty");
            for &p in &spec.p {
                let k = ldp_constants::<f64>(p, 2)?.k;
                let pts = ldp_convergence::<f64>(p, d_max)?;
                for pt in &pts {
                    let mut f = base_fields(spec, pt.d, p, None, None);
                    f.extend([String::new(), String::new(), String::new()]);
                    f.push(fmt_f64(k));
                    f.push(fmt_f64(pt.rate));
                    f.push(fmt_f64(pt.drift));
                    rows.row(&f)?;
                }
                let last = pts.last().expect("d_max >= 1");
                let mut g = GroupSummary {
                    d: last.d,
                    r: spec.r,
                    p,
                    replicas: 0,
                    stats: BTreeMap::new(),
                    quantiles: BTreeMap::new(),
                    per_time: Vec::new(),
                    values: BTreeMap::new(),
                };
                g.values.insert("ldp_k".into(), k);
                g.values.insert("rate".into(), last.rate);
                g.values.insert("drift".into(), last.drift);
                let tail = pts.iter().filter(|q| q.d >= 20).collect::<Vec<_>>();
                let monotone = tail
                    .windows(2)
                    .all(|w| w[1].drift.abs() <= w[0].drift.abs());
                g.values.insert(
                    "drift_monotone_from_20".into(),
                    f64::from(u8::from(monotone)),
                );
                summary.groups.push(g);
            }
        }
    }
    rows.finish()?;
    write_json(&spec.out.join("summary.json"), &summary)?;
    Ok(summary)
}

fn empty_group(spec: &ExperimentSpec, shape: &TorusShape, p: f64) -> GroupSummary {
    GroupSummary {
        d: shape.d(),
        r: shape.r(),
        p,
        replicas: spec.replicas,
        stats: BTreeMap::new(),
        quantiles: BTreeMap::new(),
        per_time: Vec::new(),
        values: BTreeMap::new(),
    }
}

/// Aggregates replica traces exactly as they appear in `rows.csv`.
pub fn summarize_traces(
    spec: &ExperimentSpec,
    shape: &TorusShape,
    p: f64,
    traces: &[ReplicaTrace],
    grid: &[f64],
) -> GroupSummary {
    let mut g = empty_group(spec, shape, p);
    let last = grid.len() - 1;
    let col = |f: &dyn Fn(&ReplicaTrace) -> f64| traces.iter().map(f).collect::<Vec<f64>>();
    let sup = col(&|t| t.sup_deviation);
    g.stats
        .insert("final_frac".into(), stats(&col(&|t| t.frac[last])));
    g.stats.insert("sup_deviation".into(), stats(&sup));
    g.quantiles.insert("sup_deviation".into(), quantiles(&sup));
    if spec.mode == Mode::Couple {
        g.stats.insert(
            "final_death_frac".into(),
            stats(&col(&|t| t.extras[0][last])),
        );
        let v: f64 = col(&|t| t.extras[1][last]).iter().sum();
        g.values.insert("violations".into(), v);
    } else {
        g.stats
            .insert("final_ones".into(), stats(&col(&|t| t.extras[0][last])));
        g.stats
            .insert("final_e_frac".into(), stats(&col(&|t| t.extras[1][last])));
    }
    g.per_time = grid
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let s = stats(&col(&|tr| tr.frac[j]));
            TimeStat {
                t,
                mean: s.mean,
                se: s.se,
            }
        })
        .collect();
    g
}

/// Per-`p` medians and 90th percentiles of the sup-deviation over `d`.
pub fn trends(groups: &[GroupSummary]) -> Vec<Trend> {
    let mut ps: Vec<f64> = Vec::new();
    for g in groups {
        if !ps.contains(&g.p) {
            ps.push(g.p);
        }
    }
    ps.into_iter()
        .map(|p| {
            let gs: Vec<&GroupSummary> = groups.iter().filter(|g| g.p == p).collect();
            let median: Vec<f64> = gs
                .iter()
                .map(|g| g.quantiles["sup_deviation"].q50)
                .collect();
            let p90: Vec<f64> = gs
                .iter()
                .map(|g| g.quantiles["sup_deviation"].q90)
                .collect();
            let d: Vec<usize> = gs.iter().map(|g| g.d).collect();
            let pairs = median.len().saturating_sub(1);
            let decreasing_pairs = median.windows(2).filter(|w| w[1] < w[0]).count();
            Trend {
                p,
                log_slope: log_slope(&d, &median),
                d,
                median,
                p90,
                decreasing_pairs,
                pairs,
                strictly_decreasing: decreasing_pairs == pairs,
            }
        })
        .collect()
}

fn log_slope(d: &[usize], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = d
        .iter()
        .zip(y)
        .filter(|(_, &v)| v > 0.0)
        .map(|(&d, &v)| (d as f64, v.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn write_sweep(spec: &ExperimentSpec, trends: &[Trend]) -> Result<()> {
    let mut w = RowWriter::create(
        spec.out.join("sweep.csv"),
        &["p", "d", "median_sup_deviation", "p90_sup_deviation"],
    )?;
    for tr in trends {
        for i in 0..tr.d.len() {
            w.row(&[
                fmt_f64(tr.p),
                tr.d[i].to_string(),
                fmt_f64(tr.median[i]),
                fmt_f64(tr.p90[i]),
            ])?;
        }
    }
    w.finish()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes())
        .and_then(|_| f.write_all(b"\n"))
        .map_err(|e| Error::io(path, e))
}

/// Process exit code for an error: 2 invalid input, 3 capacity, 4 I/O.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation(_)
        | Error::Domain(_)
        | Error::Precondition(_)
        | Error::Degenerate { .. } => 2,
        Error::Capacity(_) => 3,
        Error::Io { .. } => 4,
        Error::Consistency { .. } => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(mode: Mode) -> SpecInput {
        SpecInput {
            mode: Some(mode),
            ..SpecInput::default()
        }
    }

    #[test]
    fn kv_parsing_and_overlay() {
        let file = SpecInput::parse_kv(
            "# sweep\nmode = sweep\nd = 4,5,6\np=0.2\nT=0.5 # horizon\nreplicas=3\n",
        )
        .unwrap();
        let cli = SpecInput {
            replicas: Some(7),
            ..SpecInput::default()
        };
        let spec = file.overlay(cli).build().unwrap();
        assert_eq!(spec.mode, Mode::Sweep);
        assert_eq!(spec.d, vec![4, 5, 6]);
        assert_eq!(spec.horizon, 0.5);
        assert_eq!(spec.replicas, 7);
    }

    #[test]
    fn kv_errors_listed() {
        match SpecInput::parse_kv("d = x\nbogus = 1\nnoequals\n") {
            Err(Error::Validation(errs)) => assert_eq!(errs.len(), 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_collects_fields() {
        let mut s = input(Mode::Sweep);
        s.d = Some(vec![6, 6]);
        s.horizon = Some(0.0);
        s.replicas = Some(0);
        match s.build() {
            Err(Error::Validation(errs)) => {
                assert!(errs.iter().any(|e| e.starts_with("T:")));
                assert!(errs.iter().any(|e| e.starts_with("replicas:")));
                assert!(errs.iter().filter(|e| e.starts_with("d:")).count() == 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn grid_endpoints_exact() {
        let g = time_grid(2.0, 5);
        assert_eq!(g, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn stats_and_quantiles() {
        let s = stats(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.median, 2.5);
        assert!((s.se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        let q = quantiles(&[0.0, 10.0]);
        assert_eq!((q.q10, q.q90, q.max), (1.0, 9.0, 10.0));
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 123456.789, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Validation(vec![])), 2);
        assert_eq!(exit_code(&Error::Capacity(String::new())), 3);
        assert_eq!(exit_code(&Error::io("x", std::io::Error::other("boom"))), 4);
    }
}
