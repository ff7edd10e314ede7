//! Set-valued observables of a configuration and their time series.
//!
//! With `n(x) = Σ_{y~x} η(y)` counted with multiplicity:
//! `A = {η = 1}`, `B = {η = 0}`, `C = {n ≥ d}`, `D = {n ≤ d}`,
//! `E_t = ∪_{s ≤ t} C_s`. `C ∩ D` is the set where `n = d` exactly.

use crate::config::Configuration;
use crate::scalar::Real;
use crate::sim::{FlipEvent, Observer, Trajectory};
use crate::torus::VertexId;

/// Piecewise-constant series: `values[i]` holds on `[times[i], times[i+1])`,
/// the last value up to and including `horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableSeries<F> {
    times: Vec<F>,
    values: Vec<F>,
    horizon: F,
}

impl<F: Real> ObservableSeries<F> {
    pub fn new(t0: F, v0: F, horizon: F) -> Self {
        Self {
            times: vec![t0],
            values: vec![v0],
            horizon,
        }
    }

    /// Appends a change point. Times must not decrease; a point at the same
    /// time as the previous one replaces its value.
    pub fn push(&mut self, t: F, v: F) {
        let last = *self.times.last().expect("series is never empty");
        assert!(t >= last, "series times must be nondecreasing");
        if t == last {
            *self.values.last_mut().unwrap() = v;
        } else {
            self.times.push(t);
            self.values.push(v);
        }
    }

    pub fn set_horizon(&mut self, horizon: F) {
        self.horizon = horizon;
    }

    pub fn times(&self) -> &[F] {
        &self.times
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn horizon(&self) -> F {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Right-continuous value at `t`.
    pub fn value_at(&self, t: F) -> F {
        let i = self.times.partition_point(|&s| s <= t);
        self.values[i.saturating_sub(1)]
    }

    /// Samples on a grid of nondecreasing times.
    pub fn sample(&self, grid: &[F]) -> Vec<F> {
        grid.iter().map(|&t| self.value_at(t)).collect()
    }

    /// Every value divided by `scale`.
    pub fn scaled(&self, scale: F) -> Self {
        Self {
            times: self.times.clone(),
            values: self.values.iter().map(|&v| v / scale).collect(),
            horizon: self.horizon,
        }
    }

    /// `(start, end, value)` for each constancy interval inside `[t0, horizon]`.
    pub fn intervals(&self) -> impl Iterator<Item = (F, F, F)> + '_ {
        (0..self.times.len()).map(move |i| {
            let end = self.times.get(i + 1).copied().unwrap_or(self.horizon);
            (self.times[i], end.min(self.horizon), self.values[i])
        })
    }
}

pub type Series = ObservableSeries<f64>;

/// A point on the fluid curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluidPoint<F> {
    pub value: F,
    /// `false` at `p = 1/2`, where only the mean is pinned down.
    pub concentrates: bool,
}

/// `p e^{-t}` below one half, `1 - (1-p) e^{-t}` above, `1/2` at one half.
pub fn fluid<F: Real>(p: F, t: F) -> FluidPoint<F> {
    let half = F::lit(0.5);
    if p < half {
        FluidPoint {
            value: p * (-t).exp(),
            concentrates: true,
        }
    } else if p > half {
        FluidPoint {
            value: F::one() - (F::one() - p) * (-t).exp(),
            concentrates: true,
        }
    } else {
        FluidPoint {
            value: half,
            concentrates: false,
        }
    }
}

/// Exact `sup_{0 ≤ t ≤ T} |fraction(t) - fluid(p, t)|` for a normalized
/// series, `T` its horizon. The fluid curve is monotone, so on each
/// constancy interval the supremum is attained at an endpoint.
pub fn sup_deviation<F: Real>(series: &ObservableSeries<F>, p: F) -> F {
    series
        .intervals()
        .map(|(a, b, v)| {
            let da = (v - fluid(p, a).value).abs();
            let db = (v - fluid(p, b).value).abs();
            da.max(db)
        })
        .fold(F::zero(), F::max)
}

/// Membership flags of one vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Membership {
    pub a: bool,
    pub b: bool,
    pub c: bool,
    pub d: bool,
}

#[inline]
pub fn membership(cfg: &Configuration, x: VertexId) -> Membership {
    let d = cfg.shape().d() as u32;
    let k = cfg.ones_nbr(x);
    let one = cfg.is_one(x);
    Membership {
        a: one,
        b: !one,
        c: k >= d,
        d: k <= d,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SetSizes {
    pub a: usize,
    pub b: usize,
    pub c: usize,
    pub d: usize,
    pub c_and_d: usize,
}

/// Full classification of a configuration.
#[derive(Debug, Clone)]
pub struct Classification {
    pub members: Vec<Membership>,
    pub sizes: SetSizes,
}

impl Classification {
    pub fn set(&self, pick: impl Fn(&Membership) -> bool) -> Vec<VertexId> {
        self.members
            .iter()
            .enumerate()
            .filter(|(_, m)| pick(m))
            .map(|(i, _)| VertexId::from_index(i))
            .collect()
    }
}

pub fn classify(cfg: &Configuration) -> Classification {
    let members: Vec<Membership> = cfg.shape().vertices().map(|x| membership(cfg, x)).collect();
    let mut sizes = SetSizes::default();
    for m in &members {
        sizes.a += usize::from(m.a);
        sizes.b += usize::from(m.b);
        sizes.c += usize::from(m.c);
        sizes.d += usize::from(m.d);
        sizes.c_and_d += usize::from(m.c && m.d);
    }
    Classification { members, sizes }
}

/// `h[k] = |H(k)|`, the number of vertices with exactly `k` one-neighbors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborHistogram {
    pub h: Vec<u64>,
}

impl NeighborHistogram {
    /// `|I(k)| = Σ_{l ≥ k} h[l]`.
    pub fn at_least(&self, k: usize) -> u64 {
        self.h.iter().skip(k).sum()
    }

    /// `|J(k)| = Σ_{l ≤ k} h[l]`.
    pub fn at_most(&self, k: usize) -> u64 {
        self.h.iter().take(k + 1).sum()
    }

    pub fn total(&self) -> u64 {
        self.h.iter().sum()
    }
}

pub fn neighbor_histogram(cfg: &Configuration) -> NeighborHistogram {
    let mut h = vec![0u64; cfg.shape().degree() + 1];
    for x in cfg.shape().vertices() {
        h[cfg.ones_nbr(x) as usize] += 1;
    }
    NeighborHistogram { h }
}

/// Tracks `E_t` incrementally: after a flip at `x` only the neighbors of `x`
/// change their one-neighbor count, so only they can join.
#[derive(Debug, Clone)]
pub struct ETracker {
    in_e: Vec<bool>,
    size: usize,
    series: Series,
}

impl ETracker {
    pub fn new() -> Self {
        Self {
            in_e: Vec::new(),
            size: 0,
            series: Series::new(0.0, 0.0, 0.0),
        }
    }

    pub fn contains(&self, x: VertexId) -> bool {
        self.in_e[x.index()]
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// `|E_t|` as a series of counts.
    pub fn series(&self) -> &Series {
        &self.series
    }

    pub fn members(&self) -> &[bool] {
        &self.in_e
    }
}

impl Default for ETracker {
    fn default() -> Self {
        Self::new()
    }
}

impl Observer for ETracker {
    fn on_start(&mut self, cfg: &Configuration, t: f64) {
        let d = cfg.shape().d() as u32;
        self.in_e = cfg
            .shape()
            .vertices()
            .map(|x| cfg.ones_nbr(x) >= d)
            .collect();
        self.size = self.in_e.iter().filter(|&&b| b).count();
        self.series = Series::new(t, self.size as f64, t);
    }

    fn on_event(&mut self, cfg: &Configuration, ev: &FlipEvent) {
        if ev.new_value == 0 {
            return;
        }
        let d = cfg.shape().d() as u32;
        let before = self.size;
        cfg.shape().for_each_neighbor(ev.vertex, |y| {
            let slot = &mut self.in_e[y.index()];
            if !*slot && cfg.ones_nbr(y) >= d {
                *slot = true;
                self.size += 1;
            }
        });
        if self.size != before {
            self.series.push(ev.time, self.size as f64);
        }
    }

    fn on_finish(&mut self, _cfg: &Configuration, t: f64) {
        self.series.set_horizon(t);
    }
}

/// Records `|A_t|` at every event.
#[derive(Debug, Clone)]
pub struct OnesRecorder {
    series: Series,
}

impl OnesRecorder {
    pub fn new() -> Self {
        Self {
            series: Series::new(0.0, 0.0, 0.0),
        }
    }

    pub fn series(&self) -> &Series {
        &self.series
    }
}

impl Default for OnesRecorder {
    fn default() -> Self {
        Self::new()
    }
}

impl Observer for OnesRecorder {
    fn on_start(&mut self, cfg: &Configuration, t: f64) {
        self.series = Series::new(t, cfg.ones_count() as f64, t);
    }

    fn on_event(&mut self, cfg: &Configuration, ev: &FlipEvent) {
        self.series.push(ev.time, cfg.ones_count() as f64);
    }

    fn on_finish(&mut self, _cfg: &Configuration, t: f64) {
        self.series.set_horizon(t);
    }
}

/// `|A_t|` series of a recorded trajectory.
pub fn ones_series(tr: &Trajectory) -> Series {
    let mut ones = tr.initial.ones_count() as f64;
    let mut s = Series::new(0.0, ones, tr.horizon);
    for ev in &tr.events {
        ones += if ev.new_value == 1 { 1.0 } else { -1.0 };
        s.push(ev.time, ones);
    }
    s
}

/// `|E_t|` series and final membership of `E_T`, by replay.
pub fn accumulate_e(tr: &Trajectory) -> ETracker {
    let mut e = ETracker::new();
    let mut started = false;
    tr.replay(|cfg, ev| match ev {
        None => {
            e.on_start(cfg, 0.0);
            started = true;
        }
        Some(ev) => e.on_event(cfg, ev),
    });
    debug_assert!(started);
    e.on_finish(&tr.final_config(), tr.horizon);
    e
}
