//! Flip rules and the exact event-driven simulator.
//!
//! All flip rates in this crate are 0 or 1, so the Gillespie step reduces to
//! an exponential holding time with rate `|active|` followed by a uniform
//! draw from the active set. The [`Engine::Uniform`] variant instead rings a
//! uniform vertex at total rate `r^d` and discards rings at inactive sites;
//! both produce the same law.

use rand::Rng;

use crate::config::Configuration;
use crate::error::{Error, Result};
use crate::rng::exp_variate;
use crate::torus::VertexId;

/// Which spin system drives the configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlipRule {
    /// Flip at rate one iff at least `d` of the `2d` neighbor slots disagree.
    Threshold,
    /// Ones die at rate one; zeros are frozen.
    Death,
}

impl FlipRule {
    #[inline]
    pub fn rate(self, cfg: &Configuration, x: VertexId) -> u8 {
        match self {
            FlipRule::Threshold => threshold_rate(cfg, x),
            FlipRule::Death => death_rate(cfg, x),
        }
    }
}

/// Threshold voter flip rate at `x`.
#[inline]
pub fn threshold_rate(cfg: &Configuration, x: VertexId) -> u8 {
    let d = cfg.shape().d() as u32;
    let ones = cfg.ones_nbr(x);
    let disagree = if cfg.is_one(x) { 2 * d - ones } else { ones };
    u8::from(disagree >= d)
}

/// Death-process flip rate at `x`: its own state.
#[inline]
pub fn death_rate(cfg: &Configuration, x: VertexId) -> u8 {
    cfg.get(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlipEvent {
    pub time: f64,
    pub vertex: VertexId,
    pub new_value: u8,
}

/// Indexed set of vertices with O(1) insert, remove and uniform sampling.
#[derive(Debug, Clone)]
pub struct ActiveSet {
    members: Vec<u32>,
    pos: Vec<u32>,
}

const ABSENT: u32 = u32::MAX;

impl ActiveSet {
    pub fn new(capacity: usize) -> Self {
        Self {
            members: Vec::new(),
            pos: vec![ABSENT; capacity],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.members.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        self.pos[i] != ABSENT
    }

    #[inline]
    pub fn insert(&mut self, i: usize) {
        if self.pos[i] == ABSENT {
            self.pos[i] = self.members.len() as u32;
            self.members.push(i as u32);
        }
    }

    #[inline]
    pub fn remove(&mut self, i: usize) {
        let p = self.pos[i];
        if p != ABSENT {
            let last = self.members.pop().expect("non-empty");
            if last as usize != i {
                self.members[p as usize] = last;
                self.pos[last as usize] = p;
            }
            self.pos[i] = ABSENT;
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, active: bool) {
        if active {
            self.insert(i)
        } else {
            self.remove(i)
        }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.members[rng.gen_range(0..self.members.len())] as usize
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().map(|&i| i as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Engine {
    /// Gillespie over the set of vertices with rate one.
    #[default]
    ActiveSet,
    /// Rings at every vertex, rejecting those with rate zero.
    Uniform,
}

/// Outcome of a single [`Simulation::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    Event(FlipEvent),
    /// The next event would fall after the horizon; time is now the horizon.
    Horizon,
    /// No vertex can flip; time is now the horizon.
    Absorbed,
}

/// Live state of one trajectory.
#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: Configuration,
    rule: FlipRule,
    engine: Engine,
    time: f64,
    active: ActiveSet,
    first_ring: Option<Vec<f64>>,
}

impl Simulation {
    pub fn new(cfg: Configuration, rule: FlipRule) -> Self {
        Self::with_engine(cfg, rule, Engine::ActiveSet)
    }

    pub fn with_engine(cfg: Configuration, rule: FlipRule, engine: Engine) -> Self {
        let n = cfg.shape().n();
        let mut active = ActiveSet::new(n);
        for x in cfg.shape().vertices() {
            if rule.rate(&cfg, x) == 1 {
                active.insert(x.index());
            }
        }
        Self {
            cfg,
            rule,
            engine,
            time: 0.0,
            active,
            first_ring: None,
        }
    }

    /// Records the first clock ring of every vertex. Requires the uniform
    /// engine, which is the only one that realizes rings at inactive sites.
    pub fn track_first_rings(mut self) -> Result<Self> {
        if self.engine != Engine::Uniform {
            return Err(Error::Precondition(
                "first-ring tracking needs the uniform engine".into(),
            ));
        }
        self.first_ring = Some(vec![f64::INFINITY; self.cfg.shape().n()]);
        Ok(self)
    }

    pub fn config(&self) -> &Configuration {
        &self.cfg
    }

    pub fn into_config(self) -> Configuration {
        self.cfg
    }

    pub fn rule(&self) -> FlipRule {
        self.rule
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Total flip rate `Σ_x c(x, η)`.
    pub fn total_rate(&self) -> usize {
        self.active.len()
    }

    pub fn active(&self) -> &ActiveSet {
        &self.active
    }

    pub fn first_rings(&self) -> Option<&[f64]> {
        self.first_ring.as_deref()
    }

    fn refresh(&mut self, x: VertexId) {
        let r = self.rule.rate(&self.cfg, x);
        self.active.set(x.index(), r == 1);
    }

    fn apply(&mut self, x: VertexId) -> FlipEvent {
        self.cfg.flip(x);
        self.refresh(x);
        let shape = self.cfg.shape().clone();
        shape.for_each_neighbor(x, |y| self.refresh(y));
        FlipEvent {
            time: self.time,
            vertex: x,
            new_value: self.cfg.get(x),
        }
    }

    /// Advances to the next flip, or to `horizon` if none occurs first.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R, horizon: f64) -> Step {
        if self.active.is_empty() {
            self.finish_rings(rng, horizon);
            self.time = horizon;
            return Step::Absorbed;
        }
        match self.engine {
            Engine::ActiveSet => {
                let dt = exp_variate(rng, self.active.len() as f64);
                if self.time + dt > horizon {
                    self.time = horizon;
                    return Step::Horizon;
                }
                self.time += dt;
                let x = VertexId::from_index(self.active.sample(rng));
                Step::Event(self.apply(x))
            }
            Engine::Uniform => {
                let n = self.cfg.shape().n();
                loop {
                    let dt = exp_variate(rng, n as f64);
                    if self.time + dt > horizon {
                        self.time = horizon;
                        return Step::Horizon;
                    }
                    self.time += dt;
                    let x = rng.gen_range(0..n);
                    if let Some(rings) = self.first_ring.as_mut() {
                        if rings[x].is_infinite() {
                            rings[x] = self.time;
                        }
                    }
                    if self.active.contains(x) {
                        return Step::Event(self.apply(VertexId::from_index(x)));
                    }
                }
            }
        }
    }

    // After absorption no ring changes the state, but first rings in
    // (time, horizon] are still part of the record. Memorylessness lets us
    // draw them fresh.
    fn finish_rings<R: Rng + ?Sized>(&mut self, rng: &mut R, horizon: f64) {
        let now = self.time;
        if let Some(rings) = self.first_ring.as_mut() {
            for slot in rings.iter_mut().filter(|s| s.is_infinite()) {
                let t = now + exp_variate(rng, 1.0);
                if t <= horizon {
                    *slot = t;
                }
            }
        }
    }
}

/// Callback interface for streaming statistics out of a running trajectory.
pub trait Observer {
    fn on_start(&mut self, _cfg: &Configuration, _t: f64) {}
    fn on_event(&mut self, _cfg: &Configuration, _event: &FlipEvent) {}
    fn on_finish(&mut self, _cfg: &Configuration, _t: f64) {}
}

/// A recorded trajectory: the initial state and every flip up to `horizon`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub initial: Configuration,
    pub events: Vec<FlipEvent>,
    pub horizon: f64,
    /// First clock ring per vertex (`+inf` when none before the horizon),
    /// present only when the simulation tracked rings.
    pub first_rings: Option<Vec<f64>>,
}

impl Trajectory {
    /// Calls `f` on the initial configuration (with `None`) and then after
    /// every event.
    pub fn replay(&self, mut f: impl FnMut(&Configuration, Option<&FlipEvent>)) {
        let mut cfg = self.initial.clone();
        f(&cfg, None);
        for ev in &self.events {
            cfg.flip(ev.vertex);
            debug_assert_eq!(cfg.get(ev.vertex), ev.new_value);
            f(&cfg, Some(ev));
        }
    }

    pub fn final_config(&self) -> Configuration {
        let mut cfg = self.initial.clone();
        for ev in &self.events {
            cfg.flip(ev.vertex);
        }
        cfg
    }

    /// Configuration in force at time `t` (right-continuous).
    pub fn config_at(&self, t: f64) -> Configuration {
        let mut cfg = self.initial.clone();
        for ev in self.events.iter().take_while(|e| e.time <= t) {
            cfg.flip(ev.vertex);
        }
        cfg
    }

    /// `|A_t|` at each of the given nondecreasing times.
    pub fn ones_at(&self, times: &[f64]) -> Vec<usize> {
        let mut ones = self.initial.ones_count() as i64;
        let mut out = Vec::with_capacity(times.len());
        let mut k = 0;
        for &t in times {
            while k < self.events.len() && self.events[k].time <= t {
                ones += if self.events[k].new_value == 1 { 1 } else { -1 };
                k += 1;
            }
            out.push(ones as usize);
        }
        out
    }
}

/// Runs `sim` to `horizon`, feeding every observer at the start, after each
/// flip and at the end.
pub fn run<R: Rng + ?Sized>(
    sim: &mut Simulation,
    horizon: f64,
    observers: &mut [&mut dyn Observer],
    rng: &mut R,
) -> Trajectory {
    let initial = sim.config().clone();
    for o in observers.iter_mut() {
        o.on_start(sim.config(), sim.time());
    }
    let mut events = Vec::new();
    while let Step::Event(ev) = sim.step(rng, horizon) {
        for o in observers.iter_mut() {
            o.on_event(sim.config(), &ev);
        }
        events.push(ev);
    }
    for o in observers.iter_mut() {
        o.on_finish(sim.config(), horizon);
    }
    Trajectory {
        initial,
        events,
        horizon,
        first_rings: sim.first_rings().map(<[f64]>::to_vec),
    }
}
