//! Coupled constructions on a shared clock.
//!
//! * [`EtaZetaCoupling`]: the threshold voter model (upper) and the death
//!   process (lower) driven by one rate-one clock per vertex. When the lower
//!   site is one and the ring flips both, the pair goes `(1,1) -> (·,0)`, so
//!   a single clock keeps `ζ ≤ η`.
//! * [`MonotoneCoupling`]: two threshold voter models started from densities
//!   `p1 ≤ p2` through common uniforms. Concordant sites share one clock and
//!   each marginal flips iff its own rate is one; discordant sites `(0,1)` get
//!   two independent clocks, one per marginal, so the order-breaking
//!   simultaneous flip `(0,1) -> (1,0)` cannot happen.
//!
//! Both maintain the union of the marginals' active clocks and count order
//! violations at every event (expected: none).

use rand::Rng;

use crate::config::{check_density, Configuration};
use crate::error::{Error, Result};
use crate::observables::Series;
use crate::rng::exp_variate;
use crate::sim::{threshold_rate, ActiveSet, FlipEvent, Trajectory};
use crate::torus::{TorusShape, VertexId};

/// Pointwise `lower ≤ upper`.
pub fn dominates(upper: &Configuration, lower: &Configuration) -> bool {
    upper.bits().iter().zip(lower.bits()).all(|(u, l)| l <= u)
}

/// What a ring did to each marginal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RingOutcome {
    pub vertex: VertexId,
    pub upper_flipped: bool,
    pub lower_flipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoupledStep {
    Event { time: f64, outcome: RingOutcome },
    Horizon,
    Absorbed,
}

/// Two marginal trajectories on a common time axis.
#[derive(Debug, Clone)]
pub struct CoupledTrajectory {
    pub upper: Trajectory,
    pub lower: Trajectory,
    /// Events after which `lower(x) > upper(x)` at the rung site.
    pub violations: usize,
}

struct Recorder {
    upper: Vec<FlipEvent>,
    lower: Vec<FlipEvent>,
}

impl Recorder {
    fn record(&mut self, time: f64, o: RingOutcome, upper: &Configuration, lower: &Configuration) {
        if o.upper_flipped {
            self.upper.push(FlipEvent {
                time,
                vertex: o.vertex,
                new_value: upper.get(o.vertex),
            });
        }
        if o.lower_flipped {
            self.lower.push(FlipEvent {
                time,
                vertex: o.vertex,
                new_value: lower.get(o.vertex),
            });
        }
    }
}

/// Threshold voter model over the death process.
#[derive(Debug, Clone)]
pub struct EtaZetaCoupling {
    upper: Configuration,
    lower: Configuration,
    time: f64,
    active: ActiveSet,
    violations: usize,
}

impl EtaZetaCoupling {
    /// Both marginals must start from the same configuration.
    pub fn new(eta: Configuration, zeta: Configuration) -> Result<Self> {
        if eta != zeta {
            return Err(Error::Precondition(
                "threshold and death marginals must start from identical states".into(),
            ));
        }
        let mut s = Self {
            active: ActiveSet::new(eta.shape().n()),
            upper: eta,
            lower: zeta,
            time: 0.0,
            violations: 0,
        };
        for x in s.upper.shape().clone().vertices() {
            s.refresh(x);
        }
        Ok(s)
    }

    pub fn upper(&self) -> &Configuration {
        &self.upper
    }

    pub fn lower(&self) -> &Configuration {
        &self.lower
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn violations(&self) -> usize {
        self.violations
    }

    fn refresh(&mut self, x: VertexId) {
        let on = threshold_rate(&self.upper, x) == 1 || self.lower.is_one(x);
        self.active.set(x.index(), on);
    }

    /// Applies one clock ring at `x`.
    pub fn ring(&mut self, x: VertexId) -> RingOutcome {
        let upper_flips = threshold_rate(&self.upper, x) == 1;
        let lower_flips = self.lower.is_one(x);
        if lower_flips {
            self.lower.flip(x);
        }
        if upper_flips {
            self.upper.flip(x);
            let shape = self.upper.shape().clone();
            shape.for_each_neighbor(x, |y| self.refresh(y));
        }
        self.refresh(x);
        if self.lower.get(x) > self.upper.get(x) {
            self.violations += 1;
        }
        RingOutcome {
            vertex: x,
            upper_flipped: upper_flips,
            lower_flipped: lower_flips,
        }
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R, horizon: f64) -> CoupledStep {
        if self.active.is_empty() {
            self.time = horizon;
            return CoupledStep::Absorbed;
        }
        let dt = exp_variate(rng, self.active.len() as f64);
        if self.time + dt > horizon {
            self.time = horizon;
            return CoupledStep::Horizon;
        }
        self.time += dt;
        let x = VertexId::from_index(self.active.sample(rng));
        CoupledStep::Event {
            time: self.time,
            outcome: self.ring(x),
        }
    }

    pub fn run<R: Rng + ?Sized>(mut self, horizon: f64, rng: &mut R) -> CoupledTrajectory {
        let upper0 = self.upper.clone();
        let lower0 = self.lower.clone();
        let mut rec = Recorder {
            upper: Vec::new(),
            lower: Vec::new(),
        };
        while let CoupledStep::Event { time, outcome } = self.step(rng, horizon) {
            rec.record(time, outcome, &self.upper, &self.lower);
        }
        CoupledTrajectory {
            upper: Trajectory {
                initial: upper0,
                events: rec.upper,
                horizon,
                first_rings: None,
            },
            lower: Trajectory {
                initial: lower0,
                events: rec.lower,
                horizon,
                first_rings: None,
            },
            violations: self.violations,
        }
    }
}

/// Samples `η_0 = ζ_0` from the product measure and runs the coupled pair.
pub fn coupled_run_eta_zeta<R: Rng + ?Sized>(
    shape: &TorusShape,
    p: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<CoupledTrajectory> {
    let eta = Configuration::sample_product(shape, p, rng)?;
    let zeta = eta.clone();
    Ok(EtaZetaCoupling::new(eta, zeta)?.run(horizon, rng))
}

/// Which clock of a site rang.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    /// The shared clock of a concordant site, or the lower marginal's own
    /// clock at a discordant site.
    Shared,
    /// The upper marginal's own clock at a discordant site.
    Upper,
}

/// Two threshold voter models ordered pointwise.
#[derive(Debug, Clone)]
pub struct MonotoneCoupling {
    upper: Configuration,
    lower: Configuration,
    time: f64,
    // clock id 2x: shared / lower-own, 2x+1: upper-own
    clocks: ActiveSet,
    violations: usize,
}

impl MonotoneCoupling {
    pub fn new(lower: Configuration, upper: Configuration) -> Result<Self> {
        if lower.shape() != upper.shape() {
            return Err(Error::Precondition(
                "marginals live on different tori".into(),
            ));
        }
        if !dominates(&upper, &lower) {
            return Err(Error::Precondition(
                "initial lower state exceeds the upper state".into(),
            ));
        }
        let mut s = Self {
            clocks: ActiveSet::new(2 * lower.shape().n()),
            upper,
            lower,
            time: 0.0,
            violations: 0,
        };
        for x in s.upper.shape().clone().vertices() {
            s.refresh(x);
        }
        Ok(s)
    }

    pub fn upper(&self) -> &Configuration {
        &self.upper
    }

    pub fn lower(&self) -> &Configuration {
        &self.lower
    }

    pub fn violations(&self) -> usize {
        self.violations
    }

    /// Total clock rate currently driving changes.
    pub fn total_rate(&self) -> usize {
        self.clocks.len()
    }

    fn refresh(&mut self, x: VertexId) {
        let l = threshold_rate(&self.lower, x) == 1;
        let u = threshold_rate(&self.upper, x) == 1;
        let i = 2 * x.index();
        if self.lower.get(x) == self.upper.get(x) {
            self.clocks.set(i, l || u);
            self.clocks.remove(i + 1);
        } else {
            self.clocks.set(i, l);
            self.clocks.set(i + 1, u);
        }
    }

    /// Applies a ring of the given clock at `x`.
    pub fn ring(&mut self, x: VertexId, channel: Channel) -> RingOutcome {
        let l = threshold_rate(&self.lower, x) == 1;
        let u = threshold_rate(&self.upper, x) == 1;
        let concordant = self.lower.get(x) == self.upper.get(x);
        let (lower_flips, upper_flips) = match (concordant, channel) {
            (true, Channel::Shared) => (l, u),
            (true, Channel::Upper) => (false, false),
            (false, Channel::Shared) => (l, false),
            (false, Channel::Upper) => (false, u),
        };
        if lower_flips {
            self.lower.flip(x);
        }
        if upper_flips {
            self.upper.flip(x);
        }
        if lower_flips || upper_flips {
            self.refresh(x);
            let shape = self.upper.shape().clone();
            shape.for_each_neighbor(x, |y| self.refresh(y));
        }
        if self.lower.get(x) > self.upper.get(x) {
            self.violations += 1;
        }
        RingOutcome {
            vertex: x,
            upper_flipped: upper_flips,
            lower_flipped: lower_flips,
        }
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R, horizon: f64) -> CoupledStep {
        if self.clocks.is_empty() {
            self.time = horizon;
            return CoupledStep::Absorbed;
        }
        let dt = exp_variate(rng, self.clocks.len() as f64);
        if self.time + dt > horizon {
            self.time = horizon;
            return CoupledStep::Horizon;
        }
        self.time += dt;
        let id = self.clocks.sample(rng);
        let channel = if id.is_multiple_of(2) {
            Channel::Shared
        } else {
            Channel::Upper
        };
        CoupledStep::Event {
            time: self.time,
            outcome: self.ring(VertexId::from_index(id / 2), channel),
        }
    }

    pub fn run<R: Rng + ?Sized>(mut self, horizon: f64, rng: &mut R) -> CoupledTrajectory {
        let upper0 = self.upper.clone();
        let lower0 = self.lower.clone();
        let mut rec = Recorder {
            upper: Vec::new(),
            lower: Vec::new(),
        };
        while let CoupledStep::Event { time, outcome } = self.step(rng, horizon) {
            rec.record(time, outcome, &self.upper, &self.lower);
        }
        CoupledTrajectory {
            upper: Trajectory {
                initial: upper0,
                events: rec.upper,
                horizon,
                first_rings: None,
            },
            lower: Trajectory {
                initial: lower0,
                events: rec.lower,
                horizon,
                first_rings: None,
            },
            violations: self.violations,
        }
    }
}

/// Product measures at densities `p1 ≤ p2` from one uniform per vertex.
pub fn sample_monotone_pair<R: Rng + ?Sized>(
    shape: &TorusShape,
    p1: f64,
    p2: f64,
    rng: &mut R,
) -> Result<(Configuration, Configuration)> {
    check_density(p1)?;
    check_density(p2)?;
    if p1 > p2 {
        return Err(Error::Precondition(format!(
            "monotone coupling needs p1 <= p2, got {p1} > {p2}"
        )));
    }
    let u: Vec<f64> = (0..shape.n()).map(|_| rng.gen()).collect();
    let lower: Vec<u8> = u.iter().map(|&x| u8::from(x < p1)).collect();
    let upper: Vec<u8> = u.iter().map(|&x| u8::from(x < p2)).collect();
    Ok((
        Configuration::from_bits(shape, &lower)?,
        Configuration::from_bits(shape, &upper)?,
    ))
}

pub fn coupled_run_monotone<R: Rng + ?Sized>(
    shape: &TorusShape,
    p1: f64,
    p2: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<CoupledTrajectory> {
    let (lower, upper) = sample_monotone_pair(shape, p1, p2, rng)?;
    Ok(MonotoneCoupling::new(lower, upper)?.run(horizon, rng))
}

/// Survival of one initially-occupied vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Survival {
    pub vertex: VertexId,
    /// First time the vertex is zero; `None` if still one at the horizon.
    pub tau: Option<f64>,
    /// First clock ring, when the trajectory tracked rings.
    pub first_ring: Option<f64>,
}

/// `τ_x` for every `x ∈ A_0`, censored at the horizon.
#[derive(Debug, Clone)]
pub struct SurvivalRecord {
    pub entries: Vec<Survival>,
    pub horizon: f64,
}

impl SurvivalRecord {
    /// `|F_t| = #{x ∈ A_0 : τ_x > t}` as a series.
    pub fn f_series(&self) -> Series {
        let mut taus: Vec<f64> = self.entries.iter().filter_map(|e| e.tau).collect();
        taus.sort_by(f64::total_cmp);
        let mut alive = self.entries.len() as f64;
        let mut s = Series::new(0.0, alive, self.horizon);
        for t in taus {
            alive -= 1.0;
            s.push(t, alive);
        }
        s
    }

    /// Entries violating `τ_x ≥ first ring` (only checkable with rings).
    pub fn ring_violations(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| match (e.tau, e.first_ring) {
                (Some(t), Some(r)) => t < r,
                (Some(_), None) => false,
                _ => false,
            })
            .count()
    }

    /// Empirical survival `|F_t| / |A_0|` against `e^{-t}` on a grid,
    /// optionally restricted to vertices with `keep[x]`.
    pub fn compare_with_exponential(
        &self,
        grid: &[f64],
        keep: Option<&[bool]>,
    ) -> Vec<(f64, f64, f64)> {
        let chosen: Vec<&Survival> = self
            .entries
            .iter()
            .filter(|e| keep.is_none_or(|k| k[e.vertex.index()]))
            .collect();
        let total = chosen.len().max(1) as f64;
        grid.iter()
            .map(|&t| {
                let alive = chosen
                    .iter()
                    .filter(|e| e.tau.is_none_or(|tau| tau > t))
                    .count() as f64;
                (t, alive / total, (-t).exp())
            })
            .collect()
    }
}

pub fn survival_times(tr: &Trajectory) -> SurvivalRecord {
    let n = tr.initial.shape().n();
    let mut tau: Vec<Option<f64>> = vec![None; n];
    for ev in &tr.events {
        let slot = &mut tau[ev.vertex.index()];
        if ev.new_value == 0 && slot.is_none() {
            *slot = Some(ev.time);
        }
    }
    let entries = tr
        .initial
        .shape()
        .vertices()
        .filter(|&x| tr.initial.is_one(x))
        .map(|x| Survival {
            vertex: x,
            tau: tau[x.index()],
            first_ring: tr
                .first_rings
                .as_ref()
                .map(|r| r[x.index()])
                .filter(|r| r.is_finite()),
        })
        .collect();
    SurvivalRecord {
        entries,
        horizon: tr.horizon,
    }
}
