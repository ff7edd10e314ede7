//! Balls in `2d+1` boxes: vertex `y` is a ball sitting in box `b_k` when it
//! has `k` one-neighbors.
//!
//! * approach 1 replays a trajectory exactly (each flip moves `2d` balls one
//!   box),
//! * approach 2 moves `2d` balls rightward at rate `Ĉ = Σ_{k≥d} b_k`,
//!   always taking the balls nearest to `b_d`,
//! * approach 3 first lumps boxes `⌊2dp₀⌋..d-1` into `b_d`, then runs
//!   approach 2,
//! * approach 4 replaces the boxes by a single count that gains `2d` balls
//!   after each `m = ⌊d(1-2p₀)⌋` exponential waiting steps.
//!
//! [`dominance_experiment`] compares the tails of `|E_T|`, `Ĉ_T`, `C̄_T` and
//! `C̃_T` by Monte Carlo.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Configuration;
use crate::error::{Error, Result};
use crate::observables::{neighbor_histogram, ETracker, Series};
use crate::rng::{exp_variate, RngStream, SimRng};
use crate::scalar::floor_tol;
use crate::sim::{run, FlipRule, Simulation, Trajectory};
use crate::torus::{TorusShape, VertexId};

#[derive(Debug, Clone, PartialEq)]
pub struct BoxState {
    pub counts: Vec<u64>,
    pub time: f64,
}

impl BoxState {
    /// Empty boxes `b_0..b_{2d}`.
    pub fn empty(d: usize) -> Self {
        Self {
            counts: vec![0; 2 * d + 1],
            time: 0.0,
        }
    }

    pub fn from_counts(counts: Vec<u64>) -> Result<Self> {
        if counts.len() < 3 || counts.len().is_multiple_of(2) {
            return Err(Error::domain(format!(
                "box vector must have odd length 2d+1 >= 3, got {}",
                counts.len()
            )));
        }
        Ok(Self { counts, time: 0.0 })
    }

    pub fn d(&self) -> usize {
        (self.counts.len() - 1) / 2
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `Ĉ = Σ_{k ≥ d} b_k`.
    pub fn c_hat(&self) -> u64 {
        self.at_least(self.d())
    }

    pub fn at_least(&self, k: usize) -> u64 {
        self.counts.iter().skip(k).sum()
    }

    /// Exact move for a flip at `x` in `before` (the pre-flip state): the
    /// ball of every neighbor slot moves one box right on `0 → 1`, left on
    /// `1 → 0`.
    pub fn apply_flip(&mut self, before: &Configuration, x: VertexId) {
        let up = !before.is_one(x);
        for (y, mult) in before.shape().neighbor_multiplicities(x) {
            let k = before.ones_nbr(y) as usize;
            self.counts[k] -= 1;
            if up {
                self.counts[k + mult] += 1;
            } else {
                self.counts[k - mult] += 1;
            }
        }
    }
}

/// `b_k = |H(k)|`.
pub fn boxes_from_config(cfg: &Configuration) -> BoxState {
    BoxState {
        counts: neighbor_histogram(cfg).h,
        time: 0.0,
    }
}

/// Approach 1: box states before the first event and after every event.
pub fn approach1_replay(tr: &Trajectory) -> Vec<BoxState> {
    let mut cfg = tr.initial.clone();
    let mut state = boxes_from_config(&cfg);
    let mut out = Vec::with_capacity(tr.events.len() + 1);
    out.push(state.clone());
    for ev in &tr.events {
        state.apply_flip(&cfg, ev.vertex);
        state.time = ev.time;
        cfg.flip(ev.vertex);
        out.push(state.clone());
    }
    out
}

/// One approach-2 move of `2d` balls.
pub fn approach2_move<R: Rng + ?Sized>(b: &mut BoxState, rng: &mut R) {
    let d = b.d();
    let need = 2 * d as u64;
    let below: u64 = b.counts[..d].iter().sum();
    if below >= need {
        let mut left = need;
        for j in (0..d).rev() {
            let take = b.counts[j].min(left);
            b.counts[j] -= take;
            b.counts[j + 1] += take;
            left -= take;
            if left == 0 {
                break;
            }
        }
        return;
    }
    for j in (0..d).rev() {
        let c = b.counts[j];
        b.counts[j] = 0;
        b.counts[j + 1] += c;
    }
    let top = 2 * d;
    for _ in 0..need - below {
        let pool = b.c_hat();
        if pool == 0 {
            break;
        }
        let mut pick = rng.gen_range(0..pool);
        for k in d..=top {
            if pick < b.counts[k] {
                b.counts[k] -= 1;
                b.counts[top] += 1;
                break;
            }
            pick -= b.counts[k];
        }
    }
}

#[derive(Debug, Clone)]
pub struct Approach2Run {
    /// `Ĉ_t` (or `C̄_t` when started from [`approach3_init`]).
    pub series: Series,
    pub state: BoxState,
    pub moves: usize,
}

/// Approach 2 on `[0, horizon]`. Frozen when `Ĉ_0 = 0`.
pub fn approach2_run<R: Rng + ?Sized>(
    initial: BoxState,
    horizon: f64,
    rng: &mut R,
) -> Approach2Run {
    let mut b = initial;
    let total = b.total();
    let t0 = b.time;
    let mut series = Series::new(t0, b.c_hat() as f64, horizon);
    let mut moves = 0;
    loop {
        let rate = b.c_hat();
        if rate == 0 {
            break;
        }
        let dt = exp_variate(rng, rate as f64);
        if b.time + dt > horizon {
            break;
        }
        b.time += dt;
        approach2_move(&mut b, rng);
        moves += 1;
        assert!(b.c_hat() >= rate, "approach-2 count decreased");
        debug_assert_eq!(b.total(), total);
        series.push(b.time, b.c_hat() as f64);
    }
    b.time = horizon;
    Approach2Run {
        series,
        state: b,
        moves,
    }
}

/// `p₀ = 1/4 + p/2`.
pub fn p0(p: f64) -> f64 {
    0.25 + 0.5 * p
}

fn check_subcritical(p: f64) -> Result<()> {
    if !(0.0..0.5).contains(&p) {
        return Err(Error::domain(format!("need 0 <= p < 1/2, got {p}")));
    }
    Ok(())
}

/// First box lumped by approach 3: `⌊2dp₀⌋`.
pub fn lump_start(d: usize, p: f64) -> usize {
    floor_tol(2.0 * d as f64 * p0(p)).max(0) as usize
}

/// Approach 3: empties boxes `⌊2dp₀⌋..d-1` into `b_d`.
pub fn approach3_init(mut b: BoxState, p: f64) -> Result<BoxState> {
    check_subcritical(p)?;
    let d = b.d();
    let lo = lump_start(d, p);
    for k in lo..d {
        let c = b.counts[k];
        b.counts[k] = 0;
        b.counts[d] += c;
    }
    Ok(b)
}

/// `m = ⌊d(1-2p₀)⌋`, the number of unit exponentials per jump.
pub fn steps_per_jump(d: usize, p: f64) -> Result<usize> {
    check_subcritical(p)?;
    let m = |d: usize| floor_tol(d as f64 * (1.0 - 2.0 * p0(p))).max(0) as usize;
    let got = m(d);
    if got == 0 {
        let min_d = (d + 1..).find(|&k| m(k) >= 1).expect("m grows with d");
        return Err(Error::Degenerate { d, p, min_d });
    }
    Ok(got)
}

/// Approach 4: a single box with jump times `t_j`.
#[derive(Debug, Clone)]
pub struct SingleBoxProcess {
    pub d: usize,
    pub p0: f64,
    pub m: usize,
    pub i0: u64,
    pub taus: Vec<f64>,
    pub jump_times: Vec<f64>,
    pub horizon: f64,
}

impl SingleBoxProcess {
    /// `E[τ_j] = m / (I₀ + 2d(j-1))`, `j ≥ 1`.
    pub fn expected_tau(&self, j: usize) -> f64 {
        self.m as f64 / (self.i0 as f64 + 2.0 * self.d as f64 * (j as f64 - 1.0))
    }

    /// `C̃_t = I₀ + 2d · #{j : t_j ≤ t}`.
    pub fn count_at(&self, t: f64) -> u64 {
        let jumps = self.jump_times.partition_point(|&tj| tj <= t) as u64;
        self.i0 + 2 * self.d as u64 * jumps
    }

    pub fn final_count(&self) -> u64 {
        self.count_at(self.horizon)
    }

    pub fn series(&self) -> Series {
        let mut s = Series::new(0.0, self.i0 as f64, self.horizon);
        for (j, &t) in self.jump_times.iter().enumerate() {
            s.push(t, (self.i0 + 2 * self.d as u64 * (j as u64 + 1)) as f64);
        }
        s
    }

    /// `τ_j / E[τ_j]` for the completed jumps.
    pub fn ratios(&self) -> Vec<f64> {
        self.taus
            .iter()
            .enumerate()
            .map(|(i, &t)| t / self.expected_tau(i + 1))
            .collect()
    }
}

fn draw_tau<R: Rng + ?Sized>(m: usize, count: u64, rng: &mut R) -> f64 {
    (0..m).map(|_| exp_variate(rng, 1.0)).sum::<f64>() / count as f64
}

/// Approach 4 on `[0, horizon]`. Frozen when `I₀ = 0`.
pub fn approach4_run<R: Rng + ?Sized>(
    i0: u64,
    d: usize,
    p: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<SingleBoxProcess> {
    let m = steps_per_jump(d, p)?;
    let mut proc = SingleBoxProcess {
        d,
        p0: p0(p),
        m,
        i0,
        taus: Vec::new(),
        jump_times: Vec::new(),
        horizon,
    };
    if i0 == 0 {
        return Ok(proc);
    }
    let mut t = 0.0;
    let mut count = i0;
    loop {
        let tau = draw_tau(m, count, rng);
        if t + tau > horizon {
            break;
        }
        t += tau;
        proc.taus.push(tau);
        proc.jump_times.push(t);
        count += 2 * d as u64;
    }
    Ok(proc)
}

/// `τ_j / E[τ_j]` for a fixed number of jumps, free of horizon selection.
pub fn tau_ratios<R: Rng + ?Sized>(
    i0: u64,
    d: usize,
    p: f64,
    jumps: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let m = steps_per_jump(d, p)?;
    if i0 == 0 {
        return Err(Error::domain("I0 = 0: the single-box process never jumps"));
    }
    Ok((0..jumps)
        .map(|j| {
            let count = i0 + 2 * d as u64 * j as u64;
            draw_tau(m, count, rng) * count as f64 / m as f64
        })
        .collect())
}

/// The four processes of the dominance chain, in chain order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Approach {
    E,
    CHat,
    CBar,
    CTilde,
}

impl Approach {
    pub const CHAIN: [Approach; 4] = [
        Approach::E,
        Approach::CHat,
        Approach::CBar,
        Approach::CTilde,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Approach::E => "E",
            Approach::CHat => "C_hat",
            Approach::CBar => "C_bar",
            Approach::CTilde => "C_tilde",
        }
    }
}

/// Terminal values at `T`, one vector per process, replica order.
#[derive(Debug, Clone)]
pub struct DominanceSamples {
    pub e: Vec<f64>,
    /// Fraction of ones at `T` in the replicas behind [`Self::e`].
    pub frac_ones: Vec<f64>,
    pub c_hat: Vec<f64>,
    pub c_bar: Vec<f64>,
    pub c_tilde: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DominanceRow {
    pub approach: &'static str,
    #[serde(rename = "M")]
    pub m: f64,
    pub survival: f64,
    pub stderr: f64,
    pub replicas: usize,
}

/// `P(lower > M) ≤ P(upper > M)` within two combined standard errors.
#[derive(Debug, Clone, Serialize)]
pub struct OrderingCheck {
    pub lower: &'static str,
    pub upper: &'static str,
    #[serde(rename = "M")]
    pub m: f64,
    pub excess: f64,
    pub combined_se: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DominanceReport {
    pub rows: Vec<DominanceRow>,
    pub orderings: Vec<OrderingCheck>,
}

impl DominanceReport {
    pub fn violations(&self) -> impl Iterator<Item = &OrderingCheck> {
        self.orderings.iter().filter(|o| !o.holds)
    }
}

fn survival(xs: &[f64], m: f64) -> (f64, f64) {
    let n = xs.len() as f64;
    let s = xs.iter().filter(|&&x| x > m).count() as f64 / n;
    (s, (s * (1.0 - s) / n).sqrt())
}

impl DominanceSamples {
    pub fn get(&self, a: Approach) -> &[f64] {
        match a {
            Approach::E => &self.e,
            Approach::CHat => &self.c_hat,
            Approach::CBar => &self.c_bar,
            Approach::CTilde => &self.c_tilde,
        }
    }

    /// Largest terminal value over all processes.
    pub fn max_value(&self) -> f64 {
        Approach::CHAIN
            .iter()
            .flat_map(|&a| self.get(a).iter().copied())
            .fold(0.0, f64::max)
    }

    /// `points` evenly spaced values from 0 to [`Self::max_value`].
    pub fn linear_grid(&self, points: usize) -> Vec<f64> {
        let hi = self.max_value();
        match points {
            0 => Vec::new(),
            1 => vec![0.0],
            _ => (0..points)
                .map(|i| hi * i as f64 / (points - 1) as f64)
                .collect(),
        }
    }

    pub fn report(&self, grid: &[f64]) -> DominanceReport {
        let mut rows = Vec::new();
        let mut orderings = Vec::new();
        for &m in grid {
            let surv: Vec<(f64, f64)> = Approach::CHAIN
                .iter()
                .map(|&a| survival(self.get(a), m))
                .collect();
            for (a, &(s, se)) in Approach::CHAIN.iter().zip(&surv) {
                rows.push(DominanceRow {
                    approach: a.name(),
                    m,
                    survival: s,
                    stderr: se,
                    replicas: self.get(*a).len(),
                });
            }
            for i in 0..3 {
                let (sl, el) = surv[i];
                let (su, eu) = surv[i + 1];
                let combined_se = el.hypot(eu);
                let excess = sl - su;
                orderings.push(OrderingCheck {
                    lower: Approach::CHAIN[i].name(),
                    upper: Approach::CHAIN[i + 1].name(),
                    m,
                    excess,
                    combined_se,
                    holds: excess <= 2.0 * combined_se,
                });
            }
        }
        DominanceReport { rows, orderings }
    }
}

/// Checks `0 < p < 1/2`, `4p(1-p) > 1/r` and `m ≥ 1`.
pub fn check_dominance_preconditions(shape: &TorusShape, p: f64) -> Result<()> {
    if !(p > 0.0 && p < 0.5) {
        return Err(Error::domain(format!(
            "dominance chain needs 0 < p < 1/2, got {p}"
        )));
    }
    if 4.0 * p * (1.0 - p) <= 1.0 / shape.r() as f64 {
        return Err(Error::domain(format!(
            "dominance chain needs 4p(1-p) > 1/r; 4p(1-p) = {} at p = {p}, r = {}",
            4.0 * p * (1.0 - p),
            shape.r()
        )));
    }
    steps_per_jump(shape.d(), p).map_err(|e| Error::domain(e.to_string()))?;
    Ok(())
}

/// Terminal values of the four processes from independent product-measure
/// starts. Replica `i` of process `a` uses stream `(seed, i)`, lane `a`.
pub fn dominance_samples(
    shape: &TorusShape,
    p: f64,
    horizon: f64,
    replicas: usize,
    seed: u64,
) -> Result<DominanceSamples> {
    check_dominance_preconditions(shape, p)?;
    let d = shape.d();
    let lo = lump_start(d, p);
    let start = |i: usize, lane: u64| -> Result<(Configuration, SimRng)> {
        let mut rng = RngStream::new(seed, i as u64).substream(lane).rng();
        let cfg = Configuration::sample_product(shape, p, &mut rng)?;
        Ok((cfg, rng))
    };
    let full: Vec<(f64, f64)> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let (cfg, mut rng) = start(i, 0)?;
            let mut e = ETracker::new();
            let mut sim = Simulation::new(cfg, FlipRule::Threshold);
            run(&mut sim, horizon, &mut [&mut e], &mut rng);
            Ok((e.size() as f64, sim.config().fraction_ones()))
        })
        .collect::<Result<_>>()?;
    let column = |lane: u64| -> Result<Vec<f64>> {
        (0..replicas)
            .into_par_iter()
            .map(|i| {
                let (cfg, mut rng) = start(i, lane)?;
                Ok(match lane {
                    1 => approach2_run(boxes_from_config(&cfg), horizon, &mut rng)
                        .state
                        .c_hat() as f64,
                    2 => {
                        let b = approach3_init(boxes_from_config(&cfg), p)?;
                        approach2_run(b, horizon, &mut rng).state.c_hat() as f64
                    }
                    _ => {
                        let i0 = neighbor_histogram(&cfg).at_least(lo);
                        approach4_run(i0, d, p, horizon, &mut rng)?.final_count() as f64
                    }
                })
            })
            .collect()
    };
    Ok(DominanceSamples {
        e: full.iter().map(|v| v.0).collect(),
        frac_ones: full.iter().map(|v| v.1).collect(),
        c_hat: column(1)?,
        c_bar: column(2)?,
        c_tilde: column(3)?,
    })
}

/// [`dominance_samples`] summarized on `grid`, or on a linear grid of
/// `points` values up to the largest observation when `grid` is `None`.
pub fn dominance_experiment(
    shape: &TorusShape,
    p: f64,
    horizon: f64,
    replicas: usize,
    grid: Option<&[f64]>,
    points: usize,
    seed: u64,
) -> Result<DominanceReport> {
    let samples = dominance_samples(shape, p, horizon, replicas, seed)?;
    Ok(match grid {
        Some(g) => samples.report(g),
        None => samples.report(&samples.linear_grid(points)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bs(v: &[u64]) -> BoxState {
        BoxState::from_counts(v.to_vec()).unwrap()
    }

    #[test]
    fn boxes_examples() {
        let s = TorusShape::new(3, 3).unwrap();
        assert_eq!(boxes_from_config(&Configuration::zeros(&s)).counts[0], 27);
        let s = TorusShape::new(1, 4).unwrap();
        let c = Configuration::parse(&s, "1000").unwrap();
        assert_eq!(boxes_from_config(&c).counts, vec![2, 2, 0]);
    }

    #[test]
    fn single_flip_moves_expected_balls() {
        let s = TorusShape::new(3, 3).unwrap();
        let mut rng = RngStream::new(8, 0).rng();
        let cfg = Configuration::sample_product(&s, 0.4, &mut rng).unwrap();
        for x in s.vertices() {
            let mut b = boxes_from_config(&cfg);
            b.apply_flip(&cfg, x);
            let mut after = cfg.clone();
            after.flip(x);
            assert_eq!(b.counts, boxes_from_config(&after).counts);
            if !cfg.is_one(x) {
                let crossing = s
                    .neighbors(x)
                    .iter()
                    .filter(|&&y| cfg.ones_nbr(y) == 2)
                    .count() as u64;
                assert_eq!(b.c_hat(), boxes_from_config(&cfg).c_hat() + crossing);
            }
        }
    }

    #[test]
    fn approach2_partial_drain() {
        let mut b = bs(&[0, 5, 0, 9, 2]);
        assert_eq!(b.c_hat(), 11);
        approach2_move(&mut b, &mut RngStream::new(0, 0).rng());
        assert_eq!(b.counts, vec![0, 1, 4, 9, 2]);
    }

    #[test]
    fn approach2_drains_top_down() {
        let mut b = bs(&[3, 2, 1, 0, 0, 0, 4]);
        approach2_move(&mut b, &mut RngStream::new(0, 0).rng());
        // needs 6: b_2 (1) then b_1 (2) then 3 of b_0
        assert_eq!(b.counts, vec![0, 3, 2, 1, 0, 0, 4]);
    }

    #[test]
    fn approach2_shift_branch() {
        for seed in 0..20 {
            let mut b = bs(&[1, 2, 0, 3, 1]);
            approach2_move(&mut b, &mut RngStream::new(seed, 0).rng());
            assert_eq!(&b.counts[..2], &[0, 1]);
            assert_eq!(b.total(), 7);
            assert_eq!(b.c_hat(), 6);
            // one ball moved into b_4 from b_2..b_4
            let moved = [[0, 1, 1, 3, 2], [0, 1, 2, 2, 2], [0, 1, 2, 3, 1]];
            assert!(moved.iter().any(|m| b.counts == m), "{:?}", b.counts);
        }
    }

    #[test]
    fn approach2_frozen_and_monotone() {
        let mut rng = RngStream::new(1, 0).rng();
        let r = approach2_run(bs(&[5, 0, 0]), 10.0, &mut rng);
        assert_eq!(r.moves, 0);
        assert_eq!(r.series.values(), &[0.0]);
        let s = TorusShape::new(3, 3).unwrap();
        let cfg = Configuration::sample_product(&s, 0.3, &mut rng).unwrap();
        let b = boxes_from_config(&cfg);
        let r = approach2_run(b, 1.0, &mut rng);
        assert_eq!(r.state.total(), 27);
        assert!(r.series.values().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn approach3_lumping() {
        assert_eq!(lump_start(5, 0.3), 4);
        assert_eq!(lump_start(10, 0.3), 8);
        let b = approach3_init(
            bs(&[
                1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1,
            ]),
            0.3,
        )
        .unwrap();
        assert_eq!(b.counts[8], 0);
        assert_eq!(b.counts[9], 0);
        assert_eq!(b.counts[10], 3);
        assert_eq!(b.total(), 21);
        let id = bs(&[0, 0, 3, 1, 2]);
        assert_eq!(approach3_init(id.clone(), 0.1).unwrap(), id);
        assert!(matches!(approach3_init(id, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn approach4_examples() {
        assert_eq!(steps_per_jump(10, 0.3).unwrap(), 2);
        match steps_per_jump(5, 0.45) {
            Err(Error::Degenerate { d, min_d, .. }) => {
                assert_eq!(d, 5);
                assert_eq!(min_d, 20);
            }
            other => panic!("{other:?}"),
        }
        let mut rng = RngStream::new(3, 0).rng();
        let p = approach4_run(100, 10, 0.3, 0.5, &mut rng).unwrap();
        assert!((p.expected_tau(1) - 0.02).abs() < 1e-15);
        assert!(p.jump_times.len() >= 3);
        assert_eq!(p.count_at(p.jump_times[2]), 160);
        assert!(p.taus.iter().all(|&t| t > 0.0));
        let frozen = approach4_run(0, 10, 0.3, 5.0, &mut rng).unwrap();
        assert_eq!(frozen.final_count(), 0);
    }

    #[test]
    fn dominance_preconditions() {
        let s = TorusShape::new(6, 2).unwrap();
        assert!(check_dominance_preconditions(&s, 0.3).is_ok());
        assert!(matches!(
            check_dominance_preconditions(&s, 0.5),
            Err(Error::Domain(_))
        ));
        // 4p(1-p) = 0.36 < 1/2
        assert!(matches!(
            check_dominance_preconditions(&s, 0.1),
            Err(Error::Domain(_))
        ));
        let s = TorusShape::new(5, 2).unwrap();
        assert!(matches!(
            check_dominance_preconditions(&s, 0.45),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn dominance_small_run() {
        let s = TorusShape::new(6, 2).unwrap();
        let samples = dominance_samples(&s, 0.3, 0.3, 300, 5).unwrap();
        let rep = samples.report(&[0.0]);
        for (a, row) in Approach::CHAIN.iter().zip(&rep.rows) {
            let all_positive = samples.get(*a).iter().all(|&v| v > 0.0);
            if all_positive {
                assert_eq!(row.survival, 1.0);
            }
        }
        let rep = samples.report(&samples.linear_grid(10));
        assert_eq!(rep.rows.len(), 40);
        assert_eq!(rep.violations().count(), 0);
    }
}
