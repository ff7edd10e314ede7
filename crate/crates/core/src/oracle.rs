//! Exact and closed-form references.
//!
//! Binomial tails are summed in log space outward from the mode, so neither
//! deep tails (`d` in the hundreds) nor tails near one lose precision. The
//! pair decomposition of `Var|C_0|` conditions exactly on the shared
//! neighbors of each displacement class, which keeps it valid on the `r = 2`
//! multigraph. The transient CTMC solver uses uniformization with rate
//! `Λ = r^d`.

use crate::config::Configuration;
use crate::error::{Error, Result};
use crate::scalar::{floor_tol, CompensatedSum, Real};
use crate::torus::{TorusShape, VertexId};

fn check_prob<F: Real>(p: F) -> Result<()> {
    if p >= F::zero() && p <= F::one() {
        Ok(())
    } else {
        Err(Error::domain(format!("probability {p} outside [0, 1]")))
    }
}

/// `ln P(Binomial(n, p) >= k)`, `-inf` when the event is impossible.
pub fn ln_binom_tail<F: Real>(n: u64, p: F, k: u64) -> Result<F> {
    check_prob(p)?;
    if k > n + 1 {
        return Err(Error::domain(format!(
            "tail index k = {k} exceeds n + 1 = {}",
            n + 1
        )));
    }
    if k == 0 {
        return Ok(F::zero());
    }
    if k == n + 1 || p == F::zero() {
        return Ok(F::neg_infinity());
    }
    if p == F::one() {
        return Ok(F::zero());
    }
    let q = F::one() - p;
    let (lp, lq) = (p.ln(), q.ln());
    // Anchor at the larger of k and the mode so every summed ratio is <= 1.
    let mode = floor_tol(F::from_count(n + 1) * p).clamp(0, n as i64) as u64;
    let anchor = mode.max(k);
    let ln_anchor =
        ln_choose::<F>(n, anchor) + F::from_count(anchor) * lp + F::from_count(n - anchor) * lq;
    let odds = p / q;

    let mut sum = CompensatedSum::<F>::new();
    sum.add(F::one());
    // upward from the anchor
    let mut term = F::one();
    for j in anchor..n {
        term = term * F::from_count(n - j) / F::from_count(j + 1) * odds;
        if term < F::min_positive_value() {
            break;
        }
        sum.add(term);
    }
    // downward to k
    let mut term = F::one();
    for j in (k..anchor).rev() {
        term = term * F::from_count(j + 1) / F::from_count(n - j) / odds;
        if term < F::min_positive_value() {
            break;
        }
        sum.add(term);
    }
    Ok(ln_anchor + sum.value().ln())
}

/// `P(Binomial(n, p) >= k)` for `0 <= k <= n + 1`.
pub fn binom_tail<F: Real>(n: u64, p: F, k: u64) -> Result<F> {
    Ok(ln_binom_tail(n, p, k)?.exp())
}

fn ln_choose<F: Real>(n: u64, k: u64) -> F {
    let k = k.min(n - k);
    let mut acc = CompensatedSum::<F>::new();
    for i in 0..k {
        acc.add(F::from_count(n - i).ln());
        acc.add(-F::from_count(i + 1).ln());
    }
    acc.value()
}

/// Law of `Σ_y w_y η(y)` for independent Bernoulli(`p`) bits, as a pmf
/// indexed by the sum.
pub fn weighted_sum_pmf<F: Real>(weights: &[usize], p: F) -> Vec<F> {
    let total: usize = weights.iter().sum();
    let mut pmf = vec![F::zero(); total + 1];
    pmf[0] = F::one();
    let q = F::one() - p;
    let mut hi = 0;
    for &w in weights {
        for s in (0..=hi).rev() {
            let mass = pmf[s];
            pmf[s] = mass * q;
            pmf[s + w] = pmf[s + w] + mass * p;
        }
        hi += w;
    }
    pmf
}

/// Upper tails `P(S >= k)` for `k = 0..=len`, from a pmf.
fn tails<F: Real>(pmf: &[F]) -> Vec<F> {
    let mut out = vec![F::zero(); pmf.len() + 1];
    for k in (0..pmf.len()).rev() {
        out[k] = out[k + 1] + pmf[k];
    }
    out
}

/// `P(Σ_{y~x} η(y) >= k)` under the product measure, neighbor slots counted
/// with multiplicity. For `r >= 3` the sum is Binomial(2d, p); on the `r = 2`
/// multigraph it is twice a Binomial(d, p).
pub fn neighbor_sum_tail<F: Real>(shape: &TorusShape, p: F, k: u64) -> Result<F> {
    neighbor_sum_tail_dr(shape.d(), shape.r(), p, k)
}

/// [`neighbor_sum_tail`] from `(d, r)` alone, for tori too large to build.
pub fn neighbor_sum_tail_dr<F: Real>(d: usize, r: usize, p: F, k: u64) -> Result<F> {
    check_prob(p)?;
    let slots = 2 * d as u64;
    if k > slots + 1 {
        return Err(Error::domain(format!("tail index k = {k} exceeds 2d + 1")));
    }
    if r == 2 {
        binom_tail(d as u64, p, k.div_ceil(2))
    } else {
        binom_tail(slots, p, k)
    }
}

/// Large-deviation constants `K(p) = -ln(4p(1-p))` and
/// `C(p) = (ln r - K(p)) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdpConstants<F> {
    pub k: F,
    pub c: F,
    /// Whether `ln r - K(p) > 0`, i.e. `4p(1-p) > 1/r`.
    pub admissible: bool,
}

pub fn ldp_constants<F: Real>(p: F, r: usize) -> Result<LdpConstants<F>> {
    if !(p > F::zero() && p < F::one()) {
        return Err(Error::domain(format!("K(p) needs 0 < p < 1, got {p}")));
    }
    let four = F::lit(4.0);
    let k = -(four * p * (F::one() - p)).ln();
    // exact zero at p = 1/2 despite rounding in the product
    let k = if p == F::lit(0.5) {
        F::zero()
    } else {
        k.max(F::zero())
    };
    let log_r = F::from_count(r as u64).ln();
    Ok(LdpConstants {
        k,
        c: (log_r - k) / F::lit(2.0),
        admissible: log_r - k > F::zero(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedCounts<F> {
    /// `E|I_0(k)|`.
    pub i0_k: F,
    /// `E|C_0| = E|I_0(d)|`.
    pub c0: F,
}

pub fn expected_counts<F: Real>(shape: &TorusShape, p: F, k: usize) -> Result<ExpectedCounts<F>> {
    if k > 2 * shape.d() {
        return Err(Error::domain(format!(
            "k = {k} exceeds 2d = {}",
            2 * shape.d()
        )));
    }
    let n = F::from_count(shape.n() as u64);
    Ok(ExpectedCounts {
        i0_k: n * neighbor_sum_tail(shape, p, k as u64)?,
        c0: n * neighbor_sum_tail(shape, p, shape.d() as u64)?,
    })
}

/// Exact `Var|C_0|` under the product measure with density `p`.
pub fn exact_var_c0<F: Real>(shape: &TorusShape, p: F) -> Result<F> {
    check_prob(p)?;
    let d = shape.d();
    let q = neighbor_sum_tail(shape, p, d as u64)?;
    let origin = VertexId::from_index(0);
    let m0 = shape.neighbor_multiplicities(origin);

    let mut cov = CompensatedSum::<F>::new();
    for z in shape.two_hop_set(origin) {
        let mz = shape.neighbor_multiplicities(z);
        let shared: Vec<(usize, usize)> = m0
            .iter()
            .filter_map(|&(y, w0)| mz.iter().find(|(u, _)| *u == y).map(|&(_, wz)| (w0, wz)))
            .collect();
        let rest0: Vec<usize> = m0
            .iter()
            .filter(|(y, _)| !mz.iter().any(|(u, _)| u == y))
            .map(|&(_, w)| w)
            .collect();
        let restz: Vec<usize> = mz
            .iter()
            .filter(|(y, _)| !m0.iter().any(|(u, _)| u == y))
            .map(|&(_, w)| w)
            .collect();
        let tail0 = tails(&weighted_sum_pmf(&rest0, p));
        let tailz = tails(&weighted_sum_pmf(&restz, p));
        let need = |tail: &[F], have: usize| -> F {
            if have >= d {
                F::one()
            } else {
                tail.get(d - have).copied().unwrap_or(F::zero())
            }
        };

        let mut both = CompensatedSum::<F>::new();
        for mask in 0u64..(1u64 << shared.len()) {
            let mut prob = F::one();
            let (mut s0, mut sz) = (0, 0);
            for (i, &(w0, wz)) in shared.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    prob = prob * p;
                    s0 += w0;
                    sz += wz;
                } else {
                    prob = prob * (F::one() - p);
                }
            }
            both.add(prob * need(&tail0, s0) * need(&tailz, sz));
        }
        cov.add(both.value() - q * q);
    }
    let n = F::from_count(shape.n() as u64);
    Ok(n * (q * (F::one() - q) + cov.value()))
}

/// `|G_t| ~ Binomial(r^d, p e^{-t})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeathLaw<F> {
    pub trials: u64,
    pub prob: F,
    pub mean: F,
    pub variance: F,
}

pub fn death_law<F: Real>(shape: &TorusShape, p: F, t: F) -> Result<DeathLaw<F>> {
    check_prob(p)?;
    if t < F::zero() {
        return Err(Error::domain(format!("time t = {t} is negative")));
    }
    let trials = shape.n() as u64;
    let prob = p * (-t).exp();
    let n = F::from_count(trials);
    Ok(DeathLaw {
        trials,
        prob,
        mean: n * prob,
        variance: n * prob * (F::one() - prob),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdpPoint<F> {
    pub d: usize,
    /// `-(1/d) ln P(Binomial(2d, p) >= d)`.
    pub rate: F,
    /// `rate - K(p)`.
    pub drift: F,
}

/// Exact finite-`d` large-deviation rates for `d = 1..=d_max`.
pub fn ldp_convergence<F: Real>(p: F, d_max: usize) -> Result<Vec<LdpPoint<F>>> {
    if !(p > F::zero() && p < F::lit(0.5)) {
        return Err(Error::domain(format!(
            "rate convergence needs 0 < p < 1/2, got {p}"
        )));
    }
    let k = ldp_constants(p, 2)?.k;
    (1..=d_max)
        .map(|d| {
            let lt = ln_binom_tail(2 * d as u64, p, d as u64)?;
            let rate = -lt / F::from_count(d as u64);
            Ok(LdpPoint {
                d,
                rate,
                drift: rate - k,
            })
        })
        .collect()
}

/// Initial law for the transient solver.
#[derive(Debug, Clone)]
pub enum InitialLaw<F> {
    State(Configuration),
    Product(F),
}

/// Largest vertex count accepted by [`CtmcModel`].
pub const CTMC_MAX_VERTICES: usize = 20;

/// The threshold voter model on a tiny torus as an explicit finite chain
/// over `{0,1}^n`, states encoded as bitmasks (bit `i` = vertex `i`).
#[derive(Debug, Clone)]
pub struct CtmcModel {
    shape: TorusShape,
    slots: Vec<Vec<usize>>,
}

impl CtmcModel {
    pub fn new(shape: &TorusShape) -> Result<Self> {
        if shape.n() > CTMC_MAX_VERTICES {
            return Err(Error::Capacity(format!(
                "exact solver limited to {CTMC_MAX_VERTICES} vertices, torus has {}",
                shape.n()
            )));
        }
        let slots = shape
            .vertices()
            .map(|x| {
                shape
                    .neighbors(x)
                    .into_iter()
                    .map(VertexId::index)
                    .collect()
            })
            .collect();
        Ok(Self {
            shape: shape.clone(),
            slots,
        })
    }

    pub fn num_states(&self) -> usize {
        1 << self.shape.n()
    }

    /// Uniformization constant `Λ = r^d`.
    pub fn uniformization_rate(&self) -> usize {
        self.shape.n()
    }

    #[inline]
    fn active(&self, s: usize, x: usize) -> bool {
        let ones = self.slots[x].iter().filter(|&&y| s >> y & 1 == 1).count();
        let d = self.shape.d();
        let disagree = if s >> x & 1 == 1 { 2 * d - ones } else { ones };
        disagree >= d
    }

    /// States reachable from `s` by one flip, each at rate one.
    pub fn transitions(&self, s: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.shape.n())
            .filter(move |&x| self.active(s, x))
            .map(move |x| s ^ (1 << x))
    }

    /// Generator row of `s` as `(target, rate)` with the diagonal included.
    pub fn generator_row<F: Real>(&self, s: usize) -> Vec<(usize, F)> {
        let mut row: Vec<(usize, F)> = self.transitions(s).map(|t| (t, F::one())).collect();
        let exit = F::from_count(row.len() as u64);
        row.push((s, -exit));
        row
    }

    fn initial_distribution<F: Real>(&self, initial: &InitialLaw<F>) -> Result<Vec<F>> {
        let mut pi = vec![F::zero(); self.num_states()];
        match initial {
            InitialLaw::State(cfg) => {
                if cfg.shape() != &self.shape {
                    return Err(Error::domain("initial state lives on a different torus"));
                }
                let s = cfg
                    .bits()
                    .iter()
                    .enumerate()
                    .fold(0usize, |acc, (i, &b)| acc | (usize::from(b) << i));
                pi[s] = F::one();
            }
            InitialLaw::Product(p) => {
                check_prob(*p)?;
                for (s, w) in pi.iter_mut().enumerate() {
                    let ones = s.count_ones() as u64;
                    let zeros = self.shape.n() as u64 - ones;
                    *w = p.powi(ones as i32) * (F::one() - *p).powi(zeros as i32);
                }
            }
        }
        Ok(pi)
    }

    fn step<F: Real>(&self, pi: &[F], next: &mut [F]) {
        let lambda = F::from_count(self.uniformization_rate() as u64);
        next.iter_mut().for_each(|v| *v = F::zero());
        for (s, &mass) in pi.iter().enumerate() {
            if mass == F::zero() {
                continue;
            }
            let share = mass / lambda;
            let mut out = 0usize;
            for t in self.transitions(s) {
                next[t] = next[t] + share;
                out += 1;
            }
            next[s] = next[s] + mass * (F::one() - F::from_count(out as u64) / lambda);
        }
    }

    fn mean_ones_of<F: Real>(pi: &[F]) -> F {
        pi.iter()
            .enumerate()
            .map(|(s, &w)| w * F::from_count(s.count_ones() as u64))
            .collect::<CompensatedSum<F>>()
            .value()
    }

    /// Partial uniformization sum over the first `depth + 1` Poisson terms.
    pub fn mean_ones_truncated<F: Real>(
        &self,
        initial: &InitialLaw<F>,
        t: F,
        depth: usize,
    ) -> Result<F> {
        let (value, _) = self.uniformize(initial, t, Some(depth))?;
        Ok(value)
    }

    /// `E|A_t|` with absolute truncation error at most `1e-10`.
    pub fn mean_ones<F: Real>(&self, initial: &InitialLaw<F>, t: F) -> Result<F> {
        Ok(self.uniformize(initial, t, None)?.0)
    }

    fn uniformize<F: Real>(
        &self,
        initial: &InitialLaw<F>,
        t: F,
        depth: Option<usize>,
    ) -> Result<(F, usize)> {
        if t < F::zero() {
            return Err(Error::domain(format!("time t = {t} is negative")));
        }
        let mut pi = self.initial_distribution(initial)?;
        if t == F::zero() {
            return Ok((Self::mean_ones_of(&pi), 0));
        }
        let lambda_t = F::from_count(self.uniformization_rate() as u64) * t;
        let n = F::from_count(self.shape.n() as u64);
        // E|A| <= n, so a Poisson tail below 1e-10 / n bounds the error.
        let budget = F::lit(1e-10) / n;
        let hard_cap = {
            let lt = lambda_t.to_f64_lossy();
            (lt + 12.0 * lt.sqrt() + 60.0).ceil() as usize
        };
        let ln_lt = lambda_t.ln();
        let mut ln_w = -lambda_t;
        let mut cum = CompensatedSum::<F>::new();
        let mut acc = CompensatedSum::<F>::new();
        let mut next = vec![F::zero(); pi.len()];
        let mut k = 0usize;
        loop {
            let w = ln_w.exp();
            cum.add(w);
            acc.add(w * Self::mean_ones_of(&pi));
            let done = match depth {
                Some(dmax) => k >= dmax,
                None => {
                    (F::one() - cum.value() <= budget && F::from_count(k as u64) > lambda_t)
                        || k >= hard_cap
                }
            };
            if done {
                break;
            }
            self.step(&pi, &mut next);
            std::mem::swap(&mut pi, &mut next);
            k += 1;
            ln_w = ln_w + ln_lt - F::from_count(k as u64).ln();
        }
        Ok((acc.value(), k))
    }
}

/// Exact `E|A_t|` for tiny tori (`r^d <= 20`).
pub fn ctmc_mean_ones<F: Real>(shape: &TorusShape, initial: &InitialLaw<F>, t: F) -> Result<F> {
    CtmcModel::new(shape)?.mean_ones(initial, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    // Direct pmf summation, no log space: independent check for small n.
    fn naive_tail(n: u64, p: f64, k: u64) -> f64 {
        (k..=n)
            .map(|j| {
                let c = (0..j).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
                c * p.powi(j as i32) * (1.0 - p).powi((n - j) as i32)
            })
            .sum()
    }

    #[test]
    fn binom_tail_examples() {
        let a: f64 = binom_tail(2, 0.4, 1).unwrap();
        assert!(close(a, 0.64, 0.64 * 1e-14), "{a}");
        let b: f64 = binom_tail(4, 0.5, 2).unwrap();
        assert!(close(b, 0.6875, 0.6875 * 1e-14), "{b}");
        for n in [0, 1, 7, 40] {
            assert_eq!(binom_tail::<f64>(n, 0.3, 0).unwrap(), 1.0);
            assert_eq!(binom_tail::<f64>(n, 0.3, n + 1).unwrap(), 0.0);
        }
        assert!(binom_tail::<f64>(3, 0.3, 5).is_err());
        assert!(binom_tail::<f64>(3, 1.3, 1).is_err());
    }

    #[test]
    fn binom_tail_degenerate_p() {
        assert_eq!(binom_tail::<f64>(5, 0.0, 1).unwrap(), 0.0);
        assert_eq!(binom_tail::<f64>(5, 1.0, 5).unwrap(), 1.0);
        assert_eq!(binom_tail::<f64>(5, 1.0, 6).unwrap(), 0.0);
    }

    #[test]
    fn binom_tail_matches_naive_sum() {
        for n in [1u64, 3, 10, 25, 60] {
            for p in [0.01, 0.2, 0.5, 0.73, 0.99] {
                for k in 0..=n + 1 {
                    let got: f64 = binom_tail(n, p, k).unwrap();
                    let want = naive_tail(n, p, k);
                    assert!(
                        (got - want).abs() <= 1e-12 * want.max(1e-300) + 1e-300,
                        "n={n} p={p} k={k}: {got} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn binom_tail_f32() {
        let a: f32 = binom_tail(4, 0.5f32, 2).unwrap();
        assert!((a - 0.6875).abs() < 1e-6);
    }

    #[test]
    fn ldp_examples() {
        let half = ldp_constants(0.5f64, 2).unwrap();
        assert_eq!(half.k, 0.0);
        let a = ldp_constants(0.4f64, 2).unwrap();
        assert!(close(a.k, -(0.96f64).ln(), 1e-15));
        assert!(close(a.k, 0.0408220, 5e-8));
        let b = ldp_constants(0.45f64, 2).unwrap();
        assert!(close(b.k, 0.0100503, 5e-8), "{}", b.k);
        assert!(close(b.c, 0.3415485, 1e-7), "{}", b.c);
        assert!(b.admissible);
        // 4p(1-p) = 0.36 < 1/r
        assert!(!ldp_constants(0.1f64, 2).unwrap().admissible);
        assert!(ldp_constants(0.0f64, 2).is_err());
        assert!(ldp_constants(1.0f64, 2).is_err());
    }

    #[test]
    fn ldp_convergence_limit() {
        let pts = ldp_convergence(0.3f64, 200).unwrap();
        let k = ldp_constants(0.3f64, 2).unwrap().k;
        assert!(close(-k, (0.84f64).ln(), 1e-15));
        assert!(close(k, 0.1743534, 5e-8));
        let last = pts.last().unwrap();
        assert_eq!(last.d, 200);
        assert!(last.drift.abs() < 0.03, "{}", last.drift);
        assert!(ldp_convergence(0.5f64, 3).is_err());
    }

    #[test]
    fn expected_counts_examples() {
        let s = TorusShape::new(1, 3).unwrap();
        let e = expected_counts(&s, 0.5f64, 0).unwrap();
        assert!(close(e.c0, 2.25, 1e-14));
        assert!(close(e.i0_k, 3.0, 1e-14));
        let s = TorusShape::new(3, 4).unwrap();
        assert_eq!(expected_counts(&s, 0.0f64, 1).unwrap().c0, 0.0);
        assert!(expected_counts(&s, 0.3f64, 7).is_err());
    }

    #[test]
    fn variance_examples() {
        let s = TorusShape::new(1, 3).unwrap();
        assert!(close(exact_var_c0(&s, 0.5f64).unwrap(), 0.9375, 1e-14));
        for (d, r) in [(1, 3), (2, 2), (3, 5)] {
            let s = TorusShape::new(d, r).unwrap();
            assert_eq!(exact_var_c0(&s, 0.0f64).unwrap(), 0.0);
            assert!(exact_var_c0(&s, 1.0f64).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_pmf_sums_to_one() {
        let pmf = weighted_sum_pmf(&[2, 2, 1, 3], 0.3f64);
        assert_eq!(pmf.len(), 9);
        assert!(close(pmf.iter().sum::<f64>(), 1.0, 1e-15));
        // P(sum = 8) = p^4
        assert!(close(pmf[8], 0.3f64.powi(4), 1e-17));
    }

    #[test]
    fn death_law_examples() {
        let s = TorusShape::new(10, 2).unwrap();
        let l0 = death_law(&s, 0.4f64, 0.0).unwrap();
        assert_eq!(l0.trials, 1024);
        assert!(close(l0.mean, 409.6, 1e-10));
        let l = death_law(&s, 0.4f64, 1.0).unwrap();
        assert!(close(l.mean, 1024.0 * 0.4 * (-1.0f64).exp(), 1e-10));
        assert!(l.variance <= l.mean);
        assert!(death_law(&s, 0.4f64, -1.0).is_err());
    }

    #[test]
    fn ctmc_lumped_chain() {
        let s = TorusShape::new(1, 3).unwrap();
        let init = InitialLaw::State(Configuration::parse(&s, "110").unwrap());
        for t in [0.0, 0.1, 0.5, 1.0, 2.0] {
            let got: f64 = ctmc_mean_ones(&s, &init, t).unwrap();
            let want = 1.8 + 0.2 * f64::exp(-5.0 * t);
            assert!(close(got, want, 1e-9), "t={t}: {got} vs {want}");
        }
        let one: f64 = ctmc_mean_ones(&s, &init, 1.0).unwrap();
        assert!(close(one, 1.801347, 1e-6));
    }

    #[test]
    fn ctmc_absorbing_and_capacity() {
        let s = TorusShape::new(1, 3).unwrap();
        let init = InitialLaw::State(Configuration::ones(&s));
        assert!(close(
            ctmc_mean_ones::<f64>(&s, &init, 3.0).unwrap(),
            3.0,
            1e-10
        ));
        let big = TorusShape::new(1, 21).unwrap();
        assert!(matches!(
            ctmc_mean_ones::<f64>(&big, &InitialLaw::Product(0.5), 1.0),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn ctmc_product_law_is_mixture() {
        let s = TorusShape::new(1, 3).unwrap();
        let p = 0.35f64;
        let t = 0.8;
        let mixed: f64 = ctmc_mean_ones(&s, &InitialLaw::Product(p), t).unwrap();
        let mut total = 0.0;
        for mask in 0..8u32 {
            let bits: Vec<u8> = (0..3).map(|i| (mask >> i & 1) as u8).collect();
            let ones = mask.count_ones() as i32;
            let w = p.powi(ones) * (1.0 - p).powi(3 - ones);
            let c = Configuration::from_bits(&s, &bits).unwrap();
            total += w * ctmc_mean_ones::<f64>(&s, &InitialLaw::State(c), t).unwrap();
        }
        assert!(close(mixed, total, 1e-12));
    }

    #[test]
    fn ctmc_generator_rows_sum_to_zero() {
        let s = TorusShape::new(2, 2).unwrap();
        let m = CtmcModel::new(&s).unwrap();
        for st in 0..m.num_states() {
            let row = m.generator_row::<f64>(st);
            assert_eq!(row.iter().map(|(_, r)| r).sum::<f64>(), 0.0);
            assert!(row.iter().filter(|(t, _)| *t != st).all(|(_, r)| *r == 1.0));
        }
    }

    #[test]
    fn ctmc_truncation_monotone() {
        let s = TorusShape::new(1, 4).unwrap();
        let m = CtmcModel::new(&s).unwrap();
        let init = InitialLaw::State(Configuration::parse(&s, "1100").unwrap());
        let full: f64 = m.mean_ones(&init, 1.0).unwrap();
        let mut prev = -1.0;
        for depth in 0..40 {
            let v: f64 = m.mean_ones_truncated(&init, 1.0, depth).unwrap();
            assert!(v >= prev);
            assert!(v <= full + 1e-10);
            prev = v;
        }
        assert!(close(prev, full, 1e-10));
        assert_eq!(m.mean_ones_truncated::<f64>(&init, 0.0, 5).unwrap(), 2.0);
    }
}
