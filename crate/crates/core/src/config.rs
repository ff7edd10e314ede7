//! Spin configurations with maintained ones-neighbor counts.

use rand::Rng;

use crate::error::{Error, Result};
use crate::torus::{TorusShape, VertexId};

/// A state `η ∈ {0,1}^{T^d(r)}` plus, for every vertex, the number of its
/// neighbor slots holding a one (multiplicity included, so `0..=2d`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Configuration {
    shape: TorusShape,
    bits: Vec<u8>,
    ones_nbr: Vec<u16>,
    ones: usize,
}

impl Configuration {
    pub fn zeros(shape: &TorusShape) -> Self {
        Self::from_bits_unchecked(shape, vec![0; shape.n()])
    }

    pub fn ones(shape: &TorusShape) -> Self {
        Self::from_bits_unchecked(shape, vec![1; shape.n()])
    }

    /// Builds a configuration from 0/1 values indexed by vertex.
    pub fn from_bits(shape: &TorusShape, bits: &[u8]) -> Result<Self> {
        if bits.len() != shape.n() {
            return Err(Error::domain(format!(
                "expected {} bits, got {}",
                shape.n(),
                bits.len()
            )));
        }
        if let Some(i) = bits.iter().position(|&b| b > 1) {
            return Err(Error::domain(format!("bit {i} is {} (not 0/1)", bits[i])));
        }
        Ok(Self::from_bits_unchecked(shape, bits.to_vec()))
    }

    /// Parses a string such as `"1100"` (vertex 0 first).
    pub fn parse(shape: &TorusShape, s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .filter(|c| !c.is_whitespace() && *c != ',')
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::domain(format!("invalid state character {other:?}"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::from_bits(shape, &bits)
    }

    fn from_bits_unchecked(shape: &TorusShape, bits: Vec<u8>) -> Self {
        let ones = bits.iter().filter(|&&b| b == 1).count();
        let ones_nbr = recount(shape, &bits);
        Self {
            shape: shape.clone(),
            bits,
            ones_nbr,
            ones,
        }
    }

    /// I.i.d. Bernoulli(`p`) bits: vertex `x` is one iff its uniform draw
    /// falls below `p`.
    pub fn sample_product<R: Rng + ?Sized>(
        shape: &TorusShape,
        p: f64,
        rng: &mut R,
    ) -> Result<Self> {
        check_density(p)?;
        let bits = (0..shape.n())
            .map(|_| u8::from(rng.gen::<f64>() < p))
            .collect();
        Ok(Self::from_bits_unchecked(shape, bits))
    }

    #[inline]
    pub fn shape(&self) -> &TorusShape {
        &self.shape
    }

    #[inline]
    pub fn get(&self, x: VertexId) -> u8 {
        self.bits[x.index()]
    }

    #[inline]
    pub fn is_one(&self, x: VertexId) -> bool {
        self.bits[x.index()] == 1
    }

    /// Number of neighbor slots of `x` in state one.
    #[inline]
    pub fn ones_nbr(&self, x: VertexId) -> u32 {
        u32::from(self.ones_nbr[x.index()])
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// `|A| = #{x : η(x) = 1}`.
    #[inline]
    pub fn ones_count(&self) -> usize {
        self.ones
    }

    pub fn fraction_ones(&self) -> f64 {
        self.ones as f64 / self.shape.n() as f64
    }

    /// Flips `x` and updates the counts of its `2d` neighbor slots.
    pub fn flip(&mut self, x: VertexId) {
        let i = x.index();
        let now_one = self.bits[i] == 0;
        self.bits[i] = u8::from(now_one);
        if now_one {
            self.ones += 1;
        } else {
            self.ones -= 1;
        }
        let counts = &mut self.ones_nbr;
        self.shape.for_each_neighbor(x, |y| {
            let c = &mut counts[y.index()];
            if now_one {
                *c += 1;
            } else {
                *c -= 1;
            }
        });
    }

    /// Sets `x` to `value`, flipping only if it differs. Returns whether a
    /// flip happened.
    pub fn set(&mut self, x: VertexId, value: u8) -> bool {
        if self.get(x) != value {
            self.flip(x);
            true
        } else {
            false
        }
    }

    /// Recomputes every neighbor count from the bits and compares.
    pub fn verify_counts(&self) -> Result<()> {
        let fresh = recount(&self.shape, &self.bits);
        for (i, (&stored, &expected)) in self.ones_nbr.iter().zip(&fresh).enumerate() {
            if stored != expected {
                return Err(Error::Consistency {
                    vertex: i,
                    stored: stored.into(),
                    expected: expected.into(),
                });
            }
        }
        let ones = self.bits.iter().filter(|&&b| b == 1).count();
        if ones != self.ones {
            return Err(Error::Consistency {
                vertex: usize::MAX,
                stored: self.ones as u32,
                expected: ones as u32,
            });
        }
        Ok(())
    }

    /// Toggles a bit without touching any count. Only useful to exercise
    /// [`Configuration::verify_counts`].
    #[doc(hidden)]
    pub fn corrupt_bit(&mut self, x: VertexId) {
        let b = &mut self.bits[x.index()];
        *b ^= 1;
    }
}

pub(crate) fn check_density(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::domain(format!("density p = {p} outside [0, 1]")))
    }
}

fn recount(shape: &TorusShape, bits: &[u8]) -> Vec<u16> {
    shape
        .vertices()
        .map(|x| {
            let mut c = 0u16;
            shape.for_each_neighbor(x, |y| c += u16::from(bits[y.index()]));
            c
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn extreme_densities() {
        let s = TorusShape::new(3, 3).unwrap();
        let mut rng = RngStream::new(3, 0).rng();
        let z = Configuration::sample_product(&s, 0.0, &mut rng).unwrap();
        assert_eq!(z, Configuration::zeros(&s));
        let o = Configuration::sample_product(&s, 1.0, &mut rng).unwrap();
        assert_eq!(o, Configuration::ones(&s));
        assert!(o.vertices_all_count(6));
    }

    impl Configuration {
        fn vertices_all_count(&self, c: u32) -> bool {
            self.shape.vertices().all(|x| self.ones_nbr(x) == c)
        }
    }

    #[test]
    fn density_out_of_range() {
        let s = TorusShape::new(1, 3).unwrap();
        let mut rng = RngStream::new(3, 0).rng();
        assert!(matches!(
            Configuration::sample_product(&s, 1.5, &mut rng),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            Configuration::sample_product(&s, -0.1, &mut rng),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn sample_mean_fraction() {
        // d=10, r=2, p=0.3: mean of 100 fractions within 4 sd of the mean
        let s = TorusShape::new(10, 2).unwrap();
        let mut rng = RngStream::new(11, 0).rng();
        let reps = 100;
        let mean = (0..reps)
            .map(|_| {
                Configuration::sample_product(&s, 0.3, &mut rng)
                    .unwrap()
                    .fraction_ones()
            })
            .sum::<f64>()
            / reps as f64;
        let tol = 4.0 * (0.21_f64 / 1024.0).sqrt();
        assert!((mean - 0.3).abs() < tol, "mean {mean}");
    }

    #[test]
    fn parse_and_counts() {
        let s = TorusShape::new(1, 4).unwrap();
        let c = Configuration::parse(&s, "1000").unwrap();
        let counts: Vec<u32> = s.vertices().map(|x| c.ones_nbr(x)).collect();
        assert_eq!(counts, vec![0, 1, 0, 1]);
        assert!(Configuration::parse(&s, "10x0").is_err());
        assert!(Configuration::parse(&s, "100").is_err());
    }

    #[test]
    fn multigraph_counts_with_multiplicity() {
        let s = TorusShape::new(1, 2).unwrap();
        let c = Configuration::parse(&s, "10").unwrap();
        assert_eq!(c.ones_nbr(s.vertex(1).unwrap()), 2);
        assert_eq!(c.ones_nbr(s.vertex(0).unwrap()), 0);
    }

    #[test]
    fn flip_keeps_counts_consistent() {
        let s = TorusShape::new(3, 3).unwrap();
        let mut rng = RngStream::new(5, 0).rng();
        let mut c = Configuration::sample_product(&s, 0.4, &mut rng).unwrap();
        for _ in 0..500 {
            let x = s.vertex(rng.gen_range(0..s.n())).unwrap();
            c.flip(x);
        }
        c.verify_counts().unwrap();
    }

    #[test]
    fn corruption_detected_at_neighbor() {
        let s = TorusShape::new(2, 4).unwrap();
        let mut c = Configuration::zeros(&s);
        let x = s.encode(&[2, 2]).unwrap();
        c.corrupt_bit(x);
        match c.verify_counts() {
            Err(Error::Consistency {
                vertex,
                stored,
                expected,
            }) => {
                let first = s.neighbors(x).into_iter().map(|y| y.index()).min().unwrap();
                assert_eq!(vertex, first);
                assert_eq!((stored, expected), (0, 1));
            }
            other => panic!("expected consistency error, got {other:?}"),
        }
    }
}
