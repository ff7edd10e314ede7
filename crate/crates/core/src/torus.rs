//! Geometry of the torus `{1..r}^d` with wraparound nearest-neighbor edges.
//!
//! Vertices are stored as mixed-radix little-endian indices: coordinate `i`
//! (1-based, in `1..=r`) contributes `(x_i - 1) * r^(i-1)`. Neighbors are
//! computed arithmetically from per-dimension strides; there is no adjacency
//! table. For `r = 2` the up and down neighbor along a dimension coincide and
//! the graph is a multigraph: every neighbor list still has exactly `2d`
//! entries.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

/// Largest admissible vertex count.
pub const MAX_VERTICES: u64 = 1 << 31;

/// A vertex of the torus, as its mixed-radix index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VertexId(u32);

impl VertexId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub(crate) fn from_index(i: usize) -> Self {
        VertexId(i as u32)
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// Dimension `d`, side length `r` and the derived vertex count `r^d`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TorusShape {
    d: usize,
    r: usize,
    n: usize,
    strides: Vec<usize>,
}

impl TorusShape {
    pub fn new(d: usize, r: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::domain("dimension d must be at least 1"));
        }
        if r < 2 {
            return Err(Error::domain(format!(
                "side length r must be at least 2, got {r}"
            )));
        }
        let mut strides = Vec::with_capacity(d);
        let mut n: u64 = 1;
        for _ in 0..d {
            strides.push(n as usize);
            n = n.saturating_mul(r as u64);
            if n > MAX_VERTICES {
                return Err(Error::Capacity(format!(
                    "torus with d={d}, r={r} has more than 2^31 vertices"
                )));
            }
        }
        Ok(Self {
            d,
            r,
            n: n as usize,
            strides,
        })
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn r(&self) -> usize {
        self.r
    }

    /// Number of vertices, `r^d`.
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Vertex degree counted with multiplicity.
    #[inline]
    pub fn degree(&self) -> usize {
        2 * self.d
    }

    pub fn vertices(&self) -> impl Iterator<Item = VertexId> {
        (0..self.n).map(VertexId::from_index)
    }

    pub fn vertex(&self, index: usize) -> Result<VertexId> {
        if index < self.n {
            Ok(VertexId::from_index(index))
        } else {
            Err(Error::domain(format!(
                "vertex index {index} out of range for {} vertices",
                self.n
            )))
        }
    }

    /// Mixed-radix index of 1-based coordinates.
    pub fn encode(&self, coords: &[usize]) -> Result<VertexId> {
        if coords.len() != self.d {
            return Err(Error::domain(format!(
                "expected {} coordinates, got {}",
                self.d,
                coords.len()
            )));
        }
        let mut index = 0;
        for (i, (&c, &stride)) in coords.iter().zip(&self.strides).enumerate() {
            if c < 1 || c > self.r {
                return Err(Error::domain(format!(
                    "coordinate {} = {c} outside 1..={}",
                    i + 1,
                    self.r
                )));
            }
            index += (c - 1) * stride;
        }
        Ok(VertexId::from_index(index))
    }

    /// 1-based coordinates of a vertex.
    pub fn decode(&self, v: VertexId) -> Vec<usize> {
        let mut rest = v.index();
        let mut coords = Vec::with_capacity(self.d);
        for _ in 0..self.d {
            coords.push(rest % self.r + 1);
            rest /= self.r;
        }
        coords
    }

    /// Up and down neighbor of `v` along dimension `i` (0-based).
    #[inline]
    pub fn axis_neighbors(&self, v: VertexId, i: usize) -> (VertexId, VertexId) {
        let x = v.index();
        let stride = self.strides[i];
        let c = (x / stride) % self.r;
        let span = (self.r - 1) * stride;
        let up = if c == self.r - 1 {
            x - span
        } else {
            x + stride
        };
        let down = if c == 0 { x + span } else { x - stride };
        (VertexId::from_index(up), VertexId::from_index(down))
    }

    /// Calls `f` once per neighbor slot of `v` (`2d` calls, multiplicity
    /// included), in the order up/down for dimensions `1..=d`.
    #[inline]
    pub fn for_each_neighbor(&self, v: VertexId, mut f: impl FnMut(VertexId)) {
        for i in 0..self.d {
            let (up, down) = self.axis_neighbors(v, i);
            f(up);
            f(down);
        }
    }

    /// The neighbor multiset of `v`, exactly `2d` entries.
    pub fn neighbors(&self, v: VertexId) -> Vec<VertexId> {
        let mut out = Vec::with_capacity(2 * self.d);
        self.for_each_neighbor(v, |y| out.push(y));
        out
    }

    /// Distinct neighbors of `v` with their multiplicities, sorted by id.
    pub fn neighbor_multiplicities(&self, v: VertexId) -> Vec<(VertexId, usize)> {
        let mut nbrs = self.neighbors(v);
        nbrs.sort_unstable();
        let mut out: Vec<(VertexId, usize)> = Vec::with_capacity(nbrs.len());
        for y in nbrs {
            match out.last_mut() {
                Some((last, m)) if *last == y => *m += 1,
                _ => out.push((y, 1)),
            }
        }
        out
    }

    /// The set of vertices adjacent to both `x` and `y`.
    pub fn shared_neighbors(&self, x: VertexId, y: VertexId) -> BTreeSet<VertexId> {
        let nx: BTreeSet<VertexId> = self.neighbors(x).into_iter().collect();
        self.neighbors(y)
            .into_iter()
            .filter(|z| nx.contains(z))
            .collect()
    }

    /// All `z != x` sharing at least one neighbor with `x`.
    ///
    /// For `r >= 5` this has exactly `2d^2` elements. For smaller `r`
    /// wraparound merges displacement classes and the enumerated set is
    /// returned as-is.
    pub fn two_hop_set(&self, x: VertexId) -> BTreeSet<VertexId> {
        let mut out = BTreeSet::new();
        self.for_each_neighbor(x, |y| {
            self.for_each_neighbor(y, |z| {
                if z != x {
                    out.insert(z);
                }
            })
        });
        out
    }
}
