//! Geometry of the discrete torus `(Z/NZ)^d`, `1 <= d <= 3`.
//!
//! Sites are stored as flat row-major indices in `[0, N^d)`: the first
//! coordinate is the most significant digit. Every hot loop in the crate
//! works on flat indices; coordinates are materialized only at the edges.
//!
//! `N = 2` is accepted, but then the `+e_i` and `-e_i` neighbours coincide
//! and the neighbour list contains duplicates.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, TrapError};

/// Maximum supported dimension.
pub const MAX_DIM: usize = 3;

/// A site of the torus, as a flat row-major index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Site(pub usize);

impl Site {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

/// The discrete torus of side `n` in dimension `d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusSpec {
    d: usize,
    n: usize,
}

impl TorusSpec {
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if d == 0 || d > MAX_DIM {
            return Err(TrapError::DimensionOutOfRange(d));
        }
        if n < 2 {
            return invalid(format!("side length must be >= 2, got {n}"));
        }
        if n.checked_pow(d as u32).map_or(true, |s| s > u32::MAX as usize) {
            return invalid(format!("torus {n}^{d} is too large"));
        }
        Ok(Self { d, n })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.n
    }

    /// Number of sites, `N^d`.
    #[inline]
    pub fn sites(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// Number of neighbours of every site, `2d`.
    #[inline]
    pub fn degree(&self) -> usize {
        2 * self.d
    }

    #[inline]
    fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.d - 1 - axis) as u32)
    }

    pub fn contains(&self, x: Site) -> bool {
        x.0 < self.sites()
    }

    pub fn check(&self, x: Site) -> Result<Site> {
        if self.contains(x) {
            Ok(x)
        } else {
            invalid(format!("site {} outside torus with {} sites", x.0, self.sites()))
        }
    }

    /// Builds a site from coordinates, each of which must lie in `[0, N)`.
    pub fn site(&self, coords: &[usize]) -> Result<Site> {
        if coords.len() != self.d {
            return invalid(format!("expected {} coordinates, got {}", self.d, coords.len()));
        }
        let mut flat = 0;
        for &c in coords {
            if c >= self.n {
                return invalid(format!("coordinate {c} outside [0, {})", self.n));
            }
            flat = flat * self.n + c;
        }
        Ok(Site(flat))
    }

    /// Builds a site from arbitrary integer coordinates, reduced modulo `N`.
    pub fn site_wrapped(&self, coords: &[i64]) -> Result<Site> {
        let n = self.n as i64;
        let reduced: Vec<usize> = coords.iter().map(|&c| c.rem_euclid(n) as usize).collect();
        self.site(&reduced)
    }

    /// Coordinates of `x`; entries beyond `d` are zero.
    #[inline]
    pub fn coords(&self, x: Site) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        let mut rest = x.0;
        for axis in (0..self.d).rev() {
            out[axis] = rest % self.n;
            rest /= self.n;
        }
        out
    }

    /// Neighbour of `x` in direction `dir` in `0..2d`: `2*axis` is `+e_axis`,
    /// `2*axis + 1` is `-e_axis`.
    #[inline]
    pub fn neighbor(&self, x: Site, dir: usize) -> Site {
        let axis = dir >> 1;
        let stride = self.stride(axis);
        let c = (x.0 / stride) % self.n;
        let flat = if dir & 1 == 0 {
            if c + 1 == self.n {
                x.0 - (self.n - 1) * stride
            } else {
                x.0 + stride
            }
        } else if c == 0 {
            x.0 + (self.n - 1) * stride
        } else {
            x.0 - stride
        };
        Site(flat)
    }

    /// All `2d` neighbours of `x`, one per signed unit direction.
    pub fn neighbors(&self, x: Site) -> Result<Vec<Site>> {
        self.check(x)?;
        Ok((0..self.degree()).map(|dir| self.neighbor(x, dir)).collect())
    }

    /// Shortest-path distance on the torus graph.
    pub fn graph_distance(&self, x: Site, y: Site) -> Result<usize> {
        self.check(x)?;
        self.check(y)?;
        let (cx, cy) = (self.coords(x), self.coords(y));
        Ok((0..self.d).map(|i| self.axis_gap(cx[i], cy[i])).sum())
    }

    /// `N` times the Euclidean distance between `x/N` and `y/N` on the
    /// continuous torus.
    pub fn euclidean_distance(&self, x: Site, y: Site) -> Result<f64> {
        self.check(x)?;
        self.check(y)?;
        let (cx, cy) = (self.coords(x), self.coords(y));
        let sq: usize = (0..self.d).map(|i| self.axis_gap(cx[i], cy[i]).pow(2)).sum();
        Ok((sq as f64).sqrt())
    }

    #[inline]
    fn axis_gap(&self, a: usize, b: usize) -> usize {
        let g = a.abs_diff(b);
        g.min(self.n - g)
    }

    /// Site whose cube `prod [x_i/N, (x_i+1)/N)` contains `point`.
    pub fn cube_index(&self, point: &[f64]) -> Result<Site> {
        if point.len() != self.d {
            return invalid(format!("expected a {}-dimensional point, got {}", self.d, point.len()));
        }
        let mut flat = 0;
        for &p in point {
            if !(0.0..1.0).contains(&p) {
                return invalid(format!("point coordinate {p} outside [0, 1)"));
            }
            let c = ((p * self.n as f64).floor() as usize).min(self.n - 1);
            flat = flat * self.n + c;
        }
        Ok(Site(flat))
    }

    /// Lower corner `x/N` of the cube of `x`, padded with zeros.
    pub fn position(&self, x: Site) -> [f64; MAX_DIM] {
        let c = self.coords(x);
        let mut out = [0.0; MAX_DIM];
        for i in 0..self.d {
            out[i] = c[i] as f64 / self.n as f64;
        }
        out
    }
}

/// A set of sites with O(1) membership.
#[derive(Clone, Debug)]
pub struct SiteSet {
    mask: Vec<bool>,
    members: Vec<Site>,
}

impl SiteSet {
    pub fn new(spec: &TorusSpec, sites: &[Site]) -> Result<Self> {
        let mut mask = vec![false; spec.sites()];
        let mut members = Vec::with_capacity(sites.len());
        for &s in sites {
            spec.check(s)?;
            if !mask[s.0] {
                mask[s.0] = true;
                members.push(s);
            }
        }
        Ok(Self { mask, members })
    }

    pub fn full(spec: &TorusSpec) -> Self {
        Self {
            mask: vec![true; spec.sites()],
            members: (0..spec.sites()).map(Site).collect(),
        }
    }

    #[inline]
    pub fn contains(&self, x: Site) -> bool {
        self.mask.get(x.0).copied().unwrap_or(false)
    }

    pub fn members(&self) -> &[Site] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn capacity_sites(&self) -> usize {
        self.mask.len()
    }

    /// Complement within the torus.
    pub fn complement(&self) -> Self {
        let mask: Vec<bool> = self.mask.iter().map(|m| !m).collect();
        let members = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| Site(i)).collect();
        Self { mask, members }
    }

    pub fn is_disjoint(&self, other: &SiteSet) -> bool {
        self.members.iter().all(|&s| !other.contains(s))
    }
}
