//! Geometry of Z^d: dimensions, sites, sup-norm boxes, nearest-neighbour
//! steps and signed-permutation symmetries.

use std::fmt;
use std::ops::{Add, Sub};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest dimension a [`Site`] can hold.
pub const MAX_DIM: usize = 8;
/// Default ceiling for [`Dim::new`].
pub const DEFAULT_DIM_CEILING: usize = 5;

/// A lattice dimension d ≥ 3.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Dim(u8);

impl Dim {
    pub fn new(d: usize) -> Result<Self> {
        Self::with_ceiling(d, DEFAULT_DIM_CEILING)
    }

    pub fn with_ceiling(d: usize, ceiling: usize) -> Result<Self> {
        if d < 3 {
            return Err(Error::DimensionTooSmall(d));
        }
        let ceiling = ceiling.min(MAX_DIM);
        if d > ceiling {
            return Err(Error::DimensionAboveCeiling { d, ceiling });
        }
        Ok(Dim(d as u8))
    }

    #[inline]
    pub fn get(self) -> usize {
        self.0 as usize
    }

    /// Number of nearest neighbours, 2d.
    #[inline]
    pub fn degree(self) -> usize {
        2 * self.get()
    }
}

impl TryFrom<usize> for Dim {
    type Error = Error;
    fn try_from(d: usize) -> Result<Self> {
        Dim::with_ceiling(d, MAX_DIM)
    }
}

impl From<Dim> for usize {
    fn from(d: Dim) -> usize {
        d.get()
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A point of Z^d with d ≤ [`MAX_DIM`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<i32>", into = "Vec<i32>")]
pub struct Site {
    dim: u8,
    coords: [i32; MAX_DIM],
}

impl Site {
    pub fn origin(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} out of range");
        Site { dim: dim as u8, coords: [0; MAX_DIM] }
    }

    pub fn new(coords: &[i32]) -> Self {
        let mut s = Site::origin(coords.len());
        s.coords[..coords.len()].copy_from_slice(coords);
        s
    }

    /// The site `scale·e_axis`.
    pub fn axis(dim: usize, axis: usize, scale: i32) -> Self {
        let mut s = Site::origin(dim);
        s.coords[axis] = scale;
        s
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[i32] {
        &self.coords[..self.dim as usize]
    }

    #[inline]
    pub fn coords_mut(&mut self) -> &mut [i32] {
        &mut self.coords[..self.dim as usize]
    }

    #[inline]
    pub fn get(&self, axis: usize) -> i32 {
        self.coords[axis]
    }

    #[inline]
    pub fn set(&mut self, axis: usize, value: i32) {
        self.coords[axis] = value;
    }

    /// Sup-norm |x|.
    pub fn sup_norm(&self) -> u32 {
        self.coords().iter().map(|c| c.unsigned_abs()).max().unwrap_or(0)
    }

    /// L1-norm |x|_1.
    pub fn l1_norm(&self) -> u32 {
        self.coords().iter().map(|c| c.unsigned_abs()).sum()
    }

    pub fn euclidean_norm(&self) -> f64 {
        self.coords().iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>().sqrt()
    }

    pub fn sup_dist(&self, other: &Site) -> u32 {
        (*self - *other).sup_norm()
    }

    pub fn is_adjacent(&self, other: &Site) -> bool {
        self.dim == other.dim && (*self - *other).l1_norm() == 1
    }

    /// The 2d nearest neighbours, ordered +e_1, −e_1, +e_2, −e_2, …
    pub fn neighbours(&self) -> impl Iterator<Item = Site> + '_ {
        (0..2 * self.dim()).map(move |k| self.step(k))
    }

    /// Neighbour number `k` in the order of [`Site::neighbours`].
    #[inline]
    pub fn step(&self, k: usize) -> Site {
        let mut s = *self;
        s.coords[k / 2] += if k % 2 == 0 { 1 } else { -1 };
        s
    }

    /// Absolute coordinates sorted ascending: the key under the signed-permutation group.
    pub fn canonical(&self) -> Site {
        let mut s = *self;
        let d = self.dim();
        for c in &mut s.coords[..d] {
            *c = c.abs();
        }
        s.coords[..d].sort_unstable();
        s
    }

    pub(crate) fn check_dim(&self, d: usize) -> Result<()> {
        if self.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, found: self.dim() });
        }
        Ok(())
    }
}

impl Add for Site {
    type Output = Site;
    fn add(mut self, rhs: Site) -> Site {
        debug_assert_eq!(self.dim, rhs.dim);
        for i in 0..self.dim() {
            self.coords[i] += rhs.coords[i];
        }
        self
    }
}

impl Sub for Site {
    type Output = Site;
    fn sub(mut self, rhs: Site) -> Site {
        debug_assert_eq!(self.dim, rhs.dim);
        for i in 0..self.dim() {
            self.coords[i] -= rhs.coords[i];
        }
        self
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, c) in self.coords().iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str(")")
    }
}

impl TryFrom<Vec<i32>> for Site {
    type Error = Error;
    fn try_from(v: Vec<i32>) -> Result<Self> {
        if v.is_empty() || v.len() > MAX_DIM {
            return Err(Error::InvalidParameter(format!("site of length {}", v.len())));
        }
        Ok(Site::new(&v))
    }
}

impl From<Site> for Vec<i32> {
    fn from(s: Site) -> Vec<i32> {
        s.coords().to_vec()
    }
}

/// One uniform nearest-neighbour step of simple random walk.
#[inline]
pub fn srw_step<R: Rng + ?Sized>(x: &Site, rng: &mut R) -> Site {
    x.step(rng.random_range(0..2 * x.dim()))
}

/// The sup-norm box B(center, radius).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoxRegion {
    pub center: Site,
    pub radius: u32,
}

impl BoxRegion {
    pub fn new(center: Site, radius: u32) -> Self {
        BoxRegion { center, radius }
    }

    pub fn centered(dim: usize, radius: u32) -> Self {
        BoxRegion { center: Site::origin(dim), radius }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    #[inline]
    pub fn side(&self) -> usize {
        2 * self.radius as usize + 1
    }

    pub fn volume(&self) -> usize {
        self.side().pow(self.dim() as u32)
    }

    #[inline]
    pub fn contains(&self, x: &Site) -> bool {
        let r = self.radius as i32;
        x.coords().iter().zip(self.center.coords()).all(|(a, c)| (a - c).abs() <= r)
    }

    /// Whether `other` lies inside this box.
    pub fn covers(&self, other: &BoxRegion) -> bool {
        (self.center - other.center).sup_norm() + other.radius <= self.radius
    }

    /// Dense row-major index with the first coordinate varying fastest.
    #[inline]
    pub fn index(&self, x: &Site) -> Option<usize> {
        let r = self.radius as i32;
        let side = self.side();
        let mut idx = 0usize;
        for i in (0..self.dim()).rev() {
            let off = x.get(i) - self.center.get(i) + r;
            if off < 0 || off > 2 * r {
                return None;
            }
            idx = idx * side + off as usize;
        }
        Some(idx)
    }

    pub fn site_at(&self, mut idx: usize) -> Site {
        let side = self.side();
        let r = self.radius as i32;
        let mut s = Site::origin(self.dim());
        for i in 0..self.dim() {
            s.set(i, (idx % side) as i32 - r + self.center.get(i));
            idx /= side;
        }
        s
    }

    /// All sites in index order.
    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.volume()).map(|i| self.site_at(i))
    }

    /// Whether `x` is in the box and has a neighbour outside it.
    #[inline]
    pub fn on_inner_boundary(&self, x: &Site) -> bool {
        let r = self.radius as i32;
        self.contains(x)
            && x.coords().iter().zip(self.center.coords()).any(|(a, c)| (a - c).abs() == r)
    }

    /// Sites of the interior boundary, in index order.
    pub fn inner_boundary(&self) -> Vec<Site> {
        self.sites().filter(|x| self.on_inner_boundary(x)).collect()
    }

    pub fn inner_boundary_len(&self) -> usize {
        if self.radius == 0 {
            return 1;
        }
        let d = self.dim() as u32;
        self.side().pow(d) - (self.side() - 2).pow(d)
    }
}

/// A signed permutation of coordinates: `apply(v)[perm[k]] = sign[k]·v[k]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SignedPerm {
    dim: u8,
    perm: [u8; MAX_DIM],
    negate: u8,
}

impl SignedPerm {
    pub fn identity(dim: usize) -> Self {
        let mut perm = [0u8; MAX_DIM];
        for (k, p) in perm.iter_mut().enumerate() {
            *p = k as u8;
        }
        SignedPerm { dim: dim as u8, perm, negate: 0 }
    }

    /// All 2^d·d! signed permutations.
    pub fn all(dim: usize) -> Vec<SignedPerm> {
        let mut perms = Vec::new();
        let mut cur: Vec<u8> = (0..dim as u8).collect();
        permutations(&mut cur, 0, &mut perms);
        let mut out = Vec::with_capacity(perms.len() << dim);
        for p in perms {
            for negate in 0..(1u16 << dim) {
                let mut perm = [0u8; MAX_DIM];
                perm[..dim].copy_from_slice(&p);
                out.push(SignedPerm { dim: dim as u8, perm, negate: negate as u8 });
            }
        }
        out
    }

    #[inline]
    pub fn apply(&self, v: &Site) -> Site {
        let mut out = Site::origin(self.dim as usize);
        for k in 0..self.dim as usize {
            let c = v.get(k);
            out.set(self.perm[k] as usize, if self.negate >> k & 1 == 1 { -c } else { c });
        }
        out
    }

    #[inline]
    pub fn apply_inverse(&self, v: &Site) -> Site {
        let mut out = Site::origin(self.dim as usize);
        for k in 0..self.dim as usize {
            let c = v.get(self.perm[k] as usize);
            out.set(k, if self.negate >> k & 1 == 1 { -c } else { c });
        }
        out
    }

    /// Returns `(c, σ)` with `c` the absolute values of `v` sorted descending and `σ.apply(c) = v`.
    pub fn canonicalize_descending(v: &Site) -> (Site, SignedPerm) {
        let d = v.dim();
        let mut order = [0u8; MAX_DIM];
        for (k, o) in order.iter_mut().enumerate().take(d) {
            *o = k as u8;
        }
        order[..d].sort_by(|&a, &b| v.get(b as usize).abs().cmp(&v.get(a as usize).abs()).then(a.cmp(&b)));
        let mut canon = Site::origin(d);
        let mut negate = 0u8;
        for k in 0..d {
            let c = v.get(order[k] as usize);
            canon.set(k, c.abs());
            if c < 0 {
                negate |= 1 << k;
            }
        }
        (canon, SignedPerm { dim: d as u8, perm: order, negate })
    }
}

fn permutations(cur: &mut Vec<u8>, k: usize, out: &mut Vec<Vec<u8>>) {
    if k == cur.len() {
        out.push(cur.clone());
        return;
    }
    for i in k..cur.len() {
        cur.swap(k, i);
        permutations(cur, k + 1, out);
        cur.swap(k, i);
    }
}
