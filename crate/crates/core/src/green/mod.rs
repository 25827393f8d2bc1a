//! The lattice Green function g(0,x) of simple random walk on Z^d.
//!
//! [`GreenTable`] stores one value per canonical site (absolute coordinates
//! sorted ascending) in a dense array ranked by the combinatorial number
//! system, so every signed permutation of `x` reads the same cell.

mod asymptotic;
mod quadrature;

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::lattice::{Dim, MAX_DIM, Site};

pub use asymptotic::{asymptotic_green, far_field_constant};
use quadrature::Quadrature;

/// Default absolute accuracy of tabulated values.
pub const DEFAULT_TOL: f64 = 1e-8;
/// Default table radius.
pub const DEFAULT_RADIUS: u32 = 64;
/// Largest sup-norm accepted by [`green_value`].
pub const MAX_QUERY_RADIUS: u32 = 4096;

const CACHE_MAGIC: &[u8; 4] = b"IGRT";
const CACHE_VERSION: u32 = 1;

/// g(0,x) to absolute accuracy `tol`, by direct quadrature.
pub fn green_value(x: &Site, dim: Dim, tol: f64) -> Result<f64> {
    check_tol(tol)?;
    x.check_dim(dim.get())?;
    let norm = x.sup_norm();
    if norm > MAX_QUERY_RADIUS {
        return Err(Error::OutsideTable { site: x.to_string(), norm, radius: MAX_QUERY_RADIUS });
    }
    let quad = Quadrature::new(dim.get(), norm, tol);
    let ladders = quad.bessel_ladders(norm as usize);
    let orders: Vec<u32> = x.coords().iter().map(|c| c.unsigned_abs()).collect();
    let body: f64 = (0..quad.nodes.len())
        .map(|p| quad.weights[p] * orders.iter().map(|&n| ladders[n as usize][p]).product::<f64>())
        .sum();
    Ok(body + quad.tail(&orders))
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveTolerance(tol))
    }
}

/// Result of a lookup that may fall outside the table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GreenLookup {
    pub value: f64,
    /// Set when the value comes from the far-field expansion rather than the table.
    pub approximate: bool,
}

/// Band `[lo, hi]` containing g(0,x)·(|x|+1)^{d−2} for every x.
///
/// The lower end is half the far-field value along the main diagonal, where the
/// rescaled Green function is smallest.
pub fn decay_band(dim: Dim) -> (f64, f64) {
    let d = dim.get() as f64;
    (0.5 * far_field_constant(dim) * d.powf(1.0 - d / 2.0), 2.0)
}

/// Immutable table of g(0,x) for all x with |x| ≤ radius.
#[derive(Clone, Debug)]
pub struct GreenTable {
    dim: Dim,
    radius: u32,
    tol: f64,
    values: Vec<f64>,
    binom: Vec<u64>,
}

impl GreenTable {
    /// Tabulates every canonical site of sup-norm at most `radius`.
    pub fn build(dim: Dim, radius: u32, tol: f64) -> Result<Self> {
        check_tol(tol)?;
        if radius < 1 {
            return Err(Error::InvalidParameter("green table radius must be ≥ 1".into()));
        }
        let d = dim.get();
        let binom = binomial_table(radius as usize + d, d);
        let count = binom[(radius as usize + d) * (d + 1) + d] as usize;
        let mut table = GreenTable { dim, radius, tol, values: vec![0.0; count], binom };

        let quad = Quadrature::new(d, radius, tol);
        let ladders = quad.bessel_ladders(radius as usize);
        let mut partials = vec![quad.weights.clone(); d + 1];
        let mut orders = [0u32; MAX_DIM];
        table.fill(&quad, &ladders, &mut partials, &mut orders, d, radius);
        Ok(table)
    }

    fn fill(
        &mut self,
        quad: &Quadrature,
        ladders: &[Vec<f64>],
        partials: &mut [Vec<f64>],
        orders: &mut [u32; MAX_DIM],
        level: usize,
        bound: u32,
    ) {
        let d = self.dim.get();
        let slot = level - 1;
        for a in 0..=bound {
            orders[slot] = a;
            let ladder = &ladders[a as usize];
            if slot == 0 {
                let body = crate::linalg::dot(&partials[1], ladder);
                let rank = self.rank(&orders[..d]);
                self.values[rank] = body + quad.tail(&orders[..d]);
            } else {
                let (head, tail) = partials.split_at_mut(slot + 1);
                let src = &tail[0];
                for ((dst, s), l) in head[slot].iter_mut().zip(src).zip(ladder) {
                    *dst = s * l;
                }
                self.fill(quad, ladders, partials, orders, slot, a);
            }
        }
    }

    /// Reads a table from `dir` if a matching cache file exists, otherwise builds and stores it.
    pub fn load_or_build(dir: &Path, dim: Dim, radius: u32, tol: f64) -> Result<Self> {
        let path = Self::cache_path(dir, dim, radius, tol);
        if path.exists() {
            if let Ok(table) = Self::load(&path) {
                if table.dim == dim && table.radius == radius && table.tol.to_bits() == tol.to_bits() {
                    return Ok(table);
                }
            }
        }
        let table = Self::build(dim, radius, tol)?;
        fs::create_dir_all(dir)?;
        table.save(&path)?;
        Ok(table)
    }

    pub fn cache_path(dir: &Path, dim: Dim, radius: u32, tol: f64) -> PathBuf {
        dir.join(format!("green-d{dim}-r{radius}-tol{tol:e}.bin"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(32 + 8 * self.values.len());
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim.get() as u32).to_le_bytes());
        buf.extend_from_slice(&self.radius.to_le_bytes());
        buf.extend_from_slice(&self.tol.to_le_bytes());
        buf.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Cache { path: path.to_path_buf(), reason: reason.to_string() };
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 32 || &bytes[..4] != CACHE_MAGIC {
            return Err(bad("not a green table file"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        if u32_at(4) != CACHE_VERSION {
            return Err(bad("unsupported version"));
        }
        let dim = Dim::try_from(u32_at(8) as usize)?;
        let radius = u32_at(12);
        let tol = f64::from_bits(u64_at(16));
        let count = u64_at(24) as usize;
        let d = dim.get();
        let binom = binomial_table(radius as usize + d, d);
        if binom[(radius as usize + d) * (d + 1) + d] as usize != count || bytes.len() != 32 + 8 * count {
            return Err(bad("truncated or inconsistent payload"));
        }
        let values = bytes[32..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(GreenTable { dim, radius, tol, values, binom })
    }

    #[inline]
    pub fn dim(&self) -> Dim {
        self.dim
    }

    #[inline]
    pub fn radius(&self) -> u32 {
        self.radius
    }

    #[inline]
    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// Number of canonical entries.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// g(0,0).
    #[inline]
    pub fn origin(&self) -> f64 {
        self.values[0]
    }

    #[inline]
    fn rank(&self, sorted: &[u32]) -> usize {
        let w = self.dim.get() + 1;
        let mut r = 0u64;
        for (i, &a) in sorted.iter().enumerate() {
            r += self.binom[(a as usize + i) * w + i + 1];
        }
        r as usize
    }

    /// Storage cell of g(0,x), shared by the whole signed-permutation orbit of `x`.
    #[inline]
    pub fn cell(&self, x: &Site) -> Option<usize> {
        let d = self.dim.get();
        debug_assert_eq!(x.dim(), d);
        let mut a = [0u32; MAX_DIM];
        for (slot, c) in a.iter_mut().zip(x.coords()) {
            *slot = c.unsigned_abs();
        }
        let a = &mut a[..d];
        for i in 1..d {
            let mut j = i;
            while j > 0 && a[j - 1] > a[j] {
                a.swap(j - 1, j);
                j -= 1;
            }
        }
        if a[d - 1] > self.radius {
            return None;
        }
        Some(self.rank(a))
    }

    /// g(0,x) if |x| ≤ radius.
    #[inline]
    pub fn get(&self, x: &Site) -> Option<f64> {
        self.cell(x).map(|c| self.values[c])
    }

    /// g(0,x), failing outside the table.
    #[inline]
    pub fn value(&self, x: &Site) -> Result<f64> {
        self.get(x).ok_or_else(|| self.outside(x))
    }

    /// g(x,y) = g(0, y−x).
    #[inline]
    pub fn g(&self, x: &Site, y: &Site) -> Result<f64> {
        self.value(&(*y - *x))
    }

    /// g(0,x), falling back to the far-field expansion outside the table.
    pub fn lookup(&self, x: &Site) -> GreenLookup {
        match self.get(x) {
            Some(value) => GreenLookup { value, approximate: false },
            None => GreenLookup { value: asymptotic_green(x), approximate: true },
        }
    }

    fn outside(&self, x: &Site) -> Error {
        Error::OutsideTable { site: x.to_string(), norm: x.sup_norm(), radius: self.radius }
    }

    /// Canonical sites in storage order.
    pub fn canonical_sites(&self) -> impl Iterator<Item = Site> + '_ {
        let d = self.dim.get();
        let radius = self.radius;
        let mut next = Some([0u32; MAX_DIM]);
        std::iter::from_fn(move || {
            let cur = next?;
            let mut a = cur;
            next = None;
            for i in 0..d {
                let cap = if i + 1 < d { a[i + 1] } else { radius };
                if a[i] < cap {
                    a[i] += 1;
                    for slot in a.iter_mut().take(i) {
                        *slot = 0;
                    }
                    next = Some(a);
                    break;
                }
            }
            let coords: Vec<i32> = cur[..d].iter().map(|&c| c as i32).collect();
            Some(Site::new(&coords))
        })
    }

    /// Stored values in storage order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// |g(0,0) − 1 − (1/2d)·Σ_e g(0,e)|.
    pub fn harmonic_residual_at_origin(&self) -> f64 {
        let e1 = Site::axis(self.dim.get(), 0, 1);
        (self.origin() - 1.0 - self.values[self.cell(&e1).unwrap()]).abs()
    }

    /// Largest |g(0,x) − mean over neighbours| over tabulated x ≠ 0 with |x| < radius.
    pub fn max_harmonic_defect(&self) -> f64 {
        let deg = self.dim.degree() as f64;
        self.canonical_sites()
            .filter(|x| x.sup_norm() > 0 && x.sup_norm() < self.radius)
            .map(|x| {
                let mean: f64 = x.neighbours().map(|y| self.get(&y).unwrap()).sum::<f64>() / deg;
                (self.get(&x).unwrap() - mean).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Canonical sites whose rescaled value g(0,x)·(|x|+1)^{d−2} leaves [`decay_band`].
    pub fn band_violations(&self) -> Vec<(Site, f64)> {
        let (lo, hi) = decay_band(self.dim);
        let p = self.dim.get() as i32 - 2;
        self.canonical_sites()
            .zip(self.values.iter())
            .map(|(x, &v)| (x, v * ((x.sup_norm() + 1) as f64).powi(p)))
            .filter(|&(_, r)| !(lo..=hi).contains(&r))
            .collect()
    }
}

/// Row-major table of C(n,k) for n ≤ `nmax`, k ≤ `kmax`.
fn binomial_table(nmax: usize, kmax: usize) -> Vec<u64> {
    let w = kmax + 1;
    let mut t = vec![0u64; (nmax + 1) * w];
    for n in 0..=nmax {
        t[n * w] = 1;
        for k in 1..=kmax.min(n) {
            t[n * w + k] = t[(n - 1) * w + k - 1] + if k <= n - 1 { t[(n - 1) * w + k] } else { 0 };
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dim(d: usize) -> Dim {
        Dim::new(d).unwrap()
    }

    #[test]
    fn binomials() {
        let t = binomial_table(10, 4);
        assert_eq!(t[10 * 5 + 3], 120);
        assert_eq!(t[4 * 5 + 4], 1);
        assert_eq!(t[3 * 5 + 4], 0);
    }

    #[test]
    fn radius_one_has_two_entries_in_3d() {
        let gt = GreenTable::build(dim(3), 1, 1e-8).unwrap();
        assert_eq!(gt.len(), 4);
        let sites: Vec<Site> = gt.canonical_sites().collect();
        assert_eq!(sites.len(), 4);
        // Origin and axis neighbour are the two entries within L1 distance one.
        let near: Vec<&Site> = sites.iter().filter(|s| s.l1_norm() <= 1).collect();
        assert_eq!(near.len(), 2);
    }

    #[test]
    fn ranks_enumerate_storage_order() {
        let gt = GreenTable::build(dim(4), 5, 1e-6).unwrap();
        for (i, s) in gt.canonical_sites().enumerate() {
            assert_eq!(gt.cell(&s), Some(i));
        }
        assert_eq!(gt.canonical_sites().count(), gt.len());
    }

    #[test]
    fn errors() {
        assert!(matches!(green_value(&Site::origin(3), dim(3), 0.0), Err(Error::NonPositiveTolerance(_))));
        assert!(matches!(green_value(&Site::origin(3), dim(3), -1.0), Err(Error::NonPositiveTolerance(_))));
        assert!(matches!(GreenTable::build(dim(3), 0, 1e-8), Err(Error::InvalidParameter(_))));
        let gt = GreenTable::build(dim(3), 2, 1e-8).unwrap();
        assert!(matches!(gt.value(&Site::new(&[3, 0, 0])), Err(Error::OutsideTable { .. })));
    }

    #[test]
    fn lookup_flags_far_field() {
        let gt = GreenTable::build(dim(3), 8, 1e-8).unwrap();
        let inside = gt.lookup(&Site::new(&[8, 1, 0]));
        assert!(!inside.approximate);
        let outside = gt.lookup(&Site::new(&[9, 0, 0]));
        assert!(outside.approximate);
        let exact = green_value(&Site::new(&[9, 0, 0]), dim(3), 1e-10).unwrap();
        assert!((outside.value - exact).abs() < 1e-4);
    }

    #[test]
    fn cache_roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let gt = GreenTable::load_or_build(dir.path(), dim(3), 6, 1e-8).unwrap();
        let path = GreenTable::cache_path(dir.path(), dim(3), 6, 1e-8);
        assert!(path.exists());
        let back = GreenTable::load(&path).unwrap();
        assert_eq!(back.radius(), 6);
        assert_eq!(back.tol().to_bits(), 1e-8f64.to_bits());
        assert!(gt.values().iter().zip(back.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let again = GreenTable::load_or_build(dir.path(), dim(3), 6, 1e-8).unwrap();
        assert_eq!(again.values(), gt.values());
    }

    #[test]
    fn corrupt_cache_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        fs::write(&path, b"nonsense").unwrap();
        assert!(matches!(GreenTable::load(&path), Err(Error::Cache { .. })));
    }
}
