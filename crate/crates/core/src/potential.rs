//! Discrete potential theory on finite subsets of Z^d: equilibrium measure,
//! capacity, hitting probabilities and the walk conditioned to hit a set.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use rand::distr::Distribution;
use rand_distr::weighted::WeightedAliasIndex;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::green::GreenTable;
use crate::lattice::{BoxRegion, SignedPerm, Site};
use crate::linalg::Cholesky;

/// Most negative equilibrium entry accepted before clamping.
pub const NEGATIVE_TOLERANCE: f64 = -1e-10;

/// A nonempty finite subset of Z^d, sorted and deduplicated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiniteSet {
    sites: Vec<Site>,
    members: HashSet<Site>,
}

impl FiniteSet {
    pub fn new(sites: impl IntoIterator<Item = Site>) -> Result<Self> {
        let mut sites: Vec<Site> = sites.into_iter().collect();
        let first = *sites.first().ok_or(Error::EmptySet)?;
        for s in &sites {
            s.check_dim(first.dim())?;
        }
        sites.sort_unstable();
        sites.dedup();
        let members = sites.iter().copied().collect();
        Ok(FiniteSet { sites, members })
    }

    pub fn singleton(x: Site) -> Self {
        FiniteSet::new([x]).expect("singleton is nonempty")
    }

    pub fn from_box(b: &BoxRegion) -> Self {
        FiniteSet::new(b.sites()).expect("boxes are nonempty")
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.sites[0].dim()
    }

    #[inline]
    pub fn contains(&self, x: &Site) -> bool {
        self.members.contains(x)
    }

    pub fn union(&self, other: &FiniteSet) -> Result<Self> {
        FiniteSet::new(self.sites.iter().chain(&other.sites).copied())
    }

    pub fn with_site(&self, z: Site) -> Result<Self> {
        FiniteSet::new(self.sites.iter().copied().chain([z]))
    }

    pub fn is_subset(&self, other: &FiniteSet) -> bool {
        self.sites.iter().all(|s| other.contains(s))
    }

    /// Largest sup-distance between two members.
    pub fn span(&self) -> u32 {
        (0..self.dim())
            .map(|i| {
                let (lo, hi) = self.sites.iter().fold((i32::MAX, i32::MIN), |(lo, hi), s| (lo.min(s.get(i)), hi.max(s.get(i))));
                (hi - lo) as u32
            })
            .max()
            .unwrap_or(0)
    }

    /// Members with a nearest neighbour outside the set.
    pub fn outer_layer(&self) -> Vec<Site> {
        self.sites.iter().filter(|x| x.neighbours().any(|y| !self.contains(&y))).copied().collect()
    }

    /// Signed permutations about the bounding-box center that map the set onto itself.
    fn symmetries(&self) -> (Site, Vec<SignedPerm>) {
        let d = self.dim();
        let mut doubled_center = Site::origin(d);
        for i in 0..d {
            let lo = self.sites.iter().map(|s| s.get(i)).min().unwrap();
            let hi = self.sites.iter().map(|s| s.get(i)).max().unwrap();
            doubled_center.set(i, lo + hi);
        }
        let doubled: HashSet<Site> = self.sites.iter().map(|s| double(s) - doubled_center).collect();
        let group = SignedPerm::all(d)
            .into_iter()
            .filter(|g| doubled.iter().all(|v| doubled.contains(&g.apply(v))))
            .collect();
        (doubled_center, group)
    }
}

fn double(s: &Site) -> Site {
    *s + *s
}

/// The set an equilibrium problem is posed on.
#[derive(Clone, Debug)]
pub enum Target {
    Set(FiniteSet),
    Box(BoxRegion),
}

impl Target {
    pub fn dim(&self) -> usize {
        match self {
            Target::Set(s) => s.dim(),
            Target::Box(b) => b.dim(),
        }
    }

    #[inline]
    pub fn contains(&self, x: &Site) -> bool {
        match self {
            Target::Set(s) => s.contains(x),
            Target::Box(b) => b.contains(x),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Target::Set(s) => s.len(),
            Target::Box(b) => b.volume(),
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// All members; materializes boxes.
    pub fn sites(&self) -> Vec<Site> {
        match self {
            Target::Set(s) => s.sites().to_vec(),
            Target::Box(b) => b.sites().collect(),
        }
    }

    fn outer_layer(&self) -> Vec<Site> {
        match self {
            Target::Set(s) => s.outer_layer(),
            Target::Box(b) => b.inner_boundary(),
        }
    }

    fn span(&self) -> u32 {
        match self {
            Target::Set(s) => s.span(),
            Target::Box(b) => 2 * b.radius,
        }
    }

    fn symmetries(&self) -> (Site, Vec<SignedPerm>) {
        match self {
            Target::Set(s) => s.symmetries(),
            Target::Box(b) => (double(&b.center), SignedPerm::all(b.dim())),
        }
    }
}

/// Equilibrium data of a finite set K.
///
/// `e_K` vanishes at members of K all of whose neighbours lie in K, so it is
/// stored on the outer layer only (the `support`).
#[derive(Clone, Debug)]
pub struct PotentialData {
    target: Target,
    support: Vec<Site>,
    support_index: HashMap<Site, usize>,
    eq_measure: Vec<f64>,
    capacity: f64,
    normalized: Vec<f64>,
    residual: f64,
    starts: WeightedAliasIndex<f64>,
}

/// Solves `G_K·e_K = 1` for an explicit set.
pub fn solve_equilibrium(k: &FiniteSet, gt: &GreenTable) -> Result<PotentialData> {
    PotentialData::solve(Target::Set(k.clone()), gt)
}

/// Solves the equilibrium problem for a sup-norm box.
pub fn solve_equilibrium_box(b: &BoxRegion, gt: &GreenTable) -> Result<PotentialData> {
    PotentialData::solve(Target::Box(*b), gt)
}

impl PotentialData {
    pub fn solve(target: Target, gt: &GreenTable) -> Result<Self> {
        if target.dim() != gt.dim().get() {
            return Err(Error::DimensionMismatch { expected: gt.dim().get(), found: target.dim() });
        }
        let span = target.span();
        if span > gt.radius() {
            return Err(Error::SetBeyondTable { span, radius: gt.radius() });
        }
        let support = target.outer_layer();
        let (center2, group) = target.symmetries();
        let orbits = Orbits::new(&support, center2, &group);
        let (eq_orbit, residual) = orbits.solve_unit_potential(gt)?;

        let mut eq_measure = vec![0.0; support.len()];
        for (o, &v) in eq_orbit.iter().enumerate() {
            for &m in orbits.members(o) {
                eq_measure[m] = v;
            }
        }
        let most_negative = eq_measure.iter().copied().fold(0.0, f64::min);
        if most_negative < NEGATIVE_TOLERANCE {
            return Err(Error::NegativeEquilibrium { value: most_negative });
        }
        for v in &mut eq_measure {
            *v = v.max(0.0);
        }
        let capacity: f64 = eq_measure.iter().sum();
        if !(capacity > 0.0) {
            return Err(Error::SingularMatrix { pivot: 0, value: capacity });
        }
        let normalized: Vec<f64> = eq_measure.iter().map(|v| v / capacity).collect();
        let starts = WeightedAliasIndex::new(normalized.clone())
            .map_err(|e| Error::InvalidParameter(format!("equilibrium weights: {e}")))?;
        let support_index = support.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let mut pd = PotentialData { target, support, support_index, eq_measure, capacity, normalized, residual, starts };
        if let Target::Set(_) = pd.target {
            pd.residual = pd.residual.max(pd.full_residual(gt)?);
        }
        Ok(pd)
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    /// Sites where `e_K` may be positive.
    pub fn support(&self) -> &[Site] {
        &self.support
    }

    /// `e_K` on [`PotentialData::support`].
    pub fn eq_measure(&self) -> &[f64] {
        &self.eq_measure
    }

    /// `ẽ_K` on [`PotentialData::support`].
    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    /// Largest |Σ_y g(x,y)e_K(y) − 1| seen by the solver.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn eq_measure_at(&self, x: &Site) -> f64 {
        self.support_index.get(x).map_or(0.0, |&i| self.eq_measure[i])
    }

    #[inline]
    pub fn contains(&self, x: &Site) -> bool {
        self.target.contains(x)
    }

    /// max over x ∈ K of |Σ_y g(x,y)e_K(y) − 1|, over every member of K.
    pub fn full_residual(&self, gt: &GreenTable) -> Result<f64> {
        let sites = self.target.sites();
        let mut worst = 0.0f64;
        for x in &sites {
            let mut s = 0.0;
            for (y, e) in self.support.iter().zip(&self.eq_measure) {
                s += gt.g(x, y)? * e;
            }
            worst = worst.max((s - 1.0).abs());
        }
        Ok(worst)
    }

    /// Row-major Green matrix over the members of K.
    pub fn green_matrix(&self, gt: &GreenTable) -> Result<Vec<f64>> {
        let sites = self.target.sites();
        let mut m = Vec::with_capacity(sites.len() * sites.len());
        for x in &sites {
            for y in &sites {
                m.push(gt.g(x, y)?);
            }
        }
        Ok(m)
    }

    /// Σ_y g(x,y)e_K(y) without clamping, or `None` if some difference leaves the table.
    pub fn potential_at(&self, x: &Site, gt: &GreenTable) -> Option<f64> {
        let mut s = 0.0;
        for (y, e) in self.support.iter().zip(&self.eq_measure) {
            s += gt.get(&(*y - *x))? * e;
        }
        Some(s)
    }

    /// Σ_y g(x,y)e_K(y) using the far-field expansion where needed; the flag marks approximation.
    pub fn potential_far(&self, x: &Site, gt: &GreenTable) -> (f64, bool) {
        let mut s = 0.0;
        let mut approximate = false;
        for (y, e) in self.support.iter().zip(&self.eq_measure) {
            let l = gt.lookup(&(*y - *x));
            approximate |= l.approximate;
            s += l.value * e;
        }
        (s, approximate)
    }
}

/// Orbits of the support under the symmetry group, grouped contiguously.
struct Orbits {
    // Support indices ordered orbit by orbit.
    order: Vec<usize>,
    offsets: Vec<usize>,
    reps: Vec<Site>,
    support: Vec<Site>,
}

impl Orbits {
    fn new(support: &[Site], center2: Site, group: &[SignedPerm]) -> Self {
        let index: HashMap<Site, usize> = support.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let mut seen = vec![false; support.len()];
        let mut order = Vec::with_capacity(support.len());
        let mut offsets = vec![0];
        let mut reps = Vec::new();
        for (i, s) in support.iter().enumerate() {
            if seen[i] {
                continue;
            }
            reps.push(*s);
            let v = double(s) - center2;
            for g in group {
                let mut img = g.apply(&v) + center2;
                for c in img.coords_mut() {
                    *c /= 2;
                }
                let j = index[&img];
                if !seen[j] {
                    seen[j] = true;
                    order.push(j);
                }
            }
            offsets.push(order.len());
        }
        Orbits { order, offsets, reps, support: support.to_vec() }
    }

    fn count(&self) -> usize {
        self.reps.len()
    }

    fn members(&self, o: usize) -> &[usize] {
        &self.order[self.offsets[o]..self.offsets[o + 1]]
    }

    /// Solves for the orbit-constant `e` with unit potential on the support.
    ///
    /// With `A[a][b] = Σ_{y∈O_b} g(rep_a, y)` and orbit sizes `D`, the matrix `D·A`
    /// is symmetric positive definite and `D·A·e = D·1`.
    fn solve_unit_potential(&self, gt: &GreenTable) -> Result<(Vec<f64>, f64)> {
        let n = self.count();
        let sizes: Vec<f64> = (0..n).map(|o| self.members(o).len() as f64).collect();
        let ordered: Vec<Site> = self.order.iter().map(|&i| self.support[i]).collect();
        let mut a = vec![0.0; n * n];
        a.par_chunks_mut(n).enumerate().try_for_each(|(row, out)| -> Result<()> {
            let rep = self.reps[row];
            for col in 0..=row {
                let mut s = 0.0;
                for y in &ordered[self.offsets[col]..self.offsets[col + 1]] {
                    s += gt.value(&(*y - rep))?;
                }
                out[col] = s;
            }
            Ok(())
        })?;
        // Upper triangle of A from the symmetry of D·A.
        for r in 0..n {
            for c in r + 1..n {
                a[r * n + c] = a[c * n + r] * sizes[c] / sizes[r];
            }
        }
        let mut s = a.clone();
        for r in 0..n {
            for c in 0..=r {
                s[r * n + c] *= sizes[r];
            }
        }
        let chol = Cholesky::factor(s, n)?;
        let e = chol.solve(&sizes);
        let residual = (0..n)
            .map(|r| (crate::linalg::dot(&a[r * n..(r + 1) * n], &e) - 1.0).abs())
            .fold(0.0, f64::max);
        Ok((e, residual))
    }
}

/// P_x[H_K < ∞]: 1 on K, else Σ_y g(x,y)e_K(y) clamped to [0,1].
pub fn hitting_probability(x: &Site, pd: &PotentialData, gt: &GreenTable) -> Result<f64> {
    if pd.contains(x) {
        return Ok(1.0);
    }
    let mut s = 0.0;
    for (y, e) in pd.support.iter().zip(&pd.eq_measure) {
        s += gt.g(x, y)? * e;
    }
    Ok(s.clamp(0.0, 1.0))
}

/// The ratio bounds Σ_y g(x,y) / sup_z Σ_y g(z,y) ≤ P_x[H_K<∞] ≤ Σ_y g(x,y) / inf_z Σ_y g(z,y).
pub fn hitting_bounds(x: &Site, k: &FiniteSet, gt: &GreenTable) -> Result<(f64, f64)> {
    let mut num = 0.0;
    for y in k.sites() {
        num += gt.g(x, y)?;
    }
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for z in k.sites() {
        let mut s = 0.0;
        for y in k.sites() {
            s += gt.g(z, y)?;
        }
        lo = lo.min(s);
        hi = hi.max(s);
    }
    Ok((num / hi, num / lo))
}

/// Draws a start from ẽ_K.
pub fn sample_equilibrium_start<R: Rng + ?Sized>(pd: &PotentialData, rng: &mut R) -> Site {
    pd.support[pd.starts.sample(rng)]
}

/// h(x) = min(1, Σ_y g(x,y)e_K(y)), memoized per site within table reach.
///
/// Sites whose Green values leave the table use the far-field expansion, are not
/// cached, and are counted in [`HittingFunction::approximate_evaluations`].
pub struct HittingFunction<'a> {
    pd: &'a PotentialData,
    gt: &'a GreenTable,
    memo: HashMap<Site, f64>,
    approximate: u64,
}

impl<'a> HittingFunction<'a> {
    pub fn new(pd: &'a PotentialData, gt: &'a GreenTable) -> Self {
        HittingFunction { pd, gt, memo: HashMap::new(), approximate: 0 }
    }

    pub fn potential(&self) -> &PotentialData {
        self.pd
    }

    pub fn eval(&mut self, x: &Site) -> f64 {
        if self.pd.contains(x) {
            return 1.0;
        }
        if let Some(&h) = self.memo.get(x) {
            return h;
        }
        let (s, approximate) = self.pd.potential_far(x, self.gt);
        let h = s.clamp(0.0, 1.0);
        if approximate {
            self.approximate += 1;
        } else {
            self.memo.insert(*x, h);
        }
        h
    }

    pub fn approximate_evaluations(&self) -> u64 {
        self.approximate
    }

    pub fn cached_sites(&self) -> usize {
        self.memo.len()
    }
}

/// Transition probabilities (1/2d)·h(z)/h(x) of the walk conditioned to hit K.
pub fn h_transition_row(x: &Site, hf: &mut HittingFunction<'_>) -> Result<Vec<(Site, f64)>> {
    if hf.pd.contains(x) {
        return Err(Error::InsideTarget { site: x.to_string() });
    }
    let hx = hf.eval(x);
    if !(hx > f64::MIN_POSITIVE) {
        return Err(Error::VanishingHitting { site: x.to_string() });
    }
    let deg = 2.0 * x.dim() as f64;
    Ok(x.neighbours().map(|z| (z, hf.eval(&z) / (deg * hx))).collect())
}

/// One step of the Doob h-transform of simple random walk with respect to K.
pub fn h_transform_step<R: Rng + ?Sized>(x: &Site, hf: &mut HittingFunction<'_>, rng: &mut R) -> Result<Site> {
    let row = h_transition_row(x, hf)?;
    let total: f64 = row.iter().map(|(_, p)| p).sum();
    let mut u = rng.random::<f64>() * total;
    for (z, p) in &row {
        if u < *p {
            return Ok(*z);
        }
        u -= p;
    }
    Ok(row.iter().rev().find(|(_, p)| *p > 0.0).expect("some neighbour has positive weight").0)
}
