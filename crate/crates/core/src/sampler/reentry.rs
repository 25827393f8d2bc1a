//! Harmonic measure of a box seen from outside it.
//!
//! For x outside the window W, the entrance law μ_x(y) = P_x[H_W < ∞, X_{H_W} = y]
//! solves G_∂W·μ_x = g(x, ·) on the inner boundary ∂W. The Green matrix commutes
//! with coordinate sign flips about the center, so it splits into 2^d blocks,
//! one per character of the flip group, each of about |∂W|/2^d rows.

use std::collections::HashMap;
use std::sync::OnceLock;

use rand::Rng;
use rand::distr::Distribution;
use rand_distr::weighted::WeightedAliasIndex;
use rayon::prelude::*;

use crate::error::Result;
use crate::green::GreenTable;
use crate::lattice::{BoxRegion, MAX_DIM, SignedPerm, Site};
use crate::linalg::Cholesky;

struct Block {
    // Position of each flip orbit inside this block, or `u32::MAX` when the character vanishes on it.
    position: Vec<u32>,
    orbits: Vec<u32>,
    chol: Cholesky,
}

/// Symmetry-blocked factorization of the Green matrix on a window's inner boundary.
pub(crate) struct BoundaryGreen {
    support: Vec<Site>,
    orbit_of: Vec<u32>,
    flips_of: Vec<u8>,
    orbit_members: Vec<Vec<u32>>,
    blocks: Vec<Block>,
}

#[inline]
fn character(flips: u8, mask: usize) -> f64 {
    if (flips as usize & mask).count_ones() % 2 == 0 { 1.0 } else { -1.0 }
}

impl BoundaryGreen {
    /// `support` holds inner-boundary sites relative to the window center.
    pub(crate) fn new(support: Vec<Site>, gt: &GreenTable) -> Result<Self> {
        let d = gt.dim().get();
        let mut orbit_index: HashMap<Site, u32> = HashMap::new();
        let mut reps: Vec<Site> = Vec::new();
        let mut orbit_members: Vec<Vec<u32>> = Vec::new();
        let mut orbit_of = Vec::with_capacity(support.len());
        let mut flips_of = Vec::with_capacity(support.len());
        for (i, y) in support.iter().enumerate() {
            let mut rep = *y;
            let mut flips = 0u8;
            for (k, c) in rep.coords_mut().iter_mut().enumerate() {
                if *c < 0 {
                    flips |= 1 << k;
                    *c = -*c;
                }
            }
            let o = *orbit_index.entry(rep).or_insert_with(|| {
                reps.push(rep);
                orbit_members.push(Vec::new());
                (reps.len() - 1) as u32
            });
            orbit_members[o as usize].push(i as u32);
            orbit_of.push(o);
            flips_of.push(flips);
        }
        let zero_mask: Vec<usize> = reps
            .iter()
            .map(|r| r.coords().iter().enumerate().filter(|(_, c)| **c == 0).fold(0, |m, (k, _)| m | 1 << k))
            .collect();

        let masks = 1usize << d;
        let mut positions = vec![vec![u32::MAX; reps.len()]; masks];
        let mut block_orbits = vec![Vec::new(); masks];
        for (o, zm) in zero_mask.iter().enumerate() {
            for m in 0..masks {
                if m & zm == 0 {
                    positions[m][o] = block_orbits[m].len() as u32;
                    block_orbits[m].push(o as u32);
                }
            }
        }

        // Row `p` of block m: |O_p| · Σ_y g(rep_p − y) χ_m(y) over y in each admissible orbit.
        let rows: Vec<Vec<Vec<f64>>> = reps
            .par_iter()
            .enumerate()
            .map(|(o, rep)| -> Result<Vec<Vec<f64>>> {
                let mut acc: Vec<Vec<f64>> = block_orbits.iter().map(|b| vec![0.0; b.len()]).collect();
                let size = orbit_members[o].len() as f64;
                let admissible: Vec<usize> = (0..masks).filter(|&m| positions[m][o] != u32::MAX).collect();
                for (j, y) in support.iter().enumerate() {
                    let g = gt.value(&(*y - *rep))? * size;
                    let oy = orbit_of[j] as usize;
                    for &m in &admissible {
                        let pos = positions[m][oy];
                        if pos != u32::MAX {
                            acc[m][pos as usize] += g * character(flips_of[j], m);
                        }
                    }
                }
                Ok(acc)
            })
            .collect::<Result<_>>()?;

        let mut blocks = Vec::with_capacity(masks);
        for m in 0..masks {
            let n = block_orbits[m].len();
            let mut mat = vec![0.0; n * n];
            for (p, &o) in block_orbits[m].iter().enumerate() {
                mat[p * n..(p + 1) * n].copy_from_slice(&rows[o as usize][m]);
            }
            let chol = Cholesky::factor(mat, n)?;
            blocks.push(Block { position: positions[m].clone(), orbits: block_orbits[m].clone(), chol });
        }
        Ok(BoundaryGreen { support, orbit_of, flips_of, orbit_members, blocks })
    }

    pub(crate) fn support(&self) -> &[Site] {
        &self.support
    }

    /// Solves `G·μ = b` on the support.
    pub(crate) fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut mu = vec![0.0; self.support.len()];
        for (m, block) in self.blocks.iter().enumerate() {
            if block.orbits.is_empty() {
                continue;
            }
            let mut beta: Vec<f64> = block
                .orbits
                .iter()
                .map(|&o| {
                    self.orbit_members[o as usize]
                        .iter()
                        .map(|&j| character(self.flips_of[j as usize], m) * b[j as usize])
                        .sum()
                })
                .collect();
            block.chol.solve_in_place(&mut beta);
            for (j, out) in mu.iter_mut().enumerate() {
                let pos = block.position[self.orbit_of[j] as usize];
                if pos != u32::MAX {
                    *out += beta[pos as usize] * character(self.flips_of[j], m);
                }
            }
        }
        mu
    }
}

/// Entrance law into the window from one exterior site.
pub(crate) struct ExitLaw {
    /// P_x[H_W < ∞].
    pub(crate) hit: f64,
    entrance: Option<WeightedAliasIndex<f64>>,
}

impl ExitLaw {
    /// Support index of the entrance site, or `None` when the walk escapes.
    #[inline]
    pub(crate) fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        let entrance = self.entrance.as_ref()?;
        if rng.random::<f64>() < self.hit { Some(entrance.sample(rng)) } else { None }
    }
}

/// Exact re-entry kernel for walks leaving the escape shell of a window.
pub(crate) struct ReentryKernel {
    shell: u32,
    green: BoundaryGreen,
    eq_measure: Vec<f64>,
    slots: HashMap<Site, usize>,
    laws: Vec<OnceLock<ExitLaw>>,
}

impl ReentryKernel {
    /// `eq_measure` is e_W on the window's inner boundary listed in index order.
    pub(crate) fn new(window: BoxRegion, shell: u32, eq_measure: Vec<f64>, gt: &GreenTable) -> Result<Self> {
        let d = window.dim();
        let rel_support: Vec<Site> = window.inner_boundary().into_iter().map(|s| s - window.center).collect();
        let green = BoundaryGreen::new(rel_support, gt)?;
        let mut slots = HashMap::new();
        let mut tail = vec![0i32; d - 1];
        enumerate_descending(&mut tail, 0, shell as i32, &mut |t| {
            let mut c = Site::origin(d);
            c.set(0, shell as i32 + 1);
            for (k, v) in t.iter().enumerate() {
                c.set(k + 1, *v);
            }
            let n = slots.len();
            slots.insert(c, n);
        });
        let laws = (0..slots.len()).map(|_| OnceLock::new()).collect();
        Ok(ReentryKernel { shell, green, eq_measure, slots, laws })
    }

    pub(crate) fn shell(&self) -> u32 {
        self.shell
    }

    /// Law for an arbitrary exterior site `rel` (relative to the center).
    pub(crate) fn law_at(&self, rel: &Site, gt: &GreenTable) -> Result<ExitLaw> {
        let b: Vec<f64> = self.green.support().iter().map(|y| gt.value(&(*y - *rel))).collect::<Result<_>>()?;
        let hit: f64 = b.iter().zip(&self.eq_measure).map(|(g, e)| g * e).sum::<f64>().clamp(0.0, 1.0);
        let mu: Vec<f64> = self.green.solve(&b).into_iter().map(|v| v.max(0.0)).collect();
        let entrance = if hit > 0.0 && mu.iter().any(|&v| v > 0.0) { WeightedAliasIndex::new(mu).ok() } else { None };
        Ok(ExitLaw { hit, entrance })
    }

    /// Samples where a walk that just left the shell at `rel` re-enters the window;
    /// returns the entrance relative to the center, or `None` on escape.
    pub(crate) fn reenter<R: Rng + ?Sized>(&self, rel: &Site, gt: &GreenTable, rng: &mut R) -> Option<Site> {
        let (canon, sigma) = SignedPerm::canonicalize_descending(rel);
        let slot = self.slots[&canon];
        let law = self.laws[slot].get_or_init(|| self.law_at(&canon, gt).expect("shell lies within table reach"));
        law.sample(rng).map(|j| sigma.apply(&self.green.support()[j]))
    }

    /// Entrance for a walk started at an arbitrary exterior site.
    pub(crate) fn reenter_from<R: Rng + ?Sized>(&self, rel: &Site, gt: &GreenTable, rng: &mut R) -> Result<Option<Site>> {
        let law = self.law_at(rel, gt)?;
        Ok(law.sample(rng).map(|j| self.green.support()[j]))
    }

    #[cfg(test)]
    pub(crate) fn green(&self) -> &BoundaryGreen {
        &self.green
    }
}

fn enumerate_descending(buf: &mut [i32], k: usize, max: i32, f: &mut impl FnMut(&[i32])) {
    if k == buf.len() {
        f(buf);
        return;
    }
    for v in (0..=max).rev() {
        buf[k] = v;
        enumerate_descending(buf, k + 1, v, f);
    }
}

const _: () = assert!(MAX_DIM <= 8, "flip masks are stored in a byte");

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Dim;
    use crate::potential::solve_equilibrium_box;

    #[test]
    fn blocked_solve_matches_dense_solve() {
        let gt = GreenTable::build(Dim::new(3).unwrap(), 8, 1e-8).unwrap();
        let window = BoxRegion::centered(3, 2);
        let support: Vec<Site> = window.inner_boundary();
        let n = support.len();
        let bg = BoundaryGreen::new(support.clone(), &gt).unwrap();
        let x = Site::new(&[3, 1, -2]);
        let b: Vec<f64> = support.iter().map(|y| gt.value(&(*y - x)).unwrap()).collect();
        let mu = bg.solve(&b);
        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                dense[i * n + j] = gt.g(&support[i], &support[j]).unwrap();
            }
        }
        let reference = Cholesky::factor(dense, n).unwrap().solve(&b);
        for (a, r) in mu.iter().zip(&reference) {
            assert!((a - r).abs() < 1e-10);
        }
        let pd = solve_equilibrium_box(&window, &gt).unwrap();
        let e = bg.solve(&vec![1.0; n]);
        for (a, r) in e.iter().zip(pd.eq_measure()) {
            assert!((a - r).abs() < 1e-10);
        }
    }

    #[test]
    fn exit_slots_cover_the_shell() {
        let gt = GreenTable::build(Dim::new(3).unwrap(), 8, 1e-8).unwrap();
        let window = BoxRegion::centered(3, 2);
        let pd = solve_equilibrium_box(&window, &gt).unwrap();
        let k = ReentryKernel::new(window, 3, pd.eq_measure().to_vec(), &gt).unwrap();
        // Canonical exits: first coordinate 4, the rest descending in [0, 3].
        assert_eq!(k.slots.len(), 10);
        let law = k.law_at(&Site::new(&[4, 0, 0]), &gt).unwrap();
        let h = pd.potential_at(&Site::new(&[4, 0, 0]), &gt).unwrap();
        assert!((law.hit - h).abs() < 1e-12);
        assert_eq!(k.green().support().len(), 98);
    }
}
