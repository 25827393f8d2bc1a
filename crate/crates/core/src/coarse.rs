//! Coarse graining on the lattice (2R+1)·Z^d: frames, good and bad boxes, and bad *-clusters.

use std::collections::HashMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::analytics::EstimatorReport;
use crate::error::{Error, Result};
use crate::green::GreenTable;
use crate::lattice::{BoxRegion, Dim, Site};
use crate::potential::{FiniteSet, solve_equilibrium};
use crate::sampler::{OccupancyField, WindowSampler};
use crate::trials::TrialRunner;

/// The frame E(x′) of the box B(x′, R).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub center: Site,
    pub radius: u32,
    pub sites: Vec<Site>,
}

impl Frame {
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Counting bound C(d,2)·36·(2R+1)^{d−2}.
    pub fn size_bound(&self) -> usize {
        let d = self.center.dim();
        d * (d - 1) / 2 * 36 * (2 * self.radius as usize + 1).pow(d as u32 - 2)
    }
}

/// Whether `offset` (relative to the box center) has at least two coordinates within 2 of a face.
#[inline]
pub fn in_frame(offset: &Site, radius: u32) -> bool {
    let near = radius as i32 - 2;
    offset.sup_norm() <= radius && offset.coords().iter().filter(|c| c.abs() >= near).count() >= 2
}

/// Sites of E(center) for boxes of radius `radius`, in box index order.
pub fn frame_sites(center: &Site, radius: u32, dim: Dim) -> Result<Frame> {
    if radius < 2 {
        return Err(Error::InvalidParameter(format!("frames need R ≥ 2 (got {radius})")));
    }
    center.check_dim(dim.get())?;
    let b = BoxRegion::new(*center, radius);
    let sites = b.sites().filter(|x| in_frame(&(*x - *center), radius)).collect();
    Ok(Frame { center: *center, radius, sites })
}

/// cap(E_R) for the frame of B(0, R).
pub fn frame_capacity(radius: u32, gt: &GreenTable) -> Result<f64> {
    let dim = gt.dim();
    let frame = frame_sites(&Site::origin(dim.get()), radius, dim)?;
    Ok(solve_equilibrium(&FiniteSet::new(frame.sites)?, gt)?.capacity())
}

/// Classification of one coarse box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxStatus {
    Good,
    Bad,
    /// The box is not fully inside the sampled window.
    Unclassifiable,
}

/// One coarse box with the data behind its status.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarseBox {
    pub coarse: Site,
    pub status: BoxStatus,
    pub frame_vacant: bool,
    pub within_budget: bool,
}

/// Good and bad boxes of (2R+1)·Z^d around the center of a field's window.
#[derive(Clone, Debug, PartialEq)]
pub struct CoarseGrid {
    pub radius: u32,
    pub u: f64,
    pub budget: u64,
    /// Fine site of coarse coordinate 0.
    pub origin: Site,
    /// Largest coarse sup-norm enumerated.
    pub coarse_radius: u32,
    pub boxes: Vec<CoarseBox>,
    index: HashMap<Site, usize>,
}

impl CoarseGrid {
    pub fn status(&self, coarse: &Site) -> Option<BoxStatus> {
        self.index.get(coarse).map(|&i| self.boxes[i].status)
    }

    pub fn get(&self, coarse: &Site) -> Option<&CoarseBox> {
        self.index.get(coarse).map(|&i| &self.boxes[i])
    }

    pub fn count(&self, status: BoxStatus) -> usize {
        self.boxes.iter().filter(|b| b.status == status).count()
    }

    /// Fine center of the box at coarse coordinate `coarse`.
    pub fn fine_center(&self, coarse: &Site) -> Site {
        let mut s = self.origin;
        let side = 2 * self.radius as i32 + 1;
        for (k, c) in s.coords_mut().iter_mut().enumerate() {
            *c += side * coarse.get(k);
        }
        s
    }

    /// CSV rows `x'1..x'd,status`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let d = self.origin.dim();
        let cols: Vec<String> = (1..=d).map(|i| format!("c{i}")).collect();
        writeln!(w, "{},status", cols.join(","))?;
        for b in &self.boxes {
            let status = match b.status {
                BoxStatus::Good => "good",
                BoxStatus::Bad => "bad",
                BoxStatus::Unclassifiable => "unclassifiable",
            };
            for c in b.coarse.coords() {
                write!(w, "{c},")?;
            }
            writeln!(w, "{status}")?;
        }
        Ok(())
    }
}

/// The default local-time budget R^{d−1}.
pub fn default_budget(radius: u32, dim: usize) -> u64 {
    (radius as u64).pow(dim as u32 - 1)
}

/// Classifies every coarse box that meets the field's window.
pub fn classify_boxes(field: &OccupancyField, radius: u32, budget: Option<u64>) -> Result<CoarseGrid> {
    let window = *field.window();
    let d = window.dim();
    let dim = Dim::new(d)?;
    let frame = frame_sites(&Site::origin(d), radius, dim)?;
    let budget = budget.unwrap_or_else(|| default_budget(radius, d));
    let side = 2 * radius + 1;
    let coarse_radius = (window.radius + radius).div_ceil(side);
    let coarse_box = BoxRegion::centered(d, coarse_radius);
    let mut boxes = Vec::with_capacity(coarse_box.volume());
    let mut index = HashMap::new();
    let mut grid = CoarseGrid { radius, u: field.u(), budget, origin: window.center, coarse_radius, boxes: Vec::new(), index: HashMap::new() };
    for coarse in coarse_box.sites() {
        let center = grid.fine_center(&coarse);
        let b = BoxRegion::new(center, radius);
        let entry = if window.covers(&b) {
            let frame_vacant = frame.sites.iter().all(|x| field.get(&(*x + center)) == Some(0));
            let total: u64 = b.sites().map(|x| field.get(&x).expect("covered") as u64).sum();
            let within_budget = total <= budget;
            let status = if frame_vacant && within_budget { BoxStatus::Good } else { BoxStatus::Bad };
            CoarseBox { coarse, status, frame_vacant, within_budget }
        } else {
            CoarseBox { coarse, status: BoxStatus::Unclassifiable, frame_vacant: false, within_budget: false }
        };
        index.insert(coarse, boxes.len());
        boxes.push(entry);
    }
    grid.boxes = boxes;
    grid.index = index;
    Ok(grid)
}

/// *-connected clusters of bad boxes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StarComponents {
    /// Sizes in order of each cluster's first box in grid order.
    pub sizes: Vec<usize>,
    /// Cluster id per box in grid order; `None` for boxes that are not bad.
    pub ids: Vec<Option<u32>>,
}

/// Clusters of bad boxes under sup-distance-1 adjacency in coarse coordinates.
pub fn bad_star_components(grid: &CoarseGrid) -> StarComponents {
    let d = grid.origin.dim();
    let offsets: Vec<Site> = BoxRegion::centered(d, 1).sites().filter(|s| s.sup_norm() > 0).collect();
    let mut ids: Vec<Option<u32>> = vec![None; grid.boxes.len()];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..grid.boxes.len() {
        if grid.boxes[start].status != BoxStatus::Bad || ids[start].is_some() {
            continue;
        }
        let id = sizes.len() as u32;
        ids[start] = Some(id);
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let c = grid.boxes[i].coarse;
            for off in &offsets {
                if let Some(&j) = grid.index.get(&(c + *off))
                    && grid.boxes[j].status == BoxStatus::Bad
                    && ids[j].is_none()
                {
                    ids[j] = Some(id);
                    stack.push(j);
                }
            }
        }
        sizes.push(size);
    }
    StarComponents { sizes, ids }
}

/// Whether a bad *-path joins coarse 0 to the boxes at coarse sup-norm `n`.
pub fn bad_crossing(grid: &CoarseGrid, components: &StarComponents, n: u32) -> Result<bool> {
    if n == 0 || n > grid.coarse_radius {
        return Err(Error::InvalidParameter(format!("crossing radius {n} outside 1..={}", grid.coarse_radius)));
    }
    let origin = Site::origin(grid.origin.dim());
    let Some(id) = grid.index.get(&origin).and_then(|&i| components.ids[i]) else {
        return Ok(false);
    };
    Ok(grid.boxes.iter().zip(&components.ids).any(|(b, c)| *c == Some(id) && b.coarse.sup_norm() == n))
}

/// Level u_R = R^{2−d}.
pub fn critical_scale_level(radius: u32, dim: usize) -> f64 {
    (radius as f64).powi(2 - dim as i32)
}

/// Frequencies of the good event and of its two conditions for the box B(0,R) at level `u`.
/// The frame-vacancy report carries the exact value e^{−u·cap(E_R)}.
pub fn estimate_good_probability(
    sampler: &WindowSampler,
    radius: u32,
    u: f64,
    budget: Option<u64>,
    trials: usize,
    seed: u64,
    runner: &TrialRunner,
) -> Result<[EstimatorReport; 3]> {
    let window = *sampler.window();
    let d = window.dim();
    if !window.covers(&BoxRegion::new(window.center, radius)) {
        return Err(Error::InvalidParameter(format!("sampler window does not cover a box of radius {radius}")));
    }
    let gt = sampler.green_table();
    let frame = frame_sites(&window.center, radius, gt.dim())?;
    let cap = solve_equilibrium(&FiniteSet::new(frame.sites.iter().copied())?, gt)?.capacity();
    let budget = budget.unwrap_or_else(|| default_budget(radius, d));
    let target = BoxRegion::new(window.center, radius);
    let outcomes = runner.run(seed, trials, |_, rng| {
        let f = sampler.sample_field(u, rng)?;
        let frame_vacant = frame.sites.iter().all(|x| f.get(x) == Some(0));
        let total: u64 = target.sites().map(|x| f.get(&x).expect("covered") as u64).sum();
        Ok((frame_vacant, total <= budget))
    })?;
    let count = |p: &dyn Fn(&(bool, bool)) -> bool| outcomes.iter().filter(|o| p(o)).count() as u64;
    let n = trials as u64;
    let params = [("d", d as f64), ("u", u), ("R", radius as f64), ("budget", budget as f64), ("cap_frame", cap)];
    Ok([
        EstimatorReport::proportion("good-box", &params, count(&|o| o.0 && o.1), n, seed, None),
        EstimatorReport::proportion("frame-vacant", &params, count(&|o| o.0), n, seed, Some((-u * cap).exp())),
        EstimatorReport::proportion("within-budget", &params, count(&|o| o.1), n, seed, None),
    ])
}

/// Frequency of a bad *-crossing from coarse 0 to coarse radius N, for each N, from shared trials.
pub fn estimate_bad_crossing(
    sampler: &WindowSampler,
    radius: u32,
    u: f64,
    n_list: &[u32],
    trials: usize,
    seed: u64,
    runner: &TrialRunner,
) -> Result<Vec<EstimatorReport>> {
    let window = *sampler.window();
    let side = 2 * radius + 1;
    let max_n = n_list.iter().copied().max().ok_or_else(|| Error::InvalidParameter("empty N list".into()))?;
    let needed = side * max_n + radius;
    if window.radius < needed {
        return Err(Error::InvalidParameter(format!("crossing to coarse radius {max_n} needs a window of radius {needed}")));
    }
    let per_trial = runner.run(seed, trials, |_, rng| {
        let grid = classify_boxes(&sampler.sample_field(u, rng)?, radius, None)?;
        let comps = bad_star_components(&grid);
        n_list.iter().map(|&n| bad_crossing(&grid, &comps, n)).collect::<Result<Vec<bool>>>()
    })?;
    let d = window.dim() as f64;
    Ok(n_list
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let hits = per_trial.iter().filter(|v| v[k]).count() as u64;
            EstimatorReport::proportion("bad-crossing", &[("d", d), ("u", u), ("R", radius as f64), ("N", n as f64)], hits, trials as u64, seed, None)
        })
        .collect())
}
