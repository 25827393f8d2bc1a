//! Vacant-set components and Monte Carlo estimators built on them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::green::GreenTable;
use crate::lattice::{BoxRegion, MAX_DIM, Site};
use crate::potential::{FiniteSet, solve_equilibrium};
use crate::sampler::{OccupancyField, WindowSampler};
use crate::trials::TrialRunner;

/// Marks occupied sites in [`ComponentLabeling::ids`].
pub const OCCUPIED: u32 = u32::MAX;

/// Size and extent of one vacant component.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub size: usize,
    /// Sup-norm diameter: the largest coordinate extent.
    pub diameter: u32,
    pub touches_boundary: bool,
}

/// Nearest-neighbour components of the vacant sites of a box.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComponentLabeling {
    pub window: BoxRegion,
    /// Component id per site in index order; [`OCCUPIED`] for occupied sites.
    pub ids: Vec<u32>,
    pub components: Vec<ComponentStats>,
}

impl ComponentLabeling {
    pub fn id_of(&self, x: &Site) -> Option<u32> {
        self.window.index(x).map(|i| self.ids[i]).filter(|&id| id != OCCUPIED)
    }

    pub fn component_of(&self, x: &Site) -> Option<&ComponentStats> {
        self.id_of(x).map(|id| &self.components[id as usize])
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

/// Advances first-coordinate-fastest offsets by one site.
#[inline]
fn advance(off: &mut [usize], side: usize) {
    for o in off.iter_mut() {
        *o += 1;
        if *o < side {
            return;
        }
        *o = 0;
    }
}

/// Labels the vacant sites of `window`, given per-site vacancy in index order.
pub fn label_vacancy(window: &BoxRegion, vacant: &[bool]) -> ComponentLabeling {
    let d = window.dim();
    let side = window.side();
    assert_eq!(vacant.len(), window.volume(), "vacancy mask does not match the window");
    let n = vacant.len();
    let mut strides = [0usize; MAX_DIM];
    let mut st = 1;
    for s in strides.iter_mut().take(d) {
        *s = st;
        st *= side;
    }
    let mut parent: Vec<u32> = (0..n as u32).collect();
    let mut off = [0usize; MAX_DIM];
    for i in 0..n {
        if vacant[i] {
            let mut root = i as u32;
            for k in 0..d {
                if off[k] > 0 && vacant[i - strides[k]] {
                    let other = find(&mut parent, (i - strides[k]) as u32);
                    if root == i as u32 {
                        parent[i] = other;
                        root = other;
                    } else if other != root {
                        let (lo, hi) = if other < root { (other, root) } else { (root, other) };
                        parent[hi as usize] = lo;
                        parent[i] = lo;
                        root = lo;
                    }
                }
            }
        }
        advance(&mut off[..d], side);
    }
    let mut ids = vec![OCCUPIED; n];
    let mut lo: Vec<[u16; MAX_DIM]> = Vec::new();
    let mut hi: Vec<[u16; MAX_DIM]> = Vec::new();
    let mut components: Vec<ComponentStats> = Vec::new();
    let last = side - 1;
    let mut off = [0usize; MAX_DIM];
    for i in 0..n {
        if vacant[i] {
            // Roots carry the smallest index of their tree, so they are labeled first.
            let r = find(&mut parent, i as u32) as usize;
            let id = if r == i {
                components.push(ComponentStats { size: 0, diameter: 0, touches_boundary: false });
                lo.push([u16::MAX; MAX_DIM]);
                hi.push([0; MAX_DIM]);
                (components.len() - 1) as u32
            } else {
                ids[r]
            };
            ids[i] = id;
            let c = &mut components[id as usize];
            c.size += 1;
            let (l, h) = (&mut lo[id as usize], &mut hi[id as usize]);
            for k in 0..d {
                let o = off[k];
                l[k] = l[k].min(o as u16);
                h[k] = h[k].max(o as u16);
                if o == 0 || o == last {
                    c.touches_boundary = true;
                }
            }
        }
        advance(&mut off[..d], side);
    }
    for (id, c) in components.iter_mut().enumerate() {
        c.diameter = (0..d).map(|k| (hi[id][k] - lo[id][k]) as u32).max().unwrap_or(0);
    }
    ComponentLabeling { window: *window, ids, components }
}

/// Components of the vacant set of `field` within its window.
pub fn label_components(field: &OccupancyField) -> ComponentLabeling {
    let vacant: Vec<bool> = field.local_times().iter().map(|&l| l == 0).collect();
    label_vacancy(field.window(), &vacant)
}

/// Wilson score interval at normal quantile `z`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Normal quantile for two-sided 95% intervals.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Outcome of one estimator or oracle check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub event: String,
    pub params: BTreeMap<String, f64>,
    pub trials: u64,
    /// Count of trials where the event held; absent for mean estimates.
    pub successes: Option<u64>,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub seed: u64,
    pub wall_ms: u64,
    pub expected: Option<f64>,
    pub z_score: Option<f64>,
}

impl EstimatorReport {
    /// A proportion with a Wilson interval; the z-score is filled in when `expected` is given.
    pub fn proportion(event: &str, params: &[(&str, f64)], successes: u64, trials: u64, seed: u64, expected: Option<f64>) -> Self {
        let estimate = if trials == 0 { 0.0 } else { successes as f64 / trials as f64 };
        let (ci_lo, ci_hi) = wilson_interval(successes, trials, Z95);
        let z_score = expected.map(|p| {
            let se = (p * (1.0 - p) / trials as f64).sqrt();
            if se > 0.0 { (estimate - p) / se } else if estimate == p { 0.0 } else { f64::INFINITY }
        });
        EstimatorReport {
            event: event.to_string(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            trials,
            successes: Some(successes),
            estimate,
            ci_lo,
            ci_hi,
            seed,
            wall_ms: 0,
            expected,
            z_score,
        }
    }

    /// A sample mean with a normal interval from the sample standard error.
    pub fn mean(event: &str, params: &[(&str, f64)], samples: &[f64], seed: u64, expected: Option<f64>) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let se = (var / n).sqrt();
        let z_score = expected.map(|m| if se > 0.0 { (mean - m) / se } else if mean == m { 0.0 } else { f64::INFINITY });
        EstimatorReport {
            event: event.to_string(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            trials: samples.len() as u64,
            successes: None,
            estimate: mean,
            ci_lo: mean - Z95 * se,
            ci_hi: mean + Z95 * se,
            seed,
            wall_ms: 0,
            expected,
            z_score,
        }
    }

    /// Standard error of the estimate implied by the interval half-width.
    pub fn standard_error(&self) -> f64 {
        match self.successes {
            Some(_) => (self.estimate * (1.0 - self.estimate) / self.trials as f64).sqrt(),
            None => (self.ci_hi - self.ci_lo) / (2.0 * Z95),
        }
    }
}

fn centered_box(field: &OccupancyField, radius: u32) -> BoxRegion {
    BoxRegion::new(field.window().center, radius)
}

/// Diameter threshold ⌈n/10⌉ for the uniqueness event.
pub fn uniqueness_threshold(n: u32) -> u32 {
    n.div_ceil(10)
}

/// All components of V ∩ B(c,n) with diameter ≥ ⌈n/10⌉ lie in one component of V ∩ B(c,2n).
/// `field` must cover B(c,2n) where c is its window center.
pub fn local_uniqueness_holds(field: &OccupancyField, n: u32) -> Result<bool> {
    let outer = field.restricted(&centered_box(field, 2 * n)).ok_or_else(|| window_too_small(field, 2 * n))?;
    let inner = field.restricted(&centered_box(field, n)).expect("inner box is covered");
    let big = label_components(&outer);
    let small = label_components(&inner);
    let threshold = uniqueness_threshold(n);
    let mut shared: Option<u32> = None;
    for (i, id) in small.ids.iter().enumerate() {
        if *id == OCCUPIED || small.components[*id as usize].diameter < threshold {
            continue;
        }
        let outer_id = big.id_of(&inner.window().site_at(i)).expect("vacant in both");
        match shared {
            None => shared = Some(outer_id),
            Some(s) if s != outer_id => return Ok(false),
            _ => {}
        }
    }
    Ok(true)
}

/// Some component of V ∩ B(c,m) meets B(c,n) and the interior boundary of B(c,m).
pub fn visibility_holds(field: &OccupancyField, n: u32, m: u32) -> Result<bool> {
    if m <= n {
        return Err(Error::InvalidParameter(format!("visibility needs m > n (got n={n}, m={m})")));
    }
    let outer = field.restricted(&centered_box(field, m)).ok_or_else(|| window_too_small(field, m))?;
    let labels = label_components(&outer);
    let inner = centered_box(field, n);
    Ok(inner.sites().any(|x| labels.component_of(&x).is_some_and(|c| c.touches_boundary)))
}

/// Tail events for the component of the center in V ∩ B(c,M): (diameter ≥ n, size ≥ n) for each n,
/// counting only components that stay off the boundary of B(c,M).
pub fn cluster_tail_events(field: &OccupancyField, n_list: &[u32], big_m: u32) -> Result<Vec<(bool, bool)>> {
    let outer = field.restricted(&centered_box(field, big_m)).ok_or_else(|| window_too_small(field, big_m))?;
    let labels = label_components(&outer);
    let c = labels.component_of(&field.window().center).filter(|c| !c.touches_boundary);
    Ok(n_list
        .iter()
        .map(|&n| match c {
            Some(c) => (c.diameter >= n, c.size >= n as usize),
            None => (false, false),
        })
        .collect())
}

fn window_too_small(field: &OccupancyField, radius: u32) -> Error {
    Error::InvalidParameter(format!("field window of radius {} does not cover radius {radius}", field.window().radius))
}

fn check_window(sampler: &WindowSampler, radius: u32) -> Result<()> {
    let w = sampler.window();
    if !w.covers(&BoxRegion::new(w.center, radius)) {
        return Err(Error::InvalidParameter(format!("sampler window of radius {} does not cover radius {radius}", w.radius)));
    }
    Ok(())
}

/// Verdicts per trial alongside their summary.
#[derive(Clone, Debug, PartialEq)]
pub struct EventRun {
    pub report: EstimatorReport,
    pub verdicts: Vec<bool>,
}

fn run_event(
    sampler: &WindowSampler,
    u: f64,
    trials: usize,
    seed: u64,
    runner: &TrialRunner,
    event: impl Fn(&OccupancyField) -> Result<bool> + Sync,
) -> Result<Vec<bool>> {
    runner.run(seed, trials, |_, rng| event(&sampler.sample_field(u, rng)?))
}

/// Frequency of the local uniqueness event on fields sampled by `sampler` (window ⊇ B(0,2n)).
pub fn estimate_local_uniqueness(sampler: &WindowSampler, n: u32, u: f64, trials: usize, seed: u64, runner: &TrialRunner) -> Result<EventRun> {
    if n < 10 {
        return Err(Error::InvalidParameter(format!("uniqueness needs n ≥ 10 (got {n})")));
    }
    check_window(sampler, 2 * n)?;
    let verdicts = run_event(sampler, u, trials, seed, runner, |f| local_uniqueness_holds(f, n))?;
    let successes = verdicts.iter().filter(|&&v| v).count() as u64;
    let d = sampler.window().dim() as f64;
    let report = EstimatorReport::proportion("local-uniqueness", &[("d", d), ("u", u), ("n", n as f64)], successes, trials as u64, seed, None);
    Ok(EventRun { report, verdicts })
}

/// Frequency of the visibility proxy on fields sampled by `sampler` (window ⊇ B(0,m)).
pub fn estimate_visibility(sampler: &WindowSampler, n: u32, m: u32, u: f64, trials: usize, seed: u64, runner: &TrialRunner) -> Result<EventRun> {
    if m <= n {
        return Err(Error::InvalidParameter(format!("visibility needs m > n (got n={n}, m={m})")));
    }
    check_window(sampler, m)?;
    let verdicts = run_event(sampler, u, trials, seed, runner, |f| visibility_holds(f, n, m))?;
    let successes = verdicts.iter().filter(|&&v| v).count() as u64;
    let d = sampler.window().dim() as f64;
    let report = EstimatorReport::proportion("visibility", &[("d", d), ("u", u), ("n", n as f64), ("m", m as f64)], successes, trials as u64, seed, None);
    Ok(EventRun { report, verdicts })
}

/// Diameter and size tails of the finite cluster of the center, one report pair per n, from shared trials.
pub fn estimate_cluster_tail(
    sampler: &WindowSampler,
    u: f64,
    n_list: &[u32],
    big_m: u32,
    trials: usize,
    seed: u64,
    runner: &TrialRunner,
) -> Result<Vec<(EstimatorReport, EstimatorReport)>> {
    let max_n = n_list.iter().copied().max().ok_or_else(|| Error::InvalidParameter("empty n list".into()))?;
    if big_m <= max_n {
        return Err(Error::InvalidParameter(format!("cluster tail needs M > max n (got M={big_m}, max n={max_n})")));
    }
    check_window(sampler, big_m)?;
    let per_trial = runner.run(seed, trials, |_, rng| cluster_tail_events(&sampler.sample_field(u, rng)?, n_list, big_m))?;
    let d = sampler.window().dim() as f64;
    Ok(n_list
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let diam = per_trial.iter().filter(|e| e[k].0).count() as u64;
            let size = per_trial.iter().filter(|e| e[k].1).count() as u64;
            let params = [("d", d), ("u", u), ("n", n as f64), ("M", big_m as f64)];
            (
                EstimatorReport::proportion("cluster-diameter-tail", &params, diam, trials as u64, seed, None),
                EstimatorReport::proportion("cluster-size-tail", &params, size, trials as u64, seed, None),
            )
        })
        .collect())
}

/// Void probability of `target` observed on fields from `sampler`, against e^{−u·cap(target)}.
pub fn check_void_probability(
    sampler: &WindowSampler,
    target: &FiniteSet,
    u: f64,
    trials: usize,
    seed: u64,
    runner: &TrialRunner,
) -> Result<EstimatorReport> {
    if let Some(x) = target.sites().iter().find(|x| !sampler.window().contains(x)) {
        return Err(Error::InvalidParameter(format!("target site {x} lies outside the sampling window")));
    }
    let cap = solve_equilibrium(target, sampler.green_table())?.capacity();
    let verdicts = run_event(sampler, u, trials, seed, runner, |f| Ok(target.sites().iter().all(|x| f.get(x) == Some(0))))?;
    let successes = verdicts.iter().filter(|&&v| v).count() as u64;
    let d = sampler.window().dim() as f64;
    let params = [("d", d), ("u", u), ("target_size", target.len() as f64), ("cap", cap), ("window_radius", sampler.window().radius as f64)];
    Ok(EstimatorReport::proportion("void-probability", &params, successes, trials as u64, seed, Some((-u * cap).exp())))
}

/// Exact probability that both `x` and `y` are vacant: exp(−2u/(g(0,0)+g(x−y))).
pub fn two_point_vacancy(x: &Site, y: &Site, u: f64, gt: &GreenTable) -> Result<f64> {
    if x == y {
        return Ok((-u / gt.origin()).exp());
    }
    Ok((-2.0 * u / (gt.origin() + gt.g(x, y)?)).exp())
}

/// Joint vacancy of two sites against the exact two-point law.
pub fn check_two_point(sampler: &WindowSampler, x: &Site, y: &Site, u: f64, trials: usize, seed: u64, runner: &TrialRunner) -> Result<EstimatorReport> {
    for s in [x, y] {
        if !sampler.window().contains(s) {
            return Err(Error::InvalidParameter(format!("site {s} lies outside the sampling window")));
        }
    }
    let expected = two_point_vacancy(x, y, u, sampler.green_table())?;
    let verdicts = run_event(sampler, u, trials, seed, runner, |f| Ok(f.get(x) == Some(0) && f.get(y) == Some(0)))?;
    let successes = verdicts.iter().filter(|&&v| v).count() as u64;
    let d = sampler.window().dim() as f64;
    let params = [("d", d), ("u", u), ("sup_distance", x.sup_dist(y) as f64)];
    Ok(EstimatorReport::proportion("two-point-vacancy", &params, successes, trials as u64, seed, Some(expected)))
}

/// Mean local time at `x` against u.
pub fn check_mean_local_time(sampler: &WindowSampler, x: &Site, u: f64, trials: usize, seed: u64, runner: &TrialRunner) -> Result<EstimatorReport> {
    if !sampler.window().contains(x) {
        return Err(Error::InvalidParameter(format!("site {x} lies outside the sampling window")));
    }
    let samples = runner.run(seed, trials, |_, rng| Ok(sampler.sample_field(u, rng)?.get(x).expect("inside") as f64))?;
    let d = sampler.window().dim() as f64;
    Ok(EstimatorReport::mean("mean-local-time", &[("d", d), ("u", u)], &samples, seed, Some(u)))
}

/// Parameters of the three exact-law checks.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactLawSpec {
    pub target: FiniteSet,
    pub pair: (Site, Site),
    pub site: Site,
    pub u: f64,
    /// Extra layers of window around each observed set.
    pub margin: u32,
}

/// Smallest centered-at-integer box containing every site, grown by `margin`.
pub fn bounding_window(sites: &[Site], margin: u32) -> Result<BoxRegion> {
    let first = sites.first().ok_or(Error::EmptySet)?;
    let d = first.dim();
    let mut center = Site::origin(d);
    let mut radius = 0;
    for k in 0..d {
        let lo = sites.iter().map(|s| s.get(k)).min().expect("nonempty");
        let hi = sites.iter().map(|s| s.get(k)).max().expect("nonempty");
        center.set(k, lo + (hi - lo) / 2);
        radius = radius.max(((hi - lo) as u32).div_ceil(2));
    }
    Ok(BoxRegion::new(center, radius + margin))
}

/// Void probability, two-point vacancy and mean local time, each as a z-scored report.
/// `make_sampler` prepares a sampler for a given window.
pub fn validate_exact_laws(
    spec: &ExactLawSpec,
    trials: usize,
    seed: u64,
    runner: &TrialRunner,
    make_sampler: impl Fn(BoxRegion) -> Result<WindowSampler>,
) -> Result<Vec<EstimatorReport>> {
    let void_window = bounding_window(spec.target.sites(), spec.margin)?;
    let pair_window = bounding_window(&[spec.pair.0, spec.pair.1], spec.margin)?;
    let site_window = bounding_window(&[spec.site], spec.margin)?;
    let a = check_void_probability(&make_sampler(void_window)?, &spec.target, spec.u, trials, seed, runner)?;
    let b = check_two_point(&make_sampler(pair_window)?, &spec.pair.0, &spec.pair.1, spec.u, trials, seed ^ 1, runner)?;
    let c = check_mean_local_time(&make_sampler(site_window)?, &spec.site, spec.u, trials, seed ^ 2, runner)?;
    Ok(vec![a, b, c])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_reference() {
        // statsmodels proportion_confint(8, 10, method="wilson").
        let (lo, hi) = wilson_interval(8, 10, Z95);
        assert!((lo - 0.49016247153664183).abs() < 1e-12 && (hi - 0.9433178485456247).abs() < 1e-12, "{lo} {hi}");
        assert_eq!(wilson_interval(0, 0, 1.96), (0.0, 1.0));
    }

    #[test]
    fn bounding_window_covers_sites() {
        let sites = [Site::new(&[0, 0, 0]), Site::new(&[3, 0, 0])];
        let b = bounding_window(&sites, 0).unwrap();
        assert!(sites.iter().all(|s| b.contains(s)));
        assert_eq!(b.radius, 2);
    }

    #[test]
    fn all_vacant_is_one_spanning_component() {
        let w = BoxRegion::centered(3, 3);
        let l = label_vacancy(&w, &vec![true; w.volume()]);
        assert_eq!(l.len(), 1);
        assert_eq!(l.components[0].size, w.volume());
        assert_eq!(l.components[0].diameter, 6);
        assert!(l.components[0].touches_boundary);
    }

    #[test]
    fn checkerboard_isolates_vacant_sites() {
        let w = BoxRegion::centered(3, 2);
        let vacant: Vec<bool> = w.sites().map(|x| x.l1_norm() % 2 == 0).collect();
        let l = label_vacancy(&w, &vacant);
        assert_eq!(l.len(), vacant.iter().filter(|&&v| v).count());
        assert!(l.components.iter().all(|c| c.size == 1 && c.diameter == 0));
    }
}
