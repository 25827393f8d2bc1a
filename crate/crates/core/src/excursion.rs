//! Decomposition of paths into their visits to a finite set, and checks of the conditional laws
//! of the inner pieces given the entrance/exit data.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::analytics::EstimatorReport;
use crate::error::{Error, Result};
use crate::lattice::{BoxRegion, Site};
use crate::linalg::Cholesky;
use crate::potential::FiniteSet;
use crate::sampler::{TraceSample, WindowSampler};
use crate::trials::TrialRunner;

/// Largest set accepted by the conditional-law validators.
pub const MAX_VALIDATION_SET: usize = 9;
/// Buckets with fewer samples are left out of distance computations.
pub const DEFAULT_BUCKET_FLOOR: usize = 200;
/// Enumeration stops once the unenumerated conditional mass falls below this.
pub const ENUMERATION_RESIDUAL: f64 = 1e-9;

/// Visits of a path to K: entrance times R_k, exit times D_k and the pieces between them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcursionDecomposition {
    /// R_k: first time of the k-th visit.
    pub entrances: Vec<usize>,
    /// D_k: first time after R_k outside K, or the path length if the path ends inside K.
    pub exits: Vec<usize>,
    /// Sites w(R_k..D_k), all in K.
    pub inner: Vec<Vec<Site>>,
    /// Pieces before, between and after the visits; there are M + 1 of them.
    pub outer: Vec<Vec<Site>>,
}

impl ExcursionDecomposition {
    /// M, the number of visits.
    pub fn count(&self) -> usize {
        self.entrances.len()
    }

    /// Entrance and exit site of each visit.
    pub fn signature(&self) -> Vec<(Site, Site)> {
        self.inner.iter().map(|p| (p[0], *p.last().expect("visits are nonempty"))).collect()
    }

    /// Outer and inner pieces spliced back in order.
    pub fn splice(&self) -> Vec<Site> {
        let mut out = Vec::new();
        for (k, piece) in self.outer.iter().enumerate() {
            out.extend_from_slice(piece);
            if let Some(inner) = self.inner.get(k) {
                out.extend_from_slice(inner);
            }
        }
        out
    }
}

/// Splits `path` into maximal runs inside `k` and the pieces between them.
pub fn decompose(path: &[Site], k: &FiniteSet) -> ExcursionDecomposition {
    let mut entrances = Vec::new();
    let mut exits = Vec::new();
    let mut inside = false;
    for (t, x) in path.iter().enumerate() {
        let now = k.contains(x);
        if now && !inside {
            entrances.push(t);
        } else if !now && inside {
            exits.push(t);
        }
        inside = now;
    }
    if inside {
        exits.push(path.len());
    }
    let inner = entrances.iter().zip(&exits).map(|(&r, &d)| path[r..d].to_vec()).collect();
    let mut outer = Vec::with_capacity(entrances.len() + 1);
    let mut from = 0;
    for (&r, &d) in entrances.iter().zip(&exits) {
        outer.push(path[from..r].to_vec());
        from = d;
    }
    outer.push(path[from..].to_vec());
    ExcursionDecomposition { entrances, exits, inner, outer }
}

/// Walk-inside-K quantities: Green function of the walk killed on leaving K and exit weights.
#[derive(Clone, Debug)]
pub struct InnerWalk {
    set: FiniteSet,
    index: HashMap<Site, usize>,
    /// G_K(x, y) = expected visits to y before leaving K, row-major.
    killed_green: Vec<f64>,
    /// P_y[X_1 ∉ K].
    exit_weight: Vec<f64>,
    step: f64,
}

impl InnerWalk {
    pub fn new(k: &FiniteSet) -> Result<Self> {
        let n = k.len();
        let degree = 2 * k.dim();
        let step = 1.0 / degree as f64;
        let index: HashMap<Site, usize> = k.sites().iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let mut m = vec![0.0; n * n];
        for (i, x) in k.sites().iter().enumerate() {
            m[i * n + i] = 1.0;
            for y in x.neighbours() {
                if let Some(&j) = index.get(&y) {
                    m[i * n + j] -= step;
                }
            }
        }
        let chol = Cholesky::factor(m, n)?;
        let mut killed_green = vec![0.0; n * n];
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            chol.solve_in_place(&mut e);
            for i in 0..n {
                killed_green[i * n + j] = e[i];
            }
        }
        let exit_weight = k.sites().iter().map(|x| x.neighbours().filter(|y| !index.contains_key(y)).count() as f64 * step).collect();
        Ok(InnerWalk { set: k.clone(), index, killed_green, exit_weight, step })
    }

    pub fn set(&self) -> &FiniteSet {
        &self.set
    }

    /// P_x[X(T_K − 1) = y], the exit-position law of the walk started in K.
    pub fn exit_probability(&self, x: &Site, y: &Site) -> Option<f64> {
        let (i, j) = (*self.index.get(x)?, *self.index.get(y)?);
        Some(self.killed_green[i * self.set.len() + j] * self.exit_weight[j])
    }

    /// P_x[X[0, T_K) = path] for a nearest-neighbour path in K.
    pub fn path_probability(&self, path: &[Site]) -> Option<f64> {
        let last = path.last()?;
        if !path.iter().all(|x| self.index.contains_key(x)) || !path.windows(2).all(|w| w[0].is_adjacent(&w[1])) {
            return None;
        }
        Some(self.step.powi(path.len() as i32 - 1) * self.exit_weight[self.index[last]])
    }

    /// P_x[X[0,T_K) = path | X(T_K − 1) = y] where x, y are the path's ends.
    pub fn conditional_probability(&self, path: &[Site]) -> Option<f64> {
        let p = self.path_probability(path)?;
        let q = self.exit_probability(&path[0], path.last()?)?;
        (q > 0.0).then(|| p / q)
    }

    /// Product of conditional probabilities over a sequence of inner paths.
    pub fn joint_conditional_probability(&self, paths: &[Vec<Site>]) -> Option<f64> {
        paths.iter().map(|p| self.conditional_probability(p)).product()
    }

    /// All paths from x to y inside K with their conditional probabilities, by increasing length,
    /// until the remaining mass is below `residual` or `max_paths` are listed.
    pub fn enumerate_paths(&self, x: &Site, y: &Site, residual: f64, max_paths: usize) -> Result<Vec<(Vec<Site>, f64)>> {
        let norm = self.exit_probability(x, y).ok_or_else(|| Error::InvalidParameter(format!("{x} or {y} is not in the set")))?;
        if norm <= 0.0 {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        let mut mass = 0.0;
        let mut frontier: Vec<Vec<Site>> = vec![vec![*x]];
        while !frontier.is_empty() && 1.0 - mass >= residual {
            let mut next = Vec::new();
            for p in frontier {
                let end = *p.last().expect("nonempty");
                if end == *y {
                    let c = self.conditional_probability(&p).expect("valid path");
                    mass += c;
                    out.push((p.clone(), c));
                    if out.len() >= max_paths {
                        return Ok(out);
                    }
                }
                for z in end.neighbours() {
                    if self.index.contains_key(&z) {
                        let mut q = p.clone();
                        q.push(z);
                        next.push(q);
                    }
                }
            }
            frontier = next;
        }
        Ok(out)
    }
}

/// Entrance/exit data of one trace sample, with the inner pieces and an outer statistic.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceVisits {
    pub signature: Vec<(Site, Site)>,
    pub inner: Vec<Vec<Site>>,
    /// Distinct sites of the observation annulus visited by the trace.
    pub annulus_visits: usize,
}

/// Sites of `window` at sup-distance at least `gap` from every site of `k`.
pub fn observation_annulus(window: &BoxRegion, k: &FiniteSet, gap: u32) -> Vec<Site> {
    window.sites().filter(|x| k.sites().iter().all(|y| x.sup_dist(y) >= gap)).collect()
}

/// Decomposes every window excursion of `trace` against K (which must lie in the window's interior).
pub fn trace_visits(trace: &TraceSample, k: &FiniteSet, annulus: &[Site]) -> TraceVisits {
    let mut signature = Vec::new();
    let mut inner = Vec::new();
    for e in &trace.excursions {
        let dec = decompose(&e.path, k);
        signature.extend(dec.signature());
        inner.extend(dec.inner);
    }
    let field = trace.field();
    let annulus_visits = annulus.iter().filter(|x| field.get(x).is_some_and(|l| l > 0)).count();
    TraceVisits { signature, inner, annulus_visits }
}

fn interior_check(window: &BoxRegion, k: &FiniteSet) -> Result<()> {
    if k.len() > MAX_VALIDATION_SET {
        return Err(Error::InvalidParameter(format!("conditional-law checks need |K| ≤ {MAX_VALIDATION_SET} (got {})", k.len())));
    }
    let interior = BoxRegion::new(window.center, window.radius.saturating_sub(1));
    if window.radius == 0 || !k.sites().iter().all(|x| interior.contains(x)) {
        return Err(Error::InvalidParameter("K must lie in the interior of the sampling window".into()));
    }
    Ok(())
}

/// Samples traces and extracts their visits to K.
pub fn sample_visits(sampler: &WindowSampler, k: &FiniteSet, u: f64, trials: usize, seed: u64, runner: &TrialRunner, gap: u32) -> Result<Vec<TraceVisits>> {
    interior_check(sampler.window(), k)?;
    let annulus = observation_annulus(sampler.window(), k, gap);
    runner.run(seed, trials, |_, rng| Ok(trace_visits(&sampler.sample_trace(u, rng)?.0, k, &annulus)))
}

/// Distance between the empirical and exact conditional laws of the inner pieces in one bucket.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub signature: Vec<(Site, Site)>,
    pub samples: usize,
    pub distinct: usize,
    pub total_variation: f64,
}

/// Per-bucket distances plus the count of buckets below the floor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerLawReport {
    pub trials: usize,
    pub floor: usize,
    pub buckets: Vec<BucketReport>,
    pub sparse_buckets: usize,
    pub sparse_samples: usize,
}

/// Groups samples by signature; buckets are ordered by decreasing size, then by signature.
fn buckets(visits: &[TraceVisits]) -> Vec<(Vec<(Site, Site)>, Vec<usize>)> {
    let mut map: HashMap<&[(Site, Site)], Vec<usize>> = HashMap::new();
    for (i, v) in visits.iter().enumerate() {
        map.entry(&v.signature).or_default().push(i);
    }
    let mut out: Vec<(Vec<(Site, Site)>, Vec<usize>)> = map.into_iter().map(|(s, v)| (s.to_vec(), v)).collect();
    out.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Total variation between the empirical law of inner-piece tuples and the product formula,
/// computed on every nonempty bucket with at least `floor` samples.
pub fn inner_law_distances(k: &FiniteSet, visits: &[TraceVisits], floor: usize) -> Result<InnerLawReport> {
    let walk = InnerWalk::new(k)?;
    let mut report = InnerLawReport { trials: visits.len(), floor, buckets: Vec::new(), sparse_buckets: 0, sparse_samples: 0 };
    for (signature, members) in buckets(visits) {
        if signature.is_empty() {
            continue;
        }
        if members.len() < floor {
            report.sparse_buckets += 1;
            report.sparse_samples += members.len();
            continue;
        }
        let mut counts: HashMap<&[Vec<Site>], usize> = HashMap::new();
        for &i in &members {
            *counts.entry(&visits[i].inner).or_default() += 1;
        }
        let n = members.len() as f64;
        let mut observed_mass = 0.0;
        let mut abs_diff = 0.0;
        let mut tuples: Vec<_> = counts.into_iter().collect();
        tuples.sort_by(|a, b| a.0.cmp(b.0));
        for (tuple, c) in &tuples {
            let f = walk
                .joint_conditional_probability(tuple)
                .ok_or_else(|| Error::InvalidParameter("sampled inner piece is not a path in K".into()))?;
            observed_mass += f;
            abs_diff += (*c as f64 / n - f).abs();
        }
        let total_variation = 0.5 * (abs_diff + (1.0 - observed_mass).max(0.0));
        report.buckets.push(BucketReport { signature, samples: members.len(), distinct: tuples.len(), total_variation });
    }
    Ok(report)
}

/// Samples traces at level `u` and compares inner-piece laws bucket by bucket.
pub fn validate_inner_conditional_law(
    sampler: &WindowSampler,
    k: &FiniteSet,
    u: f64,
    trials: usize,
    seed: u64,
    runner: &TrialRunner,
    floor: usize,
) -> Result<InnerLawReport> {
    let visits = sample_visits(sampler, k, u, trials, seed, runner, 2)?;
    inner_law_distances(k, &visits, floor)
}

/// Pearson correlation; 0 when either sample is constant.
pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 { 0.0 } else { sxy / (sxx * syy).sqrt() }
}

/// Correlation of total inner length with annulus visits, within the largest nonempty bucket
/// and, as a control, over all samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndependenceReport {
    pub signature: Vec<(Site, Site)>,
    pub bucket_samples: usize,
    pub conditioned: f64,
    pub unconditioned: f64,
    pub samples: usize,
}

impl IndependenceReport {
    /// ρ̂·√n within the bucket.
    pub fn conditioned_z(&self) -> f64 {
        self.conditioned * (self.bucket_samples as f64).sqrt()
    }

    pub fn unconditioned_z(&self) -> f64 {
        self.unconditioned * (self.samples as f64).sqrt()
    }

    pub fn as_reports(&self, seed: u64) -> [EstimatorReport; 2] {
        let mk = |event: &str, rho: f64, n: usize| EstimatorReport {
            event: event.to_string(),
            params: [("bucket_excursions".to_string(), self.signature.len() as f64)].into_iter().collect(),
            trials: n as u64,
            successes: None,
            estimate: rho,
            ci_lo: rho - crate::analytics::Z95 / (n as f64).sqrt(),
            ci_hi: rho + crate::analytics::Z95 / (n as f64).sqrt(),
            seed,
            wall_ms: 0,
            expected: Some(0.0),
            z_score: Some(rho * (n as f64).sqrt()),
        };
        [
            mk("conditioned-correlation", self.conditioned, self.bucket_samples),
            mk("unconditioned-correlation", self.unconditioned, self.samples),
        ]
    }
}

/// Inner/outer correlations from already sampled visits.
pub fn independence_from_visits(visits: &[TraceVisits]) -> Result<IndependenceReport> {
    let inner_len = |v: &TraceVisits| v.inner.iter().map(|p| p.len()).sum::<usize>() as f64;
    let (signature, members) = buckets(visits)
        .into_iter()
        .find(|(s, _)| !s.is_empty())
        .ok_or_else(|| Error::InvalidParameter("no trace visited K".into()))?;
    let xs: Vec<f64> = members.iter().map(|&i| inner_len(&visits[i])).collect();
    let ys: Vec<f64> = members.iter().map(|&i| visits[i].annulus_visits as f64).collect();
    let all_x: Vec<f64> = visits.iter().map(inner_len).collect();
    let all_y: Vec<f64> = visits.iter().map(|v| v.annulus_visits as f64).collect();
    Ok(IndependenceReport {
        signature,
        bucket_samples: members.len(),
        conditioned: correlation(&xs, &ys),
        unconditioned: correlation(&all_x, &all_y),
        samples: visits.len(),
    })
}

/// Samples traces and measures inner/outer dependence with and without conditioning on the signature.
pub fn validate_conditional_independence(
    sampler: &WindowSampler,
    k: &FiniteSet,
    u: f64,
    trials: usize,
    seed: u64,
    runner: &TrialRunner,
) -> Result<IndependenceReport> {
    independence_from_visits(&sample_visits(sampler, k, u, trials, seed, runner, 2)?)
}
