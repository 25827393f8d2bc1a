//! Finite-window sampling of the interlacement trace and its local times.
//!
//! The trajectories of the interlacement at level `u` that meet a window W form
//! a Poisson number (mean u·cap(W)) of walks started from ẽ_W. Their backward
//! halves avoid W, so only forward walks are simulated. When a walk leaves the
//! escape shell around W it either escapes forever or re-enters W; the exact
//! method draws that decision and the entrance site from the harmonic measure,
//! the truncate method kills walks that leave a large kill box.

mod reentry;
mod torus;

use std::io::{self, BufRead, Read, Write};
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::green::GreenTable;
use crate::lattice::{BoxRegion, MAX_DIM, Site};
use crate::potential::{PotentialData, sample_equilibrium_start, solve_equilibrium_box};
use reentry::ReentryKernel;

pub use torus::{TorusField, sample_torus_vacant};

/// Default cap on the number of inner-boundary sites for the exact kernel.
pub const DEFAULT_MAX_KERNEL_SUPPORT: usize = 12_000;
/// Default cap on the kill radius of the truncate method.
pub const DEFAULT_MAX_KILL_RADIUS: u32 = 1 << 14;

/// How trajectories leaving the window are continued.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SamplerMethod {
    /// Exact re-entry through the harmonic measure once a walk leaves B(center, radius + shell_offset).
    Exact { shell_offset: u32 },
    /// Walks are killed outside a box whose return probability is below `epsilon`.
    Truncate { epsilon: f64 },
}

impl Default for SamplerMethod {
    fn default() -> Self {
        SamplerMethod::Exact { shell_offset: 0 }
    }
}

/// Limits applied when preparing a sampler.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerLimits {
    pub max_kernel_support: usize,
    pub max_kill_radius: u32,
}

impl Default for SamplerLimits {
    fn default() -> Self {
        SamplerLimits { max_kernel_support: DEFAULT_MAX_KERNEL_SUPPORT, max_kill_radius: DEFAULT_MAX_KILL_RADIUS }
    }
}

/// One maximal stay of a trajectory inside the window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledExcursion {
    #[serde(rename = "i")]
    pub trajectory: u32,
    #[serde(rename = "u_i")]
    pub label: f64,
    #[serde(rename = "j")]
    pub index: u32,
    pub path: Vec<Site>,
}

impl LabeledExcursion {
    pub fn entry(&self) -> Site {
        self.path[0]
    }

    pub fn exit(&self) -> Site {
        *self.path.last().expect("excursions are nonempty")
    }
}

/// The window trace of the interlacement at level `u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub window: BoxRegion,
    pub u: f64,
    pub method: String,
    /// Labels of the trajectories meeting the window, ascending.
    pub labels: Vec<f64>,
    pub excursions: Vec<LabeledExcursion>,
}

impl TraceSample {
    pub fn trajectory_count(&self) -> usize {
        self.labels.len()
    }

    /// Local times accumulated from the excursion paths.
    pub fn field(&self) -> OccupancyField {
        let mut f = OccupancyField::empty(self.window, self.u);
        for e in &self.excursions {
            for s in &e.path {
                f.local[self.window.index(s).expect("paths stay in the window")] += 1;
            }
        }
        f
    }

    /// The trace at level `u' ≤ u`: trajectories with label below `u'`.
    pub fn thinned(&self, level: f64) -> TraceSample {
        TraceSample {
            window: self.window,
            u: level,
            method: self.method.clone(),
            labels: self.labels.iter().copied().filter(|&l| l < level).collect(),
            excursions: self.excursions.iter().filter(|e| e.label < level).cloned().collect(),
        }
    }

    /// Excursion paths of trajectory `i`, concatenated in order.
    pub fn trajectory_paths(&self, i: u32) -> impl Iterator<Item = &LabeledExcursion> {
        self.excursions.iter().filter(move |e| e.trajectory == i)
    }

    /// One JSON object per excursion with fields i, u_i, j, path.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.excursions {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Local times ℓ_x on a box window.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancyField {
    window: BoxRegion,
    #[serde(with = "f64_bits")]
    u: u64,
    seed: Option<u64>,
    local: Vec<u32>,
}

mod f64_bits {
    use serde::{Deserialize, Deserializer, Serializer};
    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(f64::from_bits(*v))
    }
    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        f64::deserialize(d).map(f64::to_bits)
    }
}

const FIELD_MAGIC: &[u8; 4] = b"IOCF";
const FIELD_VERSION: u32 = 1;

impl OccupancyField {
    pub fn empty(window: BoxRegion, u: f64) -> Self {
        OccupancyField { window, u: u.to_bits(), seed: None, local: vec![0; window.volume()] }
    }

    pub fn from_local_times(window: BoxRegion, u: f64, local: Vec<u32>) -> Result<Self> {
        if local.len() != window.volume() {
            return Err(Error::InvalidParameter(format!("{} local times for a window of {} sites", local.len(), window.volume())));
        }
        Ok(OccupancyField { window, u: u.to_bits(), seed: None, local })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn window(&self) -> &BoxRegion {
        &self.window
    }

    pub fn u(&self) -> f64 {
        f64::from_bits(self.u)
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Local times in [`BoxRegion::index`] order.
    pub fn local_times(&self) -> &[u32] {
        &self.local
    }

    pub fn local_times_mut(&mut self) -> &mut [u32] {
        &mut self.local
    }

    pub fn get(&self, x: &Site) -> Option<u32> {
        self.window.index(x).map(|i| self.local[i])
    }

    pub fn is_vacant(&self, x: &Site) -> Option<bool> {
        self.get(x).map(|l| l == 0)
    }

    pub fn total(&self) -> u64 {
        self.local.iter().map(|&l| l as u64).sum()
    }

    pub fn occupied(&self) -> usize {
        self.local.iter().filter(|&&l| l > 0).count()
    }

    /// The field on a sub-box, or `None` if `sub` is not covered.
    pub fn restricted(&self, sub: &BoxRegion) -> Option<OccupancyField> {
        if !self.window.covers(sub) {
            return None;
        }
        let side = sub.side();
        let mut local = Vec::with_capacity(sub.volume());
        let mut corner = sub.center;
        for c in corner.coords_mut() {
            *c -= sub.radius as i32;
        }
        for row in 0..sub.volume() / side {
            let mut start = corner;
            let mut rest = row;
            for k in 1..sub.dim() {
                start.coords_mut()[k] += (rest % side) as i32;
                rest /= side;
            }
            let i = self.window.index(&start).expect("covered");
            local.extend_from_slice(&self.local[i..i + side]);
        }
        Some(OccupancyField { window: *sub, u: self.u, seed: self.seed, local })
    }

    /// Whether ℓ ≤ `other`'s ℓ at every site of a common window.
    pub fn dominated_by(&self, other: &OccupancyField) -> bool {
        self.window == other.window && self.local.iter().zip(&other.local).all(|(a, b)| a <= b)
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        let d = self.window.dim();
        w.write_all(FIELD_MAGIC)?;
        w.write_all(&FIELD_VERSION.to_le_bytes())?;
        w.write_all(&(d as u32).to_le_bytes())?;
        for c in self.window.center.coords() {
            w.write_all(&c.to_le_bytes())?;
        }
        w.write_all(&self.window.radius.to_le_bytes())?;
        w.write_all(&self.u.to_le_bytes())?;
        w.write_all(&[self.seed.is_some() as u8])?;
        w.write_all(&self.seed.unwrap_or(0).to_le_bytes())?;
        for l in &self.local {
            w.write_all(&l.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let invalid = |m: &str| Error::InvalidParameter(format!("occupancy field: {m}"));
        let mut u32_buf = [0u8; 4];
        let mut u64_buf = [0u8; 8];
        r.read_exact(&mut u32_buf)?;
        if &u32_buf != FIELD_MAGIC {
            return Err(invalid("bad magic"));
        }
        r.read_exact(&mut u32_buf)?;
        if u32::from_le_bytes(u32_buf) != FIELD_VERSION {
            return Err(invalid("unsupported version"));
        }
        r.read_exact(&mut u32_buf)?;
        let d = u32::from_le_bytes(u32_buf) as usize;
        if !(1..=MAX_DIM).contains(&d) {
            return Err(invalid("bad dimension"));
        }
        let mut center = Site::origin(d);
        for i in 0..d {
            r.read_exact(&mut u32_buf)?;
            center.set(i, i32::from_le_bytes(u32_buf));
        }
        r.read_exact(&mut u32_buf)?;
        let window = BoxRegion::new(center, u32::from_le_bytes(u32_buf));
        r.read_exact(&mut u64_buf)?;
        let u = u64::from_le_bytes(u64_buf);
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        r.read_exact(&mut u64_buf)?;
        let seed = (flag[0] == 1).then(|| u64::from_le_bytes(u64_buf));
        let mut local = vec![0u32; window.volume()];
        for l in &mut local {
            r.read_exact(&mut u32_buf)?;
            *l = u32::from_le_bytes(u32_buf);
        }
        Ok(OccupancyField { window, u, seed, local })
    }

    /// CSV with a header row `d,center,radius,u,seed`, its values, then one `x1..xd,ell` row per site.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let d = self.window.dim();
        let center: Vec<String> = self.window.center.coords().iter().map(|c| c.to_string()).collect();
        writeln!(w, "d,center,radius,u,seed")?;
        let seed = self.seed.map(|s| s.to_string()).unwrap_or_default();
        writeln!(w, "{d},{},{},{},{seed}", center.join(" "), self.window.radius, self.u())?;
        let cols: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        writeln!(w, "{},ell", cols.join(","))?;
        for (i, l) in self.local.iter().enumerate() {
            let s = self.window.site_at(i);
            for c in s.coords() {
                write!(w, "{c},")?;
            }
            writeln!(w, "{l}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let invalid = |m: String| Error::InvalidParameter(format!("occupancy csv: {m}"));
        let mut lines = r.lines();
        let mut next = || lines.next().ok_or_else(|| invalid("unexpected end".into())).and_then(|l| Ok(l?));
        next()?;
        let meta = next()?;
        let parts: Vec<&str> = meta.split(',').collect();
        if parts.len() != 5 {
            return Err(invalid(format!("header {meta:?}")));
        }
        let center: Vec<i32> = parts[1].split(' ').map(|c| c.parse().map_err(|_| invalid(format!("center {c:?}")))).collect::<Result<_>>()?;
        let radius: u32 = parts[2].parse().map_err(|_| invalid("radius".into()))?;
        let u: f64 = parts[3].parse().map_err(|_| invalid("u".into()))?;
        let seed = if parts[4].is_empty() { None } else { Some(parts[4].parse().map_err(|_| invalid("seed".into()))?) };
        let window = BoxRegion::new(Site::new(&center), radius);
        next()?;
        let mut local = vec![0u32; window.volume()];
        for l in local.iter_mut() {
            let row = next()?;
            *l = row.rsplit(',').next().unwrap_or("").parse().map_err(|_| invalid(format!("row {row:?}")))?;
        }
        Ok(OccupancyField { window, u: u.to_bits(), seed, local })
    }
}

const JUMP_THRESHOLD: i32 = 24;

/// Adds the displacement of `n` simple random walk steps to `x`.
fn jump<R: Rng + ?Sized>(x: &mut [i32], n: u64, rng: &mut R) {
    let mut left = n;
    let d = x.len();
    for (k, c) in x.iter_mut().enumerate() {
        let on_axis = if k + 1 == d { left } else { Binomial::new(left, 1.0 / (d - k) as f64).expect("valid").sample(rng) };
        left -= on_axis;
        let up = Binomial::new(on_axis, 0.5).expect("valid").sample(rng);
        *c += (2 * up) as i32 - on_axis as i32;
    }
}

/// Uniform nearest-neighbour directions drawn a few bits at a time from 64-bit words.
pub(crate) struct StepSource {
    buf: u64,
    left: u32,
    bits: u32,
    mask: u64,
    limit: u64,
}

impl StepSource {
    pub(crate) fn new(dim: usize) -> Self {
        let limit = 2 * dim as u64;
        let bits = 64 - (limit - 1).leading_zeros();
        StepSource { buf: 0, left: 0, bits, mask: (1 << bits) - 1, limit }
    }

    #[inline]
    pub(crate) fn next<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> usize {
        loop {
            if self.left == 0 {
                self.buf = rng.next_u64();
                self.left = 64 / self.bits;
            }
            let v = self.buf & self.mask;
            self.buf >>= self.bits;
            self.left -= 1;
            if v < self.limit {
                return v as usize;
            }
        }
    }
}

/// Receives the walk inside the window.
trait Sink {
    fn trajectory(&mut self, _index: u32, _label: f64) {}
    fn enter(&mut self) {}
    fn visit(&mut self, idx: usize, rel: &[i32; MAX_DIM]);
    fn leave(&mut self) {}
}

struct FieldSink<'a> {
    local: &'a mut [u32],
}

impl Sink for FieldSink<'_> {
    #[inline]
    fn visit(&mut self, idx: usize, _rel: &[i32; MAX_DIM]) {
        self.local[idx] += 1;
    }
}

struct TraceSink {
    center: Site,
    trajectory: u32,
    label: f64,
    next_index: u32,
    current: Vec<Site>,
    excursions: Vec<LabeledExcursion>,
}

impl Sink for TraceSink {
    fn trajectory(&mut self, index: u32, label: f64) {
        self.trajectory = index;
        self.label = label;
        self.next_index = 0;
    }

    fn enter(&mut self) {
        self.current.clear();
    }

    #[inline]
    fn visit(&mut self, _idx: usize, rel: &[i32; MAX_DIM]) {
        let mut s = self.center;
        for (k, c) in s.coords_mut().iter_mut().enumerate() {
            *c += rel[k];
        }
        self.current.push(s);
    }

    fn leave(&mut self) {
        self.excursions.push(LabeledExcursion {
            trajectory: self.trajectory,
            label: self.label,
            index: self.next_index,
            path: std::mem::take(&mut self.current),
        });
        self.next_index += 1;
    }
}

enum Continuation {
    Exact(ReentryKernel),
    Truncate { kill_radius: u32, bias_bound: f64 },
}

/// A sampler prepared for one window: equilibrium data plus the re-entry machinery.
pub struct WindowSampler {
    window: BoxRegion,
    method: SamplerMethod,
    potential: Arc<PotentialData>,
    gt: Arc<GreenTable>,
    continuation: Continuation,
    strides: [usize; MAX_DIM],
}

impl WindowSampler {
    pub fn new(window: BoxRegion, gt: Arc<GreenTable>, method: SamplerMethod) -> Result<Self> {
        Self::with_limits(window, gt, method, SamplerLimits::default())
    }

    pub fn with_limits(window: BoxRegion, gt: Arc<GreenTable>, method: SamplerMethod, limits: SamplerLimits) -> Result<Self> {
        let potential = Arc::new(solve_equilibrium_box(&window, &gt)?);
        Self::with_potential(window, gt, potential, method, limits)
    }

    /// Reuses an equilibrium solve of the same window.
    pub fn with_potential(
        window: BoxRegion,
        gt: Arc<GreenTable>,
        potential: Arc<PotentialData>,
        method: SamplerMethod,
        limits: SamplerLimits,
    ) -> Result<Self> {
        let r = window.radius;
        let continuation = match method {
            SamplerMethod::Exact { shell_offset } => {
                let shell = r + shell_offset;
                let needed = shell + 1 + r;
                if needed > gt.radius() {
                    return Err(Error::ShellBeyondTable { shell, needed, radius: gt.radius() });
                }
                let size = window.inner_boundary_len();
                if size > limits.max_kernel_support {
                    return Err(Error::KernelTooLarge { size, limit: limits.max_kernel_support });
                }
                Continuation::Exact(ReentryKernel::new(window, shell, potential.eq_measure().to_vec(), &gt)?)
            }
            SamplerMethod::Truncate { epsilon } => {
                if !(epsilon > 0.0) {
                    return Err(Error::InvalidParameter(format!("truncation epsilon must be positive (got {epsilon})")));
                }
                let d = window.dim();
                let cap = potential.capacity();
                let bound = |kill: u32| cap * gt.lookup(&Site::axis(d, 0, (kill + 1 - r) as i32)).value;
                let mut kill = r + 1;
                while bound(kill) > epsilon {
                    if kill >= limits.max_kill_radius {
                        return Err(Error::EpsilonUnreachable { epsilon, max_radius: limits.max_kill_radius });
                    }
                    kill = (kill + 1 + kill / 64).min(limits.max_kill_radius);
                }
                Continuation::Truncate { kill_radius: kill, bias_bound: bound(kill) }
            }
        };
        let mut strides = [0usize; MAX_DIM];
        let mut s = 1;
        for st in strides.iter_mut().take(window.dim()) {
            *st = s;
            s *= window.side();
        }
        Ok(WindowSampler { window, method, potential, gt, continuation, strides })
    }

    pub fn window(&self) -> &BoxRegion {
        &self.window
    }

    pub fn method(&self) -> SamplerMethod {
        self.method
    }

    pub fn potential(&self) -> &PotentialData {
        &self.potential
    }

    pub fn capacity(&self) -> f64 {
        self.potential.capacity()
    }

    pub fn green_table(&self) -> &GreenTable {
        &self.gt
    }

    /// Kill radius of the truncate method.
    pub fn kill_radius(&self) -> Option<u32> {
        match self.continuation {
            Continuation::Truncate { kill_radius, .. } => Some(kill_radius),
            Continuation::Exact(_) => None,
        }
    }

    /// Upper bound on the probability that a killed walk would have returned.
    pub fn bias_bound(&self) -> f64 {
        match self.continuation {
            Continuation::Truncate { bias_bound, .. } => bias_bound,
            Continuation::Exact(_) => 0.0,
        }
    }

    /// Method tag recorded in traces and reports.
    pub fn method_tag(&self) -> String {
        match &self.continuation {
            Continuation::Exact(k) => format!("h-exact(shell={})", k.shell()),
            Continuation::Truncate { kill_radius, bias_bound } => format!("truncate(rho={kill_radius},eps={bias_bound:.3e})"),
        }
    }

    fn labels<R: Rng + ?Sized>(&self, u: f64, rng: &mut R) -> Result<Vec<f64>> {
        if !(u >= 0.0) || !u.is_finite() {
            return Err(Error::InvalidParameter(format!("level u must be a finite nonnegative number (got {u})")));
        }
        if u == 0.0 {
            return Ok(Vec::new());
        }
        let mean = u * self.potential.capacity();
        let n = Poisson::new(mean).map_err(|e| Error::InvalidParameter(e.to_string()))?.sample(rng) as usize;
        let mut labels: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * u).collect();
        labels.sort_by(f64::total_cmp);
        Ok(labels)
    }

    /// Window trace and local-time field at level `u`.
    pub fn sample_trace<R: Rng + ?Sized>(&self, u: f64, rng: &mut R) -> Result<(TraceSample, OccupancyField)> {
        let labels = self.labels(u, rng)?;
        let mut sink = TraceSink {
            center: self.window.center,
            trajectory: 0,
            label: 0.0,
            next_index: 0,
            current: Vec::new(),
            excursions: Vec::new(),
        };
        let mut steps = StepSource::new(self.window.dim());
        for (i, &label) in labels.iter().enumerate() {
            sink.trajectory(i as u32, label);
            let start = sample_equilibrium_start(&self.potential, rng) - self.window.center;
            self.run(start, rng, &mut steps, &mut sink);
        }
        let trace = TraceSample { window: self.window, u, method: self.method_tag(), labels, excursions: sink.excursions };
        let field = trace.field();
        Ok((trace, field))
    }

    /// Local-time field at level `u` without storing paths.
    pub fn sample_field<R: Rng + ?Sized>(&self, u: f64, rng: &mut R) -> Result<OccupancyField> {
        Ok(self.sample_coupled_fields(&[u], rng)?.pop().expect("one level"))
    }

    /// Fields at every level of `levels` from one sample at the largest level, thinned by label.
    pub fn sample_coupled_fields<R: Rng + ?Sized>(&self, levels: &[f64], rng: &mut R) -> Result<Vec<OccupancyField>> {
        let top = levels.iter().copied().fold(0.0, f64::max);
        let labels = self.labels(top, rng)?;
        let mut order: Vec<usize> = (0..levels.len()).collect();
        order.sort_by(|&a, &b| levels[a].total_cmp(&levels[b]));
        let mut out: Vec<Option<OccupancyField>> = vec![None; levels.len()];
        let mut field = OccupancyField::empty(self.window, top);
        let mut steps = StepSource::new(self.window.dim());
        let mut next_level = 0;
        for &label in labels.iter().chain(std::iter::once(&f64::INFINITY)) {
            while next_level < order.len() && levels[order[next_level]] <= label {
                let mut snapshot = field.clone();
                snapshot.u = levels[order[next_level]].to_bits();
                out[order[next_level]] = Some(snapshot);
                next_level += 1;
            }
            if label.is_infinite() {
                break;
            }
            let start = sample_equilibrium_start(&self.potential, rng) - self.window.center;
            let mut sink = FieldSink { local: &mut field.local };
            self.run(start, rng, &mut steps, &mut sink);
        }
        Ok(out.into_iter().map(|f| f.expect("every level is reached")).collect())
    }

    /// Visit indicator of a single walk started at `start`, continued with the same escape machinery.
    pub fn sample_srw_vacant<R: Rng + ?Sized>(&self, start: &Site, rng: &mut R) -> Result<OccupancyField> {
        start.check_dim(self.window.dim())?;
        let mut field = OccupancyField::empty(self.window, 0.0);
        let mut steps = StepSource::new(self.window.dim());
        let mut sink = FieldSink { local: &mut field.local };
        let mut rel = *start - self.window.center;
        let mut entered = self.window.contains(start);
        if !entered {
            entered = match &self.continuation {
                Continuation::Exact(kernel) => match kernel.reenter_from(&rel, &self.gt, rng)? {
                    Some(y) => {
                        rel = y;
                        true
                    }
                    None => false,
                },
                Continuation::Truncate { kill_radius, .. } => {
                    if rel.sup_norm() > *kill_radius {
                        return Err(Error::InvalidParameter(format!("start {start} lies beyond the kill radius")));
                    }
                    let mut r = [0i32; MAX_DIM];
                    r[..rel.dim()].copy_from_slice(rel.coords());
                    let hit = self.walk_outside(&mut r, *kill_radius, rng, &mut steps);
                    rel = Site::new(&r[..rel.dim()]);
                    hit
                }
            };
        }
        if entered {
            self.run(rel, rng, &mut steps, &mut sink);
        }
        for l in &mut field.local {
            *l = (*l).min(1);
        }
        Ok(field)
    }

    #[inline]
    fn index_of(&self, rel: &[i32; MAX_DIM]) -> usize {
        let r = self.window.radius as i32;
        (0..self.window.dim()).map(|k| (rel[k] + r) as usize * self.strides[k]).sum()
    }

    /// Runs one trajectory from `start` (relative to the center, inside the window) until it escapes.
    fn run<R: Rng + ?Sized, S: Sink>(&self, start: Site, rng: &mut R, steps: &mut StepSource, sink: &mut S) {
        let d = self.window.dim();
        let r = self.window.radius as i32;
        let mut rel = [0i32; MAX_DIM];
        rel[..d].copy_from_slice(start.coords());
        loop {
            let mut idx = self.index_of(&rel);
            sink.enter();
            sink.visit(idx, &rel);
            loop {
                let k = steps.next(rng);
                let axis = k >> 1;
                let up = k & 1 == 0;
                let c = &mut rel[axis];
                if up {
                    *c += 1;
                } else {
                    *c -= 1;
                }
                if c.abs() > r {
                    break;
                }
                if up {
                    idx += self.strides[axis];
                } else {
                    idx -= self.strides[axis];
                }
                sink.visit(idx, &rel);
            }
            sink.leave();
            let reentered = match &self.continuation {
                Continuation::Exact(kernel) => self.continue_exact(kernel, &mut rel, rng, steps),
                Continuation::Truncate { kill_radius, .. } => self.walk_outside(&mut rel, *kill_radius, rng, steps),
            };
            if !reentered {
                return;
            }
        }
    }

    /// Walks outside the window until it re-enters (true) or some coordinate exceeds `limit` (false).
    /// Far from both boundaries the walk advances by whole blocks of steps at once.
    fn walk_outside<R: Rng + ?Sized>(&self, rel: &mut [i32; MAX_DIM], limit: u32, rng: &mut R, steps: &mut StepSource) -> bool {
        let r = self.window.radius as i32;
        let limit = limit as i32;
        let d = self.window.dim();
        loop {
            let mut excess = 0i32;
            let mut far = 0i32;
            for &c in &rel[..d] {
                let a = c.abs();
                excess += (a - r).max(0);
                far = far.max(a);
            }
            if excess == 0 {
                return true;
            }
            if far > limit {
                return false;
            }
            // Neither re-entry nor passing the limit can happen in fewer than `gap` steps.
            let gap = excess.min(limit + 1 - far);
            if gap > JUMP_THRESHOLD {
                jump(&mut rel[..d], (gap - 1) as u64, rng);
            } else {
                for _ in 0..gap {
                    let k = steps.next(rng);
                    rel[k >> 1] += if k & 1 == 0 { 1 } else { -1 };
                }
            }
        }
    }

    fn continue_exact<R: Rng + ?Sized>(&self, kernel: &ReentryKernel, rel: &mut [i32; MAX_DIM], rng: &mut R, steps: &mut StepSource) -> bool {
        let d = self.window.dim();
        if kernel.shell() > self.window.radius && self.walk_outside(rel, kernel.shell(), rng, steps) {
            return true;
        }
        let exit = Site::new(&rel[..d]);
        match kernel.reenter(&exit, &self.gt, rng) {
            Some(entry) => {
                rel[..d].copy_from_slice(entry.coords());
                true
            }
            None => false,
        }
    }
}

/// Samples the window trace at level `u` with a freshly prepared sampler.
pub fn sample_trace<R: Rng + ?Sized>(
    window: BoxRegion,
    u: f64,
    gt: Arc<GreenTable>,
    method: SamplerMethod,
    rng: &mut R,
) -> Result<(TraceSample, OccupancyField)> {
    WindowSampler::new(window, gt, method)?.sample_trace(u, rng)
}

/// Samples the local-time field at level `u` with the exact method.
pub fn sample_local_times<R: Rng + ?Sized>(window: BoxRegion, u: f64, gt: Arc<GreenTable>, rng: &mut R) -> Result<OccupancyField> {
    WindowSampler::new(window, gt, SamplerMethod::default())?.sample_field(u, rng)
}

/// Visit indicator of one simple random walk from `start`, observed in `window`.
pub fn sample_srw_vacant_zd<R: Rng + ?Sized>(window: BoxRegion, start: &Site, gt: Arc<GreenTable>, rng: &mut R) -> Result<OccupancyField> {
    WindowSampler::new(window, gt, SamplerMethod::default())?.sample_srw_vacant(start, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Dim;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table(d: usize, r: u32) -> Arc<GreenTable> {
        Arc::new(GreenTable::build(Dim::new(d).unwrap(), r, 1e-8).unwrap())
    }

    #[test]
    fn step_source_is_uniform() {
        for d in 3..=5 {
            let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
            let mut s = StepSource::new(d);
            let mut counts = vec![0u32; 2 * d];
            let n = 200_000;
            for _ in 0..n {
                counts[s.next(&mut rng)] += 1;
            }
            let p = 1.0 / (2 * d) as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!(counts.iter().all(|&c| (c as f64 / n as f64 - p).abs() < 4.0 * se));
        }
    }

    #[test]
    fn zero_level_is_empty() {
        let gt = table(3, 8);
        let s = WindowSampler::new(BoxRegion::centered(3, 2), gt, SamplerMethod::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (trace, field) = s.sample_trace(0.0, &mut rng).unwrap();
        assert!(trace.excursions.is_empty());
        assert_eq!(field.total(), 0);
    }

    #[test]
    fn shell_beyond_table_is_rejected() {
        let gt = table(3, 4);
        let err = WindowSampler::new(BoxRegion::centered(3, 2), gt, SamplerMethod::default());
        assert!(matches!(err, Err(Error::ShellBeyondTable { .. })));
    }

    #[test]
    fn kernel_limit_is_enforced() {
        let gt = table(3, 16);
        let limits = SamplerLimits { max_kernel_support: 10, ..Default::default() };
        let err = WindowSampler::with_limits(BoxRegion::centered(3, 2), gt, SamplerMethod::default(), limits);
        assert!(matches!(err, Err(Error::KernelTooLarge { size: 98, limit: 10 })));
    }

    #[test]
    fn unreachable_epsilon_is_reported() {
        let gt = table(3, 8);
        let limits = SamplerLimits { max_kill_radius: 50, ..Default::default() };
        let err = WindowSampler::with_limits(BoxRegion::centered(3, 1), gt, SamplerMethod::Truncate { epsilon: 1e-6 }, limits);
        assert!(matches!(err, Err(Error::EpsilonUnreachable { .. })));
    }

    #[test]
    fn truncate_bound_is_below_epsilon() {
        let gt = table(4, 8);
        let s = WindowSampler::new(BoxRegion::centered(4, 1), gt, SamplerMethod::Truncate { epsilon: 1e-3 }).unwrap();
        assert!(s.bias_bound() <= 1e-3);
        assert!(s.kill_radius().unwrap() > 1);
        assert!(s.method_tag().starts_with("truncate(rho="));
    }

    #[test]
    fn field_roundtrips() {
        let gt = table(3, 8);
        let s = WindowSampler::new(BoxRegion::new(Site::new(&[1, -1, 0]), 2), gt, SamplerMethod::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let field = s.sample_field(2.0, &mut rng).unwrap().with_seed(5);
        let mut bin = Vec::new();
        field.write_binary(&mut bin).unwrap();
        assert_eq!(OccupancyField::read_binary(&bin[..]).unwrap(), field);
        let mut csv = Vec::new();
        field.write_csv(&mut csv).unwrap();
        assert_eq!(OccupancyField::read_csv(&csv[..]).unwrap(), field);
    }
}
