//! Dispatch from a validated config to the estimators, producing a [`RunRecord`]
//! and the pass/fail checks that `--check` enforces.

use std::sync::Arc;
use std::time::Instant;

use interlace::analytics::{
    EstimatorReport, ExactLawSpec, bounding_window, estimate_cluster_tail, estimate_local_uniqueness, estimate_visibility,
    validate_exact_laws,
};
use interlace::coarse::{critical_scale_level, estimate_good_probability};
use interlace::excursion::{independence_from_visits, inner_law_distances, sample_visits};
use interlace::green::{DEFAULT_RADIUS, GreenTable};
use interlace::lattice::{BoxRegion, Dim, Site};
use interlace::potential::FiniteSet;
use interlace::sampler::{DEFAULT_MAX_KERNEL_SUPPORT, SamplerMethod, WindowSampler, sample_torus_vacant};
use interlace::trials::TrialRunner;
use thiserror::Error;

use crate::config::{ConfigError, Experiment, ExperimentConfig, MethodChoice, TargetSpec};
use crate::report::{Metric, RunRecord};

/// Gap between K and the annulus where outer excursions are observed.
const OBSERVATION_GAP: u32 = 2;

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub workers: usize,
    /// Stores elapsed milliseconds in the record; off by default so reruns compare byte for byte.
    pub record_timing: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { workers: 1, record_timing: false }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{experiment}: {source}")]
    Experiment {
        experiment: &'static str,
        #[source]
        source: interlace::Error,
    },
}

/// One acceptance condition evaluated on a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub record: RunRecord,
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Green table large enough for the potentials and escape shells of windows with the given radii.
pub fn green_table_for(cfg: &ExperimentConfig, window_radii: &[u32]) -> interlace::Result<Arc<GreenTable>> {
    let need = window_radii.iter().map(|&r| (2 * r).max(r + cfg.shell_offset + 1)).max().unwrap_or(1);
    let radius = cfg.table_radius.unwrap_or(need.max(DEFAULT_RADIUS));
    let dim = Dim::with_ceiling(cfg.d, cfg.dim_ceiling)?;
    Ok(Arc::new(GreenTable::build(dim, radius, cfg.green_tol)?))
}

/// Sampler for `window` following the configured method.
pub fn sampler_for(cfg: &ExperimentConfig, window: BoxRegion, gt: &Arc<GreenTable>) -> interlace::Result<WindowSampler> {
    let exact = SamplerMethod::Exact { shell_offset: cfg.shell_offset };
    let truncate = SamplerMethod::Truncate { epsilon: cfg.epsilon };
    let method = match cfg.method {
        MethodChoice::Exact => exact,
        MethodChoice::Truncate => truncate,
        MethodChoice::Auto => {
            let fits = window.inner_boundary_len() <= DEFAULT_MAX_KERNEL_SUPPORT && window.radius + cfg.shell_offset + 1 <= gt.radius();
            if fits { exact } else { truncate }
        }
    };
    WindowSampler::new(window, gt.clone(), method)
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    runner: TrialRunner,
    record: RunRecord,
    checks: Vec<Check>,
    next_seed: u64,
}

impl Run<'_> {
    /// Master seed of the next estimator: the configured seed, then seed+1, seed+2, ...
    fn seed(&mut self) -> u64 {
        let s = self.cfg.seed.wrapping_add(self.next_seed);
        self.next_seed += 1;
        s
    }

    fn trials(&self) -> usize {
        self.cfg.trials as usize
    }

    fn check(&mut self, name: String, passed: bool, detail: String) {
        self.checks.push(Check { name, passed, detail });
    }

    fn check_z(&mut self, name: &str, r: &EstimatorReport) {
        if let Some(z) = r.z_score {
            let tol = self.cfg.z_tol;
            self.check(format!("{name} |z| ≤ {tol}"), z.is_finite() && z.abs() <= tol, format!("z = {z:.3}"));
        }
    }

    fn check_floor(&mut self, name: &str, r: &EstimatorReport) {
        if let Some(min) = self.cfg.min_frequency {
            self.check(format!("{name} ≥ {min}"), r.estimate >= min, format!("estimate = {}", r.estimate));
        }
    }

    fn push_sampler(&mut self, s: &WindowSampler) {
        self.record.push(Metric::point(format!("sampler.bias-bound[W={}]", s.window().radius), s.bias_bound(), 0));
        if let Some(rho) = s.kill_radius() {
            self.record.push(Metric::point(format!("sampler.kill-radius[W={}]", s.window().radius), rho as f64, 0));
        }
    }

    fn window(&self, default: u32) -> BoxRegion {
        BoxRegion::centered(self.cfg.d, self.cfg.window_radius.unwrap_or(default))
    }

    fn validate_laws(&mut self) -> interlace::Result<()> {
        let d = self.cfg.d;
        let origin = Site::origin(d);
        let target = self.cfg.target.clone().unwrap_or(TargetSpec::Sites(vec![vec![0; d]])).resolve(d)?;
        let pair = self.cfg.pair.as_deref().map(Site::new).unwrap_or(Site::axis(d, 0, 3));
        let margin = self.cfg.margin;
        let radii = [
            bounding_window(target.sites(), margin)?.radius,
            bounding_window(&[origin, pair], margin)?.radius,
            bounding_window(&[origin], margin)?.radius,
        ];
        let gt = green_table_for(self.cfg, &radii)?;
        for u in self.cfg.levels() {
            let spec = ExactLawSpec { target: target.clone(), pair: (origin, pair), site: origin, u, margin };
            let seed = self.seed();
            let reports = validate_exact_laws(&spec, self.trials(), seed, &self.runner, |w| sampler_for(self.cfg, w, &gt))?;
            for r in &reports {
                let name = format!("{}[u={u}]", r.event);
                self.record.push_estimate(&name, r);
                self.check_z(&name, r);
            }
        }
        Ok(())
    }

    fn uniqueness(&mut self) -> interlace::Result<()> {
        let max_n = *self.cfg.n.iter().max().expect("validated");
        let window = self.window(2 * max_n);
        let gt = green_table_for(self.cfg, &[window.radius])?;
        let s = sampler_for(self.cfg, window, &gt)?;
        self.push_sampler(&s);
        for u in self.cfg.levels() {
            for &n in &self.cfg.n {
                let seed = self.seed();
                let run = estimate_local_uniqueness(&s, n, u, self.trials(), seed, &self.runner)?;
                let name = format!("local-uniqueness[n={n},u={u}]");
                self.record.push_estimate(&name, &run.report);
                self.check_floor(&name, &run.report);
            }
        }
        Ok(())
    }

    fn visibility(&mut self) -> interlace::Result<()> {
        let m_of = |n: u32| self.cfg.m.unwrap_or(4 * n);
        let max_m = self.cfg.n.iter().map(|&n| m_of(n)).max().expect("validated");
        let window = self.window(max_m);
        let gt = green_table_for(self.cfg, &[window.radius])?;
        let s = sampler_for(self.cfg, window, &gt)?;
        self.push_sampler(&s);
        for u in self.cfg.levels() {
            for &n in &self.cfg.n {
                let m = m_of(n);
                let seed = self.seed();
                let run = estimate_visibility(&s, n, m, u, self.trials(), seed, &self.runner)?;
                let name = format!("visibility[n={n},m={m},u={u}]");
                self.record.push_estimate(&name, &run.report);
                self.check_floor(&name, &run.report);
            }
        }
        Ok(())
    }

    fn tail(&mut self) -> interlace::Result<()> {
        let mut ns = self.cfg.n.clone();
        ns.sort_unstable();
        ns.dedup();
        let big_m = self.cfg.big_m.unwrap_or(4 * ns[ns.len() - 1]);
        let window = self.window(big_m);
        let gt = green_table_for(self.cfg, &[window.radius])?;
        let s = sampler_for(self.cfg, window, &gt)?;
        self.push_sampler(&s);
        for u in self.cfg.levels() {
            let seed = self.seed();
            let pairs = estimate_cluster_tail(&s, u, &ns, big_m, self.trials(), seed, &self.runner)?;
            for (n, (diam, size)) in ns.iter().zip(&pairs) {
                self.record.push_estimate(&format!("cluster-diameter-tail[n={n},M={big_m},u={u}]"), diam);
                self.record.push_estimate(&format!("cluster-size-tail[n={n},M={big_m},u={u}]"), size);
            }
            let nested = |pick: fn(&(EstimatorReport, EstimatorReport)) -> u64| pairs.windows(2).all(|w| pick(&w[1]) <= pick(&w[0]));
            let diam_ok = nested(|p| p.0.successes.unwrap_or(0));
            let size_ok = nested(|p| p.1.successes.unwrap_or(0));
            let counts: Vec<String> = pairs.iter().map(|p| format!("{}/{}", p.0.successes.unwrap_or(0), p.1.successes.unwrap_or(0))).collect();
            self.check(format!("tails non-increasing in n at u={u}"), diam_ok && size_ok, format!("diameter/size counts {}", counts.join(" ")));
        }
        Ok(())
    }

    fn coarse_sweep(&mut self) -> interlace::Result<()> {
        let d = self.cfg.d;
        let windows: Vec<u32> = self.cfg.radius.iter().map(|&r| self.cfg.window_radius.unwrap_or(r).max(r)).collect();
        let gt = green_table_for(self.cfg, &windows)?;
        let mut good: Vec<(u32, EstimatorReport)> = Vec::new();
        for (&r, &w) in self.cfg.radius.iter().zip(&windows) {
            let s = sampler_for(self.cfg, BoxRegion::centered(d, w), &gt)?;
            self.push_sampler(&s);
            let levels = if self.cfg.u.is_empty() { vec![critical_scale_level(r, d)] } else { self.cfg.u.clone() };
            for u in levels {
                let seed = self.seed();
                let [g, frame, budget] = estimate_good_probability(&s, r, u, self.cfg.budget, self.trials(), seed, &self.runner)?;
                let tag = format!("R={r},u={u}");
                self.record.push(Metric::point(format!("frame-capacity[R={r}]"), frame.params["cap_frame"], 0));
                self.record.push_estimate(&format!("good-box[{tag}]"), &g);
                let frame_name = format!("frame-vacant[{tag}]");
                self.record.push_estimate(&frame_name, &frame);
                self.record.push_estimate(&format!("within-budget[{tag}]"), &budget);
                self.check_z(&frame_name, &frame);
                if self.cfg.u.is_empty() {
                    good.push((r, g));
                }
            }
        }
        if good.len() > 1 {
            good.sort_by_key(|g| g.0);
            let ok = good.windows(2).all(|w| w[1].1.estimate >= w[0].1.estimate || w[1].1.ci_hi >= w[0].1.ci_lo);
            let detail: Vec<String> = good.iter().map(|(r, g)| format!("R={r}: {:.4} [{:.4}, {:.4}]", g.estimate, g.ci_lo, g.ci_hi)).collect();
            self.check("good-box non-decreasing in R within CIs".into(), ok, detail.join("; "));
        }
        Ok(())
    }

    fn conditional_law(&mut self) -> interlace::Result<()> {
        let d = self.cfg.d;
        let default = TargetSpec::Sites(vec![vec![0; d], Site::axis(d, 0, 1).coords().to_vec()]);
        let k: FiniteSet = self.cfg.target.clone().unwrap_or(default).resolve(d)?;
        let bounding = bounding_window(k.sites(), self.cfg.margin)?;
        let window = match self.cfg.window_radius {
            Some(r) => BoxRegion::new(bounding.center, r),
            None => bounding,
        };
        let gt = green_table_for(self.cfg, &[window.radius])?;
        let s = sampler_for(self.cfg, window, &gt)?;
        let floor = self.cfg.bucket_floor as usize;
        for u in self.cfg.levels() {
            let seed = self.seed();
            let visits = sample_visits(&s, &k, u, self.trials(), seed, &self.runner, OBSERVATION_GAP)?;
            let law = inner_law_distances(&k, &visits, floor)?;
            for (i, b) in law.buckets.iter().enumerate() {
                let name = format!("inner-law-tv[u={u},bucket={i},excursions={}]", b.signature.len());
                self.record.push(Metric::point(name.clone(), b.total_variation, b.samples as u64));
                let tol = self.cfg.tv_tol;
                self.check(format!("{name} ≤ {tol}"), b.total_variation <= tol, format!("TV = {:.5} over {} samples", b.total_variation, b.samples));
            }
            self.record.push(Metric::point(format!("sparse-buckets[u={u}]"), law.sparse_buckets as f64, law.sparse_samples as u64));
            self.check(
                format!("some bucket reaches {floor} samples at u={u}"),
                !law.buckets.is_empty(),
                format!("{} buckets above the floor", law.buckets.len()),
            );
            let ind = independence_from_visits(&visits)?;
            let [cond, uncond] = ind.as_reports(seed);
            let tol = self.cfg.z_tol;
            self.record.push_estimate(&format!("conditioned-correlation[u={u}]"), &cond);
            self.record.push_estimate(&format!("unconditioned-correlation[u={u}]"), &uncond);
            let cz = ind.conditioned_z();
            let uz = ind.unconditioned_z();
            self.check(format!("conditioned correlation |ρ√n| ≤ {tol} at u={u}"), cz.abs() <= tol, format!("ρ√n = {cz:.3}"));
            self.check(format!("unconditioned correlation |ρ√n| > {tol} at u={u}"), uz.abs() > tol, format!("ρ√n = {uz:.3}"));
        }
        Ok(())
    }

    fn torus(&mut self) -> interlace::Result<()> {
        let dim = Dim::with_ceiling(self.cfg.d, self.cfg.dim_ceiling)?;
        let g0 = GreenTable::build(dim, 1, self.cfg.green_tol)?.origin();
        let side = self.cfg.torus_side;
        for u in self.cfg.levels() {
            let seed = self.seed();
            let fractions = self.runner.run(seed, self.trials(), |_, rng| Ok(sample_torus_vacant(side, dim, u, rng)?.vacant_fraction()))?;
            let expected = (-u / g0).exp();
            let r = EstimatorReport::mean("torus-vacant-fraction", &[("N", side as f64), ("u", u)], &fractions, seed, Some(expected));
            let name = format!("torus-vacant-fraction[N={side},u={u}]");
            self.record.push_estimate(&name, &r);
            let rel = (r.estimate - expected).abs() / expected;
            let tol = self.cfg.rel_tol;
            self.check(format!("{name} within {tol} relative"), rel <= tol, format!("relative error {rel:.4}"));
        }
        Ok(())
    }
}

/// Runs the configured experiment. Per-trial seeds come from [`interlace::trials::trial_seed`]
/// and results merge in trial order, so the worker count never shows in the record.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome, RunError> {
    let violations = cfg.violations();
    if !violations.is_empty() {
        return Err(ConfigError { violations }.into());
    }
    let experiment = cfg.experiment.name();
    let wrap = |source| RunError::Experiment { experiment, source };
    let runner = TrialRunner::new(opts.workers).map_err(wrap)?;
    let mut run = Run { cfg, runner, record: RunRecord::new(experiment, &cfg.emit(), cfg.seed), checks: Vec::new(), next_seed: 0 };
    let start = Instant::now();
    match cfg.experiment {
        Experiment::ValidateLaws => run.validate_laws(),
        Experiment::Uniqueness => run.uniqueness(),
        Experiment::Visibility => run.visibility(),
        Experiment::Tail => run.tail(),
        Experiment::CoarseSweep => run.coarse_sweep(),
        Experiment::ConditionalLaw => run.conditional_law(),
        Experiment::Torus => run.torus(),
    }
    .map_err(wrap)?;
    if opts.record_timing {
        run.record.wall_ms = start.elapsed().as_millis() as u64;
    }
    Ok(Outcome { record: run.record, checks: run.checks })
}
