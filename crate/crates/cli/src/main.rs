use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result, bail};
use clap::{Args, Parser, Subcommand};
use interlace::lattice::{BoxRegion, Dim, Site};
use interlace::potential::{FiniteSet, solve_equilibrium};
use interlace::trials::trial_rng;
use interlace_cli::config::{Experiment, ExperimentConfig, TargetSpec};
use interlace_cli::experiments::{RunOptions, green_table_for, run_experiment, sampler_for};
use interlace_cli::report::{Format, Metric, RunRecord, render};

#[derive(Parser)]
#[command(name = "interlace", version, about = "Random interlacements on Z^d at finite-window scale")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a single config key, e.g. `--set u=0.25,1`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Output path; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "csv")]
    format: Format,
    /// Exit with status 2 when an acceptance check fails.
    #[arg(long, global = true)]
    check: bool,
    /// Store wall-clock time in the report (breaks byte-identical reruns).
    #[arg(long, global = true)]
    record_timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Lattice Green function g(0,x).
    Green {
        #[arg(long, default_value = "0,0,0", value_delimiter = ',', allow_negative_numbers = true)]
        site: Vec<i32>,
    },
    /// Capacity and equilibrium measure of a set (`box:R` or `x,y,z;...`).
    Cap {
        #[arg(long)]
        sites: String,
    },
    /// Sample one window: local times as CSV or the labelled trace as JSON lines.
    Sample {
        /// Write the binary field format instead.
        #[arg(long)]
        binary: bool,
    },
    /// Void probability, two-point vacancy and mean local time against their exact values.
    Validate,
    Uniqueness,
    Visibility,
    Tail,
    /// Good-box statistics over box radii.
    Coarse,
    /// Conditional inner-path law and inner/outer independence given the entrance/exit data.
    Excursion,
    /// Vacant fraction of the random-walk trace on the discrete torus.
    Torus,
}

fn load_config(common: &Common, experiment: Option<Experiment>) -> Result<ExperimentConfig> {
    let mut text = match &common.config {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    if let Some(e) = experiment {
        text = format!("{}\n", text.lines().filter(|l| !l.trim_start().starts_with("experiment")).collect::<Vec<_>>().join("\n"));
        text.push_str(&format!("experiment={e}\n"));
    }
    let mut cfg = ExperimentConfig::parse(&text)?;
    for o in &common.overrides {
        let (k, v) = o.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got '{o}'"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = Some(o.clone());
    }
    let violations = cfg.violations();
    if !violations.is_empty() {
        return Err(interlace_cli::ConfigError { violations }.into());
    }
    Ok(cfg)
}

fn write_out(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => io::stdout().write_all(bytes).context("writing stdout"),
    }
}

fn green(common: &Common, site: &[i32]) -> Result<RunRecord> {
    let cfg = load_config(common, None)?;
    if site.len() != cfg.d {
        bail!("site needs {} coordinates", cfg.d);
    }
    let x = Site::new(site);
    let dim = Dim::with_ceiling(cfg.d, cfg.dim_ceiling)?;
    let g = interlace::green::green_value(&x, dim, cfg.green_tol)?;
    let mut rec = RunRecord::new("green", &cfg.emit(), cfg.seed);
    rec.push(Metric::point(format!("g[{x}]"), g, 0));
    Ok(rec)
}

fn cap(common: &Common, sites: &str) -> Result<RunRecord> {
    let cfg = load_config(common, None)?;
    let spec: TargetSpec = sites.parse().map_err(|e: String| anyhow::anyhow!("--sites: expected {e}"))?;
    let k: FiniteSet = spec.resolve(cfg.d)?;
    let gt = green_table_for(&cfg, &[k.span().div_ceil(2)])?;
    let pd = solve_equilibrium(&k, &gt)?;
    let mut rec = RunRecord::new("cap", &cfg.emit(), cfg.seed);
    rec.push(Metric::point("capacity", pd.capacity(), 0));
    rec.push(Metric::point("residual", pd.full_residual(&gt)?, 0));
    for (x, e) in pd.support().iter().zip(pd.eq_measure()) {
        rec.push(Metric::point(format!("equilibrium[{x}]"), *e, 0));
    }
    Ok(rec)
}

fn sample(common: &Common, binary: bool) -> Result<()> {
    let cfg = load_config(common, None)?;
    let w = cfg.window_radius.unwrap_or(4);
    let gt = green_table_for(&cfg, &[w])?;
    let sampler = sampler_for(&cfg, BoxRegion::centered(cfg.d, w), &gt)?;
    let mut rng = trial_rng(cfg.seed, 0);
    let u = cfg.levels()[0];
    let (trace, field) = sampler.sample_trace(u, &mut rng)?;
    let field = field.with_seed(cfg.seed);
    let mut buf = Vec::new();
    if binary {
        field.write_binary(&mut buf)?;
    } else {
        match common.format {
            Format::Csv => field.write_csv(&mut buf)?,
            Format::JsonLines => trace.write_jsonl(&mut buf)?,
        }
    }
    match &cfg.out {
        Some(p) => {
            let mut f = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
            f.write_all(&buf)?;
            f.flush()?;
        }
        None => write_out(None, &buf)?,
    }
    eprintln!("{}: {} trajectories, {} occupied sites", sampler.method_tag(), trace.trajectory_count(), field.occupied());
    Ok(())
}

fn experiment(common: &Common, e: Experiment) -> Result<ExitCode> {
    let cfg = load_config(common, Some(e))?;
    let opts = RunOptions { workers: common.workers, record_timing: common.record_timing };
    let outcome = run_experiment(&cfg, &opts)?;
    write_out(cfg.out.as_deref(), &render(&outcome.record, common.format))?;
    for c in &outcome.checks {
        eprintln!("{} {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(if common.check && !outcome.passed() { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn run(cli: Cli) -> Result<ExitCode> {
    let common = &cli.common;
    let record = match cli.command {
        Command::Green { site } => green(common, &site)?,
        Command::Cap { sites } => cap(common, &sites)?,
        Command::Sample { binary } => {
            sample(common, binary)?;
            return Ok(ExitCode::SUCCESS);
        }
        Command::Validate => return experiment(common, Experiment::ValidateLaws),
        Command::Uniqueness => return experiment(common, Experiment::Uniqueness),
        Command::Visibility => return experiment(common, Experiment::Visibility),
        Command::Tail => return experiment(common, Experiment::Tail),
        Command::Coarse => return experiment(common, Experiment::CoarseSweep),
        Command::Excursion => return experiment(common, Experiment::ConditionalLaw),
        Command::Torus => return experiment(common, Experiment::Torus),
    };
    write_out(common.out.as_deref(), &render(&record, common.format))?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
