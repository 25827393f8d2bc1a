//! Line-oriented `key=value` experiment configuration.
//!
//! One pair per line, `#` starts a comment. Lists are comma separated; site lists
//! separate sites with `;`. Parsing reports every problem at once.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use interlace::lattice::{BoxRegion, DEFAULT_DIM_CEILING, MAX_DIM, Site};
use interlace::potential::FiniteSet;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Experiment {
    #[default]
    ValidateLaws,
    Uniqueness,
    Visibility,
    Tail,
    CoarseSweep,
    ConditionalLaw,
    Torus,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::ValidateLaws,
        Experiment::Uniqueness,
        Experiment::Visibility,
        Experiment::Tail,
        Experiment::CoarseSweep,
        Experiment::ConditionalLaw,
        Experiment::Torus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::ValidateLaws => "validate-laws",
            Experiment::Uniqueness => "uniqueness",
            Experiment::Visibility => "visibility",
            Experiment::Tail => "tail",
            Experiment::CoarseSweep => "coarse-sweep",
            Experiment::ConditionalLaw => "conditional-law",
            Experiment::Torus => "torus",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("one of {}", Experiment::ALL.map(|e| e.name()).join(", ")))
    }
}

/// How windows are sampled; `auto` uses the exact kernel when the window boundary fits it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MethodChoice {
    #[default]
    Auto,
    Exact,
    Truncate,
}

impl MethodChoice {
    fn name(self) -> &'static str {
        match self {
            MethodChoice::Auto => "auto",
            MethodChoice::Exact => "exact",
            MethodChoice::Truncate => "truncate",
        }
    }
}

impl FromStr for MethodChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(MethodChoice::Auto),
            "exact" | "h-exact" => Ok(MethodChoice::Exact),
            "truncate" => Ok(MethodChoice::Truncate),
            _ => Err("one of auto, exact, truncate".into()),
        }
    }
}

/// A set of sites: either the box B(0,r) or an explicit list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TargetSpec {
    Box(u32),
    Sites(Vec<Vec<i32>>),
}

impl TargetSpec {
    pub fn resolve(&self, d: usize) -> interlace::Result<FiniteSet> {
        match self {
            TargetSpec::Box(r) => Ok(FiniteSet::from_box(&BoxRegion::centered(d, *r))),
            TargetSpec::Sites(s) => FiniteSet::new(s.iter().map(|c| Site::new(c))),
        }
    }

    fn dims(&self) -> Vec<usize> {
        match self {
            TargetSpec::Box(_) => Vec::new(),
            TargetSpec::Sites(s) => s.iter().map(Vec::len).collect(),
        }
    }
}

impl fmt::Display for TargetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetSpec::Box(r) => write!(f, "box:{r}"),
            TargetSpec::Sites(s) => f.write_str(&s.iter().map(|c| join(c)).collect::<Vec<_>>().join(";")),
        }
    }
}

impl FromStr for TargetSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(r) = s.strip_prefix("box:") {
            return r.trim().parse().map(TargetSpec::Box).map_err(|_| "box:<radius> or x,y,z;... site list".to_string());
        }
        s.split(';')
            .map(|site| parse_list::<i32>(site))
            .collect::<Result<Vec<_>, _>>()
            .map(TargetSpec::Sites)
            .map_err(|_| "box:<radius> or x,y,z;... site list".to_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub d: usize,
    pub dim_ceiling: usize,
    /// Levels; empty means the experiment's default.
    pub u: Vec<f64>,
    /// Box radii R for the coarse sweep.
    pub radius: Vec<u32>,
    pub n: Vec<u32>,
    pub m: Option<u32>,
    pub big_m: Option<u32>,
    pub trials: u64,
    pub seed: u64,
    pub method: MethodChoice,
    pub shell_offset: u32,
    pub epsilon: f64,
    pub table_radius: Option<u32>,
    pub green_tol: f64,
    pub window_radius: Option<u32>,
    pub target: Option<TargetSpec>,
    pub pair: Option<Vec<i32>>,
    pub margin: u32,
    pub budget: Option<u64>,
    pub torus_side: u32,
    pub bucket_floor: u64,
    pub z_tol: f64,
    pub tv_tol: f64,
    pub rel_tol: f64,
    pub min_frequency: Option<f64>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: Experiment::ValidateLaws,
            d: 3,
            dim_ceiling: DEFAULT_DIM_CEILING,
            u: Vec::new(),
            radius: vec![4],
            n: vec![20],
            m: None,
            big_m: None,
            trials: 1000,
            seed: 0,
            method: MethodChoice::Auto,
            shell_offset: 0,
            epsilon: 0.01,
            table_radius: None,
            green_tol: interlace::green::DEFAULT_TOL,
            window_radius: None,
            target: None,
            pair: None,
            margin: 1,
            budget: None,
            torus_side: 32,
            bucket_floor: 10_000,
            z_tol: 3.0,
            tv_tol: 0.05,
            rel_tol: 0.05,
            min_frequency: None,
            out: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum Violation {
    #[error("line {line}: expected key=value, got '{text}'")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key '{key}' given twice")]
    Duplicate { line: usize, key: String },
    #[error("{key}: expected {expected}, got '{value}'")]
    TypeMismatch { key: String, expected: String, value: String },
    #[error("{key}: {message}")]
    Precondition { key: String, message: String },
}

/// Every violation found in one configuration.
#[derive(Clone, Debug, PartialEq, Error)]
pub struct ConfigError {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration ({} problem{})", self.violations.len(), if self.violations.len() == 1 { "" } else { "s" })?;
        for v in &self.violations {
            write!(f, "\n  {v}")?;
        }
        Ok(())
    }
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, ()> {
    let items: Vec<&str> = s.split(',').map(str::trim).collect();
    if items.iter().any(|i| i.is_empty()) {
        return Err(());
    }
    items.into_iter().map(|i| i.parse().map_err(|_| ())).collect()
}

const KEYS: &[&str] = &[
    "experiment",
    "d",
    "dim_ceiling",
    "u",
    "R",
    "n",
    "m",
    "M",
    "trials",
    "seed",
    "method",
    "shell_offset",
    "epsilon",
    "table_radius",
    "green_tol",
    "window_radius",
    "target",
    "pair",
    "margin",
    "budget",
    "torus_side",
    "bucket_floor",
    "z_tol",
    "tv_tol",
    "rel_tol",
    "min_frequency",
    "out",
];

impl ExperimentConfig {
    /// Parses and validates; all problems are reported together.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        let mut violations = Vec::new();
        let mut seen: Vec<&str> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                violations.push(Violation::Malformed { line: i + 1, text: line.to_string() });
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            let Some(known) = KEYS.iter().find(|k| **k == key) else {
                violations.push(Violation::UnknownKey { line: i + 1, key: key.to_string() });
                continue;
            };
            if seen.contains(known) {
                violations.push(Violation::Duplicate { line: i + 1, key: key.to_string() });
                continue;
            }
            seen.push(known);
            if let Err(v) = cfg.set(key, value) {
                violations.push(v);
            }
        }
        violations.extend(cfg.violations());
        if violations.is_empty() { Ok(cfg) } else { Err(ConfigError { violations }) }
    }

    /// Assigns one key from its textual value without cross-field validation.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Violation> {
        fn one<T: FromStr>(key: &str, value: &str, expected: &str) -> Result<T, Violation> {
            value.parse().map_err(|_| mismatch(key, expected, value))
        }
        fn list<T: FromStr>(key: &str, value: &str, expected: &str) -> Result<Vec<T>, Violation> {
            parse_list(value).map_err(|_| mismatch(key, expected, value))
        }
        fn auto<T: FromStr>(key: &str, value: &str, expected: &str) -> Result<Option<T>, Violation> {
            if value == "auto" { Ok(None) } else { one(key, value, expected).map(Some) }
        }
        match key {
            "experiment" => self.experiment = value.parse().map_err(|e: String| mismatch(key, &e, value))?,
            "d" => self.d = one(key, value, "unsigned integer")?,
            "dim_ceiling" => self.dim_ceiling = one(key, value, "unsigned integer")?,
            "u" => self.u = list(key, value, "comma-separated reals")?,
            "R" => self.radius = list(key, value, "comma-separated unsigned integers")?,
            "n" => self.n = list(key, value, "comma-separated unsigned integers")?,
            "m" => self.m = auto(key, value, "unsigned integer or auto")?,
            "M" => self.big_m = auto(key, value, "unsigned integer or auto")?,
            "trials" => self.trials = one(key, value, "unsigned integer")?,
            "seed" => self.seed = one(key, value, "unsigned 64-bit integer")?,
            "method" => self.method = value.parse().map_err(|e: String| mismatch(key, &e, value))?,
            "shell_offset" => self.shell_offset = one(key, value, "unsigned integer")?,
            "epsilon" => self.epsilon = one(key, value, "real")?,
            "table_radius" => self.table_radius = auto(key, value, "unsigned integer or auto")?,
            "green_tol" => self.green_tol = one(key, value, "real")?,
            "window_radius" => self.window_radius = auto(key, value, "unsigned integer or auto")?,
            "target" => self.target = Some(value.parse().map_err(|e: String| mismatch(key, &e, value))?),
            "pair" => self.pair = Some(list(key, value, "comma-separated integers")?),
            "margin" => self.margin = one(key, value, "unsigned integer")?,
            "budget" => self.budget = auto(key, value, "unsigned integer or auto")?,
            "torus_side" => self.torus_side = one(key, value, "unsigned integer")?,
            "bucket_floor" => self.bucket_floor = one(key, value, "unsigned integer")?,
            "z_tol" => self.z_tol = one(key, value, "real")?,
            "tv_tol" => self.tv_tol = one(key, value, "real")?,
            "rel_tol" => self.rel_tol = one(key, value, "real")?,
            "min_frequency" => self.min_frequency = Some(one(key, value, "real")?),
            "out" => self.out = Some(PathBuf::from(value)),
            _ => return Err(Violation::UnknownKey { line: 0, key: key.to_string() }),
        }
        Ok(())
    }

    /// Cross-field preconditions checked before any sampling.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut bad = |key: &str, message: String| out.push(Violation::Precondition { key: key.to_string(), message });
        if self.d < 3 {
            bad("d", "dimension must be ≥ 3 (Green function diverges)".into());
        } else if self.d > self.dim_ceiling {
            bad("d", format!("dimension {} exceeds the ceiling {}", self.d, self.dim_ceiling));
        }
        if self.dim_ceiling > MAX_DIM {
            bad("dim_ceiling", format!("must be ≤ {MAX_DIM}"));
        }
        if self.u.iter().any(|u| !u.is_finite() || *u < 0.0) {
            bad("u", "levels must be finite and ≥ 0".into());
        }
        if self.trials == 0 {
            bad("trials", "must be ≥ 1".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            bad("epsilon", "must lie in (0, 1)".into());
        }
        if !(self.green_tol > 0.0) {
            bad("green_tol", "tolerance must be positive".into());
        }
        if self.radius.is_empty() || self.radius.iter().any(|&r| r < 2) {
            bad("R", "box radii must be ≥ 2".into());
        }
        if self.n.is_empty() || self.n.contains(&0) {
            bad("n", "must list positive integers".into());
        }
        let max_n = self.n.iter().copied().max().unwrap_or(0);
        if self.experiment == Experiment::Uniqueness && self.n.iter().any(|&n| n < 10) {
            bad("n", "uniqueness needs n ≥ 10".into());
        }
        if self.m.is_some_and(|m| m <= max_n) {
            bad("m", format!("must exceed every n (max n = {max_n})"));
        }
        if self.big_m.is_some_and(|m| m <= max_n) {
            bad("M", format!("must exceed every n (max n = {max_n})"));
        }
        if self.table_radius == Some(0) {
            bad("table_radius", "must be ≥ 1".into());
        }
        if let Some(t) = &self.target {
            if t.dims().iter().any(|&k| k != self.d) {
                bad("target", format!("every site needs {} coordinates", self.d));
            }
            if self.experiment == Experiment::ConditionalLaw {
                let size = match t {
                    TargetSpec::Box(r) => (2 * *r as usize + 1).pow(self.d as u32),
                    TargetSpec::Sites(s) => s.len(),
                };
                if size > interlace::excursion::MAX_VALIDATION_SET {
                    bad("target", format!("conditional-law sets hold at most {} sites", interlace::excursion::MAX_VALIDATION_SET));
                }
            }
        }
        if self.pair.as_ref().is_some_and(|p| p.len() != self.d) {
            bad("pair", format!("needs {} coordinates", self.d));
        }
        if self.torus_side < 4 {
            bad("torus_side", "must be ≥ 4".into());
        }
        if self.bucket_floor == 0 {
            bad("bucket_floor", "must be ≥ 1".into());
        }
        for (key, v) in [("z_tol", self.z_tol), ("tv_tol", self.tv_tol), ("rel_tol", self.rel_tol)] {
            if !(v > 0.0 && v.is_finite()) {
                bad(key, "must be positive".into());
            }
        }
        if self.min_frequency.is_some_and(|p| !(0.0..=1.0).contains(&p)) {
            bad("min_frequency", "must lie in [0, 1]".into());
        }
        out
    }

    /// Canonical text: every key in fixed order, optional keys only when set.
    pub fn emit(&self) -> String {
        let mut lines = vec![
            format!("experiment={}", self.experiment),
            format!("d={}", self.d),
            format!("dim_ceiling={}", self.dim_ceiling),
        ];
        if !self.u.is_empty() {
            lines.push(format!("u={}", join(&self.u)));
        }
        lines.push(format!("R={}", join(&self.radius)));
        lines.push(format!("n={}", join(&self.n)));
        let opt = |lines: &mut Vec<String>, key: &str, v: Option<String>| {
            if let Some(v) = v {
                lines.push(format!("{key}={v}"));
            }
        };
        opt(&mut lines, "m", self.m.map(|v| v.to_string()));
        opt(&mut lines, "M", self.big_m.map(|v| v.to_string()));
        lines.push(format!("trials={}", self.trials));
        lines.push(format!("seed={}", self.seed));
        lines.push(format!("method={}", self.method.name()));
        lines.push(format!("shell_offset={}", self.shell_offset));
        lines.push(format!("epsilon={}", self.epsilon));
        opt(&mut lines, "table_radius", self.table_radius.map(|v| v.to_string()));
        lines.push(format!("green_tol={}", self.green_tol));
        opt(&mut lines, "window_radius", self.window_radius.map(|v| v.to_string()));
        opt(&mut lines, "target", self.target.as_ref().map(|t| t.to_string()));
        opt(&mut lines, "pair", self.pair.as_ref().map(|p| join(p)));
        lines.push(format!("margin={}", self.margin));
        opt(&mut lines, "budget", self.budget.map(|v| v.to_string()));
        lines.push(format!("torus_side={}", self.torus_side));
        lines.push(format!("bucket_floor={}", self.bucket_floor));
        lines.push(format!("z_tol={}", self.z_tol));
        lines.push(format!("tv_tol={}", self.tv_tol));
        lines.push(format!("rel_tol={}", self.rel_tol));
        opt(&mut lines, "min_frequency", self.min_frequency.map(|v| v.to_string()));
        opt(&mut lines, "out", self.out.as_ref().map(|p| p.display().to_string()));
        let mut text = lines.join("\n");
        text.push('\n');
        text
    }

    /// Levels to run; 1.0 when none are configured.
    pub fn levels(&self) -> Vec<f64> {
        if self.u.is_empty() { vec![1.0] } else { self.u.clone() }
    }
}

fn mismatch(key: &str, expected: &str, value: &str) -> Violation {
    Violation::TypeMismatch { key: key.to_string(), expected: expected.to_string(), value: value.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::parse("d=3\nu=0.5\ntrials=1000\nseed=42").unwrap();
        assert_eq!(cfg.u, vec![0.5]);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.experiment, Experiment::ValidateLaws);
        assert_eq!(cfg.margin, 1);
    }

    #[test]
    fn low_dimension_is_named() {
        let err = ExperimentConfig::parse("d=2").unwrap_err();
        assert_eq!(err.violations.len(), 1);
        assert!(err.to_string().contains("dimension must be ≥ 3"));
    }

    #[test]
    fn every_violation_is_listed() {
        let err = ExperimentConfig::parse("d=2\ntrials=abc\ncolour=red\nepsilon=2\nnonsense").unwrap_err();
        let v = &err.violations;
        assert!(v.iter().any(|v| matches!(v, Violation::Malformed { line: 5, .. })));
        assert!(v.iter().any(|v| matches!(v, Violation::UnknownKey { key, .. } if key == "colour")));
        assert!(v.iter().any(|v| matches!(v, Violation::TypeMismatch { key, .. } if key == "trials")));
        assert!(v.iter().any(|v| matches!(v, Violation::Precondition { key, .. } if key == "epsilon")));
        assert!(v.iter().any(|v| matches!(v, Violation::Precondition { key, .. } if key == "d")));
    }

    #[test]
    fn comments_and_duplicates() {
        let cfg = ExperimentConfig::parse("# header\nseed=7 # trailing\n\n").unwrap();
        assert_eq!(cfg.seed, 7);
        let err = ExperimentConfig::parse("seed=1\nseed=2").unwrap_err();
        assert!(matches!(err.violations[0], Violation::Duplicate { line: 2, .. }));
    }

    #[test]
    fn targets_parse_both_forms() {
        assert_eq!("box:2".parse::<TargetSpec>().unwrap(), TargetSpec::Box(2));
        assert_eq!("0,0,0; 1,0,0".parse::<TargetSpec>().unwrap(), TargetSpec::Sites(vec![vec![0, 0, 0], vec![1, 0, 0]]));
        assert!("1,,0".parse::<TargetSpec>().is_err());
        let err = ExperimentConfig::parse("target=0,0").unwrap_err();
        assert!(matches!(&err.violations[0], Violation::Precondition { key, .. } if key == "target"));
    }
}
