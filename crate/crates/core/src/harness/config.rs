//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # two classes, Fig.-3 style sweep
//! scenario = avg_aoi_vs_N
//! classes[0].fraction = 0.5
//! classes[0].success_prob = 0.9
//! classes[1].fraction = 0.5
//! classes[1].success_prob = 0.2
//! N_sweep = 50, 100, 200
//! horizon = 1e6
//! ```
//!
//! A `preset = <name>` line loads a named base configuration first; every
//! other line overrides it regardless of order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::equilibrium::default_epsilon;
use crate::model::{validate_network, AgeFunction, ClassSpec, ModelError, NetworkSpec};
use crate::sim::{AgeScale, ResetMode};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{field}: {message}")]
    Field { field: String, message: String },
    #[error("invalid network for N = {num_agents}: {source}")]
    Validation {
        num_agents: u64,
        #[source]
        source: ModelError,
    },
    #[error("unknown preset {0:?} (try `presets`)")]
    UnknownPreset(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn field_err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scenario {
    #[serde(rename = "cdf_convergence")]
    CdfConvergence,
    #[serde(rename = "avg_aoi_vs_N")]
    AvgAoiVsN,
    #[serde(rename = "nonlinear_age")]
    NonlinearAge,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::CdfConvergence => "cdf_convergence",
            Scenario::AvgAoiVsN => "avg_aoi_vs_N",
            Scenario::NonlinearAge => "nonlinear_age",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "cdf_convergence" => Some(Scenario::CdfConvergence),
            "avg_aoi_vs_N" | "avg_aoi_vs_n" => Some(Scenario::AvgAoiVsN),
            "nonlinear_age" => Some(Scenario::NonlinearAge),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    ThresholdRandom,
    Index,
}

/// Where threshold-policy thresholds come from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ThresholdSource {
    /// Pick the closed form matching the age function.
    Auto,
    Linear,
    Power,
    Log,
    ExplicitRescaled { thresholds: Vec<f64> },
    ExplicitUnscaled { thresholds: Vec<u64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialAgeChoice {
    Zero,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Emit {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub preset: Option<String>,
    pub scenario: Option<Scenario>,
    pub classes: Vec<ClassSpec>,
    pub num_agents: u64,
    pub n_sweep: Vec<u64>,
    pub horizon: u64,
    pub seed: u64,
    pub policy: PolicyKind,
    pub index_exponent: f64,
    pub thresholds: ThresholdSource,
    pub age_function: AgeFunction,
    pub age_scale: AgeScale,
    pub epsilon: f64,
    pub snapshot_slots: Vec<u64>,
    pub replications: u32,
    pub output_dir: PathBuf,
    pub emit: Vec<Emit>,
    pub initial_ages: InitialAgeChoice,
    pub warmup: u64,
    pub reset: ResetMode,
}

impl ExperimentConfig {
    /// Network sizes to run: the sweep, or `num_agents` alone.
    pub fn sizes(&self) -> Vec<u64> {
        if self.n_sweep.is_empty() {
            vec![self.num_agents]
        } else {
            self.n_sweep.clone()
        }
    }

    pub fn network(&self, num_agents: u64) -> NetworkSpec {
        NetworkSpec::new(self.classes.clone(), num_agents)
    }

    pub fn emits(&self, e: Emit) -> bool {
        self.emit.contains(&e)
    }
}

pub const PRESETS: [(&str, &str); 3] = [
    (
        "paper-fig2",
        "CDF convergence: p = {0.9, 0.2}, N in {10, 100, 1000}, Gaussian initial ages, snapshots at slots 100..50000",
    ),
    (
        "paper-fig3",
        "average AoI vs N: p = {0.9, 0.2}, N in {50, 100, 200, 500, 1000}, T = 1e6, 5 seeds",
    ),
    (
        "paper-fig4",
        "age function h^4: p = {0.9, 0.1}, N in {50, 100}, T = 1e7, 3 seeds",
    ),
];

/// Text of a preset, in the same format as config files.
pub fn preset_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "paper-fig2" => {
            "scenario = cdf_convergence
classes[0].fraction = 0.5
classes[0].success_prob = 0.9
classes[1].fraction = 0.5
classes[1].success_prob = 0.2
N_sweep = 10, 100, 1000
horizon = 1000000
snapshot_slots = 100, 1000, 10000, 50000
initial_ages = gaussian
thresholds.source = linear
replications = 1
"
        }
        "paper-fig3" => {
            "scenario = avg_aoi_vs_N
classes[0].fraction = 0.5
classes[0].success_prob = 0.9
classes[1].fraction = 0.5
classes[1].success_prob = 0.2
N_sweep = 50, 100, 200, 500, 1000
horizon = 1000000
thresholds.source = linear
replications = 5
"
        }
        "paper-fig4" => {
            "scenario = nonlinear_age
classes[0].fraction = 0.5
classes[0].success_prob = 0.9
classes[1].fraction = 0.5
classes[1].success_prob = 0.1
N_sweep = 50, 100
horizon = 10000000
age_function.kind = power
age_function.m = 4
thresholds.source = power
policy.index_exponent = 1
replications = 3
"
        }
        _ => return None,
    })
}

#[derive(Debug, Default)]
struct RawClass {
    fraction: Option<(usize, f64)>,
    success_prob: Option<(usize, f64)>,
}

/// Parsed but not yet defaulted or validated lines.
#[derive(Debug, Default)]
struct Raw {
    entries: BTreeMap<String, (usize, String)>,
    classes: BTreeMap<usize, RawClass>,
}

fn parse_lines(text: &str, raw: &mut Raw) -> Result<(), ConfigError> {
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::Parse {
                line: line_no,
                message: format!("expected `key = value`, got {content:?}"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if let Some(rest) = key.strip_prefix("classes[") {
            let parsed = rest.split_once("].").and_then(|(idx, field)| Some((idx.parse::<usize>().ok()?, field)));
            let Some((idx, field)) = parsed else {
                return Err(ConfigError::Parse {
                    line: line_no,
                    message: format!("malformed class key {key:?}"),
                });
            };
            let v: f64 = value.parse().map_err(|_| ConfigError::Parse {
                line: line_no,
                message: format!("{key}: not a number: {value:?}"),
            })?;
            let class = raw.classes.entry(idx).or_default();
            match field {
                "fraction" => class.fraction = Some((line_no, v)),
                "success_prob" => class.success_prob = Some((line_no, v)),
                _ => {
                    return Err(ConfigError::Parse {
                        line: line_no,
                        message: format!("unknown class field {field:?}"),
                    })
                }
            }
            continue;
        }
        if !KNOWN_KEYS.contains(&key) {
            return Err(ConfigError::Parse {
                line: line_no,
                message: format!("unknown key {key:?}"),
            });
        }
        raw.entries.insert(key.to_string(), (line_no, value.to_string()));
    }
    Ok(())
}

const KNOWN_KEYS: [&str; 23] = [
    "preset",
    "scenario",
    "num_agents",
    "N_sweep",
    "horizon",
    "seed",
    "policy.kind",
    "policy.index_exponent",
    "thresholds.source",
    "thresholds.rescaled",
    "thresholds.unscaled",
    "age_function.kind",
    "age_function.m",
    "age_function.a",
    "age_function.scale",
    "epsilon",
    "snapshot_slots",
    "replications",
    "output_dir",
    "emit",
    "initial_ages",
    "warmup",
    "reset",
];

fn parse_err(line: usize, key: &str, value: &str, what: &str) -> ConfigError {
    ConfigError::Parse {
        line,
        message: format!("{key}: expected {what}, got {value:?}"),
    }
}

fn parse_f64(line: usize, key: &str, value: &str) -> Result<f64, ConfigError> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_err(line, key, value, "a finite number"))
}

/// Accepts `1000000` as well as `1e6`.
fn parse_count(line: usize, key: &str, value: &str) -> Result<u64, ConfigError> {
    if let Ok(v) = value.parse::<u64>() {
        return Ok(v);
    }
    match value.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v < 1.8e19 => Ok(v as u64),
        _ => Err(parse_err(line, key, value, "a nonnegative integer")),
    }
}

fn parse_list<T>(
    line: usize,
    key: &str,
    value: &str,
    item: impl Fn(usize, &str, &str) -> Result<T, ConfigError>,
) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| item(line, key, s))
        .collect()
}

struct Lookup<'a>(&'a Raw);

impl Lookup<'_> {
    fn get(&self, key: &str) -> Option<(usize, &str)> {
        self.0.entries.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    fn f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.get(key).map(|(l, v)| parse_f64(l, key, v)).transpose()
    }

    fn count(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        self.get(key).map(|(l, v)| parse_count(l, key, v)).transpose()
    }
}

fn build(raw: &Raw) -> Result<ExperimentConfig, ConfigError> {
    let look = Lookup(raw);

    let mut classes = Vec::new();
    for (expected, (&idx, class)) in raw.classes.iter().enumerate() {
        if idx != expected {
            return Err(field_err(&format!("classes[{expected}]"), "class indices must be contiguous from 0"));
        }
        let f = class
            .fraction
            .ok_or_else(|| field_err(&format!("classes[{idx}].fraction"), "missing"))?;
        let p = class
            .success_prob
            .ok_or_else(|| field_err(&format!("classes[{idx}].success_prob"), "missing"))?;
        classes.push(ClassSpec::new(f.1, p.1));
    }
    if classes.is_empty() {
        return Err(field_err("classes", "at least one class is required"));
    }

    let scenario = match look.get("scenario") {
        None => None,
        Some((l, v)) => Some(Scenario::parse(v).ok_or_else(|| {
            parse_err(l, "scenario", v, "cdf_convergence, avg_aoi_vs_N or nonlinear_age")
        })?),
    };
    let n_sweep = match look.get("N_sweep") {
        None => Vec::new(),
        Some((l, v)) => parse_list(l, "N_sweep", v, parse_count)?,
    };
    let num_agents = match look.count("num_agents")? {
        Some(n) => n,
        None => *n_sweep
            .first()
            .ok_or_else(|| field_err("num_agents", "missing (and no N_sweep given)"))?,
    };
    let horizon = look.count("horizon")?.unwrap_or(1_000_000);
    let seed = look.count("seed")?.unwrap_or(0);

    let policy = match look.get("policy.kind") {
        None | Some((_, "threshold_random")) | Some((_, "threshold")) => PolicyKind::ThresholdRandom,
        Some((_, "index")) => PolicyKind::Index,
        Some((l, v)) => return Err(parse_err(l, "policy.kind", v, "threshold_random or index")),
    };
    let index_exponent = look.f64("policy.index_exponent")?.unwrap_or(1.0);

    let age_function = match look.get("age_function.kind") {
        None | Some((_, "linear")) => AgeFunction::Linear,
        Some((_, "power")) => AgeFunction::Power {
            m: look
                .f64("age_function.m")?
                .ok_or_else(|| field_err("age_function.m", "required for power"))?,
        },
        Some((_, "log")) => AgeFunction::Log {
            a: look
                .f64("age_function.a")?
                .ok_or_else(|| field_err("age_function.a", "required for log"))?,
        },
        Some((l, v)) => return Err(parse_err(l, "age_function.kind", v, "linear, power or log")),
    };
    let age_scale = match look.get("age_function.scale") {
        None | Some((_, "rescaled")) => AgeScale::Rescaled,
        Some((_, "unscaled")) => AgeScale::Unscaled,
        Some((l, v)) => return Err(parse_err(l, "age_function.scale", v, "rescaled or unscaled")),
    };

    let explicit_rescaled = look
        .get("thresholds.rescaled")
        .map(|(l, v)| parse_list(l, "thresholds.rescaled", v, parse_f64))
        .transpose()?;
    let explicit_unscaled = look
        .get("thresholds.unscaled")
        .map(|(l, v)| parse_list(l, "thresholds.unscaled", v, parse_count))
        .transpose()?;
    let thresholds = match (look.get("thresholds.source"), explicit_rescaled, explicit_unscaled) {
        (_, Some(_), Some(_)) => {
            return Err(field_err("thresholds", "give thresholds.rescaled or thresholds.unscaled, not both"))
        }
        (None | Some((_, "explicit")), Some(t), None) => ThresholdSource::ExplicitRescaled { thresholds: t },
        (None | Some((_, "explicit")), None, Some(t)) => ThresholdSource::ExplicitUnscaled { thresholds: t },
        (Some((_, "explicit")), None, None) => {
            return Err(field_err("thresholds.source", "explicit needs thresholds.rescaled or thresholds.unscaled"))
        }
        (Some((l, v)), Some(_), _) | (Some((l, v)), _, Some(_)) => {
            return Err(parse_err(l, "thresholds.source", v, "explicit when thresholds are listed"))
        }
        (None, None, None) => ThresholdSource::Auto,
        (Some((l, v)), None, None) => match v {
            "linear" => ThresholdSource::Linear,
            "power" => ThresholdSource::Power,
            "log" => ThresholdSource::Log,
            "auto" => ThresholdSource::Auto,
            _ => return Err(parse_err(l, "thresholds.source", v, "explicit, linear, power or log")),
        },
    };

    let epsilon = look.f64("epsilon")?.unwrap_or_else(|| default_epsilon(&classes));
    let snapshot_slots = match look.get("snapshot_slots") {
        None => Vec::new(),
        Some((l, v)) => parse_list(l, "snapshot_slots", v, parse_count)?,
    };
    let default_reps = if scenario == Some(Scenario::CdfConvergence) { 1 } else { 5 };
    let replications = look.count("replications")?.unwrap_or(default_reps);
    let output_dir = look
        .get("output_dir")
        .map_or_else(|| PathBuf::from("results"), |(_, v)| PathBuf::from(v));
    let emit = match look.get("emit") {
        None => vec![Emit::Csv],
        Some((l, v)) => {
            let mut e = parse_list(l, "emit", v, |l, k, s| match s {
                "csv" => Ok(Emit::Csv),
                "json" => Ok(Emit::Json),
                _ => Err(parse_err(l, k, s, "csv or json")),
            })?;
            e.sort();
            e.dedup();
            e
        }
    };
    let initial_ages = match look.get("initial_ages") {
        None | Some((_, "zero")) => InitialAgeChoice::Zero,
        Some((_, "gaussian")) => InitialAgeChoice::Gaussian,
        Some((l, v)) => return Err(parse_err(l, "initial_ages", v, "zero or gaussian")),
    };
    let warmup = look.count("warmup")?.unwrap_or(0);
    let reset = match look.get("reset") {
        None | Some((_, "zero")) => ResetMode::Zero,
        Some((_, "one")) => ResetMode::One,
        Some((l, v)) => return Err(parse_err(l, "reset", v, "zero or one")),
    };

    Ok(ExperimentConfig {
        preset: look.get("preset").map(|(_, v)| v.to_string()),
        scenario,
        classes,
        num_agents,
        n_sweep,
        horizon,
        seed,
        policy,
        index_exponent,
        thresholds,
        age_function,
        age_scale,
        epsilon,
        snapshot_slots,
        replications: u32::try_from(replications).map_err(|_| field_err("replications", "too large"))?,
        output_dir,
        emit,
        initial_ages,
        warmup,
        reset,
    })
}

/// Range checks beyond the per-line syntax.
pub fn validate(config: &ExperimentConfig) -> Result<(), ConfigError> {
    for n in config.sizes() {
        validate_network(config.network(n)).map_err(|source| ConfigError::Validation { num_agents: n, source })?;
    }
    config
        .age_function
        .validate()
        .map_err(|e| field_err("age_function", e.to_string()))?;
    if config.horizon == 0 {
        return Err(field_err("horizon", "must be positive"));
    }
    if config.warmup >= config.horizon {
        return Err(field_err("warmup", "must be below the horizon"));
    }
    if config.replications == 0 {
        return Err(field_err("replications", "must be at least 1"));
    }
    if !(config.index_exponent >= 1.0) {
        return Err(field_err("policy.index_exponent", "must be at least 1"));
    }
    if let Some(&s) = config.snapshot_slots.iter().find(|&&s| s == 0 || s > config.horizon) {
        return Err(field_err("snapshot_slots", format!("slot {s} outside [1, horizon]")));
    }
    let c = config.classes.len();
    let count = match &config.thresholds {
        ThresholdSource::ExplicitRescaled { thresholds } => Some(thresholds.len()),
        ThresholdSource::ExplicitUnscaled { thresholds } => Some(thresholds.len()),
        _ => None,
    };
    if count.is_some_and(|k| k != c) {
        return Err(field_err("thresholds", format!("expected {c} values")));
    }
    if let ThresholdSource::ExplicitRescaled { thresholds } = &config.thresholds {
        if thresholds.iter().any(|h| !(*h >= 0.0)) {
            return Err(field_err("thresholds.rescaled", "values must be nonnegative"));
        }
    }
    match (&config.thresholds, config.age_function) {
        (ThresholdSource::Power, AgeFunction::Power { .. }) | (ThresholdSource::Log, AgeFunction::Log { .. }) => {}
        (ThresholdSource::Power, _) => return Err(field_err("thresholds.source", "power needs age_function.kind = power")),
        (ThresholdSource::Log, _) => return Err(field_err("thresholds.source", "log needs age_function.kind = log")),
        _ => {}
    }
    let max_eps = config.classes.iter().map(|c| c.fraction).fold(f64::INFINITY, f64::min);
    if !(config.epsilon > 0.0 && config.epsilon < max_eps) {
        return Err(field_err("epsilon", format!("must lie in (0, {max_eps})")));
    }
    if config.scenario == Some(Scenario::CdfConvergence) && config.snapshot_slots.is_empty() {
        return Err(field_err("snapshot_slots", "cdf_convergence needs at least one snapshot"));
    }
    Ok(())
}

/// Parse config text (applying its preset first), fill defaults, validate.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut own = Raw::default();
    parse_lines(text, &mut own)?;
    let mut raw = Raw::default();
    if let Some((_, name)) = own.entries.get("preset") {
        let base = preset_text(name).ok_or_else(|| ConfigError::UnknownPreset(name.clone()))?;
        parse_lines(base, &mut raw)?;
        // A config that lists its own classes replaces the preset's entirely.
        if !own.classes.is_empty() {
            raw.classes.clear();
        }
    }
    raw.entries.append(&mut own.entries);
    for (idx, class) in own.classes {
        raw.classes.insert(idx, class);
    }
    let config = build(&raw)?;
    validate(&config)?;
    Ok(config)
}

pub fn load_preset(name: &str) -> Result<ExperimentConfig, ConfigError> {
    if preset_text(name).is_none() {
        return Err(ConfigError::UnknownPreset(name.to_string()));
    }
    parse_config(&format!("preset = {name}\n"))
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}
