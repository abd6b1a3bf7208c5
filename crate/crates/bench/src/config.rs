//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! `experiment` is required and selects the defaults every other key
//! overrides. Unknown keys and repeated keys (other than `target`) are errors.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `experiment` | — | `sample3mix`, `zdt3`, `mtl_toy`, `bench_runtime`, `custom` |
//! | `method` | `mtsgd` | `mtsgd`, `svgd_per_target`, `mgda`, `per_particle_baseline` |
//! | `particles` | 50 | particle count `M` (ensemble size for `mtl_toy`: 5) |
//! | `iterations` | 1000 (`zdt3`: 10000, `bench_runtime`: 20) | steps `L` |
//! | `lr` / `step_size` | 3e-2 (`zdt3`: 5e-4, `mtl_toy`: 3e-3) | step size |
//! | `optimizer` | `adam` | `adam` or `plain` |
//! | `beta1`, `beta2`, `adam_eps` | 0.9, 0.999, 1e-8 | Adam constants |
//! | `bandwidth` | `median` | `median` or a fixed positive σ |
//! | `seed` | 0 | RNG seed for initialization and minibatches |
//! | `out` | `out/<experiment>` | output directory |
//! | `init_std` | 5 | spread of the Gaussian initialization |
//! | `init_interpretation` | `std` | whether `init_std` is a standard deviation (`std`) or a variance (`variance`) |
//! | `temperature` | 1 | Gibbs temperature of the ZDT3 targets |
//! | `qp_tol`, `qp_max_iters` | 1e-9, 500 | simplex QP stopping rule |
//! | `record_every` | 1 (`zdt3`: 100) | trajectory snapshot stride |
//! | `target` | — | `custom` only, repeatable: `variance \| w μ_1 … μ_d \| w μ_1 … μ_d …` |
//! | `epochs` | 200 | `mtl_toy` epochs |
//! | `batch_size` | 64 | `mtl_toy` minibatch size |
//! | `samples` | 512 | `mtl_toy` dataset size |
//! | `input_dim` | 8 | `mtl_toy` regression input width |
//! | `hidden` | 32 | `mtl_toy` trunk width |
//! | `tasks` | 2 | `mtl_toy` regression task count |
//! | `task_kind` | `regression` | `mtl_toy`: `regression` or `classification` (Gaussian blobs) |
//! | `noise`, `nonlinearity` | 0.1, 0 | `mtl_toy` regression teacher |
//! | `sweep` | `5,10,25,50,100` | `bench_runtime` particle counts |

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use mtsgd::{BandwidthMode, Optimizer, StepConfig};

use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Sample3Mix,
    Zdt3,
    MtlToy,
    BenchRuntime,
    Custom,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::Sample3Mix,
        Experiment::Zdt3,
        Experiment::MtlToy,
        Experiment::BenchRuntime,
        Experiment::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Sample3Mix => "sample3mix",
            Experiment::Zdt3 => "zdt3",
            Experiment::MtlToy => "mtl_toy",
            Experiment::BenchRuntime => "bench_runtime",
            Experiment::Custom => "custom",
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
            .ok_or_else(|| format!("unknown experiment '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodName {
    Mtsgd,
    /// Plain SVGD: particle `m` samples target `m mod K` on its own.
    SvgdPerTarget,
    Mgda,
    PerParticleBaseline,
}

impl MethodName {
    pub fn name(self) -> &'static str {
        match self {
            MethodName::Mtsgd => "mtsgd",
            MethodName::SvgdPerTarget => "svgd_per_target",
            MethodName::Mgda => "mgda",
            MethodName::PerParticleBaseline => "per_particle_baseline",
        }
    }
}

impl FromStr for MethodName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        [
            MethodName::Mtsgd,
            MethodName::SvgdPerTarget,
            MethodName::Mgda,
            MethodName::PerParticleBaseline,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| format!("unknown method '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitInterpretation {
    StdDev,
    Variance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Regression,
    Classification,
}

/// Isotropic Gaussian mixture given on a `target` line.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub variance: f64,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MtlSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub samples: usize,
    pub input_dim: usize,
    pub hidden: usize,
    pub tasks: usize,
    pub task_kind: TaskKind,
    pub noise: f64,
    pub nonlinearity: f64,
}

impl Default for MtlSettings {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            samples: 512,
            input_dim: 8,
            hidden: 32,
            tasks: 2,
            task_kind: TaskKind::Regression,
            noise: 0.1,
            nonlinearity: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub method: MethodName,
    pub particles: usize,
    /// Step size, iteration count, optimizer, bandwidth, seed and QP settings.
    pub step: StepConfig,
    pub out: PathBuf,
    pub init_std: f64,
    pub init_interpretation: InitInterpretation,
    pub temperature: f64,
    pub record_every: usize,
    pub targets: Vec<MixtureSpec>,
    pub mtl: MtlSettings,
    pub sweep: Vec<usize>,
}

impl RunConfig {
    /// Documented defaults for `experiment`.
    pub fn defaults(experiment: Experiment) -> Self {
        let mut cfg = Self {
            experiment,
            method: MethodName::Mtsgd,
            particles: 50,
            step: StepConfig::default(),
            out: PathBuf::from("out").join(experiment.name()),
            init_std: 5.0,
            init_interpretation: InitInterpretation::StdDev,
            temperature: 1.0,
            record_every: 1,
            targets: Vec::new(),
            mtl: MtlSettings::default(),
            sweep: vec![5, 10, 25, 50, 100],
        };
        match experiment {
            Experiment::Zdt3 => {
                cfg.step.step_size = 5e-4;
                cfg.step.iterations = 10_000;
                cfg.record_every = 100;
            }
            Experiment::MtlToy => {
                cfg.particles = 5;
                cfg.step.step_size = 3e-3;
            }
            Experiment::BenchRuntime => cfg.step.iterations = 20,
            Experiment::Sample3Mix | Experiment::Custom => {}
        }
        cfg
    }

    /// Standard deviation of the Gaussian initialization.
    pub fn init_sigma(&self) -> f64 {
        match self.init_interpretation {
            InitInterpretation::StdDev => self.init_std,
            InitInterpretation::Variance => self.init_std.sqrt(),
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |msg: String| Err(BenchError::config(None, msg));
        self.step.validate().or_else(|e| bad(e.to_string()))?;
        if self.particles == 0 {
            return bad("particles must be positive".into());
        }
        if self.record_every == 0 {
            return bad("record_every must be positive".into());
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return bad(format!("init_std must be positive, got {}", self.init_std));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        match self.experiment {
            Experiment::Custom if self.targets.is_empty() => {
                return bad("custom experiment needs at least one 'target' line".into());
            }
            Experiment::Custom => {
                let dim = self.targets[0].means[0].len();
                if self.targets.iter().any(|t| t.means.iter().any(|m| m.len() != dim)) {
                    return bad("all target components must share one dimension".into());
                }
            }
            Experiment::MtlToy => {
                if self.method != MethodName::Mtsgd {
                    return bad("mtl_toy only supports method = mtsgd".into());
                }
                let m = &self.mtl;
                if m.batch_size == 0 || m.samples == 0 || m.input_dim == 0 || m.hidden == 0 || m.tasks == 0 {
                    return bad("mtl sizes must be positive".into());
                }
            }
            Experiment::BenchRuntime => {
                if self.sweep.is_empty() || self.sweep.contains(&0) {
                    return bad("sweep must list positive particle counts".into());
                }
            }
            _ => {}
        }
        if !self.targets.is_empty() && self.experiment != Experiment::Custom {
            return bad("'target' lines are only valid for the custom experiment".into());
        }
        Ok(())
    }
}

const KEYS: &[&str] = &[
    "experiment",
    "method",
    "particles",
    "iterations",
    "lr",
    "step_size",
    "optimizer",
    "beta1",
    "beta2",
    "adam_eps",
    "bandwidth",
    "seed",
    "out",
    "init_std",
    "init_interpretation",
    "temperature",
    "qp_tol",
    "qp_max_iters",
    "record_every",
    "target",
    "epochs",
    "batch_size",
    "samples",
    "input_dim",
    "hidden",
    "tasks",
    "task_kind",
    "noise",
    "nonlinearity",
    "sweep",
];

fn number<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, BenchError> {
    value
        .parse()
        .map_err(|_| BenchError::config(Some(line), format!("cannot parse '{value}' for '{key}'")))
}

fn parse_target(line: usize, value: &str) -> Result<MixtureSpec, BenchError> {
    let err = |msg: &str| BenchError::config(Some(line), format!("target: {msg}"));
    let mut parts = value.split('|').map(str::trim);
    let variance: f64 = parts
        .next()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| err("missing variance"))?
        .parse()
        .map_err(|_| err("variance is not a number"))?;
    let (mut weights, mut means) = (Vec::new(), Vec::new());
    for comp in parts {
        let nums = comp
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| err("component is not a list of numbers"))?;
        if nums.len() < 2 {
            return Err(err("component needs a weight and a mean"));
        }
        weights.push(nums[0]);
        means.push(nums[1..].to_vec());
    }
    if means.is_empty() {
        return Err(err("needs at least one component"));
    }
    if means.iter().any(|m| m.len() != means[0].len()) {
        return Err(err("component means differ in dimension"));
    }
    if !(variance > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(err("variance must be positive and weights non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(err("weights sum to zero"));
    }
    Ok(MixtureSpec {
        variance,
        weights: weights.iter().map(|w| w / total).collect(),
        means,
    })
}

/// Parses and validates a configuration file.
pub fn parse_config(text: &str) -> Result<RunConfig, BenchError> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| BenchError::config(Some(line), format!("expected 'key = value', got '{body}'")))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(BenchError::config(Some(line), format!("unknown key '{key}'")));
        }
        let canonical = if key == "step_size" { "lr" } else { key };
        if canonical != "target" && !seen.insert(canonical) {
            return Err(BenchError::config(Some(line), format!("duplicate key '{key}'")));
        }
        entries.push((line, key, value));
    }

    let (line, _, name) = entries
        .iter()
        .find(|(_, k, _)| *k == "experiment")
        .ok_or_else(|| BenchError::config(None, "experiment missing"))?;
    let experiment: Experiment = name.parse().map_err(|e| BenchError::config(Some(*line), e))?;
    let mut cfg = RunConfig::defaults(experiment);
    let (mut beta1, mut beta2, mut adam_eps) = (None, None, None);
    let mut use_adam = matches!(cfg.step.optimizer, Optimizer::Adam { .. });

    for &(line, key, value) in &entries {
        match key {
            "experiment" => {}
            "method" => cfg.method = value.parse().map_err(|e| BenchError::config(Some(line), e))?,
            "particles" => cfg.particles = number(line, key, value)?,
            "iterations" => cfg.step.iterations = number(line, key, value)?,
            "lr" | "step_size" => cfg.step.step_size = number(line, key, value)?,
            "optimizer" => {
                use_adam = match value {
                    "adam" => true,
                    "plain" => false,
                    _ => return Err(BenchError::config(Some(line), format!("unknown optimizer '{value}'"))),
                }
            }
            "beta1" => beta1 = Some(number(line, key, value)?),
            "beta2" => beta2 = Some(number(line, key, value)?),
            "adam_eps" => adam_eps = Some(number(line, key, value)?),
            "bandwidth" => {
                cfg.step.bandwidth = if value == "median" {
                    BandwidthMode::Median
                } else {
                    BandwidthMode::Fixed(number(line, key, value)?)
                }
            }
            "seed" => cfg.step.seed = number(line, key, value)?,
            "out" => cfg.out = PathBuf::from(value),
            "init_std" => cfg.init_std = number(line, key, value)?,
            "init_interpretation" => {
                cfg.init_interpretation = match value {
                    "std" => InitInterpretation::StdDev,
                    "variance" => InitInterpretation::Variance,
                    _ => return Err(BenchError::config(Some(line), format!("expected 'std' or 'variance', got '{value}'"))),
                }
            }
            "temperature" => cfg.temperature = number(line, key, value)?,
            "qp_tol" => cfg.step.qp.tol = number(line, key, value)?,
            "qp_max_iters" => cfg.step.qp.max_iters = number(line, key, value)?,
            "record_every" => cfg.record_every = number(line, key, value)?,
            "target" => cfg.targets.push(parse_target(line, value)?),
            "epochs" => cfg.mtl.epochs = number(line, key, value)?,
            "batch_size" => cfg.mtl.batch_size = number(line, key, value)?,
            "samples" => cfg.mtl.samples = number(line, key, value)?,
            "input_dim" => cfg.mtl.input_dim = number(line, key, value)?,
            "hidden" => cfg.mtl.hidden = number(line, key, value)?,
            "tasks" => cfg.mtl.tasks = number(line, key, value)?,
            "task_kind" => {
                cfg.mtl.task_kind = match value {
                    "regression" => TaskKind::Regression,
                    "classification" => TaskKind::Classification,
                    _ => return Err(BenchError::config(Some(line), format!("unknown task_kind '{value}'"))),
                }
            }
            "noise" => cfg.mtl.noise = number(line, key, value)?,
            "nonlinearity" => cfg.mtl.nonlinearity = number(line, key, value)?,
            "sweep" => {
                cfg.sweep = value
                    .split(',')
                    .map(|v| number(line, key, v.trim()))
                    .collect::<Result<_, _>>()?
            }
            _ => unreachable!("key list checked above"),
        }
    }

    let defaults = Optimizer::adam();
    let Optimizer::Adam { beta1: b1, beta2: b2, eps } = defaults else {
        unreachable!("adam() builds the Adam variant")
    };
    if use_adam {
        cfg.step.optimizer = Optimizer::Adam {
            beta1: beta1.unwrap_or(b1),
            beta2: beta2.unwrap_or(b2),
            eps: adam_eps.unwrap_or(eps),
        };
    } else {
        if beta1.or(beta2).or(adam_eps).is_some() {
            return Err(BenchError::config(None, "Adam constants given with optimizer = plain"));
        }
        cfg.step.optimizer = Optimizer::Plain;
    }
    cfg.validate()?;
    Ok(cfg)
}
