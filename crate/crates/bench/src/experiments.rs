//! Experiment dispatch: builds targets and initial particles from a
//! [`RunConfig`], runs the sampler or the MTL trainer, and collects tables.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use mtsgd::metrics::{brier, ece, zdt3_front_report};
use mtsgd::mtl::{
    ensemble_predict, gaussian_blobs, synthetic_regression, train, Loss, MtlArchitecture, MtlEnsemble, TaskLabels,
    TrainConfig,
};
use mtsgd::sampler::{PhaseTimings, Snapshot};
use mtsgd::{
    build_three_mixture_targets, run, GaussianMixture, Method, ParticleSet, RunOptions, TargetDensity,
    TrajectoryRecord,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Experiment, MethodName, MixtureSpec, RunConfig, TaskKind};
use crate::tables::{write_atomic, Cell, Table};
use crate::{zdt3, BenchError};

/// Radius around the origin that counts as the three mixtures' common region.
pub const COMMON_REGION_RADIUS: f64 = 1.5;

/// Calibration bins used for the ECE metric.
pub const ECE_BINS: usize = 15;

#[derive(Debug, Clone, Default)]
pub struct Outputs {
    pub tables: Vec<Table>,
    /// Final particle positions, for experiments that move particles.
    pub final_particles: Option<ParticleSet>,
}

impl Outputs {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.table("metrics")?.metric(name)
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
        self.tables.iter().map(|t| write_atomic(dir, t)).collect()
    }
}

pub fn run_experiment(cfg: &RunConfig) -> Result<Outputs, BenchError> {
    cfg.validate()?;
    match cfg.experiment {
        Experiment::Sample3Mix => {
            let targets = build_three_mixture_targets();
            let init = gaussian_init(cfg, 2)?;
            let mut out = sample(cfg, &targets, init, None)?;
            let finals = out.final_particles.as_ref().expect("sampler sets final particles");
            let inside = finals
                .rows()
                .filter(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt() <= COMMON_REGION_RADIUS)
                .count();
            let fraction = inside as f64 / finals.len() as f64;
            push_metric(&mut out, "fraction_near_origin", Cell::Num(fraction));
            Ok(out)
        }
        Experiment::Zdt3 => {
            let targets = zdt3::targets(cfg.temperature).map_err(|e| BenchError::run("zdt3 targets", e))?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.step.seed);
            let init = ParticleSet::uniform(cfg.particles, zdt3::DIM, 0.0, 1.0, &mut rng)
                .map_err(|e| BenchError::run("initial particles", e))?;
            let mut out = sample(cfg, &targets, init, Some((0.0, 1.0)))?;
            let finals = out.final_particles.as_ref().expect("sampler sets final particles");
            let front = zdt3_front_report(finals).map_err(|e| BenchError::run("front metrics", e))?;
            push_metric(&mut out, "fraction_in_segments", Cell::Num(front.fraction_in_segments));
            push_metric(&mut out, "fraction_middle_segments", Cell::Num(front.fraction_middle_segments));
            push_metric(&mut out, "mean_tail_magnitude", Cell::Num(front.mean_tail_magnitude));
            Ok(out)
        }
        Experiment::Custom => {
            let targets = cfg
                .targets
                .iter()
                .map(mixture)
                .collect::<Result<Vec<_>, _>>()?;
            let init = gaussian_init(cfg, targets[0].dim())?;
            sample(cfg, &targets, init, None)
        }
        Experiment::MtlToy => mtl_toy(cfg),
        Experiment::BenchRuntime => bench_runtime(cfg),
    }
}

fn mixture(spec: &MixtureSpec) -> Result<GaussianMixture, BenchError> {
    GaussianMixture::isotropic(spec.weights.clone(), spec.means.clone(), spec.variance)
        .map_err(|e| BenchError::run("custom target", e))
}

fn gaussian_init(cfg: &RunConfig, dim: usize) -> Result<ParticleSet, BenchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.step.seed);
    ParticleSet::gaussian(cfg.particles, dim, 0.0, cfg.init_sigma(), &mut rng)
        .map_err(|e| BenchError::run("initial particles", e))
}

fn push_metric(out: &mut Outputs, name: &str, value: Cell) {
    let metrics = out
        .tables
        .iter_mut()
        .find(|t| t.name == "metrics")
        .expect("metrics table is always emitted");
    metrics.push(vec![name.into(), value]);
}

fn metrics_table() -> Table {
    Table::new("metrics", vec!["name".into(), "value".into()])
}

fn timing_table(t: &PhaseTimings) -> Table {
    let mut table = Table::new("timing", vec!["phase".into(), "milliseconds".into()]);
    let ms = |d: Duration| Cell::Num(d.as_secs_f64() * 1e3);
    table.push(vec!["scores".into(), ms(t.scores)]);
    table.push(vec!["gram".into(), ms(t.gram)]);
    table.push(vec!["qp".into(), ms(t.qp)]);
    table.push(vec!["update".into(), ms(t.update)]);
    table.push(vec!["total".into(), ms(t.total())]);
    table
}

fn weights_header(k: usize) -> Vec<String> {
    let mut h = vec!["iteration".to_string()];
    h.extend((1..=k).map(|i| format!("w_{i}")));
    h.push("qp_objective".into());
    h.push("kkt_margin".into());
    h
}

fn trajectory_table<T: TargetDensity>(snapshots: &[Snapshot], targets: &[T]) -> Table {
    let d = snapshots[0].positions.dim();
    let mut header = vec!["iteration".to_string(), "particle_id".to_string()];
    header.extend((1..=d).map(|l| format!("x_{l}")));
    header.extend((1..=targets.len()).map(|i| format!("logp_{i}")));
    let mut table = Table::new("trajectory", header);
    for s in snapshots {
        for (m, p) in s.positions.rows().enumerate() {
            let mut row: Vec<Cell> = vec![s.iteration.into(), m.into()];
            row.extend(p.iter().map(|&v| Cell::Num(v)));
            row.extend(targets.iter().map(|t| Cell::from(t.log_density_unnorm(p))));
            table.push(row);
        }
    }
    table
}

/// Runs a particle experiment and assembles trajectory, weights, metrics and
/// timing tables.
fn sample<T: TargetDensity>(
    cfg: &RunConfig,
    targets: &[T],
    init: ParticleSet,
    bounds: Option<(f64, f64)>,
) -> Result<Outputs, BenchError> {
    let ctx = format!("{} run ({})", cfg.experiment, cfg.method.name());
    let options = |method| RunOptions {
        method,
        record_every: cfg.record_every,
        bounds,
    };
    let k = targets.len();
    let mut weights = Table::new("weights", weights_header(k));
    let mut metrics = metrics_table();

    let (snapshots, timings) = match cfg.method {
        MethodName::SvgdPerTarget => {
            let (snapshots, timings, qp_solves) = svgd_per_target(cfg, targets, &init, options(Method::Mtsgd))
                .map_err(|e| BenchError::run(ctx.clone(), e))?;
            metrics.push(vec!["steps".into(), cfg.step.iterations.into()]);
            metrics.push(vec!["qp_solves".into(), qp_solves.into()]);
            metrics.push(vec!["converged_at".into(), Cell::Missing]);
            metrics.push(vec!["min_kkt_margin".into(), Cell::Missing]);
            (snapshots, timings)
        }
        method => {
            let method = match method {
                MethodName::Mtsgd => Method::Mtsgd,
                MethodName::Mgda => Method::Mgda,
                _ => Method::PerParticleQp,
            };
            let rec = run(&init, targets, &cfg.step, options(method)).map_err(|e| BenchError::run(ctx.clone(), e))?;
            for (t, (w, r)) in rec.weights.iter().zip(&rec.reports).enumerate() {
                let mut row: Vec<Cell> = vec![(t + 1).into()];
                row.extend(w.as_slice().iter().map(|&v| Cell::Num(v)));
                row.push(Cell::Num(r.objective));
                row.push(Cell::Num(r.kkt_margin));
                weights.push(row);
            }
            record_metrics(&mut metrics, &rec);
            let timings = rec.total_timings();
            (rec.snapshots, timings)
        }
    };

    let last = snapshots.last().expect("initial snapshot");
    metrics.push(vec![
        "min_pairwise_distance".into(),
        Cell::Num(last.positions.min_pairwise_distance()),
    ]);
    for (i, t) in targets.iter().enumerate() {
        let mean = mtsgd::metrics::mean_log_density(&last.positions, t).ok();
        metrics.push(vec![format!("mean_logp_{}", i + 1).as_str().into(), mean.into()]);
    }
    let final_particles = Some(last.positions.clone());
    Ok(Outputs {
        tables: vec![trajectory_table(&snapshots, targets), weights, metrics, timing_table(&timings)],
        final_particles,
    })
}

fn record_metrics(metrics: &mut Table, rec: &TrajectoryRecord) {
    metrics.push(vec!["steps".into(), rec.steps().into()]);
    metrics.push(vec!["qp_solves".into(), rec.qp_solves.into()]);
    metrics.push(vec![
        "converged_at".into(),
        rec.converged_at.map_or(Cell::Missing, Cell::from),
    ]);
    let min_margin = rec.reports.iter().map(|r| r.kkt_margin).reduce(f64::min);
    metrics.push(vec!["min_kkt_margin".into(), min_margin.into()]);
}

/// Independent SVGD runs: particle `m` follows target `m mod K` only.
/// Snapshots are merged by iteration; a group that stopped early keeps its
/// last position.
fn svgd_per_target<T: TargetDensity>(
    cfg: &RunConfig,
    targets: &[T],
    init: &ParticleSet,
    options: RunOptions,
) -> mtsgd::Result<(Vec<Snapshot>, PhaseTimings, usize)> {
    let (k, d) = (targets.len(), init.dim());
    let mut records = Vec::with_capacity(k);
    let mut timings = PhaseTimings::default();
    let mut qp_solves = 0;
    for (i, target) in targets.iter().enumerate() {
        let members: Vec<usize> = (i..init.len()).step_by(k).collect();
        if members.is_empty() {
            records.push((members, None));
            continue;
        }
        let rows: Vec<&[f64]> = members.iter().map(|&m| init.row(m)).collect();
        let group = ParticleSet::from_rows(&rows)?;
        let rec = run(&group, std::slice::from_ref(target), &cfg.step, options)?;
        let t = rec.total_timings();
        timings.scores += t.scores;
        timings.gram += t.gram;
        timings.qp += t.qp;
        timings.update += t.update;
        qp_solves += rec.qp_solves;
        records.push((members, Some(rec)));
    }

    let mut iterations: Vec<usize> = records
        .iter()
        .filter_map(|(_, r)| r.as_ref())
        .flat_map(|r| r.snapshots.iter().map(|s| s.iteration))
        .collect();
    iterations.sort_unstable();
    iterations.dedup();

    let mut merged = Vec::with_capacity(iterations.len());
    for &it in &iterations {
        let mut flat = init.as_flat().to_vec();
        for (members, rec) in &records {
            let Some(rec) = rec else { continue };
            let snap = rec
                .snapshots
                .iter()
                .rev()
                .find(|s| s.iteration <= it)
                .expect("initial snapshot has iteration 0");
            for (row, &m) in snap.positions.rows().zip(members) {
                flat[m * d..(m + 1) * d].copy_from_slice(row);
            }
        }
        let positions = ParticleSet::from_flat(d, flat)?;
        let mean_log_density = targets
            .iter()
            .map(|t| mtsgd::metrics::mean_log_density(&positions, t).ok())
            .collect();
        merged.push(Snapshot {
            iteration: it,
            positions,
            mean_log_density,
        });
    }
    Ok((merged, timings, qp_solves))
}

fn mtl_toy(cfg: &RunConfig) -> Result<Outputs, BenchError> {
    let m = &cfg.mtl;
    let seed = cfg.step.seed;
    let (data, arch) = match m.task_kind {
        TaskKind::Regression => (
            synthetic_regression(m.samples, m.input_dim, m.tasks, m.nonlinearity, m.noise, seed),
            MtlArchitecture::dense(&[m.input_dim, m.hidden, m.hidden], &vec![(1, Loss::Squared); m.tasks]),
        ),
        TaskKind::Classification => (
            gaussian_blobs(m.samples, 1.5, 0.8, seed),
            MtlArchitecture::dense(&[2, m.hidden, m.hidden], &[(2, Loss::CrossEntropy); 2]),
        ),
    };
    let data = data.map_err(|e| BenchError::run("mtl dataset", e))?;
    let arch = arch.map_err(|e| BenchError::run("mtl architecture", e))?;
    let mut ens = MtlEnsemble::init(arch, cfg.particles, seed).map_err(|e| BenchError::run("mtl ensemble", e))?;
    let train_cfg = TrainConfig {
        shared: cfg.step,
        heads: cfg.step,
        batch_size: m.batch_size,
        seed,
    };
    let start = Instant::now();
    let hist = train(&mut ens, &data, m.epochs, &train_cfg).map_err(|e| BenchError::run("mtl training", e))?;
    let elapsed = start.elapsed();
    let k = data.num_tasks();

    let mut header = vec!["epoch".to_string()];
    header.extend((1..=k).map(|j| format!("loss_{j}")));
    let mut losses = Table::new("losses", header);
    for e in 0..=m.epochs {
        let mut row: Vec<Cell> = vec![e.into()];
        row.extend(hist.losses.iter().map(|s| Cell::Num(s[e])));
        losses.push(row);
    }

    let mut weights = Table::new("weights", weights_header(k));
    for (t, w) in hist.shared_weights.iter().enumerate() {
        let mut row: Vec<Cell> = vec![(t + 1).into()];
        row.extend(w.as_slice().iter().map(|&v| Cell::Num(v)));
        row.push(Cell::Num(hist.shared_objectives[t]));
        row.push(Cell::Num(hist.shared_margins[t]));
        weights.push(row);
    }

    let mut metrics = metrics_table();
    metrics.push(vec!["shared_updates".into(), hist.shared_margins.len().into()]);
    let min_margin = hist.shared_margins.iter().copied().reduce(f64::min);
    metrics.push(vec!["min_kkt_margin".into(), min_margin.into()]);
    for (j, s) in hist.losses.iter().enumerate() {
        let (first, last) = (s[0], *s.last().expect("initial loss"));
        metrics.push(vec![format!("initial_loss_{}", j + 1).as_str().into(), Cell::Num(first)]);
        metrics.push(vec![format!("final_loss_{}", j + 1).as_str().into(), Cell::Num(last)]);
        metrics.push(vec![
            format!("loss_reduction_{}", j + 1).as_str().into(),
            Cell::Num(1.0 - last / first),
        ]);
    }
    if m.task_kind == TaskKind::Classification {
        for j in 0..k {
            let TaskLabels::Classification { classes, labels } = data.task(j) else {
                unreachable!("blob tasks are classification tasks")
            };
            let probs: Vec<f64> = (0..data.len())
                .map(|i| ensemble_predict(&ens, j, data.input(i)))
                .collect::<mtsgd::Result<Vec<_>>>()
                .map_err(|e| BenchError::run("ensemble prediction", e))?
                .concat();
            let b = brier(&probs, *classes, labels).map_err(|e| BenchError::run("brier", e))?;
            let (conf, correct): (Vec<f64>, Vec<bool>) = probs
                .chunks_exact(*classes)
                .zip(labels)
                .map(|(p, &y)| {
                    let top = (0..p.len()).fold(0, |best, c| if p[c] > p[best] { c } else { best });
                    (p[top], top == y)
                })
                .unzip();
            let e = ece(&conf, &correct, ECE_BINS).map_err(|e| BenchError::run("ece", e))?;
            metrics.push(vec![format!("brier_{}", j + 1).as_str().into(), Cell::Num(b)]);
            metrics.push(vec![format!("ece_{}", j + 1).as_str().into(), Cell::Num(e)]);
        }
    }

    let mut timing = Table::new("timing", vec!["phase".into(), "milliseconds".into()]);
    timing.push(vec!["total".into(), Cell::Num(elapsed.as_secs_f64() * 1e3)]);
    Ok(Outputs {
        tables: vec![losses, weights, metrics, timing],
        final_particles: None,
    })
}

fn bench_runtime(cfg: &RunConfig) -> Result<Outputs, BenchError> {
    let targets = build_three_mixture_targets();
    let mut runtime = Table::new(
        "runtime",
        ["method", "particles", "iterations", "qp_solves", "total_ms", "ms_per_step"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    );
    let mut metrics = metrics_table();
    for &m in &cfg.sweep {
        let sized = RunConfig { particles: m, ..cfg.clone() };
        let init = gaussian_init(&sized, 2)?;
        for (name, method) in [
            (MethodName::Mtsgd, Method::Mtsgd),
            (MethodName::PerParticleBaseline, Method::PerParticleQp),
        ] {
            let options = RunOptions {
                method,
                record_every: cfg.step.iterations.max(1),
                bounds: None,
            };
            let start = Instant::now();
            let rec = run(&init, &targets, &cfg.step, options)
                .map_err(|e| BenchError::run(format!("runtime sweep, M = {m}"), e))?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            let steps = rec.steps().max(1);
            runtime.push(vec![
                name.name().into(),
                m.into(),
                rec.steps().into(),
                rec.qp_solves.into(),
                Cell::Num(ms),
                Cell::Num(ms / steps as f64),
            ]);
            metrics.push(vec![
                format!("qp_solves_{}_{m}", name.name()).as_str().into(),
                rec.qp_solves.into(),
            ]);
        }
    }
    Ok(Outputs {
        tables: vec![runtime, metrics],
        final_particles: None,
    })
}
