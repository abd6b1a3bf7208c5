//! The multi-target sampling loop.
//!
//! Each step evaluates the scores of all targets, builds the per-target
//! Stein directions and their Gram matrix `U`, solves one simplex QP for the
//! weights `w*`, and moves every particle along `Σ_i w*_i φ_i`. With one
//! target this is SVGD; with one particle and a wide kernel it is MGDA.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::kernels::{median_bandwidth, Kernel, RbfKernel, FALLBACK_BANDWIDTH};
use crate::optim::{Optimizer, OptimizerState};
use crate::particles::ParticleSet;
use crate::qp::{combine_directions, solve_simplex_qp, QpReport, QpSettings, SimplexWeights};
use crate::stein::{directions_and_gram, evaluate_scores, ScoreTable};
use crate::targets::TargetDensity;

/// QP objective at or below which no weighting separates the directions
/// from zero; the sampler stops instead of stepping.
pub const CONVERGENCE_OBJECTIVE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthMode {
    /// Median heuristic, recomputed before every step.
    Median,
    Fixed(f64),
}

impl BandwidthMode {
    pub fn kernel_for(&self, particles: &ParticleSet) -> Result<RbfKernel> {
        match *self {
            BandwidthMode::Fixed(sigma) => RbfKernel::new(sigma),
            BandwidthMode::Median if particles.len() < 2 => RbfKernel::new(FALLBACK_BANDWIDTH),
            BandwidthMode::Median => RbfKernel::new(median_bandwidth(particles)?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub step_size: f64,
    pub optimizer: Optimizer,
    pub iterations: usize,
    pub bandwidth: BandwidthMode,
    pub seed: u64,
    pub qp: QpSettings,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            step_size: 3e-2,
            optimizer: Optimizer::adam(),
            iterations: 1000,
            bandwidth: BandwidthMode::Median,
            seed: 0,
            qp: QpSettings::default(),
        }
    }
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if let BandwidthMode::Fixed(s) = self.bandwidth {
            RbfKernel::new(s)?;
        }
        self.optimizer.validate()?;
        self.qp.validate()
    }
}

/// Wall-clock time spent in each phase of a step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimings {
    pub scores: Duration,
    pub gram: Duration,
    pub qp: Duration,
    pub update: Duration,
}

impl PhaseTimings {
    pub fn total(&self) -> Duration {
        self.scores + self.gram + self.qp + self.update
    }

    fn accumulate(&mut self, other: &PhaseTimings) {
        self.scores += other.scores;
        self.gram += other.gram;
        self.qp += other.qp;
        self.update += other.update;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub weights: SimplexWeights,
    pub report: QpReport,
    /// The step was skipped because the QP objective vanished.
    pub converged: bool,
    pub qp_solves: usize,
    pub timings: PhaseTimings,
}

/// Which update rule drives the particles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// One QP over the RKHS Gram matrix per step.
    Mtsgd,
    /// One gradient-Gram QP per particle plus the SVGD repulsive term.
    PerParticleQp,
    /// One gradient-Gram QP per particle, no kernel interaction.
    Mgda,
}

/// Stateful stepper: owns the optimizer moments for the particle block.
#[derive(Debug, Clone)]
pub struct Sampler {
    cfg: StepConfig,
    state: OptimizerState,
    bounds: Option<(f64, f64)>,
}

impl Sampler {
    pub fn new(cfg: StepConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            state: OptimizerState::new(cfg.optimizer),
            bounds: None,
        })
    }

    /// Projects every coordinate onto `[low, high]` after each update.
    pub fn with_bounds(mut self, low: f64, high: f64) -> Result<Self> {
        if !(low <= high) {
            return Err(Error::invalid(format!("empty box [{low}, {high}]")));
        }
        self.bounds = Some((low, high));
        Ok(self)
    }

    fn project(&self, particles: &mut ParticleSet) {
        if let Some((low, high)) = self.bounds {
            for v in particles.as_flat_mut() {
                *v = v.clamp(low, high);
            }
        }
    }

    pub fn config(&self) -> &StepConfig {
        &self.cfg
    }

    pub fn reset(&mut self) {
        self.state.reset();
    }

    /// One step with the kernel chosen by the configured bandwidth mode.
    pub fn step<T: TargetDensity>(&mut self, particles: &mut ParticleSet, targets: &[T]) -> Result<StepOutcome> {
        let kernel = self.cfg.bandwidth.kernel_for(particles)?;
        self.step_with_kernel(particles, targets, &kernel)
    }

    pub fn step_with_kernel<T: TargetDensity, K: Kernel>(
        &mut self,
        particles: &mut ParticleSet,
        targets: &[T],
        kernel: &K,
    ) -> Result<StepOutcome> {
        let start = Instant::now();
        let scores = evaluate_scores(particles, targets)?;
        let score_time = start.elapsed();
        let mut outcome = self.step_from_scores(particles, &scores, kernel)?;
        outcome.timings.scores = score_time;
        Ok(outcome)
    }

    /// One step from scores the caller already evaluated at `particles`.
    pub fn step_from_scores<K: Kernel>(
        &mut self,
        particles: &mut ParticleSet,
        scores: &ScoreTable,
        kernel: &K,
    ) -> Result<StepOutcome> {
        let mut timings = PhaseTimings::default();

        let t = Instant::now();
        let (field, gram) = directions_and_gram(particles, scores, kernel)?;
        timings.gram = t.elapsed();

        let t = Instant::now();
        let (weights, report) = solve_simplex_qp(&gram, self.cfg.qp.tol, self.cfg.qp.max_iters)?;
        timings.qp = t.elapsed();

        if report.objective <= CONVERGENCE_OBJECTIVE {
            return Ok(StepOutcome {
                weights,
                report,
                converged: true,
                qp_solves: 1,
                timings,
            });
        }

        let t = Instant::now();
        let direction = combine_directions(&field, &weights)?;
        self.state
            .apply(particles.as_flat_mut(), &direction, self.cfg.step_size);
        self.project(particles);
        check_positions(particles)?;
        timings.update = t.elapsed();

        Ok(StepOutcome {
            weights,
            report,
            converged: false,
            qp_solves: 1,
            timings,
        })
    }

    /// Per-particle comparator: every particle solves its own `K × K` QP on
    /// the Gram matrix of its raw scores. With `repulsion` the SVGD term
    /// `(1/M) Σ_j ∇_{θ_j} k(θ_j, θ_m)` is added.
    ///
    /// The returned weights are the per-particle weights averaged over
    /// particles and the report is the one with the smallest KKT margin.
    pub fn per_particle_step<T: TargetDensity, K: Kernel>(
        &mut self,
        particles: &mut ParticleSet,
        targets: &[T],
        kernel: &K,
        repulsion: bool,
    ) -> Result<StepOutcome> {
        let mut timings = PhaseTimings::default();
        let t = Instant::now();
        let scores = evaluate_scores(particles, targets)?;
        timings.scores = t.elapsed();

        let (n_t, n_p, d) = (scores.num_targets(), particles.len(), particles.dim());
        let mut direction = vec![0.0; n_p * d];
        let mut mean_w = vec![0.0; n_t];
        let mut worst: Option<QpReport> = None;
        let mut all_converged = true;
        for m in 0..n_p {
            let t = Instant::now();
            let mut g = vec![0.0; n_t * n_t];
            for i in 0..n_t {
                for j in 0..n_t {
                    g[i * n_t + j] = scores
                        .get(i, m)
                        .iter()
                        .zip(scores.get(j, m))
                        .map(|(a, b)| a * b)
                        .sum();
                }
            }
            let gram = crate::stein::GramMatrix::from_row_major(n_t, g)?;
            timings.gram += t.elapsed();

            let t = Instant::now();
            let (w, report) = solve_simplex_qp(&gram, self.cfg.qp.tol, self.cfg.qp.max_iters)?;
            timings.qp += t.elapsed();

            all_converged &= report.objective <= CONVERGENCE_OBJECTIVE;
            if worst.is_none_or(|r| report.kkt_margin < r.kkt_margin) {
                worst = Some(report);
            }
            let row = &mut direction[m * d..(m + 1) * d];
            for (i, &wi) in w.as_slice().iter().enumerate() {
                mean_w[i] += wi / n_p as f64;
                for (o, s) in row.iter_mut().zip(scores.get(i, m)) {
                    *o += wi * s;
                }
            }
        }

        let t = Instant::now();
        if repulsion && n_p > 1 {
            let mut gf = vec![0.0; d];
            let mut gs = vec![0.0; d];
            for m in 0..n_p {
                let mut rep = vec![0.0; d];
                for j in 0..n_p {
                    kernel.derivatives_into(particles.row(j), particles.row(m), &mut gf, &mut gs);
                    for l in 0..d {
                        rep[l] += gf[l];
                    }
                }
                for l in 0..d {
                    direction[m * d + l] += rep[l] / n_p as f64;
                }
            }
        }
        let total: f64 = mean_w.iter().sum();
        let weights = SimplexWeights::new(mean_w.iter().map(|w| w / total).collect())?;
        let report = worst.expect("at least one particle");
        let converged = all_converged && !repulsion;
        if !converged {
            self.state
                .apply(particles.as_flat_mut(), &direction, self.cfg.step_size);
            self.project(particles);
            check_positions(particles)?;
        }
        timings.update += t.elapsed();

        Ok(StepOutcome {
            weights,
            report,
            converged,
            qp_solves: n_p,
            timings,
        })
    }
}

fn check_positions(particles: &ParticleSet) -> Result<()> {
    if let Some(pos) = particles.as_flat().iter().position(|v| !v.is_finite()) {
        return Err(Error::numerical(
            "particle update",
            format!("particle {} left the finite range", pos / particles.dim()),
        ));
    }
    Ok(())
}

/// A single step from a fresh optimizer state.
pub fn mtsgd_step<T: TargetDensity, K: Kernel>(
    particles: &ParticleSet,
    targets: &[T],
    kernel: &K,
    cfg: &StepConfig,
) -> Result<(ParticleSet, SimplexWeights, QpReport)> {
    let mut next = particles.clone();
    let outcome = Sampler::new(*cfg)?.step_with_kernel(&mut next, targets, kernel)?;
    Ok((next, outcome.weights, outcome.report))
}

/// A single per-particle-QP step; also returns the number of QP solves.
pub fn per_particle_qp_baseline_step<T: TargetDensity, K: Kernel>(
    particles: &ParticleSet,
    targets: &[T],
    kernel: &K,
    cfg: &StepConfig,
) -> Result<(ParticleSet, usize)> {
    let mut next = particles.clone();
    let outcome = Sampler::new(*cfg)?.per_particle_step(&mut next, targets, kernel, true)?;
    Ok((next, outcome.qp_solves))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub method: Method,
    /// Keep a position snapshot every this many steps (the initial and the
    /// final state are always kept).
    pub record_every: usize,
    /// Box every coordinate is projected onto after each update.
    pub bounds: Option<(f64, f64)>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            method: Method::Mtsgd,
            record_every: 1,
            bounds: None,
        }
    }
}

/// Particle positions after a given number of completed steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub iteration: usize,
    pub positions: ParticleSet,
    /// Mean unnormalized log-density per target, when the target has one.
    pub mean_log_density: Vec<Option<f64>>,
}

/// Everything recorded during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    /// Snapshot 0 is the initial state.
    pub snapshots: Vec<Snapshot>,
    /// One entry per executed step.
    pub weights: Vec<SimplexWeights>,
    pub reports: Vec<QpReport>,
    pub timings: Vec<PhaseTimings>,
    pub qp_solves: usize,
    /// Step at which the QP objective vanished, if it did.
    pub converged_at: Option<usize>,
}

impl TrajectoryRecord {
    pub fn final_positions(&self) -> &ParticleSet {
        &self.snapshots.last().expect("initial snapshot").positions
    }

    pub fn steps(&self) -> usize {
        self.weights.len()
    }

    pub fn total_timings(&self) -> PhaseTimings {
        let mut total = PhaseTimings::default();
        for t in &self.timings {
            total.accumulate(t);
        }
        total
    }
}

fn snapshot<T: TargetDensity>(iteration: usize, particles: &ParticleSet, targets: &[T]) -> Snapshot {
    Snapshot {
        iteration,
        positions: particles.clone(),
        mean_log_density: targets
            .iter()
            .map(|t| crate::metrics::mean_log_density(particles, t).ok())
            .collect(),
    }
}

/// Runs `cfg.iterations` steps, stopping early if the QP objective vanishes.
pub fn run<T: TargetDensity>(
    particles0: &ParticleSet,
    targets: &[T],
    cfg: &StepConfig,
    options: RunOptions,
) -> Result<TrajectoryRecord> {
    if targets.is_empty() {
        return Err(Error::invalid("at least one target is required"));
    }
    let record_every = options.record_every.max(1);
    let mut sampler = Sampler::new(*cfg)?;
    if let Some((low, high)) = options.bounds {
        sampler = sampler.with_bounds(low, high)?;
    }
    let mut particles = particles0.clone();
    let mut record = TrajectoryRecord {
        snapshots: vec![snapshot(0, &particles, targets)],
        weights: Vec::with_capacity(cfg.iterations),
        reports: Vec::with_capacity(cfg.iterations),
        timings: Vec::with_capacity(cfg.iterations),
        qp_solves: 0,
        converged_at: None,
    };
    for t in 1..=cfg.iterations {
        let kernel = cfg.bandwidth.kernel_for(&particles)?;
        let outcome = match options.method {
            Method::Mtsgd => sampler.step_with_kernel(&mut particles, targets, &kernel)?,
            Method::PerParticleQp => sampler.per_particle_step(&mut particles, targets, &kernel, true)?,
            Method::Mgda => sampler.per_particle_step(&mut particles, targets, &kernel, false)?,
        };
        record.qp_solves += outcome.qp_solves;
        record.weights.push(outcome.weights);
        record.reports.push(outcome.report);
        record.timings.push(outcome.timings);
        if outcome.converged {
            record.converged_at = Some(t);
            if record.snapshots.last().map(|s| s.iteration) != Some(t - 1) {
                record.snapshots.push(snapshot(t - 1, &particles, targets));
            }
            break;
        }
        if t % record_every == 0 || t == cfg.iterations {
            record.snapshots.push(snapshot(t, &particles, targets));
        }
    }
    Ok(record)
}
