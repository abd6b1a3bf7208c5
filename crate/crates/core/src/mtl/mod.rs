//! Multi-task learning with a shared trunk and per-task heads.
//!
//! Each ensemble member `m` holds shared parameters `α_m` and one head
//! `β_m^j` per task. Task `j` induces the posterior
//! `p(α, β^j | D) ∝ exp(−Σ_i ℓ(y_ij, x_i; α, β^j))` (flat prior). Training
//! alternates one multi-target step on the `α`'s, treating the `K` task
//! posteriors as the targets, with one SVGD step on each task's heads.

mod data;
mod network;

pub use data::{gaussian_blobs, synthetic_regression, TaskDataset, TaskLabels};
pub use network::{softmax, Activation, ForwardCache, Label, LayerSpec, Loss, Mlp};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::particles::ParticleSet;
use crate::qp::SimplexWeights;
use crate::sampler::{Sampler, StepConfig, StepOutcome};
use crate::stein::ScoreTable;

#[derive(Debug, Clone, PartialEq)]
pub struct TaskHead {
    pub net: Mlp,
    pub loss: Loss,
}

/// Trunk plus one head per task.
#[derive(Debug, Clone, PartialEq)]
pub struct MtlArchitecture {
    pub trunk: Mlp,
    pub heads: Vec<TaskHead>,
}

impl MtlArchitecture {
    pub fn new(trunk: Mlp, heads: Vec<TaskHead>) -> Result<Self> {
        if heads.is_empty() {
            return Err(Error::invalid("architecture needs at least one task head"));
        }
        for h in &heads {
            check_dim(trunk.output_dim(), h.net.input_dim())?;
            if h.loss == Loss::CrossEntropy && h.net.output_dim() < 2 {
                return Err(Error::invalid("classification heads need at least two outputs"));
            }
        }
        Ok(Self { trunk, heads })
    }

    /// ReLU trunk `sizes[0] → … → sizes[last]` and single-layer linear heads.
    pub fn dense(trunk_sizes: &[usize], heads: &[(usize, Loss)]) -> Result<Self> {
        let acts = vec![Activation::Relu; trunk_sizes.len().saturating_sub(1)];
        let trunk = Mlp::new(trunk_sizes, &acts)?;
        let width = trunk.output_dim();
        let heads = heads
            .iter()
            .map(|&(out, loss)| {
                Ok(TaskHead {
                    net: Mlp::new(&[width, out], &[Activation::Identity])?,
                    loss,
                })
            })
            .collect::<Result<_>>()?;
        Self::new(trunk, heads)
    }

    pub fn num_tasks(&self) -> usize {
        self.heads.len()
    }
}

/// One particle: `θ^j = [α, β^j]` for every task `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MtlModel {
    pub shared: Vec<f64>,
    pub heads: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MtlEnsemble {
    arch: MtlArchitecture,
    members: Vec<MtlModel>,
}

/// Loss summed over a batch and its gradients for one member and task.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss: f64,
    pub shared: Vec<f64>,
    pub head: Vec<f64>,
}

impl MtlEnsemble {
    pub fn new(arch: MtlArchitecture, members: Vec<MtlModel>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::invalid("ensemble needs at least one member"));
        }
        for m in &members {
            check_dim(arch.trunk.param_count(), m.shared.len())?;
            check_dim(arch.num_tasks(), m.heads.len())?;
            for (h, spec) in m.heads.iter().zip(&arch.heads) {
                check_dim(spec.net.param_count(), h.len())?;
            }
        }
        Ok(Self { arch, members })
    }

    /// `size` independently initialized members.
    pub fn init(arch: MtlArchitecture, size: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let members = (0..size)
            .map(|_| MtlModel {
                shared: arch.trunk.init_params(&mut rng),
                heads: arch.heads.iter().map(|h| h.net.init_params(&mut rng)).collect(),
            })
            .collect();
        Self::new(arch, members)
    }

    pub fn architecture(&self) -> &MtlArchitecture {
        &self.arch
    }

    pub fn members(&self) -> &[MtlModel] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Raw head output of one member.
    pub fn member_output(&self, member: usize, task: usize, x: &[f64]) -> Result<Vec<f64>> {
        let m = &self.members[member];
        let features = self.arch.trunk.forward(&m.shared, x)?;
        let head = self.arch.heads[task].net.forward(&m.heads[task], features.output())?;
        Ok(head.output().to_vec())
    }

    pub fn batch_gradients(
        &self,
        member: usize,
        task: usize,
        data: &TaskDataset,
        batch: &[usize],
    ) -> Result<BatchGradients> {
        let spec = &self.arch.heads[task];
        let m = &self.members[member];
        let mut out = BatchGradients {
            loss: 0.0,
            shared: vec![0.0; self.arch.trunk.param_count()],
            head: vec![0.0; spec.net.param_count()],
        };
        for &i in batch {
            let trunk = self.arch.trunk.forward(&m.shared, data.input(i))?;
            let head = spec.net.forward(&m.heads[task], trunk.output())?;
            let (loss, grad_out) = spec.loss.value_and_grad(head.output(), data.label(i, task))?;
            let grad_features = spec.net.backward(&m.heads[task], &head, &grad_out, &mut out.head);
            self.arch
                .trunk
                .backward(&m.shared, &trunk, &grad_features, &mut out.shared);
            out.loss += loss;
        }
        if !out.loss.is_finite() || out.shared.iter().chain(&out.head).any(|v| !v.is_finite()) {
            return Err(Error::numerical(
                format!("loss of member {member}, task {task}"),
                "non-finite loss or gradient",
            ));
        }
        Ok(out)
    }

    /// Mean per-datum loss of task `task` over the full dataset, averaged over members.
    pub fn task_loss(&self, task: usize, data: &TaskDataset) -> Result<f64> {
        let all: Vec<usize> = (0..data.len()).collect();
        let mut total = 0.0;
        for m in 0..self.len() {
            total += self.batch_gradients(m, task, data, &all)?.loss;
        }
        Ok(total / (self.len() * data.len()) as f64)
    }
}

fn check_batch(data: &TaskDataset, batch: &[usize]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("minibatch must be non-empty"));
    }
    if batch.iter().any(|&i| i >= data.len()) {
        return Err(Error::invalid("minibatch index out of range"));
    }
    Ok(())
}

/// Per-member `∇_α log p(α | β^j, D)`, estimated as
/// `−(N / |B|) ∇_α Σ_{i ∈ B} ℓ(y_ij, x_i; α, β^j)`.
pub fn shared_score(ens: &MtlEnsemble, task: usize, data: &TaskDataset, batch: &[usize]) -> Result<Vec<Vec<f64>>> {
    check_batch(data, batch)?;
    let scale = data.len() as f64 / batch.len() as f64;
    (0..ens.len())
        .map(|m| {
            let g = ens.batch_gradients(m, task, data, batch)?;
            Ok(g.shared.into_iter().map(|v| -scale * v).collect())
        })
        .collect()
}

/// Per-member `∇_β log p(β^j | α, D)`, with the same minibatch scaling.
pub fn head_score(ens: &MtlEnsemble, task: usize, data: &TaskDataset, batch: &[usize]) -> Result<Vec<Vec<f64>>> {
    check_batch(data, batch)?;
    let scale = data.len() as f64 / batch.len() as f64;
    (0..ens.len())
        .map(|m| {
            let g = ens.batch_gradients(m, task, data, batch)?;
            Ok(g.head.into_iter().map(|v| -scale * v).collect())
        })
        .collect()
}

/// One multi-target step on the shared parameters. Member `t`'s score for
/// task `j` is evaluated with member `t`'s own head `β_t^j`.
pub fn update_shared(
    ens: &mut MtlEnsemble,
    data: &TaskDataset,
    batch: &[usize],
    sampler: &mut Sampler,
) -> Result<StepOutcome> {
    let scores = (0..ens.arch.num_tasks())
        .map(|j| shared_score(ens, j, data, batch))
        .collect::<Result<Vec<_>>>()?;
    let table = ScoreTable::from_nested(scores)?;
    let rows: Vec<&[f64]> = ens.members.iter().map(|m| m.shared.as_slice()).collect();
    let mut particles = ParticleSet::from_rows(&rows)?;
    let kernel = sampler.config().bandwidth.kernel_for(&particles)?;
    let outcome = sampler.step_from_scores(&mut particles, &table, &kernel)?;
    for (m, row) in ens.members.iter_mut().zip(particles.rows()) {
        m.shared.copy_from_slice(row);
    }
    Ok(outcome)
}

/// One SVGD step on the heads of task `task`.
pub fn update_task_heads(
    ens: &mut MtlEnsemble,
    task: usize,
    data: &TaskDataset,
    batch: &[usize],
    sampler: &mut Sampler,
) -> Result<StepOutcome> {
    if task >= ens.arch.num_tasks() {
        return Err(Error::invalid(format!("task {task} out of range")));
    }
    let table = ScoreTable::from_nested(vec![head_score(ens, task, data, batch)?])?;
    let rows: Vec<&[f64]> = ens.members.iter().map(|m| m.heads[task].as_slice()).collect();
    let mut particles = ParticleSet::from_rows(&rows)?;
    let kernel = sampler.config().bandwidth.kernel_for(&particles)?;
    let outcome = sampler.step_from_scores(&mut particles, &table, &kernel)?;
    for (m, row) in ens.members.iter_mut().zip(particles.rows()) {
        m.heads[task].copy_from_slice(row);
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Step rule for the shared parameters.
    pub shared: StepConfig,
    /// Step rule for every task's heads.
    pub heads: StepConfig,
    pub batch_size: usize,
    /// Seeds the minibatch order.
    pub seed: u64,
}

/// Events emitted in execution order by [`train_observed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainEvent {
    Shared { epoch: usize, iter: usize },
    Head { epoch: usize, iter: usize, task: usize },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    /// `losses[j][e]`: mean task-`j` loss after `e` epochs (entry 0 is the
    /// initial ensemble).
    pub losses: Vec<Vec<f64>>,
    /// KKT margin of every shared update.
    pub shared_margins: Vec<f64>,
    /// Weights and QP objective of every shared update.
    pub shared_weights: Vec<SimplexWeights>,
    pub shared_objectives: Vec<f64>,
}

pub fn train(ens: &mut MtlEnsemble, data: &TaskDataset, epochs: usize, cfg: &TrainConfig) -> Result<TrainHistory> {
    train_observed(ens, data, epochs, cfg, |_| {})
}

/// Alternating training: per minibatch, one shared update then one head
/// update per task. Optimizer state is created fresh for the run.
pub fn train_observed<F: FnMut(TrainEvent)>(
    ens: &mut MtlEnsemble,
    data: &TaskDataset,
    epochs: usize,
    cfg: &TrainConfig,
    mut observe: F,
) -> Result<TrainHistory> {
    check_dim(ens.arch.num_tasks(), data.num_tasks())?;
    check_dim(ens.arch.trunk.input_dim(), data.input_dim())?;
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let k = ens.arch.num_tasks();
    let mut shared = Sampler::new(cfg.shared)?;
    let mut heads = (0..k)
        .map(|_| Sampler::new(cfg.heads))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = TrainHistory {
        losses: (0..k)
            .map(|j| ens.task_loss(j, data).map(|l| vec![l]))
            .collect::<Result<_>>()?,
        shared_margins: Vec::new(),
        shared_weights: Vec::new(),
        shared_objectives: Vec::new(),
    };
    for epoch in 0..epochs {
        for (iter, batch) in data.batches(cfg.batch_size, &mut rng).iter().enumerate() {
            observe(TrainEvent::Shared { epoch, iter });
            let outcome = update_shared(ens, data, batch, &mut shared)?;
            history.shared_margins.push(outcome.report.kkt_margin);
            history.shared_objectives.push(outcome.report.objective);
            history.shared_weights.push(outcome.weights);
            for (task, sampler) in heads.iter_mut().enumerate() {
                observe(TrainEvent::Head { epoch, iter, task });
                update_task_heads(ens, task, data, batch, sampler)?;
            }
        }
        for (j, series) in history.losses.iter_mut().enumerate() {
            series.push(ens.task_loss(j, data)?);
        }
    }
    Ok(history)
}

/// Ensemble prediction for task `task`: mean output for regression heads,
/// mean softmax probabilities for classification heads.
pub fn ensemble_predict(ens: &MtlEnsemble, task: usize, x: &[f64]) -> Result<Vec<f64>> {
    if task >= ens.arch.num_tasks() {
        return Err(Error::invalid(format!("task {task} out of range")));
    }
    let classify = ens.arch.heads[task].loss == Loss::CrossEntropy;
    let mut mean = vec![0.0; ens.arch.heads[task].net.output_dim()];
    for m in 0..ens.len() {
        let out = ens.member_output(m, task, x)?;
        let out = if classify { softmax(&out) } else { out };
        for (acc, v) in mean.iter_mut().zip(out) {
            *acc += v;
        }
    }
    let n = ens.len() as f64;
    Ok(mean.into_iter().map(|v| v / n).collect())
}
