//! Multi-task datasets and the synthetic generators used by the toys.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::network::Label;
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum TaskLabels {
    /// One real target per datum.
    Regression(Vec<f64>),
    Classification { classes: usize, labels: Vec<usize> },
}

impl TaskLabels {
    fn len(&self) -> usize {
        match self {
            TaskLabels::Regression(v) => v.len(),
            TaskLabels::Classification { labels, .. } => labels.len(),
        }
    }
}

/// `N` inputs with one label column per task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    input_dim: usize,
    inputs: Vec<f64>,
    tasks: Vec<TaskLabels>,
}

impl TaskDataset {
    pub fn new(input_dim: usize, inputs: Vec<f64>, tasks: Vec<TaskLabels>) -> Result<Self> {
        if input_dim == 0 || inputs.is_empty() || !inputs.len().is_multiple_of(input_dim) {
            return Err(Error::invalid("inputs must be a non-empty N × p buffer"));
        }
        if tasks.is_empty() {
            return Err(Error::invalid("dataset needs at least one task"));
        }
        let n = inputs.len() / input_dim;
        for t in &tasks {
            check_dim(n, t.len())?;
            if let TaskLabels::Classification { classes, labels } = t {
                if labels.iter().any(|l| l >= classes) {
                    return Err(Error::invalid("class label out of range"));
                }
            }
        }
        Ok(Self {
            input_dim,
            inputs,
            tasks,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.input_dim
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn task(&self, j: usize) -> &TaskLabels {
        &self.tasks[j]
    }

    pub fn label(&self, i: usize, task: usize) -> Label<'_> {
        match &self.tasks[task] {
            TaskLabels::Regression(v) => Label::Values(std::slice::from_ref(&v[i])),
            TaskLabels::Classification { labels, .. } => Label::Class(labels[i]),
        }
    }

    /// Disjoint minibatches covering every datum once, in a shuffled order.
    pub fn batches<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
    }
}

/// Regression tasks `y_j = a_jᵀx + s · tanh(b_jᵀx) + noise` with standard
/// normal inputs. `nonlinearity = 0` gives purely linear teachers.
pub fn synthetic_regression(
    n: usize,
    input_dim: usize,
    tasks: usize,
    nonlinearity: f64,
    noise: f64,
    seed: u64,
) -> Result<TaskDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (input_dim as f64).sqrt();
    let teacher: Vec<(Vec<f64>, Vec<f64>)> = (0..tasks)
        .map(|_| {
            let a = (0..input_dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
            let b = (0..input_dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
            (a, b)
        })
        .collect();
    let inputs: Vec<f64> = (0..n * input_dim).map(|_| rng.sample(StandardNormal)).collect();
    let eps = Normal::new(0.0, noise.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let labels = teacher
        .iter()
        .map(|(a, b)| {
            TaskLabels::Regression(
                inputs
                    .chunks_exact(input_dim)
                    .map(|x| {
                        let lin: f64 = a.iter().zip(x).map(|(p, q)| p * q).sum();
                        let bent: f64 = b.iter().zip(x).map(|(p, q)| p * q).sum();
                        lin + nonlinearity * bent.tanh() + eps.sample(&mut rng)
                    })
                    .collect(),
            )
        })
        .collect();
    TaskDataset::new(input_dim, inputs, labels)
}

/// Two binary tasks on 2-D inputs drawn from four Gaussian blobs centred at
/// `(±c, ±c)`: task 1 labels the sign of the first coordinate's blob, task 2
/// the sign of the second.
pub fn gaussian_blobs(n: usize, centre: f64, spread: f64, seed: u64) -> Result<TaskDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spread).map_err(|e| Error::invalid(e.to_string()))?;
    let mut inputs = Vec::with_capacity(2 * n);
    let mut first = Vec::with_capacity(n);
    let mut second = Vec::with_capacity(n);
    for _ in 0..n {
        let (a, b) = (rng.random_range(0..2usize), rng.random_range(0..2usize));
        let sx = if a == 1 { centre } else { -centre };
        let sy = if b == 1 { centre } else { -centre };
        inputs.push(sx + noise.sample(&mut rng));
        inputs.push(sy + noise.sample(&mut rng));
        first.push(a);
        second.push(b);
    }
    TaskDataset::new(
        2,
        inputs,
        vec![
            TaskLabels::Classification { classes: 2, labels: first },
            TaskLabels::Classification { classes: 2, labels: second },
        ],
    )
}
