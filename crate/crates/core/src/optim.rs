//! Update rules that turn a direction into a parameter step.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    /// `θ ← θ + ε φ`
    Plain,
    /// Adam applied to the ascent direction `φ`.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Optimizer::Adam { beta1, beta2, eps } = *self {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                return Err(Error::invalid(format!(
                    "Adam betas must lie in [0, 1), got ({beta1}, {beta2})"
                )));
            }
            if !(eps > 0.0) {
                return Err(Error::invalid("Adam epsilon must be positive"));
            }
        }
        Ok(())
    }
}

/// Per-coordinate optimizer state for one parameter block.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: Optimizer,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: i32,
}

impl OptimizerState {
    pub fn new(kind: Optimizer) -> Self {
        Self {
            kind,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn reset(&mut self) {
        self.first.clear();
        self.second.clear();
        self.steps = 0;
    }

    /// Moves `params` along `direction` with step size `step`.
    pub fn apply(&mut self, params: &mut [f64], direction: &[f64], step: f64) {
        debug_assert_eq!(params.len(), direction.len());
        match self.kind {
            Optimizer::Plain => {
                for (p, d) in params.iter_mut().zip(direction) {
                    *p += step * d;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                if self.first.len() != params.len() {
                    self.first = vec![0.0; params.len()];
                    self.second = vec![0.0; params.len()];
                    self.steps = 0;
                }
                self.steps += 1;
                let c1 = 1.0 - beta1.powi(self.steps);
                let c2 = 1.0 - beta2.powi(self.steps);
                for (l, (p, &g)) in params.iter_mut().zip(direction).enumerate() {
                    let m = beta1 * self.first[l] + (1.0 - beta1) * g;
                    let v = beta2 * self.second[l] + (1.0 - beta2) * g * g;
                    self.first[l] = m;
                    self.second[l] = v;
                    *p += step * (m / c1) / ((v / c2).sqrt() + eps);
                }
            }
        }
    }
}
