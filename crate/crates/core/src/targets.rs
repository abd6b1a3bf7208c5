//! Target densities known up to a normalizing constant, exposed through
//! their score `∇ log p`.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{check_dim, Error, Result};

/// An unnormalized density on `R^d` accessed through its score.
pub trait TargetDensity: Send + Sync {
    fn dim(&self) -> usize;

    /// `∇_θ log p(θ)`.
    fn score(&self, theta: &[f64]) -> Result<Vec<f64>>;

    /// `log p(θ)` up to an additive constant, when available.
    fn log_density_unnorm(&self, _theta: &[f64]) -> Option<f64> {
        None
    }
}

impl<T: TargetDensity + ?Sized> TargetDensity for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn score(&self, theta: &[f64]) -> Result<Vec<f64>> {
        (**self).score(theta)
    }
    fn log_density_unnorm(&self, theta: &[f64]) -> Option<f64> {
        (**self).log_density_unnorm(theta)
    }
}

impl<T: TargetDensity + ?Sized> TargetDensity for std::sync::Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn score(&self, theta: &[f64]) -> Result<Vec<f64>> {
        (**self).score(theta)
    }
    fn log_density_unnorm(&self, theta: &[f64]) -> Option<f64> {
        (**self).log_density_unnorm(theta)
    }
}

fn check_input(dim: usize, theta: &[f64]) -> Result<()> {
    check_dim(dim, theta.len())?;
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite point passed to a target"));
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct Component {
    log_weight: f64,
    mean: Vec<f64>,
    /// Row-major inverse covariance.
    precision: Vec<f64>,
    /// `-½ log det Σ - (d/2) log 2π`
    log_norm: f64,
}

/// Finite mixture of full-covariance Gaussians.
#[derive(Clone)]
pub struct GaussianMixture {
    dim: usize,
    weights: Vec<f64>,
    components: Vec<Component>,
}

impl fmt::Debug for GaussianMixture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GaussianMixture")
            .field("dim", &self.dim)
            .field("weights", &self.weights)
            .field(
                "means",
                &self.components.iter().map(|c| &c.mean).collect::<Vec<_>>(),
            )
            .finish()
    }
}

impl GaussianMixture {
    /// `covariances[j]` is a row-major `d × d` symmetric positive-definite matrix.
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if means.len() != weights.len() || covariances.len() != weights.len() {
            return Err(Error::invalid(
                "mixture weights, means and covariances must have the same length",
            ));
        }
        if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid("mixture weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::invalid("mixture dimension must be at least 1"));
        }
        let mut components = Vec::with_capacity(weights.len());
        for ((&w, mean), cov) in weights.iter().zip(means).zip(covariances) {
            check_dim(dim, mean.len())?;
            check_dim(dim * dim, cov.len())?;
            if mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("mixture mean has a non-finite entry"));
            }
            if w == 0.0 {
                continue;
            }
            let (precision, log_det) = spd_inverse(dim, &cov)?;
            components.push(Component {
                log_weight: w.ln(),
                mean,
                precision,
                log_norm: -0.5 * log_det - 0.5 * dim as f64 * (2.0 * PI).ln(),
            });
        }
        Ok(Self {
            dim,
            weights,
            components,
        })
    }

    /// Mixture whose components share the covariance `variance · I`.
    pub fn isotropic(weights: Vec<f64>, means: Vec<Vec<f64>>, variance: f64) -> Result<Self> {
        let dim = means.first().map_or(0, Vec::len);
        let mut cov = vec![0.0; dim * dim];
        for l in 0..dim {
            cov[l * dim + l] = variance;
        }
        let covs = vec![cov; means.len()];
        Self::new(weights, means, covs)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Per-component `log π_j + log N(θ | μ_j, Σ_j)` and `Σ_j^{-1}(θ - μ_j)`.
    fn component_terms(&self, theta: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let d = self.dim;
        let mut logs = Vec::with_capacity(self.components.len());
        let mut pulls = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let diff: Vec<f64> = theta.iter().zip(&c.mean).map(|(t, m)| t - m).collect();
            let pull: Vec<f64> = (0..d)
                .map(|r| (0..d).map(|s| c.precision[r * d + s] * diff[s]).sum())
                .collect();
            let quad: f64 = diff.iter().zip(&pull).map(|(a, b)| a * b).sum();
            logs.push(c.log_weight + c.log_norm - 0.5 * quad);
            pulls.push(pull);
        }
        (logs, pulls)
    }
}

impl TargetDensity for GaussianMixture {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_input(self.dim, theta)?;
        let (logs, pulls) = self.component_terms(theta);
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let resp: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let norm: f64 = resp.iter().sum();
        let mut out = vec![0.0; self.dim];
        for (r, pull) in resp.iter().zip(&pulls) {
            let r = r / norm;
            for (o, p) in out.iter_mut().zip(pull) {
                *o -= r * p;
            }
        }
        Ok(out)
    }

    fn log_density_unnorm(&self, theta: &[f64]) -> Option<f64> {
        if check_input(self.dim, theta).is_err() {
            return None;
        }
        let (logs, _) = self.component_terms(theta);
        Some(log_sum_exp(&logs))
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return top;
    }
    top + values.iter().map(|v| (v - top).exp()).sum::<f64>().ln()
}

/// Inverse and log-determinant of a symmetric positive-definite matrix via Cholesky.
fn spd_inverse(d: usize, a: &[f64]) -> Result<(Vec<f64>, f64)> {
    for r in 0..d {
        if !(a[r * d + r] > 0.0) {
            return Err(Error::invalid("covariance diagonal must be positive"));
        }
        for s in 0..r {
            let (x, y) = (a[r * d + s], a[s * d + r]);
            if (x - y).abs() > 1e-12 * (1.0 + x.abs().max(y.abs())) {
                return Err(Error::invalid("covariance must be symmetric"));
            }
        }
    }
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[i * d + j];
            for k in 0..j {
                sum -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(sum > 0.0) {
                    return Err(Error::invalid("covariance is not positive definite"));
                }
                l[i * d + i] = sum.sqrt();
            } else {
                l[i * d + j] = sum / l[j * d + j];
            }
        }
    }
    let log_det = 2.0 * (0..d).map(|i| l[i * d + i].ln()).sum::<f64>();
    // solve L Lᵀ X = I column by column
    let mut inv = vec![0.0; d * d];
    for col in 0..d {
        let mut y = vec![0.0; d];
        for i in 0..d {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in 0..i {
                s -= l[i * d + k] * y[k];
            }
            y[i] = s / l[i * d + i];
        }
        for i in (0..d).rev() {
            let mut s = y[i];
            for k in i + 1..d {
                s -= l[k * d + i] * inv[k * d + col];
            }
            inv[i * d + col] = s / l[i * d + i];
        }
    }
    Ok((inv, log_det))
}

type Objective = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type Gradient = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Density `p ∝ exp(-f / T)` induced by an objective `f`.
pub struct GibbsTarget {
    dim: usize,
    temperature: f64,
    objective: Objective,
    gradient: Gradient,
}

impl fmt::Debug for GibbsTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GibbsTarget")
            .field("dim", &self.dim)
            .field("temperature", &self.temperature)
            .finish_non_exhaustive()
    }
}

impl GibbsTarget {
    pub fn new<F, G>(dim: usize, objective: F, gradient: G) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            dim,
            temperature: 1.0,
            objective: Box::new(objective),
            gradient: Box::new(gradient),
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        self.temperature = temperature;
        Ok(self)
    }

    pub fn objective(&self, theta: &[f64]) -> f64 {
        (self.objective)(theta)
    }
}

impl TargetDensity for GibbsTarget {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_input(self.dim, theta)?;
        let g = (self.gradient)(theta);
        check_dim(self.dim, g.len())?;
        Ok(g.into_iter().map(|v| -v / self.temperature).collect())
    }

    fn log_density_unnorm(&self, theta: &[f64]) -> Option<f64> {
        Some(-(self.objective)(theta) / self.temperature)
    }
}

/// Improper flat density: zero score everywhere.
#[derive(Debug, Clone, Copy)]
pub struct FlatTarget {
    pub dim: usize,
}

impl TargetDensity for FlatTarget {
    fn dim(&self) -> usize {
        self.dim
    }
    fn score(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_input(self.dim, theta)?;
        Ok(vec![0.0; self.dim])
    }
    fn log_density_unnorm(&self, _theta: &[f64]) -> Option<f64> {
        Some(0.0)
    }
}

/// The three two-component mixtures whose joint high-density region
/// surrounds the origin: weights `(0.7, 0.3)`, shared covariance `0.5 · I`.
pub fn build_three_mixture_targets() -> Vec<GaussianMixture> {
    let means = [
        [[4.0, -4.0], [0.0, 0.5]],
        [[-4.0, 4.0], [0.5, 0.0]],
        [[-3.0, -3.0], [0.0, 0.0]],
    ];
    means
        .iter()
        .map(|pair| {
            GaussianMixture::isotropic(
                vec![0.7, 0.3],
                pair.iter().map(|m| m.to_vec()).collect(),
                0.5,
            )
            .expect("fixed mixture parameters are valid")
        })
        .collect()
}
