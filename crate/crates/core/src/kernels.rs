//! Positive semi-definite kernels and the derivative quantities the Stein
//! directions and the RKHS Gram matrix need.

use crate::error::{check_dim, Error, Result};
use crate::particles::{squared_distance, ParticleSet};

/// Kernel value and derivatives at a pair `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDerivatives {
    pub value: f64,
    /// `∂k/∂x`
    pub grad_first: Vec<f64>,
    /// `∂k/∂y`
    pub grad_second: Vec<f64>,
    /// `Σ_l ∂²k / ∂x_l ∂y_l`
    pub cross_trace: f64,
}

/// A scalar p.s.d. kernel `k(x, y)` on `R^d` with first derivatives in each
/// argument and the trace of the mixed second derivative.
pub trait Kernel: Send + Sync {
    fn value(&self, x: &[f64], y: &[f64]) -> f64;

    /// Writes `∂k/∂x` and `∂k/∂y` into the buffers and returns
    /// `(k(x, y), Σ_l ∂²k/∂x_l∂y_l)`. Buffers must have the length of `x`.
    fn derivatives_into(
        &self,
        x: &[f64],
        y: &[f64],
        grad_first: &mut [f64],
        grad_second: &mut [f64],
    ) -> (f64, f64);

    /// `k(x, y) = k(y, x)` for all inputs. Lets the sampler derive the Gram
    /// matrix from the directions instead of a second pass over all pairs.
    fn is_symmetric(&self) -> bool {
        false
    }

    /// [`Kernel::derivatives_into`] when `value = k(x, y)` is already known;
    /// returns the trace. Must agree bitwise with `derivatives_into`.
    fn derivatives_given_value(&self, x: &[f64], y: &[f64], value: f64, grad_first: &mut [f64], grad_second: &mut [f64]) -> f64 {
        let _ = value;
        self.derivatives_into(x, y, grad_first, grad_second).1
    }

    fn eval_with_derivatives(&self, x: &[f64], y: &[f64]) -> Result<KernelDerivatives> {
        if x.is_empty() {
            return Err(Error::invalid("kernel inputs must have dimension >= 1"));
        }
        check_dim(x.len(), y.len())?;
        let mut grad_first = vec![0.0; x.len()];
        let mut grad_second = vec![0.0; x.len()];
        let (value, cross_trace) = self.derivatives_into(x, y, &mut grad_first, &mut grad_second);
        Ok(KernelDerivatives {
            value,
            grad_first,
            grad_second,
            cross_trace,
        })
    }
}

/// Gaussian kernel `k(x, y) = exp(-‖x - y‖² / (2σ²))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbfKernel {
    bandwidth: f64,
}

impl RbfKernel {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid(format!(
                "RBF bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(Self { bandwidth })
    }

    /// Kernel with the median-heuristic bandwidth for `particles`.
    pub fn median(particles: &ParticleSet) -> Result<Self> {
        Self::new(median_bandwidth(particles)?)
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }
}

impl Kernel for RbfKernel {
    fn is_symmetric(&self) -> bool {
        true
    }

    fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        let s2 = self.bandwidth * self.bandwidth;
        (-squared_distance(x, y) / (2.0 * s2)).exp()
    }

    fn derivatives_into(
        &self,
        x: &[f64],
        y: &[f64],
        grad_first: &mut [f64],
        grad_second: &mut [f64],
    ) -> (f64, f64) {
        let s2 = self.bandwidth * self.bandwidth;
        let k = (-squared_distance(x, y) / (2.0 * s2)).exp();
        (k, self.derivatives_given_value(x, y, k, grad_first, grad_second))
    }

    fn derivatives_given_value(&self, x: &[f64], y: &[f64], k: f64, grad_first: &mut [f64], grad_second: &mut [f64]) -> f64 {
        let s2 = self.bandwidth * self.bandwidth;
        let r2 = squared_distance(x, y);
        for l in 0..x.len() {
            let diff = x[l] - y[l];
            grad_first[l] = -diff * k / s2;
            grad_second[l] = diff * k / s2;
        }
        let d = x.len() as f64;
        k * (d / s2 - r2 / (s2 * s2))
    }
}

/// Fallback bandwidth when every pairwise distance is zero.
pub const FALLBACK_BANDWIDTH: f64 = 1.0;

/// Median heuristic: `σ² = median(‖θ_a − θ_b‖²) / (2 log(M + 1))` over
/// distinct pairs `a < b`.
///
/// For an even number of pairs the median is the mean of the two middle
/// values. Returns [`FALLBACK_BANDWIDTH`] when the median is zero.
pub fn median_bandwidth(particles: &ParticleSet) -> Result<f64> {
    let m = particles.len();
    if m < 2 {
        return Err(Error::invalid(format!(
            "median bandwidth needs at least 2 particles, got {m}"
        )));
    }
    let mut sq = Vec::with_capacity(m * (m - 1) / 2);
    for a in 0..m {
        for b in a + 1..m {
            sq.push(squared_distance(particles.row(a), particles.row(b)));
        }
    }
    sq.sort_by(f64::total_cmp);
    let n = sq.len();
    let median = if n % 2 == 1 {
        sq[n / 2]
    } else {
        0.5 * (sq[n / 2 - 1] + sq[n / 2])
    };
    if !median.is_finite() {
        return Err(Error::numerical(
            "median bandwidth",
            format!("pairwise distances are not finite (median {median})"),
        ));
    }
    if median <= 0.0 {
        return Ok(FALLBACK_BANDWIDTH);
    }
    Ok((median / (2.0 * ((m + 1) as f64).ln())).sqrt())
}
