use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{check_dim, Error, Result};

/// `M` particles in `d` dimensions stored row-major.
///
/// The set is the empirical distribution `q` that the sampler transports.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    dim: usize,
    data: Vec<f64>,
}

impl ParticleSet {
    /// Builds a set from a row-major buffer of `len * dim` coordinates.
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("particle dimension must be at least 1"));
        }
        if data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "buffer of {} values does not hold whole {dim}-dimensional particles",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite coordinate in particle {}",
                pos / dim
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::invalid("particle set needs at least one particle"))?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            check_dim(dim, row.as_ref().len())?;
            data.extend_from_slice(row.as_ref());
        }
        Self::from_flat(dim, data)
    }

    /// Draws `count` particles with i.i.d. `N(mean, std^2)` coordinates.
    pub fn gaussian<R: Rng + ?Sized>(
        count: usize,
        dim: usize,
        mean: f64,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let normal = Normal::new(mean, std)
            .map_err(|e| Error::invalid(format!("bad normal parameters: {e}")))?;
        let data = (0..count * dim).map(|_| normal.sample(rng)).collect();
        Self::from_flat(dim, data)
    }

    /// Draws `count` particles uniformly from the box `[low, high]^dim`.
    pub fn uniform<R: Rng + ?Sized>(
        count: usize,
        dim: usize,
        low: f64,
        high: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let uniform = Uniform::new_inclusive(low, high)
            .map_err(|e| Error::invalid(format!("bad uniform bounds: {e}")))?;
        let data = (0..count * dim).map(|_| uniform.sample(rng)).collect();
        Self::from_flat(dim, data)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.data[m * self.dim..(m + 1) * self.dim]
    }

    pub fn row_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.data[m * self.dim..(m + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    /// Smallest Euclidean distance over all distinct pairs; `inf` for a single particle.
    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for a in 0..self.len() {
            for b in a + 1..self.len() {
                best = best.min(squared_distance(self.row(a), self.row(b)).sqrt());
            }
        }
        best
    }
}

pub(crate) fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum::<f64>()
        .max(0.0)
}
