//! Per-target Stein directions and the RKHS Gram matrix of those directions.
//!
//! With particles `θ_1..θ_M` and scores `g_i = ∇ log p_i`, the optimal
//! direction toward target `i` evaluated at particle `m` is
//!
//! ```text
//! φ_i(θ_m) = (1/M) Σ_j [ k(θ_j, θ_m) g_i(θ_j) + ∇_{θ_j} k(θ_j, θ_m) ]
//! ```
//!
//! and `U_ij = ⟨φ_i, φ_j⟩` in the vector-valued RKHS. Only the attractive
//! term depends on the target; the repulsive kernel-gradient sum is computed
//! once per particle and shared by all targets.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{Kernel, RbfKernel};
use crate::particles::{squared_distance, ParticleSet};
use crate::targets::TargetDensity;

/// Scores `∇ log p_i(θ_m)` for `K` targets at `M` particles.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    targets: usize,
    particles: usize,
    dim: usize,
    data: Vec<f64>,
}

impl ScoreTable {
    /// `rows[i][m]` is the score of target `i` at particle `m`.
    pub fn from_nested(rows: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let targets = rows.len();
        let particles = rows.first().map_or(0, Vec::len);
        let dim = rows
            .first()
            .and_then(|r| r.first())
            .map_or(0, Vec::len);
        if targets == 0 || particles == 0 || dim == 0 {
            return Err(Error::invalid("score table must be non-empty"));
        }
        let mut data = Vec::with_capacity(targets * particles * dim);
        for (i, per_target) in rows.into_iter().enumerate() {
            if per_target.len() != particles {
                return Err(Error::invalid(format!(
                    "target {i} has {} scores, expected {particles}",
                    per_target.len()
                )));
            }
            for s in per_target {
                if s.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        actual: s.len(),
                    });
                }
                data.extend(s);
            }
        }
        let table = Self {
            targets,
            particles,
            dim,
            data,
        };
        table.check_finite()?;
        Ok(table)
    }

    fn check_finite(&self) -> Result<()> {
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            let per_target = self.particles * self.dim;
            return Err(Error::numerical(
                format!("score of target {}", pos / per_target),
                format!("non-finite value at particle {}", (pos % per_target) / self.dim),
            ));
        }
        Ok(())
    }

    pub fn num_targets(&self) -> usize {
        self.targets
    }

    pub fn num_particles(&self) -> usize {
        self.particles
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, target: usize, particle: usize) -> &[f64] {
        let start = (target * self.particles + particle) * self.dim;
        &self.data[start..start + self.dim]
    }
}

/// Evaluates every target's score at every particle.
pub fn evaluate_scores<T: TargetDensity>(particles: &ParticleSet, targets: &[T]) -> Result<ScoreTable> {
    if targets.is_empty() {
        return Err(Error::invalid("at least one target is required"));
    }
    let (m, d) = (particles.len(), particles.dim());
    let mut data = Vec::with_capacity(targets.len() * m * d);
    for (i, target) in targets.iter().enumerate() {
        if target.dim() != d {
            return Err(Error::invalid(format!(
                "target {i} has dimension {}, particles have {d}",
                target.dim()
            )));
        }
        for (pm, row) in particles.rows().enumerate() {
            let s = target.score(row).map_err(|e| match e {
                Error::NumericalFailure { detail, .. } => {
                    Error::numerical(format!("score of target {i}"), detail)
                }
                other => other,
            })?;
            if s.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: s.len(),
                });
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::numerical(
                    format!("score of target {i}"),
                    format!("non-finite value at particle {pm}"),
                ));
            }
            data.extend(s);
        }
    }
    Ok(ScoreTable {
        targets: targets.len(),
        particles: m,
        dim: d,
        data,
    })
}

fn check_table(particles: &ParticleSet, scores: &ScoreTable) -> Result<()> {
    if scores.particles != particles.len() || scores.dim != particles.dim() {
        return Err(Error::invalid(format!(
            "score table is {}x{}, particle set is {}x{}",
            scores.particles,
            scores.dim,
            particles.len(),
            particles.dim()
        )));
    }
    Ok(())
}

/// `φ_i(θ_m)` for every target `i` and particle `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionField {
    targets: usize,
    particles: usize,
    dim: usize,
    data: Vec<f64>,
}

impl DirectionField {
    /// `rows[i]` is an `M × d` row-major buffer for target `i`.
    pub fn from_target_rows(particles: usize, dim: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() || particles == 0 || dim == 0 {
            return Err(Error::invalid("direction field must be non-empty"));
        }
        let targets = rows.len();
        let mut data = Vec::with_capacity(targets * particles * dim);
        for r in rows {
            if r.len() != particles * dim {
                return Err(Error::DimensionMismatch {
                    expected: particles * dim,
                    actual: r.len(),
                });
            }
            data.extend(r);
        }
        Ok(Self {
            targets,
            particles,
            dim,
            data,
        })
    }

    pub fn num_targets(&self) -> usize {
        self.targets
    }

    pub fn num_particles(&self) -> usize {
        self.particles
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, target: usize, particle: usize) -> &[f64] {
        let start = (target * self.particles + particle) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// The `M × d` block of target `i`.
    pub fn target(&self, target: usize) -> &[f64] {
        let n = self.particles * self.dim;
        &self.data[target * n..(target + 1) * n]
    }
}

/// Stein directions from precomputed scores.
///
/// For each particle `m` the attractive sums `Σ_j k(θ_j, θ_m) g_i(θ_j)` and
/// the repulsive sum `Σ_j ∇_{θ_j} k(θ_j, θ_m)` are accumulated separately in
/// increasing `j`, then combined as `(attract + repulse) / M`. Rows are
/// computed independently, so the result does not depend on thread count.
pub fn directions_from_scores<K: Kernel>(
    particles: &ParticleSet,
    scores: &ScoreTable,
    kernel: &K,
) -> Result<DirectionField> {
    Ok(direction_pass(particles, scores, kernel)?.field)
}

/// Directions plus the per-particle sums the Gram factorization needs.
struct DirectionPass {
    field: DirectionField,
    /// `R(m) = Σ_j ∇_{θ_j} k(θ_j, θ_m)`, row-major `M × d`, not divided by `M`.
    repulsion: Vec<f64>,
    /// `Σ_m Σ_j tr ∂²k(θ_j, θ_m)/∂θ_j∂θ_m`, summed in increasing `m`.
    trace_total: f64,
}

fn direction_pass<K: Kernel>(particles: &ParticleSet, scores: &ScoreTable, kernel: &K) -> Result<DirectionPass> {
    check_table(particles, scores)?;
    let (n_t, n_p, d) = (scores.targets, particles.len(), particles.dim());
    let count = n_p as f64;
    // symmetric kernels: one evaluation per unordered pair, upper[a][b - a - 1] = k(θ_a, θ_b)
    let upper: Option<Vec<Vec<f64>>> = kernel.is_symmetric().then(|| {
        (0..n_p)
            .into_par_iter()
            .map(|a| (a + 1..n_p).map(|b| kernel.value(particles.row(a), particles.row(b))).collect())
            .collect()
    });
    let rows: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..n_p)
        .into_par_iter()
        .map(|m| {
            let target_pt = particles.row(m);
            let mut attract = vec![0.0; n_t * d];
            let mut repulse = vec![0.0; d];
            let mut gf = vec![0.0; d];
            let mut gs = vec![0.0; d];
            let mut trace = 0.0;
            for j in 0..n_p {
                let (k, tr) = match &upper {
                    Some(up) if j != m => {
                        let k = if j < m { up[j][m - j - 1] } else { up[m][j - m - 1] };
                        (k, kernel.derivatives_given_value(particles.row(j), target_pt, k, &mut gf, &mut gs))
                    }
                    _ => kernel.derivatives_into(particles.row(j), target_pt, &mut gf, &mut gs),
                };
                trace += tr;
                for i in 0..n_t {
                    let g = scores.get(i, j);
                    let acc = &mut attract[i * d..(i + 1) * d];
                    for l in 0..d {
                        acc[l] += k * g[l];
                    }
                }
                for l in 0..d {
                    repulse[l] += gf[l];
                }
            }
            for i in 0..n_t {
                for l in 0..d {
                    attract[i * d + l] = (attract[i * d + l] + repulse[l]) / count;
                }
            }
            (attract, repulse, trace)
        })
        .collect();

    let mut data = vec![0.0; n_t * n_p * d];
    let mut repulsion = Vec::with_capacity(n_p * d);
    let mut trace_total = 0.0;
    for (m, (row, rep, tr)) in rows.into_iter().enumerate() {
        for i in 0..n_t {
            let dst = (i * n_p + m) * d;
            data[dst..dst + d].copy_from_slice(&row[i * d..(i + 1) * d]);
        }
        repulsion.extend(rep);
        trace_total += tr;
    }
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::numerical(
            format!("direction of target {}", pos / (n_p * d)),
            "non-finite direction",
        ));
    }
    Ok(DirectionPass {
        field: DirectionField {
            targets: n_t,
            particles: n_p,
            dim: d,
            data,
        },
        repulsion,
        trace_total,
    })
}

/// Directions and Gram matrix in one pass over particle pairs.
///
/// For a symmetric kernel the four-term pair sum regroups as
///
/// ```text
/// U_ij = (1/M) Σ_a ⟨g_i(θ_a), φ_j(θ_a)⟩ + (1/M²) Σ_b ⟨g_j(θ_b), R(θ_b)⟩ + T / M²
/// ```
///
/// with `R(θ_b) = Σ_a ∇_{θ_a} k(θ_a, θ_b)` and `T` the summed trace term, so
/// only `O(M K² d)` work remains after the directions. Other kernels fall
/// back to [`gram_from_scores`].
pub fn directions_and_gram<K: Kernel>(
    particles: &ParticleSet,
    scores: &ScoreTable,
    kernel: &K,
) -> Result<(DirectionField, GramMatrix)> {
    if !kernel.is_symmetric() {
        let field = directions_from_scores(particles, scores, kernel)?;
        let gram = gram_from_scores(particles, scores, kernel)?;
        return Ok((field, gram));
    }
    let pass = direction_pass(particles, scores, kernel)?;
    let (n_t, n_p, d) = (scores.targets, particles.len(), particles.dim());
    let count = n_p as f64;
    let mut total = vec![0.0; n_t * n_t];
    for i in 0..n_t {
        for j in 0..n_t {
            let mut s = 0.0;
            for a in 0..n_p {
                s += dot(scores.get(i, a), pass.field.get(j, a));
            }
            total[i * n_t + j] = s / count;
        }
    }
    for j in 0..n_t {
        let mut s = 0.0;
        for b in 0..n_p {
            s += dot(scores.get(j, b), &pass.repulsion[b * d..(b + 1) * d]);
        }
        // the repulsion term depends on j only, the trace term on neither
        let shift = (s + pass.trace_total) / (count * count);
        for i in 0..n_t {
            total[i * n_t + j] += shift;
        }
    }
    Ok((pass.field, GramMatrix::symmetrized(n_t, total)?))
}

pub fn per_target_directions<T: TargetDensity, K: Kernel>(
    particles: &ParticleSet,
    targets: &[T],
    kernel: &K,
) -> Result<DirectionField> {
    let scores = evaluate_scores(particles, targets)?;
    directions_from_scores(particles, &scores, kernel)
}

/// Symmetric `K × K` matrix of RKHS inner products `⟨φ_i, φ_j⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    size: usize,
    entries: Vec<f64>,
}

impl GramMatrix {
    /// Row-major `size × size` entries. Symmetry is checked by the QP solver.
    pub fn from_row_major(size: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != size * size {
            return Err(Error::DimensionMismatch {
                expected: size * size,
                actual: entries.len(),
            });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("Gram matrix", "non-finite entry"));
        }
        Ok(Self { size, entries })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let size = rows.len();
        let mut entries = Vec::with_capacity(size * size);
        for r in rows {
            if r.as_ref().len() != size {
                return Err(Error::DimensionMismatch {
                    expected: size,
                    actual: r.as_ref().len(),
                });
            }
            entries.extend_from_slice(r.as_ref());
        }
        Self::from_row_major(size, entries)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size + j]
    }

    pub fn as_row_major(&self) -> &[f64] {
        &self.entries
    }

    /// `U + c · 𝟙𝟙ᵀ`
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            size: self.size,
            entries: self.entries.iter().map(|u| u + c).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            size: self.size,
            entries: self.entries.iter().map(|u| u * factor).collect(),
        }
    }

    /// `U w`
    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        (0..self.size)
            .map(|i| (0..self.size).map(|j| self.get(i, j) * w[j]).sum())
            .collect()
    }

    /// `wᵀ U w`
    pub fn quadratic_form(&self, w: &[f64]) -> f64 {
        self.apply(w).iter().zip(w).map(|(a, b)| a * b).sum()
    }

    fn symmetrized(size: usize, mut entries: Vec<f64>) -> Result<Self> {
        for i in 0..size {
            for j in i + 1..size {
                let avg = 0.5 * (entries[i * size + j] + entries[j * size + i]);
                entries[i * size + j] = avg;
                entries[j * size + i] = avg;
            }
        }
        Self::from_row_major(size, entries)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sums `per_pair(a, b, out)` over all particle pairs into a `K × K`
/// accumulator, divides by `M²` and symmetrizes. Partial sums per `a` are
/// reduced in increasing `a`.
fn assemble_gram<F>(n_t: usize, n_p: usize, per_pair: F) -> Result<GramMatrix>
where
    F: Fn(usize, usize, &mut [f64]) + Sync,
{
    let partials: Vec<Vec<f64>> = (0..n_p)
        .into_par_iter()
        .map(|a| {
            let mut acc = vec![0.0; n_t * n_t];
            for b in 0..n_p {
                per_pair(a, b, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; n_t * n_t];
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    let norm = (n_p * n_p) as f64;
    for t in &mut total {
        *t /= norm;
    }
    GramMatrix::symmetrized(n_t, total)
}

/// Gram matrix from precomputed scores, expanded term by term:
///
/// ```text
/// U_ij = (1/M²) Σ_a Σ_b [ k(θ_a,θ_b) ⟨g_i(θ_a), g_j(θ_b)⟩ + ⟨g_i(θ_a), ∂k/∂θ_b⟩
///                        + ⟨g_j(θ_b), ∂k/∂θ_a⟩ + tr(∂²k / ∂θ_a ∂θ_b) ]
/// ```
pub fn gram_from_scores<K: Kernel>(
    particles: &ParticleSet,
    scores: &ScoreTable,
    kernel: &K,
) -> Result<GramMatrix> {
    check_table(particles, scores)?;
    let (n_t, n_p, d) = (scores.targets, particles.len(), particles.dim());
    assemble_gram(n_t, n_p, |a, b, acc| {
        let mut gf = vec![0.0; d];
        let mut gs = vec![0.0; d];
        let (k, trace) = kernel.derivatives_into(particles.row(a), particles.row(b), &mut gf, &mut gs);
        let toward_b: Vec<f64> = (0..n_t).map(|i| dot(scores.get(i, a), &gs)).collect();
        let toward_a: Vec<f64> = (0..n_t).map(|j| dot(scores.get(j, b), &gf)).collect();
        for i in 0..n_t {
            let gi = scores.get(i, a);
            for j in 0..n_t {
                acc[i * n_t + j] += k * dot(gi, scores.get(j, b)) + toward_b[i] + toward_a[j] + trace;
            }
        }
    })
}

pub fn gram_matrix<T: TargetDensity, K: Kernel>(
    particles: &ParticleSet,
    targets: &[T],
    kernel: &K,
) -> Result<GramMatrix> {
    let scores = evaluate_scores(particles, targets)?;
    gram_from_scores(particles, &scores, kernel)
}

/// Gram matrix for the RBF kernel using the collapsed per-pair expression
///
/// ```text
/// k · [ ⟨g_i, g_j'⟩ + ⟨g_i − g_j', θ − θ'⟩ / σ² + d/σ² − ‖θ − θ'‖² / σ⁴ ]
/// ```
///
/// averaged over all particle pairs. Agrees with [`gram_from_scores`] up to
/// round-off.
pub fn rbf_gram_closed_form_from_scores(
    particles: &ParticleSet,
    scores: &ScoreTable,
    kernel: &RbfKernel,
) -> Result<GramMatrix> {
    check_table(particles, scores)?;
    let (n_t, n_p, d) = (scores.targets, particles.len(), particles.dim());
    let s2 = kernel.bandwidth() * kernel.bandwidth();
    let dim_term = d as f64 / s2;
    assemble_gram(n_t, n_p, |a, b, acc| {
        let (xa, xb) = (particles.row(a), particles.row(b));
        let r2 = squared_distance(xa, xb);
        let k = (-r2 / (2.0 * s2)).exp();
        let offset: Vec<f64> = xa.iter().zip(xb).map(|(p, q)| p - q).collect();
        for i in 0..n_t {
            let gi = scores.get(i, a);
            let gi_off = dot(gi, &offset);
            for j in 0..n_t {
                let gj = scores.get(j, b);
                let bracket = dot(gi, gj) + (gi_off - dot(gj, &offset)) / s2 + dim_term - r2 / (s2 * s2);
                acc[i * n_t + j] += k * bracket;
            }
        }
    })
}

pub fn rbf_gram_closed_form<T: TargetDensity>(
    particles: &ParticleSet,
    targets: &[T],
    kernel: &RbfKernel,
) -> Result<GramMatrix> {
    let scores = evaluate_scores(particles, targets)?;
    rbf_gram_closed_form_from_scores(particles, &scores, kernel)
}
