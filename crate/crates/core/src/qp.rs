//! Minimum-norm point of the convex hull of the per-target directions:
//! `min_{w ∈ Δ_K} wᵀ U w`.
//!
//! Solved with Frank–Wolfe using away steps and exact line search. Both
//! step types move along a segment of the simplex, so the quadratic's
//! minimizer along the segment has a closed form.

use crate::error::{Error, Result};
use crate::stein::{DirectionField, GramMatrix};

/// A point of the probability simplex `Δ_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("simplex weights must be non-empty"));
        }
        if weights.iter().any(|&w| !(w >= -1e-12) || !w.is_finite()) {
            return Err(Error::invalid("simplex weights must be non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!("simplex weights sum to {total}")));
        }
        Ok(Self(weights.into_iter().map(|w| w.max(0.0)).collect()))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn one_hot(k: usize, index: usize) -> Self {
        let mut w = vec![0.0; k];
        w[index] = 1.0;
        Self(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Diagnostics of one QP solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpReport {
    /// `w*ᵀ U w*`
    pub objective: f64,
    pub iterations: usize,
    /// Frank–Wolfe gap `2 (wᵀUw − min_i (Uw)_i)` at the returned point.
    pub duality_gap: f64,
    /// `min_i (Uw*)_i − w*ᵀUw*`, i.e. `min_i ⟨φ*, φ_i⟩ − ‖φ*‖²`.
    pub kkt_margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iters: 500,
        }
    }
}

impl QpSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::invalid(format!("QP tolerance must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

pub fn solve_simplex_qp(u: &GramMatrix, tol: f64, max_iters: usize) -> Result<(SimplexWeights, QpReport)> {
    solve_inner(u, tol, max_iters, None)
}

/// Same as [`solve_simplex_qp`], also returning the objective after every
/// iteration (the first entry is the starting point).
pub fn solve_simplex_qp_traced(
    u: &GramMatrix,
    tol: f64,
    max_iters: usize,
) -> Result<(SimplexWeights, QpReport, Vec<f64>)> {
    let mut trace = Vec::new();
    let (w, report) = solve_inner(u, tol, max_iters, Some(&mut trace))?;
    Ok((w, report, trace))
}

fn report_for(u: &GramMatrix, w: &[f64], iterations: usize) -> QpReport {
    let uw = u.apply(w);
    let objective: f64 = uw.iter().zip(w).map(|(a, b)| a * b).sum();
    let min_uw = uw.iter().copied().fold(f64::INFINITY, f64::min);
    QpReport {
        objective,
        iterations,
        duality_gap: 2.0 * (objective - min_uw),
        kkt_margin: min_uw - objective,
    }
}

fn check_symmetric(u: &GramMatrix) -> Result<()> {
    let k = u.size();
    let scale = u.as_row_major().iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    for i in 0..k {
        for j in i + 1..k {
            if (u.get(i, j) - u.get(j, i)).abs() > 1e-10 * scale {
                return Err(Error::invalid(format!(
                    "QP matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

fn solve_inner(
    u: &GramMatrix,
    tol: f64,
    max_iters: usize,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<(SimplexWeights, QpReport)> {
    let k = u.size();
    if k == 0 {
        return Err(Error::invalid("QP needs at least one target"));
    }
    QpSettings { tol, max_iters }.validate()?;
    check_symmetric(u)?;

    if k == 1 {
        let w = vec![1.0];
        if let Some(t) = trace.as_deref_mut() {
            t.push(u.get(0, 0));
        }
        return Ok((SimplexWeights(w.clone()), report_for(u, &w, 0)));
    }
    if u.as_row_major().iter().all(|&v| v == 0.0) {
        let w = SimplexWeights::uniform(k);
        if let Some(t) = trace.as_deref_mut() {
            t.push(0.0);
        }
        let report = report_for(u, w.as_slice(), 0);
        return Ok((w, report));
    }

    let mut w = vec![1.0 / k as f64; k];
    let mut iterations = 0;
    loop {
        let uw = u.apply(&w);
        let obj: f64 = uw.iter().zip(&w).map(|(a, b)| a * b).sum();
        if let Some(t) = trace.as_deref_mut() {
            t.push(obj);
        }

        // lowest index wins ties
        let mut s = 0;
        for i in 1..k {
            if uw[i] < uw[s] {
                s = i;
            }
        }
        let fw_gain = obj - uw[s];
        if 2.0 * fw_gain <= tol || iterations >= max_iters {
            break;
        }

        let mut v = None::<usize>;
        for i in 0..k {
            if w[i] > 0.0 && v.is_none_or(|best| uw[i] > uw[best]) {
                v = Some(i);
            }
        }
        let v = v.expect("simplex point has an active vertex");
        let away_gain = uw[v] - obj;

        if fw_gain >= away_gain {
            // d = e_s − w
            let slope = uw[s] - obj;
            let curv = u.get(s, s) - 2.0 * uw[s] + obj;
            let gamma = line_step(slope, curv, 1.0);
            for (i, wi) in w.iter_mut().enumerate() {
                *wi *= 1.0 - gamma;
                if i == s {
                    *wi += gamma;
                }
            }
        } else {
            // d = w − e_v
            let max_step = w[v] / (1.0 - w[v]);
            let slope = obj - uw[v];
            let curv = obj - 2.0 * uw[v] + u.get(v, v);
            let gamma = line_step(slope, curv, max_step);
            for (i, wi) in w.iter_mut().enumerate() {
                *wi *= 1.0 + gamma;
                if i == v {
                    *wi -= gamma;
                }
            }
            if gamma >= max_step {
                w[v] = 0.0;
            }
        }
        for wi in &mut w {
            if *wi < 0.0 {
                *wi = 0.0;
            }
        }
        let total: f64 = w.iter().sum();
        for wi in &mut w {
            *wi /= total;
        }
        iterations += 1;
    }

    let mut report = report_for(u, &w, iterations);
    if report.duality_gap > 0.0 {
        if let Some(polished) = polish(u, &w) {
            let candidate = report_for(u, &polished, iterations);
            if candidate.kkt_margin > report.kkt_margin && candidate.objective <= report.objective + tol {
                if let Some(t) = trace {
                    t.push(candidate.objective.min(report.objective));
                }
                w = polished;
                report = candidate;
            }
        }
    }
    Ok((SimplexWeights(w), report))
}

/// Primal active-set refinement started from a Frank–Wolfe iterate.
///
/// On the current support `S` the equality-constrained minimizer solves
/// `U_SS x = λ 1, 1ᵀx = 1`. If it is infeasible we walk toward it until a
/// weight hits zero and drop that vertex; if it is feasible but some vertex
/// outside `S` has `(Ux)_i < xᵀUx` we add the best one. Frank–Wolfe alone
/// converges slowly when the optimum is interior and `U` is ill-conditioned.
fn polish(u: &GramMatrix, start: &[f64]) -> Option<Vec<f64>> {
    let k = u.size();
    let scale = u.as_row_major().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let ridge = 1e-14 * scale;
    let mut w = start.to_vec();
    let mut support: Vec<bool> = w.iter().map(|&v| v > 0.0).collect();
    for _ in 0..4 * k + 4 {
        let idx: Vec<usize> = (0..k).filter(|&i| support[i]).collect();
        let n = idx.len();
        // [U_SS + ridge·I, 1; 1ᵀ, 0] [x; −λ] = [0; 1]
        let mut a = vec![0.0; (n + 1) * (n + 1)];
        let mut b = vec![0.0; n + 1];
        for (r, &i) in idx.iter().enumerate() {
            for (c, &j) in idx.iter().enumerate() {
                a[r * (n + 1) + c] = u.get(i, j) + if r == c { ridge } else { 0.0 };
            }
            a[r * (n + 1) + n] = 1.0;
            a[n * (n + 1) + r] = 1.0;
        }
        b[n] = 1.0;
        let sol = solve_dense(n + 1, a, b)?;
        let x = &sol[..n];

        if x.iter().all(|&v| v >= 0.0) {
            for wi in w.iter_mut() {
                *wi = 0.0;
            }
            for (r, &i) in idx.iter().enumerate() {
                w[i] = x[r];
            }
            let uw = u.apply(&w);
            let obj: f64 = uw.iter().zip(&w).map(|(p, q)| p * q).sum();
            let entering = (0..k)
                .filter(|&i| !support[i])
                .min_by(|&p, &q| uw[p].total_cmp(&uw[q]))
                .filter(|&i| uw[i] < obj - 1e-15 * scale.max(1.0));
            match entering {
                None => return Some(w),
                Some(i) => support[i] = true,
            }
        } else {
            // largest step toward x that keeps every weight non-negative
            let mut t = 1.0;
            let mut blocking = None;
            for (r, &i) in idx.iter().enumerate() {
                if x[r] < 0.0 {
                    let ti = w[i] / (w[i] - x[r]);
                    if ti < t {
                        t = ti;
                        blocking = Some(i);
                    }
                }
            }
            for (r, &i) in idx.iter().enumerate() {
                w[i] += t * (x[r] - w[i]);
            }
            let out = blocking?;
            w[out] = 0.0;
            support[out] = false;
            let total: f64 = w.iter().map(|v| v.max(0.0)).sum();
            for wi in w.iter_mut() {
                *wi = wi.max(0.0) / total;
            }
        }
    }
    None
}

/// Gaussian elimination with partial pivoting; `None` if singular.
fn solve_dense(n: usize, mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    for col in 0..n {
        let piv = (col..n).max_by(|&p, &q| a[p * n + col].abs().total_cmp(&a[q * n + col].abs()))?;
        if a[piv * n + col].abs() <= 1e-300_f64.max(1e-18 * scale) {
            return None;
        }
        if piv != col {
            for c in 0..n {
                a.swap(piv * n + c, col * n + c);
            }
            b.swap(piv, col);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            for c in col..n {
                a[r * n + c] -= f * a[col * n + c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut s = b[r];
        for c in r + 1..n {
            s -= a[r * n + c] * x[c];
        }
        x[r] = s / a[r * n + r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Minimizer over `[0, max_step]` of `2γ·slope + γ²·curv`.
fn line_step(slope: f64, curv: f64, max_step: f64) -> f64 {
    if slope >= 0.0 {
        return 0.0;
    }
    if curv <= 0.0 {
        return max_step;
    }
    (-slope / curv).clamp(0.0, max_step)
}

/// Closed-form minimizer for two targets: `w_1 = clamp((U_22 − U_12) / (U_11 + U_22 − 2U_12), 0, 1)`.
pub fn two_target_min_norm(u: &GramMatrix) -> Result<SimplexWeights> {
    if u.size() != 2 {
        return Err(Error::invalid("closed form applies to two targets only"));
    }
    let denom = u.get(0, 0) + u.get(1, 1) - 2.0 * u.get(0, 1);
    let a = if denom <= 0.0 {
        0.5
    } else {
        ((u.get(1, 1) - u.get(0, 1)) / denom).clamp(0.0, 1.0)
    };
    Ok(SimplexWeights(vec![a, 1.0 - a]))
}

/// `Σ_i w_i φ_i(θ_m)` for every particle, as an `M × d` row-major buffer.
pub fn combine_directions(field: &DirectionField, w: &SimplexWeights) -> Result<Vec<f64>> {
    if w.len() != field.num_targets() {
        return Err(Error::DimensionMismatch {
            expected: field.num_targets(),
            actual: w.len(),
        });
    }
    let weights = w.as_slice();
    let mut out: Vec<f64> = field.target(0).iter().map(|v| weights[0] * v).collect();
    for (i, &wi) in weights.iter().enumerate().skip(1) {
        for (o, v) in out.iter_mut().zip(field.target(i)) {
            *o += wi * v;
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("combined direction", "non-finite entry"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gram(rows: &[&[f64]]) -> GramMatrix {
        GramMatrix::from_rows(rows).unwrap()
    }

    /// Grid search over the 2-simplex at resolution 1e-4.
    fn grid_two(u: &GramMatrix) -> (f64, f64) {
        (0..=10_000)
            .map(|n| {
                let a = n as f64 * 1e-4;
                (a, u.quadratic_form(&[a, 1.0 - a]))
            })
            .fold((0.0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
    }

    #[test]
    fn identity() {
        let (w, r) = solve_simplex_qp(&gram(&[&[1.0, 0.0], &[0.0, 1.0]]), 1e-9, 500).unwrap();
        assert!((w.as_slice()[0] - 0.5).abs() < 1e-12);
        assert!((r.objective - 0.5).abs() < 1e-12);
    }

    #[test]
    fn diagonal_interior_optimum() {
        let u = gram(&[&[4.0, 0.0], &[0.0, 1.0]]);
        let (a, best) = grid_two(&u);
        assert!((a - 0.2).abs() < 1e-4 && (best - 0.8).abs() < 1e-6);
        let (w, r) = solve_simplex_qp(&u, 1e-9, 500).unwrap();
        assert!((w.as_slice()[0] - 0.2).abs() < 1e-10);
        assert!((r.objective - 0.8).abs() < 1e-10);
    }

    #[test]
    fn boundary_vertex_optimum() {
        let u = gram(&[&[1.0, 2.0], &[2.0, 5.0]]);
        let (a, best) = grid_two(&u);
        assert_eq!(a, 1.0);
        assert_eq!(best, 1.0);
        let (w, r) = solve_simplex_qp(&u, 1e-9, 500).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 0.0]);
        assert!((r.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_target() {
        let (w, r) = solve_simplex_qp(&gram(&[&[3.0]]), 1e-9, 500).unwrap();
        assert_eq!(w.as_slice(), &[1.0]);
        assert_eq!(r.objective, 3.0);
    }

    #[test]
    fn zero_matrix_gives_uniform_weights() {
        let (w, _) = solve_simplex_qp(&GramMatrix::from_row_major(3, vec![0.0; 9]).unwrap(), 1e-9, 500).unwrap();
        assert_eq!(w, SimplexWeights::uniform(3));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(solve_simplex_qp(&GramMatrix::from_row_major(0, vec![]).unwrap(), 1e-9, 10).is_err());
        assert!(solve_simplex_qp(&gram(&[&[1.0, 0.5], &[0.0, 1.0]]), 1e-9, 10).is_err());
        assert!(solve_simplex_qp(&gram(&[&[1.0]]), 0.0, 10).is_err());
    }

    #[test]
    fn matches_two_target_closed_form() {
        let u = gram(&[&[2.0, -0.3], &[-0.3, 0.9]]);
        let (w, _) = solve_simplex_qp(&u, 1e-9, 500).unwrap();
        let c = two_target_min_norm(&u).unwrap();
        assert!((w.as_slice()[0] - c.as_slice()[0]).abs() < 1e-10);
    }

    #[test]
    fn combine_one_hot_and_identical() {
        let f = DirectionField::from_target_rows(2, 1, vec![vec![1.0, 2.0], vec![-3.0, 4.0]]).unwrap();
        let w = SimplexWeights::one_hot(2, 1);
        assert_eq!(combine_directions(&f, &w).unwrap(), vec![-3.0, 4.0]);
        let same = DirectionField::from_target_rows(2, 1, vec![vec![1.5, 2.5]; 3]).unwrap();
        let w = SimplexWeights::new(vec![0.2, 0.3, 0.5]).unwrap();
        let out = combine_directions(&same, &w).unwrap();
        assert!((out[0] - 1.5).abs() < 1e-15 && (out[1] - 2.5).abs() < 1e-15);
        assert!(combine_directions(&f, &SimplexWeights::uniform(3)).is_err());
    }

    #[test]
    fn simplex_weights_validation() {
        assert!(SimplexWeights::new(vec![0.5, 0.6]).is_err());
        assert!(SimplexWeights::new(vec![-0.1, 1.1]).is_err());
        assert_eq!(SimplexWeights::new(vec![-1e-13, 1.0]).unwrap().as_slice()[0], 0.0);
    }
}
