//! Test-only oracles, coded independently of the library paths they check.
#![allow(dead_code)]

use rand::Rng;

/// Central finite-difference gradient.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|l| {
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[l] += h;
            dn[l] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

/// `|a − b| ≤ rel · max(|a|, |b|, floor)`.
pub fn close_rel(a: f64, b: f64, rel: f64, floor: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(floor)
}

pub fn rbf(x: &[f64], y: &[f64], sigma: f64) -> f64 {
    let mut r2 = 0.0;
    for l in 0..x.len() {
        r2 += (x[l] - y[l]) * (x[l] - y[l]);
    }
    (-r2 / (2.0 * sigma * sigma)).exp()
}

/// `∂k(a, b)/∂a_l` for the RBF kernel.
pub fn rbf_da(a: &[f64], b: &[f64], l: usize, sigma: f64) -> f64 {
    -(a[l] - b[l]) / (sigma * sigma) * rbf(a, b, sigma)
}

/// `∂k(a, b)/∂b_l`.
pub fn rbf_db(a: &[f64], b: &[f64], l: usize, sigma: f64) -> f64 {
    (a[l] - b[l]) / (sigma * sigma) * rbf(a, b, sigma)
}

/// `∂²k(a, b)/∂a_p ∂b_q`.
pub fn rbf_dadb(a: &[f64], b: &[f64], p: usize, q: usize, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let delta = if p == q { 1.0 } else { 0.0 };
    rbf(a, b, sigma) * (delta / s2 - (a[p] - b[p]) * (a[q] - b[q]) / (s2 * s2))
}

/// `U_ij` by direct quadruple loop over the four-term pair expression.
pub fn gram_term_by_term(x: &[Vec<f64>], g: &[Vec<Vec<f64>>], sigma: f64) -> Vec<Vec<f64>> {
    let (k, m, d) = (g.len(), x.len(), x[0].len());
    let mut u = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            let mut s = 0.0;
            for a in 0..m {
                for b in 0..m {
                    let kab = rbf(&x[a], &x[b], sigma);
                    for l in 0..d {
                        s += kab * g[i][a][l] * g[j][b][l];
                        s += g[i][a][l] * rbf_db(&x[a], &x[b], l, sigma);
                        s += g[j][b][l] * rbf_da(&x[a], &x[b], l, sigma);
                        s += rbf_dadb(&x[a], &x[b], l, l, sigma);
                    }
                }
            }
            u[i][j] = s / (m * m) as f64;
        }
    }
    u
}

/// An element of the scalar RKHS: `coef · k(centre, ·)` or
/// `coef · ∂_{centre_l} k(centre, ·)`.
struct Atom<'a> {
    coef: f64,
    centre: &'a [f64],
    deriv: Option<usize>,
}

fn atom_inner(p: &Atom, q: &Atom, sigma: f64) -> f64 {
    let v = match (p.deriv, q.deriv) {
        (None, None) => rbf(p.centre, q.centre, sigma),
        (Some(l), None) => rbf_da(p.centre, q.centre, l, sigma),
        (None, Some(l)) => rbf_db(p.centre, q.centre, l, sigma),
        (Some(a), Some(b)) => rbf_dadb(p.centre, q.centre, a, b, sigma),
    };
    p.coef * q.coef * v
}

/// `⟨φ_i, φ_j⟩` in `H^d`, expanding each component of
/// `φ_i = (1/M) Σ_a [k(θ_a, ·) g_i(θ_a) + ∇_{θ_a} k(θ_a, ·)]` into atoms and
/// using the reproducing property of kernel derivatives.
pub fn gram_rkhs_expansion(x: &[Vec<f64>], g: &[Vec<Vec<f64>>], sigma: f64) -> Vec<Vec<f64>> {
    let (k, m, d) = (g.len(), x.len(), x[0].len());
    let inv = 1.0 / m as f64;
    let atoms = |i: usize, l: usize| -> Vec<Atom> {
        let mut v = Vec::new();
        for a in 0..m {
            v.push(Atom { coef: inv * g[i][a][l], centre: &x[a], deriv: None });
            v.push(Atom { coef: inv, centre: &x[a], deriv: Some(l) });
        }
        v
    };
    let mut u = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            let mut s = 0.0;
            for l in 0..d {
                let (ai, aj) = (atoms(i, l), atoms(j, l));
                for p in &ai {
                    for q in &aj {
                        s += atom_inner(p, q, sigma);
                    }
                }
            }
            u[i][j] = s;
        }
    }
    u
}

/// One plain SVGD step with the RBF kernel. For each particle the attractive
/// and repulsive sums run over `j` in increasing order and are combined as
/// `(attract + repulse) / M`.
pub fn svgd_step(x: &mut [Vec<f64>], score: impl Fn(&[f64]) -> Vec<f64>, sigma: f64, eps: f64) {
    let m = x.len();
    let d = x[0].len();
    let s2 = sigma * sigma;
    let g: Vec<Vec<f64>> = x.iter().map(|p| score(p)).collect();
    let mut phi = vec![vec![0.0; d]; m];
    for t in 0..m {
        let mut attract = vec![0.0; d];
        let mut repulse = vec![0.0; d];
        for j in 0..m {
            let mut r2 = 0.0;
            for l in 0..d {
                let diff = x[j][l] - x[t][l];
                r2 += diff * diff;
            }
            let r2: f64 = r2.max(0.0);
            let k = (-r2 / (2.0 * s2)).exp();
            for l in 0..d {
                attract[l] += k * g[j][l];
                repulse[l] += -(x[j][l] - x[t][l]) * k / s2;
            }
        }
        for l in 0..d {
            phi[t][l] = (attract[l] + repulse[l]) / m as f64;
        }
    }
    for (p, f) in x.iter_mut().zip(&phi) {
        for l in 0..d {
            p[l] += eps * f[l];
        }
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    let mut a = a.to_vec();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

pub fn random_points<R: Rng>(rng: &mut R, m: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| (0..d).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

/// Random symmetric PSD matrix `AᵀA` with `A` of shape `rank × k`.
pub fn random_psd<R: Rng>(rng: &mut R, k: usize, rank: usize) -> Vec<Vec<f64>> {
    let a: Vec<Vec<f64>> = (0..rank)
        .map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    (0..k)
        .map(|i| (0..k).map(|j| (0..rank).map(|r| a[r][i] * a[r][j]).sum()).collect())
        .collect()
}
