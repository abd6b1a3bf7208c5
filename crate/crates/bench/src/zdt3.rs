//! The ZDT3 bi-objective problem on `[0, 1]^30` with analytic gradients.

use std::f64::consts::PI;

use mtsgd::{Error, GibbsTarget, Result};

pub const DIM: usize = 30;

/// Floor on `f1` inside the `sqrt(f1 g)` derivative, which is unbounded at 0.
const F1_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Zdt3Eval {
    pub f1: f64,
    pub f2: f64,
    pub grad_f1: Vec<f64>,
    pub grad_f2: Vec<f64>,
    /// Number of coordinates that were clamped into `[0, 1]`.
    pub clamped: usize,
}

fn clamp_point(theta: &[f64]) -> Result<(Vec<f64>, usize)> {
    if theta.len() != DIM {
        return Err(Error::DimensionMismatch {
            expected: DIM,
            actual: theta.len(),
        });
    }
    let mut clamped = 0;
    let x = theta
        .iter()
        .map(|&v| {
            let c = v.clamp(0.0, 1.0);
            if c != v {
                clamped += 1;
            }
            c
        })
        .collect();
    Ok((x, clamped))
}

fn g_of(x: &[f64]) -> f64 {
    1.0 + 9.0 / 29.0 * x[1..].iter().sum::<f64>()
}

/// `f2 = g · h(f1, g)` with `h = 1 − sqrt(f1/g) − (f1/g) sin(10π f1)`.
fn f2_of(f1: f64, g: f64) -> f64 {
    g * (1.0 - (f1 / g).sqrt() - f1 / g * (10.0 * PI * f1).sin())
}

pub fn objectives(theta: &[f64]) -> Result<(f64, f64)> {
    let (x, _) = clamp_point(theta)?;
    let g = g_of(&x);
    Ok((x[0], f2_of(x[0], g)))
}

pub fn objectives_and_gradients(theta: &[f64]) -> Result<Zdt3Eval> {
    let (x, clamped) = clamp_point(theta)?;
    let f1 = x[0];
    let g = g_of(&x);
    let f2 = f2_of(f1, g);

    let mut grad_f1 = vec![0.0; DIM];
    grad_f1[0] = 1.0;

    // f2 = g − sqrt(f1 g) − f1 sin(10π f1)
    let f1s = f1.max(F1_FLOOR);
    let mut grad_f2 = vec![0.0; DIM];
    grad_f2[0] = -0.5 * (g / f1s).sqrt() - (10.0 * PI * f1).sin() - 10.0 * PI * f1 * (10.0 * PI * f1).cos();
    let dg = 9.0 / 29.0 * (1.0 - 0.5 * (f1 / g).sqrt());
    for v in &mut grad_f2[1..] {
        *v = dg;
    }
    Ok(Zdt3Eval {
        f1,
        f2,
        grad_f1,
        grad_f2,
        clamped,
    })
}

/// The two Gibbs targets `p_i ∝ exp(−f_i / T)`.
pub fn targets(temperature: f64) -> Result<Vec<GibbsTarget>> {
    let first = GibbsTarget::new(
        DIM,
        |x| objectives(x).map_or(f64::NAN, |o| o.0),
        |x| objectives_and_gradients(x).map_or_else(|_| vec![f64::NAN; DIM], |e| e.grad_f1),
    )
    .with_temperature(temperature)?;
    let second = GibbsTarget::new(
        DIM,
        |x| objectives(x).map_or(f64::NAN, |o| o.1),
        |x| objectives_and_gradients(x).map_or_else(|_| vec![f64::NAN; DIM], |e| e.grad_f2),
    )
    .with_temperature(temperature)?;
    Ok(vec![first, second])
}
