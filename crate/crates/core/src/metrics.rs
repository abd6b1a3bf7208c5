//! Evaluation metrics: calibration, Brier score, mean log-density and
//! ZDT3 Pareto-segment membership.

use crate::error::{check_dim, Error, Result};
use crate::particles::ParticleSet;
use crate::targets::TargetDensity;

/// Multi-class Brier score `(1/N) Σ_i Σ_c (1[y_i = c] − p_ic)²`.
///
/// `probabilities` is row-major `N × classes`.
pub fn brier(probabilities: &[f64], classes: usize, labels: &[usize]) -> Result<f64> {
    if classes == 0 {
        return Err(Error::invalid("Brier score needs at least one class"));
    }
    check_dim(labels.len() * classes, probabilities.len())?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, (row, &y)) in probabilities.chunks_exact(classes).zip(labels).enumerate() {
        if y >= classes {
            return Err(Error::invalid(format!("label {y} out of range at row {i}")));
        }
        let mass: f64 = row.iter().sum();
        if row.iter().any(|p| !(*p >= -1e-8 && *p <= 1.0 + 1e-8)) || (mass - 1.0).abs() > 1e-8 {
            return Err(Error::invalid(format!("row {i} is not a probability vector")));
        }
        total += row
            .iter()
            .enumerate()
            .map(|(c, p)| {
                let e = if c == y { 1.0 - p } else { *p };
                e * e
            })
            .sum::<f64>();
    }
    Ok(total / labels.len() as f64)
}

/// Per-bin statistics of a calibration histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationBins {
    pub counts: Vec<usize>,
    pub accuracy: Vec<f64>,
    pub confidence: Vec<f64>,
}

impl CalibrationBins {
    /// Bin `m` (1-based) covers `((m − 1)/B, m/B]`; confidence 0 goes to bin 1.
    pub fn build(confidences: &[f64], correct: &[bool], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::invalid("calibration needs at least one bin"));
        }
        check_dim(confidences.len(), correct.len())?;
        let mut counts = vec![0usize; bins];
        let mut hits = vec![0.0; bins];
        let mut conf = vec![0.0; bins];
        for (&c, &ok) in confidences.iter().zip(correct) {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::invalid(format!("confidence {c} outside [0, 1]")));
            }
            let b = ((c * bins as f64).ceil() as usize).clamp(1, bins) - 1;
            counts[b] += 1;
            conf[b] += c;
            if ok {
                hits[b] += 1.0;
            }
        }
        let accuracy = hits
            .iter()
            .zip(&counts)
            .map(|(h, &n)| if n == 0 { 0.0 } else { h / n as f64 })
            .collect();
        let confidence = conf
            .iter()
            .zip(&counts)
            .map(|(s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
            .collect();
        Ok(Self {
            counts,
            accuracy,
            confidence,
        })
    }
}

/// Expected calibration error `Σ_m (|B_m| / N) |acc(B_m) − conf(B_m)|`.
/// Empty bins contribute nothing; `N = 0` gives 0.
pub fn ece(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    let hist = CalibrationBins::build(confidences, correct, bins)?;
    let n = confidences.len();
    if n == 0 {
        return Ok(0.0);
    }
    Ok(hist
        .counts
        .iter()
        .zip(hist.accuracy.iter().zip(&hist.confidence))
        .map(|(&c, (a, f))| c as f64 / n as f64 * (a - f).abs())
        .sum())
}

/// Mean of the unnormalized log-density over the particles.
pub fn mean_log_density<T: TargetDensity + ?Sized>(particles: &ParticleSet, target: &T) -> Result<f64> {
    check_dim(target.dim(), particles.dim())?;
    let mut total = 0.0;
    for row in particles.rows() {
        total += target
            .log_density_unnorm(row)
            .ok_or_else(|| Error::invalid("target has no log-density"))?;
    }
    Ok(total / particles.len() as f64)
}

/// The five `θ_1` intervals of the ZDT3 Pareto set (with `θ_2.. = 0`).
pub const ZDT3_SEGMENTS: [(f64, f64); 5] = [
    (0.0, 0.0830),
    (0.1822, 0.257),
    (0.4093, 0.4538),
    (0.6183, 0.6525),
    (0.8233, 0.8518),
];

/// Membership slack on the segment bounds.
pub const ZDT3_SEGMENT_SLACK: f64 = 0.02;

/// Zero-based index of the segment containing `x` within `slack`.
pub fn zdt3_segment(x: f64, slack: f64) -> Option<usize> {
    ZDT3_SEGMENTS
        .iter()
        .position(|&(lo, hi)| x >= lo - slack && x <= hi + slack)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontReport {
    /// Fraction of particles whose `θ_1` lies in any segment.
    pub fraction_in_segments: f64,
    /// Share of the in-segment particles that sit in segments 2–4 (0 when
    /// no particle is inside a segment).
    pub fraction_middle_segments: f64,
    /// Mean of `|θ_l|` over `l ≥ 2` and all particles.
    pub mean_tail_magnitude: f64,
}

pub fn zdt3_front_report(particles: &ParticleSet) -> Result<FrontReport> {
    check_dim(30, particles.dim())?;
    let n = particles.len() as f64;
    let mut inside = 0usize;
    let mut middle = 0usize;
    let mut tail = 0.0;
    for row in particles.rows() {
        if let Some(s) = zdt3_segment(row[0], ZDT3_SEGMENT_SLACK) {
            inside += 1;
            if (1..=3).contains(&s) {
                middle += 1;
            }
        }
        tail += row[1..].iter().map(|v| v.abs()).sum::<f64>();
    }
    Ok(FrontReport {
        fraction_in_segments: inside as f64 / n,
        fraction_middle_segments: if inside == 0 { 0.0 } else { middle as f64 / inside as f64 },
        mean_tail_magnitude: tail / (n * 29.0),
    })
}
