mod common;

use common::{close_rel, gram_rkhs_expansion, gram_term_by_term, random_points, symmetric_eigenvalues};
use mtsgd::stein::{directions_and_gram, directions_from_scores, gram_from_scores, rbf_gram_closed_form_from_scores};
use mtsgd::{ParticleSet, RbfKernel, ScoreTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Instance {
    x: Vec<Vec<f64>>,
    g: Vec<Vec<Vec<f64>>>,
    sigma: f64,
}

impl Instance {
    fn random<R: Rng>(rng: &mut R) -> Self {
        let m = rng.random_range(1..=5);
        let k = rng.random_range(1..=4);
        let d = rng.random_range(1..=3);
        Self {
            x: random_points(rng, m, d, 2.0),
            g: (0..k).map(|_| random_points(rng, m, d, 3.0)).collect(),
            sigma: rng.random_range(0.3..3.0),
        }
    }

    fn particles(&self) -> ParticleSet {
        ParticleSet::from_rows(&self.x).unwrap()
    }

    fn scores(&self) -> ScoreTable {
        ScoreTable::from_nested(self.g.clone()).unwrap()
    }
}

fn max_abs(u: &[Vec<f64>]) -> f64 {
    u.iter().flatten().fold(1.0_f64, |a, v| a.max(v.abs()))
}

#[test]
fn gram_matches_term_by_term_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let inst = Instance::random(&mut rng);
        let kern = RbfKernel::new(inst.sigma).unwrap();
        let u = gram_from_scores(&inst.particles(), &inst.scores(), &kern).unwrap();
        let oracle = gram_term_by_term(&inst.x, &inst.g, inst.sigma);
        let scale = max_abs(&oracle);
        for i in 0..oracle.len() {
            for j in 0..oracle.len() {
                assert!((u.get(i, j) - oracle[i][j]).abs() <= 1e-12 * scale);
            }
        }
    }
}

#[test]
fn gram_matches_rkhs_atom_expansion() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..100 {
        let inst = Instance::random(&mut rng);
        let kern = RbfKernel::new(inst.sigma).unwrap();
        let u = gram_from_scores(&inst.particles(), &inst.scores(), &kern).unwrap();
        let oracle = gram_rkhs_expansion(&inst.x, &inst.g, inst.sigma);
        let scale = max_abs(&oracle);
        for i in 0..oracle.len() {
            for j in 0..oracle.len() {
                assert!((u.get(i, j) - oracle[i][j]).abs() <= 1e-12 * scale);
            }
        }
    }
}

#[test]
fn closed_form_agrees_with_term_by_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..100 {
        let inst = Instance::random(&mut rng);
        let kern = RbfKernel::new(inst.sigma).unwrap();
        let a = gram_from_scores(&inst.particles(), &inst.scores(), &kern).unwrap();
        let b = rbf_gram_closed_form_from_scores(&inst.particles(), &inst.scores(), &kern).unwrap();
        for (p, q) in a.as_row_major().iter().zip(b.as_row_major()) {
            assert!((p - q).abs() <= 1e-10, "{p} vs {q}");
        }
    }
}

#[test]
fn wide_kernel_limit_is_mean_score_inner_product() {
    // σ → ∞: U_ij → ⟨mean_a g_i(θ_a), mean_b g_j(θ_b)⟩
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..100 {
        let inst = Instance::random(&mut rng);
        let kern = RbfKernel::new(1e6).unwrap();
        let u = rbf_gram_closed_form_from_scores(&inst.particles(), &inst.scores(), &kern).unwrap();
        let (m, d) = (inst.x.len(), inst.x[0].len());
        let mean: Vec<Vec<f64>> = inst
            .g
            .iter()
            .map(|gi| (0..d).map(|l| gi.iter().map(|r| r[l]).sum::<f64>() / m as f64).collect())
            .collect();
        for i in 0..mean.len() {
            for j in 0..mean.len() {
                let limit: f64 = (0..d).map(|l| mean[i][l] * mean[j][l]).sum();
                assert!(close_rel(u.get(i, j), limit, 1e-4, 1e-8), "{} vs {limit}", u.get(i, j));
            }
        }
    }
}

#[test]
fn gram_is_symmetric_psd() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for _ in 0..100 {
        let inst = Instance::random(&mut rng);
        let kern = RbfKernel::new(inst.sigma).unwrap();
        let u = gram_from_scores(&inst.particles(), &inst.scores(), &kern).unwrap();
        let k = u.size();
        let rows: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| u.get(i, j)).collect()).collect();
        for i in 0..k {
            for j in 0..k {
                assert_eq!(u.get(i, j), u.get(j, i));
            }
        }
        let scale = max_abs(&rows);
        for ev in symmetric_eigenvalues(&rows) {
            assert!(ev >= -1e-10 * scale, "eigenvalue {ev}");
        }
    }
}

#[test]
fn directions_match_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    for _ in 0..50 {
        let inst = Instance::random(&mut rng);
        let kern = RbfKernel::new(inst.sigma).unwrap();
        let field = directions_from_scores(&inst.particles(), &inst.scores(), &kern).unwrap();
        let (m, d) = (inst.x.len(), inst.x[0].len());
        for (i, gi) in inst.g.iter().enumerate() {
            for t in 0..m {
                for l in 0..d {
                    let mut s = 0.0;
                    for j in 0..m {
                        s += common::rbf(&inst.x[j], &inst.x[t], inst.sigma) * gi[j][l]
                            + common::rbf_da(&inst.x[j], &inst.x[t], l, inst.sigma);
                    }
                    let expect = s / m as f64;
                    assert!((field.get(i, t)[l] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
                }
            }
        }
    }
}

#[test]
fn squared_rkhs_norm_equals_direction_quadratic_form() {
    // ‖Σ w_i φ_i‖² = wᵀUw for any weights
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    for _ in 0..50 {
        let inst = Instance::random(&mut rng);
        let kern = RbfKernel::new(inst.sigma).unwrap();
        let u = gram_from_scores(&inst.particles(), &inst.scores(), &kern).unwrap();
        let k = inst.g.len();
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
        let w: Vec<f64> = raw.iter().map(|v| v / raw.iter().sum::<f64>()).collect();
        let m = inst.x.len();
        let d = inst.x[0].len();
        let mixed: Vec<Vec<f64>> = (0..m)
            .map(|a| (0..d).map(|l| (0..k).map(|i| w[i] * inst.g[i][a][l]).sum()).collect())
            .collect();
        let norm = gram_rkhs_expansion(&inst.x, &[mixed], inst.sigma)[0][0];
        assert!(close_rel(u.quadratic_form(&w), norm, 1e-10, 1e-10));
    }
}

#[test]
fn fused_pass_matches_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    for _ in 0..100 {
        let inst = Instance::random(&mut rng);
        let kern = RbfKernel::new(inst.sigma).unwrap();
        let (field, u) = directions_and_gram(&inst.particles(), &inst.scores(), &kern).unwrap();
        let reference = directions_from_scores(&inst.particles(), &inst.scores(), &kern).unwrap();
        assert_eq!(field, reference);
        let oracle = gram_term_by_term(&inst.x, &inst.g, inst.sigma);
        let scale = max_abs(&oracle);
        for i in 0..oracle.len() {
            for j in 0..oracle.len() {
                assert!((u.get(i, j) - oracle[i][j]).abs() <= 1e-12 * scale, "{} vs {}", u.get(i, j), oracle[i][j]);
            }
        }
    }
}
