mod common;

use common::close_rel;
use mtsgd::metrics::brier;
use mtsgd::mtl::{
    ensemble_predict, gaussian_blobs, head_score, shared_score, synthetic_regression, train, train_observed,
    Activation, Label, Loss, Mlp, MtlArchitecture, MtlEnsemble, MtlModel, TaskDataset, TaskHead, TaskLabels,
    TrainConfig, TrainEvent,
};
use mtsgd::{BandwidthMode, Optimizer, StepConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent dense forward pass: output plus the smallest |pre-activation|
/// feeding a ReLU (finite differences are unreliable near a kink).
fn oracle_forward(sizes: &[usize], acts: &[Activation], params: &[f64], x: &[f64]) -> (Vec<f64>, f64) {
    let mut h = x.to_vec();
    let mut off = 0;
    let mut nearest_kink = f64::INFINITY;
    for l in 0..acts.len() {
        let (ni, no) = (sizes[l], sizes[l + 1]);
        let mut z = vec![0.0; no];
        for o in 0..no {
            z[o] = params[off + no * ni + o];
            for i in 0..ni {
                z[o] += params[off + o * ni + i] * h[i];
            }
        }
        off += no * ni + no;
        h = match acts[l] {
            Activation::Identity => z,
            Activation::Relu => {
                nearest_kink = z.iter().fold(nearest_kink, |m, v| m.min(v.abs()));
                z.into_iter().map(|v| if v > 0.0 { v } else { 0.0 }).collect()
            }
        };
    }
    (h, nearest_kink)
}

fn oracle_loss(loss: Loss, out: &[f64], y: &[f64], class: usize) -> f64 {
    match loss {
        Loss::Squared => out.iter().zip(y).map(|(o, t)| (o - t).powi(2)).sum(),
        Loss::CrossEntropy => {
            let m = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            m + out.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - out[class]
        }
    }
}

fn random_act<R: Rng>(rng: &mut R) -> Activation {
    if rng.random_bool(0.5) {
        Activation::Relu
    } else {
        Activation::Identity
    }
}

#[test]
fn network_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut checked = 0;
    while checked < 100 {
        let depth = rng.random_range(1..=3);
        let sizes: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=4)).collect();
        let acts: Vec<Activation> = (0..depth).map(|_| random_act(&mut rng)).collect();
        let loss = if rng.random_bool(0.5) || sizes[depth] < 2 { Loss::Squared } else { Loss::CrossEntropy };
        let net = Mlp::new(&sizes, &acts).unwrap();
        let params: Vec<f64> = (0..net.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..sizes[depth]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let class = rng.random_range(0..sizes[depth]);
        if oracle_forward(&sizes, &acts, &params, &x).1 < 1e-3 {
            continue;
        }
        let label = match loss {
            Loss::Squared => Label::Values(&y),
            Loss::CrossEntropy => Label::Class(class),
        };
        let cache = net.forward(&params, &x).unwrap();
        let (value, grad_out) = loss.value_and_grad(cache.output(), label).unwrap();
        let mut grad = vec![0.0; params.len()];
        let grad_in = net.backward(&params, &cache, &grad_out, &mut grad);

        let f = |p: &[f64]| oracle_loss(loss, &oracle_forward(&sizes, &acts, p, &x).0, &y, class);
        assert!(close_rel(value, f(&params), 1e-12, 1e-12));
        let fd = common::fd_gradient(f, &params, 1e-5);
        for (a, b) in grad.iter().zip(&fd) {
            assert!(close_rel(*a, *b, 1e-4, 1e-6), "{a} vs {b} ({sizes:?} {acts:?} {loss:?})");
        }
        let fd_in = common::fd_gradient(|xi| oracle_loss(loss, &oracle_forward(&sizes, &acts, &params, xi).0, &y, class), &x, 1e-5);
        for (a, b) in grad_in.iter().zip(&fd_in) {
            assert!(close_rel(*a, *b, 1e-4, 1e-6));
        }
        checked += 1;
    }
}

fn random_arch<R: Rng>(rng: &mut R) -> (MtlArchitecture, Vec<usize>, Vec<Activation>, Vec<(Vec<usize>, Vec<Activation>)>) {
    let trunk_sizes = vec![3, rng.random_range(2..=5)];
    let trunk_acts = vec![random_act(rng)];
    let width = trunk_sizes[1];
    let mut heads = Vec::new();
    let mut shapes = Vec::new();
    for loss in [Loss::Squared, Loss::CrossEntropy] {
        let out = if loss == Loss::Squared { 1 } else { 3 };
        let (sizes, acts) = if rng.random_bool(0.5) {
            (vec![width, out], vec![Activation::Identity])
        } else {
            (vec![width, 3, out], vec![random_act(rng), Activation::Identity])
        };
        heads.push(TaskHead { net: Mlp::new(&sizes, &acts).unwrap(), loss });
        shapes.push((sizes, acts));
    }
    let trunk = Mlp::new(&trunk_sizes, &trunk_acts).unwrap();
    (MtlArchitecture::new(trunk, heads).unwrap(), trunk_sizes, trunk_acts, shapes)
}

#[test]
fn ensemble_gradients_match_finite_differences_through_trunk_and_heads() {
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    let mut checked = 0;
    while checked < 100 {
        let (arch, ts, ta, shapes) = random_arch(&mut rng);
        let ens = MtlEnsemble::init(arch, 1, rng.random()).unwrap();
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (yr, yc) = (rng.random_range(-1.0..1.0), rng.random_range(0..3usize));
        let data = TaskDataset::new(
            3,
            x.clone(),
            vec![TaskLabels::Regression(vec![yr]), TaskLabels::Classification { classes: 3, labels: vec![yc] }],
        )
        .unwrap();
        let m = &ens.members()[0];
        let task = rng.random_range(0..2);
        let (hs, ha) = &shapes[task];
        let loss = if task == 0 { Loss::Squared } else { Loss::CrossEntropy };
        let (feat, k1) = oracle_forward(&ts, &ta, &m.shared, &x);
        if k1 < 1e-3 || oracle_forward(hs, ha, &m.heads[task], &feat).1 < 1e-3 {
            continue;
        }
        let g = ens.batch_gradients(0, task, &data, &[0]).unwrap();
        let total = |alpha: &[f64], beta: &[f64]| {
            let (f, _) = oracle_forward(&ts, &ta, alpha, &x);
            oracle_loss(loss, &oracle_forward(hs, ha, beta, &f).0, &[yr], yc)
        };
        let fd_a = common::fd_gradient(|a| total(a, &m.heads[task]), &m.shared, 1e-5);
        let fd_b = common::fd_gradient(|b| total(&m.shared, b), &m.heads[task], 1e-5);
        for (a, b) in g.shared.iter().zip(&fd_a).chain(g.head.iter().zip(&fd_b)) {
            assert!(close_rel(*a, *b, 1e-4, 1e-6), "{a} vs {b}");
        }
        checked += 1;
    }
}

fn regression_setup(members: usize) -> (MtlEnsemble, TaskDataset) {
    let data = synthetic_regression(48, 4, 2, 0.5, 0.1, 3).unwrap();
    let arch = MtlArchitecture::dense(&[4, 6], &[(1, Loss::Squared), (1, Loss::Squared)]).unwrap();
    (MtlEnsemble::init(arch, members, 9).unwrap(), data)
}

#[test]
fn minibatch_scores_average_to_full_score() {
    let (ens, data) = regression_setup(3);
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let batches = data.batches(12, &mut rng);
    let all: Vec<usize> = (0..data.len()).collect();
    for task in 0..2 {
        for scorer in [shared_score, head_score] {
            let full = scorer(&ens, task, &data, &all).unwrap();
            let mut mean = vec![vec![0.0; full[0].len()]; full.len()];
            for b in &batches {
                for (acc, s) in mean.iter_mut().zip(scorer(&ens, task, &data, b).unwrap()) {
                    for (a, v) in acc.iter_mut().zip(s) {
                        *a += v / batches.len() as f64;
                    }
                }
            }
            let scale = full.iter().flatten().fold(1.0_f64, |m, v| m.max(v.abs()));
            for (a, b) in mean.iter().flatten().zip(full.iter().flatten()) {
                assert!((a - b).abs() <= 1e-10 * scale);
            }
        }
    }
}

#[test]
fn zero_residual_gives_zero_score() {
    let (ens, data) = regression_setup(1);
    // relabel with the member's own predictions
    let inputs: Vec<f64> = (0..data.len()).flat_map(|i| data.input(i).to_vec()).collect();
    let fitted = (0..2)
        .map(|t| TaskLabels::Regression((0..data.len()).map(|i| ens.member_output(0, t, data.input(i)).unwrap()[0]).collect()))
        .collect();
    let exact = TaskDataset::new(4, inputs, fitted).unwrap();
    let all: Vec<usize> = (0..exact.len()).collect();
    for t in 0..2 {
        assert!(shared_score(&ens, t, &exact, &all).unwrap()[0].iter().all(|v| *v == 0.0));
        assert!(head_score(&ens, t, &exact, &all).unwrap()[0].iter().all(|v| *v == 0.0));
    }
}

#[test]
fn duplicated_batch_leaves_score_unchanged() {
    let (ens, data) = regression_setup(2);
    let batch = [3, 7, 11];
    let twice = [3, 7, 11, 3, 7, 11];
    let a = shared_score(&ens, 1, &data, &batch).unwrap();
    let b = shared_score(&ens, 1, &data, &twice).unwrap();
    for (p, q) in a.iter().flatten().zip(b.iter().flatten()) {
        assert!(close_rel(*p, *q, 1e-12, 1e-12));
    }
}

fn plain_cfg(step: f64) -> TrainConfig {
    let step_cfg = StepConfig {
        step_size: step,
        optimizer: Optimizer::Plain,
        bandwidth: BandwidthMode::Median,
        ..StepConfig::default()
    };
    TrainConfig { shared: step_cfg, heads: step_cfg, batch_size: 16, seed: 4 }
}

#[test]
fn shared_update_precedes_head_updates() {
    let (mut ens, data) = regression_setup(2);
    let mut events = Vec::new();
    train_observed(&mut ens, &data, 2, &plain_cfg(1e-4), |e| events.push(e)).unwrap();
    let mut expect = Vec::new();
    for epoch in 0..2 {
        for iter in 0..3 {
            expect.push(TrainEvent::Shared { epoch, iter });
            for task in 0..2 {
                expect.push(TrainEvent::Head { epoch, iter, task });
            }
        }
    }
    assert_eq!(events, expect);
}

#[test]
fn zero_epochs_leave_ensemble_unchanged() {
    let (mut ens, data) = regression_setup(3);
    let before = ens.clone();
    let hist = train(&mut ens, &data, 0, &plain_cfg(1e-3)).unwrap();
    assert_eq!(ens, before);
    assert_eq!(hist.losses.iter().map(Vec::len).collect::<Vec<_>>(), vec![1, 1]);
}

#[test]
fn single_member_single_task_is_plain_sgd() {
    let data = synthetic_regression(40, 3, 1, 0.3, 0.1, 5).unwrap();
    let arch = MtlArchitecture::dense(&[3, 5], &[(1, Loss::Squared)]).unwrap();
    let mut ens = MtlEnsemble::init(arch, 1, 6).unwrap();
    let cfg = plain_cfg(1e-3);
    let mut alpha = ens.members()[0].shared.clone();
    let mut beta = ens.members()[0].heads[0].clone();
    let probe = ens.clone();

    // hand-written loop: ascend the scaled log-likelihood, trunk then head
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..3 {
        for batch in data.batches(cfg.batch_size, &mut rng) {
            let scale = data.len() as f64 / batch.len() as f64;
            let model = |a: &[f64], b: &[f64]| {
                MtlEnsemble::new(probe.architecture().clone(), vec![MtlModel { shared: a.to_vec(), heads: vec![b.to_vec()] }]).unwrap()
            };
            let g = model(&alpha, &beta).batch_gradients(0, 0, &data, &batch).unwrap();
            for (p, v) in alpha.iter_mut().zip(&g.shared) {
                *p += 1e-3 * (-scale * v);
            }
            let g = model(&alpha, &beta).batch_gradients(0, 0, &data, &batch).unwrap();
            for (p, v) in beta.iter_mut().zip(&g.head) {
                *p += 1e-3 * (-scale * v);
            }
        }
    }
    train(&mut ens, &data, 3, &cfg).unwrap();
    for (a, b) in ens.members()[0].shared.iter().zip(&alpha).chain(ens.members()[0].heads[0].iter().zip(&beta)) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn regression_toy_trains_with_nonnegative_margins() {
    let (mut ens, data) = regression_setup(3);
    let cfg = TrainConfig {
        shared: StepConfig { step_size: 3e-3, ..StepConfig::default() },
        heads: StepConfig { step_size: 3e-3, ..StepConfig::default() },
        batch_size: 16,
        seed: 1,
    };
    let hist = train(&mut ens, &data, 30, &cfg).unwrap();
    assert!(hist.shared_margins.iter().all(|m| *m >= -1e-6));
    for series in &hist.losses {
        assert!(series.last().unwrap() < &(0.5 * series[0]), "{series:?}");
    }
}

fn ensemble_brier(ens: &MtlEnsemble, data: &TaskDataset, task: usize) -> f64 {
    let TaskLabels::Classification { classes, labels } = data.task(task) else { unreachable!() };
    let probs: Vec<f64> = (0..data.len()).flat_map(|i| ensemble_predict(ens, task, data.input(i)).unwrap()).collect();
    brier(&probs, *classes, labels).unwrap()
}

#[test]
fn classification_toy_brier_improves_at_checkpoints() {
    let data = gaussian_blobs(200, 1.5, 0.8, 8).unwrap();
    let arch = MtlArchitecture::dense(&[2, 8], &[(2, Loss::CrossEntropy), (2, Loss::CrossEntropy)]).unwrap();
    let mut ens = MtlEnsemble::init(arch, 5, 2).unwrap();
    let cfg = plain_cfg(1e-4);
    let mut last: Vec<f64> = (0..2).map(|t| ensemble_brier(&ens, &data, t)).collect();
    for checkpoint in 0..4 {
        let cfg = TrainConfig { seed: checkpoint, ..cfg };
        train(&mut ens, &data, 5, &cfg).unwrap();
        for (t, prev) in last.iter_mut().enumerate() {
            let now = ensemble_brier(&ens, &data, t);
            assert!(now <= *prev, "task {t} checkpoint {checkpoint}: {now} > {prev}");
            *prev = now;
        }
    }
    assert!(last.iter().all(|b| *b < 0.2), "{last:?}");
}

#[test]
fn regression_ensemble_prediction_is_member_mean() {
    let (ens, data) = regression_setup(4);
    let x = data.input(5);
    let hand: f64 = (0..4).map(|m| ens.member_output(m, 1, x).unwrap()[0]).sum::<f64>() / 4.0;
    assert!((ensemble_predict(&ens, 1, x).unwrap()[0] - hand).abs() < 1e-12);

    let same = MtlEnsemble::new(ens.architecture().clone(), vec![ens.members()[0].clone(); 3]).unwrap();
    assert!((ensemble_predict(&same, 0, x).unwrap()[0] - ens.member_output(0, 0, x).unwrap()[0]).abs() < 1e-12);
}
