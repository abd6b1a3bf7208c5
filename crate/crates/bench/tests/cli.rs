use std::fs;
use std::path::Path;
use std::process::Command;

fn bench() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mtsgd-bench"))
}

fn run_with(dir: &Path, sub: &str, config: &str, extra: &[&str]) -> std::process::Output {
    let cfg = dir.join(format!("{sub}.cfg"));
    fs::write(&cfg, config).unwrap();
    bench()
        .arg(sub)
        .arg("--config")
        .arg(&cfg)
        .args(extra)
        .output()
        .unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = "experiment = sample3mix\nparticles = 12\niterations = 40\nseed = 5\n";
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = run_with(tmp.path(), "sample3mix", cfg, &["--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["trajectory.csv", "weights.csv", "metrics.csv"] {
        assert_eq!(read(&a, name), read(&b, name), "{name}");
    }
    // timing is wall-clock and only needs the fixed schema
    assert!(read(&a, "timing.csv").starts_with("phase,milliseconds\n"));
    assert!(!a.join(".trajectory.csv.tmp").exists());

    let traj = read(&a, "trajectory.csv");
    assert_eq!(traj.lines().next().unwrap(), "iteration,particle_id,x_1,x_2,logp_1,logp_2,logp_3");
    assert_eq!(traj.lines().count(), 1 + 41 * 12);
    let weights = read(&a, "weights.csv");
    assert_eq!(weights.lines().next().unwrap(), "iteration,w_1,w_2,w_3,qp_objective,kkt_margin");
    assert_eq!(weights.lines().count(), 1 + 40);
    for row in weights.lines().skip(1) {
        let margin: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!(margin >= -1e-6);
    }
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = "experiment = sample3mix\nparticles = 6\niterations = 3\nseed = 1\n";
    let outs: Vec<_> = ["1", "2"]
        .iter()
        .map(|s| {
            let out = tmp.path().join(s);
            let o = run_with(tmp.path(), "sample3mix", cfg, &["--out", out.to_str().unwrap(), "--seed", s]);
            assert!(o.status.success());
            read(&out, "trajectory.csv")
        })
        .collect();
    let from_config = tmp.path().join("cfg");
    run_with(tmp.path(), "sample3mix", cfg, &["--out", from_config.to_str().unwrap()]);
    assert_eq!(read(&from_config, "trajectory.csv"), outs[0]);
    assert_ne!(outs[0], outs[1]);
}

#[test]
fn zdt3_rows_have_thirty_coordinates_inside_the_box() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("z");
    let cfg = "experiment = zdt3\nparticles = 5\niterations = 20\nrecord_every = 5\nlr = 0.05\n";
    let o = run_with(tmp.path(), "zdt3", cfg, &["--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let traj = read(&out, "trajectory.csv");
    let header: Vec<&str> = traj.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 2 + 30 + 2);
    assert_eq!(traj.lines().count(), 1 + 5 * 5);
    for row in traj.lines().skip(1) {
        for v in row.split(',').skip(2).take(30) {
            let v: f64 = v.parse().unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn runtime_sweep_records_both_methods() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    let cfg = "experiment = bench_runtime\nsweep = 5, 10\niterations = 3\n";
    let o = run_with(tmp.path(), "bench_runtime", cfg, &["--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let table = read(&out, "runtime.csv");
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!((rows[0][0], rows[0][1], rows[0][3]), ("mtsgd", "5", "3"));
    assert_eq!((rows[1][0], rows[1][1], rows[1][3]), ("per_particle_baseline", "5", "15"));
    assert_eq!((rows[3][1], rows[3][3]), ("10", "30"));
}

#[test]
fn mtl_toy_writes_loss_history() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("m");
    let cfg = "experiment = mtl_toy\nepochs = 2\nsamples = 64\nbatch_size = 32\nhidden = 8\n";
    let o = run_with(tmp.path(), "mtl_toy", cfg, &["--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let losses = read(&out, "losses.csv");
    assert_eq!(losses.lines().next().unwrap(), "epoch,loss_1,loss_2");
    assert_eq!(losses.lines().count(), 1 + 3);
    assert_eq!(read(&out, "weights.csv").lines().count(), 1 + 2 * 2);

    let cls = tmp.path().join("c");
    let cfg = "experiment = mtl_toy\nepochs = 1\nsamples = 64\nbatch_size = 32\nhidden = 8\ntask_kind = classification\n";
    let o = run_with(tmp.path(), "mtl_toy", cfg, &["--out", cls.to_str().unwrap()]);
    assert!(o.status.success());
    let metrics = read(&cls, "metrics.csv");
    assert!(metrics.contains("\nbrier_1,") && metrics.contains("\nece_2,"));
}

#[test]
fn other_methods_and_custom_targets_run() {
    let tmp = tempfile::tempdir().unwrap();
    for method in ["svgd_per_target", "mgda", "per_particle_baseline"] {
        let out = tmp.path().join(method);
        let cfg = format!(
            "experiment = custom\nmethod = {method}\nparticles = 7\niterations = 5\n\
             target = 0.5 | 1 1 0\ntarget = 0.5 | 1 -1 0 | 1 0 2\n"
        );
        let o = run_with(tmp.path(), "custom", &cfg, &["--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{method}: {}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(read(&out, "trajectory.csv").lines().count(), 1 + 6 * 7, "{method}");
    }
}

#[test]
fn config_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        ("sample3mix", "experiment = sample3mix\nbogus = 1\n", "'bogus'"),
        ("sample3mix", "", "experiment missing"),
        ("zdt3", "experiment = zdt3\nlr = -1\n", "step size"),
        ("zdt3", "experiment = sample3mix\n", "requested"),
        ("custom", "experiment = custom\n", "target"),
        ("sample3mix", "experiment = sample3mix\nparticles = many\n", "line 2"),
    ];
    for (sub, cfg, needle) in cases {
        let o = run_with(tmp.path(), sub, cfg, &["--out", tmp.path().join("x").to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{cfg}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(needle), "{err}");
    }
}

#[test]
fn numerical_failure_exits_with_code_three() {
    let tmp = tempfile::tempdir().unwrap();
    // a tiny variance with a huge plain step overflows the particles
    let cfg = "experiment = custom\noptimizer = plain\nlr = 1e300\nparticles = 3\niterations = 5\n\
               target = 1e-6 | 1 0\n";
    let o = run_with(tmp.path(), "custom", cfg, &["--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn thread_count_variable_is_honoured() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = "experiment = sample3mix\nparticles = 16\niterations = 10\n";
    let mut outs = Vec::new();
    for threads in ["1", "3"] {
        let out = tmp.path().join(threads);
        let cfg_path = tmp.path().join("t.cfg");
        fs::write(&cfg_path, cfg).unwrap();
        let o = bench()
            .env("MTSGD_THREADS", threads)
            .args(["sample3mix", "--config", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(o.status.success());
        outs.push(read(&out, "trajectory.csv"));
    }
    assert_eq!(outs[0], outs[1]);
    let o = bench().env("MTSGD_THREADS", "lots").arg("sample3mix").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}
