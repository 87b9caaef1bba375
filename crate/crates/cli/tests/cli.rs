use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_hamsense");

const BASE_CONFIG: &str = "\
schema_version = 1
master_seed = 11

[model]
kind = \"planted\"
n = 2
s = 3

[experiment]
outcomes = \"linearized\"

[benchmark]
m_grid = [12]
trials = 1
";

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn benchmark_outputs_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), BASE_CONFIG);
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");

    for out in [&out_a, &out_b] {
        let o = run(&["benchmark", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    }
    let a = fs::read(out_a.join("trials.csv")).unwrap();
    let b = fs::read(out_b.join("trials.csv")).unwrap();
    assert_eq!(a, b);
    assert!(String::from_utf8(a)
        .unwrap()
        .starts_with("m,trial,seed,performance,residual_l2,iterations,converged,wall_time_ms"));
    assert!(out_a.join("summary.csv").exists());
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), BASE_CONFIG);
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");

    let o = run(&["benchmark", "--config", &cfg, "--out", out_a.to_str().unwrap()]);
    assert!(o.status.success());
    let o = run(&[
        "benchmark", "--config", &cfg, "--seed", "12", "--out", out_b.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_ne!(
        fs::read(out_a.join("trials.csv")).unwrap(),
        fs::read(out_b.join("trials.csv")).unwrap()
    );
}

#[test]
fn simulate_then_estimate_recovers_planted_support() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), BASE_CONFIG);
    let model_dir = tmp.path().join("model");
    let sys_dir = tmp.path().join("system");
    let est_dir = tmp.path().join("estimate");

    let o = run(&["model", "--config", &cfg, "--out", model_dir.to_str().unwrap()]);
    assert!(o.status.success());
    let o = run(&[
        "simulate", "--config", &cfg, "--m", "20", "--out", sys_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    for f in ["phi.csv", "pbar.csv", "meta.toml"] {
        assert!(sys_dir.join(f).exists(), "{f} missing");
    }
    let o = run(&[
        "estimate",
        "--system",
        sys_dir.to_str().unwrap(),
        "--epsilon",
        "1e-8",
        "--out",
        est_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));

    let support = |path: &Path| -> Vec<usize> {
        fs::read_to_string(path)
            .unwrap()
            .lines()
            .skip(1)
            .filter(|l| {
                let v: f64 = l.split(',').nth(1).unwrap().parse().unwrap();
                v.abs() > 1e-3
            })
            .map(|l| l.split(',').next().unwrap().parse().unwrap())
            .collect()
    };
    assert_eq!(
        support(&model_dir.join("model.csv")),
        support(&est_dir.join("h_star.csv"))
    );
}

#[test]
fn estimate_requires_a_residual_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), BASE_CONFIG);
    let sys_dir = tmp.path().join("system");
    let o = run(&[
        "simulate", "--config", &cfg, "--m", "12", "--out", sys_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success());

    let o = run(&["estimate", "--system", sys_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epsilon"));
}

#[test]
fn estimate_signals_non_convergence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), BASE_CONFIG);
    let sys_dir = tmp.path().join("system");
    let o = run(&[
        "simulate", "--config", &cfg, "--m", "12", "--out", sys_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success());

    let starved = format!("{BASE_CONFIG}\n[solver]\nmax_iters = 1\n");
    let cfg2 = tmp.path().join("starved.toml");
    fs::write(&cfg2, starved).unwrap();
    let o = run(&[
        "estimate",
        "--system",
        sys_dir.to_str().unwrap(),
        "--epsilon",
        "1e-15",
        "--config",
        cfg2.to_str().unwrap(),
        "--out",
        tmp.path().join("e").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn malformed_config_reports_location_and_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("{BASE_CONFIG}\nbogus_key = 3\n"));
    let o = run(&["benchmark", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));
}

#[test]
fn certify_writes_increment_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "schema_version = 1\nmaster_seed = 3\n\n[model]\nkind = \"planted\"\nn = 2\ns = 3\n\n[experiment]\noutcomes = \"linearized\"\n\n[solver]\nepsilon = 1e-9\n",
    );
    let out = tmp.path().join("cert");
    let o = run(&["certify", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("certification.csv")).unwrap();
    assert!(text.starts_with("trial,m_from,m_to,increment,certified,threshold"));
    assert!(text.lines().count() > 1);
}
