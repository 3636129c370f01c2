use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cvsurrogate"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn gen(dir: &Path, name: &str, cv: &str, generator: &str, n: &str) -> std::path::PathBuf {
    let out = dir.join(name);
    let o = run(&["gen-data", "--cv", cv, "--generator", generator, "--n", n, "--seed", "7", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "a.txt", "distance", "uniform", "500");
    let b = gen(dir.path(), "b.txt", "distance", "uniform", "500");
    let ta = std::fs::read(&a).unwrap();
    assert_eq!(ta, std::fs::read(&b).unwrap());
    let text = String::from_utf8(ta).unwrap();
    assert_eq!(text.lines().count(), 501);
    assert!(text.starts_with("# cvsurrogate-dataset v1 cv=distance D=6"));
    assert!(dir.path().join("a.txt.config.toml").exists());

    let c = gen(dir.path(), "c.txt", "coordination", "structured", "50");
    assert_eq!(std::fs::read_to_string(c).unwrap().lines().count(), 51);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.txt");
    let o = run(&["gen-data", "--cv", "distance", "--generator", "uniform", "--n", "0", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["gen-data", "--cv", "distance", "--generator", "lattice", "--n", "5", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["gen-data", "--cv", "distance", "--n", "5", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--generator"));
    let o = run(&["train", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_lists_units() {
    for (cmd, unit) in [
        ("gen-data", "[nm]"),
        ("train", "[epochs]"),
        ("eval", "[count]"),
        ("jacobian", "--analytical"),
        ("pipeline", "[amu]"),
    ] {
        let o = run(&[cmd, "--help"]);
        assert!(o.status.success());
        let text = String::from_utf8(o.stdout).unwrap();
        assert!(text.contains(unit), "{cmd}: {text}");
        assert!(text.contains("--config"));
    }
}

#[test]
fn train_eval_jacobian_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.txt", "distance", "uniform", "400");
    let run_dir = dir.path().join("run");
    let o = run(&[
        "train",
        "--data",
        s(&data),
        "--out-dir",
        s(&run_dir),
        "--max-epochs",
        "3",
        "--batch-size",
        "64",
        "--seed",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = run_dir.join("model.ckpt");
    let report = std::fs::read_to_string(run_dir.join("training_report.toml")).unwrap();
    assert!(report.contains("epochs_run = 3"));
    assert!(!report.contains("wall_time_s"));
    let config = std::fs::read_to_string(run_dir.join("config.toml")).unwrap();
    assert!(config.contains("[train]") && config.contains("max_epochs = 3"));

    let eval_dir = dir.path().join("eval");
    let o = run(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--out-dir", s(&eval_dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    for key in ["RMSE", "MAE", "RMSE (J)", "MAE (J)"] {
        assert!(stdout.contains(key));
    }
    let rep = std::fs::read_to_string(eval_dir.join("eval_report.toml")).unwrap();
    assert!(rep.contains("rows = 80"));
    for f in ["value_heatmap.txt", "jacobian_heatmap.txt", "value_error_histogram.csv", "fd_crosscheck.toml"] {
        assert!(eval_dir.join(f).exists(), "{f}");
    }

    let jac = dir.path().join("j.csv");
    let o = run(&["jacobian", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&jac)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&jac).unwrap();
    assert_eq!(text.lines().count(), 402);
    assert_eq!(text.lines().nth(2).unwrap().split(',').count(), 8);

    // coordination data against a distance checkpoint
    let cn = gen(dir.path(), "c.txt", "coordination", "uniform", "20");
    let o = run(&["eval", "--checkpoint", s(&ckpt), "--data", s(&cn), "--out-dir", s(&eval_dir)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_epochs_keeps_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.txt", "distance", "uniform", "100");
    let a = dir.path().join("a");
    let o = run(&["train", "--data", s(&data), "--out-dir", s(&a), "--max-epochs", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = std::fs::read_to_string(a.join("training_report.toml")).unwrap();
    assert!(report.contains("epochs_run = 0"));
}

#[test]
fn train_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.txt");
    let o = run(&["train", "--data", s(&missing), "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.txt"));

    let data = gen(dir.path(), "d.txt", "distance", "uniform", "50");
    let out = dir.path().join("r");
    let o = run(&["train", "--data", s(&data), "--out-dir", s(&out), "--cv", "coordination"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.join("model.ckpt").exists());
}

#[test]
fn config_file_supplies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let out = dir.path().join("d.txt");
    std::fs::write(
        &cfg,
        format!(
            "[gen-data]\ncv = \"distance\"\ngenerator = \"uniform\"\nn = 40\nseed = 1\nout = \"{}\"\n",
            s(&out)
        ),
    )
    .unwrap();
    let o = run(&["gen-data", "--config", s(&cfg), "--n", "30"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 31);
    let resolved = std::fs::read_to_string(dir.path().join("d.txt.config.toml")).unwrap();
    assert!(resolved.contains("n = 30") && resolved.contains("seed = 1"));

    // the resolved file alone reproduces the output
    let before = std::fs::read(&out).unwrap();
    let o = run(&["gen-data", "--config", s(&dir.path().join("d.txt.config.toml"))]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(&out).unwrap(), before);
}

#[test]
fn oracle_self_test_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "c.txt", "coordination", "structured", "200");
    let out = dir.path().join("e");
    let o = run(&["eval", "--oracle", "--data", s(&data), "--out-dir", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rep = std::fs::read_to_string(out.join("eval_report.toml")).unwrap();
    for key in ["value_rmse", "value_mae", "jacobian_rmse", "jacobian_mae"] {
        assert!(rep.contains(&format!("{key} = 0.0\n")), "{key}\n{rep}");
    }
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d.txt", "distance", "uniform", "50");
    let r = dir.path().join("r");
    assert!(run(&["train", "--data", s(&data), "--out-dir", s(&r), "--max-epochs", "0"]).status.success());
    let ckpt = r.join("model.ckpt");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes[0] ^= 0xff;
    std::fs::write(&ckpt, bytes).unwrap();
    let o = run(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--out-dir", s(&r)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad checkpoint header"));
}

fn write_traj(path: &Path, frames: &[[f64; 6]]) {
    let mut t = String::from("# cvsurrogate-trajectory v1 dt=0.002 D=6 cv=distance L=2.7\n");
    for f in frames {
        let row: Vec<String> = f.iter().map(|v| v.to_string()).collect();
        t.push_str(&row.join(","));
        t.push('\n');
    }
    std::fs::write(path, t).unwrap();
}

#[test]
fn pipeline_constant_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("t.txt");
    write_traj(&traj, &[[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]; 8]);
    let out = dir.path().join("icf.csv");
    let o = run(&["pipeline", "--trajectory", s(&traj), "--analytical", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("mode=analytical"));
    let rows: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(rows.len(), 8);
    for r in &rows[1..7] {
        let f: f64 = r.split(',').nth(4).unwrap().parse().unwrap();
        assert!(f.abs() < 1e-10);
    }

    let short = dir.path().join("s.txt");
    write_traj(&short, &[[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]; 3]);
    let o = run(&["pipeline", "--trajectory", s(&short), "--analytical", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("at least 5 frames"));

    let o = run(&["pipeline", "--trajectory", s(&traj), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
}
