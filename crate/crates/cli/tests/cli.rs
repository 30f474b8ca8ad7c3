use std::path::Path;
use std::process::{Command, Output};

fn dplens(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dplens"))
        .args(args)
        .current_dir(dir)
        .env_remove("DPLENS_OUT")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(i).unwrap().parse().unwrap()).collect()
}

const SMALL: &str = r#"{
  "schema": 1,
  "seeds": [0, 1, 2],
  "train": {"steps": 40, "eval_every": 10, "sigma": 0.5},
  "fourway": {
    "pretrain_steps": 50,
    "fourway": {"optimizer": {"eta": 0.05}, "steps": 30, "batch": 8,
                "rule": {"kind": "re_param", "r": 5.0}, "sigma": 0.5,
                "eval_every": 10, "eval_size": 64}
  },
  "mia": {"dim": 40, "members": 80, "nondp_steps": 50, "dp_epochs": 2, "attack_epochs": 10}
}"#;

#[test]
fn missing_config_exits_1_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = dplens(dir.path(), &["calibrate", "--config", "nope.json", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
}

#[test]
fn unknown_subcommand_and_bad_config_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dplens(dir.path(), &["frobnicate"]).status.code(), Some(1));
    write(dir.path(), "bad.json", r#"{"schema": 1, "trian": {}}"#);
    let out = dplens(dir.path(), &["predict", "--config", "bad.json", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
    write(dir.path(), "v2.json", r#"{"schema": 2}"#);
    let out = dplens(dir.path(), &["predict", "--config", "v2.json", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn infeasible_budget_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "c.json",
        r#"{"schema": 1,
            "budget": {"epsilon": 1e-4, "delta": 1e-12, "dataset_size": 100, "samples": 10000000},
            "calibrate": {"batches": [100]}}"#,
    );
    let out = dplens(dir.path(), &["calibrate", "--config", "c.json", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn calibrate_csv_layout_and_shape() {
    let dir = tempfile::tempdir().unwrap();
    let out = dplens(dir.path(), &["calibrate", "--out", "o"]);
    assert!(out.status.success());
    let csv = read(dir.path(), "o/calibrate.csv");
    assert!(csv.starts_with("B,T,sigma,mu,epsilon,delta\n"));
    assert!(!csv.contains('\r'));
    let sigma = column(&csv, "sigma");
    let b = column(&csv, "B");
    assert!(sigma.windows(2).all(|w| w[0] < w[1]));
    // σ²/B decreases and flattens relative to B
    let ratio: Vec<f64> = sigma.iter().zip(&b).map(|(s, b)| s * s / b).collect();
    assert!(ratio.windows(2).all(|w| w[1] <= w[0]));
    assert!(dir.path().join("o/calibrate.svg").exists());
}

#[test]
fn fig_breakdown_marks_optimal_batches() {
    let dir = tempfile::tempdir().unwrap();
    let out = dplens(dir.path(), &["fig-breakdown", "--out", "o"]);
    assert!(out.status.success());
    for (stage, expected) in [("pretrain", 707.106_781_186_547_5), ("finetune", 70.710_678_118_654_76)] {
        let csv = read(dir.path(), &format!("o/breakdown_{stage}.csv"));
        let b_star = column(&csv, "B_star")[0];
        assert!((b_star - expected).abs() < 1e-9 * expected);
        assert!(column(&csv, "B").contains(&b_star));
        // at B* the curvature and noise terms balance
        let b = column(&csv, "B");
        let i = b.iter().position(|&x| x == b_star).unwrap();
        let ghg = column(&csv, "gHg_term")[i];
        let dec = column(&csv, "decelerator")[i];
        assert!((ghg - dec).abs() < 1e-9 * dec);
        assert!(dir.path().join(format!("o/breakdown_{stage}.svg")).exists());
    }
}

#[test]
fn predict_and_sweep_share_header() {
    let dir = tempfile::tempdir().unwrap();
    assert!(dplens(dir.path(), &["predict", "--out", "o"]).status.success());
    assert!(dplens(dir.path(), &["sweep-batch", "--out", "o"]).status.success());
    let header = "B,delta_pub_star,delta_priv_star,decelerator,B_star,alpha_star\n";
    assert!(read(dir.path(), "o/predict.csv").starts_with(header));
    let sweep = read(dir.path(), "o/sweep_batch.csv");
    assert!(sweep.starts_with(header));
    assert_eq!(sweep.lines().count(), 62);
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dplens"))
        .arg("predict")
        .current_dir(dir.path())
        .env("DPLENS_OUT", "from_env")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("from_env/predict.csv").exists());
}

#[test]
fn stochastic_subcommands_reproducible_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "small.json", SMALL);
    for cmd in ["train", "continual", "fourway", "mia"] {
        for (out_dir, jobs) in [("a", "1"), ("b", "3")] {
            let out = dplens(
                dir.path(),
                &[cmd, "--config", "small.json", "--out", out_dir, "--jobs", jobs],
            );
            assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        }
    }
    let mut names: Vec<_> = std::fs::read_dir(dir.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() > 20);
    for name in names {
        let a = std::fs::read(dir.path().join("a").join(&name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(&name)).unwrap();
        assert_eq!(a, b, "{name:?} differs between --jobs 1 and 3");
    }
}

#[test]
fn seed_flag_selects_single_seed() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "small.json", SMALL);
    let out = dplens(dir.path(), &["mia", "--config", "small.json", "--seed", "5", "--out", "o"]);
    assert!(out.status.success());
    let csv = read(dir.path(), "o/mia.csv");
    assert!(csv.starts_with("model_id,epsilon,accuracy,precision,recall,f1,auc\n"));
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.contains("nondp_seed5,inf,"));
    assert!(dir.path().join("o/mia_seed5.csv").exists());
}

#[test]
fn oracle_requires_quadratic_task() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "mlp.json",
        r#"{"schema": 1, "task": {"kind": "tiny_mlp", "input": 4, "hidden": 4,
            "teacher_hidden": 4, "noise_std": 0.1, "teacher_gain": 2.0}}"#,
    );
    let out = dplens(dir.path(), &["oracle", "--config", "mlp.json", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
}
