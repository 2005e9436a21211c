use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kafnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kafnet"))
        .args(args)
        .env_remove("KAFNET_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_data_writes_split_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let tr = dir.path().join("train.csv");
    let te = dir.path().join("test.csv");
    let o = kafnet(&["gen-data", "--n", "2000", "--seed", "7", "--out-train", s(&tr), "--out-test", s(&te)]);
    assert!(o.status.success(), "{o:?}");
    let train = fs::read_to_string(&tr).unwrap();
    assert_eq!(train.lines().count(), 1001);
    assert_eq!(fs::read_to_string(&te).unwrap().lines().count(), 1001);
    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 7"));

    let o = kafnet(&["gen-data", "--n", "2000", "--seed", "7", "--out-train", s(&tr), "--out-test", s(&te)]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(&tr).unwrap(), train);
}

#[test]
fn missing_output_is_a_usage_error() {
    let o = kafnet(&["gen-data", "--n", "100", "--out-test", "x.csv"]);
    assert_eq!(o.status.code(), Some(2));
    let o = kafnet(&["gen-data", "--n", "7", "--out-train", "/tmp/never_a.csv", "--out-test", "/tmp/never_b.csv"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_from_environment_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let run = |extra: &[&str], env_seed: Option<&str>, out: &str| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_kafnet"));
        cmd.args(["gen-data", "--n", "20"]).args(extra);
        cmd.args(["--out-train", s(&p(out)), "--out-test", s(&p("te.csv"))]);
        cmd.env_remove("KAFNET_SEED");
        if let Some(v) = env_seed {
            cmd.env("KAFNET_SEED", v);
        }
        assert!(cmd.output().unwrap().status.success());
        fs::read_to_string(p(out)).unwrap()
    };
    let explicit = run(&["--seed", "11"], None, "a.csv");
    assert_eq!(run(&[], Some("11"), "b.csv"), explicit);
    assert_ne!(run(&[], None, "c.csv"), explicit);
    fs::write(p("cfg.txt"), "# comment\nseed = 11\n").unwrap();
    assert_eq!(run(&["--config", s(&p("cfg.txt"))], Some("3"), "d.csv"), explicit);
    // flags win over the config file
    assert_ne!(run(&["--config", s(&p("cfg.txt")), "--seed", "12"], None, "e.csv"), explicit);
}

#[test]
fn bounds_worked_example() {
    let args = [
        "bounds", "--m", "2", "--a", "1", "--w", "1", "--b", "0", "--alpha", "1", "--d", "2", "--r", "3",
        "--gamma", "1", "--widths", "2,2",
    ];
    let o = kafnet(&args);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("layer 1: X=2 Y=1 Z=0"), "{out}");
    assert!(out.contains("layer 2: X=4 Y=40 Z=408"), "{out}");

    let mut csv = args.to_vec();
    csv.push("--csv");
    let out = stdout(&kafnet(&csv));
    assert!(out.starts_with("quantity,layer,value\n"));
    assert!(out.contains("Y,2,40\n") && out.contains("Z,2,408\n"));
}

#[test]
fn bounds_reports_violated_gamma_and_stability() {
    let o = kafnet(&[
        "bounds", "--gamma", "0.005", "--widths", "10,2", "--d", "20", "--lipschitz", "1", "--smoothness", "1",
        "--c", "0.01", "--steps", "1000", "--n", "1000",
    ]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("max hidden width = 10: VIOLATED (gamma H^2 = 0.5)"), "{out}");
    assert!(out.contains("max(widths, D) = 20: ok"), "{out}");
    assert!(out.contains("stability epsilon = 0.00225066"), "{out}");
    let o = kafnet(&["bounds", "--gamma", "-1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_catches_sign_flip() {
    let o = kafnet(&["gradcheck", "--trials", "5"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("5/5 passed, max rel err < 1e-6"));
    let o = kafnet(&["gradcheck", "--trials", "2", "--inject-sign-flip"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("trial 0 failed at "));
}

#[test]
fn train_writes_series_model_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let tr = dir.path().join("train.csv");
    let te = dir.path().join("test.csv");
    assert!(kafnet(&["gen-data", "--n", "200", "--out-train", s(&tr), "--out-test", s(&te)]).status.success());
    let out = dir.path().join("run");
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "steps = 7\ngamma = 0.5\n").unwrap();
    let o = kafnet(&["train", "--train", s(&tr), "--test", s(&te), "--out-dir", s(&out), "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(out.join("gap.csv")).unwrap().lines().count(), 8);
    let model = fs::read_to_string(out.join("model.kafnet")).unwrap();
    assert!(model.starts_with("kafnet v1 m=4 Q=2 D=20 R=3"));
    assert!(fs::read_to_string(out.join("manifest.txt")).unwrap().contains("gamma = 0.5"));

    let o = kafnet(&[
        "train", "--train", s(&tr), "--test", s(&te), "--out-dir", s(&out), "--config", s(&cfg), "--steps", "3",
        "--project", "1,1,1",
    ]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(out.join("gap.csv")).unwrap().lines().count(), 4);

    let o = kafnet(&["bounds", "--model", s(&out.join("model.kafnet")), "--data", s(&tr), "--csv"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("X,2,"));
}

#[test]
fn reproduce_writes_both_series() {
    let dir = tempfile::tempdir().unwrap();
    let o = kafnet(&["reproduce-fig1", "--steps", "40", "--out-dir", s(dir.path())]);
    assert!(matches!(o.status.code(), Some(0) | Some(1)));
    for f in ["gap_gamma_1.0.csv", "gap_gamma_0.005.csv", "summary.txt", "manifest.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let csv = fs::read_to_string(dir.path().join("gap_gamma_1.0.csv")).unwrap();
    assert_eq!(csv.lines().count(), 41);
    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("t_steps = 40") && manifest.contains("seed = 0"));
}
