use std::path::Path;
use std::process::{Command, Output};

use qpmc_cli::{parse_config, CliError, CommandKind};
use serde_json::Value;

fn qpmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qpmc"))
        .args(args)
        .env("QPMC_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn record(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("stdout is a JSON record")
}

fn argv(s: &str) -> Vec<&str> {
    std::iter::once("qpmc").chain(s.split_whitespace()).collect()
}

fn config_err(s: &str) -> String {
    match parse_config(argv(s)) {
        Err(CliError::Config(m)) => m,
        other => panic!("expected a config error for `{s}`, got {other:?}"),
    }
}

#[test]
fn parses_documented_examples() {
    let c = parse_config(argv("spectrum --metric product:k=2 --n 256")).unwrap();
    assert_eq!(c.command, CommandKind::Spectrum);
    assert_eq!(c.n, 256);
    assert_eq!(c.metric_field().k(), 2);

    let c = parse_config(argv("solve-leaf --metric bump:eps=0.01,seed=7 --z 0,0")).unwrap();
    assert_eq!(c.z.as_deref(), Some(&[0.0, 0.0][..]));

    assert!(config_err("foliate --metric warped --dz 0").contains("dz must be positive"));
}

#[test]
fn rejects_bad_input() {
    assert!(matches!(parse_config(argv("frobnicate")), Err(CliError::Usage(_))));
    assert!(config_err("spectrum --metric warped --z 0,0").contains("components"));
    assert!(config_err("spectrum --metric nope").contains("unknown metric"));
    assert!(config_err("solve-leaf --metric warped --tol=-1").contains("positive"));
    assert!(config_err("foliate --metric warped --dz 0.5 --box=-1,1").contains("out-dir"));
    assert!(config_err("spectrum").contains("--metric"));
    let c = parse_config(argv("solve-leaf --metric warped --z -0.5")).unwrap();
    assert_eq!(c.z, Some(vec![-0.5]));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("run.toml");
    std::fs::write(&p, "metric = \"warped\"\nn = 64\ntol = 1e-11\n").unwrap();
    let c = parse_config(argv(&format!("solve-leaf --config {} --n 32", p.display()))).unwrap();
    assert_eq!(c.n, 32);
    assert_eq!(c.solver.tol_residual, 1e-11);
    assert_eq!(c.metric_field().k(), 1);

    std::fs::write(&p, "metric = \"warped\"\ncount = 3\n").unwrap();
    let msg = config_err(&format!("solve-leaf --config {}", p.display()));
    assert!(msg.contains("count"), "{msg}");
    std::fs::write(&p, "metric = \"warped\"\nbogus = 1\n").unwrap();
    config_err(&format!("spectrum --config {}", p.display()));
}

#[test]
fn spectrum_record_shape() {
    let o = qpmc(&["spectrum", "--metric", "product:k=2", "--n", "64", "--count", "6"]);
    assert_eq!(code(&o), 0);
    let r = record(&o);
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["config"]["command"], "spectrum");
    let ev: Vec<f64> = serde_json::from_value(r["payload"]["eigenvalues"].clone()).unwrap();
    for (got, want) in ev.iter().zip([0.0, 0.0, 1.0, 1.0, 1.0, 1.0]) {
        assert!((got - want).abs() < 1e-8, "{ev:?}");
    }
    assert_eq!(r["payload"]["rank_q"], 2);
}

#[test]
fn payload_is_deterministic() {
    let args = [
        "solve-leaf",
        "--metric",
        "bump:eps=0.01,seed=7,k=2",
        "--n",
        "64",
        "--probe-trials",
        "3",
        "--seed",
        "5",
    ];
    let a = record(&qpmc(&args));
    let b = record(&qpmc(&args));
    assert_eq!(a["status"]["exit_code"], 0);
    assert_eq!(
        serde_json::to_string(&a["payload"]).unwrap(),
        serde_json::to_string(&b["payload"]).unwrap()
    );
}

#[test]
fn exit_config_error() {
    let o = qpmc(&["spectrum", "--metric", "product:k=0"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    assert_eq!(code(&qpmc(&["nonsense"])), 2);
}

#[test]
fn exit_degenerate_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("neg.json");
    std::fs::write(&p, r#"{"schema_version":1,"k":1,"terms":[{"row":1,"col":1,"coef":-2.0,"powers":[]}]}"#).unwrap();
    let spec = format!("file:{}", p.display());
    let o = qpmc(&["spectrum", "--metric", &spec, "--n", "32"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let r = record(&o);
    assert_eq!(r["status"]["exit_code"], 3);
    assert_eq!(r["input_hashes"].as_object().unwrap().len(), 1);
}

#[test]
fn exit_gap_collapse() {
    let o = qpmc(&["spectrum", "--metric", "twisted:alpha=3.141592653589793", "--n", "64"]);
    assert_eq!(code(&o), 4);
    // payload is still written
    assert!(record(&o)["payload"]["eigenvalues"].is_array());
}

#[test]
fn exit_solver_divergence() {
    let o = qpmc(&[
        "solve-leaf",
        "--metric",
        "bump:eps=0.01,seed=7,k=2",
        "--n",
        "64",
        "--max-iters",
        "1",
    ]);
    assert_eq!(code(&o), 5, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn exit_verification_failure() {
    // a displaced leaf is not QPMC, so its QPMC variation cannot be checked
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("leaf.csv");
    let mut text = String::from("x,u1,u2\n");
    let n = 64;
    for i in 0..n {
        let x = i as f64 * std::f64::consts::TAU / n as f64;
        text += &format!("{x:?},{:?},{:?}\n", 0.1 * x.cos(), 0.05 * (2.0 * x).sin());
    }
    std::fs::write(&p, text).unwrap();
    let o = qpmc(&[
        "verify-variations",
        "--metric",
        "bump:eps=0.01,seed=7,k=2",
        "--leaf",
        p.to_str().unwrap(),
        "--formulas",
        "qpmc_variation",
    ]);
    assert_eq!(code(&o), 6, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn exit_io_error() {
    let o = qpmc(&["examples", "--out", "/nonexistent-dir/x/record.json"]);
    assert_eq!(code(&o), 1);
    let o = qpmc(&["spectrum", "--metric", "warped", "--leaf", "/nonexistent-leaf.json"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn examples_lists_catalog() {
    let o = qpmc(&["examples"]);
    assert_eq!(code(&o), 0);
    let names: Vec<String> = record(&o)["payload"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["name"].as_str().unwrap().to_string())
        .collect();
    for n in ["product", "warped", "bump", "twisted", "berger", "file"] {
        assert!(names.iter().any(|m| m == n), "{names:?}");
    }
}

#[test]
fn foliate_then_core_from_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fol");
    let rec = dir.path().join("rec.json");
    let o = qpmc(&[
        "foliate",
        "--metric",
        "bump:eps=0.01,seed=7,k=2",
        "--box=-0.5,0.5",
        "--dz",
        "0.5",
        "--n",
        "32",
        "--out-dir",
        out.to_str().unwrap(),
        "--out",
        rec.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&rec).unwrap()).unwrap();
    assert_eq!(r["payload"]["leaves"].as_array().unwrap().len(), 9);
    assert_eq!(r["payload"]["diffeo"]["pass"], true);
    assert!(Path::new(&out.join("leaf_0001_0001.json")).exists());

    let csv = dir.path().join("core.csv");
    let o = qpmc(&["core", "--from", out.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = record(&o);
    assert_eq!(r["payload"]["samples"].as_array().unwrap().len(), 9);
    // index plus nine leaf files
    assert_eq!(r["input_hashes"].as_object().unwrap().len(), 10);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some("z1,z2,c1,c2,cx"));
    assert_eq!(text.lines().count(), 10);

    let o = qpmc(&["core", "--from", out.to_str().unwrap(), "--dz", "0.5"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn solve_leaf_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("solve.json");
    let csv = dir.path().join("leaf.csv");
    let base = ["--metric", "bump:eps=0.01,seed=7,k=2", "--n", "64"];
    let mut a = vec!["solve-leaf"];
    a.extend(base);
    a.extend(["--out", rec.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    assert_eq!(code(&qpmc(&a)), 0);

    // the stored solution is already converged
    let mut b = vec!["solve-leaf"];
    b.extend(base);
    b.extend(["--init", rec.to_str().unwrap()]);
    let r = record(&qpmc(&b));
    assert_eq!(r["payload"]["solution"]["iterations"], 0);

    let mut c = vec!["spectrum"];
    c.extend(["--metric", "bump:eps=0.01,seed=7,k=2", "--leaf", csv.to_str().unwrap()]);
    let r = record(&qpmc(&c));
    assert_eq!(r["status"]["exit_code"], 0);
    assert_eq!(r["payload"]["n"], 64);
}

#[test]
fn thread_cap_must_be_positive() {
    let o = Command::new(env!("CARGO_BIN_EXE_qpmc"))
        .args(["examples"])
        .env("QPMC_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

proptest::proptest! {
    #[test]
    fn z_flag_round_trips(z in proptest::collection::vec(-1e6f64..1e6, 2)) {
        let text: Vec<String> = z.iter().map(|v| format!("{v:?}")).collect();
        let c = parse_config(vec!["qpmc", "solve-leaf", "--metric", "product:k=2", "--z", &text.join(",")]).unwrap();
        proptest::prop_assert_eq!(c.z, Some(z));
    }

    #[test]
    fn nonpositive_steps_are_rejected(dz in -10.0f64..=0.0) {
        let flag = format!("--dz={dz:?}");
        let r = parse_config(vec!["qpmc", "foliate", "--metric", "warped", "--box=-1,1", &flag, "--out-dir", "x"]);
        proptest::prop_assert!(matches!(r, Err(CliError::Config(_))));
    }
}
