use std::fs;
use std::path::Path;
use std::process::Command;

fn polgrad(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_polgrad"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const CONJ: &str = r#"
replicas = 2
base_seed = 11

[environment]
id = "three-state"

[policy]
id = "three-state-softmax"

[estimator]
betas = [0.0]
steps = [64]

[optimizer]
s0 = 100.0
max_iterations = 20
"#;

#[test]
fn conjpomdp_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "conj.toml", CONJ);
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = polgrad(&["conjpomdp-train", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        outputs.push((
            fs::read(out.join("metrics.csv")).unwrap(),
            fs::read_to_string(out.join("manifest.toml")).unwrap(),
        ));
    }
    assert_eq!(outputs[0].0, outputs[1].0);
    let csv = String::from_utf8(outputs[0].0.clone()).unwrap();
    assert!(csv.starts_with("replica,env_steps,beta,T,metric,value\n"));
    assert!(csv.lines().any(|l| l.starts_with("1,") && l.contains(",reward,")));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "conj.toml", CONJ);
    let run = |seed: &str, out: &str| {
        let out = dir.path().join(out);
        let o = polgrad(&[
            "conjpomdp-train", "--config", &cfg, "--seed", seed, "--replicas", "1", "--out", out.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        (fs::read(out.join("metrics.csv")).unwrap(), fs::read_to_string(out.join("manifest.toml")).unwrap())
    };
    let (a, manifest) = run("5", "a");
    let (b, _) = run("6", "b");
    assert_ne!(a, b);
    assert!(manifest.contains("base_seed = 5"));
    assert!(manifest.contains("replicas = 1"));
}

#[test]
fn bad_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &CONJ.replace("three-state-softmax", "no-such-policy"));
    assert_eq!(polgrad(&["conjpomdp-train", "--config", &cfg]).status.code(), Some(1));

    let missing = dir.path().join("missing.toml");
    assert_eq!(
        polgrad(&["baseline-eval", "--config", missing.to_str().unwrap()]).status.code(),
        Some(1)
    );

    let typed = write_config(dir.path(), "typed.toml", &format!("kind = \"beta-probe\"\n{CONJ}"));
    assert_eq!(polgrad(&["conjpomdp-train", "--config", &typed]).status.code(), Some(1));
}

#[test]
fn replica_fault_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    // OLPOMDP with a huge step diverges past the parameter cap.
    let body = r#"
replicas = 1
[environment]
id = "three-state"
[policy]
id = "three-state-softmax"
[estimator]
betas = [0.0]
steps = [10000]
[olpomdp]
step_size = 1e12
"#;
    let cfg = write_config(dir.path(), "div.toml", body);
    let out = dir.path().join("out");
    let o = polgrad(&["olpomdp-train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("fault = "));
}

#[test]
fn every_kind_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (
            "gradient-sweep",
            "[environment]\nid = \"three-state\"\n[policy]\nid = \"three-state-softmax\"\n[estimator]\nbetas = [0.0, 0.8]\nsteps = [128, 512]\n",
        ),
        (
            "beta-probe",
            "[environment]\nid = \"three-state\"\n[policy]\nid = \"three-state-softmax\"\n[estimator]\nbetas = [0.0, 0.5, 0.9]\nsteps = [100, 200, 400, 800, 1600, 3200]\n",
        ),
        (
            "olpomdp-train",
            "[environment]\nid = \"three-state\"\n[policy]\nid = \"three-state-softmax\"\n[estimator]\nsteps = [1000]\n",
        ),
        (
            "baseline-eval",
            "[environment]\nid = \"call-admission\"\n[policy]\nid = \"threshold-admission\"\n[evaluation]\nsteps = 20000\n",
        ),
        (
            "conjpomdp-train",
            "[environment]\nid = \"puck-flat\"\n[policy]\nid = \"mlp\"\nhidden = 2\n[estimator]\nbetas = [0.9]\nsteps = [200]\n[optimizer]\nmax_iterations = 2\n[evaluation]\nsteps = 1000\n",
        ),
    ];
    for (kind, body) in cases {
        let cfg = write_config(dir.path(), &format!("{kind}.toml"), body);
        let out = dir.path().join(kind);
        let o = polgrad(&[kind, "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{kind}: {}", String::from_utf8_lossy(&o.stderr));
        let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
        assert!(csv.lines().count() > 1, "{kind} wrote no rows");
    }
}
