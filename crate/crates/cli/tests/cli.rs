use std::path::Path;
use std::process::Command;

use serde_json::Value;

const DATA: &str = "tests/fixtures/and2.csv";
const MODEL: &str = "tests/fixtures/and2_model.json";

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn lens(args: &[&str]) -> Run {
    lens_env(args, &[])
}

fn lens_env(args: &[&str], env: &[(&str, &str)]) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lens"));
    cmd.current_dir(env!("CARGO_MANIFEST_DIR")).args(args).env_remove("LENS_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn json(run: &Run) -> Value {
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);
    serde_json::from_str(&run.stdout).expect("stdout is JSON")
}

fn error_kind(run: &Run) -> String {
    let v: Value = serde_json::from_str(run.stderr.trim()).expect("stderr is a JSON error");
    assert_eq!(v["schemaVersion"], 1);
    v["error"]["kind"].as_str().unwrap().to_string()
}

fn and2_args<'a>(cmd: &'a str, rest: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd, "--data", DATA, "--model", MODEL];
    v.extend_from_slice(rest);
    v
}

/// The AND2 reference-to-input context enumerated by hand: the input (1,1)
/// is written into each of the four grid rows at every target set.
struct And2Oracle {
    /// (target set as a bit mask, label); all points weigh the same.
    points: Vec<(u8, u8)>,
}

impl And2Oracle {
    fn new() -> Self {
        let mut points = vec![];
        for mask in 0..4u8 {
            for (r0, r1) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let x0 = if mask & 1 == 1 { 1 } else { r0 };
                let x1 = if mask & 2 == 2 { 1 } else { r1 };
                points.push((mask, x0 & x1));
            }
        }
        And2Oracle { points }
    }

    fn ps(&self, mask: u8) -> (usize, usize) {
        let sel: Vec<_> = self.points.iter().filter(|p| p.0 == mask).collect();
        (sel.iter().filter(|p| p.1 == 1).count(), sel.len())
    }

    /// Minimal nonempty masks with PS >= tau, and PN of their supersets.
    fn explain(&self, tau: f64) -> (Vec<u8>, f64) {
        let passes = |m: u8| {
            let (a, b) = self.ps(m);
            a as f64 / b as f64 >= tau
        };
        let minimal: Vec<u8> = (1..4u8)
            .filter(|&m| passes(m) && !(1..4u8).any(|s| s != m && s & m == s && passes(s)))
            .collect();
        let covered = |m: u8| minimal.iter().any(|&c| m != 0 && m & c == c);
        let ones: Vec<_> = self.points.iter().filter(|p| p.1 == 1).collect();
        let hit = ones.iter().filter(|p| covered(p.0)).count();
        let pn = if minimal.is_empty() { 0.0 } else { hit as f64 / ones.len() as f64 };
        (minimal, pn)
    }
}

fn mask_of(targets: &Value) -> u8 {
    targets.as_array().unwrap().iter().map(|t| 1u8 << t.as_u64().unwrap()).sum()
}

#[test]
fn explain_and2_matches_enumeration() {
    let v = json(&lens(&and2_args("explain", &["--input", "1,1", "--tau", "0.9"])));
    let (minimal, pn) = And2Oracle::new().explain(0.9);
    let cands = v["result"]["candidates"].as_array().unwrap();
    let got: Vec<u8> = cands.iter().map(|c| mask_of(&c["factor"]["targets"])).collect();
    assert_eq!(got, minimal);
    assert_eq!(got, vec![3]);
    assert_eq!(cands[0]["ps"], 1.0);
    assert_eq!(v["result"]["cumulativePN"].as_f64().unwrap(), pn);
    assert_eq!(pn, 4.0 / 9.0);
}

#[test]
fn reports_carry_version_and_effective_config() {
    let v = json(&lens(&and2_args("explain", &["--row", "3", "--tau", "0.5"])));
    assert_eq!(v["schemaVersion"], 1);
    let cfg = &v["config"];
    assert_eq!(cfg["input"], serde_json::json!([1.0, 1.0]));
    assert_eq!(cfg["outcome"], 1);
    assert_eq!(cfg["context"], "r2i");
    assert_eq!(cfg["order"], "subset");
    assert_eq!(cfg["maxTargetCardinality"], 2);
    assert_eq!(cfg["estimation"]["mode"], "exact");
}

#[test]
fn summary_goes_to_stdout_when_writing_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let run = lens(&and2_args("explain", &["--input", "1,1", "--tau", "0.9", "--output", out.to_str().unwrap()]));
    assert_eq!(run.code, 0);
    assert!(run.stdout.contains("cumulative PN 0.444444"), "{}", run.stdout);
    assert!(run.stdout.contains("targets = {x1, x2}"));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(v["command"], "explain");
}

fn parse_sweep(csv: &str) -> Vec<(f64, usize, f64)> {
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("tau,candidateCount,cumulativePN"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn sweep_matches_enumeration_at_each_threshold() {
    let run = lens(&and2_args("sweep-tau", &["--row", "3", "--taus", "0,0.6,0.95"]));
    assert_eq!(run.code, 0, "{}", run.stderr);
    let rows = parse_sweep(&run.stdout);
    let oracle = And2Oracle::new();
    for (tau, count, pn) in &rows {
        let (minimal, want) = oracle.explain(*tau);
        assert_eq!(*count, minimal.len());
        assert_eq!(*pn, want);
    }
    let pns: Vec<f64> = rows.iter().map(|r| r.2).collect();
    assert_eq!(pns, vec![8.0 / 9.0, 4.0 / 9.0, 4.0 / 9.0]);
}

#[test]
fn single_threshold_sweep_equals_explain() {
    for tau in ["0.3", "0.6", "1"] {
        let sweep = lens(&and2_args("sweep-tau", &["--row", "3", "--taus", tau]));
        let rows = parse_sweep(&sweep.stdout);
        assert_eq!(rows.len(), 1);
        let v = json(&lens(&and2_args("explain", &["--row", "3", "--tau", tau])));
        assert_eq!(rows[0].1, v["result"]["candidates"].as_array().unwrap().len());
        assert_eq!(rows[0].2, v["result"]["cumulativePN"].as_f64().unwrap());
    }
}

#[test]
fn sweep_writes_csv_and_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, report) = (dir.path().join("sweep.csv"), dir.path().join("sweep.json"));
    let run = lens(&and2_args(
        "sweep-tau",
        &["--row", "3", "--taus", "0,0.5", "--output", csv.to_str().unwrap(), "--report", report.to_str().unwrap()],
    ));
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(parse_sweep(&std::fs::read_to_string(csv).unwrap()).len(), 2);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(v["config"]["taus"], serde_json::json!([0.0, 0.5]));
    assert_eq!(v["result"].as_array().unwrap().len(), 2);
}

fn config_file(dir: &Path, body: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn sweep_threshold_lists_are_validated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_file(dir.path(), &format!(r#"{{"data":"{DATA}","model":"{MODEL}","row":3,"taus":[]}}"#));
    let run = lens(&["sweep-tau", "--config", &cfg]);
    assert_eq!(run.code, 1);
    assert_eq!(error_kind(&run), "InvalidConfig");
    assert!(run.stderr.contains("empty"));

    let run = lens(&and2_args("sweep-tau", &["--row", "3", "--taus", "0.6,0.2"]));
    assert_eq!(run.code, 1);
    assert!(run.stderr.contains("ascending"));
}

/// Exact Shapley values by averaging marginal contributions over all
/// orderings, with `v(S)` = fraction of grid rows predicted 1 after writing
/// the input into the features of `S`.
fn and2_shapley(input: [u8; 2]) -> [f64; 2] {
    let v = |mask: u8| {
        let hits = [(0, 0), (0, 1), (1, 0), (1, 1)]
            .iter()
            .filter(|&&(a, b)| {
                let x0 = if mask & 1 == 1 { input[0] } else { a };
                let x1 = if mask & 2 == 2 { input[1] } else { b };
                x0 & x1 == 1
            })
            .count();
        hits as f64 / 4.0
    };
    let phi0 = ((v(1) - v(0)) + (v(3) - v(2))) / 2.0;
    let phi1 = ((v(2) - v(0)) + (v(3) - v(1))) / 2.0;
    [phi0, phi1]
}

#[test]
fn shapley_and2() {
    let v = json(&lens(&and2_args("shapley", &["--input", "1,1"])));
    let phi: Vec<f64> = v["result"]["phi"].as_array().unwrap().iter().map(|p| p.as_f64().unwrap()).collect();
    assert_eq!(phi, and2_shapley([1, 1]).to_vec());
    assert_eq!(phi, vec![0.375, 0.375]);
    assert!(v["result"].get("valueCache").is_none());

    let verbose = json(&lens(&and2_args("shapley", &["--input", "1,1", "--verbose", "true"])));
    assert_eq!(verbose["result"]["valueCache"]["[0,1]"], 1.0);
}

#[test]
fn recourse_and2_sets_the_second_feature() {
    let v = json(&lens(&and2_args("recourse", &["--input", "1,0", "--tau", "0.9"])));
    let r = &v["result"];
    assert_eq!(r["targetOutcome"], 1);
    assert_eq!(r["chosen"]["variant"], "FullIntervention");
    assert_eq!(r["chosen"]["assignments"], serde_json::json!({"1": 1.0}));
    assert_eq!(r["ps"], 1.0);
    assert_eq!(v["config"]["order"], "cost:normalized-l1");
}

/// Noisy-or by abduction: given X=1, Y=1 the noise posterior is the prior
/// on U (both values explain Y=1), and under do(X=0) Y equals U.
fn noisy_or_oracle() -> (f64, f64) {
    let p_u1 = 0.25;
    // X=0, Y=0 forces U=0, and do(X=1) gives Y=1 always
    let suf = 1.0;
    let nec = 1.0 - p_u1;
    (suf, nec)
}

#[test]
fn pearl_noisy_or() {
    let v = json(&lens(&["pearl", "--scm", "tests/fixtures/noisy_or.json", "--cause", "X", "--effect", "Y"]));
    let (suf, nec) = noisy_or_oracle();
    assert_eq!(v["result"]["suf"].as_f64().unwrap(), suf);
    assert_eq!(v["result"]["nec"].as_f64().unwrap(), nec);
    assert_eq!(v["config"]["causeValue"], 1);

    let by_index = json(&lens(&["pearl", "--scm", "tests/fixtures/noisy_or.json", "--cause", "0", "--effect", "2"]));
    assert_eq!(by_index["result"], v["result"]);

    let impossible = lens(&[
        "pearl", "--scm", "tests/fixtures/noisy_or.json", "--cause", "X", "--effect", "Y", "--effect-value", "0",
    ]);
    assert_eq!(impossible.code, 1);
    assert_eq!(error_kind(&impossible), "ZeroConditioningProbability");
}

#[test]
fn out_of_range_tau_is_a_config_error() {
    let run = lens(&and2_args("explain", &["--input", "1,1", "--tau", "1.1"]));
    assert_eq!(run.code, 1);
    assert_eq!(error_kind(&run), "InvalidConfig");
    assert!(run.stdout.is_empty());
}

#[test]
fn missing_model_file() {
    let run = lens(&["explain", "--data", DATA, "--model", "tests/fixtures/absent.json", "--row", "0", "--tau", "0.5"]);
    assert_eq!(run.code, 1);
    assert_eq!(error_kind(&run), "ModelLoad");
}

#[test]
fn missing_required_fields_and_bad_flags() {
    let run = lens(&["explain", "--data", DATA, "--row", "0", "--tau", "0.5"]);
    assert_eq!((run.code, error_kind(&run)), (1, "InvalidConfig".into()));
    let run = lens(&and2_args("explain", &["--row", "0"]));
    assert_eq!((run.code, error_kind(&run)), (1, "InvalidConfig".into()));
    let run = lens(&and2_args("explain", &["--row", "9", "--tau", "0.5"]));
    assert_eq!((run.code, error_kind(&run)), (1, "InvalidConfig".into()));
    let run = lens(&and2_args("explain", &["--row", "0", "--tau", "0.5", "--no-such-flag"]));
    assert_eq!((run.code, error_kind(&run)), (1, "InvalidConfig".into()));
    let run = lens(&and2_args("explain", &["--input", "1,1,1", "--tau", "0.5"]));
    assert_eq!((run.code, error_kind(&run)), (1, "ArityMismatch".into()));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_file(
        dir.path(),
        &format!(r#"{{"data":"{DATA}","model":"{MODEL}","input":[1,1],"tau":0.9}}"#),
    );
    let from_file = json(&lens(&["explain", "--config", &cfg]));
    assert_eq!(from_file["config"]["tau"], 0.9);
    let overridden = json(&lens(&["explain", "--config", &cfg, "--tau", "0.4"]));
    assert_eq!(overridden["config"]["tau"], 0.4);
    let (minimal, pn) = And2Oracle::new().explain(0.4);
    assert_eq!(overridden["result"]["candidates"].as_array().unwrap().len(), minimal.len());
    assert_eq!(overridden["result"]["cumulativePN"].as_f64().unwrap(), pn);

    let bad = config_file(dir.path(), r#"{"tua": 0.5}"#);
    let run = lens(&["explain", "--config", &bad]);
    assert_eq!((run.code, error_kind(&run)), (1, "ConfigLoad".into()));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let args = [
        "explain", "--data", DATA, "--model", MODEL, "--input", "1,1", "--tau", "0.6", "--estimation", "mc",
        "--samples", "500", "--seed", "11", "--alpha", "0.05", "--output", out.to_str().unwrap(),
    ];
    let mut texts = vec![];
    for _ in 0..2 {
        let run = lens(&args);
        assert_eq!(run.code, 0, "{}", run.stderr);
        texts.push(std::fs::read(&out).unwrap());
        std::fs::remove_file(&out).unwrap();
    }
    assert_eq!(texts[0], texts[1]);

    let shapley = ["shapley", "--data", DATA, "--model", MODEL, "--row", "3", "--shapley-mode", "permutation", "--seed", "5"];
    assert_eq!(lens(&shapley).stdout, lens(&shapley).stdout);
}

#[test]
fn seed_falls_back_to_the_environment() {
    let args = and2_args("explain", &["--row", "3", "--tau", "0.5", "--estimation", "mc", "--samples", "100"]);
    let v = json(&lens_env(&args, &[("LENS_SEED", "42")]));
    assert_eq!(v["config"]["estimation"]["seed"], 42);
    let v = json(&lens(&args));
    assert_eq!(v["config"]["estimation"]["seed"], 0);
    let mut with_flag = args.clone();
    with_flag.extend(["--seed", "7"]);
    let v = json(&lens_env(&with_flag, &[("LENS_SEED", "42")]));
    assert_eq!(v["config"]["estimation"]["seed"], 7);
    let run = lens_env(&args, &[("LENS_SEED", "many")]);
    assert_eq!((run.code, error_kind(&run)), (1, "InvalidConfig".into()));
}

#[test]
fn external_model_command() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("and.py");
    std::fs::write(
        &script,
        "import json, sys\nfor line in sys.stdin:\n    xs = json.loads(line)\n    print(json.dumps([int(x[0] >= 1 and x[1] >= 1) for x in xs]), flush=True)\n",
    )
    .unwrap();
    let v = json(&lens(&[
        "explain", "--data", DATA, "--input", "1,1", "--tau", "0.9", "--external-model", "python3",
        script.to_str().unwrap(),
    ]));
    assert_eq!(v["result"]["cumulativePN"].as_f64().unwrap(), 4.0 / 9.0);
    assert_eq!(v["config"]["externalModel"][0], "python3");
}
