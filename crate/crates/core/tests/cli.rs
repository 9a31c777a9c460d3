use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_asep-kpz"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn schema() -> jsonschema::Validator {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/schema/report.schema.json");
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

fn report(args: &[&str]) -> Value {
    let out = run(args);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let validator = schema();
    let errors: Vec<String> = validator.iter_errors(&v).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{args:?}: {errors:?}");
    v
}

fn observable(r: &Value, name: &str) -> f64 {
    r["observables"]
        .as_array()
        .unwrap()
        .iter()
        .find(|o| o["name"] == name)
        .unwrap_or_else(|| panic!("no observable {name}"))["estimate"]
        .as_f64()
        .unwrap()
}

#[test]
fn verify_residuals_are_small() {
    let r = report(&["verify", "--q", "0.5", "--rho-a", "0.7", "--rho-b", "0.3", "--n-max", "64"]);
    for (name, v) in r["diagnostics"]["residuals"].as_object().unwrap() {
        assert!(v.as_f64().unwrap() < 1e-12, "{name} = {v}");
    }
}

#[test]
fn oracle_matches_mpa() {
    let r = report(&["oracle", "--ell", "4", "--q", "0.5", "--rho-a", "0.7", "--rho-b", "0.3", "--compare", "mpa"]);
    assert!(observable(&r, "max_abs_difference") < 1e-10);
}

#[test]
fn oracle_matches_walks() {
    let r = report(&["oracle", "--ell", "3", "--q", "0.3", "--rho-a", "0.9", "--rho-b", "0.2", "--compare", "walks"]);
    assert!(observable(&r, "max_abs_difference") < 1e-10);
}

#[test]
fn negative_boundary_sum_is_rejected() {
    let out = run(&["kpz-sample", "--u", "1", "--v", "-2", "--L", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("u+v must be positive"));
}

#[test]
fn validation_and_usage_errors_exit_2() {
    assert_eq!(run(&["mpa", "--q", "0.5", "--rho-a", "0.3", "--rho-b", "0.7", "--ell", "3"]).status.code(), Some(2));
    assert_eq!(run(&["mpa", "--nonsense"]).status.code(), Some(2));
    assert_eq!(run(&["walks", "--epsilon", "3", "--L", "1", "--u", "1", "--v", "1"]).status.code(), Some(2));
    let conflict = run(&[
        "mpa", "--ell", "2", "--q", "0.5", "--alpha", "0.7", "--beta", "0.7", "--gamma", "0.15", "--delta", "0.15",
        "--rho-a", "0.6",
    ]);
    assert_eq!(conflict.status.code(), Some(2));
}

#[test]
fn oracle_size_guard() {
    let out = run(&["oracle", "--ell", "15", "--q", "0.5", "--rho-a", "0.7", "--rho-b", "0.3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_and_flag_override() {
    let dir = std::env::temp_dir().join(format!("asep-kpz-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("params.txt");
    std::fs::write(&cfg, "# model\nq = 0.5\nrho_a = 0.7\nrho_b = 0.3\nell = 3\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let a = report(&["mpa", "--config", cfg, "--profile"]);
    assert_eq!(a["params"]["ell"], 3);
    let b = report(&["mpa", "--config", cfg, "--ell", "5"]);
    assert_eq!(b["params"]["ell"], 5);
    let out_path = dir.join("out.json");
    let out = run(&["mpa", "--config", cfg, "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let written: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(written["command"], "mpa");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn every_command_emits_valid_json() {
    let model = ["--ell", "3", "--q", "0.3", "--rho-a", "0.7", "--rho-b", "0.3"];
    let with = |cmd: &str, extra: &[&str]| {
        let mut v = vec![cmd];
        v.extend_from_slice(&model);
        v.extend_from_slice(extra);
        report(&v)
    };
    with("mpa", &["--profile", "--verify"]);
    with("dynamics", &["--samples", "200"]);
    with("oracle", &["--compare", "dynamics", "--samples", "200"]);
    with("walks", &["--samples", "200"]);
    report(&["walks", "--epsilon", "0.4", "--L", "1", "--u", "1", "--v", "1", "--samples", "200"]);
    let k = report(&["kpz-sample", "--u", "1", "--v", "1", "--L", "1", "--grid", "64", "--samples", "300", "--mode", "u"]);
    assert!(k["diagnostics"]["ess"].as_f64().unwrap() > 1.0);
    report(&["converge", "--u", "1", "--v", "1", "--L", "1", "--epsilons", "0.4,0.2", "--samples", "300", "--grid", "32"]);
}

#[test]
fn csv_outputs_have_headers() {
    let cases: [(&[&str], &str); 5] = [
        (&["dynamics", "--ell", "2", "--q", "0.5", "--rho-a", "0.7", "--rho-b", "0.3", "--samples", "3"], "snapshot,t,net_left,index,tau"),
        (&["walks", "--ell", "2", "--q", "0.5", "--rho-a", "0.7", "--rho-b", "0.3", "--samples", "3"], "sample,i,n,m,height"),
        (&["walks", "--epsilon", "0.4", "--L", "1", "--u", "1", "--v", "1", "--samples", "3", "--grid", "4"], "sample,x,U_eps,V_eps,H_eps"),
        (&["kpz-sample", "--u", "1", "--v", "1", "--L", "1", "--grid", "8", "--record", "4", "--samples", "3"], "sample,x,value,log_weight,weight"),
        (&["converge", "--u", "1", "--v", "1", "--L", "1", "--samples", "50", "--grid", "16"], "observable,epsilon,estimate,stderr,n_effective"),
    ];
    for (args, header) in cases {
        let mut a = args.to_vec();
        a.extend_from_slice(&["--format", "csv"]);
        let out = run(&a);
        assert_eq!(out.status.code(), Some(0), "{a:?}");
        let text = String::from_utf8(out.stdout).unwrap();
        assert_eq!(text.lines().next(), Some(header));
        assert!(text.lines().count() > 1);
    }
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let args = ["kpz-sample", "--u", "2", "--v", "1", "--L", "1", "--grid", "128", "--samples", "2000", "--seed", "11"];
    let one = bin().args(args).env("ASEP_KPZ_THREADS", "1").output().unwrap();
    let four = bin().args(args).env("ASEP_KPZ_THREADS", "4").output().unwrap();
    assert_eq!(one.status.code(), Some(0));
    assert_eq!(one.stdout, four.stdout);
    let walks = ["walks", "--epsilon", "0.2", "--L", "1", "--u", "1", "--v", "1", "--samples", "2000", "--seed", "3"];
    let a = bin().args(walks).env("ASEP_KPZ_THREADS", "1").output().unwrap();
    let b = bin().args(walks).env("ASEP_KPZ_THREADS", "3").output().unwrap();
    assert_eq!(a.stdout, b.stdout);
}
