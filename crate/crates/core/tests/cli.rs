use std::path::Path;
use std::process::Command;

use delayoc::cli::format::{parse_candidate, parse_problem};
use delayoc::cli::{run, EXIT_CHECK_FAILED, EXIT_INPUT, EXIT_OK};
use delayoc::corpus;
use delayoc::sufficiency::{verify_all, VerifyOptions};

struct Output {
    code: i32,
    out: String,
    err: String,
}

fn delayoc(args: &[&str]) -> Output {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("delayoc").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    Output { code, out: String::from_utf8(out).unwrap(), err: String::from_utf8(err).unwrap() }
}

fn export(dir: &Path, name: &str) {
    let res = delayoc(&["example", name, "--export", dir.to_str().unwrap()]);
    assert_eq!(res.code, EXIT_OK, "{}", res.err);
}

fn path(dir: &Path, file: &str) -> String {
    dir.join(file).to_str().unwrap().to_string()
}

#[test]
fn check_prints_the_lattice() {
    let dir = tempfile::tempdir().unwrap();
    export(dir.path(), "gollmann");
    let res = delayoc(&["check", &path(dir.path(), "gollmann.toml")]);
    assert_eq!(res.code, EXIT_OK);
    assert_eq!(res.out, "h = 1/2, k = 2, l = 4, N = 6, b~ = 3\n");
    assert_eq!(delayoc(&["check", "@lq_riccati"]).out, "h = 1, k = 0, l = 0, N = 1, b~ = 1\n");
}

#[test]
fn lift_dumps_the_wiring_table() {
    let res = delayoc(&["lift", "@gollmann"]);
    assert_eq!(res.code, EXIT_OK);
    assert!(res.out.starts_with("lattice: h = 1/2, k = 2, l = 4, N = 6, b~ = 3\n"));
    assert!(res.out.contains("xi[3]"));
    assert!(res.out.contains("theta[1]"));
}

#[test]
fn example_run_all_passes_every_row() {
    for name in corpus::names() {
        let res = delayoc(&["example", name, "--run-all"]);
        assert_eq!(res.code, EXIT_OK, "{}", res.out);
        assert!(!res.out.contains("FAIL"));
    }
    let res = delayoc(&["example", "gollmann", "--run-all"]);
    assert!(res.out.contains("2.76159415"));
    assert!(res.out.contains("verify (minus)"));
    assert!(res.out.lines().any(|l| l.starts_with("cost ") && l.contains("tanh")), "notes are shown");
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    export(dir.path(), "gollmann");
    let (p, c) = (path(dir.path(), "gollmann.toml"), path(dir.path(), "gollmann.candidate.toml"));
    let runs: Vec<Vec<&str>> = vec![
        vec!["verify", &p, &c],
        vec!["verify", &p, &c, "--convention", "auto"],
        vec!["example", "gollmann", "--run-all"],
        vec!["lift", &p],
    ];
    for args in runs {
        let first = delayoc(&args);
        let second = delayoc(&args);
        assert_eq!(first.out, second.out, "{args:?}");
        assert_eq!(first.code, second.code);
    }
    let csv1 = path(dir.path(), "a.csv");
    let csv2 = path(dir.path(), "b.csv");
    delayoc(&["simulate", &p, "--control", &c, "--out", &csv1]);
    delayoc(&["simulate", &p, "--control", &c, "--out", &csv2]);
    assert_eq!(std::fs::read(&csv1).unwrap(), std::fs::read(&csv2).unwrap());
}

#[test]
fn exported_entries_verify_identically_after_reload() {
    let dir = tempfile::tempdir().unwrap();
    for entry in corpus::all() {
        export(dir.path(), entry.name);
        let problem = parse_problem(&std::fs::read_to_string(dir.path().join(format!("{}.toml", entry.name))).unwrap()).unwrap();
        assert_eq!(problem, entry.problem);
        let text = std::fs::read_to_string(dir.path().join(format!("{}.candidate.toml", entry.name))).unwrap();
        let file = parse_candidate(&text, problem.n, problem.m).unwrap();
        let mut opts = VerifyOptions::default();
        file.settings.apply(&mut opts);
        assert_eq!(opts, entry.verify);
        let original = verify_all(&entry.problem, entry.candidate.as_ref().unwrap(), &entry.verify).unwrap();
        let reloaded = verify_all(&problem, &file.candidate, &opts).unwrap();
        assert_eq!(original, reloaded, "{}", entry.name);
        assert!(reloaded.pass);

        let by_name = delayoc(&["verify", &format!("@{}", entry.name), &format!("@{}", entry.name)]);
        let by_file = delayoc(&[
            "verify",
            &path(dir.path(), &format!("{}.toml", entry.name)),
            &path(dir.path(), &format!("{}.candidate.toml", entry.name)),
        ]);
        assert_eq!(by_name.out, by_file.out);
        assert_eq!(by_file.code, EXIT_OK);
    }
}

#[test]
fn verify_reports_text_and_key_values() {
    let res = delayoc(&["verify", "@gollmann", "@gollmann", "--convention", "auto"]);
    assert_eq!(res.code, EXIT_OK, "{}", res.out);
    assert!(res.out.contains("overall: PASS"));
    assert!(res.out.contains("note: auto picked the minus convention"));
    assert!(res.out.contains("\npass=true\n"));
    assert!(res.out.contains("maximality_convention_used=minus"));
    assert!(res.out.contains("maximality_other_gap=2.32"));

    let plus = delayoc(&["verify", "@gollmann", "@gollmann", "--convention", "plus"]);
    assert_eq!(plus.code, EXIT_CHECK_FAILED);
    assert!(plus.out.contains("pass_maximality=false"));
    assert!(!plus.out.contains("note:"));
}

#[test]
fn perturbed_value_function_fails_the_hj_check() {
    let dir = tempfile::tempdir().unwrap();
    export(dir.path(), "gollmann");
    let text = std::fs::read_to_string(dir.path().join("gollmann.candidate.toml")).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let idx = lines.iter().position(|l| l.starts_with("piece = \"1 2 :")).unwrap();
    lines[idx] = lines[idx].replacen(": ", ": 0.01 * t + ", 1);
    let broken = path(dir.path(), "broken.toml");
    std::fs::write(&broken, lines.join("\n")).unwrap();
    let res = delayoc(&["verify", &path(dir.path(), "gollmann.toml"), &broken]);
    assert_eq!(res.code, EXIT_CHECK_FAILED);
    let hj = res.out.lines().find(|l| l.starts_with("hj residual")).unwrap();
    assert!(hj.contains("FAIL"), "{hj}");
    assert!(res.out.contains("pass_hj=false"));
}

#[test]
fn simulate_writes_the_trajectory_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = path(dir.path(), "zero.csv");
    let res = delayoc(&["simulate", "@gollmann", "--control", "zero", "--step", "16", "--out", &csv]);
    assert_eq!(res.code, EXIT_OK, "{}", res.err);
    assert!(res.out.starts_with("cost = 3.000000000000\n"));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(!text.contains('\r'));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,x0,u0");
    assert_eq!(lines.len(), 1 + 6 * 16 + 1);
    assert_eq!(lines[1], "0.00000000000e0,1.00000000000e0,0.00000000000e0");
    let times: Vec<f64> = lines[1..].iter().map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert!(times.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(*times.last().unwrap(), 3.0);

    let res = delayoc(&["simulate", "@gollmann", "--control", "@gollmann", "--out", &csv]);
    let cost: f64 = res.out.lines().next().unwrap().trim_start_matches("cost = ").parse().unwrap();
    assert!((cost - 2.761594155955765).abs() < 1e-6);
}

#[test]
fn solve_reports_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = path(dir.path(), "lq.csv");
    let res = delayoc(&["solve", "@lq_riccati", "--q", "16", "--out", &csv]);
    assert_eq!(res.code, EXIT_OK, "{}{}", res.out, res.err);
    assert!(res.out.contains("converged = true"));
    let cost: f64 = res.out.lines().find_map(|l| l.strip_prefix("cost = ")).unwrap().parse().unwrap();
    assert!((cost - 1f64.tanh()).abs() < 1e-2);
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("t,x0,u0\n"));

    let capped = delayoc(&["solve", "@gollmann", "--q", "4", "--max-iter", "1", "--out", &csv]);
    assert_eq!(capped.code, EXIT_CHECK_FAILED);
    assert!(capped.out.contains("converged = false"));
}

#[test]
fn input_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = path(dir.path(), "bad.toml");
    std::fs::write(&bad, "[problem]\nn = 1\nm = 1\na = 0\nb = x\n").unwrap();
    for args in [
        vec!["check", bad.as_str()],
        vec!["check", "/nonexistent/problem.toml"],
        vec!["check", "@nosuch"],
        vec!["verify", "@gollmann", bad.as_str()],
        vec!["verify", "@gollmann", "@gollmann", "--tol-hj", "-1"],
        vec!["verify", "@gollmann", "@gollmann", "--box", "2", "-2"],
        vec!["simulate", "@gollmann", "--control", "zero", "--step", "3"],
        vec!["frobnicate"],
        vec!["check"],
    ] {
        let res = delayoc(&args);
        assert_eq!(res.code, EXIT_INPUT, "{args:?}");
        assert!(!res.err.is_empty(), "{args:?}");
        assert!(res.out.is_empty(), "{args:?}");
    }
    let res = delayoc(&["check", &bad]);
    assert!(res.err.contains("line 5"), "{}", res.err);
}

#[test]
fn invalid_problems_report_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let p = path(dir.path(), "p.toml");
    std::fs::write(
        &p,
        "[problem]\nn = 1\nm = 1\na = 0\nb = 1\nr = 0\ns = 0\nf0 = y\nf1 = 0\ng0 = 0\nphi1 = 1\npsi1 = 0\n",
    )
    .unwrap();
    let res = delayoc(&["check", &p]);
    assert_eq!(res.code, EXIT_INPUT);
    assert!(res.err.contains("degenerate"));
    assert!(res.err.contains("variable y not permitted"));
}

#[test]
fn binary_uses_the_documented_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_delayoc");
    let ok = Command::new(bin).args(["check", "@gollmann"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&ok.stdout), "h = 1/2, k = 2, l = 4, N = 6, b~ = 3\n");
    let fail = Command::new(bin).args(["verify", "@gollmann", "@gollmann", "--convention", "plus"]).output().unwrap();
    assert_eq!(fail.status.code(), Some(1));
    let bad = Command::new(bin).args(["check", "missing.toml"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).starts_with("error: "));
    let help = Command::new(bin).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
}
