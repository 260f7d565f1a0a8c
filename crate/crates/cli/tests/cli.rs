use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pt_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/pt.jules")
}

fn jules(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jules"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_program(dir: &tempfile::TempDir, name: &str, src: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, src).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn run_pt_under_jit() {
    let pt = pt_path();
    let o = jules(&["run", pt.to_str().unwrap(), "--semantics", "jit"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).trim_end().ends_with("1, 1]"), "{}", stdout(&o));
}

#[test]
fn trace_leaves_outcome_alone() {
    let pt = pt_path();
    let plain = jules(&["run", pt.to_str().unwrap()]);
    let traced = jules(&["run", pt.to_str().unwrap(), "--trace", "--check-soundness"]);
    assert_eq!(plain.status.code(), traced.status.code());
    let out = stdout(&traced);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 12);
    assert_eq!(lines[0], "step 1 Prim depth=1 %0=1");
    assert_eq!(lines[2], "step 3 New depth=1 %2=Pt(1, 2)");
    assert_eq!(lines.last().unwrap(), &stdout(&plain).trim_end());
    assert!(stderr(&traced).is_empty());
}

#[test]
fn analyze_reports_stable_and_grounded() {
    let pt = pt_path();
    let o = jules(&["analyze", pt.to_str().unwrap(), "--method", "f", "--sig", "Pt"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["stable"], true);
    assert_eq!(v["grounded"], true);
    assert_eq!(v["return_type"], "Int");

    let all = jules(&["analyze", pt.to_str().unwrap(), "--all"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&all)).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 4);
}

#[test]
fn infer_and_stats_emit_json() {
    let pt = pt_path();
    let o = jules(&["infer", pt.to_str().unwrap(), "--method", "f", "--sig", "APt"]);
    assert_eq!(stdout(&o).trim(), r#"["APt","Int","Any"]"#);
    let o = jules(&["stats", pt.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["instance_count"], 1);
    assert_eq!(v["grounded_fraction"], 1.0);
}

#[test]
fn check_reports_missing_main() {
    let dir = tempfile::tempdir().unwrap();
    let f = write_program(&dir, "nomain.jules", "method f() { %0 = const 1 }\n");
    let o = jules(&["check", &f]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing entry method main()"));
    let pt = pt_path();
    assert_eq!(jules(&["check", pt.to_str().unwrap()]).status.code(), Some(0));
}

#[test]
fn outcome_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let erred = write_program(
        &dir,
        "erred.jules",
        "method g(Int, Any) { %2 = const 1 }
         method g(Any, Int) { %2 = const 2 }
         method main() { %0 = const 1 %1 = if %0 call g(%0, %0) else %0 }",
    );
    assert_eq!(jules(&["run", &erred]).status.code(), Some(2));
    assert_eq!(jules(&["run", &erred, "--semantics", "jit"]).status.code(), Some(2));

    let spin = write_program(
        &dir,
        "spin.jules",
        "method r(Int) { %1 = if %0 call r(%0) else %0 }
         method main() { %0 = const 1 %1 = if %0 call r(%0) else %0 }",
    );
    let o = jules(&["run", &spin, "--fuel", "50"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains("50 steps"));
}

#[test]
fn usage_and_file_errors() {
    assert_eq!(jules(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(jules(&["run"]).status.code(), Some(64));
    assert_eq!(jules(&["run", "/definitely/not/here.jules"]).status.code(), Some(66));
    let pt = pt_path();
    assert_eq!(jules(&["analyze", pt.to_str().unwrap()]).status.code(), Some(64));
    assert_eq!(jules(&["run", pt.to_str().unwrap(), "--entry", "f(Nope)"]).status.code(), Some(64));
}

#[test]
fn entry_argument() {
    let pt = pt_path();
    let o = jules(&["run", pt.to_str().unwrap(), "--entry", "y(Pt(4, 5))"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("[Pt(4, 5), 5]"));
}

#[test]
fn compiled_dump_round_trips_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f_pt.jules");
    let pt = pt_path();
    let o = jules(&[
        "compile",
        pt.to_str().unwrap(),
        "--method",
        "f",
        "--sig",
        "Pt",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.contains("invoke x[Pt](%0)"));
    assert!(text.contains("# origin: f(APt)"));
    assert_eq!(jules(&["check", out.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(jules(&["check", "--compiled", out.to_str().unwrap()]).status.code(), Some(0));
    let o = jules(&["run", "--compiled", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn difftest_small_range() {
    let dir = tempfile::tempdir().unwrap();
    let o = jules(&["difftest", "--seeds", "0..40", "--fuel", "2000", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stderr(&o).contains("40 of 40 seeds matched"));
    let o = jules(&["difftest", "--seeds", "40..60", "--aot"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}
