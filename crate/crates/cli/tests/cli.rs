use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ballot-audit"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_with_input(args: &[&str], input: &str) -> Output {
    let mut child = bin().args(args).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const BAYES: [&str; 6] = ["--audit", "bayes", "--gamma", "0.1", "--N", "100000"];

#[test]
fn table_csv_first_round() {
    let o = run(&[&["table"][..], &BAYES].concat());
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,k_plus,k_minus"));
    assert!(lines.next().unwrap().starts_with("200,110,"));
    assert_eq!(text.lines().count(), 10);
}

#[test]
fn parallel_and_sequential_tables_agree() {
    let a = run(&[&["table", "--format", "json"][..], &BAYES].concat());
    let b = run(&[&["--sequential", "table", "--format", "json"][..], &BAYES].concat());
    let c = run(&[&["--jobs", "2", "table", "--format", "json"][..], &BAYES].concat());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["table", "--audit", "rla"]).status.code(), Some(2));
    assert_eq!(run(&["table", "--audit", "bayes", "--gamma", "1.5", "--N", "100"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--audit", "bayes", "--gamma", "0.1", "--N", "101"]).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(run(&["reproduce", "max-risk"]).status.code(), Some(2));
}

#[test]
fn computation_errors_exit_1() {
    let o = run(&["risk", "--audit", "bayes", "--gamma", "0.1", "--N", "5000", "--schedule", "10,20"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["risk", "--audit", "bayes", "--gamma", "0.1", "--N", "40", "--schedule", "4,8", "--method", "enum"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn exact_cap_is_configurable() {
    let o = run(&["risk", "--audit", "bayes", "--gamma", "0.1", "--N", "5000", "--schedule", "10,20", "--exact-cap", "5000", "--x", "2500"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("x,confirm,hand_count,exhausted\n2500,"));
}

#[test]
fn dp_and_enumeration_agree_on_small_elections() {
    let args = ["risk", "--audit", "bayes-rla", "--alpha", "0.1", "--N", "13", "--schedule", "2,4,6", "--format", "json"];
    let dp: serde_json::Value = serde_json::from_slice(&run(&args).stdout).unwrap();
    let en: serde_json::Value =
        serde_json::from_slice(&run(&[&args[..], &["--method", "enum"]].concat()).stdout).unwrap();
    assert_eq!(dp["argmax"], en["argmax"]);
    let (a, b) = (dp["max_risk"].as_f64().unwrap(), en["max_risk"].as_f64().unwrap());
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn simulation_is_seeded() {
    let args = ["simulate", "--audit", "bayes", "--gamma", "0.1", "--N", "1001", "--schedule", "20,40,80", "--seed", "5", "--trials", "500"];
    let a = run(&args);
    let b = run(&[&["--sequential"][..], &args].concat());
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let other = run(&[&args[..9], &["--seed", "6", "--trials", "500"]].concat());
    assert_ne!(a.stdout, other.stdout);
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("audit.toml");
    std::fs::write(&cfg, "audit = \"bayes\"\ngamma = 0.1\nN = 100000\nschedule = \"200,400\"\n").unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "table"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("200,110,"));
    // Flags override the file.
    let o = run(&["--config", cfg.to_str().unwrap(), "table", "--schedule", "400"]);
    assert_eq!(stdout(&o).lines().count(), 2);
    std::fs::write(&cfg, "bogus = 1\n").unwrap();
    assert_eq!(run(&["--config", cfg.to_str().unwrap(), "table"]).status.code(), Some(2));
}

fn write_table(dir: &Path, name: &str, args: &[&str]) -> String {
    let path = dir.join(name);
    let o = run(&[&["table", "--format", "json", "--out", path.to_str().unwrap()][..], args].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    path.to_str().unwrap().to_string()
}

#[test]
fn compare_reports_differences() {
    let dir = tempfile::tempdir().unwrap();
    let rla = write_table(dir.path(), "rla.json", &["--audit", "bayes-rla", "--alpha", "0.1", "--N", "100000"]);
    let std = write_table(dir.path(), "std.json", &BAYES);
    let o = run(&["compare", &rla, &std, "--labels", "rla,std", "--output", "differences"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("n,rla-std\n"));
    assert!(text.lines().skip(1).all(|l| l.split(',').nth(1).unwrap().parse::<i64>().unwrap() >= 0));
    assert_eq!(run(&["compare", &rla, "--labels", "a,b"]).status.code(), Some(2));
}

#[test]
fn session_confirms_and_trail_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let trail = dir.path().join("trail.json");
    let t = trail.to_str().unwrap();
    let o = run_with_input(&[&["session", "--trail", t][..], &BAYES].concat(), "109\nquit\n");
    assert!(o.status.success());
    assert!(stdout(&o).contains("verdict continue"));
    assert!(stdout(&o).contains("status active"));

    let o = run_with_input(&["session", "--resume", t, "--trail", t], "400 90\n400 215\n");
    let text = stdout(&o);
    assert!(text.contains("rejected"), "{text}");
    assert!(text.contains("verdict confirmed_winner"), "{text}");
    let saved: serde_json::Value = serde_json::from_slice(&std::fs::read(&trail).unwrap()).unwrap();
    assert_eq!(saved["session"]["status"], "confirmed_winner");
    assert_eq!(saved["session"]["rounds"].as_array().unwrap().len(), 2);

    let mut bytes = std::fs::read(&trail).unwrap();
    let pos = bytes.windows(3).position(|w| w == b"215").unwrap();
    bytes[pos + 2] = b'6';
    std::fs::write(&trail, bytes).unwrap();
    assert_eq!(run_with_input(&["session", "--resume", t], "").status.code(), Some(2));
}

#[test]
fn reproduce_leniency_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["reproduce", "leniency", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(dir.path().join("leniency_k_plus.csv")).unwrap();
    assert!(text.starts_with("n,rla,rla-wor,bayes-rla,bayes\n"));
    assert_eq!(text.lines().count(), 71);
}
