use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.json"))
}

fn out_dir(tag: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(tag);
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn semiflow(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semiflow"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .env_remove("SEMIFLOW_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn validate_exit_codes() {
    let out = out_dir("validate");
    let s = scenario("two_speed");
    let o = semiflow(&["validate", "--scenario", s.to_str().unwrap()], &out);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(out.join("validation.json").exists());

    let bad = out.join("jam.json");
    std::fs::create_dir_all(&out).unwrap();
    // Speeds 1 and -1 meet head-on at the origin, which must then be a rest point.
    let mut jam: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&s).unwrap()).unwrap();
    jam["field"]["pieces"][1]["eval"]["value"] = (-1.0).into();
    jam["field"]["pieces"][1]["limits"][0] = (-1.0).into();
    jam["field"]["at_values"][0] = 1.0.into();
    let jam = jam.to_string();
    std::fs::write(&bad, jam).unwrap();
    let o = semiflow(&["validate", "--scenario", bad.to_str().unwrap()], &out);
    assert_eq!(code(&o), 1, "{}", stdout(&o));

    let broken = out.join("broken.json");
    std::fs::write(&broken, "{ not json").unwrap();
    assert_eq!(code(&semiflow(&["validate", "--scenario", broken.to_str().unwrap()], &out)), 2);
    assert_eq!(code(&semiflow(&["validate"], &out)), 2);
    assert_eq!(code(&semiflow(&["no-such-command"], &out)), 2);
}

#[test]
fn flow_writes_versioned_csv() {
    let out = out_dir("flow");
    let s = scenario("two_speed");
    let o = semiflow(&["flow", "--scenario", s.to_str().unwrap(), "--x0", "-1,0.5", "--t-max", "2", "--steps", "4"], &out);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let csv = std::fs::read_to_string(out.join("flow.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("# semiflow/flow v1"));
    assert_eq!(lines.next(), Some("x0,t,x"));
    // From -1 at speed 1 the origin is reached at t = 1, then speed 2.
    assert!(csv.contains("-1.0000000000000000e0,2.0000000000000000e0,2.0000000000000000e0"), "{csv}");
}

#[test]
fn sampling_is_thread_independent() {
    let s = scenario("poisson_wait");
    let mut bytes = Vec::new();
    for threads in ["1", "3"] {
        let out = out_dir(&format!("sample{threads}"));
        let o = semiflow(
            &["sample", "--scenario", s.to_str().unwrap(), "--n", "20000", "--grid", "-0.5,1.5,41", "--threads", threads],
            &out,
        );
        assert_eq!(code(&o), 0, "{}", stdout(&o));
        bytes.push(std::fs::read(out.join("kernel.csv")).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn accept_reports_each_criterion() {
    let out = out_dir("accept_pass");
    let o = semiflow(&["accept", "--only", "2,9"], &out);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("PASS  2 ")), "{text}");
    assert!(text.lines().any(|l| l.starts_with("PASS  9 ")), "{text}");
    assert!(out.join("acceptance_summary.csv").exists());

    // The shifted-profile eigenvalue criterion does not hold; its failure
    // must surface as exit code 1.
    let out = out_dir("accept_fail");
    let o = semiflow(&["accept", "--only", "10"], &out);
    assert_eq!(code(&o), 1, "{}", stdout(&o));
    assert!(stdout(&o).lines().any(|l| l.starts_with("FAIL 10 ")));
}

#[test]
fn diffuse_exit_run() {
    let out = out_dir("diffuse");
    let o = semiflow(&["diffuse", "--case", "exit", "--a", "-1", "--b", "2", "--sigma", "0.25", "--n", "4000"], &out);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(out.join("c05_exit_oracle.csv").exists());
    let o = semiflow(&["diffuse", "--case", "branch", "--sigma", "0.1,0.2"], &out);
    assert_eq!(code(&o), 2);
}
