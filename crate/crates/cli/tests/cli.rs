//! End-to-end checks of the `lepa` binary: happy paths for every
//! subcommand plus the exit-code contract (2 config, 3 backend, 4 trainer
//! hook).

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_lepa");
const RIGHT: &str = "Compute 2+2 = 4.\\nFinal Answer: 4";

fn lepa(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Writes problems, a test set, a mock script, and a config pointing at
/// them; returns the config path.
fn fixture(dir: &Path, iterations: u32, hook: Option<&str>) -> std::path::PathBuf {
    fs::write(
        dir.join("problems.jsonl"),
        concat!(
            r#"{"id":"p0","statement":"What is 2+2?","gold_answer":"4","task_kind":"free_form_math"}"#,
            "\n",
            r#"{"id":"p1","statement":"What is 1+3?","gold_answer":"4","task_kind":"free_form_math"}"#,
            "\n",
        ),
    )
    .unwrap();
    fs::write(
        dir.join("test.jsonl"),
        concat!(
            r#"{"id":"t0","statement":"What is 3+1?","gold_answer":"4","task_kind":"free_form_math"}"#,
            "\n",
        ),
    )
    .unwrap();
    let script = [
        ("p0/plan/0", "plan p0"),
        ("p0/solution/0", RIGHT),
        ("p1/plan/0", "plan p1-0"),
        ("p1/solution/0", "It is 5.\\nFinal Answer: 5"),
        ("p1/reflection/1", "plan p1-1"),
        ("p1/solution/1", RIGHT),
        ("t0/plan/0", "test plan"),
        ("t0/solution/0", RIGHT),
    ]
    .iter()
    .map(|(k, v)| format!(r#"{{"route_key":"{k}","response_text":"{v}"}}"#))
    .collect::<Vec<_>>()
    .join("\n");
    fs::write(dir.join("script.jsonl"), script + "\n").unwrap();

    let hook_line = hook
        .map(|h| format!("hook = '{h}'\n"))
        .unwrap_or_default();
    let config = format!(
        r#"[run]
strategy = "lepa"
iterations = {iterations}
concurrency_limit = 2

[backend]
kind = "mock"
script = '{script}'

[paths]
problems = '{problems}'
test_set = '{test_set}'
run_dir = '{run_dir}'

[trainer]
{hook_line}"#,
        script = dir.join("script.jsonl").display(),
        problems = dir.join("problems.jsonl").display(),
        test_set = dir.join("test.jsonl").display(),
        run_dir = dir.join("run").display(),
    );
    let path = dir.join("config.toml");
    fs::write(&path, config).unwrap();
    path
}

#[test]
fn generate_writes_dataset_and_prints_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path(), 1, None);
    let out = lepa(&["generate", "--config", config.to_str().unwrap()]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("iteration 0: 2 tuples"), "stdout: {text}");

    let dataset = dir.path().join("run/iter_000/dataset.jsonl");
    let lines: Vec<String> = fs::read_to_string(&dataset)
        .unwrap()
        .lines()
        .map(str::to_owned)
        .collect();
    assert_eq!(lines.len(), 3, "header plus two tuples");
    let report = dir.path().join("run/iter_000/report.json");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(report["problems_solved"], 2);
}

#[test]
fn loop_resume_eval_export_and_curves_work_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path(), 2, None);
    let config = config.to_str().unwrap();

    // Partial run, then an explicit resume.
    let out = lepa(&["loop", "--config", config, "--stop-after", "1"]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("loop stopped after 1"));

    // A fresh (non-resume) run must refuse the existing state.
    let out = lepa(&["loop", "--config", config]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("--resume"));

    let out = lepa(&["loop", "--config", config, "--resume"]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("loop complete: 2 iterations"));

    // Eval against the same mock backend.
    let out = lepa(&["eval", "--config", config]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["accuracy"], 1.0);
    assert_eq!(report["test_problems"], 1);

    // Re-export the first iteration's dataset elsewhere.
    let dataset = dir.path().join("run/iter_000/dataset.jsonl");
    let out_dir = dir.path().join("reexport");
    let out = lepa(&[
        "export",
        "--config",
        config,
        "--dataset",
        dataset.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(out_dir.join("train.jsonl").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["base_checkpoint"], "initial");
    assert_eq!(manifest["dataset_path"], "train.jsonl");

    // Curves over the finished run.
    let out = lepa(&["curves", "--config", config]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("iteration,accuracy,solve_rate,tuples,mean_tokens")
    );
    assert_eq!(lines.clone().count(), 2, "one row per iteration: {text}");
    assert!(lines.next().unwrap().starts_with("0,1,"));
}

#[test]
fn config_problems_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();

    // Unknown key.
    let bad = dir.path().join("bad.toml");
    fs::write(
        &bad,
        "[run]\nstrtegy = \"lepa\"\n\n[backend]\nkind = \"mock\"\nscript = 'x'\n\n[paths]\nproblems = 'p'\nrun_dir = 'r'\n",
    )
    .unwrap();
    let out = lepa(&["generate", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("strtegy"), "stderr: {}", stderr(&out));

    // Missing file.
    let out = lepa(&["generate", "--config", "/nonexistent/config.toml"]);
    assert_eq!(out.status.code(), Some(2));

    // Clap usage errors share the code.
    let out = lepa(&["generate"]);
    assert_eq!(out.status.code(), Some(2));
    let out = lepa(&["not-a-command"]);
    assert_eq!(out.status.code(), Some(2));

    // Strategy typo in an override.
    let config = fixture(dir.path(), 1, None);
    let out = lepa(&[
        "generate",
        "--config",
        config.to_str().unwrap(),
        "--strategy",
        "lepo",
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
}

#[test]
fn unreachable_backend_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("problems.jsonl"),
        concat!(
            r#"{"id":"p0","statement":"What is 2+2?","gold_answer":"4","task_kind":"free_form_math"}"#,
            "\n",
        ),
    )
    .unwrap();
    let config = format!(
        r#"[run]
concurrency_limit = 1

[backend]
kind = "http"
url = "http://127.0.0.1:9/v1/chat/completions"
model = "m"
retry_backoff_ms = []
cache = false

[paths]
problems = '{problems}'
run_dir = '{run_dir}'
"#,
        problems = dir.path().join("problems.jsonl").display(),
        run_dir = dir.path().join("run").display(),
    );
    let path = dir.path().join("config.toml");
    fs::write(&path, config).unwrap();
    let out = lepa(&["generate", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
}

#[test]
fn failing_trainer_hook_exits_with_code_4() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path(), 1, Some("exit 9"));
    let out = lepa(&["loop", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "stderr: {}", stderr(&out));
    assert!(
        stderr(&out).contains("trainer hook"),
        "stderr: {}",
        stderr(&out)
    );
}
