use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn alliance(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alliance"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("alliance-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn read(dir: &Path, file: &str) -> Vec<u8> {
    std::fs::read(dir.join(file)).unwrap_or_else(|e| panic!("{}/{file}: {e}", dir.display()))
}

#[test]
fn dilemma_count_prints_summary_and_writes_csv() {
    let out = scratch("count");
    let run = alliance(&["dilemma-count", "--seed", "7", "--games", "1000", "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(stdout.contains("dilemma fraction"), "{stdout}");
    let csv = String::from_utf8(read(&out, "dilemma_count.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1001);
    assert!(csv.starts_with("game_index,p,q,has_dilemma,has_strict\n"));
}

#[test]
fn unknown_subcommands_and_flags_fail() {
    assert!(!alliance(&["bogus"]).status.success());
    assert!(!alliance(&["dilemma-count", "--frobnicate"]).status.success());
    assert!(!alliance(&["train", "--scenario", "no-such-table"]).status.success());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let out = scratch("badkey");
    std::fs::create_dir_all(&out).unwrap();
    let conf = out.join("bad.conf");
    std::fs::write(&conf, "counting.games = 10\ncounting.nonsense = 3\n").unwrap();
    let run = alliance(&["dilemma-count", "--config", conf.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!run.status.success());
    assert!(String::from_utf8_lossy(&run.stderr).contains("counting.nonsense"));
}

#[test]
fn same_seed_gives_identical_outputs() {
    let a = scratch("same-a");
    let b = scratch("same-b");
    for dir in [&a, &b] {
        let run = alliance(&["dilemma-count", "--seed", "3", "--games", "500", "--out", dir.to_str().unwrap()]);
        assert!(run.status.success());
    }
    for file in ["dilemma_count.csv", "stubborn_histogram.csv", "headline.json", "summary.json"] {
        assert_eq!(read(&a, file), read(&b, file), "{file}");
    }
    let c = scratch("same-c");
    alliance(&["dilemma-count", "--seed", "4", "--games", "500", "--out", c.to_str().unwrap()]);
    assert_ne!(read(&a, "dilemma_count.csv"), read(&c, "dilemma_count.csv"));
}

#[test]
fn resolved_config_reproduces_the_run() {
    let a = scratch("rerun-a");
    let b = scratch("rerun-b");
    let run = alliance(&["dynamics", "--game", "matching", "--runs", "3", "--steps", "200", "--seed", "5", "--out", a.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let snapshot = a.join("config.resolved");
    let rerun = alliance(&["dynamics", "--config", snapshot.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(rerun.status.success(), "{}", String::from_utf8_lossy(&rerun.stderr));
    assert_eq!(read(&a, "trajectories.csv"), read(&b, "trajectories.csv"));
    assert_eq!(read(&a, "config.resolved"), read(&b, "config.resolved"));
}

#[test]
fn report_regenerates_byte_identically() {
    let out = scratch("report");
    assert!(alliance(&["epsilon-hist", "--games", "300", "--out", out.to_str().unwrap()]).status.success());
    let first = read(&out, "summary.json");
    assert!(alliance(&["report", "--out", out.to_str().unwrap()]).status.success());
    assert_eq!(first, read(&out, "summary.json"));
    let summary: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(summary["complete"], true);
}

#[test]
fn report_marks_partial_runs_incomplete() {
    let out = scratch("partial");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(out.join("stray.csv"), "a,b\n").unwrap();
    assert!(alliance(&["report", "--out", out.to_str().unwrap()]).status.success());
    let summary: serde_json::Value = serde_json::from_slice(&read(&out, "summary.json")).unwrap();
    assert_eq!(summary["complete"], false);
}

#[test]
fn verify_passes() {
    let run = alliance(&["verify"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stdout));
    assert!(!String::from_utf8_lossy(&run.stdout).contains("FAIL"));
}

#[test]
fn train_then_regress_and_evaluate_from_checkpoint() {
    let train = scratch("train");
    let run = alliance(&[
        "train", "--scenario", "contracts-3", "--updates", "2", "--episodes", "2", "--seeds", "1",
        "--out", train.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let metrics = String::from_utf8(read(&train, "metrics_seed0.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 2 * 3);
    assert!(metrics.lines().next().unwrap().contains("contracts_signed_GG"));

    let checkpoint = train.join("checkpoint_seed0.json");
    let regress = scratch("regress");
    let run = alliance(&[
        "regress", "--checkpoint", checkpoint.to_str().unwrap(), "--episodes", "10",
        "--out", regress.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let scatter = String::from_utf8(read(&regress, "scatter.csv")).unwrap();
    assert_eq!(scatter.lines().count(), 31);

    let eval = scratch("eval");
    let run = alliance(&[
        "train", "--eval-only", "--checkpoint", checkpoint.to_str().unwrap(), "--out", eval.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(!read(&eval, "eval.csv").is_empty());
}

#[test]
fn shipped_desk_configs_load() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&configs).unwrap() {
        let path = entry.unwrap().path();
        let out = scratch(&format!("desk-{seen}"));
        let run = alliance(&[
            "train", "--config", path.to_str().unwrap(), "--updates", "1", "--seeds", "1", "--episodes", "1",
            "--out", out.to_str().unwrap(),
        ]);
        assert!(run.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&run.stderr));
        seen += 1;
    }
    assert_eq!(seen, 5);
}
