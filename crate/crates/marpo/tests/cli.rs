//! Integration tests for the command-line interface, driving the real
//! binary end to end.

use std::path::Path;
use std::process::{Command, Output};

use marpo::approximator::{save_checkpoint, ParamSet};
use marpo::config::TrainConfig;
use marpo::metrics::{MetricsRow, CSV_HEADER};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_marpo")).args(args).output().expect("spawn marpo")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// The single run directory created under `root` by one train invocation.
fn only_run_dir(root: &Path) -> std::path::PathBuf {
    let mut entries: Vec<_> =
        std::fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(entries.len(), 1, "expected exactly one run directory");
    entries.pop().unwrap()
}

fn metrics_without_wall_time(dir: &Path) -> String {
    let text = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    text.lines().map(|l| &l[..l.rfind(',').unwrap()]).collect::<Vec<_>>().join("\n")
}

const QUICK: &[&str] = &[
    "--env",
    "matrix",
    "--iterations",
    "3",
    "--rollout-steps",
    "64",
    "--minibatch-size",
    "64",
    "--eval-episodes",
    "8",
];

#[test]
fn train_writes_run_directory_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[&["train", "--seed", "7", "--out", tmp.path().to_str().unwrap()], QUICK]
        .concat());
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let dir = only_run_dir(tmp.path());
    assert!(dir.file_name().unwrap().to_str().unwrap().ends_with("-seed7"));

    let metrics = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let rows: Vec<MetricsRow> =
        lines.map(|l| MetricsRow::parse_csv_line(l).unwrap()).collect();
    assert_eq!(rows.len(), 3, "one metrics row per iteration");

    // config echo round-trips and records the effective settings
    let echo = TrainConfig::parse(&std::fs::read_to_string(dir.join("config.txt")).unwrap())
        .unwrap();
    assert_eq!(echo.seed, 7);
    assert_eq!(echo.env_name, "matrix");
    assert_eq!(echo.iterations, 3);

    // the checkpoint is loadable and evaluable
    let ckpt = dir.join("checkpoint.txt");
    let out = run(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--env",
        "matrix",
        "--episodes",
        "8",
        "--seed",
        "1",
    ]);
    assert_eq!(exit_code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("win_rate"), "missing win_rate in {text:?}");
    assert!(text.contains("mean_return"));
}

#[test]
fn train_config_file_and_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("job.cfg");
    std::fs::write(&cfg_path, "env_name = matrix\niterations = 3\nseed = 5\nrollout_steps = 64\nminibatch_size = 64\neval_episodes = 8\n").unwrap();
    let out_dir = tmp.path().join("runs");
    // --seed overrides the file value
    let out = run(&[
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--seed",
        "9",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let dir = only_run_dir(&out_dir);
    let echo =
        TrainConfig::parse(&std::fs::read_to_string(dir.join("config.txt")).unwrap()).unwrap();
    assert_eq!(echo.seed, 9);
    assert_eq!(echo.iterations, 3);
}

#[test]
fn rerun_is_deterministic_and_append_only() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_str().unwrap();
    let args = [&["train", "--seed", "3", "--out", root], QUICK].concat();
    assert_eq!(exit_code(&run(&args)), 0);
    assert_eq!(exit_code(&run(&args)), 0);
    let mut dirs: Vec<_> =
        std::fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().path()).collect();
    dirs.sort();
    // reruns never overwrite: two separate run directories
    assert_eq!(dirs.len(), 2);
    assert_eq!(
        metrics_without_wall_time(&dirs[0]),
        metrics_without_wall_time(&dirs[1]),
        "rerun metrics differ"
    );
}

#[test]
fn train_rejects_missing_env_name() {
    let out = run(&["train", "--iterations", "2"]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn eval_validates_arguments() {
    let out = run(&["eval", "--checkpoint", "/nonexistent.ckpt", "--env", "matrix"]);
    assert_eq!(exit_code(&out), 2);

    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tmp.path().join("zero.ckpt");
    let mut params = ParamSet::new(3, 2, 1, &[], 0);
    params.set_flat(&vec![0.0; params.param_count()]).unwrap();
    save_checkpoint(&params, &ckpt).unwrap();
    let out =
        run(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--env", "matrix", "--episodes", "0"]);
    assert_eq!(exit_code(&out), 2);

    // the zero network always plays action 0: the optimal joint action
    let out = run(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--env", "matrix"]);
    assert_eq!(exit_code(&out), 0);
    assert!(stdout(&out).contains("win_rate 1.000000"), "{}", stdout(&out));
}

#[test]
fn bounds_single_target_and_errors() {
    let out = run(&["bounds", "--target", "0"]);
    assert_eq!(exit_code(&out), 0);
    let text = stdout(&out);
    let row = text.lines().nth(1).unwrap();
    let fields: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(fields[1].parse::<f64>().unwrap(), 1.0);
    assert_eq!(fields[2].parse::<f64>().unwrap(), 1.0);

    assert_eq!(exit_code(&run(&["bounds", "--target", "-0.1"])), 2);
    assert_eq!(exit_code(&run(&["bounds"])), 2);
}

#[test]
fn bounds_sweep_monotone_and_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let svg = tmp.path().join("bounds.svg");
    let out =
        run(&["bounds", "--sweep", "0", "0.2", "0.01", "--svg", svg.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0);
    let text = stdout(&out);
    let rows: Vec<(f64, f64)> = text
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with("chart"))
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            (f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 21, "sweep 0..0.2 step 0.01 yields 21 rows");
    for w in rows.windows(2) {
        assert!(w[1].0 <= w[0].0 && w[1].1 >= w[0].1, "bounds must widen monotonically");
    }
    let svg_text = std::fs::read_to_string(&svg).unwrap();
    assert!(svg_text.starts_with("<svg"));
    assert_eq!(svg_text.matches("<polyline").count(), 2);
}

#[test]
fn selftest_passes_and_detects_injected_error() {
    let out = run(&["selftest"]);
    assert_eq!(exit_code(&out), 0, "{}", stdout(&out));
    assert_eq!(stdout(&out).matches("PASS").count(), 4);

    let out = run(&["selftest", "--perturb-gradients", "0.01"]);
    assert_eq!(exit_code(&out), 1);
    assert!(stdout(&out).contains("FAIL minibatch-gradients"));
}

#[test]
fn unknown_flags_are_usage_errors() {
    assert_eq!(exit_code(&run(&["train", "--warp-factor", "9"])), 2);
    assert_eq!(exit_code(&run(&["frobnicate"])), 2);
    assert_eq!(exit_code(&run(&["--help"])), 0);
}
