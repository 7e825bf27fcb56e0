//! Command-line interface: `train`, `eval`, `bounds`, and `selftest` verbs,
//! run-directory persistence, and the static bounds chart.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::approximator::{load_checkpoint, save_checkpoint};
use crate::config::TrainConfig;
use crate::derive_seed;
use crate::env::make_env;
use crate::kl_clip::{f_estimator, solve_bounds};
use crate::metrics::CSV_HEADER;
use crate::rollout::{collect, write_trajectory_dump};
use crate::selftest::run_selftest;
use crate::trainer::{evaluate, train};

pub const EXIT_OK: u8 = 0;
pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "marpo", version, about = "Multi-agent reflective policy optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a training job and persist metrics, config, and checkpoint.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint with the greedy policy.
    Eval(EvalArgs),
    /// Print (and optionally chart) clipping bounds for KL targets.
    Bounds(BoundsArgs),
    /// Run the built-in numerical property suite.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Config file of key = value lines; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named hyperparameter preset (marpo1..marpo4), applied before the
    /// config file and flags.
    #[arg(long)]
    preset: Option<String>,
    /// Output root for run directories (default: $MARPO_OUT_DIR or ./runs).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also dump one greedy-policy rollout batch as trajectories.tsv.
    #[arg(long)]
    dump_trajectories: bool,

    #[arg(long)]
    algorithm: Option<String>,
    /// Environment name (matrix, commit2, spread).
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    minibatch_size: Option<usize>,
    #[arg(long)]
    rollout_steps: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    kl_bias: Option<f64>,
    #[arg(long)]
    baseline_epsilon: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long)]
    eval_interval: Option<usize>,
    #[arg(long)]
    normalize_advantages: Option<bool>,
    #[arg(long)]
    literal_pair_advantage: Option<bool>,
    /// Fixed symmetric clip half-width, or "none" for dynamic bounds.
    #[arg(long)]
    fixed_clip: Option<String>,
    /// Scale on the KL target for the second reflective bounds, or "none".
    #[arg(long)]
    second_kl_scale: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Environment name (matrix, commit2, spread).
    #[arg(long)]
    env: String,
    #[arg(long, default_value_t = 32)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BoundsArgs {
    /// Single KL target to solve.
    #[arg(long, conflicts_with = "sweep")]
    target: Option<f64>,
    /// Inclusive sweep: START END STEP.
    #[arg(long, num_args = 3, value_names = ["START", "END", "STEP"])]
    sweep: Option<Vec<f64>>,
    /// Write a line chart of bounds vs target to this SVG path.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    /// Test hook: offset added to analytic gradients so the gradient check
    /// must fail (negative control for the harness itself).
    #[arg(long, default_value_t = 0.0, hide = true)]
    perturb_gradients: f64,
}

/// Parses `args` (including argv[0]) and dispatches; returns the process
/// exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successes, everything else is usage
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bounds(args) => cmd_bounds(args),
        Command::Selftest(args) => cmd_selftest(args),
    }
}

fn build_config(args: &TrainArgs) -> Result<TrainConfig, String> {
    let mut cfg = match &args.preset {
        Some(name) => TrainConfig::preset(name).map_err(|e| e.to_string())?,
        None => TrainConfig::default(),
    };
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        cfg = apply_file(cfg, &text)?;
    }
    let mut set = |key: &str, value: Option<String>| -> Result<(), String> {
        if let Some(v) = value {
            cfg.set_key(key, &v).map_err(|e| e.to_string())?;
        }
        Ok(())
    };
    set("algorithm", args.algorithm.clone())?;
    set("env_name", args.env.clone())?;
    set("iterations", args.iterations.map(|v| v.to_string()))?;
    set("epochs", args.epochs.map(|v| v.to_string()))?;
    set("minibatch_size", args.minibatch_size.map(|v| v.to_string()))?;
    set("rollout_steps", args.rollout_steps.map(|v| v.to_string()))?;
    set("alpha", args.alpha.map(|v| format!("{v:?}")))?;
    set("sigma", args.sigma.map(|v| format!("{v:?}")))?;
    set("beta", args.beta.map(|v| format!("{v:?}")))?;
    set("kl_bias", args.kl_bias.map(|v| format!("{v:?}")))?;
    set("baseline_epsilon", args.baseline_epsilon.map(|v| format!("{v:?}")))?;
    set("learning_rate", args.learning_rate.map(|v| format!("{v:?}")))?;
    set("gamma", args.gamma.map(|v| format!("{v:?}")))?;
    set("lambda", args.lambda.map(|v| format!("{v:?}")))?;
    set("seed", args.seed.map(|v| v.to_string()))?;
    set("eval_episodes", args.eval_episodes.map(|v| v.to_string()))?;
    set("eval_interval", args.eval_interval.map(|v| v.to_string()))?;
    set("normalize_advantages", args.normalize_advantages.map(|v| v.to_string()))?;
    set("literal_pair_advantage", args.literal_pair_advantage.map(|v| v.to_string()))?;
    set("fixed_clip", args.fixed_clip.clone())?;
    set("second_kl_scale", args.second_kl_scale.clone())?;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn apply_file(mut cfg: TrainConfig, text: &str) -> Result<TrainConfig, String> {
    // re-parse line by line onto the preset-initialized config so preset
    // values survive for keys the file omits
    for raw in text.lines() {
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) =
            trimmed.split_once('=').ok_or_else(|| format!("malformed config line {raw:?}"))?;
        cfg.set_key(key.trim(), value.trim()).map_err(|e| e.to_string())?;
    }
    Ok(cfg)
}

/// Creates a fresh run directory under `root` named by timestamp and seed;
/// never reuses an existing directory.
fn create_run_dir(root: &Path, seed: u64) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(root)?;
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let base = format!("{stamp}-seed{seed}");
    for attempt in 0.. {
        let name = if attempt == 0 { base.clone() } else { format!("{base}-{attempt}") };
        let dir = root.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
    unreachable!()
}

fn cmd_train(args: TrainArgs) -> u8 {
    let cfg = match build_config(&args) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    let root = args
        .out
        .or_else(|| std::env::var_os("MARPO_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    let run_dir = match create_run_dir(&root, cfg.seed) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: cannot create run directory under {}: {e}", root.display());
            return EXIT_RUNTIME;
        }
    };
    println!("run directory: {}", run_dir.display());

    let report = match train(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: training failed: {e}");
            return EXIT_RUNTIME;
        }
    };

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for row in &report.rows {
        csv.push_str(&row.to_csv_line());
        csv.push('\n');
    }
    let io_fail = |what: &str, e: std::io::Error| {
        eprintln!("error: cannot write {what}: {e}");
        EXIT_RUNTIME
    };
    if let Err(e) = std::fs::write(run_dir.join("metrics.csv"), csv) {
        return io_fail("metrics.csv", e);
    }
    if let Err(e) = std::fs::write(run_dir.join("config.txt"), cfg.serialize()) {
        return io_fail("config.txt", e);
    }
    if let Err(e) = save_checkpoint(&report.params, &run_dir.join("checkpoint.txt")) {
        eprintln!("error: cannot write checkpoint: {e}");
        return EXIT_RUNTIME;
    }
    if args.dump_trajectories {
        let dump = make_env(&cfg.env_name)
            .map_err(|e| e.to_string())
            .and_then(|mut env| {
                collect(env.as_mut(), &report.params, cfg.rollout_steps, derive_seed(cfg.seed, 6, 0))
                    .map_err(|e| e.to_string())
            })
            .and_then(|trajs| {
                let mut file = std::fs::File::create(run_dir.join("trajectories.tsv"))
                    .map_err(|e| e.to_string())?;
                write_trajectory_dump(&trajs, &mut file).map_err(|e| e.to_string())
            });
        if let Err(msg) = dump {
            eprintln!("error: cannot write trajectories.tsv: {msg}");
            return EXIT_RUNTIME;
        }
    }

    if let Some(last) = report.rows.last() {
        println!(
            "finished: iterations={} env_steps={} mean_return={:.4} win_rate={:.4}",
            report.rows.len(),
            report.env_steps,
            last.mean_return,
            last.win_rate
        );
    }
    if report.aborted {
        eprintln!("error: run aborted after repeated non-finite updates");
        return EXIT_RUNTIME;
    }
    EXIT_OK
}

fn cmd_eval(args: EvalArgs) -> u8 {
    if args.episodes == 0 {
        eprintln!("error: episodes must be positive");
        return EXIT_USAGE;
    }
    let params = match load_checkpoint(&args.checkpoint) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot load checkpoint {}: {e}", args.checkpoint.display());
            return EXIT_USAGE;
        }
    };
    let mut env = match make_env(&args.env) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    match evaluate(env.as_mut(), &params, args.episodes, args.seed) {
        Ok(r) => {
            println!("win_rate {:.6}", r.win_rate);
            println!("mean_return {:.6}", r.mean_return);
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: evaluation failed: {e}");
            return EXIT_RUNTIME;
        }
    }
}

fn cmd_bounds(args: BoundsArgs) -> u8 {
    let targets: Vec<f64> = match (&args.target, &args.sweep) {
        (Some(t), None) => vec![*t],
        (None, Some(sweep)) => {
            let (start, end, step) = (sweep[0], sweep[1], sweep[2]);
            if step <= 0.0 || end < start {
                eprintln!("error: sweep requires START <= END and STEP > 0");
                return EXIT_USAGE;
            }
            let n = ((end - start) / step).round() as usize;
            (0..=n).map(|i| start + i as f64 * step).collect()
        }
        _ => {
            eprintln!("error: provide exactly one of --target or --sweep");
            return EXIT_USAGE;
        }
    };
    if targets.iter().any(|&t| t < 0.0 || !t.is_finite()) {
        eprintln!("error: targets must be non-negative finite values");
        return EXIT_USAGE;
    }

    println!(
        "{:>12} {:>12} {:>12} {:>13} {:>13}",
        "target", "lower", "upper", "res_lower", "res_upper"
    );
    let mut rows = Vec::with_capacity(targets.len());
    for &t in &targets {
        let b = match solve_bounds(t) {
            Ok(b) => b,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_RUNTIME;
            }
        };
        let res = |x: f64| (f_estimator(x).map(|v| v - t).unwrap_or(f64::NAN)).abs();
        println!(
            "{:>12.6} {:>12.6} {:>12.6} {:>13.3e} {:>13.3e}",
            t,
            b.lower,
            b.upper,
            res(b.lower),
            res(b.upper)
        );
        rows.push((t, b));
    }

    if let Some(path) = &args.svg {
        if let Err(e) = std::fs::write(path, bounds_svg(&rows)) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return EXIT_RUNTIME;
        }
        println!("chart written to {}", path.display());
    }
    EXIT_OK
}

/// Static line chart of lower/upper bounds against the KL target.
fn bounds_svg(rows: &[(f64, crate::kl_clip::ClipBounds)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    let x_min = rows.first().map(|r| r.0).unwrap_or(0.0);
    let x_max = rows.last().map(|r| r.0).unwrap_or(1.0).max(x_min + 1e-12);
    let y_min = rows.iter().map(|r| r.1.lower).fold(f64::INFINITY, f64::min).min(1.0);
    let y_max = rows.iter().map(|r| r.1.upper).fold(f64::NEG_INFINITY, f64::max).max(1.0);
    let y_span = (y_max - y_min).max(1e-12);
    let px = |t: f64| M + (t - x_min) / (x_max - x_min) * (W - 2.0 * M);
    let py = |v: f64| H - M - (v - y_min) / y_span * (H - 2.0 * M);
    let polyline = |f: &dyn Fn(&crate::kl_clip::ClipBounds) -> f64, color: &str| {
        let pts: Vec<String> =
            rows.iter().map(|(t, b)| format!("{:.2},{:.2}", px(*t), py(f(b)))).collect();
        format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            pts.join(" ")
        )
    };
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    // axes
    svg.push_str(&format!(
        "<line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - M,
        W - M,
        H - M
    ));
    svg.push_str(&format!(
        "<line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - M
    ));
    // reference line at ratio 1
    svg.push_str(&format!(
        "<line x1=\"{M}\" y1=\"{0:.2}\" x2=\"{1}\" y2=\"{0:.2}\" stroke=\"#bbbbbb\" \
         stroke-dasharray=\"4 3\"/>\n",
        py(1.0),
        W - M
    ));
    svg.push_str(&polyline(&|b| b.lower, "#1f77b4"));
    svg.push('\n');
    svg.push_str(&polyline(&|b| b.upper, "#d62728"));
    svg.push('\n');
    svg.push_str(&format!(
        "<text x=\"{:.0}\" y=\"{:.0}\" font-size=\"12\">KL target</text>\n",
        W / 2.0 - 30.0,
        H - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"12\" y=\"{:.0}\" font-size=\"12\" transform=\"rotate(-90 12 {:.0})\">\
         clip bound</text>\n",
        H / 2.0,
        H / 2.0
    ));
    svg.push_str("<text x=\"540\" y=\"60\" font-size=\"12\" fill=\"#d62728\">upper</text>\n");
    svg.push_str("<text x=\"540\" y=\"76\" font-size=\"12\" fill=\"#1f77b4\">lower</text>\n");
    svg.push_str("</svg>\n");
    svg
}

fn cmd_selftest(args: SelftestArgs) -> u8 {
    let report = run_selftest(args.perturb_gradients);
    for (name, ok) in &report.results {
        println!("{} {name}", if *ok { "PASS" } else { "FAIL" });
    }
    if report.all_passed() {
        EXIT_OK
    } else {
        EXIT_RUNTIME
    }
}
