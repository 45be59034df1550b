//! `zigal` command-line harness.
//!
//! Subcommands: pretrain, finetune, evaluate, plot, compare. Exit codes:
//! 0 success, 1 usage error, 2 runtime error.

mod manifest;
mod plot;

use std::path::{Path, PathBuf};
use std::time::SystemTime;

use manifest::RunManifest;
use zigal::checkpoint;
use zigal::config::{parse_config, Method, TrainConfig};
use zigal::metrics::{read_csv, MetricsRow};
use zigal::trainer::{evaluate, finetune, pretrain_from_config, EvalSpec, Start};

const OUT_DIR_ENV: &str = "ZIGAL_OUT_DIR";

fn usage() -> &'static str {
    "\
zigal - toy few-step multiview diffusion RL lab

USAGE:
  zigal pretrain  --config <PATH> [--seed N] [--out-dir DIR]
  zigal finetune  --config <PATH> --checkpoint <CKPT> [--seed N] [--method M] [--out-dir DIR]
  zigal evaluate  --checkpoint <CKPT> [--config <PATH>] [--seed N] [--out-dir DIR]
  zigal plot      --metrics <CSV> [--metrics <CSV> ...] [--out-dir DIR]
  zigal compare   --config <PATH> [--method M ...] [--seed N ...] [--out-dir DIR]

SUBCOMMANDS:
  pretrain   Train the base denoiser on consistent multiview targets and
             write pretrained.ckpt
  finetune   Run RL finetuning from a pretrained checkpoint (or resume from
             a training checkpoint); writes checkpoints and metrics.csv
  evaluate   Fixed-seed evaluation of a checkpoint under standard and
             zigzag sampling; writes eval_report.txt
  plot       Render SVG curves (rewards, lambda, tau, zigzag gap) from one
             or more metrics files
  compare    Run a method grid on shared seeds and render a joint
             trade-off plot

OPTIONS:
  --config PATH       flat key=value config file (defaults apply per key)
  --seed N            override train.seed (repeatable for compare)
  --method M          override train.method (repeatable for compare)
  --checkpoint PATH   checkpoint to start from / evaluate
  --metrics PATH      metrics CSV input (repeatable, plot only)
  --out-dir DIR       output directory (default: $ZIGAL_OUT_DIR or ./out)
  --help              show this text

EXIT CODES:
  0 success, 1 usage error, 2 runtime error
"
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

macro_rules! runtime_from {
    ($($ty:ty),*) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Runtime(e.to_string())
            }
        })*
    };
}

runtime_from!(
    std::io::Error,
    zigal::trainer::TrainError,
    zigal::config::ConfigError,
    zigal::checkpoint::CheckpointError,
    zigal::metrics::MetricsError
);

#[derive(Default)]
struct Args {
    config: Option<PathBuf>,
    seeds: Vec<u64>,
    methods: Vec<Method>,
    checkpoint: Option<PathBuf>,
    metrics: Vec<PathBuf>,
    out_dir: Option<PathBuf>,
}

fn parse_args(argv: &[String]) -> Result<Args, CliError> {
    let mut args = Args::default();
    let mut it = argv.iter();
    while let Some(flag) = it.next() {
        let mut value = || {
            it.next().ok_or_else(|| CliError::usage(format!("flag {flag} needs a value")))
        };
        match flag.as_str() {
            "--config" => args.config = Some(PathBuf::from(value()?)),
            "--seed" => args
                .seeds
                .push(value()?.parse().map_err(|e| CliError::usage(format!("--seed: {e}")))?),
            "--method" => args
                .methods
                .push(value()?.parse().map_err(|e: String| CliError::usage(e))?),
            "--checkpoint" => args.checkpoint = Some(PathBuf::from(value()?)),
            "--metrics" => args.metrics.push(PathBuf::from(value()?)),
            "--out-dir" => args.out_dir = Some(PathBuf::from(value()?)),
            "--help" | "-h" => return Err(CliError::usage(usage())),
            other => return Err(CliError::usage(format!("unknown flag `{other}`"))),
        }
    }
    Ok(args)
}

fn out_dir(args: &Args) -> PathBuf {
    args.out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn load_config(args: &Args) -> Result<TrainConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => parse_config(path)?,
        None => TrainConfig::default(),
    };
    if let Some(&seed) = args.seeds.first() {
        config.seed = seed;
    }
    if let Some(&method) = args.methods.first() {
        config.method = method;
    }
    config.validate()?;
    Ok(config)
}

fn rel(path: &Path) -> String {
    path.display().to_string()
}

fn cmd_pretrain(args: &Args) -> Result<(), CliError> {
    let started = SystemTime::now();
    let config = load_config(args)?;
    let dir = out_dir(args);
    std::fs::create_dir_all(&dir)?;
    let (params, schedule) = pretrain_from_config(&config)?;
    let ckpt_path = dir.join("pretrained.ckpt");
    checkpoint::save(&ckpt_path, &checkpoint::pack_model(&params, &schedule))?;
    let mut manifest = RunManifest::new(
        "pretrain",
        config.hash(),
        config.canonical_text(),
        vec![config.seed],
    );
    manifest.checkpoints.push(rel(&ckpt_path));
    manifest.stamp(started, config.deterministic_timing);
    manifest.write(&dir)?;
    println!("pretrained {} steps -> {}", config.pretrain_steps, ckpt_path.display());
    Ok(())
}

fn start_from(checkpoint_path: &Path) -> Result<Start, CliError> {
    if !checkpoint_path.exists() {
        return Err(CliError::Runtime(format!("missing checkpoint {}", checkpoint_path.display())));
    }
    let ckpt = checkpoint::load(checkpoint_path)?;
    // training checkpoints carry a completed-epoch count; resume from those
    if ckpt.meta.get("epoch").copied().unwrap_or(0) > 0 {
        Ok(Start::Resume(checkpoint_path.to_path_buf()))
    } else {
        Ok(Start::PretrainedCheckpoint(checkpoint_path.to_path_buf()))
    }
}

fn cmd_finetune(args: &Args) -> Result<(), CliError> {
    let started = SystemTime::now();
    let ckpt = args
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::usage("finetune needs --checkpoint"))?;
    let config = load_config(args)?;
    let dir = out_dir(args);
    let output = finetune(&config, start_from(ckpt)?, &dir)?;
    let mut manifest = RunManifest::new(
        "finetune",
        config.hash(),
        config.canonical_text(),
        vec![config.seed],
    );
    manifest.metrics.push(rel(&output.metrics_path));
    manifest.checkpoints.push(rel(&output.final_checkpoint));
    for path in &output.checkpoint_paths {
        manifest.checkpoints.push(rel(path));
    }
    manifest.stamp(started, config.deterministic_timing);
    manifest.write(&dir)?;
    let last = output.rows.last();
    println!(
        "finetuned {} epochs ({}) -> {} (final R_single {}, R_mv {})",
        output.rows.len(),
        config.method,
        output.metrics_path.display(),
        last.map(|r| r.mean_r_single_raw.to_string()).unwrap_or_else(|| "-".into()),
        last.map(|r| r.mean_r_mv_raw.to_string()).unwrap_or_else(|| "-".into()),
    );
    Ok(())
}

fn cmd_evaluate(args: &Args) -> Result<(), CliError> {
    let started = SystemTime::now();
    let ckpt_path = args
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::usage("evaluate needs --checkpoint"))?;
    let config = load_config(args)?;
    if !ckpt_path.exists() {
        return Err(CliError::Runtime(format!("missing checkpoint {}", ckpt_path.display())));
    }
    let ckpt = checkpoint::load(ckpt_path)?;
    let (params, schedule) = checkpoint::unpack_model(&ckpt)?;
    let spec = EvalSpec::from_config(&config);
    let report = evaluate(&params, &schedule, &spec)?;
    let dir = out_dir(args);
    std::fs::create_dir_all(&dir)?;
    let report_path = dir.join("eval_report.txt");
    std::fs::write(&report_path, report.render_text())?;
    let mut manifest = RunManifest::new(
        "evaluate",
        config.hash(),
        config.canonical_text(),
        vec![config.seed],
    );
    manifest.checkpoints.push(rel(ckpt_path));
    manifest.metrics.push(rel(&report_path));
    manifest.stamp(started, config.deterministic_timing);
    manifest.write(&dir)?;
    print!("{}", report.render_text());
    println!("report -> {}", report_path.display());
    Ok(())
}

fn read_inputs(paths: &[PathBuf]) -> Result<Vec<(String, Vec<MetricsRow>)>, CliError> {
    paths
        .iter()
        .map(|p| {
            let label = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string());
            Ok((label, read_csv(p)?))
        })
        .collect()
}

fn write_plots(dir: &Path, inputs: &[(String, Vec<MetricsRow>)]) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, title: &str, y_label: &str, series: Vec<plot::Series>| -> Result<(), CliError> {
        if series.is_empty() {
            return Ok(());
        }
        let path = dir.join(name);
        std::fs::write(&path, plot::line_plot(title, "epoch", y_label, &series))?;
        written.push(path);
        Ok(())
    };

    let mut reward_series = plot::metric_series(inputs, |r| Some(r.mean_r_single_raw));
    for s in &mut reward_series {
        s.label = format!("{}:mean_R_single_raw", s.label);
    }
    let mut joint_series = plot::metric_series(inputs, |r| Some(r.mean_r_mv_raw));
    for s in &mut joint_series {
        s.label = format!("{}:mean_R_mv_raw", s.label);
    }
    reward_series.extend(joint_series);
    emit("rewards.svg", "reward curves", "mean_R_single_raw / mean_R_mv_raw", reward_series)?;
    emit("lambda.svg", "multiplier dynamics", "lambda", plot::metric_series(inputs, |r| r.lambda))?;
    emit("tau.svg", "threshold dynamics", "tau", plot::metric_series(inputs, |r| r.tau))?;
    emit(
        "zigzag_gap.svg",
        "zigzag gap",
        "zigzag_gap",
        plot::metric_series(inputs, |r| Some(r.zigzag_gap)),
    )?;
    Ok(written)
}

fn cmd_plot(args: &Args) -> Result<(), CliError> {
    if args.metrics.is_empty() {
        return Err(CliError::usage("plot needs at least one --metrics file"));
    }
    let inputs = read_inputs(&args.metrics)?;
    let dir = out_dir(args);
    let written = write_plots(&dir, &inputs)?;
    for path in written {
        println!("plot -> {}", path.display());
    }
    Ok(())
}

fn cmd_compare(args: &Args) -> Result<(), CliError> {
    let started = SystemTime::now();
    let base = load_config(args)?;
    let methods = if args.methods.is_empty() {
        vec![Method::Zigal, Method::MvcZigal]
    } else {
        args.methods.clone()
    };
    let seeds = if args.seeds.is_empty() { vec![base.seed] } else { args.seeds.clone() };
    let dir = out_dir(args);
    std::fs::create_dir_all(&dir)?;

    let mut manifest =
        RunManifest::new("compare", base.hash(), base.canonical_text(), seeds.clone());
    let mut cells: Vec<(String, Vec<MetricsRow>)> = Vec::new();
    for &seed in &seeds {
        // one pretrained baseline per seed, shared across methods
        let seed_config = TrainConfig { seed, ..base.clone() };
        let (params, schedule) = pretrain_from_config(&seed_config)?;
        let pre_path = dir.join(format!("pretrained_seed{seed}.ckpt"));
        checkpoint::save(&pre_path, &checkpoint::pack_model(&params, &schedule))?;
        manifest.checkpoints.push(rel(&pre_path));
        for &method in &methods {
            let config = TrainConfig { method, seed, ..base.clone() };
            let cell_dir = dir.join(format!("{}_seed{seed}", method.name()));
            let output =
                finetune(&config, Start::PretrainedCheckpoint(pre_path.clone()), &cell_dir)?;
            println!(
                "compare cell {} seed {seed}: {} epochs -> {}",
                method.name(),
                output.rows.len(),
                output.metrics_path.display()
            );
            manifest.metrics.push(rel(&output.metrics_path));
            manifest.checkpoints.push(rel(&output.final_checkpoint));
            cells.push((format!("{}_seed{seed}", method.name()), output.rows));
        }
    }
    let tradeoff = plot::tradeoff_series(&cells);
    let tradeoff_path = dir.join("tradeoff.svg");
    std::fs::write(
        &tradeoff_path,
        plot::line_plot(
            "reward trade-off",
            "mean_R_single_raw",
            "mean_R_mv_raw",
            &tradeoff,
        ),
    )?;
    manifest.metrics.push(rel(&tradeoff_path));
    manifest.stamp(started, base.deterministic_timing);
    manifest.write(&dir)?;
    println!("trade-off plot -> {}", tradeoff_path.display());
    Ok(())
}

fn dispatch(cmd: &str, args: &Args) -> Result<(), CliError> {
    match cmd {
        "pretrain" => cmd_pretrain(args),
        "finetune" => cmd_finetune(args),
        "evaluate" => cmd_evaluate(args),
        "plot" => cmd_plot(args),
        "compare" => cmd_compare(args),
        other => Err(CliError::usage(format!("unknown subcommand `{other}`"))),
    }
}

fn main() {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let code = match argv.split_first() {
        None => {
            eprintln!("{}", usage());
            1
        }
        Some((cmd, _)) if cmd == "--help" || cmd == "-h" => {
            println!("{}", usage());
            0
        }
        Some((cmd, rest)) => match parse_args(rest).and_then(|args| dispatch(cmd, &args)) {
            Ok(()) => 0,
            Err(CliError::Usage(msg)) => {
                eprintln!("{msg}");
                eprintln!("run `zigal --help` for usage");
                1
            }
            Err(CliError::Runtime(msg)) => {
                eprintln!("error: {msg}");
                2
            }
        },
    };
    std::process::exit(code);
}
