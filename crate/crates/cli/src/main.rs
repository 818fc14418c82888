#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod manifest;

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crosswalk::annotations::{self, IdMap, SplitLayout, SPLITS};
use crosswalk::detmetrics::{self, EvalOptions};
use crosswalk::montecarlo::{self, grid};
use crosswalk::replay::{self, read_frames};
use crosswalk::report::{self, round_sig};

use config::{ConfigError, Resolved};
use manifest::RunManifest;

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_VALIDATION: u8 = 3;
const EXIT_CALIBRATION: u8 = 4;

#[derive(Parser)]
#[command(name = "crosswalk", version, about = "Adaptive pedestrian-signal toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Flat `key = value` config file, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for trial evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Any config key, e.g. `--set buffer_s=4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Clone, Default)]
struct ModelFlags {
    #[arg(long)]
    alpha: Option<f64>,
    /// Walking-speed coefficient of variation.
    #[arg(long)]
    cv: Option<f64>,
    #[arg(long)]
    design_speed: Option<f64>,
    #[arg(long)]
    buffer_s: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct ControllerFlags {
    #[arg(long)]
    extension_s: Option<f64>,
    #[arg(long)]
    threshold_s: Option<f64>,
    #[arg(long)]
    max_extensions: Option<u32>,
    #[arg(long)]
    timeout_frames: Option<u32>,
    #[arg(long)]
    tick_s: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Fixed-time vs adaptive stranding comparison.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        controller: ControllerFlags,
    },
    /// Adaptive-arm stranding over an extension x threshold grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        /// Extension-time grid: `start..end:step` or a comma list.
        #[arg(long = "tau-e", default_value = "3..6:0.5")]
        tau_e: String,
        /// Threshold-time grid: `start..end:step` or a comma list.
        #[arg(long = "tau-t", default_value = "3..6:0.5")]
        tau_t: String,
    },
    /// Fit the walking-speed CV to a target fixed-time stranding rate.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long, default_value_t = 0.091)]
        target: f64,
        #[arg(long, default_value_t = 0.002)]
        tolerance: f64,
    },
    /// Run the controller over a line-delimited detection stream.
    Replay {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        controller: ControllerFlags,
        /// Frames file (`-` for stdin).
        frames: PathBuf,
        #[arg(long)]
        initial_signal_s: Option<f64>,
        /// Also write the per-frame state trace.
        #[arg(long)]
        trace: bool,
    },
    /// Convert COCO annotations to YOLO labels for train/validation/test.
    ///
    /// Input layout: `<COCO_DIR>/annotations/<split>.json` and
    /// `<COCO_DIR>/images/<split>/`.
    Convert {
        #[command(flatten)]
        common: Common,
        coco_dir: PathBuf,
        /// Category ids in class-index order (default: ascending id).
        #[arg(long, value_delimiter = ',')]
        class_order: Option<Vec<i64>>,
    },
    /// IoU / AP / mAP over prediction and ground-truth files.
    Evaldet {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Count classes with neither ground truth nor predictions (AP = 1).
        #[arg(long)]
        keep_vacuous: bool,
        /// Evaluate class indices `0..N` even when absent from both files.
        #[arg(long, value_name = "N")]
        num_classes: Option<usize>,
    },
}

fn resolve(
    common: &Common,
    model: Option<&ModelFlags>,
    controller: Option<&ControllerFlags>,
) -> Result<Resolved, ConfigError> {
    let mut r = Resolved::default();
    if let Some(path) = &common.config {
        r.apply_file(path)?;
    }
    for kv in &common.set {
        let Some((k, v)) = kv.split_once('=') else {
            return Err(ConfigError(format!("--set expects KEY=VALUE, got {kv:?}")));
        };
        r.set(k.trim(), v).map_err(|e| ConfigError(format!("--set: {e}")))?;
    }
    if let Some(seed) = common.seed {
        r.sim.seed = seed;
    }
    if let Some(n) = common.trials {
        r.sim.n_trials = n;
    }
    if let Some(m) = model {
        if let Some(v) = m.alpha {
            r.sim.alpha = v;
        }
        if let Some(v) = m.cv {
            r.sim.speed_model.coefficient_of_variation = v;
        }
        if let Some(v) = m.design_speed {
            r.sim.policy.design_speed = v;
        }
        if let Some(v) = m.buffer_s {
            r.sim.policy.buffer_s = v;
        }
    }
    if let Some(c) = controller {
        let cc = &mut r.sim.controller;
        if let Some(v) = c.extension_s {
            cc.extension_s = v;
        }
        if let Some(v) = c.threshold_s {
            cc.threshold_s = v;
        }
        if let Some(v) = c.max_extensions {
            cc.max_extensions = v;
        }
        if let Some(v) = c.timeout_frames {
            cc.timeout_frames = v;
        }
        if let Some(v) = c.tick_s {
            cc.tick_s = v;
        }
    }
    r.validate()?;
    Ok(r)
}

/// `start..end:step` (inclusive) or `a,b,c`.
fn parse_grid(spec: &str) -> Result<Vec<f64>, ConfigError> {
    let bad = || ConfigError(format!("bad grid {spec:?}; expected start..end:step or a,b,c"));
    if let Some((range, step)) = spec.split_once(':') {
        let (start, end) = range.split_once("..").ok_or_else(bad)?;
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
        grid(num(start)?, num(end)?, num(step)?).map_err(|e| ConfigError(e.to_string()))
    } else {
        spec.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
            .collect()
    }
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<PathBuf> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path.to_path_buf())
}

fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> anyhow::Result<R> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            Ok(pool.install(f))
        }
    }
}

struct Run {
    name: &'static str,
    common: Common,
    resolved: Resolved,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl Run {
    fn new(name: &'static str, common: &Common, resolved: Resolved) -> anyhow::Result<Self> {
        fs::create_dir_all(&common.out)
            .with_context(|| format!("creating {}", common.out.display()))?;
        Ok(Run {
            name,
            common: common.clone(),
            resolved,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    fn out(&self, file: &str) -> PathBuf {
        self.common.out.join(file)
    }

    fn emit(&mut self, file: &str, text: &str) -> anyhow::Result<()> {
        let path = write_file(&self.out(file), text)?;
        self.outputs.push(path);
        Ok(())
    }

    fn finish(self) -> anyhow::Result<()> {
        let m = RunManifest {
            tool: "crosswalk",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: self.name.to_string(),
            seed: self.resolved.sim.seed,
            threads: self.common.threads,
            config: self.resolved.snapshot(),
            inputs: self.inputs,
            outputs: self.outputs,
            wall_clock_s: self.started.elapsed().as_secs_f64(),
        };
        m.write(&self.common.out)?;
        Ok(())
    }
}

fn cmd_simulate(common: &Common, model: &ModelFlags, controller: &ControllerFlags) -> anyhow::Result<()> {
    let resolved = resolve(common, Some(model), Some(controller))?;
    let mut run = Run::new("simulate", common, resolved)?;
    let sim = run.resolved.sim.clone();
    let report = with_threads(common.threads, || montecarlo::run_comparison(&sim))??;

    run.emit("report.json", &report::report_json(&report)?)?;
    run.emit("report.csv", &report::report_csv(&report))?;
    run.emit("extensions.csv", &report::histogram_csv(&report))?;
    println!(
        "fixed stranding {:.2}% (se {:.2}), adaptive {:.2}% (se {:.2}), improvement {:.1}%",
        100.0 * report.fixed.stranding_rate,
        100.0 * report.fixed.se,
        100.0 * report.nplb.stranding_rate,
        100.0 * report.nplb.se,
        report.improvement_pct
    );
    let shares: Vec<String> = report
        .extension_shares()
        .iter()
        .map(|s| format!("{:.1}%", 100.0 * s))
        .collect();
    println!("extensions per cycle (0..): {}", shares.join(", "));
    run.finish()
}

fn cmd_sweep(common: &Common, model: &ModelFlags, tau_e: &str, tau_t: &str) -> anyhow::Result<()> {
    let resolved = resolve(common, Some(model), None)?;
    let tau_e = parse_grid(tau_e)?;
    let tau_t = parse_grid(tau_t)?;
    let mut run = Run::new("sweep", common, resolved)?;
    let sim = run.resolved.sim.clone();
    let sweep = with_threads(common.threads, || montecarlo::parameter_sweep(&sim, &tau_e, &tau_t))??;
    run.emit("sweep.csv", &report::sweep_csv(&sweep))?;
    println!("{} cells written to {}", sweep.len(), run.out("sweep.csv").display());
    run.finish()
}

#[derive(Serialize)]
struct CalibrationOut {
    coefficient_of_variation: f64,
    fixed_stranding_rate: f64,
    target: f64,
    tolerance: f64,
    evaluations: usize,
    n_trials: usize,
    seed: u64,
}

fn cmd_calibrate(common: &Common, model: &ModelFlags, target: f64, tolerance: f64) -> anyhow::Result<()> {
    let resolved = resolve(common, Some(model), None)?;
    let mut run = Run::new("calibrate", common, resolved)?;
    let sim = run.resolved.sim.clone();
    let cal = with_threads(common.threads, || montecarlo::calibrate_speed_cv(&sim, target, tolerance))??;
    let out = CalibrationOut {
        coefficient_of_variation: cal.coefficient_of_variation,
        fixed_stranding_rate: cal.fixed_stranding_rate,
        target,
        tolerance,
        evaluations: cal.evaluations,
        n_trials: sim.n_trials,
        seed: sim.seed,
    };
    run.emit("calibration.json", &(serde_json::to_string_pretty(&out)? + "\n"))?;
    println!(
        "coefficient_of_variation = {} (fixed stranding {:.4}, {} evaluations)",
        cal.coefficient_of_variation, cal.fixed_stranding_rate, cal.evaluations
    );
    run.resolved.sim.speed_model.coefficient_of_variation = cal.coefficient_of_variation;
    run.finish()
}

fn cmd_replay(
    common: &Common,
    controller: &ControllerFlags,
    frames: &Path,
    initial_signal_s: Option<f64>,
    trace: bool,
) -> anyhow::Result<()> {
    let mut resolved = resolve(common, None, Some(controller))?;
    if let Some(v) = initial_signal_s {
        resolved.initial_signal_s = v;
        resolved.validate()?;
    }
    let mut run = Run::new("replay", common, resolved)?;
    let cfg = run.resolved.sim.controller;
    let initial = run.resolved.initial_signal_s;

    let report = if frames == Path::new("-") {
        replay::run_replay(&cfg, initial, read_frames(std::io::stdin().lock()))?
    } else {
        let file = fs::File::open(frames).with_context(|| format!("opening {}", frames.display()))?;
        run.inputs.push(frames.to_path_buf());
        replay::run_replay(&cfg, initial, read_frames(BufReader::new(file)))?
    };

    let mut log = Vec::new();
    replay::write_jsonl(&mut log, &report.commands)?;
    run.emit("commands.jsonl", std::str::from_utf8(&log)?)?;
    if trace {
        let mut t = Vec::new();
        replay::write_jsonl(&mut t, &report.trace)?;
        run.emit("trace.jsonl", std::str::from_utf8(&t)?)?;
    }
    println!(
        "{} frames, {} extensions, final duration {} s",
        report.frames_processed,
        report.extensions_granted,
        round_sig(report.final_duration_s)
    );
    run.finish()
}

#[derive(Debug)]
struct ValidationFailed(String);

impl std::fmt::Display for ValidationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "validation failed: {}", self.0)
    }
}

impl std::error::Error for ValidationFailed {}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| annotations::IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

#[derive(Serialize)]
struct ConversionOut {
    classes: Vec<String>,
    splits: Vec<annotations::ConversionSummary>,
    validation: annotations::ValidationReport,
}

fn cmd_convert(common: &Common, coco_dir: &Path, class_order: Option<&[i64]>) -> anyhow::Result<()> {
    let resolved = resolve(common, None, None)?;
    let mut run = Run::new("convert", common, resolved)?;
    let root = common.out.clone();

    let mut datasets = Vec::new();
    for split in SPLITS {
        let ann = coco_dir.join("annotations").join(format!("{split}.json"));
        if !ann.exists() {
            continue;
        }
        let text = fs::read_to_string(&ann).with_context(|| format!("reading {}", ann.display()))?;
        let dataset = annotations::parse_coco(&text).with_context(|| ann.display().to_string())?;
        run.inputs.push(ann);
        datasets.push((split, dataset));
    }
    if datasets.is_empty() {
        bail!(ValidationFailed(format!(
            "no annotations found under {}",
            coco_dir.join("annotations").display()
        )));
    }

    let mut categories: Vec<annotations::CocoCategory> = Vec::new();
    for (_, d) in &datasets {
        for c in &d.categories {
            if !categories.iter().any(|k| k.id == c.id) {
                categories.push(c.clone());
            }
        }
    }
    let id_map = match class_order {
        Some(order) => IdMap::from_ordered(order.iter().map(|id| {
            let name = categories
                .iter()
                .find(|c| c.id == *id)
                .map(|c| c.name.clone())
                .unwrap_or_else(|| id.to_string());
            (*id, name)
        }))?,
        None => IdMap::from_categories(&categories)?,
    };
    let names = id_map.names().to_vec();

    let mut summaries = Vec::new();
    let mut layouts = Vec::new();
    for (split, dataset) in &datasets {
        let layout = SplitLayout::under(&root, split, names.clone());
        fs::create_dir_all(&layout.image_dir)?;
        let src = coco_dir.join("images").join(split);
        if let Ok(entries) = fs::read_dir(&src) {
            let mut files: Vec<PathBuf> = entries.flatten().map(|e| e.path()).filter(|p| is_image(p)).collect();
            files.sort();
            for f in files {
                let dest = layout.image_dir.join(f.file_name().expect("file entry"));
                fs::copy(&f, &dest).with_context(|| format!("copying {}", f.display()))?;
            }
        }
        summaries.push(annotations::convert_split(dataset, &layout, &id_map)?);
        layouts.push(layout);
    }
    let validation = annotations::validate_counts(&layouts);
    let splits: Vec<&str> = datasets.iter().map(|(s, _)| *s).collect();
    run.emit("data.yaml", &annotations::dataset_config(&root, &splits, &names))?;

    for row in &validation.splits {
        println!(
            "{:<10} images {:>6}  labels {:>6}  {}",
            row.split,
            row.images,
            row.labels,
            if row.passed() { "ok" } else { "MISMATCH" }
        );
    }
    let passed = validation.passed();
    let failures: Vec<String> = validation
        .splits
        .iter()
        .filter(|r| !r.passed())
        .map(|r| {
            format!(
                "{}: {} images vs {} labels; missing labels {:?}; orphan labels {:?}",
                r.split, r.images, r.labels, r.missing_labels, r.orphan_labels
            )
        })
        .collect();
    let out = ConversionOut {
        classes: names,
        splits: summaries,
        validation,
    };
    run.emit("conversion.json", &(serde_json::to_string_pretty(&out)? + "\n"))?;
    run.finish()?;
    if !passed {
        bail!(ValidationFailed(failures.join("; ")));
    }
    Ok(())
}

fn cmd_evaldet(
    common: &Common,
    pred: &Path,
    gt: &Path,
    keep_vacuous: bool,
    num_classes: Option<usize>,
) -> anyhow::Result<()> {
    let resolved = resolve(common, None, None)?;
    let mut run = Run::new("evaldet", common, resolved)?;
    let read = |p: &Path| fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
    let preds = detmetrics::parse_predictions::<f64>(&read(pred)?).with_context(|| pred.display().to_string())?;
    let gts = detmetrics::parse_ground_truths::<f64>(&read(gt)?).with_context(|| gt.display().to_string())?;
    run.inputs.extend([pred.to_path_buf(), gt.to_path_buf()]);

    let options = EvalOptions {
        exclude_vacuous: !keep_vacuous,
        num_classes,
    };
    let mut result = detmetrics::map_over_range(&preds, &gts, &detmetrics::coco_thresholds(), options)?;
    result.map_50 = round_sig(result.map_50);
    result.map_50_95 = round_sig(result.map_50_95);
    result.map_per_threshold.iter_mut().for_each(|v| *v = round_sig(*v));
    for c in &mut result.per_class {
        c.ap.iter_mut().for_each(|v| *v = round_sig(*v));
    }
    run.emit("eval.json", &(serde_json::to_string_pretty(&result)? + "\n"))?;
    println!("mAP@0.5 = {}  mAP@[0.5:0.95] = {}", result.map_50, result.map_50_95);
    run.finish()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if cause.is::<ValidationFailed>() {
            return EXIT_VALIDATION;
        }
        if let Some(e) = cause.downcast_ref::<crosswalk::Error>() {
            use crosswalk::Error as E;
            return match e {
                E::InvalidConfig(_) => EXIT_CONFIG,
                E::Calibration { .. } => EXIT_CALIBRATION,
                E::Io { .. } => EXIT_RUNTIME,
                E::InvalidScenario(_)
                | E::StreamOrder { .. }
                | E::Parse { .. }
                | E::Validation(_)
                | E::UnknownClass(_)
                | E::UndefinedMetric(_)
                | E::Json(_) => EXIT_VALIDATION,
            };
        }
    }
    EXIT_RUNTIME
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { common, model, controller } => cmd_simulate(common, model, controller),
        Command::Sweep { common, model, tau_e, tau_t } => cmd_sweep(common, model, tau_e, tau_t),
        Command::Calibrate { common, model, target, tolerance } => cmd_calibrate(common, model, *target, *tolerance),
        Command::Replay { common, controller, frames, initial_signal_s, trace } => {
            cmd_replay(common, controller, frames, *initial_signal_s, *trace)
        }
        Command::Convert { common, coco_dir, class_order } => cmd_convert(common, coco_dir, class_order.as_deref()),
        Command::Evaldet {
            common,
            pred,
            gt,
            keep_vacuous,
            num_classes,
        } => cmd_evaldet(common, pred, gt, *keep_vacuous, *num_classes),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let _ = writeln!(std::io::stderr(), "error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
