//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crosswalk::annotations::{coco_box_to_yolo, yolo_box_to_coco, IdMap};
use crosswalk::detmetrics::{self, average_precision, coco_thresholds, iou, match_predictions, mean_ap, EvalOptions};
use crosswalk::montecarlo::{
    binomial_se, calibrate_speed_cv, default_sweep_axis, parameter_sweep, run_comparison, run_trials,
};
use crosswalk::{BBox, GroundTruth, Prediction, SimConfig, SimReport, SpeedModel};

type Check = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn FnOnce() -> Check + 'a>);

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn cli(args: &[&str], out: &Path) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_crosswalk"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr).trim()))
    }
}

fn read(path: impl AsRef<Path>) -> Result<Vec<u8>, String> {
    fs::read(path.as_ref()).map_err(|e| format!("{}: {e}", path.as_ref().display()))
}

fn ensure(ok: bool, what: String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what)
    }
}

const BASE_MAX: f64 = 60.0 / 3.5 + 5.0;

struct DefaultRun {
    config: SimConfig,
    report: SimReport,
    seconds: f64,
}

fn default_run() -> Result<DefaultRun, String> {
    let cal = calibrate_speed_cv(&SimConfig::default(), 0.091, 0.002).map_err(|e| e.to_string())?;
    let config = SimConfig {
        speed_model: SpeedModel::with_cv(cal.coefficient_of_variation),
        ..Default::default()
    };
    let start = Instant::now();
    let report = run_comparison(&config).map_err(|e| e.to_string())?;
    Ok(DefaultRun {
        config,
        report,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn stranding(run: &DefaultRun) -> Check {
    let r = &run.report;
    let detail = format!(
        "cv {:.4}, fixed {:.2}% (target 9.10 +/- 2.0), NPLB {:.2}% (target 2.60 +/- 1.5), improvement {:.1}% (>= 60), {:.2} s",
        run.config.speed_model.coefficient_of_variation,
        100.0 * r.fixed.stranding_rate,
        100.0 * r.nplb.stranding_rate,
        r.improvement_pct,
        run.seconds
    );
    let ok = (r.fixed.stranding_rate - 0.091).abs() <= 0.020
        && (r.nplb.stranding_rate - 0.026).abs() <= 0.015
        && r.improvement_pct >= 60.0
        && run.seconds < 10.0
        && r.n_trials == 10_000;
    ensure(ok, detail.clone()).map(|_| detail)
}

fn extension_distribution(run: &DefaultRun) -> Check {
    let s = run.report.extension_shares();
    let targets = [(0.879, 0.05), (0.106, 0.04), (0.015, 0.02)];
    let detail = format!(
        "shares {:.1}% / {:.1}% / {:.1}% (targets 87.9 +/- 5, 10.6 +/- 4, 1.5 +/- 2)",
        100.0 * s[0],
        100.0 * s[1],
        100.0 * s[2]
    );
    let ok = s.len() == 3 && s.iter().zip(targets).all(|(v, (t, tol))| (v - t).abs() <= tol);
    ensure(ok, detail.clone()).map(|_| detail)
}

fn duration_bounds(run: &DefaultRun) -> Check {
    let tick = run.config.controller.tick_s;
    let fixed_max = run.report.fixed.duration_max;
    let nplb_max = run.report.nplb.duration_max;
    let detail = format!(
        "max fixed {fixed_max:.4} s (bound {BASE_MAX:.4} +/- {tick:.4}), max NPLB {nplb_max:.4} s (<= {:.4})",
        BASE_MAX + 6.0
    );
    let ok = (fixed_max - BASE_MAX).abs() <= tick && fixed_max <= BASE_MAX && nplb_max <= BASE_MAX + 6.0;
    ensure(ok, detail.clone()).map(|_| detail)
}

fn dominance() -> Check {
    let mut checked = 0usize;
    for seed in 0..100u64 {
        let config = SimConfig {
            n_trials: 1000,
            seed,
            ..Default::default()
        };
        for t in run_trials(&config).map_err(|e| e.to_string())? {
            ensure(
                t.adaptive.signal_duration_s >= t.fixed.signal_duration_s,
                format!("seed {seed} trial {}: NPLB duration below fixed", t.trial),
            )?;
            ensure(
                !t.adaptive.stranded || t.fixed.stranded,
                format!("seed {seed} trial {}: stranded only under NPLB", t.trial),
            )?;
            checked += 1;
        }
        let blind = SimConfig { alpha: 1.0, ..config };
        let r = run_comparison(&blind).map_err(|e| e.to_string())?;
        ensure(
            r.fixed == r.nplb && r.improvement_pct == 0.0 && r.extension_histogram[1..].iter().all(|&c| c == 0),
            format!("seed {seed}: alpha = 1 report differs from fixed"),
        )?;
    }
    Ok(format!("{checked} trials over 100 seeds; alpha = 1 reports identical to fixed"))
}

fn golden_replay() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let replay = fixtures().join("replay");
    let out = dir.path().join("stepped");
    cli(
        &[
            "replay",
            replay.join("stepped_frames.jsonl").to_str().unwrap(),
            "--tick-s",
            "1",
            "--initial-signal-s",
            "30",
            "--trace",
        ],
        &out,
    )?;
    ensure(
        read(out.join("commands.jsonl"))? == read(replay.join("stepped_commands.jsonl"))?,
        "stepped command log differs".into(),
    )?;
    ensure(
        read(out.join("trace.jsonl"))? == read(replay.join("stepped_trace.jsonl"))?,
        "stepped trace differs".into(),
    )?;
    let out = dir.path().join("video");
    cli(&["replay", replay.join("video_frames.jsonl").to_str().unwrap()], &out)?;
    ensure(
        read(out.join("commands.jsonl"))? == read(replay.join("video_commands.jsonl"))?,
        "30 fps command log differs".into(),
    )?;
    Ok("stepped log and trace (timeout clear at frame 12, cap at frame 33) and 30 fps log byte-identical".into())
}

fn sweep_monotone(run: &DefaultRun) -> Check {
    let axis = default_sweep_axis();
    let grid = parameter_sweep(&run.config, &axis, &axis).map_err(|e| e.to_string())?;
    ensure(grid.len() == 49, format!("{} cells", grid.len()))?;
    for i in 0..axis.len() {
        for j in 0..axis.len() {
            let here = grid.cell(i, j).stranding_rate;
            if i + 1 < axis.len() {
                let next = grid.cell(i + 1, j).stranding_rate;
                ensure(next <= here, format!("tau_e {} -> {} at tau_t {}: {here} -> {next}", axis[i], axis[i + 1], axis[j]))?;
            }
            if j + 1 < axis.len() {
                let next = grid.cell(i, j + 1).stranding_rate;
                ensure(next <= here, format!("tau_t {} -> {} at tau_e {}: {here} -> {next}", axis[j], axis[j + 1], axis[i]))?;
            }
        }
    }
    let first = grid.cell(0, 0).stranding_rate;
    let last = grid.cell(6, 6).stranding_rate;
    Ok(format!("7x7 grid non-increasing; {:.2}% at (3, 3) to {:.2}% at (6, 6)", 100.0 * first, 100.0 * last))
}

fn cv0_oracle() -> Check {
    let config = SimConfig {
        speed_model: SpeedModel::with_cv(0.0),
        ..Default::default()
    };
    let got = run_comparison(&config).map_err(|e| e.to_string())?.fixed.stranding_rate;
    let expected = support::cv0_fixed_stranding(&config.demographics, 3.5, 5.0);
    let se = binomial_se(expected, config.n_trials);
    let detail = format!("simulated {got:.4}, integral {expected:.4}, {:.2} se apart", (got - expected).abs() / se);
    ensure((got - expected).abs() <= 3.0 * se, detail.clone()).map(|_| detail)
}

fn converter() -> Check {
    let ids = IdMap::from_ordered([(1, "c".to_string())]).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let w = rng.random_range(1..=4096) as f64;
        let h = rng.random_range(1..=4096) as f64;
        let x = rng.random::<f64>() * w;
        let y = rng.random::<f64>() * h;
        let bbox = [x, y, rng.random::<f64>() * (w - x), rng.random::<f64>() * (h - y)];
        let label = coco_box_to_yolo(bbox, w, h, 1, &ids).map_err(|e| e.to_string())?;
        let back = yolo_box_to_coco(&label, w, h);
        for (a, b) in bbox.iter().zip(back) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst < 1e-6, format!("round-trip error {worst:e}"))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    cli(&["convert", fixtures().join("coco").to_str().unwrap()], dir.path())?;
    let golden = fixtures().join("coco_labels");
    let mut files = 0;
    for split in ["train", "validation", "test"] {
        for entry in fs::read_dir(golden.join(split)).map_err(|e| e.to_string())? {
            let name = entry.map_err(|e| e.to_string())?.file_name();
            let got = read(dir.path().join("labels").join(split).join(&name))?;
            ensure(got == read(golden.join(split).join(&name))?, format!("{split}/{name:?} differs"))?;
            files += 1;
        }
    }
    Ok(format!(
        "max round-trip error {worst:.1e} px over 10000 boxes; 3 splits validated; {files} golden label files identical"
    ))
}

fn metrics() -> Check {
    let det = fixtures().join("detection");
    let text = |f: &str| fs::read_to_string(det.join(f)).map_err(|e| e.to_string());
    let preds: Vec<Prediction> = detmetrics::parse_predictions(&text("preds.jsonl")?).map_err(|e| e.to_string())?;
    let gts: Vec<GroundTruth> = detmetrics::parse_ground_truths(&text("gts.jsonl")?).map_err(|e| e.to_string())?;
    let thresholds = coco_thresholds::<f64>();
    ensure(thresholds.len() == 10, format!("{} thresholds", thresholds.len()))?;

    for a in 0..12 {
        for b in 0..12 {
            let ra = [a % 4, a / 4, a % 4 + 3 + a % 3, a / 4 + 2 + a % 2];
            let rb = [b % 5, b / 5, b % 5 + 1 + b % 4, b / 5 + 4];
            let bx = |r: [i32; 4]| BBox::new(r[0] as f64, r[1] as f64, r[2] as f64, r[3] as f64);
            ensure(iou(&bx(ra), &bx(rb)) == support::raster_iou(ra, rb), format!("iou {ra:?} {rb:?}"))?;
        }
    }

    let result = detmetrics::map_over_range(&preds, &gts, &thresholds, EvalOptions::default()).map_err(|e| e.to_string())?;
    for (ti, &t) in thresholds.iter().enumerate() {
        for c in &result.per_class {
            let cp: Vec<Prediction> = preds.iter().filter(|p| p.class_index == c.class_index).cloned().collect();
            let cg: Vec<GroundTruth> = gts.iter().filter(|g| g.class_index == c.class_index).cloned().collect();
            let flags: Vec<bool> = match_predictions(&cp, &cg, t).iter().map(|m| m.is_tp).collect();
            let oracle = support::brute_force_flags(&cp, &cg, t);
            ensure(flags == oracle, format!("class {} flags at {t}", c.class_index))?;
            let ap = support::oracle_ap(&oracle, cg.len());
            ensure(c.ap[ti] == ap, format!("class {} AP at {t}: {} vs {ap}", c.class_index, c.ap[ti]))?;
            ensure(average_precision::<f64>(&flags, cg.len()) == ap, "AP from flags".into())?;
        }
        let oracle = support::oracle_map(&preds, &gts, t);
        ensure(result.map_per_threshold[ti] == oracle, format!("mAP at {t}: {} vs {oracle}", result.map_per_threshold[ti]))?;
    }
    ensure(mean_ap(&[0.5, 0.7]).map_err(|e| e.to_string())? == 0.6, "[0.5, 0.7] mean".into())?;
    Ok(format!(
        "fixture matches oracle at all 10 thresholds; mAP@0.5 {:.4}, mAP@[0.5:0.95] {:.4}; mean of [0.5, 0.7] = 0.6",
        result.map_50, result.map_50_95
    ))
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let one = dir.path().join("t1");
    let four = dir.path().join("t4");
    let again = dir.path().join("manifest");
    cli(&["simulate", "--threads", "1"], &one)?;
    cli(&["simulate", "--threads", "4"], &four)?;
    let manifest = one.join("manifest.json");
    cli(&["simulate", "--config", manifest.to_str().unwrap(), "--threads", "3"], &again)?;
    for f in ["report.json", "report.csv", "extensions.csv"] {
        let base = read(one.join(f))?;
        ensure(base == read(four.join(f))?, format!("{f} differs across thread counts"))?;
        ensure(base == read(again.join(f))?, format!("{f} differs when rerun from manifest"))?;
    }
    let s1 = dir.path().join("s1");
    let s4 = dir.path().join("s4");
    cli(&["sweep", "--trials", "2000", "--threads", "1"], &s1)?;
    cli(&["sweep", "--trials", "2000", "--threads", "4"], &s4)?;
    ensure(read(s1.join("sweep.csv"))? == read(s4.join("sweep.csv"))?, "sweep.csv differs".into())?;
    Ok("simulate (threads 1, 4, manifest rerun) and sweep (threads 1, 4) byte-identical".into())
}

fn main() -> ExitCode {
    let shared = default_run();
    let with_run = |f: fn(&DefaultRun) -> Check| match &shared {
        Ok(run) => f(run),
        Err(e) => Err(format!("default run failed: {e}")),
    };
    let criteria: Vec<Criterion> = vec![
        ("stranding reproduction", Box::new(|| with_run(stranding))),
        ("extension distribution", Box::new(|| with_run(extension_distribution))),
        ("duration bounds", Box::new(|| with_run(duration_bounds))),
        ("dominance", Box::new(dominance)),
        ("controller golden replay", Box::new(golden_replay)),
        ("sweep monotonicity", Box::new(|| with_run(sweep_monotone))),
        ("cv = 0 analytic oracle", Box::new(cv0_oracle)),
        ("converter", Box::new(converter)),
        ("metrics", Box::new(metrics)),
        ("determinism", Box::new(determinism)),
    ];

    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let (tag, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{tag}] {:>2}. {name}: {detail}", i + 1);
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
