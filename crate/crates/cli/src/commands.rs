use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use skywatch::autoenc::{load_model, model_to_json, train, Architecture, AutoencoderModel, TrainConfig};
use skywatch::detector::*;
use skywatch::evalstats::{dataset_report, evaluation_tables, summary_text, EvalConfig, GroundTruth, DEFAULT_GAMMA};
use skywatch::flightdata::{parse_flight_log, parse_labels, parse_obstacles, FlightLog, LabelMap, LogDescriptor, ObstacleBox};
use skywatch::geometry::{fitness_distance, FitnessParams, Trajectory};
use skywatch::preprocess::*;
use skywatch::synthgen::{generate, ClassCounts, SynthConfig};

use crate::manifest::{Run, RunManifest};
use crate::settings::Settings;
use crate::{
    CalibrateArgs, Cli, Command, DetectArgs, EvaluateArgs, FitnessArgs, NominalArgs, PreprocessArgs, SynthArgs,
    TrainArgs, WindowArgs,
};

pub const WINDOWS_FILE: &str = "windows.csv";
pub const MODEL_FILE: &str = "model.json";
pub const ALARMS_FILE: &str = "alarms.csv";
pub const REPORTS_DIR: &str = "reports";
pub const EVALUATION_FILE: &str = "evaluation.json";

pub fn run(cli: Cli) -> Result<RunManifest> {
    let mut s = Settings::load(cli.config.as_deref())?;
    let seed = s.get("seed", cli.seed, 42)?;
    let out = s.get("out", cli.out, PathBuf::from("out"))?;
    let name = match &cli.command {
        Command::Preprocess(_) => "preprocess",
        Command::Train(_) => "train",
        Command::Calibrate(_) => "calibrate",
        Command::Detect(_) => "detect",
        Command::Evaluate(_) => "evaluate",
        Command::Fitness(_) => "fitness",
        Command::Synth(_) => "synth",
    };
    let mut run = Run::new(name, seed);
    if let Some(c) = &cli.config {
        run.input(c);
    }
    match cli.command {
        Command::Preprocess(a) => preprocess(a, &mut s, &out, &mut run),
        Command::Train(a) => train_cmd(a, &mut s, &out, seed, &mut run),
        Command::Calibrate(a) => calibrate(a, &mut s, &out, &mut run),
        Command::Detect(a) => detect(a, &mut s, &out, &mut run),
        Command::Evaluate(a) => evaluate(a, &mut s, &out, &mut run),
        Command::Fitness(a) => fitness(a, &mut s, &out, &mut run),
        Command::Synth(a) => synth(a, &mut s, &out, seed, &mut run),
    }
    .with_context(|| format!("{name} failed"))?;
    run.finish(&out, s.effective().clone())
}

fn window_config(s: &mut Settings, w: WindowArgs, base: PreprocessConfig) -> Result<PreprocessConfig> {
    let cfg = PreprocessConfig {
        window_length: s.get("window_s", w.window_s, base.window_length)?,
        overlap: s.get("overlap_s", w.overlap_s, base.overlap)?,
        sample_rate: s.get("rate_hz", w.rate_hz, base.sample_rate)?,
        ..base
    };
    cfg.validate()?;
    Ok(cfg)
}

fn nominal_config(s: &mut Settings, n: NominalArgs) -> Result<PreprocessConfig> {
    let base = PreprocessConfig::default();
    let cfg = PreprocessConfig {
        nominal_distance: s.get("nominal_dist", n.nominal_dist, base.nominal_distance)?,
        nominal_lookahead: s.get("lookahead_s", n.lookahead_s, base.nominal_lookahead)?,
        ..base
    };
    cfg.validate()?;
    Ok(cfg)
}

/// CSV files directly inside `dir`, sorted by name.
fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

fn load_log(path: &Path) -> Result<FlightLog> {
    let stem = path
        .file_stem()
        .with_context(|| format!("no file name in {}", path.display()))?
        .to_string_lossy();
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(parse_flight_log(BufReader::new(file), LogDescriptor::from_stem(&stem))?)
}

fn load_obstacles(path: &Path, run: &mut Run) -> Result<Vec<ObstacleBox>> {
    run.input(path);
    let file = File::open(path).with_context(|| format!("opening obstacles {}", path.display()))?;
    Ok(parse_obstacles(BufReader::new(file))?)
}

fn load_labels(path: &Path, run: &mut Run) -> Result<LabelMap> {
    run.input(path);
    let file = File::open(path).with_context(|| format!("opening labels {}", path.display()))?;
    Ok(parse_labels(BufReader::new(file))?)
}

fn load_windows(path: &Path, run: &mut Run) -> Result<(Vec<HeadingWindow>, usize)> {
    run.input(path);
    let file = File::open(path).with_context(|| format!("opening windows {}", path.display()))?;
    Ok(read_windows(BufReader::new(file))?)
}

fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text.into_bytes())
}

fn preprocess(a: PreprocessArgs, s: &mut Settings, out: &Path, run: &mut Run) -> Result<()> {
    let logs = s.require("logs", a.logs)?;
    let obstacles_path = s.get_opt("obstacles", a.obstacles)?;
    let labels_path = s.get_opt("labels", a.labels)?;
    let require = s.switch("require_distances", a.require_distances)?;
    let cfg = window_config(s, a.window, PreprocessConfig::default())?;
    let w = cfg.samples_per_window()?;

    let obstacles = match &obstacles_path {
        Some(p) => load_obstacles(p, run)?,
        None if require => bail!("--require-distances needs an obstacle file"),
        None => Vec::new(),
    };
    let labels = labels_path.as_deref().map(|p| load_labels(p, run)).transpose()?;

    let mut all = Vec::new();
    let files = csv_files(&logs)?;
    if files.is_empty() {
        bail!("no log files in {}", logs.display());
    }
    for path in files {
        run.input(&path);
        let result = load_log(&path).and_then(|log| {
            let l = labels.as_ref().and_then(|m| m.get(&log.flight_id));
            if labels.is_some() && l.is_none() {
                bail!("no label for flight {}", log.flight_id);
            }
            let (windows, trace) = preprocess_flight(&log, &obstacles, &cfg, l)?;
            if require && trace.is_none() {
                bail!("no position samples for distance annotation");
            }
            Ok(windows)
        });
        match result {
            Ok(windows) => all.extend(windows),
            Err(e) => run.fail(path.display(), format!("{e:#}")),
        }
    }
    let mut buf = Vec::new();
    write_windows(&all, w, &mut buf)?;
    run.write(out.join(WINDOWS_FILE), &buf)?;
    println!("{} windows of {w} samples", all.len());
    Ok(())
}

fn train_cmd(a: TrainArgs, s: &mut Settings, out: &Path, seed: u64, run: &mut Run) -> Result<()> {
    let path = s.require("windows", a.windows)?;
    let pcfg = nominal_config(s, a.nominal)?;
    let d = TrainConfig::default();
    let tcfg = TrainConfig {
        max_epochs: s.get("epochs", a.epochs, d.max_epochs)?,
        batch_size: s.get("batch_size", a.batch_size, d.batch_size)?,
        learning_rate: s.get("learning_rate", a.learning_rate, d.learning_rate)?,
        patience: s.get("patience", a.patience, d.patience)?,
        seed,
        ..d
    };
    let (windows, w) = load_windows(&path, run)?;
    let nominal = filter_nominal_annotated(&windows, &pcfg);
    if nominal.is_empty() {
        bail!("zero nominal windows in {}", path.display());
    }
    let arch = Architecture {
        input_length: w,
        ..Default::default()
    };
    let (model, report) = train(&nominal, arch, &tcfg)?;
    run.write(out.join(MODEL_FILE), model_to_json(&model)?.as_bytes())?;
    run.write(out.join("training.json"), &to_json_bytes(&report)?)?;
    println!(
        "trained on {} nominal windows: {} epochs, final loss {:.6e}",
        nominal.len(),
        report.epochs,
        report.final_loss
    );
    Ok(())
}

fn calibrate(a: CalibrateArgs, s: &mut Settings, out: &Path, run: &mut Run) -> Result<()> {
    let model_path = s.require("model", a.model)?;
    let path = s.require("windows", a.windows)?;
    let pcfg = nominal_config(s, a.nominal)?;
    let q = s.get("quantile", a.quantile, 0.999)?;
    let set = s.get_opt("set_threshold", a.set_threshold)?;

    run.input(&model_path);
    let mut model = load_model(&model_path)?;
    let (windows, _) = load_windows(&path, run)?;
    let nominal = filter_nominal_annotated(&windows, &pcfg);
    if nominal.is_empty() {
        bail!("zero nominal windows in {}", path.display());
    }
    let losses = nominal
        .iter()
        .map(|w| model.window_loss(&w.values))
        .collect::<skywatch::Result<Vec<f64>>>()?;
    let cal = calibrate_threshold(&losses, q)?;
    let mut hist = Vec::new();
    write_histogram_csv(&cal.histogram, &mut hist)?;
    run.write(out.join("histogram.csv"), &hist)?;
    run.write(out.join("calibration.json"), &to_json_bytes(&cal)?)?;
    println!("suggested threshold {:.6e} (quantile {q}, max nominal loss {:.6e})", cal.threshold, cal.max_loss);
    if let Some(theta) = set {
        if !(theta.is_finite() && theta > 0.0) {
            bail!("threshold must be positive, got {theta}");
        }
        model.meta.threshold = Some(theta);
        run.write(out.join(MODEL_FILE), model_to_json(&model)?.as_bytes())?;
        println!("threshold {theta} stored in {}", out.join(MODEL_FILE).display());
    }
    Ok(())
}

fn detector_config(s: &mut Settings, a: &DetectArgs, model: &AutoencoderModel) -> Result<DetectorConfig> {
    let d = DetectorConfig::default();
    let cfg = DetectorConfig {
        threshold: s.get("threshold", a.threshold, model.meta.threshold.unwrap_or(d.threshold))?,
        n_consecutive: s.get("n_consecutive", a.n_consecutive, d.n_consecutive)?,
        critical_distance: s.get("critical_distance", a.critical_distance, d.critical_distance)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn detect(a: DetectArgs, s: &mut Settings, out: &Path, run: &mut Run) -> Result<()> {
    let model_path = s.require("model", a.model.clone())?;
    run.input(&model_path);
    let model = load_model(&model_path)?;
    let dcfg = detector_config(s, &a, &model)?;
    let stream = s.switch("stream", a.stream)?;
    let logs_dir = s.get_opt("logs", a.logs.clone())?;
    let windows_path = s.get_opt("windows", a.windows.clone())?;
    let obstacles_path = s.get_opt("obstacles", a.obstacles.clone())?;
    let base = PreprocessConfig {
        window_length: model.meta.window_length,
        overlap: model.meta.overlap,
        sample_rate: model.meta.sample_rate,
        ..Default::default()
    };
    let pcfg = window_config(s, a.window, base)?;
    if pcfg.samples_per_window()? != model.input_length() {
        bail!(
            "windows of {} samples do not fit a model expecting {}",
            pcfg.samples_per_window()?,
            model.input_length()
        );
    }

    let mut logs = a.log.clone();
    if let Some(dir) = &logs_dir {
        logs.extend(csv_files(dir)?);
    }
    let sources = usize::from(stream) + usize::from(!logs.is_empty()) + usize::from(windows_path.is_some());
    if sources != 1 {
        bail!("give exactly one input: --log/--logs, --windows or --stream");
    }

    let reports = if stream {
        detect_from_stdin(&model, dcfg)?
    } else if let Some(path) = windows_path {
        let (windows, _) = load_windows(&path, run)?;
        let mut reports = Vec::new();
        for (id, flight) in group_by_flight(&windows) {
            match detect_stream(&model, &id, flight.iter().copied(), dcfg) {
                Ok(r) => reports.push(r),
                Err(e) => run.fail(&id, e),
            }
        }
        reports
    } else {
        let obstacles = match &obstacles_path {
            Some(p) => load_obstacles(p, run)?,
            None => Vec::new(),
        };
        let mut reports = Vec::new();
        for path in logs {
            run.input(&path);
            let result = load_log(&path).and_then(|log| {
                let (windows, trace) = preprocess_flight(&log, &obstacles, &pcfg, None)?;
                let mut r = detect_stream(&model, &log.flight_id, &windows, dcfg)?;
                if let Some(trace) = &trace {
                    r.apply_lead_time(lead_time_analysis(&r, trace, &dcfg));
                }
                Ok(r)
            });
            match result {
                Ok(r) => reports.push(r),
                Err(e) => run.fail(path.display(), format!("{e:#}")),
            }
        }
        reports
    };

    for r in &reports {
        run.write(out.join(REPORTS_DIR).join(format!("{}.json", r.flight_id)), r.to_json()?.as_bytes())?;
        let verdict = if r.flight_uncertain { "uncertain" } else { "certain" };
        let line = match r.first_alarm_time {
            Some(t) => format!("{}: {verdict}, {} alarm(s), first at {t:.1} s", r.flight_id, r.alarms.len()),
            None => format!("{}: {verdict}", r.flight_id),
        };
        // in stream mode standard output carries only alarm rows
        if stream {
            eprintln!("{line}");
        } else {
            println!("{line}");
        }
    }
    let mut alarms = Vec::new();
    write_alarms_csv(&reports, &mut alarms)?;
    run.write(out.join(ALARMS_FILE), &alarms)?;
    Ok(())
}

/// Windows grouped by flight in order of first appearance.
fn group_by_flight(windows: &[HeadingWindow]) -> Vec<(String, Vec<&HeadingWindow>)> {
    let mut groups: Vec<(String, Vec<&HeadingWindow>)> = Vec::new();
    for w in windows {
        match groups.iter_mut().find(|(id, _)| *id == w.flight_id) {
            Some((_, g)) => g.push(w),
            None => groups.push((w.flight_id.clone(), vec![w])),
        }
    }
    groups
}

/// Scores windows as they arrive on standard input; alarm rows are flushed
/// to standard output immediately.
fn detect_from_stdin(model: &AutoencoderModel, cfg: DetectorConfig) -> Result<Vec<DetectionReport>> {
    let stdin = std::io::stdin();
    let reader = WindowStreamReader::new(stdin.lock())?;
    let stdout = std::io::stdout();
    let mut sink = stdout.lock();
    write_alarms_header(&mut sink)?;
    sink.flush()?;
    let mut detectors: BTreeMap<String, StreamDetector<'_>> = BTreeMap::new();
    for window in reader {
        let window = window?;
        if !detectors.contains_key(&window.flight_id) {
            detectors.insert(window.flight_id.clone(), StreamDetector::new(model, &window.flight_id, cfg)?);
        }
        let det = detectors.get_mut(&window.flight_id).expect("inserted above");
        if let Some(alarm) = det.push(&window)? {
            write_alarm_row(&mut sink, &window.flight_id, &alarm)?;
            sink.flush()?;
        }
    }
    Ok(detectors.into_values().map(StreamDetector::finish).collect())
}

fn evaluate(a: EvaluateArgs, s: &mut Settings, out: &Path, run: &mut Run) -> Result<()> {
    let dir = s.require("reports", a.reports)?;
    let labels_path = s.require("labels", a.labels)?;
    let axis: String = s.get("ground_truth", a.ground_truth, "certainty".to_string())?;
    let cfg = EvalConfig {
        gamma: s.get("gamma", a.gamma, DEFAULT_GAMMA)?,
        primary_axis: axis.parse::<GroundTruth>()?,
    };
    let labels = load_labels(&labels_path, run)?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut reports = Vec::new();
    for p in files {
        let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        reports.push(DetectionReport::from_json(&text).with_context(|| format!("parsing {}", p.display()))?);
        run.input(p);
    }
    let doc = dataset_report(&reports, &labels, &cfg)?;
    run.write(out.join(EVALUATION_FILE), doc.to_json()?.as_bytes())?;
    for (stem, csv) in evaluation_tables(&doc) {
        run.write(out.join("tables").join(format!("{stem}.csv")), csv.as_bytes())?;
    }
    let summary = summary_text(&doc);
    run.write(out.join("summary.txt"), summary.as_bytes())?;
    print!("{summary}");
    Ok(())
}

#[derive(Serialize)]
struct FitnessDoc {
    executions: Vec<String>,
    max_dtw: f64,
    resample_n: usize,
    sum_dist: f64,
    ave_dtw: f64,
    fitness: f64,
}

fn fitness(a: FitnessArgs, s: &mut Settings, out: &Path, run: &mut Run) -> Result<()> {
    let obstacles_path = s.require("obstacles", a.obstacles)?;
    let d = FitnessParams::default();
    let params = FitnessParams {
        max_dtw: s.get("max_dtw", a.max_dtw, d.max_dtw)?,
        resample_n: s.get("resample_n", a.resample_n, d.resample_n)?,
    };
    let mut files = a.executions;
    if let Some(dir) = s.get_opt("logs", a.logs)? {
        files.extend(csv_files(&dir)?);
    }
    if files.is_empty() {
        bail!("no execution logs given");
    }
    let obstacles = load_obstacles(&obstacles_path, run)?;
    let mut trajs = Vec::new();
    let mut ids = Vec::new();
    for p in &files {
        run.input(p);
        let log = load_log(p)?;
        trajs.push(Trajectory::from_log(&log).with_context(|| format!("trajectory of {}", p.display()))?);
        ids.push(log.flight_id);
    }
    let f = fitness_distance(&trajs, &obstacles, &params)?;
    let doc = FitnessDoc {
        executions: ids,
        max_dtw: params.max_dtw,
        resample_n: params.resample_n,
        sum_dist: f.sum_dist,
        ave_dtw: f.ave_dtw,
        fitness: f.distance,
    };
    run.write(out.join("fitness.json"), &to_json_bytes(&doc)?)?;
    println!("fitness {:.6} (sum_dist {:.6}, ave_dtw {:.6})", f.distance, f.sum_dist, f.ave_dtw);
    Ok(())
}

fn synth(a: SynthArgs, s: &mut Settings, out: &Path, seed: u64, run: &mut Run) -> Result<()> {
    let counts: ClassCounts = s.get("counts", a.counts, "50,50,50,50".to_string())?.parse()?;
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        seed,
        flight_duration: s.get("duration_s", a.duration_s, d.flight_duration)?,
        sample_rate: s.get("rate_hz", a.rate_hz, d.sample_rate)?,
        noise_std: s.get("noise_std", a.noise_std, d.noise_std)?,
        ..d
    };
    let ds = generate(&cfg, counts)?;
    run.outputs.extend(ds.write_to(out)?);
    println!("{} flights ({counts}) written to {}", ds.flights.len(), out.display());
    Ok(())
}
