//! Single entry-point CLI: dataset preparation, pipeline execution,
//! latency benchmarking, and metric scoring.
//!
//! Exit codes: 0 success, 1 when per-item failures occurred, 2 on
//! configuration or usage errors. Progress goes to stderr; machine-readable
//! artifacts go to files only.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use stonescan::config::KeyValueConfig;
use stonescan::dataprep::{self, AugmentConfig, Label, Manifest, Split};
use stonescan::error::Error;
use stonescan::eval;
use stonescan::pipeline::{self, ClassifierSource, DetectorSource, PipelineConfig};

#[derive(Parser)]
#[command(name = "stonescan", version, about = "Kidney-stone CT detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a dataset directory and write a manifest CSV
    Manifest(ManifestArgs),
    /// Run the offline augmentation recipe over manifest rows
    Augment(AugmentArgs),
    /// Run the detection + classification pipeline over a manifest
    Run(RunArgs),
    /// Measure per-stage latency over repeated pipeline runs
    Bench(BenchArgs),
    /// Score pipeline results against ground-truth labels
    Score(ScoreArgs),
}

#[derive(Args)]
struct ManifestArgs {
    /// Dataset root laid out as <root>/<split>/<label>/<image>
    #[arg(long)]
    root: PathBuf,
    /// Output manifest CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AugmentArgs {
    /// Input manifest CSV
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for augmented images
    #[arg(long)]
    out: PathBuf,
    /// RNG seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Row filter, e.g. `split=train`
    #[arg(long)]
    filter: Option<String>,
    /// Fraction of target-class images to rotate
    #[arg(long, default_value_t = 0.5)]
    rotate_fraction: f32,
    /// Rotation range in degrees (symmetric)
    #[arg(long, default_value_t = 25.0)]
    rotate_range: f32,
    /// Disable the horizontal-flip copies
    #[arg(long)]
    no_flip: bool,
    /// Class receiving augmentation
    #[arg(long, default_value = "stone")]
    target_class: String,
}

#[derive(Args, Clone)]
struct PipelineArgs {
    /// Manifest CSV listing the images to process
    #[arg(long)]
    manifest: PathBuf,
    /// Key-value config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Detector ONNX model path
    #[arg(long)]
    detector_model: Option<PathBuf>,
    /// Detector replay fixture (JSON Lines)
    #[arg(long)]
    detector_replay: Option<PathBuf>,
    /// Classifier ONNX model path
    #[arg(long)]
    classifier_model: Option<PathBuf>,
    /// Constant classifier logit (weight-free runs)
    #[arg(long)]
    classifier_stub_logit: Option<f32>,
    /// Detector confidence threshold
    #[arg(long)]
    conf_threshold: Option<f32>,
    /// Detector NMS IoU threshold
    #[arg(long)]
    iou_threshold: Option<f32>,
    /// Detector input side in pixels
    #[arg(long)]
    detector_input_side: Option<u32>,
    /// Maximum detections kept per image
    #[arg(long)]
    max_detections: Option<usize>,
    /// Classifier input side in pixels
    #[arg(long)]
    classifier_input_side: Option<u32>,
    /// Classifier decision threshold
    #[arg(long)]
    classifier_threshold: Option<f32>,
    /// Treat classifier output as a probability (skip sigmoid)
    #[arg(long)]
    output_is_probability: bool,
    /// Worker count for data-parallel execution
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Directory for ROI crop PNGs
    #[arg(long)]
    crops: Option<PathBuf>,
    /// Results JSON Lines output path
    #[arg(long, default_value = "results.jsonl")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Number of repetitions
    #[arg(long)]
    reps: usize,
    /// Latency report JSON output path
    #[arg(long, default_value = "bench.json")]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    /// Results JSON Lines from `run`
    #[arg(long)]
    results: PathBuf,
    /// Labels CSV: crop_id,label
    #[arg(long)]
    labels: PathBuf,
    /// Report JSON output path
    #[arg(long)]
    out: PathBuf,
    /// Reference metric targets (JSON object of metric -> value)
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Absolute tolerance for the reference comparison
    #[arg(long, default_value_t = 0.03)]
    tol: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Manifest(args) => cmd_manifest(args),
        Command::Augment(args) => cmd_augment(args),
        Command::Run(args) => cmd_run(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Score(args) => cmd_score(args),
    };
    match result {
        Ok(code) => code,
        Err(Error::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn cmd_manifest(args: ManifestArgs) -> Result<ExitCode, Error> {
    let manifest = dataprep::build_manifest(&args.root)?;
    manifest.write_csv(&args.out)?;
    eprintln!(
        "manifest: {} rows ({})",
        manifest.len(),
        manifest
            .split_counts()
            .iter()
            .map(|(s, n)| format!("{s}: {n}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(ExitCode::SUCCESS)
}

fn parse_filter(filter: Option<&str>) -> Result<Option<Split>, Error> {
    match filter {
        None => Ok(None),
        Some(f) => match f.split_once('=') {
            Some(("split", value)) => Ok(Some(value.parse()?)),
            _ => Err(Error::Config(format!(
                "unsupported filter `{f}`; expected split=<train|val|test>"
            ))),
        },
    }
}

fn cmd_augment(args: AugmentArgs) -> Result<ExitCode, Error> {
    let manifest = Manifest::read_csv(&args.manifest)?;
    let rows = match parse_filter(args.filter.as_deref())? {
        Some(split) => manifest.filter_split(split),
        None => manifest.rows().to_vec(),
    };
    let cfg = AugmentConfig {
        seed: args.seed,
        rotate_fraction: args.rotate_fraction,
        rotate_range_deg: args.rotate_range,
        flip: !args.no_flip,
        target_class: Label::from_str(&args.target_class)?,
    };
    let outcome = dataprep::augment(&rows, &cfg, &args.out)?;
    outcome.manifest.write_csv(&args.out.join("manifest.csv"))?;
    eprintln!(
        "augment: {} inputs -> {} outputs, {} errors",
        rows.len(),
        outcome.manifest.len(),
        outcome.errors.len()
    );
    for e in &outcome.errors {
        eprintln!("  {}: {}", e.stem, e.error);
    }
    Ok(if outcome.errors.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn build_pipeline_config(args: &PipelineArgs) -> Result<PipelineConfig, Error> {
    let file = match &args.config {
        Some(path) => KeyValueConfig::load(path)?,
        None => KeyValueConfig::default(),
    };
    let detector_model = args
        .detector_model
        .clone()
        .or_else(|| file.get("detector_model").map(PathBuf::from));
    let detector_replay = args
        .detector_replay
        .clone()
        .or_else(|| file.get("detector_replay").map(PathBuf::from));
    let detector_source = match (detector_model, detector_replay) {
        (Some(model), None) => DetectorSource::OnnxModel(model),
        (None, Some(replay)) => DetectorSource::ReplayFile(replay),
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "set exactly one of detector_model / detector_replay, not both".into(),
            ))
        }
        (None, None) => {
            return Err(Error::Config(
                "detector source missing: set detector_model or detector_replay".into(),
            ))
        }
    };
    let classifier_model = args
        .classifier_model
        .clone()
        .or_else(|| file.get("classifier_model").map(PathBuf::from));
    let classifier_logit = match args.classifier_stub_logit {
        Some(l) => Some(l),
        None => file.get_parsed::<f32>("classifier_stub_logit")?,
    };
    let classifier_source = match (classifier_model, classifier_logit) {
        (Some(model), None) => ClassifierSource::OnnxModel(model),
        (None, Some(logit)) => ClassifierSource::ConstLogit(logit),
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "set exactly one of classifier_model / classifier_stub_logit, not both".into(),
            ))
        }
        (None, None) => {
            return Err(Error::Config(
                "classifier source missing: set classifier_model or classifier_stub_logit".into(),
            ))
        }
    };

    let mut cfg = PipelineConfig::new(detector_source, classifier_source);
    macro_rules! merge {
        ($target:expr, $flag:expr, $key:literal, $ty:ty) => {
            if let Some(v) = $flag.or(file.get_parsed::<$ty>($key)?) {
                $target = v;
            }
        };
    }
    merge!(cfg.detector.conf_threshold, args.conf_threshold, "conf_threshold", f32);
    merge!(cfg.detector.iou_threshold, args.iou_threshold, "iou_threshold", f32);
    merge!(cfg.detector.input_side, args.detector_input_side, "detector_input_side", u32);
    merge!(cfg.detector.max_detections, args.max_detections, "max_detections", usize);
    merge!(cfg.classifier.input_side, args.classifier_input_side, "classifier_input_side", u32);
    merge!(cfg.classifier.threshold, args.classifier_threshold, "classifier_threshold", f32);
    merge!(cfg.workers, args.workers, "workers", usize);
    if args.output_is_probability {
        cfg.classifier.output_is_probability = true;
    } else if let Some(v) = file.get_parsed::<bool>("output_is_probability")? {
        cfg.classifier.output_is_probability = v;
    }
    if let Some(dir) = file.get("crops_dir") {
        cfg.crop_output_dir = Some(PathBuf::from(dir));
    }
    Ok(cfg)
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, Error> {
    let manifest = Manifest::read_csv(&args.pipeline.manifest)?;
    let mut cfg = build_pipeline_config(&args.pipeline)?;
    if let Some(crops) = &args.crops {
        cfg.crop_output_dir = Some(crops.clone());
    }
    let results = pipeline::run_pipeline(&manifest, &cfg)?;
    std::fs::write(&args.out, pipeline::results_to_jsonl(&results))
        .map_err(|e| Error::io(&args.out, e))?;
    let failures = results.iter().filter(|r| r.error.is_some()).count();
    let excluded = results
        .iter()
        .filter(|r| r.outcome.as_ref().is_some_and(|o| o.is_excluded()))
        .count();
    eprintln!(
        "run: {} images, {} excluded, {} failed -> {}",
        results.len(),
        excluded,
        failures,
        args.out.display()
    );
    Ok(if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_bench(args: BenchArgs) -> Result<ExitCode, Error> {
    let manifest = Manifest::read_csv(&args.pipeline.manifest)?;
    let cfg = build_pipeline_config(&args.pipeline)?;
    let report = pipeline::bench(&manifest, &cfg, args.reps)?;
    std::fs::write(
        &args.out,
        serde_json::to_string_pretty(&report).expect("report serialization"),
    )
    .map_err(|e| Error::io(&args.out, e))?;
    for (stage, s) in &report.stages {
        eprintln!(
            "bench: {stage}: mean {:.2} ms, median {:.2} ms, p95 {:.2} ms ({} samples)",
            s.mean_ms, s.median_ms, s.p95_ms, s.samples
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_score(args: ScoreArgs) -> Result<ExitCode, Error> {
    let text = std::fs::read_to_string(&args.results).map_err(|e| Error::io(&args.results, e))?;
    let results = pipeline::results_from_jsonl(&text)?;
    let labels = eval::read_labels_csv(&args.labels)?;
    let report = eval::score(&results, &labels)?;

    let mut failed_checks = 0usize;
    let checks = match &args.reference {
        None => Vec::new(),
        Some(path) => {
            let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let reference: BTreeMap<String, f64> = serde_json::from_str(&raw)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let checks = eval::compare_to_reference(&report, &reference, args.tol);
            for c in &checks {
                let obs = c
                    .observed
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "absent".into());
                eprintln!(
                    "score: {} observed {} vs reference {:.4} (tol {}): {}",
                    c.metric,
                    obs,
                    c.reference,
                    c.tolerance,
                    if c.pass { "pass" } else { "FAIL" }
                );
                if !c.pass {
                    failed_checks += 1;
                }
            }
            checks
        }
    };

    #[derive(serde::Serialize)]
    struct FullReport<'a> {
        #[serde(flatten)]
        report: &'a eval::EvalReport,
        #[serde(skip_serializing_if = "Vec::is_empty")]
        reference_checks: Vec<eval::MetricCheck>,
    }
    std::fs::write(
        &args.out,
        serde_json::to_string_pretty(&FullReport {
            report: &report,
            reference_checks: checks,
        })
        .expect("report serialization"),
    )
    .map_err(|e| Error::io(&args.out, e))?;
    eprintln!(
        "score: {} crops scored, {} excluded images, {} errored -> {}",
        report.crop_matrix.total(),
        report.excluded_images,
        report.errored_images,
        args.out.display()
    );
    Ok(if failed_checks == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
