//! The `phenokey` command line.
//!
//! Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.
//! Diagnostics go to standard error; data goes to `--out` files or standard
//! output. `PHENOKEY_THREADS` caps the worker pool.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anatomy::{
    acr_loss, box_for_image, box_from_predictions, count_violations_coords, fit_prior,
    AnatomicalPrior,
};
use crate::dataset::Dataset;
use crate::dataset::{decode_coco, lint_coco, parse_coco, serialize_coco};
use crate::keypoints::{KeypointIndex, KeypointSet, NUM_KEYPOINTS};
use crate::metrics::{
    evaluate, pixel_deviations, MetricReport, MetricSelection, RateSection, REPORT_SCHEMA_VERSION,
};
use crate::metrics::{EvalConfig, PckScaleMode};
use crate::morphometry::{measure_all, PhenotypeTable};
use crate::optim::{
    batch_pmp, toy_scenario, train, BoxSource, OptimError, ToyPredictor, TraceRecord, TrainConfig,
};
use crate::plot::{deviation_summary_svg, quantile_csv, scatter_svg};
use crate::synth::{
    generate_population, perturb, PerturbationMode, PerturbationModel, SpeciesTemplate,
};

pub const THREADS_ENV: &str = "PHENOKEY_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

fn fail(e: impl std::fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "phenokey",
    version,
    about = "Fish morphometric keypoint evaluation toolkit"
)]
#[command(arg_required_else_help = true)]
struct Cli {
    /// JSON file with `eval` and `train` sections; flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a COCO keypoint file; lists every violation.
    Validate { input: PathBuf },
    /// Measure all phenotypes; CSV `image_id,abbrev,value_px,status`.
    Measure {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions against ground truth; writes a JSON report.
    Evaluate(EvaluateArgs),
    /// Fit an anatomical prior on training ground truth.
    Prior {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// ACR loss and box violations of predictions under a prior.
    Acr {
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Place boxes over the ground-truth bounding boxes instead of the predicted ones.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the toy regressor on a synthetic batch.
    TrainToy(TrainToyArgs),
    /// Generate a synthetic population, optionally with perturbed predictions.
    Synth(SynthArgs),
    /// Render SVG figures.
    #[command(subcommand)]
    Plot(PlotCommand),
    /// Summarize evaluate and measure outputs as a Markdown table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricSelection::All)]
    metric: MetricSelection,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    pmp_threshold: Option<f64>,
    #[arg(long)]
    pck_threshold: Option<f64>,
    #[arg(long, value_enum)]
    pck_scale: Option<PckScaleMode>,
    /// Fixed OKS object scale in pixels instead of the per-image bounding-box diagonal.
    #[arg(long)]
    oks_scale: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Args)]
struct TrainToyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_enum)]
    acr: Option<Switch>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long, value_enum)]
    box_source: Option<BoxSource>,
    /// Per-step trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Trained parameters as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PerturbKind {
    UniformPx,
    Proportional,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Built-in template name (deep_bodied, elongate) or a template JSON file.
    #[arg(long, default_value = "deep_bodied")]
    template: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, requires_all = ["magnitude", "pred_out"])]
    perturb: Option<PerturbKind>,
    #[arg(long)]
    magnitude: Option<f64>,
    /// Seed of the prediction noise; defaults to `seed + 1`.
    #[arg(long)]
    noise_seed: Option<u64>,
    #[arg(long)]
    pred_out: Option<PathBuf>,
    /// Also write the resolved template as JSON.
    #[arg(long)]
    write_template: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum PlotCommand {
    /// Ground truth versus predicted phenotype with the least-squares line.
    Scatter {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        phenotype: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Box plots of pixel deviations, one per `NAME=pred.json`.
    Deviations {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long = "pred", value_name = "NAME=FILE", required = true)]
        preds: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Quantile table `metric,n,min,q1,median,q3,max`.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Report JSON written by `evaluate`.
    #[arg(long)]
    evaluate: PathBuf,
    /// Phenotype CSV of the ground truth, written by `measure`.
    #[arg(long)]
    measure_gt: Option<PathBuf>,
    /// Phenotype CSV of the predictions, written by `measure`.
    #[arg(long)]
    measure_pred: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    eval: EvalConfig,
    train: TrainConfig,
}

fn load_config(path: Option<&Path>) -> CliResult<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text =
        std::fs::read_to_string(path).map_err(|e| fail(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Usage(format!(
            "{THREADS_ENV} must be a positive integer, got {raw:?}"
        ))
    })?;
    // A pool that already exists (repeated in-process runs) is kept.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

fn emit(out: Option<&Path>, content: &str) -> CliResult<()> {
    match out {
        Some(path) => {
            std::fs::write(path, content).map_err(|e| fail(format!("{}: {e}", path.display())))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(content.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(fail)
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(fail)?;
    s.push('\n');
    Ok(s)
}

fn load(path: &Path) -> CliResult<Dataset> {
    parse_coco(path).map_err(|e| fail(format!("{}: {e}", path.display())))
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match configure_threads().and_then(|_| dispatch(cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<i32> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Validate { input } => validate(&input),
        Command::Measure { input, out } => measure(&input, out.as_deref()).map(|_| 0),
        Command::Evaluate(args) => run_evaluate(args, config.eval).map(|_| 0),
        Command::Prior { train, out } => {
            let prior = fit_prior(&load(&train)?).map_err(fail)?;
            emit(out.as_deref(), &to_json(&prior)?).map(|_| 0)
        }
        Command::Acr {
            prior,
            pred,
            gt,
            out,
        } => run_acr(&prior, &pred, gt.as_deref(), out.as_deref()).map(|_| 0),
        Command::TrainToy(args) => run_train(args, config.train),
        Command::Synth(args) => run_synth(args).map(|_| 0),
        Command::Plot(cmd) => run_plot(cmd).map(|_| 0),
        Command::Report(args) => run_report(args).map(|_| 0),
    }
}

fn validate(input: &Path) -> CliResult<i32> {
    let text =
        std::fs::read_to_string(input).map_err(|e| fail(format!("{}: {e}", input.display())))?;
    let violations = lint_coco(&text).map_err(|e| fail(format!("{}: {e}", input.display())))?;
    if violations.is_empty() {
        let decoded = decode_coco(&text).map_err(fail)?;
        for w in &decoded.warnings {
            log::warn!("{w}");
        }
        let d = decoded.dataset;
        let labeled: usize = d.keypoint_sets().map(|k| k.labeled_count()).sum();
        emit(
            None,
            &format!("valid: {} images, {labeled} labeled keypoints\n", d.len()),
        )?;
        return Ok(0);
    }
    let mut out = String::new();
    for v in &violations {
        let _ = writeln!(out, "{v}");
    }
    emit(None, &out)?;
    eprintln!("{}: {} violation(s)", input.display(), violations.len());
    Ok(1)
}

pub const MEASURE_CSV_HEADER: &str = "image_id,abbrev,value_px,status";

fn measure(input: &Path, out: Option<&Path>) -> CliResult<()> {
    let d = load(input)?;
    let table = PhenotypeTable::standard();
    let sets: Vec<_> = d.keypoint_sets().collect();
    let rows: Vec<String> = sets
        .par_iter()
        .map(|k| {
            let m = measure_all(k, &table);
            let mut by_abbrev: BTreeMap<&str, String> = BTreeMap::new();
            for x in &m.measurements {
                by_abbrev.insert(
                    &x.abbrev,
                    format!(
                        "{},{},{},{}\n",
                        x.image_id,
                        x.abbrev,
                        x.value,
                        x.status.tag()
                    ),
                );
            }
            for s in &m.skipped {
                by_abbrev.insert(&s.abbrev, format!("{},{},,missing\n", s.image_id, s.abbrev));
            }
            table
                .defs()
                .iter()
                .map(|def| by_abbrev[def.abbrev.as_str()].clone())
                .collect()
        })
        .collect();
    let mut csv = String::from(MEASURE_CSV_HEADER);
    csv.push('\n');
    for r in rows {
        csv.push_str(&r);
    }
    emit(out, &csv)
}

fn run_evaluate(args: EvaluateArgs, mut cfg: EvalConfig) -> CliResult<()> {
    if let Some(v) = args.pmp_threshold {
        cfg.pmp_threshold = v;
    }
    if let Some(v) = args.pck_threshold {
        cfg.pck_threshold = v;
    }
    if let Some(v) = args.pck_scale {
        cfg.pck_scale_mode = v;
    }
    if let Some(v) = args.oks_scale {
        cfg.oks_scale = Some(v);
    }
    cfg.check().map_err(|e| CliError::Usage(e.to_string()))?;
    let gt = load(&args.gt)?;
    let pred = load(&args.pred)?;
    let report =
        evaluate(&gt, &pred, &PhenotypeTable::standard(), &cfg, args.metric).map_err(fail)?;
    emit(args.out.as_deref(), &to_json(&report)?)
}

#[derive(Debug, Serialize)]
struct ImageAcr {
    image_id: u64,
    acr_loss: f64,
    violations: usize,
}

#[derive(Debug, Serialize)]
struct AcrReport {
    schema_version: u32,
    box_source: BoxSource,
    images: Vec<ImageAcr>,
    mean_acr_loss: f64,
    total_violations: usize,
}

fn run_acr(prior: &Path, pred: &Path, gt: Option<&Path>, out: Option<&Path>) -> CliResult<()> {
    let text =
        std::fs::read_to_string(prior).map_err(|e| fail(format!("{}: {e}", prior.display())))?;
    let prior: AnatomicalPrior =
        serde_json::from_str(&text).map_err(|e| fail(format!("{}: {e}", prior.display())))?;
    prior.check().map_err(fail)?;
    let pred = load(pred)?;
    let gt = gt.map(load).transpose()?;
    let images: Vec<ImageAcr> = pred
        .records
        .par_iter()
        .map(|r| {
            let p = &r.keypoints;
            let bx = match &gt {
                Some(gt) => {
                    let g = gt
                        .find(p.image_id)
                        .ok_or_else(|| fail(format!("image {} has no ground truth", p.image_id)))?;
                    let bbox = g.keypoints.bounding_box().ok_or_else(|| {
                        fail(format!("image {}: no labeled ground truth", p.image_id))
                    })?;
                    box_for_image(&prior, &bbox)
                }
                None => box_from_predictions(&prior, p),
            }
            .map_err(|e| fail(format!("image {}: {e}", p.image_id)))?;
            Ok(ImageAcr {
                image_id: p.image_id,
                acr_loss: acr_loss(p, &bx),
                violations: count_violations_coords(&p.coords(), Some(p), &bx),
            })
        })
        .collect::<CliResult<_>>()?;
    let mean = if images.is_empty() {
        0.0
    } else {
        images.iter().map(|i| i.acr_loss).sum::<f64>() / images.len() as f64
    };
    let report = AcrReport {
        schema_version: REPORT_SCHEMA_VERSION,
        box_source: if gt.is_some() {
            BoxSource::GroundTruth
        } else {
            BoxSource::Predicted
        },
        total_violations: images.iter().map(|i| i.violations).sum(),
        mean_acr_loss: mean,
        images,
    };
    emit(out, &to_json(&report)?)
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    schema_version: u32,
    seed: u64,
    batch_size: usize,
    config: TrainConfig,
    initial: TraceRecord,
    last: TraceRecord,
    pmp: Option<f64>,
}

fn run_train(args: TrainToyArgs, mut cfg: TrainConfig) -> CliResult<i32> {
    if let Some(v) = args.steps {
        cfg.steps = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.acr {
        cfg.acr = matches!(v, Switch::On);
    }
    if let Some(v) = args.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = args.momentum {
        cfg.momentum = v;
    }
    if let Some(v) = args.box_source {
        cfg.box_source = v;
    }
    cfg.check().map_err(|e| CliError::Usage(e.to_string()))?;
    if args.batch_size == 0 {
        return Err(CliError::Usage("--batch-size must be at least 1".into()));
    }
    let scenario = toy_scenario(args.seed, args.batch_size).map_err(fail)?;
    let init = ToyPredictor::zeros(scenario.batch.feature_dim());
    let (model, trace) = match train(&init, &scenario.batch, &scenario.prior, &cfg) {
        Ok(r) => r,
        Err(OptimError::Diverged { step, loss, trace }) => {
            if let Some(path) = &args.trace {
                emit(Some(path), &trace.to_csv())?;
            }
            return Err(fail(format!(
                "training diverged at step {step} (total loss {loss})"
            )));
        }
        Err(e) => return Err(fail(e)),
    };
    if let Some(path) = &args.trace {
        emit(Some(path), &trace.to_csv())?;
    }
    if let Some(path) = &args.out {
        emit(Some(path), &to_json(&model)?)?;
    }
    let summary = TrainSummary {
        schema_version: REPORT_SCHEMA_VERSION,
        seed: args.seed,
        batch_size: args.batch_size,
        config: cfg,
        initial: trace.records[0],
        last: *trace.last().expect("trace has a record per step"),
        pmp: batch_pmp(&model, &scenario.batch, EvalConfig::default().pmp_threshold)
            .map_err(fail)?,
    };
    emit(None, &to_json(&summary)?)?;
    Ok(0)
}

fn run_synth(args: SynthArgs) -> CliResult<()> {
    let template =
        SpeciesTemplate::resolve(&args.template).map_err(|e| CliError::Usage(e.to_string()))?;
    if args.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    if let Some(path) = &args.write_template {
        emit(Some(path), &to_json(&template)?)?;
    }
    let gt = generate_population(&template, args.n, args.seed).map_err(fail)?;
    serialize_coco(&gt, &args.out).map_err(fail)?;
    if let (Some(kind), Some(magnitude), Some(pred_out)) =
        (args.perturb, args.magnitude, &args.pred_out)
    {
        let mode = match kind {
            PerturbKind::UniformPx => PerturbationMode::UniformPx,
            PerturbKind::Proportional => PerturbationMode::ProportionalToShortestPhenotype,
        };
        let seed = args.noise_seed.unwrap_or(args.seed.wrapping_add(1));
        let model = PerturbationModel::new(mode, magnitude, seed);
        let pred = perturb(&gt, &model).map_err(|e| CliError::Usage(e.to_string()))?;
        serialize_coco(&pred, pred_out).map_err(fail)?;
    }
    Ok(())
}

fn run_plot(cmd: PlotCommand) -> CliResult<()> {
    match cmd {
        PlotCommand::Scatter {
            gt,
            pred,
            phenotype,
            out,
        } => {
            let table = PhenotypeTable::standard();
            let def = table
                .find(&phenotype)
                .ok_or_else(|| CliError::Usage(format!("unknown phenotype {phenotype:?}")))?;
            let gt = load(&gt)?;
            let pred = load(&pred)?;
            let mut points = Vec::new();
            for g in gt.keypoint_sets() {
                let p = pred
                    .find(g.image_id)
                    .ok_or_else(|| fail(format!("image {} has no prediction", g.image_id)))?;
                let labeled = |k: &KeypointSet| {
                    k.get(def.endpoints.0).is_labeled() && k.get(def.endpoints.1).is_labeled()
                };
                if labeled(g) && labeled(&p.keypoints) {
                    points.push([def.length(g), def.length(&p.keypoints)]);
                }
            }
            let svg =
                scatter_svg(&format!("{} ({})", def.name, def.abbrev), &points).map_err(fail)?;
            emit(Some(&out), &svg)
        }
        PlotCommand::Deviations {
            gt,
            preds,
            out,
            csv,
        } => {
            let gt = load(&gt)?;
            let mut groups = Vec::new();
            for spec in &preds {
                let (name, path) = spec.split_once('=').ok_or_else(|| {
                    CliError::Usage(format!("--pred expects NAME=FILE, got {spec:?}"))
                })?;
                let pred = load(Path::new(path))?;
                groups.push((
                    name.to_string(),
                    pixel_deviations(&gt, &pred).map_err(fail)?,
                ));
            }
            emit(
                Some(&out),
                &deviation_summary_svg("Positional deviation", &groups).map_err(fail)?,
            )?;
            if let Some(path) = csv {
                emit(Some(&path), &quantile_csv(&groups).map_err(fail)?)?;
            }
            Ok(())
        }
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{:.1}%", 100.0 * v))
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"))
}

#[derive(Default)]
struct MeasureColumn {
    n: usize,
    sum: f64,
    missing: usize,
}

fn read_measure_csv(path: &Path) -> CliResult<BTreeMap<String, MeasureColumn>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| fail(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next() != Some(MEASURE_CSV_HEADER) {
        return Err(fail(format!(
            "{}: expected header {MEASURE_CSV_HEADER:?}",
            path.display()
        )));
    }
    let mut out: BTreeMap<String, MeasureColumn> = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let [_, abbrev, value, status] = fields[..] else {
            return Err(fail(format!(
                "{}:{}: expected 4 fields",
                path.display(),
                i + 2
            )));
        };
        let col = out.entry(abbrev.to_string()).or_default();
        if status == "missing" {
            col.missing += 1;
            continue;
        }
        let v: f64 = value
            .parse()
            .map_err(|_| fail(format!("{}:{}: bad value {value:?}", path.display(), i + 2)))?;
        col.n += 1;
        col.sum += v;
    }
    Ok(out)
}

fn run_report(args: ReportArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.evaluate)
        .map_err(|e| fail(format!("{}: {e}", args.evaluate.display())))?;
    let report: MetricReport = serde_json::from_str(&text)
        .map_err(|e| fail(format!("{}: {e}", args.evaluate.display())))?;
    if report.schema_version != REPORT_SCHEMA_VERSION {
        return Err(fail(format!(
            "report schema version {} is not supported (expected {REPORT_SCHEMA_VERSION})",
            report.schema_version
        )));
    }
    let mut md = String::from("# Evaluation report\n\n");
    let _ = writeln!(
        md,
        "images: {}, labeled keypoints: {}, PMP r = {}, PCK threshold = {} ({})\n",
        report.sample_counts.images,
        report.sample_counts.labeled_keypoints,
        report.config.pmp_threshold,
        report.config.pck_threshold,
        serde_json::to_value(report.config.pck_scale_mode)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default()
    );
    if let Some(oks) = &report.oks {
        let _ = writeln!(md, "mean OKS: {}\n", pct(oks.mean));
    }
    if report.pck.is_some() || report.pmp.is_some() || report.phenotypes.is_some() {
        md.push_str("| keypoint | PCK | PMP | mMAPE |\n|---|---|---|---|\n");
        for slot in 0..NUM_KEYPOINTS {
            let k = KeypointIndex::from_slot(slot);
            let rate = |s: &Option<RateSection>| {
                s.as_ref()
                    .map_or("-".to_string(), |s| pct(s.per_keypoint[slot].rate))
            };
            let mm = report
                .phenotypes
                .as_ref()
                .map_or("-".to_string(), |p| pct(p.per_keypoint_mmape[slot].mmape));
            let _ = writeln!(
                md,
                "| {k} | {} | {} | {mm} |",
                rate(&report.pck),
                rate(&report.pmp)
            );
        }
        let mean = |s: &Option<RateSection>| s.as_ref().map_or("-".to_string(), |s| pct(s.mean));
        let mm = report
            .phenotypes
            .as_ref()
            .map_or("-".to_string(), |p| pct(p.mean_mmape));
        let _ = writeln!(
            md,
            "| mean | {} | {} | {mm} |\n",
            mean(&report.pck),
            mean(&report.pmp)
        );
    }
    if let Some(ph) = &report.phenotypes {
        md.push_str("| phenotype | n | MAPE | Pearson | R² | slope | intercept |\n|---|---|---|---|---|---|---|\n");
        for s in &ph.per_phenotype {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} |",
                s.abbrev,
                s.samples,
                pct(s.mape),
                num(s.pearson),
                pct(s.r2),
                num(s.slope),
                num(s.intercept)
            );
        }
        md.push('\n');
    }
    let columns: Vec<(&str, BTreeMap<String, MeasureColumn>)> = [
        ("ground truth", &args.measure_gt),
        ("prediction", &args.measure_pred),
    ]
    .into_iter()
    .filter_map(|(name, p)| p.as_ref().map(|p| (name, p)))
    .map(|(name, p)| read_measure_csv(p).map(|c| (name, c)))
    .collect::<CliResult<_>>()?;
    if !columns.is_empty() {
        md.push_str("| phenotype |");
        for (name, _) in &columns {
            let _ = write!(md, " {name} n | {name} mean px | {name} missing |");
        }
        md.push_str("\n|---|");
        md.push_str(&"---|---|---|".repeat(columns.len()));
        md.push('\n');
        for def in PhenotypeTable::standard().defs() {
            let _ = write!(md, "| {} |", def.abbrev);
            for (_, col) in &columns {
                match col.get(&def.abbrev) {
                    Some(c) => {
                        let mean = (c.n > 0).then(|| c.sum / c.n as f64);
                        let _ = write!(
                            md,
                            " {} | {} | {} |",
                            c.n,
                            mean.map_or("n/a".into(), |m| format!("{m:.1}")),
                            c.missing
                        );
                    }
                    None => md.push_str(" 0 | n/a | 0 |"),
                }
            }
            md.push('\n');
        }
    }
    emit(args.out.as_deref(), &md)
}
