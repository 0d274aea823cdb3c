//! The `rohan` command line.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 format, 5 external command,
//! 10 internal.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::{IsTerminal, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::augment::{self, Palette};
use crate::error::Error;
use crate::eval::{self, OperatingPoint};
use crate::pipeline::{self, PipelineConfig};
use crate::refine::{self, FilterMode, RefineOptions};
use crate::track::{self, TrackerConfig};
use crate::yolo;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Usage,
    Io,
    Format,
    External,
    Internal,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Usage => 2,
            Category::Io => 3,
            Category::Format => 4,
            Category::External => 5,
            Category::Internal => 10,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub category: Category,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            category: Category::Usage,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.category.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let category = match &e {
            Error::Io { .. } | Error::Dataset(_) => Category::Io,
            Error::Parse { .. }
            | Error::Image { .. }
            | Error::InvalidBox(_)
            | Error::DimensionMismatch { .. }
            | Error::FrameOrder { .. }
            | Error::Predictions { .. } => Category::Format,
            Error::InvalidArgument(_) | Error::Config(_) => Category::Usage,
            Error::Command { .. } => Category::External,
        };
        CliError {
            category,
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "rohan",
    version,
    about = "Glove augmentation, pseudo-label refinement and detection metrics for hands in surgical video"
)]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct JsonOut {
    /// Machine-readable output: to stdout, or to the given file.
    #[arg(long, num_args = 0..=1, value_name = "FILE")]
    pub json: Option<Option<PathBuf>>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Overlay artificial gloves (and blood) on a masked hand dataset.
    Augment(AugmentArgs),
    /// Track prediction boxes across the frames of one video.
    Track(TrackArgs),
    /// Build a filtered pseudo-labelled dataset from predictions.
    Refine(RefineArgs),
    /// Precision, recall and mAP50 of predictions against ground truth.
    Eval(EvalArgs),
    /// Run the detect / refine / fine-tune loop.
    Pipeline(PipelineArgs),
    /// Per-cycle metrics of a pipeline run.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long = "in", value_name = "DIR")]
    pub input: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Palette TOML; built-in white/blue/green palette when omitted.
    #[arg(long, value_name = "FILE")]
    pub palette: Option<PathBuf>,
    #[command(flatten)]
    pub json: JsonOut,
}

#[derive(Debug, Args)]
pub struct TrackerArgs {
    #[arg(long = "iou-gate")]
    pub iou_gate: Option<f64>,
    #[arg(long = "max-misses")]
    pub max_misses: Option<u32>,
    #[arg(long = "min-conf")]
    pub min_conf: Option<f64>,
}

impl TrackerArgs {
    fn apply(&self, cfg: &mut TrackerConfig) {
        if let Some(v) = self.iou_gate {
            cfg.iou_gate = v;
        }
        if let Some(v) = self.max_misses {
            cfg.max_misses = v;
        }
        if let Some(v) = self.min_conf {
            cfg.min_conf = v;
        }
    }
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Prediction files of one video (`class cx cy w h conf`).
    #[arg(long, value_name = "DIR")]
    pub pred: PathBuf,
    /// Frame images; frames without a prediction file count as empty.
    #[arg(long, value_name = "DIR")]
    pub frames: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub tracker: TrackerArgs,
    #[command(flatten)]
    pub json: JsonOut,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long, value_name = "DIR")]
    pub frames: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub pred: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "tracking")]
    pub mode: String,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long = "min-track")]
    pub min_track: Option<usize>,
    #[arg(long = "conf-floor")]
    pub conf_floor: Option<f64>,
    /// Leave frames without surviving boxes out of the dataset.
    #[arg(long = "drop-empty")]
    pub drop_empty: bool,
    /// Centered sliding window for the spatial filter.
    #[arg(long)]
    pub sliding: bool,
    #[command(flatten)]
    pub tracker: TrackerArgs,
    #[command(flatten)]
    pub json: JsonOut,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    pub pred: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub gt: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    /// Report precision/recall at this confidence instead of max F1.
    #[arg(long)]
    pub conf: Option<f64>,
    #[command(flatten)]
    pub json: JsonOut,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Continue after the last completed cycle in run_dir.
    #[arg(long)]
    pub resume: bool,
    #[arg(long = "frames_source", alias = "frames-source")]
    pub frames_source: Option<PathBuf>,
    #[arg(long = "detect_cmd", alias = "detect-cmd")]
    pub detect_cmd: Option<String>,
    #[arg(long = "train_cmd", alias = "train-cmd")]
    pub train_cmd: Option<String>,
    #[arg(long = "epochs_per_cycle", alias = "epochs-per-cycle")]
    pub epochs_per_cycle: Option<u32>,
    #[arg(long)]
    pub cycles: Option<u32>,
    #[arg(long = "eval_gt", alias = "eval-gt")]
    pub eval_gt: Option<PathBuf>,
    #[arg(long = "initial_weights", alias = "initial-weights")]
    pub initial_weights: Option<PathBuf>,
    #[arg(long = "sample_fps", alias = "sample-fps")]
    pub sample_fps: Option<f64>,
    #[arg(long = "run_dir", alias = "run-dir")]
    pub run_dir: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long = "window_len", alias = "window-len")]
    pub window_len: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long = "min_track_len", alias = "min-track-len")]
    pub min_track_len: Option<usize>,
    #[arg(long = "conf_floor", alias = "conf-floor")]
    pub conf_floor: Option<f64>,
    #[arg(long = "drop_empty", alias = "drop-empty")]
    pub drop_empty: bool,
    #[arg(long)]
    pub sliding: bool,
    #[command(flatten)]
    pub json: JsonOut,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub run_dir: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub json: JsonOut,
}

struct Style {
    color: bool,
}

impl Style {
    fn detect() -> Self {
        Style {
            color: std::env::var_os("NO_COLOR").is_none() && std::io::stdout().is_terminal(),
        }
    }

    fn bold(&self, s: &str) -> String {
        if self.color {
            format!("\x1b[1m{s}\x1b[0m")
        } else {
            s.to_string()
        }
    }
}

fn emit_json<T: Serialize>(dest: &Option<PathBuf>, value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError {
        category: Category::Internal,
        message: e.to_string(),
    })? + "\n";
    match dest {
        Some(path) => fs::write(path, text).map_err(|e| Error::io(path, e).into()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn require_dir(path: &Path) -> CliResult {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "directory not found"),
        )
        .into())
    }
}

fn cmd_augment(args: &AugmentArgs, seed: u64, style: &Style) -> CliResult {
    let palette = match &args.palette {
        Some(p) => Palette::load(p)?,
        None => Palette::default(),
    };
    let summary = augment::augment_dataset(&args.input, &args.out, &palette, seed)?;
    match &args.json.json {
        Some(dest) => emit_json(
            dest,
            &json!({ "schema_version": SCHEMA_VERSION, "command": "augment", "seed": seed, "summary": summary }),
        ),
        None => {
            println!("{}", style.bold("augment"));
            println!("images   {}", summary.images);
            println!("boxes    {}", summary.boxes);
            println!("skipped  {}", summary.skipped.len());
            for s in &summary.skipped {
                println!("  {}: {}", s.name, s.reason);
            }
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct TrackRecord<'a> {
    id: u64,
    first_frame: u32,
    last_frame: u32,
    length: usize,
    state: track::TrackState,
    observations: Vec<ObservationRecord<'a>>,
}

#[derive(Serialize)]
struct ObservationRecord<'a> {
    frame: u32,
    name: &'a str,
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    conf: Option<f64>,
}

fn cmd_track(args: &TrackArgs) -> CliResult {
    require_dir(&args.pred)?;
    let mut cfg = TrackerConfig::default();
    args.tracker.apply(&mut cfg);

    let (names, video) = match &args.frames {
        Some(frames) => {
            require_dir(frames)?;
            let names = yolo::list_images(frames)?
                .iter()
                .map(|p| yolo::stem(p))
                .collect();
            (names, refine::load_video_predictions(frames, &args.pred)?)
        }
        None => {
            let files = yolo::list_label_files(&args.pred)?;
            let names: Vec<String> = files.iter().map(|p| yolo::stem(p)).collect();
            let video = files
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    Ok(crate::FrameDetections::new(
                        i as u32,
                        yolo::read_label_file(f, yolo::Confidence::Required)?,
                    ))
                })
                .collect::<Result<Vec<_>, Error>>()?;
            (names, video)
        }
    };
    let tracks = track::run_tracker(&video, &cfg)?;
    let mut out = String::new();
    for t in &tracks {
        let rec = TrackRecord {
            id: t.id,
            first_frame: t.first_frame(),
            last_frame: t.last_frame(),
            length: t.len(),
            state: t.state,
            observations: t
                .observations
                .iter()
                .map(|o| ObservationRecord {
                    frame: o.frame,
                    name: &names[o.frame as usize],
                    cx: o.bbox.cx(),
                    cy: o.bbox.cy(),
                    w: o.bbox.w(),
                    h: o.bbox.h(),
                    conf: o.bbox.conf(),
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("track record serializes"));
        out.push('\n');
    }
    fs::write(&args.out, out).map_err(|e| Error::io(&args.out, e))?;
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "track",
        "frames": video.len(),
        "tracks": tracks.len(),
    });
    match &args.json.json {
        Some(dest) => emit_json(dest, &summary),
        None => {
            println!(
                "{} tracks over {} frames -> {}",
                tracks.len(),
                video.len(),
                args.out.display()
            );
            Ok(())
        }
    }
}

fn cmd_refine(args: &RefineArgs, style: &Style) -> CliResult {
    require_dir(&args.frames)?;
    let pred = args
        .pred
        .as_ref()
        .ok_or_else(|| CliError::usage("--pred <DIR> is required"))?;
    let out = args
        .out
        .as_ref()
        .ok_or_else(|| CliError::usage("--out <DIR> is required"))?;
    require_dir(pred)?;

    let mut opts = RefineOptions {
        mode: args.mode.parse::<FilterMode>()?,
        drop_empty: args.drop_empty,
        ..Default::default()
    };
    let p = &mut opts.params;
    if let Some(v) = args.radius {
        p.radius = v;
    }
    if let Some(v) = args.window {
        p.window_len = v;
    }
    if let Some(v) = args.min_track {
        p.min_track_len = v;
    }
    if let Some(v) = args.conf_floor {
        p.conf_floor = v;
    }
    p.sliding = args.sliding;
    args.tracker.apply(&mut opts.tracker);
    opts.validate()?;

    let predictions = refine::load_video_predictions(&args.frames, pred)?;
    let ds = refine::build_pseudo_dataset(&args.frames, &predictions, &opts, out, None)?;
    match &args.json.json {
        Some(dest) => emit_json(
            dest,
            &json!({ "schema_version": SCHEMA_VERSION, "command": "refine", "mode": opts.mode, "stats": ds.stats }),
        ),
        None => {
            println!("{} ({})", style.bold("refine"), opts.mode);
            println!("frames   {}", ds.stats.frames);
            println!("kept     {}", ds.stats.kept_boxes);
            println!("dropped  {}", ds.stats.dropped_boxes);
            Ok(())
        }
    }
}

fn cmd_eval(args: &EvalArgs, style: &Style) -> CliResult {
    require_dir(&args.gt)?;
    if !(args.iou > 0.0 && args.iou < 1.0) {
        return Err(CliError::usage(format!(
            "--iou must be in (0,1), got {}",
            args.iou
        )));
    }
    let op = match args.conf {
        Some(c) if (0.0..=1.0).contains(&c) => OperatingPoint::Fixed(c),
        Some(c) => return Err(CliError::usage(format!("--conf must be in [0,1], got {c}"))),
        None => OperatingPoint::MaxF1,
    };
    let report = eval::evaluate(&args.pred, &args.gt, args.iou, op)?;
    match &args.json.json {
        Some(dest) => emit_json(dest, &report),
        None => {
            println!("{}", style.bold("eval"));
            println!("images     {}", report.images);
            println!("precision  {:.4}", report.precision);
            println!("recall     {:.4}", report.recall);
            println!("mAP50      {:.4}", report.map50);
            match report.op_conf {
                Some(c) => println!("conf       {c:.4}"),
                None => println!("conf       -"),
            }
            println!(
                "TP {}  FP {}  FN {}",
                report.counts.tp, report.counts.fp, report.counts.fn_
            );
            Ok(())
        }
    }
}

fn pipeline_config(args: &PipelineArgs) -> CliResult<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&args.config)?;
    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = &args.$field {
                cfg.$field = v.clone();
            }
        };
    }
    set!(frames_source);
    set!(detect_cmd);
    set!(train_cmd);
    set!(epochs_per_cycle);
    set!(cycles);
    set!(initial_weights);
    set!(sample_fps);
    set!(run_dir);
    if let Some(gt) = &args.eval_gt {
        cfg.eval_gt = Some(gt.clone());
    }
    if let Some(m) = &args.mode {
        cfg.filter.mode = m.parse()?;
    }
    let p = &mut cfg.filter.params;
    if let Some(v) = args.window_len {
        p.window_len = v;
    }
    if let Some(v) = args.radius {
        p.radius = v;
    }
    if let Some(v) = args.min_track_len {
        p.min_track_len = v;
    }
    if let Some(v) = args.conf_floor {
        p.conf_floor = v;
    }
    if args.sliding {
        p.sliding = true;
    }
    if args.drop_empty {
        cfg.filter.drop_empty = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_pipeline(args: &PipelineArgs, style: &Style) -> CliResult {
    let cfg = pipeline_config(args)?;
    let records = pipeline::run_pipeline(&cfg, args.resume)?;
    let report = pipeline::RunReport::from_records(&records);
    match &args.json.json {
        Some(dest) => emit_json(dest, &report),
        None => {
            println!("{} {}", style.bold("pipeline"), cfg.run_dir.display());
            print_series(&report);
            Ok(())
        }
    }
}

fn print_series(report: &pipeline::RunReport) {
    let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    println!("cycle  frames  kept  dropped  precision  recall  mAP50");
    for p in &report.series {
        println!(
            "{:>5}  {:>6}  {:>4}  {:>7}  {:>9}  {:>6}  {:>5}",
            p.cycle,
            p.frames,
            p.kept_boxes,
            p.dropped_boxes,
            f(p.precision),
            f(p.recall),
            f(p.map50)
        );
    }
}

fn cmd_report(args: &ReportArgs) -> CliResult {
    require_dir(&args.run_dir)?;
    let records = pipeline::read_records(&args.run_dir)?;
    if let Some(csv) = &args.csv {
        pipeline::write_series_csv(&records, csv)?;
    }
    let report = pipeline::RunReport::from_records(&records);
    match &args.json.json {
        Some(dest) => emit_json(dest, &report),
        None => {
            if args.csv.is_none() {
                print_series(&report);
            }
            Ok(())
        }
    }
}

fn run(cli: Cli) -> CliResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be >= 1"));
        }
        // only the first call in a process can size the global pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let style = Style::detect();
    match &cli.command {
        Command::Augment(a) => cmd_augment(a, cli.seed, &style),
        Command::Track(a) => cmd_track(a),
        Command::Refine(a) => cmd_refine(a, &style),
        Command::Eval(a) => cmd_eval(a, &style),
        Command::Pipeline(a) => cmd_pipeline(a, &style),
        Command::Report(a) => cmd_report(a),
    }
}

/// Parse `argv` (program name first), run, and return the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                Category::Usage.exit_code()
            } else {
                0
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match run(cli) {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
