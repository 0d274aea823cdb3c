//! Iterative self-training loop.
//!
//! Each cycle runs the external detector over every video's frames, turns the
//! predictions into a filtered pseudo-labelled dataset, fine-tunes with the
//! external trainer, and optionally evaluates the new weights on a labelled
//! test set. The weights produced by cycle `k` are the input of cycle `k+1`.
//!
//! Run layout:
//!
//! ```text
//! <run_dir>/report.json                 deterministic run summary
//! <run_dir>/cycles/records.jsonl        one CycleRecord per line, append-only
//! <run_dir>/cycles/001/record.json
//! <run_dir>/cycles/001/predictions/<video>/*.txt
//! <run_dir>/cycles/001/dataset/{images,labels,provenance.json}
//! <run_dir>/cycles/001/weights.<ext>
//! <run_dir>/cycles/001/eval_predictions/*.txt
//! ```

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};
use crate::eval::{self, EvalReport, OperatingPoint};
use crate::refine::{self, DatasetStats, Provenance, RefineOptions};
use crate::yolo::{self, Confidence};

pub const SCHEMA_VERSION: u32 = 1;

/// The complete placeholder vocabulary of command templates.
pub const PLACEHOLDERS: [&str; 6] = [
    "weights",
    "frames",
    "out",
    "dataset",
    "out_weights",
    "epochs",
];
const DETECT_PLACEHOLDERS: [&str; 3] = ["weights", "frames", "out"];
const TRAIN_PLACEHOLDERS: [&str; 4] = ["weights", "dataset", "out_weights", "epochs"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Directory with one sub-directory of extracted frames per video.
    pub frames_source: PathBuf,
    pub detect_cmd: String,
    pub train_cmd: String,
    #[serde(default = "default_epochs")]
    pub epochs_per_cycle: u32,
    #[serde(default = "default_cycles")]
    pub cycles: u32,
    #[serde(default)]
    pub filter: RefineOptions,
    /// Labelled test set (`images/` + `labels/`) evaluated after each cycle.
    #[serde(default)]
    pub eval_gt: Option<PathBuf>,
    pub initial_weights: PathBuf,
    /// Rate the frames were extracted at. Informational only.
    #[serde(default = "default_fps")]
    pub sample_fps: f64,
    #[serde(default = "default_run_dir")]
    pub run_dir: PathBuf,
}

fn default_epochs() -> u32 {
    5
}
fn default_cycles() -> u32 {
    1
}
fn default_fps() -> f64 {
    5.0
}
fn default_run_dir() -> PathBuf {
    PathBuf::from("run")
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Load a config file; relative paths are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = PipelineConfig::from_toml(&fs::read_to_string(path).at(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.frames_source);
        fix(&mut self.initial_weights);
        fix(&mut self.run_dir);
        if let Some(gt) = self.eval_gt.as_mut() {
            fix(gt);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cycles < 1 {
            return Err(Error::Config("cycles must be >= 1".into()));
        }
        if self.epochs_per_cycle < 1 {
            return Err(Error::Config("epochs_per_cycle must be >= 1".into()));
        }
        check_template("detect_cmd", &self.detect_cmd, &DETECT_PLACEHOLDERS)?;
        check_template("train_cmd", &self.train_cmd, &TRAIN_PLACEHOLDERS)?;
        self.filter
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }
}

/// Names of `{lowercase_word}` placeholders in a template.
fn placeholders(template: &str) -> Vec<&str> {
    let mut found = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                if !name.is_empty() && name.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
                    found.push(name);
                }
                rest = &after[close + 1..];
            }
            None => break,
        }
    }
    found
}

fn check_template(key: &str, template: &str, required: &[&str]) -> Result<()> {
    let used = placeholders(template);
    for name in &used {
        if !PLACEHOLDERS.contains(name) {
            return Err(Error::Config(format!(
                "{key}: unknown placeholder {{{name}}}"
            )));
        }
    }
    let missing: Vec<String> = required
        .iter()
        .filter(|r| !used.contains(r))
        .map(|r| format!("{{{r}}}"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "{key}: missing {}",
            missing.join(" ")
        )));
    }
    Ok(())
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

/// Replace each `{name}` with the shell-quoted value.
pub fn render(template: &str, vars: &[(&str, String)]) -> String {
    let mut out = template.to_string();
    for (name, value) in vars {
        out = out.replace(&format!("{{{name}}}"), &shell_quote(value));
    }
    out
}

/// Run a rendered command through `sh -c`.
pub fn run_command(command: &str) -> Result<()> {
    debug!("running: {command}");
    let output = Command::new("sh")
        .arg("-c")
        .arg(command)
        .output()
        .map_err(|e| Error::Command {
            command: command.to_string(),
            status: "spawn failed".into(),
            stderr: e.to_string(),
        })?;
    if !output.status.success() {
        return Err(Error::Command {
            command: command.to_string(),
            status: output.status.to_string(),
            stderr: String::from_utf8_lossy(&output.stderr).trim().to_string(),
        });
    }
    Ok(())
}

/// Run the detector on one frame directory into `out` and check that every
/// frame image got a well-formed prediction file.
pub fn run_detector(
    cfg: &PipelineConfig,
    weights: &Path,
    frames_dir: &Path,
    out: &Path,
) -> Result<PathBuf> {
    let images = yolo::list_images(frames_dir)?;
    if images.is_empty() {
        return Err(Error::Dataset(format!(
            "no frame images in {}",
            frames_dir.display()
        )));
    }
    fs::create_dir_all(out).at(out)?;
    let command = render(
        &cfg.detect_cmd,
        &[
            ("weights", weights.display().to_string()),
            ("frames", frames_dir.display().to_string()),
            ("out", out.display().to_string()),
        ],
    );
    run_command(&command)?;
    check_predictions(&images, out)?;
    Ok(out.to_path_buf())
}

fn check_predictions(images: &[PathBuf], out: &Path) -> Result<()> {
    let mut problems = Vec::new();
    for img in images {
        let file = out.join(format!("{}.{}", yolo::stem(img), yolo::LABEL_EXTENSION));
        if !file.is_file() {
            problems.push(format!("missing {}", file.display()));
            continue;
        }
        if let Err(e) = yolo::read_label_file(&file, Confidence::Required) {
            problems.push(e.to_string());
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Predictions {
            dir: out.to_path_buf(),
            problems: problems.join("; "),
        })
    }
}

/// Video frame directories under `frames_source`, sorted by name. A source
/// holding images directly is a single video.
pub fn list_videos(frames_source: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut videos = Vec::new();
    for entry in fs::read_dir(frames_source).at(frames_source)? {
        let path = entry.at(frames_source)?.path();
        if path.is_dir() {
            let name = path
                .file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            videos.push((name, path));
        }
    }
    videos.sort();
    if videos.is_empty() && !yolo::list_images(frames_source)?.is_empty() {
        let name = frames_source
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "video".into());
        videos.push((name, frames_source.to_path_buf()));
    }
    if videos.is_empty() {
        return Err(Error::Dataset(format!(
            "no videos under {}",
            frames_source.display()
        )));
    }
    Ok(videos)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CycleStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle_idx: u32,
    pub status: CycleStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub dataset: DatasetStats,
    pub eval: Option<EvalReport>,
    /// Input weights; run-relative when inside the run directory.
    pub weights_in: String,
    /// Output weights, run-relative.
    pub weights_ref: String,
    pub weights_sha256: Option<String>,
    pub wall_time_secs: f64,
}

/// Per-cycle values for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub cycle: u32,
    pub frames: usize,
    pub kept_boxes: usize,
    pub dropped_boxes: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub map50: Option<f64>,
}

/// Summary of completed cycles. Contains no timing, so identical runs give
/// identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub cycles: Vec<ReportCycle>,
    pub series: Vec<SeriesPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCycle {
    pub cycle_idx: u32,
    pub dataset: DatasetStats,
    pub eval: Option<EvalReport>,
    pub weights_in: String,
    pub weights_ref: String,
    pub weights_sha256: Option<String>,
}

impl RunReport {
    pub fn from_records(records: &[CycleRecord]) -> Self {
        let completed = completed_cycles(records);
        RunReport {
            schema_version: SCHEMA_VERSION,
            series: completed.iter().map(series_point).collect(),
            cycles: completed
                .into_iter()
                .map(|r| ReportCycle {
                    cycle_idx: r.cycle_idx,
                    dataset: r.dataset,
                    eval: r.eval,
                    weights_in: r.weights_in,
                    weights_ref: r.weights_ref,
                    weights_sha256: r.weights_sha256,
                })
                .collect(),
        }
    }
}

fn series_point(r: &CycleRecord) -> SeriesPoint {
    SeriesPoint {
        cycle: r.cycle_idx,
        frames: r.dataset.frames,
        kept_boxes: r.dataset.kept_boxes,
        dropped_boxes: r.dataset.dropped_boxes,
        precision: r.eval.as_ref().map(|e| e.precision),
        recall: r.eval.as_ref().map(|e| e.recall),
        map50: r.eval.as_ref().map(|e| e.map50),
    }
}

/// Latest completed record of each cycle, by cycle index.
pub fn completed_cycles(records: &[CycleRecord]) -> Vec<CycleRecord> {
    let mut by_cycle = BTreeMap::new();
    for r in records {
        if r.status == CycleStatus::Completed {
            by_cycle.insert(r.cycle_idx, r.clone());
        }
    }
    by_cycle.into_values().collect()
}

pub const RECORDS_FILE: &str = "records.jsonl";
pub const REPORT_FILE: &str = "report.json";

fn cycles_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("cycles")
}

pub fn cycle_dir(run_dir: &Path, cycle: u32) -> PathBuf {
    cycles_dir(run_dir).join(format!("{cycle:03}"))
}

pub fn read_records(run_dir: &Path) -> Result<Vec<CycleRecord>> {
    let path = cycles_dir(run_dir).join(RECORDS_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(&path).at(&path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.clone(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn persist_record(run_dir: &Path, record: &CycleRecord) -> Result<()> {
    let dir = cycle_dir(run_dir, record.cycle_idx);
    fs::create_dir_all(&dir).at(&dir)?;
    let json = serde_json::to_string_pretty(record).expect("record serializes");
    let path = dir.join("record.json");
    fs::write(&path, json + "\n").at(&path)?;

    let log = cycles_dir(run_dir).join(RECORDS_FILE);
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log)
        .at(&log)?;
    let line = serde_json::to_string(record).expect("record serializes");
    writeln!(file, "{line}").at(&log)
}

pub fn write_report(run_dir: &Path, records: &[CycleRecord]) -> Result<RunReport> {
    let report = RunReport::from_records(records);
    let path = run_dir.join(REPORT_FILE);
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&path, json + "\n").at(&path)?;
    Ok(report)
}

fn relative(run_dir: &Path, path: &Path) -> String {
    path.strip_prefix(run_dir)
        .unwrap_or(path)
        .display()
        .to_string()
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).at(path)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

struct CycleOutput {
    dataset: DatasetStats,
    eval: Option<EvalReport>,
    weights_out: PathBuf,
}

fn cycle_body(
    cfg: &PipelineConfig,
    weights_in: &Path,
    cycle: u32,
    dir: &Path,
) -> Result<CycleOutput> {
    let dataset_dir = dir.join("dataset");
    let mut stats = DatasetStats::default();
    let mut sources = Vec::new();
    for (name, frames) in list_videos(&cfg.frames_source)? {
        let pred_dir = dir.join("predictions").join(&name);
        info!("cycle {cycle}: detecting on {name}");
        run_detector(cfg, weights_in, &frames, &pred_dir)?;
        let preds = refine::load_video_predictions(&frames, &pred_dir)?;
        let (_, s) = refine::write_video(
            &frames,
            &preds,
            &cfg.filter,
            &dataset_dir,
            &format!("{name}__"),
        )?;
        stats.merge(s);
        sources.push(name);
    }
    refine::write_provenance(
        &dataset_dir,
        &Provenance {
            cycle: Some(cycle),
            options: cfg.filter,
            sources,
        },
    )?;
    yolo::validate_dataset(&dataset_dir)?;

    let ext = cfg
        .initial_weights
        .extension()
        .map(|e| format!(".{}", e.to_string_lossy()))
        .unwrap_or_default();
    let weights_out = dir.join(format!("weights{ext}"));
    info!("cycle {cycle}: fine-tuning on {} frames", stats.frames);
    run_command(&render(
        &cfg.train_cmd,
        &[
            ("weights", weights_in.display().to_string()),
            ("dataset", dataset_dir.display().to_string()),
            ("out_weights", weights_out.display().to_string()),
            ("epochs", cfg.epochs_per_cycle.to_string()),
        ],
    ))?;
    if !weights_out.is_file() {
        return Err(Error::Command {
            command: cfg.train_cmd.clone(),
            status: "exit 0".into(),
            stderr: format!("trainer did not write {}", weights_out.display()),
        });
    }

    let eval = match &cfg.eval_gt {
        Some(gt) => {
            let eval_pred = dir.join("eval_predictions");
            run_detector(cfg, &weights_out, &gt.join("images"), &eval_pred)?;
            Some(eval::evaluate(&eval_pred, gt, 0.5, OperatingPoint::MaxF1)?)
        }
        None => None,
    };
    Ok(CycleOutput {
        dataset: stats,
        eval,
        weights_out,
    })
}

/// One refinement cycle. The record is persisted whether the cycle succeeds
/// or fails.
pub fn run_cycle(cfg: &PipelineConfig, weights_in: &Path, cycle: u32) -> Result<CycleRecord> {
    if !weights_in.is_file() {
        return Err(Error::io(
            weights_in,
            std::io::Error::new(std::io::ErrorKind::NotFound, "weights file not found"),
        ));
    }
    let run_dir = &cfg.run_dir;
    let dir = cycle_dir(run_dir, cycle);
    if dir.exists() {
        fs::remove_dir_all(&dir).at(&dir)?;
    }
    fs::create_dir_all(&dir).at(&dir)?;

    let started = Instant::now();
    let result = cycle_body(cfg, weights_in, cycle, &dir);
    let mut record = CycleRecord {
        cycle_idx: cycle,
        status: CycleStatus::Completed,
        error: None,
        dataset: DatasetStats::default(),
        eval: None,
        weights_in: relative(run_dir, weights_in),
        weights_ref: String::new(),
        weights_sha256: None,
        wall_time_secs: 0.0,
    };
    match result {
        Ok(out) => {
            record.dataset = out.dataset;
            record.eval = out.eval;
            record.weights_ref = relative(run_dir, &out.weights_out);
            record.weights_sha256 = Some(sha256_file(&out.weights_out)?);
            record.wall_time_secs = started.elapsed().as_secs_f64();
            persist_record(run_dir, &record)?;
            Ok(record)
        }
        Err(e) => {
            record.status = CycleStatus::Failed;
            record.error = Some(e.to_string());
            record.wall_time_secs = started.elapsed().as_secs_f64();
            persist_record(run_dir, &record)?;
            Err(e)
        }
    }
}

/// Run all configured cycles, or with `resume` continue after the last
/// completed cycle on disk. Returns the completed records.
pub fn run_pipeline(cfg: &PipelineConfig, resume: bool) -> Result<Vec<CycleRecord>> {
    cfg.validate()?;
    let run_dir = &cfg.run_dir;
    fs::create_dir_all(cycles_dir(run_dir)).at(run_dir)?;

    let mut records = read_records(run_dir)?;
    if !resume && !records.is_empty() {
        return Err(Error::Config(format!(
            "{} already holds cycle records; pass --resume or use a new run_dir",
            run_dir.display()
        )));
    }
    let done = completed_cycles(&records);
    for (i, r) in done.iter().enumerate() {
        if r.cycle_idx != i as u32 + 1 {
            return Err(Error::Config(format!(
                "cannot resume: completed cycles are not contiguous at cycle {}",
                r.cycle_idx
            )));
        }
    }
    let mut weights = match done.last() {
        Some(last) => {
            let w = run_dir.join(&last.weights_ref);
            info!(
                "resuming after cycle {} with {}",
                last.cycle_idx,
                w.display()
            );
            w
        }
        None => cfg.initial_weights.clone(),
    };

    for cycle in done.len() as u32 + 1..=cfg.cycles {
        info!("cycle {cycle}/{}", cfg.cycles);
        let outcome = run_cycle(cfg, &weights, cycle);
        records = read_records(run_dir)?;
        write_report(run_dir, &records)?;
        let record = outcome?;
        weights = run_dir.join(&record.weights_ref);
    }
    write_report(run_dir, &records)?;
    Ok(completed_cycles(&records))
}

/// Write the per-cycle series as CSV.
pub fn write_series_csv(records: &[CycleRecord], out: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(out).map_err(|e| csv_err(out, e))?;
    w.write_record([
        "cycle",
        "frames",
        "kept_boxes",
        "dropped_boxes",
        "precision",
        "recall",
        "map50",
        "weights_ref",
    ])
    .map_err(|e| csv_err(out, e))?;
    for r in completed_cycles(records) {
        let p = series_point(&r);
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            p.cycle.to_string(),
            p.frames.to_string(),
            p.kept_boxes.to_string(),
            p.dropped_boxes.to_string(),
            opt(p.precision),
            opt(p.recall),
            opt(p.map50),
            r.weights_ref.clone(),
        ])
        .map_err(|e| csv_err(out, e))?;
    }
    w.flush().at(out)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Dataset(format!("{}: {other:?}", path.display())),
    }
}
