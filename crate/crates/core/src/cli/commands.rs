use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{BenchJob, SegmentJob, SynthJob};
use super::frames::{list_frames, read_dir, read_mask, write_intensity, write_mask};
use crate::decolor::{self, DecolorConfig, RunReport};
use crate::error::Error;
use crate::eval::{phase_csv, run_phase_diagram, run_sweep, score_mask, Metrics};
use crate::matrix::{BinMask, Mat};
use crate::sequence::{column_to_frame, mask_column_to_frame};
use crate::synth::{generate, generate_video};

/// Exit status classes of the command-line tool.
#[derive(Debug)]
pub enum Failure {
    /// Bad input files or configuration (exit 2).
    Input(String),
    /// The solver failed (exit 3).
    Solver(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Input(_) => 2,
            Failure::Solver(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Solver(m) => m,
        }
    }
}

pub type Outcome<T> = std::result::Result<T, Failure>;

pub(crate) fn input(e: impl std::fmt::Display) -> Failure {
    Failure::Input(e.to_string())
}

fn solver(e: impl std::fmt::Display) -> Failure {
    Failure::Solver(e.to_string())
}

pub const RESOLVED_CONFIG: &str = "config.resolved.cfg";

#[derive(Serialize)]
struct ReportSummary<'a> {
    frames: usize,
    width: usize,
    height: usize,
    outer_iterations: usize,
    converged: bool,
    k_cap: usize,
    foreground_fraction: f64,
    energy_trace: &'a [f64],
    alpha_trace: &'a [f64],
    beta_trace: &'a [f64],
    gamma_trace: &'a [f64],
    sigma_trace: &'a [f64],
    rank_trace: &'a [usize],
    warnings: &'a [String],
    failure: Option<&'a str>,
    config: &'a DecolorConfig,
}

fn write_file(path: &Path, text: &str) -> Outcome<()> {
    std::fs::write(path, text).map_err(|e| input(format!("cannot write {}: {e}", path.display())))
}

fn ensure_dir(path: &Path) -> Outcome<()> {
    std::fs::create_dir_all(path).map_err(|e| input(format!("cannot create {}: {e}", path.display())))
}

pub fn segment(job: &SegmentJob) -> Outcome<RunReport> {
    if !job.input.is_dir() {
        return Err(input(format!("input directory {} does not exist", job.input.display())));
    }
    let store = read_dir(&job.input).map_err(input)?;
    if store.len() < 2 {
        return Err(input(format!("need ≥ 2 frames, found {} in {}", store.len(), job.input.display())));
    }
    ensure_dir(&job.output)?;
    write_file(&job.output.join(RESOLVED_CONFIG), &job.to_cfg())?;

    let frames = store.sequence().map_err(input)?;
    log::info!("segmenting {} frames of {}x{}", store.len(), store.shape.width, store.shape.height);
    let report = decolor::run(&frames, &job.solver).map_err(solver)?;
    write_segmentation(&job.output, &report, &job.solver, store.shape.width, store.shape.height)?;
    if let Some(msg) = &report.failure {
        return Err(solver(format!("solver stopped early: {msg}")));
    }
    Ok(report)
}

fn write_segmentation(dir: &Path, report: &RunReport, config: &DecolorConfig, width: usize, height: usize) -> Outcome<()> {
    let shape = crate::sequence::FrameShape::new(width, height);
    let n = report.b_hat.cols();
    for j in 0..n {
        let bg = column_to_frame(&report.b_hat.column(j), shape);
        write_intensity(&dir.join(format!("background_{j:04}.png")), &bg).map_err(input)?;
        let mask = mask_column_to_frame(&report.s_hat.column(j), shape);
        write_mask(&dir.join(format!("mask_{j:04}.png")), &mask).map_err(input)?;
    }
    let p = report.tau_hat.model().map(|m| m.param_count()).unwrap_or(0);
    let mut csv = String::from("frame");
    for k in 0..p {
        let _ = write!(csv, ",p{k}");
    }
    csv.push('\n');
    for (j, w) in report.tau_hat.warps().iter().enumerate() {
        let _ = write!(csv, "{j}");
        for v in w.params() {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    write_file(&dir.join("transforms.csv"), &csv)?;
    let summary = ReportSummary {
        frames: n,
        width,
        height,
        outer_iterations: report.outer_iterations,
        converged: report.converged,
        k_cap: report.k_cap,
        foreground_fraction: report.s_hat.count_ones() as f64 / report.s_hat.len().max(1) as f64,
        energy_trace: &report.energy_trace,
        alpha_trace: &report.alpha_trace,
        beta_trace: &report.beta_trace,
        gamma_trace: &report.gamma_trace,
        sigma_trace: &report.sigma_trace,
        rank_trace: &report.rank_trace,
        warnings: &report.warnings,
        failure: report.failure.as_deref(),
        config,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(input)?;
    write_file(&dir.join("report.json"), &(json + "\n"))?;
    println!(
        "{} frames, {} iterations, converged: {}, foreground fraction {:.4}",
        n, report.outer_iterations, report.converged, summary.foreground_fraction
    );
    Ok(())
}

/// Scores every mask against the truth file at the same position; the aggregate pools all pixels.
pub fn score(mask_dir: &Path, truth_dir: &Path) -> Outcome<Metrics> {
    let masks = prefer_prefix(list_frames(mask_dir).map_err(input)?, "mask_");
    let truths = prefer_prefix(list_frames(truth_dir).map_err(input)?, "truth_");
    if masks.len() != truths.len() {
        return Err(input(format!("{} masks but {} truth frames", masks.len(), truths.len())));
    }
    if masks.is_empty() {
        return Err(input("no mask files found"));
    }
    let mut pred_cols = Vec::new();
    let mut truth_cols = Vec::new();
    for (j, (mp, tp)) in masks.iter().zip(&truths).enumerate() {
        let m = read_mask(mp).map_err(input)?;
        let t = read_mask(tp).map_err(input)?;
        if m.shape() != t.shape() {
            return Err(input(format!("{} and {} differ in size", mp.display(), tp.display())));
        }
        let s = score_mask(&m, &t).map_err(input)?;
        println!("frame {j}: precision {} recall {} f {}", s.precision, s.recall, s.f_measure);
        pred_cols.push(m.as_slice().to_vec());
        truth_cols.push(t.as_slice().to_vec());
    }
    if pred_cols.iter().any(|c| c.len() != pred_cols[0].len()) {
        return Err(input("mask frames differ in size"));
    }
    let pred = BinMask::from_columns(&pred_cols).map_err(input)?;
    let truth = BinMask::from_columns(&truth_cols).map_err(input)?;
    let total = score_mask(&pred, &truth).map_err(input)?;
    println!("aggregate: precision {} recall {} f {}", total.precision, total.recall, total.f_measure);
    Ok(total)
}

/// Keeps only files named with `prefix` when there are any, so a segmentation
/// output directory can be scored directly.
fn prefer_prefix(files: Vec<PathBuf>, prefix: &str) -> Vec<PathBuf> {
    let has = |p: &PathBuf| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with(prefix));
    if files.iter().any(has) {
        files.into_iter().filter(has).collect()
    } else {
        files
    }
}

/// Writes `frames/`, `truth/` and the resolved generator settings under `output`.
pub fn synth(job: &SynthJob, output: &Path) -> Outcome<()> {
    let (frames_dir, truth_dir) = (output.join("frames"), output.join("truth"));
    ensure_dir(&frames_dir)?;
    ensure_dir(&truth_dir)?;
    match job {
        SynthJob::Scene(c) => {
            let scene = generate(c).map_err(input)?;
            let (lo, hi) = scene.d.as_slice().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let span = if hi > lo { hi - lo } else { 1.0 };
            for j in 0..c.n {
                let frame = Mat::from_vec(c.m, 1, scene.d.column(j).iter().map(|v| (v - lo) / span).collect()).map_err(input)?;
                write_intensity(&frames_dir.join(format!("frame_{j:04}.png")), &frame).map_err(input)?;
                let truth = BinMask::from_bits(c.m, 1, scene.s0.column(j)).map_err(input)?;
                write_mask(&truth_dir.join(format!("truth_{j:04}.png")), &truth).map_err(input)?;
            }
            println!("wrote {} frames of {}x1 (noise sigma {})", c.n, c.m, scene.noise_sigma);
        }
        SynthJob::Video(c) => {
            let video = generate_video(c).map_err(input)?;
            let shape = video.frames.shape();
            // segmentation masks live in the middle frame's coordinates; this copy of the truth matches them
            let reference_dir = output.join("truth_reference");
            ensure_dir(&reference_dir)?;
            for j in 0..video.frames.len() {
                let name = format!("truth_{j:04}.png");
                write_intensity(&frames_dir.join(format!("frame_{j:04}.png")), &video.frames.frame(j)).map_err(input)?;
                write_mask(&truth_dir.join(&name), &mask_column_to_frame(&video.truth.column(j), shape)).map_err(input)?;
                write_mask(&reference_dir.join(&name), &mask_column_to_frame(&video.truth_in_reference.column(j), shape))
                    .map_err(input)?;
            }
            let mut csv = String::from("frame,offset_x,offset_y\n");
            for (j, (x, y)) in video.offsets.iter().enumerate() {
                let _ = writeln!(csv, "{j},{x},{y}");
            }
            write_file(&output.join("offsets.csv"), &csv)?;
            println!("wrote {} frames of {}x{}", video.frames.len(), shape.width, shape.height);
        }
    }
    write_file(&output.join("synth.cfg"), &job.to_cfg())
}

pub fn bench(job: &BenchJob, output: &Path) -> Outcome<()> {
    let csv = match job {
        BenchJob::Sweep(spec) => {
            let table = run_sweep(spec).map_err(|e| match e {
                Error::Config(_) => input(e),
                other => solver(other),
            })?;
            write_file(&trials_path(output), &table.trials_csv())?;
            table.to_csv()
        }
        BenchJob::Phase(spec) => {
            let cells = run_phase_diagram(spec).map_err(|e| match e {
                Error::Config(_) => input(e),
                other => solver(other),
            })?;
            phase_csv(&cells)
        }
    };
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_file(output, &csv)?;
    write_file(&output.with_extension("cfg"), &job.to_cfg())?;
    print!("{csv}");
    Ok(())
}

/// `results.csv` -> `results.trials.csv`.
pub fn trials_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("bench");
    output.with_file_name(format!("{stem}.trials.csv"))
}
