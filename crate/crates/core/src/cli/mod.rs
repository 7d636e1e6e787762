//! The `decolor` command-line tool.

pub mod commands;
pub mod config;
pub mod frames;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::{input, Outcome};
use config::{BenchJob, KeyValues, SegmentJob, SynthJob};

#[derive(Parser, Debug)]
#[command(name = "decolor", version, about = "Moving-object segmentation with a low-rank background model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Segment a directory of frames.
    Segment {
        input: Option<PathBuf>,
        output: Option<PathBuf>,
        #[command(flatten)]
        job: JobArgs,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Run a simulation sweep and write a CSV table.
    Bench {
        spec: Option<PathBuf>,
        output: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[command(flatten)]
        job: JobArgs,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Compare a directory of masks to a directory of truth masks.
    Score { masks: PathBuf, truth: PathBuf },
    /// Write a synthetic sequence with its truth masks.
    Synth {
        output: PathBuf,
        #[command(flatten)]
        job: JobArgs,
    },
}

#[derive(Args, Debug)]
struct JobArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SolverArgs {
    #[arg(long, value_parser = ["none", "translation", "affine", "projective"])]
    motion: Option<String>,
    #[arg(long)]
    gamma_mult: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

impl SolverArgs {
    fn apply(&self, kv: &mut KeyValues) {
        if let Some(v) = &self.motion {
            kv.set("motion", v);
        }
        if let Some(v) = self.gamma_mult {
            kv.set("gamma_mult", v);
        }
        if let Some(v) = self.k {
            kv.set("k_cap", v);
        }
        if let Some(v) = self.tol {
            kv.set("tol", v);
        }
        if let Some(v) = self.max_iter {
            kv.set("max_iter", v);
        }
    }
}

fn load(path: Option<&PathBuf>) -> Outcome<KeyValues> {
    match path {
        Some(p) => KeyValues::load(p).map_err(input),
        None => Ok(KeyValues::default()),
    }
}

fn set_threads() -> Outcome<()> {
    let Ok(raw) = std::env::var("DECOLOR_THREADS") else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| input(format!("DECOLOR_THREADS must be a positive integer, got '{raw}'")))?;
    // a pool that is already initialized keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(cli: Cli) -> Outcome<()> {
    set_threads()?;
    match cli.command {
        Command::Segment { input: inp, output, job, solver } => {
            let mut kv = load(job.config.as_ref())?;
            if let Some(p) = inp {
                kv.set("input", p.display());
            }
            if let Some(p) = output {
                kv.set("output", p.display());
            }
            solver.apply(&mut kv);
            // the pipeline is deterministic; a seed is accepted for interface symmetry
            let _ = job.seed;
            let job = SegmentJob::from_kv(kv).map_err(input)?;
            commands::segment(&job).map(|_| ())
        }
        Command::Bench { spec, output, trials, job, solver } => {
            let path = spec.or(job.config).ok_or_else(|| input("no sweep spec given"))?;
            let mut kv = load(Some(&path))?;
            let from_file = kv.take("output").map(PathBuf::from);
            solver.apply(&mut kv);
            if let Some(t) = trials {
                kv.set("trials", t);
            }
            let mut bench = BenchJob::from_kv(kv).map_err(input)?;
            if let Some(s) = job.seed {
                bench.set_seed(s);
            }
            let out = output.or(from_file).ok_or_else(|| input("no output CSV given"))?;
            commands::bench(&bench, &out)
        }
        Command::Score { masks, truth } => commands::score(&masks, &truth).map(|_| ()),
        Command::Synth { output, job } => {
            let kv = load(job.config.as_ref())?;
            let mut synth = SynthJob::from_kv(kv).map_err(input)?;
            if let Some(s) = job.seed {
                synth.set_seed(s);
            }
            commands::synth(&synth, &output)
        }
    }
}

/// Parses `args` (program name first) and runs the command; returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.exit_code()
        }
    }
}
