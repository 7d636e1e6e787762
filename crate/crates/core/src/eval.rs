//! Scoring and the simulation sweeps built on top of it.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{max_f_threshold, median_background, spcp_with_rank_cap, SpcpPath};
use crate::decolor::{self, DecolorConfig};
use crate::error::{Error, Result};
use crate::matrix::{check_shape, BinMask, Mat};
use crate::synth::{generate, SynthConfig, SyntheticScene};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub rmse: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Nothing was predicted, so precision is reported as 0.
    pub precision_undefined: bool,
    /// The truth is empty, so recall is reported as 0.
    pub recall_undefined: bool,
}

/// Entrywise confusion counts. F is `2tp / (2tp + fp + fn)`, and 1 when both masks are empty.
pub fn score_mask(predicted: &BinMask, truth: &BinMask) -> Result<Metrics> {
    check_shape("truth", predicted.shape(), truth.shape())?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &t) in predicted.as_slice().iter().zip(truth.as_slice()) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let denom = 2 * tp + fp + fn_;
    Ok(Metrics {
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        f_measure: if denom == 0 { 1.0 } else { 2.0 * tp as f64 / denom as f64 },
        rmse: None,
        tp,
        fp,
        tn,
        fn_,
        precision_undefined: tp + fp == 0,
        recall_undefined: tp + fn_ == 0,
    })
}

/// `|b_hat - b0|_F / |b0|_F`.
pub fn score_recovery(b_hat: &Mat, b0: &Mat) -> Result<f64> {
    check_shape("background", b_hat.shape(), b0.shape())?;
    let scale = b0.frobenius();
    if scale == 0.0 {
        return Err(Error::UndefinedMeasure);
    }
    Ok((b_hat - b0).frobenius() / scale)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Decolor,
    DecolorGamma0,
    Spcp,
    Median,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Decolor, Method::DecolorGamma0, Method::Spcp, Method::Median];

    pub fn name(self) -> &'static str {
        match self {
            Method::Decolor => "decolor",
            Method::DecolorGamma0 => "decolor_gamma0",
            Method::Spcp => "spcp",
            Method::Median => "median",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    ObjectWidth,
    Snr,
    KCap,
    GammaMult,
    StopFrames,
    /// Foreground standard deviation; the foreground mean is drawn per trial.
    SigmaF,
}

impl SweepVariable {
    const NAMES: [(SweepVariable, &'static str); 6] = [
        (SweepVariable::ObjectWidth, "object_width"),
        (SweepVariable::Snr, "snr"),
        (SweepVariable::KCap, "k_cap"),
        (SweepVariable::GammaMult, "gamma_mult"),
        (SweepVariable::StopFrames, "stop_frames"),
        (SweepVariable::SigmaF, "sigma_f"),
    ];

    pub fn name(self) -> &'static str {
        Self::NAMES.iter().find(|(v, _)| *v == self).map(|(_, n)| *n).unwrap_or("")
    }

    fn apply(self, value: f64, scene: &mut SynthConfig, solver: &mut DecolorConfig) -> Result<()> {
        let count = || {
            if value >= 0.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::Config(format!("{} needs whole nonnegative values, got {value}", self.name())))
            }
        };
        match self {
            SweepVariable::ObjectWidth => scene.w = count()?,
            SweepVariable::Snr => scene.snr = value,
            SweepVariable::KCap => solver.k_cap = Some(count()?),
            SweepVariable::GammaMult => solver.gamma_factor = value,
            SweepVariable::StopFrames => scene.stop_frames = count()?,
            SweepVariable::SigmaF => scene.sigma_f = Some(value),
        }
        Ok(())
    }
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepVariable {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::NAMES
            .iter()
            .find(|(_, n)| *n == s)
            .map(|(v, _)| *v)
            .ok_or_else(|| Error::Config(format!("unknown sweep variable '{s}'")))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub grid: Vec<f64>,
    pub trials: usize,
    pub scene: SynthConfig,
    pub solver: DecolorConfig,
    pub methods: Vec<Method>,
    /// Sparsity weights for the convex baseline, as multiples of `1/sqrt(max(m, n))`;
    /// each trial keeps the best-scoring one.
    pub spcp_lambdas: Vec<f64>,
    /// Trial `t` uses scene seed `seed + t` at every grid point.
    pub seed: u64,
}

impl SweepSpec {
    pub fn new(variable: SweepVariable, grid: Vec<f64>, methods: Vec<Method>) -> Self {
        SweepSpec {
            variable,
            grid,
            trials: 20,
            scene: SynthConfig::default(),
            solver: DecolorConfig::synthetic(),
            methods,
            spcp_lambdas: vec![1.0],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if self.spcp_lambdas.is_empty() || self.spcp_lambdas.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Config("spcp lambdas must be positive".into()));
        }
        self.solver.validate()?;
        for &v in &self.grid {
            let (mut scene, mut solver) = (self.scene.clone(), self.solver.clone());
            self.variable.apply(v, &mut scene, &mut solver)?;
            scene.validate()?;
            solver.validate()?;
        }
        Ok(())
    }

    /// Scene and solver settings for one cell of the sweep.
    pub fn trial_setup(&self, value: f64, trial: usize) -> Result<(SynthConfig, DecolorConfig)> {
        let (mut scene, mut solver) = (self.scene.clone(), self.solver.clone());
        self.variable.apply(value, &mut scene, &mut solver)?;
        scene.seed = self.seed.wrapping_add(trial as u64);
        if scene.sigma_f.is_some() && self.variable == SweepVariable::SigmaF {
            let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ 0x5eed_f00d);
            scene.mean_f = Some(rng.random_range(-1.0..1.0));
        }
        Ok((scene, solver))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialRecord {
    pub value: f64,
    pub method: Method,
    pub trial: usize,
    pub seed: u64,
    pub f_measure: Option<f64>,
    pub rmse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub method: Method,
    pub f_mean: f64,
    pub f_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub trials: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepTable {
    pub variable: SweepVariable,
    pub rows: Vec<SweepRow>,
    pub records: Vec<TrialRecord>,
}

fn csv_number(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

impl SweepTable {
    pub fn row(&self, value: f64, method: Method) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.value == value && r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("value,method,f_mean,f_std,rmse_mean,rmse_std,trials,failures\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                csv_number(r.value),
                r.method,
                csv_number(r.f_mean),
                csv_number(r.f_std),
                csv_number(r.rmse_mean),
                csv_number(r.rmse_std),
                r.trials,
                r.failures
            );
        }
        out
    }

    /// One line per trial, with the scene seed and any failure message.
    pub fn trials_csv(&self) -> String {
        let mut out = String::from("value,method,trial,seed,f_measure,rmse,error\n");
        for r in &self.records {
            let error = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                csv_number(r.value),
                r.method,
                r.trial,
                r.seed,
                r.f_measure.map(csv_number).unwrap_or_default(),
                r.rmse.map(csv_number).unwrap_or_default(),
                error
            );
        }
        out
    }
}

/// Mean and sample standard deviation; NaN for an empty slice.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs one method on one scene. Decolor masks are scored as returned; the
/// baselines are thresholded at their best F.
pub fn evaluate_method(method: Method, scene: &SyntheticScene, solver: &DecolorConfig, spcp_lambdas: &[f64]) -> Result<Metrics> {
    match method {
        Method::Decolor | Method::DecolorGamma0 => {
            let mut cfg = solver.clone();
            if method == Method::DecolorGamma0 {
                cfg.gamma_factor = 0.0;
            }
            let report = decolor::run(&scene.frames(), &cfg)?;
            if let Some(msg) = &report.failure {
                return Err(Error::Estimation(msg.clone()));
            }
            let mut metrics = score_mask(&report.s_hat, &scene.s0)?;
            metrics.rmse = Some(score_recovery(&report.b_hat, &scene.b0)?);
            Ok(metrics)
        }
        Method::Spcp => {
            let (m, n) = scene.d.shape();
            let k = solver.resolved_k_cap(n);
            let mut best: Option<Metrics> = None;
            for &mult in spcp_lambdas {
                let mut path = SpcpPath::standard(k, m, n);
                path.eta1 = solver.eta1;
                path.lambda *= mult;
                let fit = spcp_with_rank_cap(&scene.d, &path, solver.tol, solver.inner_max_iter)?;
                let residual = scene.d.zip_map(&fit.result.b, |d, b| (d - b).abs())?;
                let sweep = max_f_threshold(&residual, &scene.s0)?;
                let mut metrics = score_mask(&sweep.best_mask, &scene.s0)?;
                metrics.rmse = Some(score_recovery(&fit.result.b, &scene.b0)?);
                if best.is_none_or(|b| metrics.f_measure > b.f_measure) {
                    best = Some(metrics);
                }
            }
            best.ok_or_else(|| Error::Config("no spcp lambdas".into()))
        }
        Method::Median => {
            let model = median_background(&scene.frames())?;
            let sweep = max_f_threshold(&model.residual, &scene.s0)?;
            let mut metrics = score_mask(&sweep.best_mask, &scene.s0)?;
            metrics.rmse = Some(score_recovery(&model.background_matrix(), &scene.b0)?);
            Ok(metrics)
        }
    }
}

pub fn run_sweep(spec: &SweepSpec) -> Result<SweepTable> {
    spec.validate()?;
    let jobs: Vec<(f64, usize)> =
        spec.grid.iter().flat_map(|&v| (0..spec.trials).map(move |t| (v, t))).collect();
    let records: Vec<Vec<TrialRecord>> = jobs
        .par_iter()
        .map(|&(value, trial)| {
            let (scene_cfg, solver) = match spec.trial_setup(value, trial) {
                Ok(s) => s,
                Err(e) => return failed_trial(spec, value, trial, spec.seed.wrapping_add(trial as u64), &e),
            };
            let scene = match generate(&scene_cfg) {
                Ok(s) => s,
                Err(e) => return failed_trial(spec, value, trial, scene_cfg.seed, &e),
            };
            spec.methods
                .iter()
                .map(|&method| {
                    let outcome = evaluate_method(method, &scene, &solver, &spec.spcp_lambdas);
                    TrialRecord {
                        value,
                        method,
                        trial,
                        seed: scene_cfg.seed,
                        f_measure: outcome.as_ref().ok().map(|m| m.f_measure),
                        rmse: outcome.as_ref().ok().and_then(|m| m.rmse),
                        error: outcome.err().map(|e| e.to_string()),
                    }
                })
                .collect()
        })
        .collect();
    let records: Vec<TrialRecord> = records.into_iter().flatten().collect();

    let mut rows = Vec::new();
    for &value in &spec.grid {
        for &method in &spec.methods {
            let cell: Vec<&TrialRecord> = records.iter().filter(|r| r.value == value && r.method == method).collect();
            let fs: Vec<f64> = cell.iter().filter_map(|r| r.f_measure).collect();
            let rmses: Vec<f64> = cell.iter().filter_map(|r| r.rmse).collect();
            let (f_mean, f_std) = mean_std(&fs);
            let (rmse_mean, rmse_std) = mean_std(&rmses);
            rows.push(SweepRow {
                value,
                method,
                f_mean,
                f_std,
                rmse_mean,
                rmse_std,
                trials: cell.len(),
                failures: cell.iter().filter(|r| r.error.is_some()).count(),
            });
        }
    }
    Ok(SweepTable { variable: spec.variable, rows, records })
}

fn failed_trial(spec: &SweepSpec, value: f64, trial: usize, seed: u64, e: &Error) -> Vec<TrialRecord> {
    spec.methods
        .iter()
        .map(|&method| TrialRecord { value, method, trial, seed, f_measure: None, rmse: None, error: Some(e.to_string()) })
        .collect()
}

/// Success-rate map over foreground spread and object width.
#[derive(Clone, Debug, Serialize)]
pub struct PhaseSpec {
    pub sigma_f: Vec<f64>,
    pub widths: Vec<usize>,
    pub trials: usize,
    /// A trial succeeds when its F-measure exceeds this.
    pub success_f: f64,
    pub scene: SynthConfig,
    pub solver: DecolorConfig,
    pub seed: u64,
}

impl Default for PhaseSpec {
    fn default() -> Self {
        PhaseSpec {
            sigma_f: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            widths: vec![10, 20, 30, 40, 50],
            trials: 20,
            success_f: 0.95,
            scene: SynthConfig::default(),
            solver: DecolorConfig::synthetic(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PhaseCell {
    pub sigma_f: f64,
    pub width: usize,
    pub success_rate: f64,
    pub trials: usize,
    pub failures: usize,
}

pub fn run_phase_diagram(spec: &PhaseSpec) -> Result<Vec<PhaseCell>> {
    if spec.sigma_f.is_empty() || spec.widths.is_empty() || spec.trials == 0 {
        return Err(Error::Config("phase diagram needs nonempty grids and at least one trial".into()));
    }
    let mut cells = Vec::new();
    for &width in &spec.widths {
        let mut sweep = SweepSpec::new(SweepVariable::SigmaF, spec.sigma_f.clone(), vec![Method::Decolor]);
        sweep.trials = spec.trials;
        sweep.scene = SynthConfig { w: width, ..spec.scene.clone() };
        sweep.solver = spec.solver.clone();
        sweep.seed = spec.seed;
        let table = run_sweep(&sweep)?;
        for &s in &spec.sigma_f {
            let cell: Vec<&TrialRecord> = table.records.iter().filter(|r| r.value == s).collect();
            let wins = cell.iter().filter(|r| r.f_measure.is_some_and(|f| f > spec.success_f)).count();
            cells.push(PhaseCell {
                sigma_f: s,
                width,
                success_rate: wins as f64 / cell.len() as f64,
                trials: cell.len(),
                failures: cell.iter().filter(|r| r.error.is_some()).count(),
            });
        }
    }
    Ok(cells)
}

pub fn phase_csv(cells: &[PhaseCell]) -> String {
    let mut out = String::from("sigma_f,width,success_rate,trials,failures\n");
    for c in cells {
        let _ = writeln!(out, "{},{},{},{},{}", c.sigma_f, c.width, c.success_rate, c.trials, c.failures);
    }
    out
}
