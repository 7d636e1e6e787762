//! Joint estimation of background, foreground support and per-frame alignment.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::{check_shape, svd, BinMask, Mat};
use crate::motion::{prealign, update_tau, warp_frame, MotionModel, TransformStack};
use crate::mrf::{batch_support, label_disagreements};
use crate::sequence::{column_to_frame, mask_column_to_frame, FrameSequence, FrameShape};
use crate::softimpute::{soft_impute_with_rank_cap, RankCap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionMode {
    None,
    Translation,
    Affine,
    Projective,
}

impl MotionMode {
    pub fn model(self) -> Option<MotionModel> {
        match self {
            MotionMode::None => None,
            MotionMode::Translation => Some(MotionModel::Translation),
            MotionMode::Affine => Some(MotionModel::Affine),
            MotionMode::Projective => Some(MotionModel::Projective),
        }
    }
}

impl fmt::Display for MotionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MotionMode::None => "none",
            MotionMode::Translation => "translation",
            MotionMode::Affine => "affine",
            MotionMode::Projective => "projective",
        })
    }
}

impl FromStr for MotionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(MotionMode::None),
            other => other.parse::<MotionModel>().map(|m| match m {
                MotionModel::Translation => MotionMode::Translation,
                MotionModel::Affine => MotionMode::Affine,
                MotionModel::Projective => MotionMode::Projective,
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecolorConfig {
    /// Rank cap for the background; `None` means `floor(sqrt(n))`.
    pub k_cap: Option<usize>,
    /// Smoothness weight as a multiple of the outlier penalty.
    pub gamma_factor: f64,
    /// Shrink factor for the nuclear-norm weight.
    pub eta1: f64,
    /// Shrink factor for the outlier penalty.
    pub eta2: f64,
    /// The outlier penalty never goes below this multiple of the residual variance.
    pub beta_floor_mult: f64,
    pub tol: f64,
    pub max_outer_iter: usize,
    pub motion: MotionMode,
    pub alpha_floor: Option<f64>,
    pub beta_floor: Option<f64>,
    pub inner_max_iter: usize,
    /// Gauss-Newton steps per frame in every outer iteration.
    pub tau_iters: usize,
}

impl Default for DecolorConfig {
    /// Settings for camera footage.
    fn default() -> Self {
        DecolorConfig {
            k_cap: None,
            gamma_factor: 5.0,
            eta1: std::f64::consts::FRAC_1_SQRT_2,
            eta2: 0.5,
            beta_floor_mult: 4.5,
            tol: 1e-4,
            max_outer_iter: 50,
            motion: MotionMode::Affine,
            alpha_floor: None,
            beta_floor: None,
            inner_max_iter: 100,
            tau_iters: 1,
        }
    }
}

impl DecolorConfig {
    /// Settings for the simulated static-camera scenes.
    pub fn synthetic() -> Self {
        DecolorConfig { gamma_factor: 1.0, tol: 1e-5, motion: MotionMode::None, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.eta1 > 0.0 && self.eta1 < 1.0) {
            return bad(format!("eta1 must lie in (0, 1), got {}", self.eta1));
        }
        if !(self.eta2 > 0.0 && self.eta2 < 1.0) {
            return bad(format!("eta2 must lie in (0, 1), got {}", self.eta2));
        }
        if self.k_cap == Some(0) {
            return bad("k_cap must be at least 1".into());
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if !(self.gamma_factor >= 0.0) || !self.gamma_factor.is_finite() {
            return bad(format!("gamma factor must be finite and nonnegative, got {}", self.gamma_factor));
        }
        if !(self.beta_floor_mult >= 0.0) {
            return bad("beta_floor_mult must be nonnegative".into());
        }
        if self.max_outer_iter == 0 || self.inner_max_iter == 0 {
            return bad("iteration caps must be positive".into());
        }
        Ok(())
    }

    pub fn resolved_k_cap(&self, n: usize) -> usize {
        self.k_cap.unwrap_or(((n as f64).sqrt().floor() as usize).max(1))
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub b_hat: Mat,
    pub s_hat: BinMask,
    pub tau_hat: TransformStack,
    /// Entries that warped in from outside the source frame.
    pub missing: BinMask,
    /// Aligned observations the background and support refer to.
    pub d_warped: Mat,
    pub energy_trace: Vec<f64>,
    pub alpha_trace: Vec<f64>,
    pub beta_trace: Vec<f64>,
    pub gamma_trace: Vec<f64>,
    pub sigma_trace: Vec<f64>,
    /// Residual-variance floor for the outlier penalty at each iteration.
    pub beta_floor_trace: Vec<f64>,
    pub rank_trace: Vec<usize>,
    pub outer_iterations: usize,
    pub converged: bool,
    pub k_cap: usize,
    pub warnings: Vec<String>,
    /// Set when the loop stopped on an error; the fields above hold the last good state.
    pub failure: Option<String>,
}

/// Standard deviation of `d - b` over entries that are neither foreground nor missing.
pub fn estimate_sigma(d_warped: &Mat, b_hat: &Mat, s_hat: &BinMask, missing: &BinMask) -> Result<f64> {
    check_shape("background", d_warped.shape(), b_hat.shape())?;
    check_shape("support", d_warped.shape(), s_hat.shape())?;
    check_shape("missing", d_warped.shape(), missing.shape())?;
    let residuals: Vec<f64> = d_warped
        .as_slice()
        .iter()
        .zip(b_hat.as_slice())
        .zip(s_hat.as_slice().iter().zip(missing.as_slice()))
        .filter(|(_, (&s, &x))| !s && !x)
        .map(|((d, b), _)| d - b)
        .collect();
    if residuals.len() < 10 {
        return Err(Error::Estimation(format!("only {} background entries to estimate noise from", residuals.len())));
    }
    Ok(crate::matrix::variance(&residuals).sqrt())
}

/// Total objective: masked fit, nuclear norm, support size and boundary length.
pub fn global_energy(
    d_warped: &Mat,
    b_hat: &Mat,
    s_hat: &BinMask,
    alpha: f64,
    beta: f64,
    gamma: f64,
    missing: &BinMask,
    shape: FrameShape,
) -> Result<f64> {
    let nuclear: f64 = svd(b_hat)?.sigma.iter().sum();
    energy_with_nuclear(d_warped, b_hat, s_hat, alpha, beta, gamma, missing, shape, nuclear)
}

#[allow(clippy::too_many_arguments)]
fn energy_with_nuclear(
    d_warped: &Mat,
    b_hat: &Mat,
    s_hat: &BinMask,
    alpha: f64,
    beta: f64,
    gamma: f64,
    missing: &BinMask,
    shape: FrameShape,
    nuclear: f64,
) -> Result<f64> {
    check_shape("background", d_warped.shape(), b_hat.shape())?;
    check_shape("support", d_warped.shape(), s_hat.shape())?;
    check_shape("missing", d_warped.shape(), missing.shape())?;
    if d_warped.rows() != shape.pixels() {
        return Err(Error::Dimension("frame shape does not match the row count".into()));
    }
    let fit: f64 = d_warped
        .as_slice()
        .iter()
        .zip(b_hat.as_slice())
        .zip(s_hat.as_slice().iter().zip(missing.as_slice()))
        .filter(|(_, (&s, &x))| !s && !x)
        .map(|((d, b), _)| (d - b) * (d - b))
        .sum::<f64>()
        * 0.5;
    let support = s_hat.count_ones() as f64;
    let cuts: usize = (0..s_hat.cols()).map(|j| label_disagreements(&mask_column_to_frame(&s_hat.column(j), shape))).sum();
    let smooth = if cuts == 0 { 0.0 } else { gamma * cuts as f64 };
    let shrink = if nuclear == 0.0 { 0.0 } else { alpha * nuclear };
    Ok(fit + shrink + beta * support + smooth)
}

fn warp_all(frames: &FrameSequence, tau: &TransformStack) -> Result<(Mat, BinMask)> {
    let shape = frames.shape();
    let outs: Vec<_> = (0..frames.len())
        .into_par_iter()
        .map(|j| warp_frame(&frames.frame(j), tau.get(j)))
        .collect::<Result<_>>()?;
    let mut d = Mat::zeros(shape.pixels(), frames.len());
    let mut missing = BinMask::zeros(shape.pixels(), frames.len());
    for (j, wf) in outs.iter().enumerate() {
        d.set_column(j, wf.pixels.as_slice());
        let invalid: Vec<bool> = wf.validity.as_slice().iter().map(|v| !v).collect();
        missing.set_column(j, &invalid);
    }
    Ok((d, missing))
}

struct BetaSchedule {
    beta: f64,
    settled: bool,
}

impl BetaSchedule {
    /// Decays toward the noise floor and then holds, so that small fluctuations of the
    /// floor do not keep changing it. A held value resumes decaying once the floor falls
    /// below `eta2` times it. Never rises.
    fn update(&mut self, floor: f64, eta2: f64) {
        let decayed = eta2 * self.beta;
        if floor >= self.beta || (self.settled && floor >= decayed) {
            return;
        }
        if floor >= decayed {
            self.beta = floor;
            self.settled = true;
        } else {
            self.beta = decayed;
            self.settled = false;
        }
    }
}

pub fn run(frames: &FrameSequence, config: &DecolorConfig) -> Result<RunReport> {
    config.validate()?;
    let n = frames.len();
    let shape = frames.shape();
    if n == 0 || shape.pixels() == 0 {
        return Err(Error::Dimension("empty frame sequence".into()));
    }
    let model = config.motion.model();
    if model.is_some() && n < 2 {
        return Err(Error::Config("motion compensation needs at least 2 frames".into()));
    }

    let mut warnings = Vec::new();
    let mut tau = match model {
        Some(m) => {
            let pre = prealign(frames, m)?;
            warnings.extend(pre.warnings.iter().map(|w| format!("frame {}: {}", w.frame, w.message)));
            pre.transforms
        }
        None => TransformStack::identity(MotionModel::Translation, n),
    };
    let (mut d_w, mut missing) = if model.is_some() {
        warp_all(frames, &tau)?
    } else {
        (frames.matrix().clone(), BinMask::zeros(shape.pixels(), n))
    };

    let k_cap = config.resolved_k_cap(n);
    let mut cap = RankCap::new(k_cap, config.eta1);
    cap.alpha_floor = config.alpha_floor;

    let sigma0 = svd(&d_w)?.sigma;
    let top = sigma0.first().copied().unwrap_or(0.0);
    let mut alpha = sigma0.get(1).copied().unwrap_or(top).max(1e-12 * top.max(1.0));
    let observed: Vec<f64> =
        d_w.as_slice().iter().zip(missing.as_slice()).filter(|(_, &x)| !x).map(|(&v, _)| v).collect();
    let data_var = crate::matrix::variance(&observed);
    let mut schedule = BetaSchedule { beta: (0.5 * data_var).max(1e-12), settled: false };

    let mut b = d_w.clone();
    let mut s = BinMask::zeros(shape.pixels(), n);
    let mut report = RunReport {
        b_hat: b.clone(),
        s_hat: s.clone(),
        tau_hat: tau.clone(),
        missing: missing.clone(),
        d_warped: d_w.clone(),
        energy_trace: Vec::new(),
        alpha_trace: Vec::new(),
        beta_trace: Vec::new(),
        gamma_trace: Vec::new(),
        sigma_trace: Vec::new(),
        beta_floor_trace: Vec::new(),
        rank_trace: Vec::new(),
        outer_iterations: 0,
        converged: false,
        k_cap,
        warnings,
        failure: None,
    };

    for it in 0..config.max_outer_iter {
        if let (Some(_), true) = (model, it > 0) {
            // the middle frame stays fixed so the background cannot drift as a whole
            let anchor = n / 2;
            let updates: Vec<_> = (0..n)
                .into_par_iter()
                .map(|j| {
                    if j == anchor {
                        return Ok(tau.get(j).clone());
                    }
                    let bj = column_to_frame(&b.column(j), shape);
                    let sj = mask_column_to_frame(&s.column(j), shape);
                    update_tau(&frames.frame(j), &bj, &sj, tau.get(j), config.tau_iters)
                })
                .collect();
            for (j, u) in updates.into_iter().enumerate() {
                match u {
                    Ok(w) => tau.set(j, w),
                    Err(e) => report.warnings.push(format!("iteration {it}, frame {j}: kept previous warp ({e})")),
                }
            }
            (d_w, missing) = warp_all(frames, &tau)?;
            s = s.and(&missing.not())?;
        }

        let capped = match soft_impute_with_rank_cap(&d_w, &s, &missing, alpha, &cap, Some(&b), config.tol, config.inner_max_iter) {
            Ok(c) => c,
            Err(e) => {
                report.failure = Some(e.to_string());
                break;
            }
        };
        b = capped.result.b.clone();
        alpha = capped.alpha;

        let sigma = match estimate_sigma(&d_w, &b, &s, &missing) {
            Ok(v) => v,
            Err(e) => {
                report.failure = Some(e.to_string());
                break;
            }
        };
        let floor = (config.beta_floor_mult * sigma * sigma).max(config.beta_floor.unwrap_or(0.0));
        schedule.update(floor, config.eta2);
        let beta = schedule.beta;
        let gamma = config.gamma_factor * beta;

        let residual_sq = d_w.zip_map(&b, |d, b| (d - b) * (d - b))?;
        let residual_sq = crate::matrix::project_off(&missing, &residual_sq)?;
        s = batch_support(&residual_sq, shape, beta, gamma, Some(&missing))?;

        let energy = energy_with_nuclear(&d_w, &b, &s, alpha, beta, gamma, &missing, shape, capped.result.nuclear_norm())?;
        let frozen = report.alpha_trace.last() == Some(&alpha)
            && report.beta_trace.last() == Some(&beta)
            && report.gamma_trace.last() == Some(&gamma);
        let previous = report.energy_trace.last().copied();

        report.energy_trace.push(energy);
        report.alpha_trace.push(alpha);
        report.beta_trace.push(beta);
        report.gamma_trace.push(gamma);
        report.sigma_trace.push(sigma);
        report.beta_floor_trace.push(floor);
        report.rank_trace.push(capped.result.rank);
        report.outer_iterations = it + 1;
        log::debug!("iteration {}: energy {energy:.6e}, alpha {alpha:.4e}, beta {beta:.4e}, rank {}", it + 1, capped.result.rank);
        report.b_hat = b.clone();
        report.s_hat = s.clone();
        report.tau_hat = tau.clone();
        report.missing = missing.clone();
        report.d_warped = d_w.clone();

        if let (true, Some(prev)) = (frozen, previous) {
            if (prev - energy).abs() <= config.tol * prev.abs().max(f64::MIN_POSITIVE) {
                report.converged = true;
                break;
            }
        }
    }
    Ok(report)
}
