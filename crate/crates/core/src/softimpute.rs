//! Nuclear-norm regularized matrix completion by iterated singular value thresholding.

use crate::error::{Error, Result};
use crate::matrix::{check_shape, svt_with_spectrum, BinMask, Mat, RANK_EPS};

/// Masked problem `min_B 1/2 |P_obs(D - B)|^2 + alpha |B|_*`, where the observed set
/// excludes both outlier and missing entries.
#[derive(Clone, Debug)]
pub struct CompletionProblem<'a> {
    pub d: &'a Mat,
    pub outlier_mask: &'a BinMask,
    pub missing_mask: &'a BinMask,
    pub alpha: f64,
    excluded: BinMask,
}

impl<'a> CompletionProblem<'a> {
    pub fn new(d: &'a Mat, outlier_mask: &'a BinMask, missing_mask: &'a BinMask, alpha: f64) -> Result<Self> {
        check_shape("outlier mask", d.shape(), outlier_mask.shape())?;
        check_shape("missing mask", d.shape(), missing_mask.shape())?;
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be finite and nonnegative, got {alpha}")));
        }
        let excluded = outlier_mask.or(missing_mask)?;
        if let Some(column) = (0..d.cols()).find(|&j| (0..d.rows()).all(|i| excluded.get(i, j))) {
            return Err(Error::IllPosed { column });
        }
        Ok(CompletionProblem { d, outlier_mask, missing_mask, alpha, excluded })
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        CompletionProblem { alpha, ..self.clone() }
    }

    /// Union of outlier and missing entries.
    pub fn excluded(&self) -> &BinMask {
        &self.excluded
    }

    /// Squared error over observed entries, halved.
    pub fn data_term(&self, b: &Mat) -> f64 {
        self.d
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .zip(self.excluded.as_slice())
            .filter(|(_, &x)| !x)
            .map(|((d, b), _)| (d - b) * (d - b))
            .sum::<f64>()
            * 0.5
    }

    /// Observed entries from `d`, excluded entries from `b`.
    pub fn fill(&self, b: &Mat) -> Mat {
        let data = self
            .d
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .zip(self.excluded.as_slice())
            .map(|((&d, &b), &x)| if x { b } else { d })
            .collect();
        Mat::from_vec(self.d.rows(), self.d.cols(), data).expect("shape preserved")
    }
}

#[derive(Clone, Debug)]
pub struct CompletionResult {
    pub b: Mat,
    /// Objective after every iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub rank: usize,
    /// Singular values of `b` (already shrunk).
    pub sigma: Vec<f64>,
    pub hit_iteration_cap: bool,
}

impl CompletionResult {
    pub fn nuclear_norm(&self) -> f64 {
        self.sigma.iter().sum()
    }

    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&f64::NAN)
    }
}

/// Iterates `B <- svt(P_obs(D) + P_excl(B), alpha)`.
///
/// Stops once the relative objective change and the relative step size both fall below `tol`.
pub fn soft_impute(
    problem: &CompletionProblem<'_>,
    warm_start: Option<&Mat>,
    tol: f64,
    max_iter: usize,
) -> Result<CompletionResult> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tol must be positive, got {tol}")));
    }
    let mut b = match warm_start {
        Some(w) => {
            check_shape("warm start", problem.d.shape(), w.shape())?;
            w.clone()
        }
        None => Mat::zeros(problem.d.rows(), problem.d.cols()),
    };
    let mut trace: Vec<f64> = Vec::new();
    let mut sigma = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter.max(1) {
        let z = problem.fill(&b);
        let (next, shrunk) = svt_with_spectrum(&z, problem.alpha)?;
        iterations += 1;
        let f = problem.data_term(&next) + problem.alpha * shrunk.iter().sum::<f64>();
        let step = relative_step(&b, &next);
        let obj_ok = trace.last().is_none_or(|&prev| (prev - f).abs() / prev.max(1.0) < tol);
        trace.push(f);
        b = next;
        sigma = shrunk;
        if step < tol && obj_ok {
            converged = true;
            break;
        }
    }
    let rank = sigma.iter().filter(|&&s| s > RANK_EPS).count();
    Ok(CompletionResult { b, objective_trace: trace, iterations, rank, sigma, hit_iteration_cap: !converged })
}

fn relative_step(old: &Mat, new: &Mat) -> f64 {
    let diff = (new - old).frobenius();
    if diff == 0.0 {
        return 0.0;
    }
    diff / old.frobenius().max(new.frobenius()).max(f64::MIN_POSITIVE)
}

/// Continuation settings for the rank-capped solve.
#[derive(Clone, Debug)]
pub struct RankCap {
    pub k_cap: usize,
    pub eta1: f64,
    pub alpha_floor: Option<f64>,
    /// Upper bound on the number of alpha reductions.
    pub max_steps: usize,
}

impl RankCap {
    pub fn new(k_cap: usize, eta1: f64) -> Self {
        RankCap { k_cap, eta1, alpha_floor: None, max_steps: 60 }
    }
}

#[derive(Clone, Debug)]
pub struct CappedCompletion {
    pub result: CompletionResult,
    /// The alpha that produced `result`.
    pub alpha: f64,
    /// True when even the starting alpha gave a rank above the cap.
    pub cap_exceeded_at_start: bool,
    pub solves: usize,
}

/// Solves at `alpha_init`, then keeps shrinking alpha by `eta1` (warm-started) while
/// the rank stays within the cap. The first solve that exceeds the cap is discarded.
pub fn soft_impute_with_rank_cap(
    d: &Mat,
    outlier_mask: &BinMask,
    missing_mask: &BinMask,
    alpha_init: f64,
    cap: &RankCap,
    warm_start: Option<&Mat>,
    tol: f64,
    max_iter: usize,
) -> Result<CappedCompletion> {
    if !(alpha_init > 0.0) {
        return Err(Error::Config(format!("initial alpha must be positive, got {alpha_init}")));
    }
    if cap.k_cap == 0 {
        return Err(Error::Config("rank cap must be at least 1".into()));
    }
    if !(cap.eta1 > 0.0 && cap.eta1 < 1.0) {
        return Err(Error::Config(format!("eta1 must lie in (0, 1), got {}", cap.eta1)));
    }
    let problem = CompletionProblem::new(d, outlier_mask, missing_mask, alpha_init)?;
    let mut alpha = alpha_init;
    let mut current = soft_impute(&problem, warm_start, tol, max_iter)?;
    let mut solves = 1;
    if current.rank > cap.k_cap {
        return Ok(CappedCompletion { result: current, alpha, cap_exceeded_at_start: true, solves });
    }
    if cap.k_cap >= d.rows().min(d.cols()) {
        return Ok(CappedCompletion { result: current, alpha, cap_exceeded_at_start: false, solves });
    }
    for _ in 0..cap.max_steps {
        let next_alpha = alpha * cap.eta1;
        if cap.alpha_floor.is_some_and(|f| next_alpha < f) {
            break;
        }
        let trial = soft_impute(&problem.with_alpha(next_alpha), Some(&current.b), tol, max_iter)?;
        solves += 1;
        if trial.rank > cap.k_cap {
            break;
        }
        alpha = next_alpha;
        current = trial;
    }
    Ok(CappedCompletion { result: current, alpha, cap_exceeded_at_start: false, solves })
}
