//! Comparison methods: a convex sparse-plus-low-rank solver, a temporal median model,
//! and max-F thresholding of residuals against ground truth.

use crate::error::{Error, Result};
use crate::matrix::{check_shape, svd, svt_with_spectrum, BinMask, Mat, RANK_EPS};
use crate::sequence::FrameSequence;

#[derive(Clone, Debug)]
pub struct PcpResult {
    pub b: Mat,
    pub e: Mat,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub rank: usize,
}

pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn pcp_objective(d: &Mat, b: &Mat, e: &Mat, nuclear: f64, alpha: f64, beta: f64) -> f64 {
    let mut fit = 0.0;
    let mut l1 = 0.0;
    for ((dv, bv), ev) in d.as_slice().iter().zip(b.as_slice()).zip(e.as_slice()) {
        let r = dv - bv - ev;
        fit += r * r;
        l1 += ev.abs();
    }
    0.5 * fit + alpha * nuclear + beta * l1
}

/// Alternating proximal minimization of
/// `0.5 |D - B - E|_F^2 + alpha |B|_* + beta |E|_1`.
pub fn spcp(d: &Mat, alpha: f64, beta: f64, tol: f64, max_iter: usize) -> Result<PcpResult> {
    spcp_from(d, alpha, beta, None, tol, max_iter)
}

fn spcp_from(d: &Mat, alpha: f64, beta: f64, warm_e: Option<&Mat>, tol: f64, max_iter: usize) -> Result<PcpResult> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::Config(format!("alpha and beta must be positive, got {alpha} and {beta}")));
    }
    let mut e = match warm_e {
        Some(w) => {
            check_shape("warm start", d.shape(), w.shape())?;
            w.clone()
        }
        None => Mat::zeros(d.rows(), d.cols()),
    };
    let mut b = Mat::zeros(d.rows(), d.cols());
    let mut rank = 0;
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter.max(1) {
        let (nb, sigma) = svt_with_spectrum(&(d - &e), alpha)?;
        b = nb;
        rank = sigma.iter().filter(|&&s| s > RANK_EPS).count();
        e = d.zip_map(&b, |dv, bv| soft_threshold(dv - bv, beta))?;
        let f = pcp_objective(d, &b, &e, sigma.iter().sum(), alpha, beta);
        iterations += 1;
        let done = trace.last().is_some_and(|&prev: &f64| (prev - f).abs() <= tol * prev.abs().max(f64::MIN_POSITIVE));
        trace.push(f);
        if done {
            break;
        }
    }
    Ok(PcpResult { b, e, objective_trace: trace, iterations, rank })
}

/// Continuation schedule for [`spcp_with_rank_cap`]: alpha starts at the second singular
/// value of the data and shrinks by `eta1` while the background rank stays within `k_cap`;
/// the sparsity weight tracks `lambda * alpha`.
#[derive(Clone, Debug)]
pub struct SpcpPath {
    pub k_cap: usize,
    pub eta1: f64,
    pub lambda: f64,
    pub max_steps: usize,
}

impl SpcpPath {
    /// Standard sparsity weight `1 / sqrt(max(m, n))`.
    pub fn standard(k_cap: usize, m: usize, n: usize) -> Self {
        SpcpPath { k_cap, eta1: std::f64::consts::FRAC_1_SQRT_2, lambda: 1.0 / (m.max(n) as f64).sqrt(), max_steps: 60 }
    }
}

#[derive(Clone, Debug)]
pub struct CappedPcp {
    pub result: PcpResult,
    pub alpha: f64,
    pub beta: f64,
}

pub fn spcp_with_rank_cap(d: &Mat, path: &SpcpPath, tol: f64, max_iter: usize) -> Result<CappedPcp> {
    if path.k_cap == 0 || !(path.eta1 > 0.0 && path.eta1 < 1.0) || !(path.lambda > 0.0) {
        return Err(Error::Config("invalid continuation schedule".into()));
    }
    let sigma = svd(d)?.sigma;
    let top = sigma.first().copied().unwrap_or(0.0);
    let mut alpha = sigma.get(1).copied().unwrap_or(top).max(1e-12 * top.max(1.0));
    let mut current = spcp(d, alpha, path.lambda * alpha, tol, max_iter)?;
    if current.rank > path.k_cap {
        return Ok(CappedPcp { beta: path.lambda * alpha, result: current, alpha });
    }
    for _ in 0..path.max_steps {
        let next = alpha * path.eta1;
        let trial = spcp_from(d, next, path.lambda * next, Some(&current.e), tol, max_iter)?;
        if trial.rank > path.k_cap {
            break;
        }
        alpha = next;
        current = trial;
    }
    Ok(CappedPcp { beta: path.lambda * alpha, result: current, alpha })
}

#[derive(Clone, Debug)]
pub struct ThresholdSweep {
    pub thresholds: Vec<f64>,
    pub f_measures: Vec<f64>,
    pub best_threshold: f64,
    pub best_mask: BinMask,
}

impl ThresholdSweep {
    pub fn best_f(&self) -> f64 {
        self.f_measures.iter().copied().fold(0.0, f64::max)
    }
}

/// Tries every cut between distinct residual values (mask = residual > t) and keeps
/// the one with the highest F-measure.
pub fn max_f_threshold(residual_abs: &Mat, truth: &BinMask) -> Result<ThresholdSweep> {
    check_shape("truth", residual_abs.shape(), truth.shape())?;
    let positives = truth.count_ones();
    if positives == 0 {
        return Err(Error::UndefinedMeasure);
    }
    let mut order: Vec<(f64, bool)> =
        residual_abs.as_slice().iter().copied().zip(truth.as_slice().iter().copied()).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));

    // walking upward, everything at or below the cursor is excluded from the mask
    let total = order.len();
    let mut tp = positives;
    let mut predicted = total;
    let f = |tp: usize, predicted: usize| 2.0 * tp as f64 / (predicted + positives) as f64;
    let mut thresholds = vec![order[0].0 - 1.0];
    let mut f_measures = vec![f(tp, predicted)];
    let mut i = 0;
    while i < total {
        let v = order[i].0;
        while i < total && order[i].0 == v {
            predicted -= 1;
            if order[i].1 {
                tp -= 1;
            }
            i += 1;
        }
        if i < total {
            thresholds.push(0.5 * (v + order[i].0));
            f_measures.push(f(tp, predicted));
        }
    }
    let mut best = 0;
    for (k, &fk) in f_measures.iter().enumerate() {
        if fk > f_measures[best] {
            best = k;
        }
    }
    let best_threshold = thresholds[best];
    let best_mask = BinMask::from_fn(residual_abs.rows(), residual_abs.cols(), |i, j| residual_abs.get(i, j) > best_threshold);
    Ok(ThresholdSweep { thresholds, f_measures, best_threshold, best_mask })
}

#[derive(Clone, Debug)]
pub struct MedianModel {
    /// One column: the per-pixel temporal median.
    pub background: Vec<f64>,
    /// `|frame - background|` for every frame, one column each.
    pub residual: Mat,
}

impl MedianModel {
    pub fn mask(&self, threshold: f64) -> BinMask {
        BinMask::from_fn(self.residual.rows(), self.residual.cols(), |i, j| self.residual.get(i, j) > threshold)
    }

    /// The background repeated for every frame.
    pub fn background_matrix(&self) -> Mat {
        Mat::from_fn(self.residual.rows(), self.residual.cols(), |i, _| self.background[i])
    }
}

/// Per-pixel temporal median; for an even frame count the two middle values are averaged.
pub fn median_background(frames: &FrameSequence) -> Result<MedianModel> {
    let d = frames.matrix();
    let (m, n) = d.shape();
    if n == 0 {
        return Err(Error::Dimension("no frames".into()));
    }
    let mut background = Vec::with_capacity(m);
    let mut row = vec![0.0; n];
    for i in 0..m {
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = d.get(i, j);
        }
        row.sort_by(f64::total_cmp);
        background.push(if n % 2 == 1 { row[n / 2] } else { 0.5 * (row[n / 2 - 1] + row[n / 2]) });
    }
    let residual = Mat::from_fn(m, n, |i, j| (d.get(i, j) - background[i]).abs());
    Ok(MedianModel { background, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::score_mask;
    use crate::matrix::{svt, BinMask};
    use crate::synth::{generate, SynthConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn low_rank(rng: &mut ChaCha8Rng, m: usize, n: usize, r: usize) -> Mat {
        let u = Mat::from_fn(m, r, |_, _| rng.sample(StandardNormal));
        let v = Mat::from_fn(r, n, |_, _| rng.sample(StandardNormal));
        u.matmul(&v).unwrap()
    }

    #[test]
    fn huge_sparsity_weight_leaves_no_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = low_rank(&mut rng, 20, 12, 2);
        let res = spcp(&d, 0.5, 1e6, 1e-12, 500).unwrap();
        assert_eq!(res.e.max_abs(), 0.0);
        let fixed = svt(&d, 0.5).unwrap();
        assert!((&res.b - &fixed).max_abs() < 1e-9);
    }

    #[test]
    fn huge_rank_weight_leaves_spikes_in_e() {
        let mut d = Mat::zeros(10, 8);
        d.set(2, 3, 5.0);
        d.set(7, 1, -4.0);
        let res = spcp(&d, 1e6, 0.5, 1e-12, 100).unwrap();
        assert_eq!(res.b.max_abs(), 0.0);
        assert_eq!(res.e.get(2, 3), 4.5);
        assert_eq!(res.e.get(7, 1), -3.5);
        assert_eq!(res.e.as_slice().iter().filter(|v| **v != 0.0).count(), 2);
    }

    #[test]
    fn scattered_spikes_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (m, n) = (60, 40);
        let mut d = low_rank(&mut rng, m, n, 3);
        let truth = BinMask::from_fn(m, n, |_, _| rng.random_bool(0.05));
        for i in 0..m {
            for j in 0..n {
                if truth.get(i, j) {
                    d.set(i, j, d.get(i, j) + if rng.random_bool(0.5) { 10.0 } else { -10.0 });
                }
            }
        }
        let path = SpcpPath::standard(3, m, n);
        let res = spcp_with_rank_cap(&d, &path, 1e-7, 500).unwrap();
        let f = max_f_threshold(&res.result.e.map(f64::abs), &truth).unwrap().best_f();
        assert!(f >= 0.9, "F = {f}");
    }

    #[test]
    fn converged_solution_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = Mat::from_fn(15, 10, |_, _| rng.random_range(-2.0..2.0));
        let (alpha, beta) = (1.0, 0.3);
        let res = spcp(&d, alpha, beta, 1e-15, 20000).unwrap();
        let b_again = svt(&(&d - &res.e), alpha).unwrap();
        assert!((&b_again - &res.b).max_abs() < 1e-6);
        let e_again = d.zip_map(&res.b, |x, y| soft_threshold(x - y, beta)).unwrap();
        assert!((&e_again - &res.e).max_abs() < 1e-6);
    }

    #[test]
    fn perfect_separation_gives_unit_f() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = BinMask::from_fn(9, 7, |_, _| rng.random_bool(0.3));
        let r = truth.to_mat().scale(10.0);
        let sweep = max_f_threshold(&r, &truth).unwrap();
        assert_eq!(sweep.best_f(), 1.0);
        assert!(sweep.best_threshold > 0.0 && sweep.best_threshold < 10.0);
        assert_eq!(sweep.best_mask, truth);
    }

    #[test]
    fn constant_residual_is_the_all_ones_mask() {
        let truth = BinMask::from_fn(4, 5, |i, _| i == 0);
        let sweep = max_f_threshold(&Mat::from_fn(4, 5, |_, _| 0.7), &truth).unwrap();
        let all = score_mask(&BinMask::ones(4, 5), &truth).unwrap().f_measure;
        assert_eq!(sweep.best_f(), all);
        assert_eq!(sweep.thresholds.len(), 1);
    }

    #[test]
    fn empty_truth_is_undefined() {
        assert!(matches!(max_f_threshold(&Mat::zeros(2, 2), &BinMask::zeros(2, 2)), Err(Error::UndefinedMeasure)));
    }

    #[test]
    fn sweep_matches_exhaustive_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..30 {
            let (m, n) = (rng.random_range(1..8), rng.random_range(1..8));
            // coarse values so that ties occur
            let r = Mat::from_fn(m, n, |_, _| rng.random_range(0..6) as f64 * 0.5);
            let mut truth = BinMask::from_fn(m, n, |_, _| rng.random_bool(0.4));
            truth.set(0, 0, true);
            let mut best = 0.0f64;
            let mut cands: Vec<f64> = r.as_slice().to_vec();
            cands.push(-1.0);
            for t in cands {
                let mask = BinMask::from_fn(m, n, |i, j| r.get(i, j) > t);
                let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    for j in 0..n {
                        match (mask.get(i, j), truth.get(i, j)) {
                            (true, true) => tp += 1.0,
                            (true, false) => fp += 1.0,
                            (false, true) => fn_ += 1.0,
                            _ => {}
                        }
                    }
                }
                best = best.max(2.0 * tp / (2.0 * tp + fp + fn_));
            }
            let sweep = max_f_threshold(&r, &truth).unwrap();
            assert!((sweep.best_f() - best).abs() < 1e-12);
            let achieved = score_mask(&sweep.best_mask, &truth).unwrap().f_measure;
            assert!((achieved - best).abs() < 1e-12);
        }
    }

    #[test]
    fn median_of_constant_sequence() {
        let col: Vec<f64> = (0..6).map(|i| i as f64 * 0.25).collect();
        let d = Mat::from_columns(&vec![col.clone(); 5]).unwrap();
        let model = median_background(&FrameSequence::from_columns(d)).unwrap();
        assert_eq!(model.background, col);
        assert_eq!(model.residual.max_abs(), 0.0);
    }

    #[test]
    fn median_ignores_minority_foreground() {
        let d = Mat::from_fn(3, 7, |i, j| if i == 1 && j < 3 { 9.0 } else { i as f64 });
        let model = median_background(&FrameSequence::from_columns(d)).unwrap();
        assert_eq!(model.background, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn median_on_narrow_objects_over_static_background() {
        // a temporal median needs a background that repeats across frames
        let mut fs = Vec::new();
        for seed in 0..10 {
            let scene = generate(&SynthConfig { w: 10, r: 1, seed, ..Default::default() }).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let column: Vec<f64> = (0..scene.d.rows()).map(|_| rng.sample(StandardNormal)).collect();
            let d = Mat::from_fn(scene.d.rows(), scene.d.cols(), |i, j| {
                if scene.s0.get(i, j) {
                    scene.d.get(i, j)
                } else {
                    column[i] + scene.noise.get(i, j)
                }
            });
            let model = median_background(&FrameSequence::from_columns(d)).unwrap();
            fs.push(max_f_threshold(&model.residual, &scene.s0).unwrap().best_f());
        }
        let mean = fs.iter().sum::<f64>() / fs.len() as f64;
        assert!(mean >= 0.8, "mean F {mean}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn spcp_objective_never_increases(seed in 0u64..1000, alpha in 0.05f64..2.0, beta in 0.05f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = Mat::from_fn(8, 6, |_, _| rng.random_range(-3.0..3.0));
            let res = spcp(&d, alpha, beta, 1e-12, 200).unwrap();
            for w in res.objective_trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-10 * w[0].abs().max(1.0));
            }
        }

        #[test]
        fn max_f_dominates_fixed_thresholds(seed in 0u64..1000, t in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = Mat::from_fn(6, 9, |_, _| rng.random_range(0.0..1.0));
            let mut truth = BinMask::from_fn(6, 9, |_, _| rng.random_bool(0.3));
            truth.set(2, 2, true);
            let sweep = max_f_threshold(&r, &truth).unwrap();
            let fixed = BinMask::from_fn(6, 9, |i, j| r.get(i, j) > t);
            prop_assert!(sweep.best_f() + 1e-12 >= score_mask(&fixed, &truth).unwrap().f_measure);
        }
    }
}
