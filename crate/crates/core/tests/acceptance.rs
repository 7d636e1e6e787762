//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! The process exits 0 once every criterion has been evaluated, so FAIL lines are
//! reported without aborting the workspace test run. Set `ACCEPTANCE_STRICT=1` to
//! turn any FAIL into a nonzero exit.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use decolor::cli::frames::{list_frames, read_dir, read_mask};
use decolor::decolor::{run, DecolorConfig, MotionMode, RunReport};
use decolor::eval::{run_sweep, score_mask, Method, SweepSpec, SweepTable, SweepVariable};
use decolor::matrix::{svd, svt, BinMask, Mat};
use decolor::motion::{warp_frame, warp_with_jacobian, MotionModel, Warp};
use decolor::mrf::{min_cut_support, support_energy};
use decolor::sequence::FrameSequence;
use decolor::softimpute::{soft_impute, CompletionProblem};
use decolor::synth::{generate, generate_video, SynthConfig, VideoConfig};

struct Verdict {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn sweep(variable: SweepVariable, grid: &[f64], methods: &[Method], w: usize, k_cap: Option<usize>) -> SweepTable {
    let mut spec = SweepSpec::new(variable, grid.to_vec(), methods.to_vec());
    spec.scene.w = w;
    spec.solver.k_cap = k_cap;
    run_sweep(&spec).expect("sweep runs")
}

fn mean_f(table: &SweepTable, value: f64, method: Method) -> f64 {
    table.row(value, method).map_or(f64::NAN, |r| r.f_mean)
}

fn failures(table: &SweepTable) -> usize {
    table.rows.iter().map(|r| r.failures).sum()
}

fn sparse_outliers() -> Verdict {
    let t = sweep(SweepVariable::ObjectWidth, &[10.0], &[Method::Decolor, Method::Spcp], 10, None);
    let (d, s) = (mean_f(&t, 10.0, Method::Decolor), mean_f(&t, 10.0, Method::Spcp));
    Verdict {
        id: 1,
        title: "sparse outliers, W=10",
        pass: d >= 0.90 && s >= 0.85,
        detail: format!("F decolor {d:.4} (need >= 0.90), F spcp {s:.4} (need >= 0.85), failed trials {}", failures(&t)),
    }
}

fn contiguity() -> Verdict {
    let t = sweep(SweepVariable::ObjectWidth, &[40.0], &[Method::Decolor, Method::DecolorGamma0, Method::Spcp], 40, None);
    let (d, g0, s) = (mean_f(&t, 40.0, Method::Decolor), mean_f(&t, 40.0, Method::DecolorGamma0), mean_f(&t, 40.0, Method::Spcp));
    Verdict {
        id: 2,
        title: "contiguity advantage, W=40",
        pass: d - s >= 0.05 && d >= g0,
        detail: format!("F decolor {d:.4}, gamma=0 {g0:.4}, spcp {s:.4}; margin over spcp {:.4} (need >= 0.05)", d - s),
    }
}

fn gamma_stability() -> Verdict {
    let grid = [1.0, 5.0, 10.0];
    let t = sweep(SweepVariable::GammaMult, &grid, &[Method::Decolor], 25, None);
    let fs: Vec<f64> = grid.iter().map(|&g| mean_f(&t, g, Method::Decolor)).collect();
    let spread = fs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - fs.iter().cloned().fold(f64::INFINITY, f64::min);
    Verdict {
        id: 3,
        title: "gamma stability, W=25",
        pass: spread <= 0.05,
        detail: format!("F at gamma = 1, 5, 10 beta: {:.4} {:.4} {:.4}; spread {spread:.4} (need <= 0.05), failed trials {}", fs[0], fs[1], fs[2], failures(&t)),
    }
}

fn rank_sensitivity() -> Verdict {
    let t = sweep(SweepVariable::KCap, &[2.0, 3.0, 7.0], &[Method::Decolor], 25, None);
    let (f2, f3, f7) = (mean_f(&t, 2.0, Method::Decolor), mean_f(&t, 3.0, Method::Decolor), mean_f(&t, 7.0, Method::Decolor));
    Verdict {
        id: 4,
        title: "rank cap sensitivity, W=25",
        pass: f3 - f2 >= 0.1 && (f7 - f3).abs() <= 0.1,
        detail: format!("F at K = 2, 3, 7: {f2:.4} {f3:.4} {f7:.4}; K3-K2 {:.4} (need >= 0.1), |K7-K3| {:.4} (need <= 0.1)", f3 - f2, (f7 - f3).abs()),
    }
}

fn stopped_foreground() -> Verdict {
    let grid = [0.0, 1.0, 2.0, 3.0, 4.0];
    let low = sweep(SweepVariable::StopFrames, &grid, &[Method::Decolor], 25, Some(3));
    let low_f: Vec<f64> = grid.iter().map(|&d| mean_f(&low, d, Method::Decolor)).collect();
    let low_min = low_f.iter().cloned().fold(f64::INFINITY, f64::min);
    let auto = sweep(SweepVariable::StopFrames, &[0.0, 2.0], &[Method::Decolor], 25, None);
    let (a0, a2) = (mean_f(&auto, 0.0, Method::Decolor), mean_f(&auto, 2.0, Method::Decolor));
    Verdict {
        id: 5,
        title: "stopped foreground, W=25",
        pass: low_min >= 0.8 && a0 - a2 >= 0.15,
        detail: format!(
            "K=3 min F over d=0..4 {low_min:.4} (need >= 0.8); default K F(d=0) {a0:.4}, F(d=2) {a2:.4}, drop {:.4} (need >= 0.15)",
            a0 - a2
        ),
    }
}

fn dyadic(rng: &mut ChaCha8Rng, max_eighths: u32) -> f64 {
    rng.random_range(0..=max_eighths) as f64 / 8.0
}

fn graph_cut_exactness() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0ffee);
    let mut mismatches = 0;
    for _ in 0..200 {
        let (h, w) = (rng.random_range(1..=3), rng.random_range(1..=4));
        let r = Mat::from_fn(h, w, |_, _| dyadic(&mut rng, 32));
        let beta = dyadic(&mut rng, 16);
        let gamma = dyadic(&mut rng, 16);
        let clamp = rng.random_bool(0.5).then(|| BinMask::from_fn(h, w, |_, _| rng.random_bool(0.25)));
        let got = min_cut_support(&r, beta, gamma, clamp.as_ref()).expect("cut");
        let mut best = f64::INFINITY;
        for bits in 0u32..(1 << (h * w)) {
            let labels = BinMask::from_fn(h, w, |y, x| bits >> (y * w + x) & 1 == 1);
            best = best.min(support_energy(&r, &labels, beta, gamma, clamp.as_ref()).unwrap());
        }
        if got.energy != best {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict {
        id: 6,
        title: "graph cut exactness",
        pass: mismatches == 0 && secs < 10.0,
        detail: format!("{mismatches}/200 instances off the exhaustive minimum, {secs:.2}s (need < 10s)"),
    }
}

fn prox_objective(x: &Mat, z: &Mat, alpha: f64) -> f64 {
    let fit = 0.5 * (x - z).frobenius().powi(2);
    fit + alpha * svd(x).unwrap().sigma.iter().sum::<f64>()
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn random_mask(rng: &mut ChaCha8Rng, rows: usize, cols: usize, p: f64) -> BinMask {
    let mut m = BinMask::from_fn(rows, cols, |_, _| rng.random_bool(p));
    for j in 0..cols {
        if m.column(j).iter().all(|&b| b) {
            m.set(rng.random_range(0..rows), j, false);
        }
    }
    m
}

fn shrinkage_and_completion() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5f7);
    let mut prox_losses = 0;
    for _ in 0..50 {
        let z = gaussian(&mut rng, 4, 4, 1.0);
        let alpha = rng.random_range(0.05..2.0);
        let x = svt(&z, alpha).unwrap();
        let best = prox_objective(&x, &z, alpha);
        for c in 0..200 {
            let scale = [1e-3, 1e-2, 0.1, 1.0][c % 4];
            let other = if c % 5 == 4 { gaussian(&mut rng, 4, 4, 1.0) } else { &x + &gaussian(&mut rng, 4, 4, scale) };
            if prox_objective(&other, &z, alpha) < best - 1e-12 * best.abs().max(1.0) {
                prox_losses += 1;
            }
        }
    }

    let mut rising = 0;
    for _ in 0..50 {
        let (m, n) = (rng.random_range(3..10), rng.random_range(3..10));
        let d = gaussian(&mut rng, m, n, 1.0);
        let s = random_mask(&mut rng, m, n, 0.3);
        let none = BinMask::zeros(m, n);
        let alpha = rng.random_range(0.01..3.0);
        let res = soft_impute(&CompletionProblem::new(&d, &s, &none, alpha).unwrap(), None, 1e-10, 500).unwrap();
        if res.objective_trace.windows(2).any(|w| w[1] > w[0] + 1e-12 * w[0].abs().max(1.0)) {
            rising += 1;
        }
    }

    let u: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
    let v: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
    let truth = Mat::from_fn(8, 6, |i, j| u[i] * v[j]);
    let hidden = random_mask(&mut rng, 8, 6, 0.2);
    let none = BinMask::zeros(8, 6);
    let base = CompletionProblem::new(&truth, &hidden, &none, 1e-6).unwrap();
    let mut alpha = svd(&truth).unwrap().sigma[0];
    let mut b: Option<Mat> = None;
    while b.is_none() || alpha > 1e-6 {
        alpha = (alpha * 0.5).max(1e-6);
        b = Some(soft_impute(&base.with_alpha(alpha), b.as_ref(), 1e-12, 5000).unwrap().b);
    }
    let b = b.unwrap();
    let hidden_err: Vec<f64> =
        (0..8).flat_map(|i| (0..6).map(move |j| (i, j))).filter(|&(i, j)| hidden.get(i, j)).map(|(i, j)| b.get(i, j) - truth.get(i, j)).collect();
    let rmse = (hidden_err.iter().map(|e| e * e).sum::<f64>() / hidden_err.len().max(1) as f64).sqrt();

    Verdict {
        id: 7,
        title: "shrinkage optimality and completion",
        pass: prox_losses == 0 && rising == 0 && !hidden_err.is_empty() && rmse <= 1e-3,
        detail: format!(
            "competitors beating the shrinkage {prox_losses}/10000, rising traces {rising}/50, rank-1 hidden rmse {rmse:.2e} over {} entries",
            hidden_err.len()
        ),
    }
}

fn smooth_image(h: usize, w: usize, phase: f64) -> Mat {
    Mat::from_fn(h, w, |y, x| (0.31 * x as f64 + phase).sin() + (0.23 * y as f64 - 0.5 * phase).cos() + 0.02 * (x * y) as f64)
}

/// Worst relative mismatch between analytic and central-difference Jacobians, over
/// pixels whose perturbed samples stay inside one interpolation cell.
fn jacobian_mismatch(rng: &mut ChaCha8Rng, model: MotionModel) -> f64 {
    let (h, w) = (24, 28);
    let img = smooth_image(h, w, rng.random_range(0.0..6.0));
    let scales: &[f64] = match model {
        MotionModel::Translation => &[0.7, 0.7],
        MotionModel::Affine => &[0.01, 0.01, 0.7, 0.01, 0.01, 0.7],
        MotionModel::Projective => &[0.01, 0.01, 0.7, 0.01, 0.01, 0.7, 1e-4, 1e-4],
    };
    let delta: Vec<f64> = scales.iter().map(|s| s * rng.random_range(-1.0..1.0)).collect();
    let warp = Warp::identity(model).offset_by(&delta).unwrap();
    let (wf, jac) = warp_with_jacobian(&img, &warp).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..model.param_count() {
        let eps = if k >= 6 { 1e-4 / w.max(h) as f64 } else { 1e-4 };
        let mut step = vec![0.0; scales.len()];
        step[k] = eps;
        let plus_warp = warp.offset_by(&step).unwrap();
        step[k] = -eps;
        let minus_warp = warp.offset_by(&step).unwrap();
        let (plus, minus) = (warp_frame(&img, &plus_warp).unwrap(), warp_frame(&img, &minus_warp).unwrap());
        let col_scale = (0..h * w).map(|r| jac.get(r, k).abs()).fold(0.0, f64::max).max(1e-12);
        for y in 0..h {
            for x in 0..w {
                let cell = |wp: &Warp| {
                    let (u, v) = wp.map(x as f64, y as f64).unwrap();
                    (u > 0.0 && v > 0.0 && u < (w - 1) as f64 && v < (h - 1) as f64).then(|| (u.floor(), v.floor()))
                };
                let same = matches!((cell(&plus_warp), cell(&minus_warp)), (Some(a), Some(b)) if a == b);
                if !(same && wf.validity.get(y, x) && plus.validity.get(y, x) && minus.validity.get(y, x)) {
                    continue;
                }
                let fd = (plus.pixels.get(y, x) - minus.pixels.get(y, x)) / (2.0 * eps);
                let a = jac.get(y * w + x, k);
                worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-3 * col_scale));
            }
        }
    }
    worst
}

fn motion_recovery() -> Verdict {
    let (mut within, mut total, mut max_shift, mut f_sum) = (0, 0, 0.0f64, 0.0);
    let seeds = 0..4u64;
    for seed in seeds.clone() {
        let config = VideoConfig { pan: (0.25, -0.2), jitter: 0.4, seed, ..Default::default() };
        let video = generate_video(&config).unwrap();
        let solver = DecolorConfig { motion: MotionMode::Affine, gamma_factor: 1.0, ..DecolorConfig::default() };
        let report = run(&video.frames, &solver).unwrap();
        let (cx, cy) = ((config.width - 1) as f64 / 2.0, (config.height - 1) as f64 / 2.0);
        for j in 0..video.frames.len() {
            let (tx, ty) = video.alignment.get(j).map(cx, cy).unwrap();
            let (ex, ey) = report.tau_hat.get(j).map(cx, cy).unwrap();
            max_shift = max_shift.max((tx - cx).abs()).max((ty - cy).abs());
            total += 1;
            if ((ex - tx).powi(2) + (ey - ty).powi(2)).sqrt() <= 0.5 {
                within += 1;
            }
        }
        f_sum += score_mask(&report.s_hat, &video.truth_in_reference).unwrap().f_measure;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x1ac0b1);
    let mut jac_worst: f64 = 0.0;
    for _ in 0..10 {
        for model in [MotionModel::Translation, MotionModel::Affine, MotionModel::Projective] {
            jac_worst = jac_worst.max(jacobian_mismatch(&mut rng, model));
        }
    }
    let fraction = within as f64 / total as f64;
    Verdict {
        id: 8,
        title: "motion recovery",
        pass: max_shift <= 3.0 && fraction >= 0.9 && jac_worst <= 1e-3,
        detail: format!(
            "{within}/{total} frames within 0.5 px (need >= 90%), largest true shift {max_shift:.2} px, mean F {:.4}, worst Jacobian relative error {jac_worst:.2e}",
            f_sum / seeds.count() as f64
        ),
    }
}

fn monotone_when_frozen(report: &RunReport) -> bool {
    (1..report.energy_trace.len()).all(|i| {
        let frozen = report.alpha_trace[i] == report.alpha_trace[i - 1]
            && report.beta_trace[i] == report.beta_trace[i - 1]
            && report.gamma_trace[i] == report.gamma_trace[i - 1];
        let (prev, cur) = (report.energy_trace[i - 1], report.energy_trace[i]);
        !frozen || cur <= prev + 1e-9 * prev.abs()
    })
}

fn convergence() -> Verdict {
    let solver = DecolorConfig::synthetic();
    let (mut converged, mut monotone, mut iterations) = (0, 0, Vec::new());
    for seed in 0..20u64 {
        let scene = generate(&SynthConfig { seed, ..Default::default() }).unwrap();
        let report = run(&scene.frames(), &solver).unwrap();
        if report.converged && report.failure.is_none() && report.outer_iterations <= 50 {
            converged += 1;
            iterations.push(report.outer_iterations);
        }
        if monotone_when_frozen(&report) {
            monotone += 1;
        }
    }
    iterations.sort_unstable();
    let median = iterations.get(iterations.len() / 2).copied().unwrap_or(0);
    Verdict {
        id: 9,
        title: "convergence on the default scene",
        pass: converged >= 19 && monotone == 20,
        detail: format!("{converged}/20 converged within 50 iterations (median {median}), energy monotone while frozen in {monotone}/20"),
    }
}

fn decolor_cli(args: &[&std::ffi::OsStr]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_decolor")).args(args).output().expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn aggregate_f(stdout: &str) -> Option<f64> {
    let line = stdout.lines().find(|l| l.starts_with("aggregate:"))?;
    line.split_whitespace().last()?.parse().ok()
}

fn same_outputs(a: &Path, b: &Path) -> Result<usize, String> {
    let mut compared = 0;
    for entry in std::fs::read_dir(a).map_err(|e| e.to_string())? {
        let name = entry.map_err(|e| e.to_string())?.file_name();
        if name == "config.resolved.cfg" {
            continue;
        }
        let (x, y) = (std::fs::read(a.join(&name)).map_err(|e| e.to_string())?, std::fs::read(b.join(&name)).map_err(|e| e.to_string())?);
        if x != y {
            return Err(format!("{} differs", name.to_string_lossy()));
        }
        compared += 1;
    }
    Ok(compared)
}

fn cli_round_trip() -> Verdict {
    let verdict = |pass, detail| Verdict { id: 10, title: "command-line round trip", pass, detail };
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let scene = SynthConfig { seed: 3, ..Default::default() };
    std::fs::write(root.join("scene.cfg"), "kind = scene\nseed = 3\n").unwrap();
    std::fs::write(root.join("segment.cfg"), "preset = synthetic\nmotion = none\n").unwrap();
    let (data, first, second) = (root.join("data"), root.join("first"), root.join("second"));

    let scene_cfg = root.join("scene.cfg");
    let (code, _) = decolor_cli(&["synth".as_ref(), data.as_os_str(), "--config".as_ref(), scene_cfg.as_os_str()]);
    if code != 0 {
        return verdict(false, format!("synth exited {code}"));
    }
    let (frames_dir, segment_cfg) = (data.join("frames"), root.join("segment.cfg"));
    let args = ["segment".as_ref(), frames_dir.as_os_str(), first.as_os_str(), "--config".as_ref(), segment_cfg.as_os_str()];
    let (code, _) = decolor_cli(&args);
    if code != 0 {
        return verdict(false, format!("segment exited {code}"));
    }
    let (code, stdout) = decolor_cli(&["score".as_ref(), first.as_os_str(), data.join("truth").as_os_str()]);
    let Some(cli_f) = aggregate_f(&stdout).filter(|_| code == 0) else {
        return verdict(false, format!("score exited {code} without an aggregate line"));
    };

    // in process, from the decoded frames and from the unquantized scene
    let decoded = read_dir(&frames_dir).unwrap().sequence().unwrap();
    let truth: Vec<Vec<bool>> =
        list_frames(&data.join("truth")).unwrap().iter().map(|p| read_mask(p).unwrap().as_slice().to_vec()).collect();
    let truth = BinMask::from_columns(&truth).unwrap();
    let solver = DecolorConfig::synthetic();
    let in_process_f = score_mask(&run(&decoded, &solver).unwrap().s_hat, &truth).unwrap().f_measure;

    let clean = generate(&scene).unwrap();
    let (lo, hi) = clean.d.as_slice().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let normalized = clean.d.map(|v| (v - lo) / (hi - lo));
    let quantization = (decoded.matrix() - &normalized).max_abs();
    let unquantized_f = score_mask(&run(&FrameSequence::from_columns(normalized), &solver).unwrap().s_hat, &clean.s0).unwrap().f_measure;

    let echo = first.join("config.resolved.cfg");
    let (code, _) = decolor_cli(&["segment".as_ref(), frames_dir.as_os_str(), second.as_os_str(), "--config".as_ref(), echo.as_os_str()]);
    let rerun = if code == 0 { same_outputs(&first, &second) } else { Err(format!("rerun exited {code}")) };

    let pass = (cli_f - in_process_f).abs() <= 1.0 / 255.0 && quantization <= 1.0 / 255.0 && truth == clean.s0 && rerun.is_ok();
    verdict(
        pass,
        format!(
            "F cli {cli_f:.6}, in process {in_process_f:.6}, unquantized {unquantized_f:.6}; pixel quantization {quantization:.2e} (need <= 1/255); rerun {}",
            match rerun {
                Ok(n) => format!("identical over {n} files"),
                Err(e) => e,
            }
        ),
    )
}

fn main() {
    let checks: [fn() -> Verdict; 10] = [
        sparse_outliers,
        contiguity,
        gamma_stability,
        rank_sensitivity,
        stopped_foreground,
        graph_cut_exactness,
        shrinkage_and_completion,
        motion_recovery,
        convergence,
        cli_round_trip,
    ];
    let mut failed = 0;
    for check in checks {
        let start = Instant::now();
        let v = check();
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {} ({}): {} [{:.1}s] {}",
            v.id,
            v.title,
            if v.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            v.detail
        );
    }
    println!("acceptance: {} of 10 criteria pass", 10 - failed);
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
