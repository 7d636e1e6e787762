use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix::{check_shape, BinMask, Mat};
use crate::sequence::FrameSequence;

use super::warp::{warp_frame, warp_with_jacobian};
use super::{MotionModel, TransformStack, Warp};

const MAX_HALVINGS: usize = 5;
const PYRAMID_LEVELS: usize = 3;
const MIN_LEVEL_SIZE: usize = 8;
const PREALIGN_ITERS: usize = 15;

#[derive(Clone, Debug)]
pub struct TauUpdate {
    pub warp: Warp,
    /// Mean squared residual on the active set: the start value, then one per accepted step.
    pub residual_trace: Vec<f64>,
    pub accepted_steps: usize,
}

/// Gauss-Newton refinement of the warp aligning `d_j` onto `b_j`, ignoring pixels in
/// `s_j` and pixels that warp out of bounds.
pub fn update_tau(d_j: &Mat, b_j: &Mat, s_j: &BinMask, warp: &Warp, iters: usize) -> Result<Warp> {
    update_tau_traced(d_j, b_j, s_j, warp, iters).map(|u| u.warp)
}

pub fn update_tau_traced(d_j: &Mat, b_j: &Mat, s_j: &BinMask, warp: &Warp, iters: usize) -> Result<TauUpdate> {
    check_shape("background frame", d_j.shape(), b_j.shape())?;
    check_shape("support frame", d_j.shape(), s_j.shape())?;
    let p = warp.model().param_count();
    let mut current = warp.clone();
    let mut cost = masked_cost(d_j, b_j, s_j, &current)?
        .ok_or_else(|| Error::DegenerateMotion("no active pixels".into()))?;
    let mut trace = vec![cost];
    let mut accepted = 0;
    for _ in 0..iters {
        let (wf, jac) = warp_with_jacobian(d_j, &current)?;
        let mut h = DMatrix::<f64>::zeros(p, p);
        let mut g = DVector::<f64>::zeros(p);
        let mut active = 0usize;
        let w = d_j.cols();
        for y in 0..d_j.rows() {
            for x in 0..w {
                if !wf.validity.get(y, x) || s_j.get(y, x) {
                    continue;
                }
                active += 1;
                let row = y * w + x;
                let r = wf.pixels.get(y, x) - b_j.get(y, x);
                for a in 0..p {
                    let ja = jac.get(row, a);
                    if ja == 0.0 {
                        continue;
                    }
                    g[a] += ja * r;
                    for b in a..p {
                        h[(a, b)] += ja * jac.get(row, b);
                    }
                }
            }
        }
        if active < p {
            return Err(Error::DegenerateMotion(format!("{active} active pixels for {p} parameters")));
        }
        for a in 0..p {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        let delta = solve_normal_equations(h, g)?;
        let step_norm = delta.norm();
        if step_norm < 1e-12 {
            break;
        }
        let mut improved = None;
        let mut scale = 1.0;
        for _ in 0..=MAX_HALVINGS {
            let step: Vec<f64> = delta.iter().map(|d| -scale * d).collect();
            if let Ok(candidate) = current.offset_by(&step) {
                if let Some(c) = masked_cost(d_j, b_j, s_j, &candidate)? {
                    if c <= cost {
                        improved = Some((candidate, c));
                        break;
                    }
                }
            }
            scale *= 0.5;
        }
        let Some((next, c)) = improved else { break };
        current = next;
        cost = c;
        trace.push(c);
        accepted += 1;
        if step_norm * scale < 1e-9 {
            break;
        }
    }
    Ok(TauUpdate { warp: current, residual_trace: trace, accepted_steps: accepted })
}

fn solve_normal_equations(h: DMatrix<f64>, g: DVector<f64>) -> Result<DVector<f64>> {
    let largest = h.diagonal().iter().fold(0.0f64, |m, &v| m.max(v));
    if largest <= 0.0 {
        return Err(Error::DegenerateMotion("zero image gradient on the active set".into()));
    }
    let eig = h.clone().symmetric_eigenvalues();
    let smallest = eig.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    let top = eig.iter().fold(0.0f64, |m, &v| m.max(v));
    if smallest <= top * 1e-12 {
        return Err(Error::DegenerateMotion(format!("normal equations singular (eigenvalues {smallest:e} .. {top:e})")));
    }
    h.cholesky()
        .map(|c| c.solve(&g))
        .ok_or_else(|| Error::DegenerateMotion("normal equations not positive definite".into()))
}

/// Mean squared residual over valid, unmasked pixels; `None` when no pixel is active.
fn masked_cost(d_j: &Mat, b_j: &Mat, s_j: &BinMask, warp: &Warp) -> Result<Option<f64>> {
    let wf = warp_frame(d_j, warp)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for ((&v, &b), (&ok, &fg)) in wf
        .pixels
        .as_slice()
        .iter()
        .zip(b_j.as_slice())
        .zip(wf.validity.as_slice().iter().zip(s_j.as_slice()))
    {
        if ok && !fg {
            sum += (v - b) * (v - b);
            n += 1;
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionWarning {
    pub frame: usize,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct Prealignment {
    pub transforms: TransformStack,
    pub warnings: Vec<MotionWarning>,
}

fn downsample(img: &Mat) -> Mat {
    let (h, w) = (img.rows() / 2, img.cols() / 2);
    Mat::from_fn(h, w, |y, x| {
        0.25 * (img.get(2 * y, 2 * x) + img.get(2 * y, 2 * x + 1) + img.get(2 * y + 1, 2 * x) + img.get(2 * y + 1, 2 * x + 1))
    })
}

/// Finest level first.
fn pyramid(img: &Mat) -> Vec<Mat> {
    let mut levels = vec![img.clone()];
    while levels.len() < PYRAMID_LEVELS {
        let last = levels.last().expect("nonempty");
        if last.rows() / 2 < MIN_LEVEL_SIZE || last.cols() / 2 < MIN_LEVEL_SIZE {
            break;
        }
        levels.push(downsample(last));
    }
    levels
}

/// Aligns every frame to the middle frame, coarse to fine, seeding each frame with the
/// estimate of its neighbor closer to the middle.
pub fn prealign(frames: &FrameSequence, model: MotionModel) -> Result<Prealignment> {
    let n = frames.len();
    let mut stack = TransformStack::identity(model, n);
    let mut warnings = Vec::new();
    if n <= 1 {
        return Ok(Prealignment { transforms: stack, warnings });
    }
    let mid = n / 2;
    let reference = pyramid(&frames.frame(mid));
    let empty: Vec<BinMask> = reference.iter().map(|l| BinMask::zeros(l.rows(), l.cols())).collect();
    let order: Vec<(usize, usize)> =
        (mid + 1..n).map(|j| (j, j - 1)).chain((0..mid).rev().map(|j| (j, j + 1))).collect();
    for (j, seed_from) in order {
        let levels = pyramid(&frames.frame(j));
        let mut warp = stack.get(seed_from).clone();
        for _ in 1..levels.len() {
            warp = warp.to_coarser()?;
        }
        let mut finest_failed = None;
        for lvl in (0..levels.len()).rev() {
            match update_tau(&levels[lvl], &reference[lvl], &empty[lvl], &warp, PREALIGN_ITERS) {
                Ok(w) => warp = w,
                Err(e) if lvl == 0 => finest_failed = Some(e),
                Err(_) => {}
            }
            if lvl > 0 {
                warp = warp.to_finer()?;
            }
        }
        match finest_failed {
            None => stack.set(j, warp),
            Some(e) => {
                log::warn!("frame {j}: pre-alignment fell back to identity ({e})");
                warnings.push(MotionWarning { frame: j, message: e.to_string() });
            }
        }
    }
    Ok(Prealignment { transforms: stack, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::sample_bilinear;

    /// Smooth texture defined on the plane, sampled with an offset.
    fn texture(x: f64, y: f64) -> f64 {
        0.5 + 0.2 * (0.23 * x).sin() * (0.19 * y).cos() + 0.15 * (0.07 * x + 0.11 * y).sin() + 0.1 * (0.31 * y - 0.05 * x).cos()
    }

    fn shifted(h: usize, w: usize, dx: f64, dy: f64) -> Mat {
        Mat::from_fn(h, w, |y, x| texture(x as f64 + dx, y as f64 + dy))
    }

    #[test]
    fn aligned_input_gives_no_step() {
        let d = shifted(20, 24, 0.0, 0.0);
        let b = warp_frame(&d, &Warp::identity(MotionModel::Translation)).unwrap().pixels;
        let s = BinMask::zeros(20, 24);
        let w = update_tau(&d, &b, &s, &Warp::identity(MotionModel::Translation), 5).unwrap();
        assert!(w.params().iter().map(|p| p * p).sum::<f64>().sqrt() < 1e-6);
    }

    #[test]
    fn recovers_a_subpixel_shift() {
        // b(x) = d(x + shift), so the warp sampling d must equal the shift
        let d = shifted(40, 48, 0.0, 0.0);
        let b = shifted(40, 48, 1.5, -0.5);
        let s = BinMask::zeros(40, 48);
        let out = update_tau_traced(&d, &b, &s, &Warp::translation(0.0, 0.0), 10).unwrap();
        let (tx, ty) = out.warp.shift();
        assert!((tx - 1.5).abs() < 0.1 && (ty + 0.5).abs() < 0.1, "got ({tx}, {ty})");
        assert!(out.residual_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn masked_occluder_does_not_bias_the_shift() {
        let (h, w) = (40, 50);
        let d0 = shifted(h, w, 0.0, 0.0);
        let mut b = shifted(h, w, 1.5, -0.5);
        let mut s = BinMask::zeros(h, w);
        // 20 x 20 occluder = 20% of the frame, strongly textured
        for y in 10..30 {
            for x in 15..35 {
                s.set(y, x, true);
                b.set(y, x, if (x + y) % 2 == 0 { 1.5 } else { -0.5 });
            }
        }
        let d = d0.clone();
        let out = update_tau(&d, &b, &s, &Warp::translation(0.0, 0.0), 10).unwrap();
        let (tx, ty) = out.shift();
        assert!((tx - 1.5).abs() < 0.2 && (ty + 0.5).abs() < 0.2, "got ({tx}, {ty})");
    }

    #[test]
    fn flat_image_is_degenerate() {
        let d = Mat::from_fn(10, 10, |_, _| 0.3);
        let r = update_tau(&d, &d, &BinMask::zeros(10, 10), &Warp::identity(MotionModel::Affine), 3);
        assert!(matches!(r, Err(Error::DegenerateMotion(_))));
    }

    #[test]
    fn affine_residual_never_increases() {
        let d = shifted(36, 40, 0.0, 0.0);
        let truth = Warp::new(MotionModel::Affine, vec![1.01, 0.005, 1.2, -0.004, 0.995, -0.7]).unwrap();
        let b = Mat::from_fn(36, 40, |y, x| {
            let (u, v) = truth.map(x as f64, y as f64).unwrap();
            texture(u, v)
        });
        let out = update_tau_traced(&d, &b, &BinMask::zeros(36, 40), &Warp::identity(MotionModel::Affine), 15).unwrap();
        assert!(out.residual_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(*out.residual_trace.last().unwrap() < 1e-2 * out.residual_trace[0]);
    }

    fn sequence(n: usize, h: usize, w: usize, step: f64) -> (FrameSequence, Vec<f64>) {
        let frames: Vec<Mat> = (0..n).map(|j| shifted(h, w, step * j as f64, 0.0)).collect();
        let mid = n / 2;
        let truth = (0..n).map(|j| step * (mid as f64 - j as f64)).collect();
        (FrameSequence::from_frames(&frames).unwrap(), truth)
    }

    #[test]
    fn static_sequence_stays_at_identity() {
        let (seq, _) = sequence(5, 32, 32, 0.0);
        let out = prealign(&seq, MotionModel::Affine).unwrap();
        for w in out.transforms.warps() {
            let id = Warp::identity(MotionModel::Affine);
            let dev: f64 = w.params().iter().zip(id.params()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(dev < 1e-3);
        }
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn panning_sequence_is_recovered() {
        let (seq, truth) = sequence(9, 48, 64, 2.0);
        let out = prealign(&seq, MotionModel::Translation).unwrap();
        for (j, w) in out.transforms.warps().iter().enumerate() {
            let (tx, ty) = w.shift();
            assert!((tx - truth[j]).abs() < 0.3 && ty.abs() < 0.3, "frame {j}: ({tx}, {ty}) vs {}", truth[j]);
        }
    }

    #[test]
    fn single_frame_is_identity() {
        let (seq, _) = sequence(1, 16, 16, 0.0);
        let out = prealign(&seq, MotionModel::Projective).unwrap();
        assert_eq!(out.transforms.warps(), &[Warp::identity(MotionModel::Projective)]);
    }

    #[test]
    fn textureless_frames_fall_back_with_warnings() {
        let flat = Mat::from_fn(16, 16, |_, _| 0.5);
        let seq = FrameSequence::from_frames(&[flat.clone(), flat.clone(), flat]).unwrap();
        let out = prealign(&seq, MotionModel::Translation).unwrap();
        assert_eq!(out.warnings.len(), 2);
        assert!(out.transforms.warps().iter().all(|w| *w == Warp::translation(0.0, 0.0)));
    }

    #[test]
    fn bilinear_sampling_reads_exact_grid_values() {
        let img = shifted(5, 6, 0.0, 0.0);
        let (v, _, _) = sample_bilinear(&img, 5.0, 4.0);
        assert_eq!(v, img.get(4, 5));
    }
}
