//! Exact binary labeling of the per-frame support by s-t minimum cut.

mod maxflow;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{check_shape, BinMask, Mat};
use crate::sequence::{mask_column_to_frame, FrameShape};
use maxflow::FlowGraph;

#[derive(Clone, Debug)]
pub struct LabelingResult {
    pub labels: BinMask,
    /// Energy of `labels`, evaluated directly.
    pub energy: f64,
    pub maxflow_value: f64,
}

/// Number of 4-neighbor pairs with differing labels.
pub fn label_disagreements(labels: &BinMask) -> usize {
    let (h, w) = labels.shape();
    let mut count = 0;
    for y in 0..h {
        for x in 0..w {
            let l = labels.get(y, x);
            if x + 1 < w && labels.get(y, x + 1) != l {
                count += 1;
            }
            if y + 1 < h && labels.get(y + 1, x) != l {
                count += 1;
            }
        }
    }
    count
}

/// `sum (beta - r/2) * label + gamma * disagreements`, infinite if a clamped pixel is labeled 1.
pub fn support_energy(
    residual_sq: &Mat,
    labels: &BinMask,
    beta: f64,
    gamma: f64,
    clamp: Option<&BinMask>,
) -> Result<f64> {
    check_shape("labels", residual_sq.shape(), labels.shape())?;
    if let Some(c) = clamp {
        check_shape("clamp mask", residual_sq.shape(), c.shape())?;
        if c.as_slice().iter().zip(labels.as_slice()).any(|(&c, &l)| c && l) {
            return Ok(f64::INFINITY);
        }
    }
    let unary: f64 = residual_sq
        .as_slice()
        .iter()
        .zip(labels.as_slice())
        .filter(|(_, &l)| l)
        .map(|(&r, _)| beta - 0.5 * r)
        .sum();
    let cut = label_disagreements(labels);
    Ok(if cut == 0 { unary } else { unary + gamma * cut as f64 })
}

/// Globally optimal labeling of one frame. Clamped pixels are fixed to 0, and among
/// minimizers the one with the fewest foreground pixels is returned.
pub fn min_cut_support(
    residual_sq: &Mat,
    beta: f64,
    gamma: f64,
    clamp: Option<&BinMask>,
) -> Result<LabelingResult> {
    if !(gamma >= 0.0) || !gamma.is_finite() || !beta.is_finite() {
        return Err(Error::Config(format!("need finite beta and gamma >= 0, got beta={beta} gamma={gamma}")));
    }
    let (h, w) = residual_sq.shape();
    if let Some(c) = clamp {
        check_shape("clamp mask", (h, w), c.shape())?;
    }
    let clamped = |y: usize, x: usize| clamp.is_some_and(|c| c.get(y, x));
    let n = h * w;
    let (s, t) = (n, n + 1);
    let mut g = FlowGraph::new(n + 2);
    for y in 0..h {
        for x in 0..w {
            if clamped(y, x) {
                continue;
            }
            let i = y * w + x;
            let mut cost = beta - 0.5 * residual_sq.get(y, x);
            if gamma > 0.0 {
                let fixed_neighbors = [(0, -1), (0, 1), (-1, 0), (1, 0)]
                    .iter()
                    .filter(|(dy, dx)| {
                        let (yy, xx) = (y as isize + dy, x as isize + dx);
                        yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w && clamped(yy as usize, xx as usize)
                    })
                    .count();
                cost += gamma * fixed_neighbors as f64;
            }
            if cost > 0.0 {
                g.add_edge(i, t, cost, 0.0);
            } else if cost < 0.0 {
                g.add_edge(s, i, -cost, 0.0);
            }
            if gamma > 0.0 {
                if x + 1 < w && !clamped(y, x + 1) {
                    g.add_edge(i, i + 1, gamma, gamma);
                }
                if y + 1 < h && !clamped(y + 1, x) {
                    g.add_edge(i, i + w, gamma, gamma);
                }
            }
        }
    }
    let maxflow_value = g.max_flow(s, t);
    let side = g.source_side(s);
    let labels = BinMask::from_bits(h, w, side[..n].to_vec())?;
    let energy = support_energy(residual_sq, &labels, beta, gamma, clamp)?;
    Ok(LabelingResult { labels, energy, maxflow_value })
}

/// Solves every frame (column of `residual_sq`) independently.
pub fn batch_support(
    residual_sq: &Mat,
    shape: FrameShape,
    beta: f64,
    gamma: f64,
    clamp: Option<&BinMask>,
) -> Result<BinMask> {
    if residual_sq.rows() != shape.pixels() {
        return Err(Error::Dimension(format!("{} rows for frames of {} pixels", residual_sq.rows(), shape.pixels())));
    }
    if let Some(c) = clamp {
        check_shape("clamp mask", residual_sq.shape(), c.shape())?;
    }
    let columns: Vec<Vec<bool>> = (0..residual_sq.cols())
        .into_par_iter()
        .map(|j| {
            let frame = Mat::from_vec(shape.height, shape.width, residual_sq.column(j))?;
            let fixed = clamp.map(|c| mask_column_to_frame(&c.column(j), shape));
            let res = min_cut_support(&frame, beta, gamma, fixed.as_ref())?;
            Ok(res.labels.as_slice().to_vec())
        })
        .collect::<Result<_>>()?;
    let mut out = BinMask::zeros(residual_sq.rows(), residual_sq.cols());
    for (j, c) in columns.iter().enumerate() {
        out.set_column(j, c);
    }
    Ok(out)
}
