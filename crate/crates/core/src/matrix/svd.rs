use crate::error::{Error, Result};

use super::Mat;

/// Singular values at or below this count as zero when reporting rank.
pub const RANK_EPS: f64 = 1e-10;

const QR_MAX_ITER: usize = 10_000;
const JACOBI_MAX_SWEEPS: usize = 80;

/// Thin SVD `x = u * diag(sigma) * v^T` with `sigma` sorted descending.
#[derive(Clone, Debug)]
pub struct SvdFactors {
    pub u: Mat,
    pub sigma: Vec<f64>,
    pub v: Mat,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.sigma.iter().filter(|&&s| s > RANK_EPS).count()
    }

    pub fn reconstruct(&self) -> Mat {
        compose(&self.u, &self.sigma, &self.v)
    }
}

pub fn svd(x: &Mat) -> Result<SvdFactors> {
    let (m, n) = x.shape();
    let r = m.min(n);
    if r == 0 {
        return Ok(SvdFactors { u: Mat::zeros(m, 0), sigma: Vec::new(), v: Mat::zeros(n, 0) });
    }
    if let Some(f) = bidiagonal_qr(x) {
        return Ok(f);
    }
    log::debug!("falling back to Jacobi SVD for a {m}x{n} matrix");
    jacobi_svd(x)
}

/// Singular value thresholding: shrinks every singular value by `alpha`.
pub fn svt(z: &Mat, alpha: f64) -> Result<Mat> {
    svt_with_spectrum(z, alpha).map(|(x, _)| x)
}

/// Like [`svt`] but also returns the shrunk singular values.
pub fn svt_with_spectrum(z: &Mat, alpha: f64) -> Result<(Mat, Vec<f64>)> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::Config(format!("threshold must be a finite nonnegative value, got {alpha}")));
    }
    let f = svd(z)?;
    let shrunk: Vec<f64> = f.sigma.iter().map(|s| (s - alpha).max(0.0)).collect();
    Ok((compose(&f.u, &shrunk, &f.v), shrunk))
}

fn compose(u: &Mat, sigma: &[f64], v: &Mat) -> Mat {
    let (m, n) = (u.rows(), v.rows());
    let mut out = Mat::zeros(m, n);
    let data = out.as_mut_slice();
    for (k, &s) in sigma.iter().enumerate() {
        if s == 0.0 {
            continue;
        }
        let vk: Vec<f64> = (0..n).map(|j| v.get(j, k) * s).collect();
        for i in 0..m {
            let a = u.get(i, k);
            if a == 0.0 {
                continue;
            }
            for (d, &b) in data[i * n..(i + 1) * n].iter_mut().zip(&vk) {
                *d += a * b;
            }
        }
    }
    out
}

fn bidiagonal_qr(x: &Mat) -> Option<SvdFactors> {
    let dm = x.to_dmatrix();
    let f = dm.try_svd(true, true, f64::EPSILON, QR_MAX_ITER)?;
    let (u, vt) = (f.u?, f.v_t?);
    let sv = f.singular_values;
    if sv.iter().chain(u.iter()).chain(vt.iter()).any(|v| !v.is_finite()) {
        return None;
    }
    let r = sv.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let (m, n) = x.shape();
    let f = SvdFactors {
        u: Mat::from_fn(m, r, |i, k| u[(i, order[k])]),
        sigma: order.iter().map(|&k| sv[k].max(0.0)).collect(),
        v: Mat::from_fn(n, r, |j, k| vt[(order[k], j)]),
    };
    // The QR sweep occasionally returns a wrong factorization on rank-deficient input.
    satisfies_contract(x, &f).then_some(f)
}

fn satisfies_contract(x: &Mat, f: &SvdFactors) -> bool {
    let tol = 1e-10;
    let err = (&f.reconstruct() - x).frobenius();
    if err > tol * x.frobenius().max(f64::MIN_POSITIVE) && err > 0.0 {
        return false;
    }
    orthonormal_columns(&f.u, tol) && orthonormal_columns(&f.v, tol)
}

fn orthonormal_columns(q: &Mat, tol: f64) -> bool {
    let (rows, r) = q.shape();
    let cols: Vec<Vec<f64>> = (0..r).map(|k| q.column(k)).collect();
    for a in 0..r {
        for b in a..r {
            let dot: f64 = (0..rows).map(|i| cols[a][i] * cols[b][i]).sum();
            let want = if a == b { 1.0 } else { 0.0 };
            if (dot - want).abs() > tol {
                return false;
            }
        }
    }
    true
}

/// One-sided Hestenes Jacobi. Slower but robust on ill-conditioned input.
pub(crate) fn jacobi_svd(x: &Mat) -> Result<SvdFactors> {
    let (m, n) = x.shape();
    if m < n {
        let t = jacobi_svd(&x.transpose())?;
        return Ok(SvdFactors { u: t.v, sigma: t.sigma, v: t.u });
    }
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| x.column(j)).collect();
    let mut v: Vec<Vec<f64>> =
        (0..n).map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect()).collect();

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = a[p].iter().map(|t| t * t).sum();
                let beta: f64 = a[q].iter().map(|t| t * t).sum();
                let gamma: f64 = a[p].iter().zip(&a[q]).map(|(s, t)| s * t).sum();
                if gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdNoConvergence { iterations: JACOBI_MAX_SWEEPS });
    }

    let norms: Vec<f64> = a.iter().map(|c| c.iter().map(|t| t * t).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&p, &q| norms[q].total_cmp(&norms[p]));
    let scale = norms.iter().fold(0.0f64, |s, &v| s.max(v));

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    let mut v_cols = Vec::with_capacity(n);
    for &k in &order {
        let s = norms[k];
        if s > scale * 1e-14 && s > 0.0 {
            u_cols.push(a[k].iter().map(|t| t / s).collect());
            sigma.push(s);
        } else {
            u_cols.push(orthonormal_complement(&u_cols, m));
            sigma.push(0.0);
        }
        v_cols.push(v[k].clone());
    }
    Ok(SvdFactors {
        u: Mat::from_fn(m, n, |i, k| u_cols[k][i]),
        sigma,
        v: Mat::from_fn(n, n, |i, k| v_cols[k][i]),
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// A unit vector orthogonal to all of `basis`, by Gram-Schmidt on the canonical axes.
fn orthonormal_complement(basis: &[Vec<f64>], m: usize) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for e in 0..m {
        let mut w = vec![0.0; m];
        w[e] = 1.0;
        for _ in 0..2 {
            for b in basis {
                let d: f64 = b.iter().zip(&w).map(|(s, t)| s * t).sum();
                for (wi, bi) in w.iter_mut().zip(b) {
                    *wi -= d * bi;
                }
            }
        }
        let nrm = w.iter().map(|t| t * t).sum::<f64>().sqrt();
        if nrm > 0.5 {
            return w.into_iter().map(|t| t / nrm).collect();
        }
        if best.as_ref().is_none_or(|(b, _)| nrm > *b) {
            best = Some((nrm, w));
        }
    }
    let (nrm, w) = best.expect("nonempty dimension");
    w.into_iter().map(|t| t / nrm).collect()
}
