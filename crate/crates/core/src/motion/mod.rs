//! Parametric frame warps, their Jacobians, Gauss-Newton refinement and pre-alignment.

mod align;
mod warp;

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

pub use align::{prealign, update_tau, update_tau_traced, MotionWarning, Prealignment, TauUpdate};
pub use warp::{sample_bilinear, warp_frame, warp_jacobian, warp_with_jacobian, WarpedFrame};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionModel {
    /// `[tx, ty]`
    Translation,
    /// `[a11, a12, tx, a21, a22, ty]`
    Affine,
    /// Homography rows with the last entry fixed to 1.
    Projective,
}

impl MotionModel {
    pub fn param_count(self) -> usize {
        match self {
            MotionModel::Translation => 2,
            MotionModel::Affine => 6,
            MotionModel::Projective => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MotionModel::Translation => "translation",
            MotionModel::Affine => "affine",
            MotionModel::Projective => "projective",
        }
    }
}

impl fmt::Display for MotionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MotionModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translation" => Ok(MotionModel::Translation),
            "affine" => Ok(MotionModel::Affine),
            "projective" => Ok(MotionModel::Projective),
            other => Err(Error::Config(format!("unknown motion model '{other}'"))),
        }
    }
}

pub type Homography = [[f64; 3]; 3];

/// Maps output pixel `(x, y)` to the source location it is sampled from.
#[derive(Clone, Debug, PartialEq)]
pub struct Warp {
    model: MotionModel,
    params: Vec<f64>,
}

impl Warp {
    pub fn identity(model: MotionModel) -> Self {
        let params = match model {
            MotionModel::Translation => vec![0.0; 2],
            MotionModel::Affine => vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            MotionModel::Projective => vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
        };
        Warp { model, params }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Warp { model: MotionModel::Translation, params: vec![tx, ty] }
    }

    pub fn new(model: MotionModel, params: Vec<f64>) -> Result<Self> {
        if params.len() != model.param_count() {
            return Err(Error::InvalidWarp(format!(
                "{model} warp takes {} parameters, got {}",
                model.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidWarp("non-finite parameter".into()));
        }
        let w = Warp { model, params };
        let det = match model {
            MotionModel::Translation => 1.0,
            MotionModel::Affine => w.params[0] * w.params[4] - w.params[1] * w.params[3],
            MotionModel::Projective => det3(&w.homography()),
        };
        if det.abs() <= 1e-8 {
            return Err(Error::InvalidWarp(format!("singular linear part (det {det:e})")));
        }
        Ok(w)
    }

    pub fn model(&self) -> MotionModel {
        self.model
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// The constant offset of the map, in pixels.
    pub fn shift(&self) -> (f64, f64) {
        match self.model {
            MotionModel::Translation => (self.params[0], self.params[1]),
            _ => (self.params[2], self.params[5]),
        }
    }

    pub fn homography(&self) -> Homography {
        let p = &self.params;
        match self.model {
            MotionModel::Translation => [[1.0, 0.0, p[0]], [0.0, 1.0, p[1]], [0.0, 0.0, 1.0]],
            MotionModel::Affine => [[p[0], p[1], p[2]], [p[3], p[4], p[5]], [0.0, 0.0, 1.0]],
            MotionModel::Projective => [[p[0], p[1], p[2]], [p[3], p[4], p[5]], [p[6], p[7], 1.0]],
        }
    }

    /// Projects a homography onto `model`, after normalizing its last entry to 1.
    pub fn from_homography(model: MotionModel, h: &Homography) -> Result<Self> {
        if h[2][2].abs() < 1e-300 {
            return Err(Error::InvalidWarp("homography with zero scale entry".into()));
        }
        let s = 1.0 / h[2][2];
        let n: Vec<f64> = h.iter().flatten().map(|v| v * s).collect();
        let params = match model {
            MotionModel::Translation => vec![n[2], n[5]],
            MotionModel::Affine => vec![n[0], n[1], n[2], n[3], n[4], n[5]],
            MotionModel::Projective => n[..8].to_vec(),
        };
        Warp::new(model, params)
    }

    /// Source coordinates for output pixel `(x, y)`; `None` behind the projective horizon.
    #[inline]
    pub fn map(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let p = &self.params;
        match self.model {
            MotionModel::Translation => Some((x + p[0], y + p[1])),
            MotionModel::Affine => Some((p[0] * x + p[1] * y + p[2], p[3] * x + p[4] * y + p[5])),
            MotionModel::Projective => {
                let w = p[6] * x + p[7] * y + 1.0;
                if w <= 1e-12 {
                    return None;
                }
                Some(((p[0] * x + p[1] * y + p[2]) / w, (p[3] * x + p[4] * y + p[5]) / w))
            }
        }
    }

    /// Derivatives of the mapped `x` and `y` with respect to each parameter.
    pub fn coordinate_derivatives(&self, x: f64, y: f64) -> (Vec<f64>, Vec<f64>) {
        let p = &self.params;
        match self.model {
            MotionModel::Translation => (vec![1.0, 0.0], vec![0.0, 1.0]),
            MotionModel::Affine => (vec![x, y, 1.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, x, y, 1.0]),
            MotionModel::Projective => {
                let w = p[6] * x + p[7] * y + 1.0;
                let u = (p[0] * x + p[1] * y + p[2]) / w;
                let v = (p[3] * x + p[4] * y + p[5]) / w;
                (
                    vec![x / w, y / w, 1.0 / w, 0.0, 0.0, 0.0, -x * u / w, -y * u / w],
                    vec![0.0, 0.0, 0.0, x / w, y / w, 1.0 / w, -x * v / w, -y * v / w],
                )
            }
        }
    }

    pub fn offset_by(&self, delta: &[f64]) -> Result<Self> {
        assert_eq!(delta.len(), self.params.len());
        Warp::new(self.model, self.params.iter().zip(delta).map(|(p, d)| p + d).collect())
    }

    pub fn inverse(&self) -> Result<Self> {
        let h = self.homography();
        let det = det3(&h);
        if det.abs() < 1e-300 {
            return Err(Error::InvalidWarp("cannot invert a singular warp".into()));
        }
        let mut inv = [[0.0; 3]; 3];
        for (i, row) in inv.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (a0, a1) = ((j + 1) % 3, (j + 2) % 3);
                let (b0, b1) = ((i + 1) % 3, (i + 2) % 3);
                *v = (h[a0][b0] * h[a1][b1] - h[a0][b1] * h[a1][b0]) / det;
            }
        }
        Warp::from_homography(self.model, &inv)
    }

    /// The same motion expressed on a grid with twice the resolution.
    pub fn to_finer(&self) -> Result<Self> {
        let s = [[2.0, 0.0, 0.5], [0.0, 2.0, 0.5], [0.0, 0.0, 1.0]];
        let s_inv = [[0.5, 0.0, -0.25], [0.0, 0.5, -0.25], [0.0, 0.0, 1.0]];
        Warp::from_homography(self.model, &mul3(&mul3(&s, &self.homography()), &s_inv))
    }

    /// The same motion expressed on a grid with half the resolution.
    pub fn to_coarser(&self) -> Result<Self> {
        let s = [[2.0, 0.0, 0.5], [0.0, 2.0, 0.5], [0.0, 0.0, 1.0]];
        let s_inv = [[0.5, 0.0, -0.25], [0.0, 0.5, -0.25], [0.0, 0.0, 1.0]];
        Warp::from_homography(self.model, &mul3(&mul3(&s_inv, &self.homography()), &s))
    }
}

fn det3(h: &Homography) -> f64 {
    h[0][0] * (h[1][1] * h[2][2] - h[1][2] * h[2][1]) - h[0][1] * (h[1][0] * h[2][2] - h[1][2] * h[2][0])
        + h[0][2] * (h[1][0] * h[2][1] - h[1][1] * h[2][0])
}

fn mul3(a: &Homography, b: &Homography) -> Homography {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// One warp per frame, all of the same model.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformStack {
    warps: Vec<Warp>,
}

impl TransformStack {
    pub fn new(warps: Vec<Warp>) -> Result<Self> {
        if let Some(first) = warps.first() {
            if warps.iter().any(|w| w.model() != first.model()) {
                return Err(Error::InvalidWarp("mixed motion models in one stack".into()));
            }
        }
        Ok(TransformStack { warps })
    }

    pub fn identity(model: MotionModel, n: usize) -> Self {
        TransformStack { warps: vec![Warp::identity(model); n] }
    }

    pub fn model(&self) -> Option<MotionModel> {
        self.warps.first().map(|w| w.model())
    }

    pub fn len(&self) -> usize {
        self.warps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.warps.is_empty()
    }

    pub fn warps(&self) -> &[Warp] {
        &self.warps
    }

    pub fn get(&self, j: usize) -> &Warp {
        &self.warps[j]
    }

    pub(crate) fn set(&mut self, j: usize, w: Warp) {
        assert_eq!(Some(w.model()), self.model());
        self.warps[j] = w;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_maps_points_to_themselves() {
        for model in [MotionModel::Translation, MotionModel::Affine, MotionModel::Projective] {
            let w = Warp::identity(model);
            assert_eq!(w.params().len(), model.param_count());
            assert_eq!(w.map(3.5, -2.0), Some((3.5, -2.0)));
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Warp::new(MotionModel::Affine, vec![1.0, 2.0, 0.0, 0.5, 1.0, 0.0]).is_err());
        assert!(Warp::new(MotionModel::Translation, vec![1.0]).is_err());
        assert!(Warp::new(MotionModel::Translation, vec![1.0, f64::NAN]).is_err());
        assert!("sheared".parse::<MotionModel>().is_err());
        assert_eq!("affine".parse::<MotionModel>().unwrap(), MotionModel::Affine);
    }

    #[test]
    fn inverse_round_trips() {
        let w = Warp::new(MotionModel::Projective, vec![1.02, 0.01, 3.0, -0.02, 0.98, -1.5, 1e-4, -2e-4]).unwrap();
        let inv = w.inverse().unwrap();
        let (u, v) = w.map(10.0, 7.0).unwrap();
        let (x, y) = inv.map(u, v).unwrap();
        assert!((x - 10.0).abs() < 1e-10 && (y - 7.0).abs() < 1e-10);
    }

    #[test]
    fn pyramid_conversion_scales_shifts() {
        let w = Warp::translation(3.0, -1.0);
        let c = w.to_coarser().unwrap();
        assert!((c.params()[0] - 1.5).abs() < 1e-12 && (c.params()[1] + 0.5).abs() < 1e-12);
        let back = c.to_finer().unwrap();
        assert!((back.params()[0] - 3.0).abs() < 1e-12);

        let a = Warp::new(MotionModel::Affine, vec![1.01, 0.02, 2.0, -0.01, 0.99, 1.0]).unwrap();
        let round = a.to_coarser().unwrap().to_finer().unwrap();
        for (p, q) in a.params().iter().zip(round.params()) {
            assert!((p - q).abs() < 1e-12);
        }
        // a fine pixel and its coarse counterpart map consistently
        let (xf, yf) = (9.0, 5.0);
        let (u, v) = a.map(xf, yf).unwrap();
        let ca = a.to_coarser().unwrap();
        let (uc, vc) = ca.map((xf - 0.5) / 2.0, (yf - 0.5) / 2.0).unwrap();
        assert!((2.0 * uc + 0.5 - u).abs() < 1e-12 && (2.0 * vc + 0.5 - v).abs() < 1e-12);
    }

    #[test]
    fn projective_derivatives_match_differences() {
        let w = Warp::new(MotionModel::Projective, vec![1.01, 0.02, 1.0, -0.01, 0.97, 2.0, 3e-4, -1e-4]).unwrap();
        let (x, y) = (12.0, 30.0);
        let (dx, dy) = w.coordinate_derivatives(x, y);
        for k in 0..8 {
            let mut d = vec![0.0; 8];
            d[k] = 1e-7;
            let (u1, v1) = w.offset_by(&d).unwrap().map(x, y).unwrap();
            d[k] = -1e-7;
            let (u0, v0) = w.offset_by(&d).unwrap().map(x, y).unwrap();
            assert!(((u1 - u0) / 2e-7 - dx[k]).abs() < 1e-5 * (1.0 + dx[k].abs()));
            assert!(((v1 - v0) / 2e-7 - dy[k]).abs() < 1e-5 * (1.0 + dy[k].abs()));
        }
    }

    #[test]
    fn stack_requires_one_model() {
        assert!(TransformStack::new(vec![Warp::identity(MotionModel::Affine), Warp::translation(0.0, 0.0)]).is_err());
        let s = TransformStack::identity(MotionModel::Affine, 3);
        assert_eq!(s.len(), 3);
        assert_eq!(s.model(), Some(MotionModel::Affine));
    }
}
