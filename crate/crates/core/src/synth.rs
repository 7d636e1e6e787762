//! Synthetic scenes: a random low-rank background occluded by a moving band, plus a
//! small 2-D video generator with camera motion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::{BinMask, Mat};
use crate::motion::{MotionModel, TransformStack, Warp};
use crate::sequence::{FrameSequence, FrameShape};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Amplitude {
    /// Foreground drawn from U(-c, c) with c the largest background magnitude.
    BackgroundPeak,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SynthConfig {
    pub m: usize,
    pub n: usize,
    pub r: usize,
    /// Object width in pixels; 0 gives a clean background.
    pub w: usize,
    /// Infinite means no noise.
    pub snr: f64,
    pub amplitude: Amplitude,
    /// Number of frames the object rests in place (with unchanged appearance).
    pub stop_frames: usize,
    /// First frame of the resting window; centered when absent.
    pub stop_start: Option<usize>,
    pub sigma_f: Option<f64>,
    pub mean_f: Option<f64>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            m: 100,
            n: 50,
            r: 3,
            w: 40,
            snr: 10.0,
            amplitude: Amplitude::BackgroundPeak,
            stop_frames: 0,
            stop_start: None,
            sigma_f: None,
            mean_f: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::Config("scene needs at least one pixel and one frame".into()));
        }
        if self.w > self.m {
            return Err(Error::Config(format!("object width {} exceeds frame height {}", self.w, self.m)));
        }
        if self.r > self.m.min(self.n) {
            return Err(Error::Config(format!("rank {} exceeds min(m, n)", self.r)));
        }
        if !(self.snr > 0.0) {
            return Err(Error::Config(format!("snr must be positive, got {}", self.snr)));
        }
        if self.stop_frames > self.n {
            return Err(Error::Config("resting window longer than the sequence".into()));
        }
        if let Some(start) = self.stop_start {
            if start + self.stop_frames > self.n {
                return Err(Error::Config("resting window runs past the last frame".into()));
            }
        }
        if self.sigma_f.is_some_and(|s| !(s >= 0.0)) {
            return Err(Error::Config("sigma_f must be nonnegative".into()));
        }
        Ok(())
    }

    fn stop_window(&self) -> std::ops::Range<usize> {
        let start = self.stop_start.unwrap_or((self.n - self.stop_frames) / 2);
        start..start + self.stop_frames
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub d: Mat,
    pub b0: Mat,
    pub s0: BinMask,
    pub noise: Mat,
    pub noise_sigma: f64,
    pub config: SynthConfig,
}

impl SyntheticScene {
    pub fn frames(&self) -> FrameSequence {
        FrameSequence::from_columns(self.d.clone())
    }
}

/// Top row of the object in every frame.
pub fn object_positions(config: &SynthConfig) -> Vec<usize> {
    let stop = config.stop_window();
    let mut pos = Vec::with_capacity(config.n);
    let mut p = 0usize;
    for j in 0..config.n {
        if j > 0 && !stop.contains(&j) {
            p += 1;
        }
        pos.push(p % config.m);
    }
    pos
}

pub fn generate(config: &SynthConfig) -> Result<SyntheticScene> {
    config.validate()?;
    let (m, n, r) = (config.m, config.n, config.r);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let u = Mat::from_fn(m, r, |_, _| rng.sample(StandardNormal));
    let v = Mat::from_fn(n, r, |_, _| rng.sample(StandardNormal));
    let b0 = u.matmul(&v.transpose())?;

    let c = match config.amplitude {
        Amplitude::BackgroundPeak => b0.max_abs(),
        Amplitude::Fixed(c) => c,
    };
    let (lo, hi) = match (config.mean_f, config.sigma_f) {
        (None, None) => (-c, c),
        (mean, sigma) => {
            let mu = mean.unwrap_or(0.0);
            let half = sigma.map_or(c, |s| 3f64.sqrt() * s);
            (mu - half, mu + half)
        }
    };

    let positions = object_positions(config);
    let stop = config.stop_window();
    let mut s0 = BinMask::zeros(m, n);
    let mut fg = Mat::zeros(m, n);
    let mut previous: Vec<f64> = Vec::new();
    for (j, &top) in positions.iter().enumerate() {
        let resting = j > 0 && stop.contains(&j);
        let values: Vec<f64> = if resting {
            previous.clone()
        } else {
            (0..config.w).map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo }).collect()
        };
        for (k, &val) in values.iter().enumerate() {
            let i = (top + k) % m;
            s0.set(i, j, true);
            fg.set(i, j, val);
        }
        previous = values;
    }

    let noise_sigma = if config.snr.is_infinite() { 0.0 } else { b0.variance().sqrt() / config.snr };
    let noise = Mat::from_fn(m, n, |_, _| {
        if noise_sigma == 0.0 {
            0.0
        } else {
            noise_sigma * rng.sample::<f64, _>(StandardNormal)
        }
    });
    let d = Mat::from_fn(m, n, |i, j| {
        let base = if s0.get(i, j) { fg.get(i, j) } else { b0.get(i, j) };
        base + noise.get(i, j)
    });
    Ok(SyntheticScene { d, b0, s0, noise, noise_sigma, config: config.clone() })
}

/// Empirical `sqrt(var(b0) / var(noise))`; infinite without noise.
pub fn snr_of(scene: &SyntheticScene) -> f64 {
    let vn = scene.noise.variance();
    if vn == 0.0 {
        return f64::INFINITY;
    }
    (scene.b0.variance() / vn).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VideoConfig {
    pub width: usize,
    pub height: usize,
    pub n: usize,
    pub rect_width: usize,
    pub rect_height: usize,
    /// Object motion over the background, pixels per frame.
    pub velocity: (f64, f64),
    /// Camera pan, pixels per frame.
    pub pan: (f64, f64),
    /// Extra random camera offset, uniform in +-jitter per axis.
    pub jitter: f64,
    pub snr: f64,
    pub seed: u64,
}

impl Default for VideoConfig {
    fn default() -> Self {
        VideoConfig {
            width: 48,
            height: 40,
            n: 16,
            rect_width: 8,
            rect_height: 8,
            velocity: (1.5, 0.75),
            pan: (0.0, 0.0),
            jitter: 0.0,
            snr: 10.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticVideo {
    pub frames: FrameSequence,
    /// Object pixels in each frame's own coordinates.
    pub truth: BinMask,
    /// Object pixels expressed in the coordinates of the middle frame.
    pub truth_in_reference: BinMask,
    /// Camera offset of every frame.
    pub offsets: Vec<(f64, f64)>,
    /// Exact warps aligning every frame to the middle frame.
    pub alignment: TransformStack,
    pub noise_sigma: f64,
}

struct Texture {
    waves: Vec<(f64, f64, f64, f64)>,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..10)
            .map(|_| {
                let angle = rng.random_range(0.0..std::f64::consts::PI);
                let freq = rng.random_range(0.12..0.5);
                (freq * angle.cos(), freq * angle.sin(), rng.random_range(0.0..6.3), rng.random_range(0.05..0.09))
            })
            .collect();
        Texture { waves }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        0.5 + self.waves.iter().map(|(fx, fy, ph, a)| a * (fx * x + fy * y + ph).sin()).sum::<f64>()
    }
}

/// Renders a textured static scene seen by a translating camera, with a rigid textured
/// rectangle moving across it.
pub fn generate_video(config: &VideoConfig) -> Result<SyntheticVideo> {
    if config.width < 2 || config.height < 2 || config.n == 0 {
        return Err(Error::Config("video needs at least 2x2 pixels and one frame".into()));
    }
    if config.rect_width == 0 || config.rect_height == 0 || !(config.snr > 0.0) {
        return Err(Error::Config("rectangle must be nonempty and snr positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let texture = Texture::random(&mut rng);
    let patch: Vec<f64> = (0..config.rect_width * config.rect_height)
        .map(|_| rng.random_range(0.1..0.9))
        .collect();
    let offsets: Vec<(f64, f64)> = (0..config.n)
        .map(|j| {
            let (jx, jy) = if config.jitter > 0.0 {
                (rng.random_range(-config.jitter..config.jitter), rng.random_range(-config.jitter..config.jitter))
            } else {
                (0.0, 0.0)
            };
            (config.pan.0 * j as f64 + jx, config.pan.1 * j as f64 + jy)
        })
        .collect();
    let start = (config.width as f64 * 0.1, config.height as f64 * 0.1);
    let rect_at = |j: usize| (start.0 + config.velocity.0 * j as f64, start.1 + config.velocity.1 * j as f64);

    let shape = FrameShape::new(config.width, config.height);
    let m = shape.pixels();
    let in_rect = |j: usize, sx: f64, sy: f64| -> Option<usize> {
        let (rx, ry) = rect_at(j);
        let (px, py) = ((sx - rx).floor(), (sy - ry).floor());
        (px >= 0.0 && py >= 0.0 && (px as usize) < config.rect_width && (py as usize) < config.rect_height)
            .then(|| py as usize * config.rect_width + px as usize)
    };

    let clean = Mat::from_fn(m, config.n, |p, j| {
        let (x, y) = ((p % config.width) as f64, (p / config.width) as f64);
        let (sx, sy) = (x + offsets[j].0, y + offsets[j].1);
        match in_rect(j, sx, sy) {
            Some(k) => patch[k],
            None => texture.at(sx, sy),
        }
    });
    let bg_std = {
        let bg: Vec<f64> = (0..m).map(|p| texture.at((p % config.width) as f64, (p / config.width) as f64)).collect();
        crate::matrix::variance(&bg).sqrt()
    };
    let noise_sigma = if config.snr.is_infinite() { 0.0 } else { bg_std / config.snr };
    let data = Mat::from_fn(m, config.n, |p, j| {
        let e = if noise_sigma > 0.0 { noise_sigma * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
        clean.get(p, j) + e
    });
    let truth = BinMask::from_fn(m, config.n, |p, j| {
        let (x, y) = ((p % config.width) as f64, (p / config.width) as f64);
        in_rect(j, x + offsets[j].0, y + offsets[j].1).is_some()
    });
    let mid = config.n / 2;
    let truth_in_reference = BinMask::from_fn(m, config.n, |p, j| {
        let (x, y) = ((p % config.width) as f64, (p / config.width) as f64);
        in_rect(j, x + offsets[mid].0, y + offsets[mid].1).is_some()
    });
    let alignment = TransformStack::new(
        offsets.iter().map(|o| Warp::translation(offsets[mid].0 - o.0, offsets[mid].1 - o.1)).collect(),
    )?;
    debug_assert_eq!(alignment.model(), Some(MotionModel::Translation));
    Ok(SyntheticVideo {
        frames: FrameSequence::new(data, shape)?,
        truth,
        truth_in_reference,
        offsets,
        alignment,
        noise_sigma,
    })
}
