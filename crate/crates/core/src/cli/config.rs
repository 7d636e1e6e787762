//! Flat `key = value` job files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::decolor::{DecolorConfig, MotionMode};
use crate::error::{Error, Result};
use crate::eval::{Method, PhaseSpec, SweepSpec, SweepVariable};
use crate::synth::{Amplitude, SynthConfig, VideoConfig};

/// Parsed key-value pairs. Every typed reader removes what it uses so that
/// leftovers can be reported as unknown keys.
#[derive(Clone, Debug, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", no + 1)));
            }
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{key}'", no + 1)));
            }
        }
        Ok(KeyValues { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    fn take_parsed<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|e| Error::Config(format!("{key}: bad value '{v}' ({e})"))),
        }
    }

    /// A value that may also be written as `none` or `auto`.
    fn take_optional<T: FromStr>(&mut self, key: &str) -> Result<Option<Option<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(v) if v == "none" || v == "auto" => Ok(Some(None)),
            Some(v) => v.parse::<T>().map(|x| Some(Some(x))).map_err(|e| Error::Config(format!("{key}: bad value '{v}' ({e})"))),
        }
    }

    fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<T>().map_err(|e| Error::Config(format!("{key}: bad entry '{s}' ({e})"))))
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Fails on any key that no reader consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.keys().next() {
            None => Ok(()),
            Some(k) => Err(Error::Config(format!("unknown key '{k}'"))),
        }
    }
}

fn optional<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_else(|| "none".into())
}

fn list<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Solver settings; `preset` (synthetic or default) picks the starting point.
pub fn read_solver(kv: &mut KeyValues, fallback: DecolorConfig) -> Result<DecolorConfig> {
    let mut c = match kv.take("preset").as_deref() {
        None => fallback,
        Some("default") => DecolorConfig::default(),
        Some("synthetic") => DecolorConfig::synthetic(),
        Some(other) => return Err(Error::Config(format!("preset: unknown value '{other}'"))),
    };
    if let Some(v) = kv.take_optional("k_cap")? {
        c.k_cap = v;
    }
    if let Some(v) = kv.take_parsed("gamma_mult")? {
        c.gamma_factor = v;
    }
    if let Some(v) = kv.take_parsed("eta1")? {
        c.eta1 = v;
    }
    if let Some(v) = kv.take_parsed("eta2")? {
        c.eta2 = v;
    }
    if let Some(v) = kv.take_parsed("beta_floor_mult")? {
        c.beta_floor_mult = v;
    }
    if let Some(v) = kv.take_parsed("tol")? {
        c.tol = v;
    }
    if let Some(v) = kv.take_parsed("max_iter")? {
        c.max_outer_iter = v;
    }
    if let Some(v) = kv.take_parsed::<MotionMode>("motion")? {
        c.motion = v;
    }
    if let Some(v) = kv.take_optional("alpha_floor")? {
        c.alpha_floor = v;
    }
    if let Some(v) = kv.take_optional("beta_floor")? {
        c.beta_floor = v;
    }
    if let Some(v) = kv.take_parsed("inner_max_iter")? {
        c.inner_max_iter = v;
    }
    if let Some(v) = kv.take_parsed("tau_iters")? {
        c.tau_iters = v;
    }
    c.validate()?;
    Ok(c)
}

pub fn write_solver(out: &mut String, c: &DecolorConfig) {
    let _ = writeln!(out, "k_cap = {}", c.k_cap.map(|k| k.to_string()).unwrap_or_else(|| "auto".into()));
    let _ = writeln!(out, "gamma_mult = {}", c.gamma_factor);
    let _ = writeln!(out, "eta1 = {}", c.eta1);
    let _ = writeln!(out, "eta2 = {}", c.eta2);
    let _ = writeln!(out, "beta_floor_mult = {}", c.beta_floor_mult);
    let _ = writeln!(out, "tol = {}", c.tol);
    let _ = writeln!(out, "max_iter = {}", c.max_outer_iter);
    let _ = writeln!(out, "motion = {}", c.motion);
    let _ = writeln!(out, "alpha_floor = {}", optional(&c.alpha_floor));
    let _ = writeln!(out, "beta_floor = {}", optional(&c.beta_floor));
    let _ = writeln!(out, "inner_max_iter = {}", c.inner_max_iter);
    let _ = writeln!(out, "tau_iters = {}", c.tau_iters);
}

fn read_scene(kv: &mut KeyValues, mut c: SynthConfig) -> Result<SynthConfig> {
    if let Some(v) = kv.take_parsed("m")? {
        c.m = v;
    }
    if let Some(v) = kv.take_parsed("n")? {
        c.n = v;
    }
    if let Some(v) = kv.take_parsed("r")? {
        c.r = v;
    }
    if let Some(v) = kv.take_parsed("w")? {
        c.w = v;
    }
    if let Some(v) = kv.take_parsed("snr")? {
        c.snr = v;
    }
    match kv.take("amplitude").as_deref() {
        None => {}
        Some("peak") => c.amplitude = Amplitude::BackgroundPeak,
        Some(v) => {
            c.amplitude = Amplitude::Fixed(v.parse().map_err(|_| Error::Config(format!("amplitude: bad value '{v}'")))?)
        }
    }
    if let Some(v) = kv.take_parsed("stop_frames")? {
        c.stop_frames = v;
    }
    if let Some(v) = kv.take_optional("stop_start")? {
        c.stop_start = v;
    }
    if let Some(v) = kv.take_optional("sigma_f")? {
        c.sigma_f = v;
    }
    if let Some(v) = kv.take_optional("mean_f")? {
        c.mean_f = v;
    }
    if let Some(v) = kv.take_parsed("seed")? {
        c.seed = v;
    }
    Ok(c)
}

fn write_scene(out: &mut String, c: &SynthConfig) {
    let _ = writeln!(out, "m = {}\nn = {}\nr = {}\nw = {}\nsnr = {}", c.m, c.n, c.r, c.w, c.snr);
    let amp = match c.amplitude {
        Amplitude::BackgroundPeak => "peak".to_string(),
        Amplitude::Fixed(a) => a.to_string(),
    };
    let _ = writeln!(out, "amplitude = {amp}\nstop_frames = {}", c.stop_frames);
    let _ = writeln!(out, "stop_start = {}\nsigma_f = {}\nmean_f = {}", optional(&c.stop_start), optional(&c.sigma_f), optional(&c.mean_f));
    let _ = writeln!(out, "seed = {}", c.seed);
}

#[derive(Clone, Debug)]
pub struct SegmentJob {
    pub input: PathBuf,
    pub output: PathBuf,
    pub solver: DecolorConfig,
}

impl SegmentJob {
    pub fn from_kv(mut kv: KeyValues) -> Result<Self> {
        let input = kv.take("input").map(PathBuf::from);
        let output = kv.take("output").map(PathBuf::from);
        let solver = read_solver(&mut kv, DecolorConfig::default())?;
        kv.finish()?;
        Ok(SegmentJob {
            input: input.ok_or_else(|| Error::Config("no input directory given".into()))?,
            output: output.ok_or_else(|| Error::Config("no output directory given".into()))?,
            solver,
        })
    }

    pub fn to_cfg(&self) -> String {
        let mut out = format!("input = {}\noutput = {}\n", self.input.display(), self.output.display());
        write_solver(&mut out, &self.solver);
        out
    }
}

#[derive(Clone, Debug)]
pub enum SynthJob {
    Scene(SynthConfig),
    Video(VideoConfig),
}

impl SynthJob {
    pub fn from_kv(mut kv: KeyValues) -> Result<Self> {
        let job = match kv.take("kind").as_deref() {
            None | Some("scene") => {
                let c = read_scene(&mut kv, SynthConfig::default())?;
                c.validate()?;
                SynthJob::Scene(c)
            }
            Some("video") => {
                let mut c = VideoConfig::default();
                if let Some(v) = kv.take_parsed("width")? {
                    c.width = v;
                }
                if let Some(v) = kv.take_parsed("height")? {
                    c.height = v;
                }
                if let Some(v) = kv.take_parsed("n")? {
                    c.n = v;
                }
                if let Some(v) = kv.take_parsed("rect_width")? {
                    c.rect_width = v;
                }
                if let Some(v) = kv.take_parsed("rect_height")? {
                    c.rect_height = v;
                }
                if let Some(v) = kv.take_parsed("velocity_x")? {
                    c.velocity.0 = v;
                }
                if let Some(v) = kv.take_parsed("velocity_y")? {
                    c.velocity.1 = v;
                }
                if let Some(v) = kv.take_parsed("pan_x")? {
                    c.pan.0 = v;
                }
                if let Some(v) = kv.take_parsed("pan_y")? {
                    c.pan.1 = v;
                }
                if let Some(v) = kv.take_parsed("jitter")? {
                    c.jitter = v;
                }
                if let Some(v) = kv.take_parsed("snr")? {
                    c.snr = v;
                }
                if let Some(v) = kv.take_parsed("seed")? {
                    c.seed = v;
                }
                SynthJob::Video(c)
            }
            Some(other) => return Err(Error::Config(format!("kind: unknown value '{other}'"))),
        };
        kv.finish()?;
        Ok(job)
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            SynthJob::Scene(c) => c.seed = seed,
            SynthJob::Video(c) => c.seed = seed,
        }
    }

    pub fn to_cfg(&self) -> String {
        let mut out = String::new();
        match self {
            SynthJob::Scene(c) => {
                out.push_str("kind = scene\n");
                write_scene(&mut out, c);
            }
            SynthJob::Video(c) => {
                let _ = writeln!(out, "kind = video\nwidth = {}\nheight = {}\nn = {}", c.width, c.height, c.n);
                let _ = writeln!(out, "rect_width = {}\nrect_height = {}", c.rect_width, c.rect_height);
                let _ = writeln!(out, "velocity_x = {}\nvelocity_y = {}", c.velocity.0, c.velocity.1);
                let _ = writeln!(out, "pan_x = {}\npan_y = {}\njitter = {}", c.pan.0, c.pan.1, c.jitter);
                let _ = writeln!(out, "snr = {}\nseed = {}", c.snr, c.seed);
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub enum BenchJob {
    Sweep(SweepSpec),
    Phase(PhaseSpec),
}

impl BenchJob {
    pub fn from_kv(mut kv: KeyValues) -> Result<Self> {
        let kind = kv.take("kind");
        let trials: Option<usize> = kv.take_parsed("trials")?;
        let seed: Option<u64> = kv.take_parsed("seed")?;
        let job = match kind.as_deref() {
            None | Some("sweep") => {
                let variable: SweepVariable = kv
                    .take_parsed("variable")?
                    .ok_or_else(|| Error::Config("no sweep variable given".into()))?;
                let grid: Vec<f64> = kv.take_list("grid")?.unwrap_or_default();
                let methods: Vec<Method> = kv.take_list("methods")?.unwrap_or_else(|| vec![Method::Decolor]);
                let mut spec = SweepSpec::new(variable, grid, methods);
                if let Some(l) = kv.take_list("spcp_lambdas")? {
                    spec.spcp_lambdas = l;
                }
                spec.scene = read_scene(&mut kv, spec.scene)?;
                spec.solver = read_solver(&mut kv, DecolorConfig::synthetic())?;
                spec.trials = trials.unwrap_or(spec.trials);
                spec.seed = seed.unwrap_or(spec.scene.seed);
                spec.validate()?;
                BenchJob::Sweep(spec)
            }
            Some("phase") => {
                let mut spec = PhaseSpec::default();
                if let Some(g) = kv.take_list("sigma_f_grid")? {
                    spec.sigma_f = g;
                }
                if let Some(g) = kv.take_list("width_grid")? {
                    spec.widths = g;
                }
                if let Some(v) = kv.take_parsed("success_f")? {
                    spec.success_f = v;
                }
                spec.scene = read_scene(&mut kv, spec.scene)?;
                spec.solver = read_solver(&mut kv, DecolorConfig::synthetic())?;
                spec.trials = trials.unwrap_or(spec.trials);
                spec.seed = seed.unwrap_or(spec.scene.seed);
                if spec.sigma_f.is_empty() || spec.widths.is_empty() || spec.trials == 0 {
                    return Err(Error::Config("phase diagram needs nonempty grids and at least one trial".into()));
                }
                BenchJob::Phase(spec)
            }
            Some(other) => return Err(Error::Config(format!("kind: unknown value '{other}'"))),
        };
        kv.finish()?;
        Ok(job)
    }

    pub fn solver_mut(&mut self) -> &mut DecolorConfig {
        match self {
            BenchJob::Sweep(s) => &mut s.solver,
            BenchJob::Phase(p) => &mut p.solver,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            BenchJob::Sweep(s) => s.seed = seed,
            BenchJob::Phase(p) => p.seed = seed,
        }
    }

    pub fn to_cfg(&self) -> String {
        let mut out = String::new();
        match self {
            BenchJob::Sweep(s) => {
                let _ = writeln!(out, "kind = sweep\nvariable = {}\ngrid = {}", s.variable, list(&s.grid));
                let _ = writeln!(out, "methods = {}\nspcp_lambdas = {}", list(&s.methods), list(&s.spcp_lambdas));
                let _ = writeln!(out, "trials = {}", s.trials);
                write_scene(&mut out, &SynthConfig { seed: s.seed, ..s.scene.clone() });
                write_solver(&mut out, &s.solver);
            }
            BenchJob::Phase(p) => {
                let _ = writeln!(out, "kind = phase\nsigma_f_grid = {}\nwidth_grid = {}", list(&p.sigma_f), list(&p.widths));
                let _ = writeln!(out, "success_f = {}\ntrials = {}", p.success_f, p.trials);
                write_scene(&mut out, &SynthConfig { seed: p.seed, ..p.scene.clone() });
                write_solver(&mut out, &p.solver);
            }
        }
        out
    }
}
