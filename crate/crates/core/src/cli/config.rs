//! Line-based configuration: `[section]` headers, `key = value` pairs and
//! `#` comments. Unknown sections and keys are errors.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::solvers::{InettConfig, InnerConfig, Schedule, SitConfig};
use crate::training::TrainConfig;
use crate::unet::UnetConfig;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Geometry {
    /// Image side length.
    pub n: usize,
    pub detectors: usize,
    pub views: usize,
}

impl Default for Geometry {
    fn default() -> Self {
        Self { n: 64, detectors: 64, views: 30 }
    }
}

impl Geometry {
    /// Parses `DETxVIEWS`.
    pub fn parse_dims(s: &str) -> Option<(usize, usize)> {
        let (d, v) = s.split_once(['x', 'X'])?;
        Some((d.trim().parse().ok()?, v.trim().parse().ok()?))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverSettings {
    pub tau: f64,
    pub n_max: usize,
    pub schedule: Schedule,
    pub inner: InnerConfig,
    pub art_rounds: usize,
    pub cg_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let i = InettConfig::default();
        Self {
            tau: i.tau,
            n_max: i.n_max,
            schedule: i.schedule,
            inner: i.inner,
            art_rounds: 5,
            cg_tol: SitConfig::default().cg_tol,
        }
    }
}

impl SolverSettings {
    pub fn inett(&self) -> InettConfig {
        InettConfig {
            schedule: self.schedule,
            tau: self.tau,
            n_max: self.n_max,
            inner: self.inner,
        }
    }

    pub fn sit(&self) -> SitConfig {
        SitConfig {
            schedule: self.schedule,
            tau: self.tau,
            n_max: self.n_max,
            cg_tol: self.cg_tol,
            cg_max_iters: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub geometry: Geometry,
    /// Height and width follow `geometry.n`.
    pub unet: UnetConfig,
    /// Apply the convexity constraints when training.
    pub convex: bool,
    pub training: TrainConfig,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    pub solver: SolverSettings,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            geometry: Geometry::default(),
            unet: UnetConfig::default(),
            convex: true,
            training: TrainConfig::default(),
            checkpoint_every: 0,
            solver: SolverSettings::default(),
        }
    }
}

fn value<T: FromStr>(v: &str, offset: usize, line: usize, key: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse {
        offset,
        msg: format!("line {line}: bad value `{v}` for `{key}`"),
    })
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut section = String::new();
        let mut offset = 0;
        for (ln, raw) in text.split_inclusive('\n').enumerate() {
            let line_no = ln + 1;
            let start = offset;
            offset += raw.len();
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| Error::Parse {
                    offset: start,
                    msg: format!("line {line_no}: unterminated section header"),
                })?;
                let name = name.trim();
                if !["geometry", "unet", "training", "solver"].contains(&name) {
                    return Err(Error::Parse {
                        offset: start,
                        msg: format!("line {line_no}: unknown section `{name}`"),
                    });
                }
                section = name.to_string();
                continue;
            }
            let (key, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                offset: start,
                msg: format!("line {line_no}: expected `key = value`"),
            })?;
            let (key, v) = (key.trim(), v.trim());
            cfg.set(&section, key, v, start, line_no)?;
        }
        cfg.unet.height = cfg.geometry.n;
        cfg.unet.width = cfg.geometry.n;
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, v: &str, off: usize, ln: usize) -> Result<()> {
        macro_rules! put {
            ($field:expr) => {
                $field = value(v, off, ln, key)?
            };
        }
        match (section, key) {
            ("geometry", "n") => put!(self.geometry.n),
            ("geometry", "detectors") => put!(self.geometry.detectors),
            ("geometry", "views") => put!(self.geometry.views),
            ("unet", "levels") => put!(self.unet.levels),
            ("unet", "base_channels") => put!(self.unet.base_channels),
            ("unet", "multiplier") => put!(self.unet.multiplier),
            ("unet", "bn_eps") => put!(self.unet.bn_eps),
            ("unet", "a") => put!(self.unet.a),
            ("unet", "p") => put!(self.unet.p),
            ("unet", "q") => put!(self.unet.q),
            ("unet", "convex") => put!(self.convex),
            ("training", "epochs") => put!(self.training.epochs),
            ("training", "batch_size") => put!(self.training.batch_size),
            ("training", "lr") => put!(self.training.lr),
            ("training", "lambda") => put!(self.training.lambda),
            ("training", "seed") => put!(self.training.seed),
            ("training", "checkpoint_every") => put!(self.checkpoint_every),
            ("solver", "tau") => put!(self.solver.tau),
            ("solver", "n_max") => put!(self.solver.n_max),
            ("solver", "alpha1") => put!(self.solver.schedule.alpha1),
            ("solver", "ratio") => put!(self.solver.schedule.ratio),
            ("solver", "inner_step") => put!(self.solver.inner.step),
            ("solver", "inner_max_iters") => put!(self.solver.inner.max_iters),
            ("solver", "inner_tol") => put!(self.solver.inner.tol),
            ("solver", "art_rounds") => put!(self.solver.art_rounds),
            ("solver", "cg_tol") => put!(self.solver.cg_tol),
            ("", _) => {
                return Err(Error::Parse {
                    offset: off,
                    msg: format!("line {ln}: key `{key}` outside of a section"),
                })
            }
            _ => {
                return Err(Error::Parse {
                    offset: off,
                    msg: format!("line {ln}: unknown key `{key}` in section `{section}`"),
                })
            }
        }
        Ok(())
    }

    /// Every setting, defaults included, in the format [`Config::parse`] reads.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let g = &self.geometry;
        let u = &self.unet;
        let t = &self.training;
        let v = &self.solver;
        let _ = write!(
            s,
            "[geometry]\nn = {}\ndetectors = {}\nviews = {}\n\n",
            g.n, g.detectors, g.views
        );
        let _ = write!(
            s,
            "[unet]\nlevels = {}\nbase_channels = {}\nmultiplier = {}\nbn_eps = {:?}\na = {:?}\np = {:?}\nq = {:?}\nconvex = {}\n\n",
            u.levels, u.base_channels, u.multiplier, u.bn_eps, u.a, u.p, u.q, self.convex
        );
        let _ = write!(
            s,
            "[training]\nepochs = {}\nbatch_size = {}\nlr = {:?}\nlambda = {:?}\nseed = {}\ncheckpoint_every = {}\n\n",
            t.epochs, t.batch_size, t.lr, t.lambda, t.seed, self.checkpoint_every
        );
        let _ = write!(
            s,
            "[solver]\ntau = {:?}\nn_max = {}\nalpha1 = {:?}\nratio = {:?}\ninner_step = {:?}\ninner_max_iters = {}\ninner_tol = {:?}\nart_rounds = {}\ncg_tol = {:?}\n",
            v.tau, v.n_max, v.schedule.alpha1, v.schedule.ratio, v.inner.step, v.inner.max_iters, v.inner.tol, v.art_rounds, v.cg_tol
        );
        s
    }

    pub fn set_image_size(&mut self, n: usize) {
        self.geometry.n = n;
        self.unet.height = n;
        self.unet.width = n;
    }
}
