//! Run configuration: a flat `key=value` file whose keys mirror the
//! command-line flags.

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use ddrm::Degradation;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaBSetting {
    Fixed(f64),
    Theorem,
}

impl fmt::Display for EtaBSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EtaBSetting::Fixed(v) => write!(f, "{v}"),
            EtaBSetting::Theorem => f.write_str("theorem"),
        }
    }
}

impl FromStr for EtaBSetting {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "theorem" {
            return Ok(EtaBSetting::Theorem);
        }
        s.parse()
            .map(EtaBSetting::Fixed)
            .map_err(|_| CliError::Config(format!("etab: expected a number or 'theorem', got '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenoiserKind {
    Gaussian,
    Gmm,
    External,
}

impl fmt::Display for DenoiserKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DenoiserKind::Gaussian => "gaussian",
            DenoiserKind::Gmm => "gmm",
            DenoiserKind::External => "external",
        })
    }
}

impl FromStr for DenoiserKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(DenoiserKind::Gaussian),
            "gmm" => Ok(DenoiserKind::Gmm),
            "external" => Ok(DenoiserKind::External),
            _ => Err(CliError::Config(format!(
                "denoiser: expected gaussian, gmm or external, got '{s}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub deg: Degradation,
    pub sigma_y: f64,
    pub eta: f64,
    pub eta_b: EtaBSetting,
    pub steps: usize,
    /// One σ per line; the built-in linear-β schedule when absent.
    pub schedule_file: Option<PathBuf>,
    pub seed: u64,
    pub samples: usize,
    pub denoiser: DenoiserKind,
    pub tau: f64,
    pub mu: f64,
    pub gmm_file: Option<PathBuf>,
    pub bridge_cmd: Option<String>,
    pub class_label: Option<i64>,
    pub sv_threshold: f64,
    pub mask: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub outdir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            deg: Degradation::Denoise,
            sigma_y: 0.0,
            eta: 0.85,
            eta_b: EtaBSetting::Fixed(1.0),
            steps: 20,
            schedule_file: None,
            seed: 0,
            samples: 1,
            denoiser: DenoiserKind::Gaussian,
            tau: 0.25,
            mu: 0.5,
            gmm_file: None,
            bridge_cmd: None,
            class_label: None,
            sv_threshold: 0.0,
            mask: None,
            input: None,
            outdir: None,
        }
    }
}

pub const KEYS: [&str; 18] = [
    "deg",
    "sigma-y",
    "eta",
    "etab",
    "steps",
    "schedule-file",
    "seed",
    "samples",
    "denoiser",
    "tau",
    "mu",
    "gmm-file",
    "bridge-cmd",
    "class-label",
    "sv-threshold",
    "mask",
    "input",
    "outdir",
];

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("{key}: cannot parse '{value}'")))
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    /// Sets one key from its text form; an empty value clears optional keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "deg" => self.deg = value.parse()?,
            "sigma-y" => self.sigma_y = num(key, value)?,
            "eta" => self.eta = num(key, value)?,
            "etab" => self.eta_b = value.parse()?,
            "steps" => self.steps = num(key, value)?,
            "schedule-file" => self.schedule_file = opt_path(value),
            "seed" => self.seed = num(key, value)?,
            "samples" => self.samples = num(key, value)?,
            "denoiser" => self.denoiser = value.parse()?,
            "tau" => self.tau = num(key, value)?,
            "mu" => self.mu = num(key, value)?,
            "gmm-file" => self.gmm_file = opt_path(value),
            "bridge-cmd" => self.bridge_cmd = (!value.is_empty()).then(|| value.to_string()),
            "class-label" => {
                self.class_label = if value.is_empty() { None } else { Some(num(key, value)?) }
            }
            "sv-threshold" => self.sv_threshold = num(key, value)?,
            "mask" => self.mask = opt_path(value),
            "input" => self.input = opt_path(value),
            "outdir" => self.outdir = opt_path(value),
            other => return Err(CliError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        match key {
            "deg" => self.deg.to_string(),
            "sigma-y" => self.sigma_y.to_string(),
            "eta" => self.eta.to_string(),
            "etab" => self.eta_b.to_string(),
            "steps" => self.steps.to_string(),
            "schedule-file" => path(&self.schedule_file),
            "seed" => self.seed.to_string(),
            "samples" => self.samples.to_string(),
            "denoiser" => self.denoiser.to_string(),
            "tau" => self.tau.to_string(),
            "mu" => self.mu.to_string(),
            "gmm-file" => path(&self.gmm_file),
            "bridge-cmd" => self.bridge_cmd.clone().unwrap_or_default(),
            "class-label" => self.class_label.map(|l| l.to_string()).unwrap_or_default(),
            "sv-threshold" => self.sv_threshold.to_string(),
            "mask" => path(&self.mask),
            "input" => path(&self.input),
            "outdir" => path(&self.outdir),
            _ => unreachable!("keys come from KEYS"),
        }
    }

    /// Defaults overridden by a config file. `#` starts a comment line.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key=value", lineno + 1)))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// Every key, defaults included.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key}={}", self.get(key));
        }
        out
    }

    /// Range checks that need no file access.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CliError::Config(msg));
        if !(self.sigma_y >= 0.0 && self.sigma_y.is_finite()) {
            return fail(format!("sigma-y must be finite and >= 0, got {}", self.sigma_y));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return fail(format!("eta must lie in (0, 1], got {}", self.eta));
        }
        if let EtaBSetting::Fixed(b) = self.eta_b {
            if !(b >= 0.0 && b.is_finite()) {
                return fail(format!("etab must be finite and >= 0, got {b}"));
            }
        }
        if self.steps == 0 {
            return fail("steps must be >= 1".into());
        }
        if self.samples == 0 {
            return fail("samples must be >= 1".into());
        }
        if !(self.sv_threshold >= 0.0 && self.sv_threshold < 1.0) {
            return fail(format!("sv-threshold must lie in [0, 1), got {}", self.sv_threshold));
        }
        match self.denoiser {
            DenoiserKind::Gaussian if !(self.tau > 0.0 && self.tau.is_finite() && self.mu.is_finite()) => {
                return fail(format!("gaussian denoiser needs tau > 0 and finite mu, got tau {}", self.tau));
            }
            DenoiserKind::Gmm if self.gmm_file.is_none() => {
                return fail("gmm denoiser needs --gmm-file".into());
            }
            DenoiserKind::External if self.bridge_cmd.is_none() => {
                return fail("external denoiser needs --bridge-cmd".into());
            }
            _ => {}
        }
        if self.class_label.is_some_and(|l| l < 0) {
            return fail("class-label must be >= 0".into());
        }
        if self.deg.needs_mask() && self.mask.is_none() {
            return fail(format!("preset {} needs --mask", self.deg));
        }
        if self.bridge_cmd.as_deref().is_some_and(|c| c.contains('\n')) {
            return fail("bridge-cmd must be a single line".into());
        }
        Ok(())
    }
}
