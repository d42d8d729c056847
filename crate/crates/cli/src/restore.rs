//! Problem setup, restoration runs and hyperparameter sweeps.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use ddrm::denoiser::bridge::DEFAULT_TIMEOUT;
use ddrm::imaging::{self, ImageTensor};
use ddrm::sampler::{self, chain_rng};
use ddrm::{
    BridgeClient, DdrmParams, Degradation, Denoiser, EtaB, GaussianMmse, Geometry, GmmMmse, Problem, SigmaSchedule,
    SvdOperator,
};

use crate::config::{DenoiserKind, EtaBSetting, RunConfig};
use crate::error::{CliError, Result};

/// Standard deviation images are scaled by this factor before export.
pub const STD_SCALE: f64 = 4.0;

#[derive(Debug, Clone)]
enum DenoiserSpec {
    Gaussian(GaussianMmse<f64>),
    Gmm(GmmMmse<f64>),
    External(String),
}

/// Everything a run needs, built once and shared by all samples.
#[derive(Debug)]
pub struct Prepared {
    pub config: RunConfig,
    pub original: ImageTensor,
    pub op: SvdOperator<f64>,
    pub y: Vec<f64>,
    pub schedule: SigmaSchedule<f64>,
    pub timesteps: Vec<usize>,
    denoiser: DenoiserSpec,
}

pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    let input = config
        .input
        .as_ref()
        .ok_or_else(|| CliError::Config("--input is required".into()))?;
    prepare_with_image(config, ImageTensor::load(input)?)
}

fn read_text(what: &str, path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("{what} {}: {e}", path.display())))
}

/// Setup with an in-memory original. The measurement noise and any random
/// mask come from stream 1 of the run seed; chains use stream 0.
pub fn prepare_with_image(config: &RunConfig, original: ImageTensor) -> Result<Prepared> {
    config.validate()?;
    let shape = original.shape();
    let mut rng = chain_rng(config.seed);
    rng.set_stream(1);

    let kept = match config.deg {
        Degradation::Inpaint => {
            let path = config.mask.as_ref().expect("validated");
            let mask = ImageTensor::load(path)?;
            let pixels = imaging::mask_from_image(&mask, shape.height, shape.width)?;
            Some(imaging::pixels_to_signal(&pixels, shape))
        }
        Degradation::InpaintRandom50 => {
            let pixels = imaging::random_half_mask(shape.pixels(), &mut rng);
            Some(imaging::pixels_to_signal(&pixels, shape))
        }
        _ => None,
    };
    let op = config.deg.build(shape, kept.as_deref(), config.sv_threshold)?;
    let y = imaging::degrade(&original, &op, config.sigma_y, &mut rng)?;

    let schedule = match &config.schedule_file {
        Some(path) => SigmaSchedule::from_text(&read_text("schedule file", path)?)?,
        None => SigmaSchedule::default_linear(),
    };
    let timesteps = schedule.subsample(config.steps)?;

    let denoiser = match config.denoiser {
        DenoiserKind::Gaussian => DenoiserSpec::Gaussian(GaussianMmse::new(config.mu, config.tau)?),
        DenoiserKind::Gmm => {
            let path = config.gmm_file.as_ref().expect("validated");
            DenoiserSpec::Gmm(GmmMmse::from_text(&read_text("gmm file", path)?)?)
        }
        DenoiserKind::External => DenoiserSpec::External(config.bridge_cmd.clone().expect("validated")),
    };

    let prepared = Prepared {
        config: config.clone(),
        original,
        op,
        y,
        schedule,
        timesteps,
        denoiser,
    };
    // surface σ_T and η_b problems before any sampling
    let problem = prepared.problem()?;
    problem.check_top_level(prepared.schedule.sigma(*prepared.timesteps.last().expect("k >= 1")))
        .map_err(|e| match e {
            ddrm::DdrmError::InvalidParameter(msg) if config.sv_threshold == 0.0 => {
                CliError::Config(format!("{msg} (consider --sv-threshold)"))
            }
            other => other.into(),
        })?;
    Ok(prepared)
}

impl Prepared {
    pub fn problem(&self) -> Result<Problem<'_, f64>> {
        Ok(Problem::new(&self.op, self.y.clone(), self.config.sigma_y)?)
    }

    /// `H†y` in image form.
    pub fn degraded_view(&self) -> Result<ImageTensor> {
        Ok(ImageTensor::new(self.original.shape(), self.op.pseudo_inverse(&self.y)?)?)
    }

    fn make_denoiser(&self) -> Result<Box<dyn Denoiser<f64>>> {
        Ok(match &self.denoiser {
            DenoiserSpec::Gaussian(d) => Box::new(*d),
            DenoiserSpec::Gmm(d) => Box::new(d.clone()),
            DenoiserSpec::External(cmd) => {
                let s = self.original.shape();
                let geometry = Geometry {
                    n: s.len() as u64,
                    channels: s.channels as u32,
                    side: if s.height == s.width { s.height as u32 } else { 0 },
                };
                Box::new(BridgeClient::spawn(cmd, geometry, DEFAULT_TIMEOUT)?)
            }
        })
    }

    /// Sample `k`, chain seed `seed ⊕ k`.
    pub fn sample_with(&self, k: usize, eta: f64, eta_b: EtaBSetting) -> Result<ImageTensor> {
        let problem = self.problem()?;
        let params = DdrmParams {
            eta,
            eta_b: match eta_b {
                EtaBSetting::Fixed(b) => EtaB::Fixed(b),
                EtaBSetting::Theorem => EtaB::Theorem,
            },
            timesteps: self.timesteps.clone(),
            seed: self.config.seed ^ k as u64,
            class_label: self.config.class_label,
        };
        let mut denoiser = self.make_denoiser()?;
        let x = sampler::run(&problem, &mut *denoiser, &self.schedule, &params)?;
        Ok(ImageTensor::new(self.original.shape(), x)?)
    }

    pub fn sample(&self, k: usize) -> Result<ImageTensor> {
        self.sample_with(k, self.config.eta, self.config.eta_b)
    }
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

/// Thread cap from `DDRM_THREADS`, else the available parallelism.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var("DDRM_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Config(format!("DDRM_THREADS must be a positive integer, got '{v}'"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Files written so far; removed again unless the run completes.
struct Staging {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<PathBuf>,
    done: bool,
}

impl Staging {
    fn new(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            files: Vec::new(),
            done: false,
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        self.files.push(path.clone());
        fs::write(&path, bytes)?;
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if self.done {
            return;
        }
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RestoreReport {
    pub deg: String,
    pub shape: [usize; 3],
    pub samples: usize,
    pub files: Vec<String>,
    pub metrics: Vec<(String, f64)>,
}

fn quality(name: &str, img: &ImageTensor, reference: &ImageTensor, out: &mut Vec<(String, f64)>) -> Result<()> {
    let img = img.clamped();
    out.push((format!("psnr_{name}"), imaging::psnr(&img, reference)?));
    let s = img.shape();
    if s.height >= 11 && s.width >= 11 {
        out.push((format!("ssim_{name}"), imaging::ssim(&img, reference)?));
    }
    Ok(())
}

/// Full restoration run writing the standard output layout into
/// `config.outdir`.
pub fn restore(config: &RunConfig, threads: usize) -> Result<RestoreReport> {
    let outdir = config
        .outdir
        .clone()
        .ok_or_else(|| CliError::Config("--outdir is required".into()))?;
    let prepared = prepare(config)?;
    restore_prepared(&prepared, &outdir, threads)
}

pub fn restore_prepared(prepared: &Prepared, outdir: &Path, threads: usize) -> Result<RestoreReport> {
    let config = &prepared.config;
    let mut staging = Staging::new(outdir)?;
    staging.write("config.resolved.txt", config.to_text().as_bytes())?;

    let samples: Vec<ImageTensor> = pool(threads)?
        .install(|| {
            (0..config.samples)
                .into_par_iter()
                .map(|k| prepared.sample(k))
                .collect::<Vec<_>>()
        })
        .into_iter()
        .collect::<Result<_>>()?;

    let original = &prepared.original;
    let degraded = prepared.degraded_view()?;
    let mut metrics = Vec::new();
    staging.write("orig.png", &original.to_png()?)?;
    staging.write("degraded.png", &degraded.clamped().to_png()?)?;
    quality("degraded", &degraded, original, &mut metrics)?;
    for (k, s) in samples.iter().enumerate() {
        staging.write(&format!("sample_{k}.png"), &s.clamped().to_png()?)?;
        quality(&format!("sample_{k}"), s, original, &mut metrics)?;
    }
    if samples.len() > 1 {
        let (mean, std) = imaging::aggregate(&samples, STD_SCALE)?;
        staging.write("mean.png", &mean.clamped().to_png()?)?;
        staging.write("std.png", &std.clamped().to_png()?)?;
        quality("mean", &mean, original, &mut metrics)?;
    }

    let mut text = String::new();
    for (k, v) in &metrics {
        text.push_str(&format!("{k}={v}\n"));
    }
    staging.write("metrics.txt", text.as_bytes())?;

    let s = original.shape();
    let mut report = RestoreReport {
        deg: config.deg.to_string(),
        shape: [s.channels, s.height, s.width],
        samples: samples.len(),
        files: staging
            .files
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
        metrics,
    };
    report.files.push("summary.json".into());
    staging.write("summary.json", &serde_json::to_vec_pretty(&report)?)?;
    staging.done = true;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub eta: f64,
    pub eta_b: String,
    pub psnr: f64,
}

/// Mean PSNR over `config.samples` samples for every `(η, η_b)` pair.
pub fn sweep(prepared: &Prepared, etas: &[f64], eta_bs: &[EtaBSetting], threads: usize) -> Result<Vec<SweepRow>> {
    if etas.is_empty() || eta_bs.is_empty() {
        return Err(CliError::Config("sweep grids must be nonempty".into()));
    }
    for &eta in etas {
        let mut probe = prepared.config.clone();
        probe.eta = eta;
        probe.validate()?;
    }
    let samples = prepared.config.samples;
    let jobs: Vec<(f64, EtaBSetting, usize)> = etas
        .iter()
        .flat_map(|&e| eta_bs.iter().flat_map(move |&b| (0..samples).map(move |k| (e, b, k))))
        .collect();
    let scores: Vec<f64> = pool(threads)?
        .install(|| {
            jobs.par_iter()
                .map(|&(e, b, k)| {
                    let s = prepared.sample_with(k, e, b)?;
                    Ok(imaging::psnr(&s.clamped(), &prepared.original)?)
                })
                .collect::<Vec<Result<f64>>>()
        })
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(scores
        .chunks(samples)
        .zip(jobs.iter().step_by(samples))
        .map(|(chunk, &(eta, b, _))| SweepRow {
            eta,
            eta_b: b.to_string(),
            psnr: chunk.iter().sum::<f64>() / samples as f64,
        })
        .collect())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("eta,etab,psnr\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.eta, r.eta_b, r.psnr));
    }
    out
}
