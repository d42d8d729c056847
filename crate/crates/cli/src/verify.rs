//! Desk-scale verification suite. Every check compares the sampler or an
//! operator against an independent reference.

use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use ddrm::linops::kernels;
use ddrm::oracle::{self, McStats};
use ddrm::presets::{ANISO_SIGMA_H, ANISO_SIGMA_V, BLUR_TAPS};
use ddrm::sampler::{self, chain_rng, ChainRng};
use ddrm::schedule::{self, SigmaSchedule};
use ddrm::{
    imaging, DdrmParams, Degradation, EtaB, GaussianMmse, GmmComponent, GmmMmse, ImageShape, ImageTensor, Problem,
    SvdOperator,
};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::restore;

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    /// Skip the Monte Carlo checks.
    pub quick: bool,
    /// Fault injection: scale every singular value in the SVD check.
    pub corrupt_singulars: Option<f64>,
    pub threads: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub id: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed_secs: f64,
}

struct Check {
    id: &'static str,
    name: &'static str,
    monte_carlo: bool,
    budget: Option<Duration>,
    run: fn(&VerifyOptions) -> Result<Outcome>,
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

const fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

const CHECKS: [Check; 10] = [
    Check {
        id: "A1",
        name: "structured SVD matches dense SVD",
        monte_carlo: false,
        budget: secs(10),
        run: svd_equivalence,
    },
    Check {
        id: "A2",
        name: "variational marginals",
        monte_carlo: true,
        budget: secs(60),
        run: marginals,
    },
    Check {
        id: "A3",
        name: "eta_b identity",
        monte_carlo: false,
        budget: secs(1),
        run: eta_b_identity,
    },
    Check {
        id: "A4",
        name: "noiseless data consistency",
        monte_carlo: false,
        budget: secs(10),
        run: data_consistency,
    },
    Check {
        id: "A5",
        name: "ILVR equivalence",
        monte_carlo: false,
        budget: secs(5),
        run: ilvr_equivalence,
    },
    Check {
        id: "A6",
        name: "linear-Gaussian posterior mean",
        monte_carlo: true,
        budget: secs(300),
        run: gaussian_end_to_end,
    },
    Check {
        id: "A7",
        name: "VE/VP round trip",
        monte_carlo: false,
        budget: None,
        run: ve_vp_roundtrip,
    },
    Check {
        id: "A8",
        name: "determinism across thread counts",
        monte_carlo: false,
        budget: None,
        run: determinism,
    },
    Check {
        id: "A9",
        name: "pseudo-inverse projector",
        monte_carlo: false,
        budget: None,
        run: projector,
    },
    Check {
        id: "A10",
        name: "toy deblurring beats H†y",
        monte_carlo: false,
        budget: secs(120),
        run: smoke_quality,
    },
];

/// Runs the suite, `A1` first.
pub fn run(opts: &VerifyOptions) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .filter(|c| !(opts.quick && c.monte_carlo))
        .map(|c| run_one(c, opts))
        .collect()
}

fn run_one(check: &Check, opts: &VerifyOptions) -> CheckResult {
    let start = Instant::now();
    let result = (check.run)(opts);
    let elapsed = start.elapsed();
    let (mut passed, mut detail) = match result {
        Ok(o) => (o.passed, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    if let Some(budget) = check.budget {
        if elapsed > budget {
            passed = false;
            detail = format!("{detail}; over budget {:.0}s", budget.as_secs_f64());
        }
    }
    CheckResult {
        id: check.id,
        name: check.name,
        passed,
        detail,
        elapsed_secs: elapsed.as_secs_f64(),
    }
}

pub fn report_line(r: &CheckResult) -> String {
    format!(
        "{} {} {}: {} ({:.2}s)",
        r.id,
        if r.passed { "PASS" } else { "FAIL" },
        r.name,
        r.detail,
        r.elapsed_secs
    )
}

pub fn summary_json(results: &[CheckResult]) -> Result<String> {
    #[derive(Serialize)]
    struct Summary<'a> {
        passed: bool,
        checks: &'a [CheckResult],
    }
    Ok(serde_json::to_string_pretty(&Summary {
        passed: results.iter().all(|r| r.passed),
        checks: results,
    })?)
}

fn normals(rng: &mut ChainRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn uniform(rng: &mut ChainRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>()).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// The two-component prior used by the toy checks.
pub fn toy_gmm() -> GmmMmse<f64> {
    GmmMmse::new(vec![
        GmmComponent {
            weight: 0.4,
            mean: 0.25,
            std: 0.1,
        },
        GmmComponent {
            weight: 0.6,
            mean: 0.7,
            std: 0.15,
        },
    ])
    .expect("valid mixture")
}

fn stripe_mask(shape: ImageShape) -> Vec<usize> {
    let pixels: Vec<usize> = (0..shape.pixels()).filter(|p| (p / shape.width) % 4 != 1).collect();
    imaging::pixels_to_signal(&pixels, shape)
}

fn preset_ops(shape: ImageShape, sv_threshold: f64, rng: &mut ChainRng) -> Result<Vec<(String, SvdOperator<f64>)>> {
    let mut ops = Vec::new();
    for deg in Degradation::ALL {
        if let Degradation::BlockSr(r) = deg {
            if !shape.height.is_multiple_of(r) || !shape.width.is_multiple_of(r) {
                continue;
            }
        }
        let kept = match deg {
            Degradation::Inpaint => Some(stripe_mask(shape)),
            Degradation::InpaintRandom50 => Some(imaging::pixels_to_signal(
                &imaging::random_half_mask(shape.pixels(), rng),
                shape,
            )),
            _ => None,
        };
        let small = shape.height.min(shape.width) < BLUR_TAPS;
        let op = match deg {
            // the presets' 9 taps do not fit; same operators with 5 taps
            Degradation::DeblurUniform if small => {
                let k = kernels::uniform(5);
                SvdOperator::sep_blur(shape, &k, &k, sv_threshold)?
            }
            Degradation::DeblurAniso if small => SvdOperator::sep_blur(
                shape,
                &kernels::gaussian(ANISO_SIGMA_H, 2),
                &kernels::gaussian(ANISO_SIGMA_V, 2),
                sv_threshold,
            )?,
            _ => deg.build(shape, kept.as_deref(), sv_threshold)?,
        };
        ops.push((deg.to_string(), op));
    }
    Ok(ops)
}

fn svd_equivalence(opts: &VerifyOptions) -> Result<Outcome> {
    let shape = ImageShape::new(3, 8, 8);
    let mut rng = chain_rng(101);
    let mut ops = preset_ops(shape, 0.0, &mut rng)?;
    ops.push((
        "bicubic_sr2".into(),
        SvdOperator::bicubic_sr(ImageShape::new(3, 8, 8), 2, 0.0)?,
    ));
    ops.push((
        "dense".into(),
        SvdOperator::dense(ddrm::Mat::from_fn(12, 20, |_, _| rng.random_range(-1.0..1.0)))?,
    ));
    let (mut worst_apply, mut worst_sv, mut worst_orth) = (0.0f64, 0.0f64, 0.0f64);
    let mut failing = Vec::new();
    for (name, mut op) in ops {
        if let Some(f) = opts.corrupt_singulars {
            op.corrupt_singulars(f);
        }
        let h = oracle::probe_dense(&op)?;
        let mut reference = oracle::dense_svd(&h)?.s;
        reference.resize(op.input_len(), 0.0);
        let mut ours = op.singulars().to_vec();
        ours.sort_by(|a, b| b.total_cmp(a));
        let sv_err = max_diff(&ours, &reference);

        let mut apply_err = 0.0f64;
        let mut orth_err = 0.0f64;
        for _ in 0..4 {
            let x = normals(&mut rng, op.input_len());
            apply_err = apply_err.max(max_diff(&op.apply_via_svd(&x)?, &h.matvec(&x)));
            orth_err = orth_err.max(max_diff(&op.apply_v(&op.apply_vt(&x)?)?, &x));
            orth_err = orth_err.max(max_diff(&op.apply_vt(&op.apply_v(&x)?)?, &x));
            let y = normals(&mut rng, op.output_len());
            orth_err = orth_err.max(max_diff(&op.apply_u(&op.apply_ut(&y)?)?, &y));
            orth_err = orth_err.max(max_diff(&op.apply_ut(&op.apply_u(&y)?)?, &y));
        }
        if sv_err > 1e-8 || apply_err > 1e-8 || orth_err > 1e-10 {
            failing.push(name);
        }
        worst_apply = worst_apply.max(apply_err);
        worst_sv = worst_sv.max(sv_err);
        worst_orth = worst_orth.max(orth_err);
    }
    let detail = format!("singulars {worst_sv:.1e}, apply {worst_apply:.1e}, orthogonality {worst_orth:.1e}");
    if failing.is_empty() {
        outcome(true, detail)
    } else {
        outcome(false, format!("{detail}; failing: {}", failing.join(", ")))
    }
}

fn geometric_levels(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let ratio = (hi / lo).powf(1.0 / (count - 1) as f64);
    std::iter::once(0.0)
        .chain((0..count).map(|i| lo * ratio.powi(i as i32)))
        .collect()
}

const MARGINAL_CHAINS: usize = 20_000;

fn marginals(opts: &VerifyOptions) -> Result<Outcome> {
    let shape = ImageShape::square(1, 4);
    let op = SvdOperator::block_sr(shape, 2)?;
    let sigma_y = 0.1;
    let levels = geometric_levels(0.02, 5.0, 10);
    let steps = levels.len() - 1;
    let params = DdrmParams::new((1..=steps).collect(), 0);
    let mut data_rng = chain_rng(202);
    let x0 = uniform(&mut data_rng, shape.len());
    let x0_bar = op.apply_vt(&x0)?;
    let hx = op.apply(&x0)?;

    let chunks = 16;
    let per_chunk = MARGINAL_CHAINS / chunks;
    let partial = pool(opts.threads)?.install(|| {
        (0..chunks)
            .into_par_iter()
            .map(|c| -> Result<(Vec<McStats>, f64)> {
                let mut rng = chain_rng(3000 + c as u64);
                let mut stats = vec![McStats::new(shape.len()); levels.len()];
                let mut exact = 0.0f64;
                for _ in 0..per_chunk {
                    let y: Vec<f64> = hx
                        .iter()
                        .map(|v| v + sigma_y * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    let problem = Problem::new(&op, y, sigma_y)?;
                    let mut x = sampler::q_init(&x0_bar, &problem, levels[steps], &mut rng)?;
                    stats[steps].push(&x);
                    for t in (0..steps).rev() {
                        x = sampler::q_step(&x, &x0_bar, &problem, levels[t], levels[t + 1], &params, &mut rng)?;
                        stats[t].push(&x);
                    }
                    exact = exact.max(max_diff(&x, &x0_bar));
                }
                Ok((stats, exact))
            })
            .collect::<Vec<_>>()
    });
    let mut stats = vec![McStats::new(shape.len()); levels.len()];
    let mut exact = 0.0f64;
    for p in partial {
        let (s, e) = p?;
        exact = exact.max(e);
        for (acc, part) in stats.iter_mut().zip(s) {
            acc.merge(&part);
        }
    }

    let n = MARGINAL_CHAINS as f64;
    let (mut worst_mean, mut worst_var) = (0.0f64, 0.0f64);
    for (t, s) in stats.iter().enumerate().skip(1) {
        let sigma = levels[t];
        for (mu, x) in s.means().iter().zip(&x0_bar) {
            worst_mean = worst_mean.max((mu - x).abs() / (sigma / n.sqrt()));
        }
        for v in s.variances()? {
            worst_var = worst_var.max((v / (sigma * sigma) - 1.0).abs());
        }
    }
    let passed = worst_mean <= 4.0 && worst_var <= 0.07 && exact < 1e-12;
    outcome(
        passed,
        format!(
            "mean dev {worst_mean:.2} se (limit 4), variance dev {:.1}% (limit 7%), t=0 error {exact:.1e}",
            worst_var * 100.0
        ),
    )
}

fn eta_b_identity(_: &VerifyOptions) -> Result<Outcome> {
    let mut rng = chain_rng(303);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let s: f64 = 10f64.powf(rng.random_range(-3.0..1.0));
        let sigma_y: f64 = 10f64.powf(rng.random_range(-3.0..0.0));
        let rho = sigma_y / s;
        let sigma_t = rho * (1.0 + 10f64.powf(rng.random_range(-2.0..2.0)));
        let b = sampler::eta_b_theorem(sigma_t, sigma_y, s)?;
        let lhs = (1.0 - b).powi(2) / (sigma_t * sigma_t - rho * rho * b * b) * sigma_t * sigma_t;
        worst = worst.max((lhs - 1.0).abs());
    }
    outcome(worst <= 1e-10, format!("max relative error {worst:.1e} over 1000 triples"))
}

fn data_consistency(_: &VerifyOptions) -> Result<Outcome> {
    let shape = ImageShape::new(3, 16, 16);
    let mut rng = chain_rng(404);
    let gmm = toy_gmm();
    let schedule = SigmaSchedule::default_linear();
    let params = DdrmParams::new(schedule.subsample(20)?, 9);
    let x: Vec<f64> = (0..shape.len()).map(|_| gmm.sample_prior(&mut rng)).collect();
    let mut worst = 0.0f64;
    let mut failing = Vec::new();
    for (name, op) in preset_ops(shape, 0.0, &mut rng)? {
        let y = op.apply(&x)?;
        let problem = Problem::new(&op, y.clone(), 0.0)?;
        let out = sampler::run(&problem, &mut gmm.clone(), &schedule, &params)?;
        let err = max_diff(&op.apply(&out)?, &y);
        if !(err < 1e-5) {
            failing.push(format!("{name} {err:.1e}"));
        }
        worst = worst.max(err);
    }
    if failing.is_empty() {
        outcome(true, format!("max |Hx - y| {worst:.1e} over {} presets", Degradation::ALL.len()))
    } else {
        outcome(false, format!("failing: {}", failing.join(", ")))
    }
}

fn ilvr_equivalence(_: &VerifyOptions) -> Result<Outcome> {
    let shape = ImageShape::new(3, 8, 8);
    let mut rng = chain_rng(505);
    // the small anisotropic blur has s_min ~ 1e-8; the signal-space reference
    // goes through H†H and would amplify rounding by 1/s
    let ops = preset_ops(shape, 1e-6, &mut rng)?;
    let params = DdrmParams::new(vec![1], 0).with_eta(1.0).with_eta_b(EtaB::Fixed(1.0));
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (_, op) = &ops[rng.random_range(0..ops.len())];
        let n = op.input_len();
        let y = op.apply(&uniform(&mut rng, n))?;
        let problem = Problem::new(op, y, 0.0)?;
        let sigma_t = 10f64.powf(rng.random_range(-2.0..1.5));
        let sigma_next = sigma_t * (1.0 + rng.random_range(0.01..1.0));
        let x_next = normals(&mut rng, n);
        let pred = uniform(&mut rng, n);
        let z = normals(&mut rng, n);

        let pred_bar = op.apply_vt(&pred)?;
        let x_bar = sampler::step_with_noise(
            &op.apply_vt(&x_next)?,
            &pred_bar,
            &problem,
            sigma_t,
            sigma_next,
            &params,
            &z,
        )?;
        let ours = op.apply_v(&x_bar)?;
        let eps = op.apply_v(&z)?;
        let reference = sampler::ilvr_reference_step_with_noise(&pred, &problem, sigma_t, &eps, &eps)?;
        worst = worst.max(max_diff(&ours, &reference));
    }
    outcome(worst <= 1e-10, format!("max difference {worst:.1e} over 50 steps"))
}

const GAUSSIAN_RUNS: usize = 10_000;

fn gaussian_end_to_end(opts: &VerifyOptions) -> Result<Outcome> {
    let shape = ImageShape::square(1, 8);
    let op = SvdOperator::block_sr(shape, 2)?;
    let sigma_y = 0.05;
    let mut rng = chain_rng(606);
    let x = normals(&mut rng, shape.len());
    let y: Vec<f64> = op
        .apply(&x)?
        .into_iter()
        .map(|v| v + sigma_y * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let problem = Problem::new(&op, y.clone(), sigma_y)?;
    let schedule = SigmaSchedule::default_linear();
    let timesteps = schedule.subsample(20)?;
    let denoiser = GaussianMmse::new(0.0, 1.0)?;

    let chunks = 20;
    let per_chunk = GAUSSIAN_RUNS / chunks;
    let parts = pool(opts.threads)?.install(|| {
        (0..chunks)
            .into_par_iter()
            .map(|c| -> Result<McStats> {
                let mut stats = McStats::new(shape.len());
                for r in 0..per_chunk {
                    let params = DdrmParams::new(timesteps.clone(), (c * per_chunk + r) as u64);
                    stats.push(&sampler::run(&problem, &mut denoiser.clone(), &schedule, &params)?);
                }
                Ok(stats)
            })
            .collect::<Vec<_>>()
    });
    let mut stats = McStats::new(shape.len());
    for p in parts {
        stats.merge(&p?);
    }
    let exact = oracle::gaussian_posterior(&op, &y, sigma_y, &vec![0.0; shape.len()], 1.0)?.signal_mean(&op)?;
    let worst = max_diff(stats.means(), &exact);
    outcome(
        worst <= 0.05,
        format!("max |mean - posterior mean| {worst:.4} over {GAUSSIAN_RUNS} runs (limit 0.05)"),
    )
}

fn ve_vp_roundtrip(_: &VerifyOptions) -> Result<Outcome> {
    let sched = SigmaSchedule::<f64>::default_linear();
    let mut sigma_err = 0.0f64;
    for &s in sched.sigmas() {
        let back = schedule::sigma_from_alpha_bar(schedule::to_vp_alpha(s));
        sigma_err = sigma_err.max((back - s).abs());
    }
    let rebuilt = SigmaSchedule::from_vp_alphas(&sched.alpha_bars()[1..])?;
    sigma_err = sigma_err.max(max_diff(rebuilt.sigmas(), sched.sigmas()));

    let mut rng = chain_rng(707);
    let mut scale_err = 0.0f64;
    for &s in sched.sigmas() {
        for _ in 0..4 {
            let x: f64 = rng.sample::<f64, _>(StandardNormal) * (1.0 + s);
            let back = schedule::vp_to_ve(schedule::ve_to_vp(x, s), s);
            scale_err = scale_err.max((back - x).abs());
        }
    }
    outcome(
        sigma_err <= 1e-12 && scale_err <= 1e-12,
        format!("sigma round trip {sigma_err:.1e}, scaling round trip {scale_err:.1e}"),
    )
}

fn determinism(_: &VerifyOptions) -> Result<Outcome> {
    let dir = tempfile::tempdir()?;
    let shape = ImageShape::new(3, 16, 16);
    let mut rng = chain_rng(808);
    let img = ImageTensor::new(shape, uniform(&mut rng, shape.len()))?;
    let input = dir.path().join("input.png");
    img.save_png(&input)?;

    let mut cfg = RunConfig {
        deg: Degradation::BlockSr(4),
        sigma_y: 0.05,
        samples: 3,
        seed: 11,
        input: Some(input),
        ..Default::default()
    };
    let runs = [("a", 1), ("b", 4), ("c", 4)];
    for (name, threads) in runs {
        cfg.outdir = Some(dir.path().join(name));
        restore::restore(&cfg, threads)?;
    }
    let mut compared = 0;
    for entry in std::fs::read_dir(dir.path().join("a"))? {
        let file = entry?.file_name();
        let read = |d: &str| -> Result<Vec<u8>> {
            let bytes = std::fs::read(dir.path().join(d).join(&file))?;
            if file == "config.resolved.txt" {
                // the output directory itself is recorded
                let text = String::from_utf8_lossy(&bytes).into_owned();
                let outdir = dir.path().join(d).display().to_string();
                return Ok(text.replace(&outdir, "<outdir>").into_bytes());
            }
            Ok(bytes)
        };
        let a = read("a")?;
        for other in ["b", "c"] {
            if a != read(other)? {
                return outcome(false, format!("{} differs between runs", file.to_string_lossy()));
            }
        }
        compared += 1;
    }
    outcome(true, format!("{compared} files byte-identical across 1 and 4 threads"))
}

fn projector(_: &VerifyOptions) -> Result<Outcome> {
    let shape = ImageShape::square(1, 16);
    let k = [0.25, 0.5, 0.25];
    let full = SvdOperator::sep_blur(shape, &k, &k, 0.0)?;
    let mut rng = chain_rng(909);
    let mut worst_mse = 0.0f64;
    for _ in 0..10 {
        let x = uniform(&mut rng, shape.len());
        let back = full.pseudo_inverse(&full.apply(&x)?)?;
        let mse = back.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64;
        worst_mse = worst_mse.max(mse);
    }
    // PSNR against a unit peak; zero error counts as the cap
    let worst_psnr = if worst_mse == 0.0 {
        imaging::PSNR_CAP_DB
    } else {
        (-10.0 * worst_mse.log10()).min(imaging::PSNR_CAP_DB)
    };

    let truncated = SvdOperator::sep_blur(shape, &k, &k, 0.05)?;
    let n = shape.len();
    let p = ddrm::Mat::from_fn(n, n, |_, _| 0.0);
    let mut p = p;
    let mut basis = vec![0.0; n];
    for j in 0..n {
        basis[j] = 1.0;
        let col = truncated.pseudo_inverse(&truncated.apply(&basis)?)?;
        for (i, v) in col.into_iter().enumerate() {
            p.set(i, j, v);
        }
        basis[j] = 0.0;
    }
    let pp = p.matmul(&p);
    let mut idem = 0.0f64;
    let mut sym = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            idem = idem.max((pp.get(i, j) - p.get(i, j)).abs());
            sym = sym.max((p.get(i, j) - p.get(j, i)).abs());
        }
    }
    // P fixes retained right singular vectors and annihilates the rest
    let mut range = 0.0f64;
    for (i, s) in truncated.singulars().iter().enumerate() {
        basis[i] = 1.0;
        let v = truncated.apply_v(&basis)?;
        let pv = p.matvec(&v);
        range = range.max(if *s > 0.0 { max_diff(&pv, &v) } else { max_abs(&pv) });
        basis[i] = 0.0;
    }
    let zeroed = truncated.singulars().iter().filter(|s| **s == 0.0).count();
    let passed = worst_psnr >= imaging::PSNR_CAP_DB && idem <= 1e-8 && sym <= 1e-8 && range <= 1e-8 && zeroed > 0;
    outcome(
        passed,
        format!(
            "PSNR(H†Hx, x) {worst_psnr:.1} dB (mse {worst_mse:.1e}); truncated ({zeroed} zeroed): idempotence {idem:.1e}, symmetry {sym:.1e}, range {range:.1e}"
        ),
    )
}

/// Deblurring at σ_y > 0 needs small singular values dropped; see README.
pub const SMOKE_SV_THRESHOLD: f64 = 1e-3;

fn smoke_quality(opts: &VerifyOptions) -> Result<Outcome> {
    let shape = ImageShape::square(1, 64);
    let gmm = toy_gmm();
    let sigma_y = 0.05;
    let op = Degradation::DeblurUniform.build(shape, None, SMOKE_SV_THRESHOLD)?;
    let schedule = SigmaSchedule::default_linear();
    let timesteps = schedule.subsample(20)?;
    let images = 20;
    let scores = pool(opts.threads)?.install(|| {
        (0..images)
            .into_par_iter()
            .map(|i| -> Result<(f64, f64)> {
                let mut rng = chain_rng(1000 + i as u64);
                let x = ImageTensor::new(shape, (0..shape.len()).map(|_| gmm.sample_prior(&mut rng)).collect())?;
                let y = imaging::degrade(&x, &op, sigma_y, &mut rng)?;
                let baseline = ImageTensor::new(shape, op.pseudo_inverse(&y)?)?;
                let problem = Problem::new(&op, y, sigma_y)?;
                let params = DdrmParams::new(timesteps.clone(), 5000 + i as u64);
                let out = sampler::run(&problem, &mut gmm.clone(), &schedule, &params)?;
                let out = ImageTensor::new(shape, out)?;
                Ok((
                    imaging::psnr(&out.clamped(), &x.clamped())?,
                    imaging::psnr(&baseline.clamped(), &x.clamped())?,
                ))
            })
            .collect::<Vec<_>>()
    });
    let (mut ours, mut base) = (0.0, 0.0);
    for s in scores {
        let (a, b) = s?;
        ours += a / images as f64;
        base += b / images as f64;
    }
    outcome(
        ours > base,
        format!("mean PSNR {ours:.2} dB vs H†y {base:.2} dB over {images} images"),
    )
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}
