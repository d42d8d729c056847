//! The sampling chain in spectral space.
//!
//! States live in `x̄ = Vᵀx`. Every coordinate follows one of three
//! transitions depending on whether it is measured (`s_i > 0`) and on how the
//! current noise level compares with the spectral measurement noise
//! `σ_y / s_i`. The variational `q` chain, the optimal-`η_b` formula and an
//! ILVR-style reference update are provided for testing.
//!
//! RNG contract: one seeded ChaCha20 stream per run; each step draws exactly
//! `n` standard normals in index order, including the initial draw.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::denoiser::Denoiser;
use crate::error::{check_len, DdrmError, Result};
use crate::linops::{SpectralMeasurement, SvdOperator};
use crate::scalar::Real;
use crate::schedule::SigmaSchedule;

pub type ChainRng = ChaCha20Rng;

pub fn chain_rng(seed: u64) -> ChainRng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub(crate) fn draw_normals<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<T> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::lit(z)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaB<T> {
    Fixed(T),
    /// Per-index `2σ_t²/(σ_t² + σ_y²/s_i²)`.
    Theorem,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdrmParams<T: Real = f64> {
    pub eta: T,
    pub eta_b: EtaB<T>,
    /// Ascending schedule indices; the last one is the starting level.
    pub timesteps: Vec<usize>,
    pub seed: u64,
    pub class_label: Option<i64>,
}

impl<T: Real> DdrmParams<T> {
    /// `η = 0.85`, `η_b = 1`.
    pub fn new(timesteps: Vec<usize>, seed: u64) -> Self {
        Self {
            eta: T::lit(0.85),
            eta_b: EtaB::Fixed(T::one()),
            timesteps,
            seed,
            class_label: None,
        }
    }

    pub fn with_eta(mut self, eta: T) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_eta_b(mut self, eta_b: EtaB<T>) -> Self {
        self.eta_b = eta_b;
        self
    }

    fn check_eta(&self) -> Result<()> {
        if !(self.eta > T::zero() && self.eta <= T::one()) {
            return Err(DdrmError::InvalidParameter(format!(
                "eta must lie in (0, 1], got {}",
                self.eta
            )));
        }
        if let EtaB::Fixed(b) = self.eta_b {
            if !(b >= T::zero()) || !b.is_finite() {
                return Err(DdrmError::InvalidParameter(format!(
                    "eta_b must be finite and >= 0, got {b}"
                )));
            }
        }
        Ok(())
    }
}

/// Measurement `y = Hx + σ_y z` with its spectral view cached.
#[derive(Debug, Clone)]
pub struct Problem<'a, T: Real = f64> {
    op: &'a SvdOperator<T>,
    y: Vec<T>,
    sigma_y: T,
    spectral: SpectralMeasurement<T>,
}

impl<'a, T: Real> Problem<'a, T> {
    pub fn new(op: &'a SvdOperator<T>, y: Vec<T>, sigma_y: T) -> Result<Self> {
        check_len("measurement", op.output_len(), y.len())?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(DdrmError::Numerical("measurement has non-finite entries".into()));
        }
        let spectral = op.spectral_measurement(&y, sigma_y)?;
        Ok(Self {
            op,
            y,
            sigma_y,
            spectral,
        })
    }

    pub fn op(&self) -> &'a SvdOperator<T> {
        self.op
    }

    pub fn y(&self) -> &[T] {
        &self.y
    }

    pub fn sigma_y(&self) -> T {
        self.sigma_y
    }

    pub fn y_bar(&self) -> &[T] {
        &self.spectral.y_bar
    }

    /// `σ_y / s_i`, `+∞` where `s_i = 0`.
    pub fn spectral_noise(&self) -> &[T] {
        &self.spectral.noise
    }

    pub fn len(&self) -> usize {
        self.op.input_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn is_measured(&self, i: usize) -> bool {
        self.op.singulars()[i] > T::zero()
    }

    /// The top level must dominate every spectral noise level.
    pub fn check_top_level(&self, sigma_top: T) -> Result<()> {
        for (i, rho) in self.spectral.noise.iter().enumerate() {
            if self.is_measured(i) && sigma_top < *rho {
                return Err(DdrmError::InvalidParameter(format!(
                    "sigma_T = {sigma_top} is below the measurement noise sigma_y/s_{i} = {rho}; use a larger sigma_T"
                )));
            }
        }
        Ok(())
    }

    /// Checks that a fixed `η_b` keeps every measured-branch variance
    /// non-negative at the given target levels.
    pub fn check_eta_b(&self, eta_b: T, levels: &[T]) -> Result<()> {
        if eta_b <= T::one() {
            return Ok(());
        }
        let worst = self
            .spectral
            .noise
            .iter()
            .enumerate()
            .filter(|(i, _)| self.is_measured(*i))
            .map(|(_, rho)| *rho);
        for rho in worst {
            for &s in levels {
                if s >= rho && s * s - rho * rho * eta_b * eta_b < T::zero() {
                    return Err(DdrmError::InvalidParameter(format!(
                        "eta_b = {eta_b} gives negative variance at sigma_t = {s}, sigma_y/s_i = {rho}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Which transition a coordinate takes at target level `σ_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `s_i = 0`
    Unmeasured,
    /// `σ_t < σ_y/s_i`
    Noisier,
    /// `σ_t ≥ σ_y/s_i`
    Cleaner,
}

pub fn branch<T: Real>(singular: T, sigma_t: T, spectral_noise: T) -> Branch {
    if singular <= T::zero() {
        Branch::Unmeasured
    } else if sigma_t < spectral_noise {
        Branch::Noisier
    } else {
        Branch::Cleaner
    }
}

/// `η_b = 2σ_t²/(σ_t² + σ_y²/s²)`; `1` when both levels are zero.
pub fn eta_b_theorem<T: Real>(sigma_t: T, sigma_y: T, singular: T) -> Result<T> {
    if !(singular > T::zero()) {
        return Err(DdrmError::InvalidParameter(format!(
            "optimal eta_b needs s_i > 0, got {singular}"
        )));
    }
    let rho = sigma_y / singular;
    let denom = sigma_t * sigma_t + rho * rho;
    if denom.is_zero() {
        return Ok(T::one());
    }
    Ok(T::lit(2.0) * sigma_t * sigma_t / denom)
}

/// Per-coordinate Gaussian transition parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMoments<T> {
    pub mean: Vec<T>,
    pub variance: Vec<T>,
}

fn check_finite<T: Real>(what: &str, v: &[T]) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(DdrmError::Numerical(format!("{what}[{i}] = {} is not finite", v[i])));
    }
    Ok(())
}

/// Mean and variance of `p(x̄_t | x̄_{t+1}, x̄_θ)`.
pub fn step_moments<T: Real>(
    x_next: &[T],
    pred_bar: &[T],
    problem: &Problem<'_, T>,
    sigma_t: T,
    sigma_next: T,
    params: &DdrmParams<T>,
) -> Result<StepMoments<T>> {
    let n = problem.len();
    check_len("spectral state", n, x_next.len())?;
    check_len("spectral prediction", n, pred_bar.len())?;
    check_finite("x_next", x_next)?;
    check_finite("prediction", pred_bar)?;
    if !(sigma_t >= T::zero() && sigma_t < sigma_next) || !sigma_next.is_finite() {
        return Err(DdrmError::InvalidParameter(format!(
            "need 0 <= sigma_t < sigma_t+1, got {sigma_t}, {sigma_next}"
        )));
    }
    params.check_eta()?;
    let eta = params.eta;
    let coupling = (T::one() - eta * eta).sqrt() * sigma_t;
    let eta_var = eta * eta * sigma_t * sigma_t;
    let singulars = problem.op.singulars();
    let (y_bar, noise) = (problem.y_bar(), problem.spectral_noise());

    let mut mean = Vec::with_capacity(n);
    let mut variance = Vec::with_capacity(n);
    for i in 0..n {
        let (m, v) = match branch(singulars[i], sigma_t, noise[i]) {
            Branch::Unmeasured => (
                pred_bar[i] + coupling * (x_next[i] - pred_bar[i]) / sigma_next,
                eta_var,
            ),
            Branch::Noisier => (
                pred_bar[i] + coupling * (y_bar[i] - pred_bar[i]) / noise[i],
                eta_var,
            ),
            Branch::Cleaner => {
                let b = match params.eta_b {
                    EtaB::Fixed(b) => b,
                    EtaB::Theorem => eta_b_theorem(sigma_t, problem.sigma_y, singulars[i])?,
                };
                let var = sigma_t * sigma_t - noise[i] * noise[i] * b * b;
                let var = if var < T::zero() {
                    // rounding at the σ_t = σ_y/s_i, η_b = 1 boundary
                    if var > -T::lit(1e-12) * sigma_t * sigma_t {
                        T::zero()
                    } else {
                        return Err(DdrmError::Numerical(format!(
                            "negative transition variance {var} at index {i} (eta_b = {b})"
                        )));
                    }
                } else {
                    var
                };
                ((T::one() - b) * pred_bar[i] + b * y_bar[i], var)
            }
        };
        mean.push(m);
        variance.push(v);
    }
    Ok(StepMoments { mean, variance })
}

/// One transition with caller-supplied standard normals.
pub fn step_with_noise<T: Real>(
    x_next: &[T],
    pred_bar: &[T],
    problem: &Problem<'_, T>,
    sigma_t: T,
    sigma_next: T,
    params: &DdrmParams<T>,
    noise: &[T],
) -> Result<Vec<T>> {
    check_len("noise", problem.len(), noise.len())?;
    let m = step_moments(x_next, pred_bar, problem, sigma_t, sigma_next, params)?;
    Ok(m
        .mean
        .iter()
        .zip(&m.variance)
        .zip(noise)
        .map(|((mu, var), z)| *mu + var.sqrt() * *z)
        .collect())
}

/// One transition `x̄_{t+1} → x̄_t`.
pub fn step<T: Real, R: Rng + ?Sized>(
    x_next: &[T],
    pred_bar: &[T],
    problem: &Problem<'_, T>,
    sigma_t: T,
    sigma_next: T,
    params: &DdrmParams<T>,
    rng: &mut R,
) -> Result<Vec<T>> {
    let noise = draw_normals(rng, problem.len());
    step_with_noise(x_next, pred_bar, problem, sigma_t, sigma_next, params, &noise)
}

fn init_moments<T: Real>(problem: &Problem<'_, T>, sigma_top: T, unmeasured_mean: &[T]) -> Result<StepMoments<T>> {
    problem.check_top_level(sigma_top)?;
    let n = problem.len();
    let (y_bar, noise) = (problem.y_bar(), problem.spectral_noise());
    let mut mean = Vec::with_capacity(n);
    let mut variance = Vec::with_capacity(n);
    for i in 0..n {
        if problem.is_measured(i) {
            mean.push(y_bar[i]);
            variance.push(sigma_top * sigma_top - noise[i] * noise[i]);
        } else {
            mean.push(unmeasured_mean[i]);
            variance.push(sigma_top * sigma_top);
        }
    }
    Ok(StepMoments { mean, variance })
}

fn sample_moments<T: Real>(m: &StepMoments<T>, noise: &[T]) -> Vec<T> {
    m.mean
        .iter()
        .zip(&m.variance)
        .zip(noise)
        .map(|((mu, var), z)| *mu + var.max(T::zero()).sqrt() * *z)
        .collect()
}

/// Moments of the starting distribution `x̄_T`.
pub fn init_moments_xt<T: Real>(problem: &Problem<'_, T>, sigma_top: T) -> Result<StepMoments<T>> {
    init_moments(problem, sigma_top, &vec![T::zero(); problem.len()])
}

pub fn init_xt_with_noise<T: Real>(problem: &Problem<'_, T>, sigma_top: T, noise: &[T]) -> Result<Vec<T>> {
    check_len("noise", problem.len(), noise.len())?;
    Ok(sample_moments(&init_moments_xt(problem, sigma_top)?, noise))
}

/// Draws `x̄_T`: `N(ȳ, σ_T² − σ_y²/s_i²)` where measured, `N(0, σ_T²)`
/// elsewhere.
pub fn init_xt<T: Real, R: Rng + ?Sized>(problem: &Problem<'_, T>, sigma_top: T, rng: &mut R) -> Result<Vec<T>> {
    let noise = draw_normals(rng, problem.len());
    init_xt_with_noise(problem, sigma_top, &noise)
}

/// Variational chain start: as [`init_xt`] but centred on the true `x̄₀`
/// where unmeasured.
pub fn q_init<T: Real, R: Rng + ?Sized>(
    x0_bar: &[T],
    problem: &Problem<'_, T>,
    sigma_top: T,
    rng: &mut R,
) -> Result<Vec<T>> {
    check_len("x0_bar", problem.len(), x0_bar.len())?;
    let noise = draw_normals(rng, problem.len());
    Ok(sample_moments(&init_moments(problem, sigma_top, x0_bar)?, &noise))
}

/// Variational chain transition: [`step`] with the true `x̄₀` as the
/// prediction.
pub fn q_step<T: Real, R: Rng + ?Sized>(
    x_next: &[T],
    x0_bar: &[T],
    problem: &Problem<'_, T>,
    sigma_t: T,
    sigma_next: T,
    params: &DdrmParams<T>,
    rng: &mut R,
) -> Result<Vec<T>> {
    step(x_next, x0_bar, problem, sigma_t, sigma_next, params, rng)
}

/// Reference update for noiseless problems written in signal space:
/// `x_t = (I − H†H)(x_θ + σ_t ε) + H†y + σ_t H†H ε'`.
pub fn ilvr_reference_step_with_noise<T: Real>(
    pred: &[T],
    problem: &Problem<'_, T>,
    sigma_t: T,
    eps: &[T],
    eps_prime: &[T],
) -> Result<Vec<T>> {
    if !problem.sigma_y.is_zero() {
        return Err(DdrmError::InvalidParameter(format!(
            "reference update needs sigma_y = 0, got {}",
            problem.sigma_y
        )));
    }
    let n = problem.len();
    check_len("prediction", n, pred.len())?;
    check_len("eps", n, eps.len())?;
    check_len("eps'", n, eps_prime.len())?;
    let op = problem.op;
    let project = |v: &[T]| -> Result<Vec<T>> { op.pseudo_inverse(&op.apply(v)?) };

    let x_prime: Vec<T> = pred.iter().zip(eps).map(|(p, e)| *p + sigma_t * *e).collect();
    let x_prime_row = project(&x_prime)?;
    let eps_row = project(eps_prime)?;
    let y_pinv = op.pseudo_inverse(&problem.y)?;
    Ok((0..n)
        .map(|j| x_prime[j] - x_prime_row[j] + y_pinv[j] + sigma_t * eps_row[j])
        .collect())
}

/// [`ilvr_reference_step_with_noise`] drawing `ε` then `ε'` from `rng`.
pub fn ilvr_reference_step<T: Real, R: Rng + ?Sized>(
    pred: &[T],
    problem: &Problem<'_, T>,
    sigma_t: T,
    rng: &mut R,
) -> Result<Vec<T>> {
    let eps = draw_normals(rng, problem.len());
    let eps_prime = draw_normals(rng, problem.len());
    ilvr_reference_step_with_noise(pred, problem, sigma_t, &eps, &eps_prime)
}

fn validate_run<T: Real>(problem: &Problem<'_, T>, schedule: &SigmaSchedule<T>, params: &DdrmParams<T>) -> Result<Vec<T>> {
    params.check_eta()?;
    let steps = &params.timesteps;
    if steps.is_empty() {
        return Err(DdrmError::InvalidParameter("no timesteps selected".into()));
    }
    if steps[0] == 0 || *steps.last().unwrap() > schedule.max_index() {
        return Err(DdrmError::InvalidParameter(format!(
            "timesteps must lie in [1, {}]",
            schedule.max_index()
        )));
    }
    if steps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DdrmError::InvalidParameter("timesteps must strictly increase".into()));
    }
    // levels[0] = σ₀ = 0, then the selected levels ascending
    let levels: Vec<T> = std::iter::once(T::zero())
        .chain(steps.iter().map(|&t| schedule.sigma(t)))
        .collect();
    problem.check_top_level(*levels.last().unwrap())?;
    if let EtaB::Fixed(b) = params.eta_b {
        problem.check_eta_b(b, &levels[..levels.len() - 1])?;
    }
    Ok(levels)
}

/// Full chain with a fresh RNG seeded from `params.seed`.
pub fn run<T: Real, D: Denoiser<T> + ?Sized>(
    problem: &Problem<'_, T>,
    denoiser: &mut D,
    schedule: &SigmaSchedule<T>,
    params: &DdrmParams<T>,
) -> Result<Vec<T>> {
    run_with_rng(problem, denoiser, schedule, params, &mut chain_rng(params.seed))
}

/// Full chain; returns the signal-space `x̂₀ = V x̄₀`.
pub fn run_with_rng<T: Real, D: Denoiser<T> + ?Sized, R: Rng + ?Sized>(
    problem: &Problem<'_, T>,
    denoiser: &mut D,
    schedule: &SigmaSchedule<T>,
    params: &DdrmParams<T>,
    rng: &mut R,
) -> Result<Vec<T>> {
    let levels = validate_run(problem, schedule, params)?;
    let op = problem.op;
    let n = problem.len();
    let mut x_bar = init_xt(problem, *levels.last().unwrap(), rng)?;
    for j in (0..params.timesteps.len()).rev() {
        let (sigma_t, sigma_next) = (levels[j], levels[j + 1]);
        let x_signal = op.apply_v(&x_bar)?;
        let pred = denoiser.predict_x0(&x_signal, sigma_next, params.timesteps[j], params.class_label)?;
        check_len("denoiser output", n, pred.len())?;
        check_finite("denoiser output", &pred)?;
        let pred_bar = op.apply_vt(&pred)?;
        x_bar = step(&x_bar, &pred_bar, problem, sigma_t, sigma_next, params, rng)?;
    }
    op.apply_v(&x_bar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{GaussianMmse, GmmComponent, GmmMmse};
    use crate::linops::ImageShape;
    use crate::oracle::McStats;

    fn diag_problem(op: &SvdOperator<f64>, y: Vec<f64>, sigma_y: f64) -> Problem<'_, f64> {
        Problem::new(op, y, sigma_y).unwrap()
    }

    #[test]
    fn init_unmeasured_moments() {
        let op = SvdOperator::inpainting(3, &[0]).unwrap();
        let p = diag_problem(&op, vec![0.4], 0.1);
        let m = init_moments_xt(&p, 2.0).unwrap();
        assert_eq!(m.mean[1], 0.0);
        assert_eq!(m.variance[1], 4.0);
        assert_eq!(m.mean[0], 0.4);
        assert!((m.variance[0] - (4.0 - 0.01)).abs() < 1e-15);

        let noiseless = diag_problem(&op, vec![0.4], 0.0);
        let m = init_moments_xt(&noiseless, 2.0).unwrap();
        assert_eq!((m.mean[0], m.variance[0]), (0.4, 4.0));
    }

    #[test]
    fn init_rejects_small_top_level() {
        let op = SvdOperator::denoising(2);
        let p = diag_problem(&op, vec![0.0, 0.0], 0.5);
        assert!(init_xt(&p, 0.4, &mut chain_rng(0)).is_err());
        assert!(init_xt(&p, 0.5, &mut chain_rng(0)).is_ok());
    }

    #[test]
    fn init_variance_monte_carlo() {
        let op = SvdOperator::denoising(1);
        let p = diag_problem(&op, vec![0.0], 0.1);
        let mut rng = chain_rng(42);
        let mut stats = McStats::new(1);
        for _ in 0..100_000 {
            stats.push(&init_xt(&p, 1.0, &mut rng).unwrap());
        }
        let var = stats.variances().unwrap()[0];
        assert!((var / 0.99 - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn branch_examples() {
        let op = SvdOperator::denoising(1);
        let params = DdrmParams::new(vec![1], 0).with_eta(0.85);
        // measured, cleaner: η_b = 1
        let p = diag_problem(&op, vec![0.7], 0.1);
        let m = step_moments(&[3.0], &[-2.0], &p, 1.0, 2.0, &params).unwrap();
        assert_eq!(m.mean[0], 0.7);
        assert!((m.variance[0] - 0.99).abs() < 1e-15);
        // measured, noisier
        let p = diag_problem(&op, vec![1.0], 0.1);
        let m = step_moments(&[3.0], &[0.0], &p, 0.05, 0.2, &params).unwrap();
        assert!((m.mean[0] - 0.2775f64.sqrt() * 0.5).abs() < 1e-15);
        // the quoted 0.2633915 is rounded; the exact value is 0.26339134…
        assert!((m.mean[0] - 0.2633915).abs() < 1e-6);
        assert!((m.variance[0] - 0.00180625).abs() < 1e-15);
        // unmeasured, η = 1
        let op = SvdOperator::inpainting(2, &[0]).unwrap();
        let p = diag_problem(&op, vec![0.0], 0.1);
        let params = DdrmParams::new(vec![1], 0).with_eta(1.0);
        let m = step_moments(&[0.0, 1.0], &[0.0, 0.0], &p, 1.0, 2.0, &params).unwrap();
        assert_eq!((m.mean[1], m.variance[1]), (0.0, 1.0));
    }

    #[test]
    fn boundary_goes_to_cleaner_branch() {
        assert_eq!(branch(1.0, 0.1, 0.1), Branch::Cleaner);
        assert_eq!(branch(1.0, 0.0999, 0.1), Branch::Noisier);
        assert_eq!(branch(0.0, 5.0, f64::INFINITY), Branch::Unmeasured);
        assert_eq!(branch(2.0, 0.0, 0.0), Branch::Cleaner);
    }

    #[test]
    fn step_rejects_bad_input() {
        let op = SvdOperator::denoising(1);
        let p = diag_problem(&op, vec![0.0], 0.1);
        let params = DdrmParams::new(vec![1], 0);
        assert!(step_moments(&[f64::NAN], &[0.0], &p, 0.5, 1.0, &params).is_err());
        assert!(step_moments(&[0.0], &[f64::INFINITY], &p, 0.5, 1.0, &params).is_err());
        assert!(step_moments(&[0.0], &[0.0], &p, 1.0, 1.0, &params).is_err());
        let big = params.clone().with_eta_b(EtaB::Fixed(1.5));
        assert!(matches!(
            step_moments(&[0.0], &[0.0], &p, 0.12, 1.0, &big),
            Err(DdrmError::Numerical(_))
        ));
        assert!(step_moments(&[0.0], &[0.0], &p, 0.5, 1.0, &params.clone().with_eta(0.0)).is_err());
        assert!(step_moments(&[0.0], &[0.0], &p, 0.5, 1.0, &params.with_eta(1.2)).is_err());
    }

    #[test]
    fn eta_b_theorem_examples() {
        assert!((eta_b_theorem(0.1f64, 0.1, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((eta_b_theorem(0.3f64, 0.6, 2.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(eta_b_theorem(0.7, 0.0, 1.0).unwrap(), 2.0);
        assert!((eta_b_theorem(1.0f64, 0.1, 1.0).unwrap() - 1.980_198_0).abs() < 1e-7);
        assert!(eta_b_theorem(1.0, 0.1, 0.0).is_err());
        assert_eq!(eta_b_theorem(0.0, 0.0, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn eta_b_theorem_variance_identity() {
        let mut rng = chain_rng(9);
        for _ in 0..1000 {
            let s: f64 = rng.random_range(0.05..3.0);
            let sy: f64 = rng.random_range(0.0..0.5);
            let rho = sy / s;
            let st = rho + rng.random_range(1e-3..2.0);
            let b = eta_b_theorem(st, sy, s).unwrap();
            let lhs = (1.0 - b).powi(2) / (st * st - rho * rho * b * b);
            let rhs = 1.0 / (st * st);
            assert!((lhs - rhs).abs() <= 1e-10 * rhs, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn q_step_is_step_with_true_signal() {
        let shape = ImageShape::new(1, 4, 4);
        let op = SvdOperator::block_sr(shape, 2).unwrap();
        let x0: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let y = op.apply(&x0).unwrap();
        let p = diag_problem(&op, y, 0.05);
        let x0_bar = op.apply_vt(&x0).unwrap();
        let x_next: Vec<f64> = (0..16).map(|i| i as f64 * 0.1).collect();
        let params = DdrmParams::new(vec![1], 0).with_eta_b(EtaB::Theorem);
        let a = q_step(&x_next, &x0_bar, &p, 0.3, 0.9, &params, &mut chain_rng(5)).unwrap();
        let b = step(&x_next, &x0_bar, &p, 0.3, 0.9, &params, &mut chain_rng(5)).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn q_init_uses_true_signal_where_unmeasured() {
        let op = SvdOperator::inpainting(2, &[1]).unwrap();
        let p = diag_problem(&op, vec![0.5], 0.2);
        let m = init_moments(&p, 1.5, &[0.0, 3.0]).unwrap();
        // spectral order: kept first, then dropped
        assert_eq!((m.mean[0], m.mean[1]), (0.5, 3.0));
        assert!((m.variance[0] - (2.25 - 0.04)).abs() < 1e-15);
        assert_eq!(m.variance[1], 2.25);
    }

    fn gmm() -> GmmMmse<f64> {
        GmmMmse::new(vec![
            GmmComponent { weight: 0.4, mean: 0.2, std: 0.1 },
            GmmComponent { weight: 0.6, mean: 0.7, std: 0.15 },
        ])
        .unwrap()
    }

    #[test]
    fn run_is_seed_deterministic() {
        let shape = ImageShape::new(1, 4, 4);
        let op = SvdOperator::block_sr(shape, 2).unwrap();
        let y = vec![0.3, 0.5, 0.2, 0.9];
        let p = diag_problem(&op, y, 0.05);
        let sched = SigmaSchedule::<f64>::default_linear();
        let params = DdrmParams::new(sched.subsample(20).unwrap(), 77);
        let a = run(&p, &mut gmm(), &sched, &params).unwrap();
        let b = run(&p, &mut gmm(), &sched, &params).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let c = run(&p, &mut gmm(), &sched, &DdrmParams { seed: 78, ..params }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_run_is_data_consistent() {
        let shape = ImageShape::new(1, 6, 6);
        let op = SvdOperator::sep_blur(shape, &[0.25, 0.5, 0.25], &[0.25, 0.5, 0.25], 0.0).unwrap();
        let x: Vec<f64> = (0..36).map(|i| ((i * 7) % 11) as f64 / 10.0).collect();
        let y = op.apply(&x).unwrap();
        let p = diag_problem(&op, y.clone(), 0.0);
        let sched = SigmaSchedule::<f64>::default_linear();
        let params = DdrmParams::new(sched.subsample(20).unwrap(), 3);
        let out = run(&p, &mut gmm(), &sched, &params).unwrap();
        let hx = op.apply(&out).unwrap();
        let err = hx.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn run_validates_inputs() {
        let op = SvdOperator::denoising(4);
        let sched = SigmaSchedule::new(vec![0.0, 0.1, 0.3]).unwrap();
        let p = diag_problem(&op, vec![0.0; 4], 0.5);
        let mut d = GaussianMmse::new(0.0, 1.0).unwrap();
        // top level 0.3 < σ_y = 0.5
        assert!(run(&p, &mut d, &sched, &DdrmParams::new(vec![1, 2], 0)).is_err());
        let p = diag_problem(&op, vec![0.0; 4], 0.05);
        assert!(run(&p, &mut d, &sched, &DdrmParams::new(vec![], 0)).is_err());
        assert!(run(&p, &mut d, &sched, &DdrmParams::new(vec![0, 2], 0)).is_err());
        assert!(run(&p, &mut d, &sched, &DdrmParams::new(vec![2, 1], 0)).is_err());
        assert!(run(&p, &mut d, &sched, &DdrmParams::new(vec![1, 3], 0)).is_err());
        // η_b = 1.9 turns the σ_t = 0.1 variance negative once σ_y/s_i = 0.08
        let p = diag_problem(&op, vec![0.0; 4], 0.08);
        let bad = DdrmParams::new(vec![1, 2], 0).with_eta_b(EtaB::Fixed(1.9));
        assert!(matches!(run(&p, &mut d, &sched, &bad), Err(DdrmError::InvalidParameter(_))));
        assert!(run(&p, &mut d, &sched, &DdrmParams::new(vec![1, 2], 0)).is_ok());
    }

    #[test]
    fn eta_b_two_is_fine_without_noise() {
        let op = SvdOperator::denoising(3);
        let sched = SigmaSchedule::new(vec![0.0, 0.1, 0.3]).unwrap();
        let p = diag_problem(&op, vec![0.1, 0.2, 0.3], 0.0);
        let params = DdrmParams::new(vec![1, 2], 0).with_eta_b(EtaB::Fixed(2.0));
        assert!(run(&p, &mut GaussianMmse::new(0.0, 1.0).unwrap(), &sched, &params).is_ok());
    }

    struct Counting(usize);

    impl Denoiser<f64> for Counting {
        fn predict_x0(&mut self, x: &[f64], _: f64, _: usize, _: Option<i64>) -> Result<Vec<f64>> {
            self.0 += 1;
            Ok(x.to_vec())
        }
    }

    #[test]
    fn one_prediction_per_selected_step() {
        let op = SvdOperator::denoising(2);
        let p = diag_problem(&op, vec![0.0; 2], 0.0);
        let sched = SigmaSchedule::<f64>::default_linear();
        let mut d = Counting(0);
        run(&p, &mut d, &sched, &DdrmParams::new(sched.subsample(13).unwrap(), 0)).unwrap();
        assert_eq!(d.0, 13);
    }

    struct Broken;

    impl Denoiser<f64> for Broken {
        fn predict_x0(&mut self, x: &[f64], _: f64, _: usize, _: Option<i64>) -> Result<Vec<f64>> {
            Ok(vec![f64::NAN; x.len()])
        }
    }

    #[test]
    fn non_finite_prediction_is_an_error() {
        let op = SvdOperator::denoising(2);
        let p = diag_problem(&op, vec![0.0; 2], 0.0);
        let sched = SigmaSchedule::<f64>::default_linear();
        let r = run(&p, &mut Broken, &sched, &DdrmParams::new(vec![10], 0));
        assert!(matches!(r, Err(DdrmError::Numerical(_))));
    }

    #[test]
    fn reference_update_special_cases() {
        // orthogonal H: x_t = H†y + σ ε'
        let op = SvdOperator::denoising(3);
        let p = diag_problem(&op, vec![0.1, 0.2, 0.3], 0.0);
        let eps = [0.5, -1.0, 2.0];
        let eps2 = [1.0, 0.0, -1.0];
        let out = ilvr_reference_step_with_noise(&[9.0, 9.0, 9.0], &p, 0.5, &eps, &eps2).unwrap();
        for j in 0..3 {
            assert!((out[j] - (p.y()[j] + 0.5 * eps2[j])).abs() < 1e-15);
        }
        // zero noise: prediction on the null space, ȳ on the row space
        let shape = ImageShape::new(1, 4, 4);
        let op = SvdOperator::block_sr(shape, 2).unwrap();
        let p = diag_problem(&op, vec![0.1, 0.2, 0.3, 0.4], 0.0);
        let pred: Vec<f64> = (0..16).map(|i| (i as f64).cos()).collect();
        let zero = [0.0; 16];
        let out = ilvr_reference_step_with_noise(&pred, &p, 0.7, &zero, &zero).unwrap();
        let out_bar = op.apply_vt(&out).unwrap();
        let pred_bar = op.apply_vt(&pred).unwrap();
        for i in 0..16 {
            let want = if op.singulars()[i] > 0.0 { p.y_bar()[i] } else { pred_bar[i] };
            assert!((out_bar[i] - want).abs() < 1e-12);
        }
        let noisy = diag_problem(&op, vec![0.1; 4], 0.1);
        assert!(ilvr_reference_step(&pred, &noisy, 0.5, &mut chain_rng(0)).is_err());
    }

    #[test]
    fn reference_update_matches_step() {
        let shape = ImageShape::new(1, 6, 6);
        let op = SvdOperator::sep_blur(shape, &[0.2, 0.6, 0.2], &[1.0 / 3.0; 3], 0.0).unwrap();
        let x: Vec<f64> = (0..36).map(|i| (i as f64 * 0.3).sin()).collect();
        let p = diag_problem(&op, op.apply(&x).unwrap(), 0.0);
        let params = DdrmParams::new(vec![1], 0).with_eta(1.0).with_eta_b(EtaB::Fixed(1.0));
        let mut rng = chain_rng(123);
        for _ in 0..10 {
            let pred: Vec<f64> = draw_normals(&mut rng, 36);
            let x_next: Vec<f64> = draw_normals(&mut rng, 36);
            let z: Vec<f64> = draw_normals(&mut rng, 36);
            let pred_bar = op.apply_vt(&pred).unwrap();
            let ddrm = step_with_noise(&x_next, &pred_bar, &p, 0.4, 0.8, &params, &z).unwrap();
            let eps = op.apply_v(&z).unwrap();
            let ilvr = ilvr_reference_step_with_noise(&pred, &p, 0.4, &eps, &eps).unwrap();
            let ilvr_bar = op.apply_vt(&ilvr).unwrap();
            let err = ddrm.iter().zip(&ilvr_bar).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "{err}");
        }
    }

    #[test]
    fn f32_chain_runs() {
        let op = SvdOperator::<f32>::denoising(4);
        let p = Problem::new(&op, vec![0.1f32, 0.2, 0.3, 0.4], 0.05).unwrap();
        let sched = SigmaSchedule::<f32>::default_linear();
        let params = DdrmParams::new(sched.subsample(10).unwrap(), 1);
        let out = run(&p, &mut GaussianMmse::new(0.5f32, 0.3).unwrap(), &sched, &params).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
    }
}
