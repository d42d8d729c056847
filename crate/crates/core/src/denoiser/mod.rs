//! Denoisers: maps `(x_t, σ_t) → x̂₀` predicting the clean signal.
//!
//! The analytic denoisers are exact MMSE estimators under known priors and
//! exist so the sampler can be checked against closed-form posteriors.
//! External models are reached through [`bridge`].

pub mod bridge;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{DdrmError, Result};
use crate::scalar::Real;

/// The denoiser role. `sigma` is in VE units; `step` is the schedule index
/// the level came from.
///
/// Implementations must be deterministic and return `x_t.len()` finite
/// values. Outputs are not clamped.
pub trait Denoiser<T: Real> {
    fn predict_x0(
        &mut self,
        x_t: &[T],
        sigma: T,
        step: usize,
        class_label: Option<i64>,
    ) -> Result<Vec<T>>;
}

impl<T: Real, D: Denoiser<T> + ?Sized> Denoiser<T> for Box<D> {
    fn predict_x0(&mut self, x_t: &[T], sigma: T, step: usize, class_label: Option<i64>) -> Result<Vec<T>> {
        (**self).predict_x0(x_t, sigma, step, class_label)
    }
}

impl<T: Real, D: Denoiser<T> + ?Sized> Denoiser<T> for &mut D {
    fn predict_x0(&mut self, x_t: &[T], sigma: T, step: usize, class_label: Option<i64>) -> Result<Vec<T>> {
        (**self).predict_x0(x_t, sigma, step, class_label)
    }
}

fn check_sigma<T: Real>(sigma: T) -> Result<()> {
    if !(sigma >= T::zero()) || !sigma.is_finite() {
        return Err(DdrmError::InvalidParameter(format!(
            "noise level must be finite and >= 0, got {sigma}"
        )));
    }
    Ok(())
}

/// MMSE denoiser for the isotropic prior `N(μ, τ²I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMmse<T> {
    mean: T,
    std: T,
}

impl<T: Real> GaussianMmse<T> {
    pub fn new(mean: T, std: T) -> Result<Self> {
        if !(std > T::zero()) || !std.is_finite() || !mean.is_finite() {
            return Err(DdrmError::InvalidParameter(format!(
                "gaussian prior needs finite mean and std > 0, got mean {mean}, std {std}"
            )));
        }
        Ok(Self { mean, std })
    }

    pub fn mean(&self) -> T {
        self.mean
    }

    pub fn std(&self) -> T {
        self.std
    }

    /// `(σ²μ + τ²x)/(σ² + τ²)`.
    pub fn predict_one(&self, x: T, sigma: T) -> T {
        let (s2, t2) = (sigma * sigma, self.std * self.std);
        (s2 * self.mean + t2 * x) / (s2 + t2)
    }

    /// `∂x̂₀/∂x_t = τ²/(σ² + τ²)`.
    pub fn derivative(&self, sigma: T) -> T {
        let t2 = self.std * self.std;
        t2 / (sigma * sigma + t2)
    }
}

impl<T: Real> Denoiser<T> for GaussianMmse<T> {
    fn predict_x0(&mut self, x_t: &[T], sigma: T, _step: usize, _label: Option<i64>) -> Result<Vec<T>> {
        check_sigma(sigma)?;
        Ok(x_t.iter().map(|&x| self.predict_one(x, sigma)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmComponent<T> {
    pub weight: T,
    pub mean: T,
    pub std: T,
}

/// MMSE denoiser for a per-coordinate i.i.d. scalar Gaussian mixture prior.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmMmse<T> {
    components: Vec<GmmComponent<T>>,
}

impl<T: Real> GmmMmse<T> {
    pub fn new(components: Vec<GmmComponent<T>>) -> Result<Self> {
        if components.is_empty() {
            return Err(DdrmError::InvalidParameter("empty mixture".into()));
        }
        for c in &components {
            if !(c.weight > T::zero()) || !(c.std > T::zero()) || !c.mean.is_finite() || !c.std.is_finite() {
                return Err(DdrmError::InvalidParameter(format!(
                    "mixture component needs weight > 0, std > 0, finite mean: {c:?}"
                )));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight.as_f64()).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(DdrmError::InvalidParameter(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { components })
    }

    /// Parses `weight mean std` per line; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut components = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let nums: Vec<f64> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| DdrmError::InvalidParameter(format!("gmm line {}: {e}", lineno + 1)))?;
            let [weight, mean, std] = nums[..] else {
                return Err(DdrmError::InvalidParameter(format!(
                    "gmm line {}: expected 'weight mean std'",
                    lineno + 1
                )));
            };
            components.push(GmmComponent {
                weight: T::lit(weight),
                mean: T::lit(mean),
                std: T::lit(std),
            });
        }
        Self::new(components)
    }

    pub fn components(&self) -> &[GmmComponent<T>] {
        &self.components
    }

    /// Responsibilities and per-component MMSE outputs at one coordinate.
    fn posterior_terms(&self, x: T, sigma: T) -> (Vec<T>, Vec<T>, Vec<T>) {
        let s2 = sigma * sigma;
        let half = T::lit(0.5);
        let two_pi = T::lit(std::f64::consts::TAU);
        let mut logw = Vec::with_capacity(self.components.len());
        let mut means = Vec::with_capacity(self.components.len());
        let mut grads = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let var = c.std * c.std + s2;
            let d = x - c.mean;
            logw.push(c.weight.ln() - half * (two_pi * var).ln() - half * d * d / var);
            means.push((s2 * c.mean + c.std * c.std * x) / var);
            // d/dx of the log-likelihood
            grads.push(-d / var);
        }
        let peak = logw.iter().copied().fold(T::neg_infinity(), T::max);
        let mut resp: Vec<T> = logw.iter().map(|l| (*l - peak).exp()).collect();
        let z: T = resp.iter().copied().sum();
        for r in &mut resp {
            *r = *r / z;
        }
        (resp, means, grads)
    }

    pub fn predict_one(&self, x: T, sigma: T) -> T {
        let (resp, means, _) = self.posterior_terms(x, sigma);
        resp.iter().zip(&means).map(|(r, m)| *r * *m).sum()
    }

    /// Exact `∂x̂₀/∂x_t`, including the responsibility terms.
    pub fn derivative(&self, x: T, sigma: T) -> T {
        let (resp, means, grads) = self.posterior_terms(x, sigma);
        let s2 = sigma * sigma;
        let mean_grad: T = resp.iter().zip(&grads).map(|(r, g)| *r * *g).sum();
        self.components
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let t2 = c.std * c.std;
                let dm = t2 / (t2 + s2);
                resp[k] * dm + resp[k] * (grads[k] - mean_grad) * means[k]
            })
            .sum()
    }

    /// Draws one scalar from the prior.
    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.components.last().expect("non-empty mixture");
        for c in &self.components {
            acc += c.weight.as_f64();
            if u < acc {
                pick = c;
                break;
            }
        }
        let z: f64 = StandardNormal.sample(rng);
        pick.mean + pick.std * T::lit(z)
    }
}

impl<T: Real> Denoiser<T> for GmmMmse<T> {
    fn predict_x0(&mut self, x_t: &[T], sigma: T, _step: usize, _label: Option<i64>) -> Result<Vec<T>> {
        check_sigma(sigma)?;
        Ok(x_t.iter().map(|&x| self.predict_one(x, sigma)).collect())
    }
}
