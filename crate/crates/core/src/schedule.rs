//! Noise-level schedules, variance-exploding / variance-preserving
//! conversion and timestep subsampling.
//!
//! A schedule stores VE levels `0 = σ₀ < σ₁ < … < σ_T`. VP models relate to
//! it through `ᾱ_t = 1/(1 + σ_t²)`, and the states through
//! `x_vp = x_ve / √(1 + σ²)`.

use std::fmt::Write as _;

use crate::error::{DdrmError, Result};
use crate::scalar::Real;

/// Defaults of the built-in linear-β schedule.
pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 2e-2;
pub const DEFAULT_TRAIN_STEPS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSchedule<T: Real = f64> {
    sigmas: Vec<T>,
}

impl<T: Real> SigmaSchedule<T> {
    /// Validates `σ₀ = 0`, finiteness and strict increase.
    pub fn new(sigmas: Vec<T>) -> Result<Self> {
        if sigmas.len() < 2 {
            return Err(DdrmError::InvalidParameter(
                "schedule needs sigma_0 and at least one level".into(),
            ));
        }
        if !sigmas[0].is_zero() {
            return Err(DdrmError::InvalidParameter(format!(
                "sigma_0 must be 0, got {}",
                sigmas[0]
            )));
        }
        if let Some(bad) = sigmas.iter().find(|s| !s.is_finite()) {
            return Err(DdrmError::InvalidParameter(format!("non-finite sigma {bad}")));
        }
        if let Some(t) = sigmas.windows(2).position(|w| w[1] <= w[0]) {
            return Err(DdrmError::InvalidParameter(format!(
                "sigmas must strictly increase (t={} -> {})",
                t,
                t + 1
            )));
        }
        Ok(Self { sigmas })
    }

    /// VE levels from VP cumulative products `ᾱ_1 … ᾱ_T`; `σ₀ = 0` is
    /// prepended.
    pub fn from_vp_alphas(alpha_bars: &[T]) -> Result<Self> {
        if let Some(bad) = alpha_bars
            .iter()
            .find(|a| !(**a > T::zero() && **a <= T::one()))
        {
            return Err(DdrmError::InvalidParameter(format!(
                "alpha_bar must lie in (0, 1], got {bad}"
            )));
        }
        if alpha_bars.windows(2).any(|w| w[1] > w[0]) {
            return Err(DdrmError::InvalidParameter(
                "alpha_bar must be non-increasing".into(),
            ));
        }
        let sigmas = std::iter::once(T::zero())
            .chain(alpha_bars.iter().map(|a| sigma_from_alpha_bar(*a)))
            .collect();
        Self::new(sigmas)
    }

    /// VP schedule with `β` linearly spaced over `[beta_min, beta_max]` and
    /// `ᾱ_t = ∏_{s≤t}(1 − β_s)`, converted to VE levels.
    pub fn linear_beta(beta_min: f64, beta_max: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0) {
            return Err(DdrmError::InvalidParameter(format!(
                "need 0 < beta_min <= beta_max < 1 and steps > 0, got {beta_min}, {beta_max}, {steps}"
            )));
        }
        let mut alpha_bar = 1.0f64;
        let alphas: Vec<T> = (0..steps)
            .map(|i| {
                let beta = if steps == 1 {
                    beta_min
                } else {
                    beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
                };
                alpha_bar *= 1.0 - beta;
                T::lit(alpha_bar)
            })
            .collect();
        Self::from_vp_alphas(&alphas)
    }

    /// Built-in 1000-step linear-β schedule (`β ∈ [1e-4, 2e-2]`).
    pub fn default_linear() -> Self {
        Self::linear_beta(DEFAULT_BETA_MIN, DEFAULT_BETA_MAX, DEFAULT_TRAIN_STEPS)
            .expect("default schedule parameters are valid")
    }

    pub fn sigmas(&self) -> &[T] {
        &self.sigmas
    }

    /// Largest index `T`.
    pub fn max_index(&self) -> usize {
        self.sigmas.len() - 1
    }

    pub fn sigma(&self, t: usize) -> T {
        self.sigmas[t]
    }

    pub fn sigma_max(&self) -> T {
        self.sigmas[self.max_index()]
    }

    /// `ᾱ_t` for `t = 0 … T`.
    pub fn alpha_bars(&self) -> Vec<T> {
        self.sigmas.iter().map(|s| to_vp_alpha(*s)).collect()
    }

    /// One σ per line, `t = 0` first.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.sigmas {
            let _ = writeln!(out, "{}", s.as_f64());
        }
        out
    }

    /// Parses [`to_text`](Self::to_text) output; blank lines and `#`
    /// comments are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let sigmas = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.parse::<f64>()
                    .map(T::lit)
                    .map_err(|e| DdrmError::InvalidParameter(format!("bad sigma '{l}': {e}")))
            })
            .collect::<Result<Vec<T>>>()?;
        Self::new(sigmas)
    }

    /// `k` uniformly spaced indices in `[1, T]`, ascending, ending at `T`.
    pub fn subsample(&self, k: usize) -> Result<Vec<usize>> {
        subsample(self.max_index(), k)
    }
}

/// Uniform stride `⌊T/k⌋` anchored so the last index is `T`.
pub fn subsample(max_index: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > max_index {
        return Err(DdrmError::InvalidParameter(format!(
            "step count {k} outside [1, {max_index}]"
        )));
    }
    let stride = max_index / k;
    let offset = max_index - stride * k;
    Ok((1..=k).map(|j| j * stride + offset).collect())
}

/// `ᾱ = 1/(1 + σ²)`.
pub fn to_vp_alpha<T: Real>(sigma: T) -> T {
    T::one() / (T::one() + sigma * sigma)
}

/// `σ = √(1/ᾱ − 1)`.
pub fn sigma_from_alpha_bar<T: Real>(alpha_bar: T) -> T {
    (T::one() / alpha_bar - T::one()).max(T::zero()).sqrt()
}

/// VE state to VP state: `x / √(1 + σ²)`.
pub fn ve_to_vp<T: Real>(x: T, sigma: T) -> T {
    x / (T::one() + sigma * sigma).sqrt()
}

/// VP state to VE state: `x · √(1 + σ²)`.
pub fn vp_to_ve<T: Real>(x: T, sigma: T) -> T {
    x * (T::one() + sigma * sigma).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn alpha_to_sigma_examples() {
        assert_eq!(sigma_from_alpha_bar(1.0f64), 0.0);
        assert!((sigma_from_alpha_bar(0.5f64) - 1.0).abs() < 1e-15);
        assert!((sigma_from_alpha_bar(0.1f64) - 3.0).abs() < 1e-14);
        let s = SigmaSchedule::<f64>::from_vp_alphas(&[0.5, 0.1]).unwrap();
        assert_eq!(s.sigmas().len(), 3);
        assert!((s.sigma(2) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn from_vp_alphas_rejects_bad_input() {
        assert!(SigmaSchedule::<f64>::from_vp_alphas(&[0.5, 0.0]).is_err());
        assert!(SigmaSchedule::<f64>::from_vp_alphas(&[1.2]).is_err());
        assert!(SigmaSchedule::<f64>::from_vp_alphas(&[0.2, 0.5]).is_err());
        // alpha_bar = 1 repeats sigma_0 = 0, which is not strictly increasing
        assert!(SigmaSchedule::<f64>::from_vp_alphas(&[1.0]).is_err());
    }

    #[test]
    fn scaling_examples() {
        assert_eq!(to_vp_alpha(0.0f64), 1.0);
        assert_eq!(ve_to_vp(0.7f64, 0.0), 0.7);
        assert!((ve_to_vp(2.0f64, 1.0) - 2.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn new_validates() {
        assert!(SigmaSchedule::new(vec![0.0, 1.0, 1.0]).is_err());
        assert!(SigmaSchedule::new(vec![0.1, 1.0]).is_err());
        assert!(SigmaSchedule::new(vec![0.0, f64::INFINITY]).is_err());
        assert!(SigmaSchedule::new(vec![0.0]).is_err());
        assert!(SigmaSchedule::new(vec![0.0, 0.5, 2.0]).is_ok());
    }

    #[test]
    fn subsample_examples() {
        assert_eq!(subsample(10, 5).unwrap(), vec![2, 4, 6, 8, 10]);
        let idx = subsample(1000, 20).unwrap();
        assert_eq!(idx, (1..=20).map(|j| j * 50).collect::<Vec<_>>());
        assert_eq!(subsample(7, 7).unwrap(), (1..=7).collect::<Vec<_>>());
        assert_eq!(subsample(10, 3).unwrap(), vec![4, 7, 10]);
        assert!(subsample(10, 0).is_err());
        assert!(subsample(10, 11).is_err());
    }

    #[test]
    fn default_schedule_shape() {
        let s = SigmaSchedule::<f64>::default_linear();
        assert_eq!(s.max_index(), 1000);
        assert_eq!(s.sigma(0), 0.0);
        // ᾱ_1 = 1 − 1e-4
        assert!((s.alpha_bars()[1] - (1.0 - 1e-4)).abs() < 1e-15);
        assert!(s.sigma_max() > 100.0);
    }

    #[test]
    fn text_roundtrip() {
        let s = SigmaSchedule::<f64>::default_linear();
        let back = SigmaSchedule::<f64>::from_text(&s.to_text()).unwrap();
        assert_eq!(back, s);
        assert!(SigmaSchedule::<f64>::from_text("0\n# c\n\n0.5\n2 # tail\n").is_ok());
        assert!(SigmaSchedule::<f64>::from_text("0\nabc\n").is_err());
    }

    proptest! {
        #[test]
        fn scaling_roundtrip(x in -1e3f64..1e3, sigma in 0.0f64..500.0) {
            let back = vp_to_ve(ve_to_vp(x, sigma), sigma);
            prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(1.0));
        }

        #[test]
        fn alpha_sigma_roundtrip(mut sig in proptest::collection::vec(1e-3f64..200.0, 1..50)) {
            sig.sort_by(f64::total_cmp);
            sig.dedup();
            let sigmas: Vec<f64> = std::iter::once(0.0).chain(sig).collect();
            let schedule = SigmaSchedule::new(sigmas).unwrap();
            let alphas = schedule.alpha_bars();
            let back = SigmaSchedule::from_vp_alphas(&alphas[1..]).unwrap();
            for (a, b) in back.sigmas().iter().zip(schedule.sigmas()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.max(1.0));
            }
        }

        #[test]
        fn subsample_ends_at_top(max in 1usize..2000, frac in 0.0f64..1.0) {
            let k = 1 + ((max - 1) as f64 * frac) as usize;
            let idx = subsample(max, k).unwrap();
            prop_assert_eq!(idx.len(), k);
            prop_assert_eq!(*idx.last().unwrap(), max);
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(idx[0] >= 1);
        }
    }
}
