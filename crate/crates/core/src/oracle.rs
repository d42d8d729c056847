//! Brute-force references for tests and the `verify` command.
//!
//! Nothing here shares code with the structured operators: the dense SVD is
//! a hand-written one-sided Jacobi iteration over a matrix assembled by
//! probing the operator with basis vectors.

use crate::error::{DdrmError, Result};
use crate::linops::{Mat, SvdOperator};
use crate::scalar::Real;

/// Size guard for [`dense_svd`] and [`probe_dense`].
pub const MAX_DENSE_ENTRIES: usize = 1_000_000;

/// Assembles `H` column by column as `H e_j`.
pub fn probe_dense<T: Real>(op: &SvdOperator<T>) -> Result<Mat<T>> {
    let (m, n) = (op.output_len(), op.input_len());
    guard(m, n)?;
    let mut h = Mat::zeros(m, n);
    let mut basis = vec![T::zero(); n];
    for j in 0..n {
        basis[j] = T::one();
        let col = op.apply(&basis)?;
        for (i, v) in col.into_iter().enumerate() {
            h.set(i, j, v);
        }
        basis[j] = T::zero();
    }
    Ok(h)
}

fn guard(m: usize, n: usize) -> Result<()> {
    if m.saturating_mul(n) > MAX_DENSE_ENTRIES {
        return Err(DdrmError::InvalidParameter(format!(
            "dense oracle limited to {MAX_DENSE_ENTRIES} entries, got {m}x{n}"
        )));
    }
    Ok(())
}

/// Thin SVD `H = U diag(s) Vᵀ` with `k = min(m, n)` columns in `U` and `V`.
#[derive(Debug, Clone)]
pub struct DenseSvd<T> {
    pub u: Mat<T>,
    pub s: Vec<T>,
    pub v: Mat<T>,
}

impl<T: Real> DenseSvd<T> {
    pub fn reconstruct(&self) -> Mat<T> {
        let k = self.s.len();
        let us = Mat::from_fn(self.u.rows, k, |i, j| self.u.get(i, j) * self.s[j]);
        us.matmul_t(&self.v)
    }
}

/// One-sided (Hestenes) Jacobi SVD. Singular values are returned descending.
pub fn dense_svd<T: Real>(h: &Mat<T>) -> Result<DenseSvd<T>> {
    let (m, n) = (h.rows, h.cols);
    guard(m, n)?;
    let transposed = m < n;
    let b = if transposed { h.transpose() } else { h.clone() };
    let k = b.cols;
    if k == 0 || b.rows == 0 {
        return Ok(DenseSvd {
            u: Mat::zeros(m, 0),
            s: Vec::new(),
            v: Mat::zeros(n, 0),
        });
    }

    // column-major copies keep the rotations cache friendly
    let mut cols: Vec<Vec<T>> = (0..k).map(|j| b.column(j)).collect();
    let mut w: Vec<Vec<T>> = (0..k)
        .map(|j| (0..k).map(|i| if i == j { T::one() } else { T::zero() }).collect())
        .collect();

    let eps = T::epsilon();
    let mut converged = false;
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..k {
            for q in (p + 1)..k {
                let alpha: T = cols[p].iter().map(|v| *v * *v).sum();
                let beta: T = cols[q].iter().map(|v| *v * *v).sum();
                let gamma: T = cols[p].iter().zip(&cols[q]).map(|(a, b)| *a * *b).sum();
                if gamma.is_zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut w, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(DdrmError::Numerical("Jacobi SVD did not converge".into()));
    }

    let norms: Vec<T> = cols
        .iter()
        .map(|c| c.iter().map(|v| *v * *v).sum::<T>().sqrt())
        .collect();
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap_or(std::cmp::Ordering::Equal));

    let left = Mat::from_fn(cols[0].len(), k, |i, j| {
        let src = idx[j];
        if norms[src] > T::zero() {
            cols[src][i] / norms[src]
        } else {
            T::zero()
        }
    });
    let right = Mat::from_fn(k, k, |i, j| w[idx[j]][i]);
    let s: Vec<T> = idx.iter().map(|&i| norms[i]).collect();
    let (u, v) = if transposed { (right, left) } else { (left, right) };
    Ok(DenseSvd { u, s, v })
}

fn rotate<T: Real>(cols: &mut [Vec<T>], p: usize, q: usize, c: T, s: T) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (a, b) in cp.iter_mut().zip(cq.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// Sorted singular values of `op` computed from its probed dense matrix,
/// zero-padded to the signal length.
pub fn reference_singulars<T: Real>(op: &SvdOperator<T>) -> Result<Vec<T>> {
    let mut s = dense_svd(&probe_dense(op)?)?.s;
    s.resize(op.input_len(), T::zero());
    Ok(s)
}

/// Exact posterior of `x | y` for `y = Hx + σ_y z`, `x ~ N(μ₀, τ²I)`, in
/// spectral coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DensePosterior<T> {
    pub mean: Vec<T>,
    pub variance: Vec<T>,
}

impl<T: Real> DensePosterior<T> {
    /// Posterior mean mapped back to signal space.
    pub fn signal_mean(&self, op: &SvdOperator<T>) -> Result<Vec<T>> {
        op.apply_v(&self.mean)
    }
}

pub fn gaussian_posterior<T: Real>(
    op: &SvdOperator<T>,
    y: &[T],
    sigma_y: T,
    prior_mean: &[T],
    tau: T,
) -> Result<DensePosterior<T>> {
    if !(tau > T::zero()) {
        return Err(DdrmError::InvalidParameter(format!("tau must be > 0, got {tau}")));
    }
    let meas = op.spectral_measurement(y, sigma_y)?;
    let mu_bar = op.apply_vt(prior_mean)?;
    let tau2 = tau * tau;
    let mut mean = Vec::with_capacity(op.input_len());
    let mut variance = Vec::with_capacity(op.input_len());
    for (i, s) in op.singulars().iter().enumerate() {
        if *s > T::zero() && sigma_y.is_zero() {
            mean.push(meas.y_bar[i]);
            variance.push(T::zero());
        } else if *s > T::zero() {
            let lik = *s * *s / (sigma_y * sigma_y);
            let precision = T::one() / tau2 + lik;
            mean.push((mu_bar[i] / tau2 + meas.y_bar[i] * lik) / precision);
            variance.push(T::one() / precision);
        } else {
            mean.push(mu_bar[i]);
            variance.push(tau2);
        }
    }
    Ok(DensePosterior { mean, variance })
}

/// Streaming per-coordinate moments (Welford).
#[derive(Debug, Clone)]
pub struct McStats {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl McStats {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn push<T: Real>(&mut self, sample: &[T]) {
        debug_assert_eq!(sample.len(), self.mean.len());
        self.count += 1;
        let k = self.count as f64;
        for ((mu, m2), x) in self.mean.iter_mut().zip(&mut self.m2).zip(sample) {
            let x = x.as_f64();
            let delta = x - *mu;
            *mu += delta / k;
            *m2 += delta * (x - *mu);
        }
    }

    /// Folds in statistics gathered separately (Chan et al. pairwise update).
    pub fn merge(&mut self, other: &McStats) {
        assert_eq!(self.mean.len(), other.mean.len(), "dimension mismatch");
        if other.count == 0 {
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let total = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / total;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / total;
        }
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn means(&self) -> &[f64] {
        &self.mean
    }

    /// Unbiased sample variances; requires at least two samples.
    pub fn variances(&self) -> Result<Vec<f64>> {
        if self.count < 2 {
            return Err(DdrmError::InvalidParameter(
                "variance needs at least two samples".into(),
            ));
        }
        let d = (self.count - 1) as f64;
        Ok(self.m2.iter().map(|v| v / d).collect())
    }

    pub fn std_errors(&self) -> Result<Vec<f64>> {
        let n = self.count as f64;
        Ok(self.variances()?.into_iter().map(|v| (v / n).sqrt()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, Normal};

    fn random_mat(rows: usize, cols: usize, seed: u64) -> Mat<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_has_unit_singulars() {
        let svd = dense_svd(&Mat::<f64>::identity(4)).unwrap();
        assert_eq!(svd.s, vec![1.0; 4]);
    }

    #[test]
    fn averaging_row() {
        let h = Mat::from_fn(1, 4, |_, _| 0.25);
        let svd = dense_svd(&h).unwrap();
        assert_eq!(svd.s.len(), 1);
        assert!((svd.s[0] - 0.5f64).abs() < 1e-15);
    }

    #[test]
    fn random_reconstruction() {
        for (r, c, seed) in [(6, 10, 1), (10, 6, 2), (7, 7, 3)] {
            let h = random_mat(r, c, seed);
            let svd = dense_svd(&h).unwrap();
            let rec = svd.reconstruct();
            let err = rec
                .data
                .iter()
                .zip(&h.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-9, "{r}x{c}: {err}");
            assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn size_guard() {
        let h = Mat::<f64>::zeros(1001, 1000);
        assert!(dense_svd(&h).is_err());
    }

    #[test]
    fn posterior_hand_values() {
        // tau=1, sigma_y=1, s=1, prior mean 0, ybar=2 -> mean 1, var 0.5
        let op = SvdOperator::<f64>::denoising(1);
        let post = gaussian_posterior(&op, &[2.0], 1.0, &[0.0], 1.0).unwrap();
        assert!((post.mean[0] - 1.0).abs() < 1e-15);
        assert!((post.variance[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn posterior_limits() {
        let op = SvdOperator::<f64>::denoising(3);
        let prior = [0.2, -0.1, 0.4];
        let y = [1.0, 2.0, -3.0];
        let vague = gaussian_posterior(&op, &y, 1e9, &prior, 1.0).unwrap();
        for (m, p) in vague.mean.iter().zip(&prior) {
            assert!((m - p).abs() < 1e-6);
        }
        let sharp = gaussian_posterior(&op, &y, 1e-9, &prior, 1.0).unwrap();
        for (m, v) in sharp.mean.iter().zip(&y) {
            assert!((m - v).abs() < 1e-6);
        }
        assert!(gaussian_posterior(&op, &y, 1.0, &prior, 0.0).is_err());
    }

    #[test]
    fn posterior_null_space_keeps_prior() {
        let op = SvdOperator::<f64>::inpainting(4, &[1, 2]).unwrap();
        let post = gaussian_posterior(&op, &[1.0, 1.0], 0.1, &[0.5; 4], 2.0).unwrap();
        assert_eq!(&post.variance[2..], &[4.0, 4.0]);
        assert_eq!(&post.mean[2..], &[0.5, 0.5]);
    }

    /// Signal-space dense solve of the same posterior; compares through V.
    #[test]
    fn posterior_matches_dense_solve() {
        let shape = crate::linops::ImageShape::square(1, 8);
        let op = SvdOperator::<f64>::block_sr(shape, 2).unwrap();
        let n = op.input_len();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let y: Vec<f64> = (0..op.output_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mu: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
        let (sigma_y, tau) = (0.3, 0.7);

        let h = probe_dense(&op).unwrap();
        let hd = nalgebra::DMatrix::from_row_slice(h.rows, h.cols, &h.data);
        let precision = nalgebra::DMatrix::<f64>::identity(n, n) / (tau * tau)
            + hd.transpose() * &hd / (sigma_y * sigma_y);
        let rhs = nalgebra::DVector::from_column_slice(&mu) / (tau * tau)
            + hd.transpose() * nalgebra::DVector::from_column_slice(&y) / (sigma_y * sigma_y);
        let dense_mean = precision.lu().solve(&rhs).unwrap();

        let post = gaussian_posterior(&op, &y, sigma_y, &mu, tau).unwrap();
        let spectral = post.signal_mean(&op).unwrap();
        for (a, b) in spectral.iter().zip(dense_mean.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn mc_stats_basic() {
        let mut st = McStats::new(1);
        for _ in 0..5 {
            st.push(&[3.5f64]);
        }
        assert_eq!(st.means(), &[3.5]);
        assert_eq!(st.variances().unwrap(), vec![0.0]);

        let mut st = McStats::new(1);
        st.push(&[0.0f64]);
        assert!(st.variances().is_err());
        st.push(&[2.0f64]);
        assert_eq!(st.means(), &[1.0]);
        assert_eq!(st.variances().unwrap(), vec![2.0]);
    }

    #[test]
    fn mc_stats_seeded_normal() {
        let mut rng = ChaCha20Rng::seed_from_u64(2024);
        let dist = Normal::new(3.0, 2.0).unwrap();
        let mut st = McStats::new(1);
        for _ in 0..100_000 {
            st.push(&[dist.sample(&mut rng)]);
        }
        assert!((st.means()[0] - 3.0).abs() < 0.03);
        assert!((st.variances().unwrap()[0] / 4.0 - 1.0).abs() < 0.03);
        assert!(st.std_errors().unwrap()[0] < 0.01);
    }
}
