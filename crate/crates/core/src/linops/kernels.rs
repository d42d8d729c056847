//! One-dimensional blur kernels and their zero-padded matrix forms.

use super::mat::Mat;
use crate::error::{DdrmError, Result};
use crate::scalar::Real;

/// Box kernel of `len` taps, each `1/len`.
pub fn uniform<T: Real>(len: usize) -> Vec<T> {
    vec![T::one() / T::from_usize_lossy(len); len]
}

/// Sampled Gaussian over integer offsets `-half..=half`, normalized to sum 1.
pub fn gaussian<T: Real>(sigma: f64, half: usize) -> Vec<T> {
    let taps: Vec<f64> = (-(half as i64)..=half as i64)
        .map(|t| (-(t as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|v| T::lit(v / total)).collect()
}

/// Keys cubic convolution kernel with `a = -0.5` (Catmull-Rom).
pub fn bicubic_weight(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x.powi(3) - (A + 3.0) * x.powi(2) + 1.0
    } else if x < 2.0 {
        A * x.powi(3) - 5.0 * A * x.powi(2) + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

/// Zero-padded "same" convolution matrix: `out[i] = Σ_t k[t]·x[i + c − t]`
/// with `c = len/2`.
pub fn conv_matrix<T: Real>(kernel: &[T], size: usize) -> Result<Mat<T>> {
    if kernel.is_empty() {
        return Err(DdrmError::Construction("empty kernel".into()));
    }
    if kernel.len() > size {
        return Err(DdrmError::Construction(format!(
            "kernel of {} taps is longer than the axis ({size})",
            kernel.len()
        )));
    }
    let center = (kernel.len() / 2) as i64;
    Ok(Mat::from_fn(size, size, |i, j| {
        let t = i as i64 - j as i64 + center;
        if t >= 0 && (t as usize) < kernel.len() {
            kernel[t as usize]
        } else {
            T::zero()
        }
    }))
}

/// Strided bicubic downsampling by `factor` along one axis of length `size`.
///
/// Output sample `i` is centred at input coordinate `(i + ½)·r − ½`; taps
/// whose support falls outside the axis are dropped and the surviving row is
/// renormalized to sum 1. With `factor == 1` this is the identity.
pub fn bicubic_matrix<T: Real>(size: usize, factor: usize) -> Result<Mat<T>> {
    if factor == 0 || !size.is_multiple_of(factor) {
        return Err(DdrmError::Construction(format!(
            "axis length {size} is not divisible by factor {factor}"
        )));
    }
    let out = size / factor;
    let r = factor as f64;
    let mut rows = Vec::with_capacity(out * size);
    for i in 0..out {
        let center = (i as f64 + 0.5) * r - 0.5;
        let mut row: Vec<f64> = (0..size)
            .map(|j| bicubic_weight((j as f64 - center) / r) / r)
            .collect();
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|w| *w /= total);
        rows.extend(row.into_iter().map(T::lit));
    }
    Ok(Mat {
        rows: out,
        cols: size,
        data: rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bicubic_weight_known_values() {
        assert_eq!(bicubic_weight(0.0), 1.0);
        assert_eq!(bicubic_weight(1.0), 0.0);
        assert_eq!(bicubic_weight(2.0), 0.0);
        assert!((bicubic_weight(0.5) - 0.5625).abs() < 1e-15);
        assert!((bicubic_weight(1.5) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn bicubic_rows_sum_to_one_and_have_4r_support() {
        let m: Mat<f64> = bicubic_matrix(32, 4).unwrap();
        for i in 0..m.rows {
            let row = &m.data[i * m.cols..(i + 1) * m.cols];
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
        // interior row: 4r = 16 nonzero taps
        let mid = &m.data[4 * m.cols..5 * m.cols];
        assert_eq!(mid.iter().filter(|w| w.abs() > 0.0).count(), 16);
    }

    #[test]
    fn bicubic_identity_at_factor_one() {
        let m: Mat<f64> = bicubic_matrix(6, 1).unwrap();
        assert_eq!(m, Mat::identity(6));
    }

    #[test]
    fn conv_matrix_identity_kernel() {
        let m: Mat<f64> = conv_matrix(&[1.0], 5).unwrap();
        assert_eq!(m, Mat::identity(5));
        assert!(conv_matrix::<f64>(&[0.5; 6], 5).is_err());
    }

    #[test]
    fn gaussian_is_normalized_and_symmetric() {
        let g: Vec<f64> = gaussian(1.0, 4);
        assert_eq!(g.len(), 9);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for t in 0..4 {
            assert_eq!(g[t], g[8 - t]);
        }
    }
}
