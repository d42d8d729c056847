use super::ImageTensor;
use crate::error::{DdrmError, Result};

pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_shape(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(DdrmError::InvalidParameter(format!(
            "image shapes differ: {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `10·log₁₀(1/MSE)` for unit peak; 100 dB once MSE drops below 1e-10.
pub fn psnr(x: &ImageTensor, reference: &ImageTensor) -> Result<f64> {
    same_shape(x, reference)?;
    let n = x.data().len() as f64;
    let mse = x
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse < 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> [f64; 2 * SSIM_RADIUS + 1] {
    let mut w = [0.0; 2 * SSIM_RADIUS + 1];
    for (k, v) in w.iter_mut().enumerate() {
        let d = k as f64 - SSIM_RADIUS as f64;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Valid-mode separable filtering of an `h×w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let k = win.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = win.iter().enumerate().map(|(t, wt)| wt * plane[r * w + c + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = win.iter().enumerate().map(|(t, wt)| wt * rows[(r + t) * ow + c]).sum();
        }
    }
    out
}

/// Single-scale SSIM: 11×11 Gaussian window (σ = 1.5), `K₁ = 0.01`,
/// `K₂ = 0.03`, `L = 1`, valid positions only, averaged per channel and
/// then over channels.
pub fn ssim(x: &ImageTensor, reference: &ImageTensor) -> Result<f64> {
    same_shape(x, reference)?;
    let s = x.shape();
    let k = 2 * SSIM_RADIUS + 1;
    if s.height < k || s.width < k {
        return Err(DdrmError::InvalidParameter(format!(
            "SSIM needs both sides >= {k}, got {}x{}",
            s.height, s.width
        )));
    }
    let win = gaussian_window();
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let mut total = 0.0;
    for c in 0..s.channels {
        let (a, b) = (x.channel(c), reference.channel(c));
        let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| f(*p, *q)).collect() };
        let mu_a = filter_valid(a, s.height, s.width, &win);
        let mu_b = filter_valid(b, s.height, s.width, &win);
        let aa = filter_valid(&prod(&|p, _| p * p), s.height, s.width, &win);
        let bb = filter_valid(&prod(&|_, q| q * q), s.height, s.width, &win);
        let ab = filter_valid(&prod(&|p, q| p * q), s.height, s.width, &win);
        let count = mu_a.len() as f64;
        let mut acc = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let (va, vb, cov) = (aa[i] - ma * ma, bb[i] - mb * mb, ab[i] - ma * mb);
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += acc / count;
    }
    Ok(total / s.channels as f64)
}

/// Per-pixel mean and `std_scale`-scaled sample standard deviation.
pub fn aggregate(samples: &[ImageTensor], std_scale: f64) -> Result<(ImageTensor, ImageTensor)> {
    if samples.len() < 2 {
        return Err(DdrmError::InvalidParameter(format!(
            "aggregation needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let shape = samples[0].shape();
    for s in &samples[1..] {
        same_shape(&samples[0], s)?;
    }
    let k = samples.len() as f64;
    let mut mean = vec![0.0; shape.len()];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s.data()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k);
    let mut var = vec![0.0; shape.len()];
    for s in samples {
        for ((acc, v), m) in var.iter_mut().zip(s.data()).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    let std = var.iter().map(|v| std_scale * (v / (k - 1.0)).sqrt()).collect();
    Ok((ImageTensor::new(shape, mean)?, ImageTensor::new(shape, std)?))
}
