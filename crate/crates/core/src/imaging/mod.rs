//! Image tensors, file I/O, measurement synthesis and masks.

mod metrics;

pub use metrics::{aggregate, psnr, ssim, PSNR_CAP_DB};

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{check_len, DdrmError, Result};
use crate::linops::{ImageShape, SvdOperator};
use crate::sampler::draw_normals;

/// Planar `(C, H, W)` image with real values, nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    shape: ImageShape,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(shape: ImageShape, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() {
            return Err(DdrmError::InvalidParameter(format!("empty image shape {shape}")));
        }
        check_len("image data", shape.len(), data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DdrmError::Numerical("image has non-finite entries".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: ImageShape, value: f64) -> Result<Self> {
        Self::new(shape, vec![value; shape.len()])
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.shape.pixels();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn clamped(&self) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    /// Decodes PNG, PPM or PGM; colour images become 3 channels, grey 1.
    /// Alpha is discarded.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(Self::from_dynamic(&image::load_from_memory(bytes)?))
    }

    fn from_dynamic(img: &DynamicImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        if img.color().has_color() {
            let rgb = img.to_rgb8();
            let shape = ImageShape::new(3, h, w);
            let mut data = vec![0.0; shape.len()];
            for (idx, px) in rgb.pixels().enumerate() {
                for c in 0..3 {
                    data[c * h * w + idx] = f64::from(px[c]) / 255.0;
                }
            }
            Self { shape, data }
        } else {
            let grey = img.to_luma8();
            let data = grey.as_raw().iter().map(|b| f64::from(*b) / 255.0).collect();
            Self {
                shape: ImageShape::new(1, h, w),
                data,
            }
        }
    }

    /// 8-bit samples in interleaved order; clamps to `[0, 1]` and rounds
    /// half away from zero.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (c, p) = (self.shape.channels, self.shape.pixels());
        let mut out = Vec::with_capacity(c * p);
        for idx in 0..p {
            for ch in 0..c {
                out.push(quantize(self.data[ch * p + idx]));
            }
        }
        out
    }

    /// PNG encoding (grey for 1 channel, RGB for 3).
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let (w, h) = (self.shape.width as u32, self.shape.height as u32);
        let bytes = self.to_bytes();
        let img = match self.shape.channels {
            1 => DynamicImage::ImageLuma8(
                image::GrayImage::from_raw(w, h, bytes).expect("buffer sized from shape"),
            ),
            3 => DynamicImage::ImageRgb8(
                image::RgbImage::from_raw(w, h, bytes).expect("buffer sized from shape"),
            ),
            other => {
                return Err(DdrmError::InvalidParameter(format!(
                    "cannot export {other}-channel image"
                )))
            }
        };
        let mut buf = Cursor::new(Vec::new());
        img.write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_png()?)?;
        Ok(())
    }
}

fn quantize(v: f64) -> u8 {
    // f64::round is half away from zero
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// `y = Hx + σ_y ε`.
pub fn degrade<R: Rng + ?Sized>(x: &ImageTensor, op: &SvdOperator<f64>, sigma_y: f64, rng: &mut R) -> Result<Vec<f64>> {
    check_len("image vs operator", op.input_len(), x.data.len())?;
    if !(sigma_y >= 0.0) || !sigma_y.is_finite() {
        return Err(DdrmError::InvalidParameter(format!("sigma_y must be >= 0, got {sigma_y}")));
    }
    let mut y = op.apply(&x.data)?;
    if sigma_y > 0.0 {
        let noise: Vec<f64> = draw_normals(rng, y.len());
        for (v, z) in y.iter_mut().zip(noise) {
            *v += sigma_y * z;
        }
    }
    Ok(y)
}

/// Seeded random mask dropping `⌊P/2⌋` of the `P` pixel positions.
/// Returns the kept pixel indices, ascending.
pub fn random_half_mask<R: Rng + ?Sized>(pixels: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pixels).collect();
    idx.shuffle(rng);
    let mut kept = idx.split_off(pixels / 2);
    kept.sort_unstable();
    kept
}

/// Kept pixel indices from a mask image (any nonzero channel = dropped).
pub fn mask_from_image(mask: &ImageTensor, height: usize, width: usize) -> Result<Vec<usize>> {
    let s = mask.shape();
    if (s.height, s.width) != (height, width) {
        return Err(DdrmError::InvalidParameter(format!(
            "mask is {}x{}, image is {height}x{width}",
            s.height, s.width
        )));
    }
    let p = s.pixels();
    Ok((0..p)
        .filter(|&i| (0..s.channels).all(|c| mask.data[c * p + i] == 0.0))
        .collect())
}

/// Expands kept pixel positions to signal indices over all channels.
pub fn pixels_to_signal(kept_pixels: &[usize], shape: ImageShape) -> Vec<usize> {
    let p = shape.pixels();
    (0..shape.channels)
        .flat_map(|c| kept_pixels.iter().map(move |i| c * p + i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::chain_rng;

    fn ramp(shape: ImageShape) -> ImageTensor {
        let n = shape.len();
        ImageTensor::new(shape, (0..n).map(|i| (i % 256) as f64 / 255.0).collect()).unwrap()
    }

    #[test]
    fn new_validates() {
        let s = ImageShape::new(1, 2, 2);
        assert!(ImageTensor::new(s, vec![0.0; 3]).is_err());
        assert!(ImageTensor::new(s, vec![0.0, 0.0, f64::NAN, 0.0]).is_err());
        assert!(ImageTensor::new(ImageShape::new(1, 0, 2), vec![]).is_err());
    }

    #[test]
    fn png_roundtrip_within_quantization() {
        for shape in [ImageShape::new(3, 5, 7), ImageShape::new(1, 4, 9)] {
            let mut rng = chain_rng(1);
            let data: Vec<f64> = (0..shape.len()).map(|_| rng.random::<f64>()).collect();
            let img = ImageTensor::new(shape, data).unwrap();
            let back = ImageTensor::from_bytes(&img.to_png().unwrap()).unwrap();
            assert_eq!(back.shape(), shape);
            let err = img.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1.0 / 510.0 + 1e-15, "{err}");
        }
    }

    #[test]
    fn export_rounds_half_away_and_clamps() {
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(1.5 / 255.0), 2);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(7.0), 255);
    }

    #[test]
    fn loads_pnm() {
        let dir = tempfile::tempdir().unwrap();
        let pgm = dir.path().join("a.pgm");
        std::fs::write(&pgm, b"P5\n2 1\n255\n\x00\xff").unwrap();
        let img = ImageTensor::load(&pgm).unwrap();
        assert_eq!(img.shape(), ImageShape::new(1, 1, 2));
        assert_eq!(img.data(), &[0.0, 1.0]);
        let ppm = dir.path().join("b.ppm");
        std::fs::write(&ppm, b"P6\n1 1\n255\n\x33\x66\x99").unwrap();
        let img = ImageTensor::load(&ppm).unwrap();
        assert_eq!(img.shape(), ImageShape::new(3, 1, 1));
        assert_eq!(img.data(), &[0.2, 0.4, 0.6]);
    }

    #[test]
    fn png_export_is_deterministic() {
        let img = ramp(ImageShape::new(3, 8, 8));
        assert_eq!(img.to_png().unwrap(), img.to_png().unwrap());
        assert!(ImageTensor::filled(ImageShape::new(2, 2, 2), 0.0).unwrap().to_png().is_err());
    }

    #[test]
    fn noiseless_degrade_is_apply() {
        let shape = ImageShape::new(3, 8, 8);
        let img = ramp(shape);
        let op = SvdOperator::block_sr(shape, 4).unwrap();
        let y = degrade(&img, &op, 0.0, &mut chain_rng(0)).unwrap();
        assert_eq!(y, op.apply(img.data()).unwrap());
        let small = SvdOperator::denoising(3);
        assert!(degrade(&img, &small, 0.0, &mut chain_rng(0)).is_err());
    }

    #[test]
    fn degrade_noise_variance() {
        let shape = ImageShape::new(1, 1000, 1000);
        let img = ImageTensor::filled(shape, 0.5).unwrap();
        let op = SvdOperator::denoising(shape.len());
        let y = degrade(&img, &op, 0.1, &mut chain_rng(4)).unwrap();
        let n = y.len() as f64;
        let mean = y.iter().map(|v| v - 0.5).sum::<f64>() / n;
        let var = y.iter().map(|v| (v - 0.5 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var / 0.01 - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn half_mask_sizes() {
        for p in [1usize, 2, 7, 64, 4096] {
            let kept = random_half_mask(p, &mut chain_rng(p as u64));
            assert_eq!(kept.len(), p - p / 2);
            assert!(kept.windows(2).all(|w| w[0] < w[1]));
        }
        assert_eq!(random_half_mask(100, &mut chain_rng(9)), random_half_mask(100, &mut chain_rng(9)));
    }

    #[test]
    fn mask_image_semantics() {
        let mask = ImageTensor::new(ImageShape::new(1, 2, 2), vec![0.0, 1.0, 0.0, 0.2]).unwrap();
        assert_eq!(mask_from_image(&mask, 2, 2).unwrap(), vec![0, 2]);
        assert!(mask_from_image(&mask, 2, 3).is_err());
        let sig = pixels_to_signal(&[0, 2], ImageShape::new(3, 2, 2));
        assert_eq!(sig, vec![0, 2, 4, 6, 8, 10]);
    }
}
