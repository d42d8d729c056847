//! Named degradation presets.

use std::fmt;
use std::str::FromStr;

use crate::error::{DdrmError, Result};
use crate::linops::{kernels, ImageShape, SvdOperator};
use crate::scalar::Real;

/// Taps of both blur presets.
pub const BLUR_TAPS: usize = 9;
/// Horizontal and vertical widths of the anisotropic Gaussian blur.
pub const ANISO_SIGMA_H: f64 = 20.0;
pub const ANISO_SIGMA_V: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Degradation {
    /// Block averaging by the given factor (2, 4, 8 or 16).
    BlockSr(usize),
    BicubicSr4,
    DeblurUniform,
    DeblurAniso,
    Colorize,
    /// Inpainting with a user-supplied mask.
    Inpaint,
    InpaintRandom50,
    Denoise,
}

impl Degradation {
    pub const ALL: [Degradation; 11] = [
        Degradation::BlockSr(2),
        Degradation::BlockSr(4),
        Degradation::BlockSr(8),
        Degradation::BlockSr(16),
        Degradation::BicubicSr4,
        Degradation::DeblurUniform,
        Degradation::DeblurAniso,
        Degradation::Colorize,
        Degradation::Inpaint,
        Degradation::InpaintRandom50,
        Degradation::Denoise,
    ];

    pub fn needs_mask(self) -> bool {
        self == Degradation::Inpaint
    }

    /// Builds the operator. `kept` lists the observed signal indices and is
    /// required for the inpainting presets.
    pub fn build<T: Real>(self, shape: ImageShape, kept: Option<&[usize]>, sv_threshold: T) -> Result<SvdOperator<T>> {
        match self {
            Degradation::BlockSr(r) => SvdOperator::block_sr(shape, r),
            Degradation::BicubicSr4 => SvdOperator::bicubic_sr(shape, 4, sv_threshold),
            Degradation::DeblurUniform => {
                let k = kernels::uniform(BLUR_TAPS);
                SvdOperator::sep_blur(shape, &k, &k, sv_threshold)
            }
            Degradation::DeblurAniso => {
                let half = BLUR_TAPS / 2;
                let row = kernels::gaussian(ANISO_SIGMA_H, half);
                let col = kernels::gaussian(ANISO_SIGMA_V, half);
                SvdOperator::sep_blur(shape, &row, &col, sv_threshold)
            }
            Degradation::Colorize => SvdOperator::colorization(shape),
            Degradation::Inpaint | Degradation::InpaintRandom50 => {
                let kept = kept.ok_or_else(|| {
                    DdrmError::InvalidParameter(format!("preset {self} needs a mask"))
                })?;
                SvdOperator::inpainting(shape.len(), kept)
            }
            Degradation::Denoise => Ok(SvdOperator::denoising(shape.len())),
        }
    }
}

impl fmt::Display for Degradation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Degradation::BlockSr(r) => write!(f, "sr{r}"),
            Degradation::BicubicSr4 => f.write_str("bicubic_sr4"),
            Degradation::DeblurUniform => f.write_str("deblur_uni"),
            Degradation::DeblurAniso => f.write_str("deblur_aniso"),
            Degradation::Colorize => f.write_str("color"),
            Degradation::Inpaint => f.write_str("inpaint"),
            Degradation::InpaintRandom50 => f.write_str("inpaint_rand50"),
            Degradation::Denoise => f.write_str("denoise"),
        }
    }
}

impl FromStr for Degradation {
    type Err = DdrmError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.to_string() == s)
            .ok_or_else(|| {
                let names: Vec<String> = Self::ALL.iter().map(ToString::to_string).collect();
                DdrmError::InvalidParameter(format!("unknown preset '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::OperatorKind;

    #[test]
    fn names_roundtrip() {
        for d in Degradation::ALL {
            assert_eq!(d.to_string().parse::<Degradation>().unwrap(), d);
        }
        assert!("sr3".parse::<Degradation>().is_err());
    }

    #[test]
    fn builds_every_preset() {
        let shape = ImageShape::square(3, 16);
        let kept: Vec<usize> = (0..shape.len()).step_by(3).collect();
        for d in Degradation::ALL {
            let op = d.build::<f64>(shape, Some(&kept), 0.0).unwrap();
            assert_eq!(op.input_len(), shape.len(), "{d}");
        }
        assert!(Degradation::Inpaint.build::<f64>(shape, None, 0.0).is_err());
        assert_eq!(
            Degradation::DeblurAniso.build::<f64>(shape, None, 0.0).unwrap().kind(),
            OperatorKind::SepBlur
        );
        assert_eq!(
            Degradation::BlockSr(16).build::<f64>(shape, None, 0.0).unwrap().output_len(),
            3
        );
    }

    #[test]
    fn uniform_blur_spreads_a_point() {
        let shape = ImageShape::square(1, 16);
        let op = Degradation::DeblurUniform.build::<f64>(shape, None, 0.0).unwrap();
        let mut x = vec![0.0; 256];
        x[8 * 16 + 8] = 1.0;
        let y = op.apply(&x).unwrap();
        let support = y.iter().filter(|v| **v > 0.0).count();
        assert_eq!(support, 81);
        assert!(y.iter().all(|v| *v == 0.0 || (v - 1.0 / 81.0).abs() < 1e-15));
    }
}
