//! Matrix-free SVD representations of the degradation operators.
//!
//! Every [`SvdOperator`] exposes `H`, `U`, `Uᵀ`, `V`, `Vᵀ` as actions on
//! vectors plus the singular values, in memory linear in the signal size
//! (the `dense` kind excepted). Signals use planar channel-major layout
//! `(C, H, W)`, row-major inside each channel.
//!
//! `apply` is computed directly from the degradation (block means, channel
//! averages, gathers, blur matrices), not through the factors, so comparing
//! it with `U·Σ·Vᵀ` is a genuine consistency check.

mod factor;
mod grouped;
pub mod kernels;
pub(crate) mod mat;
mod separable;

use std::fmt;

use crate::error::{check_len, DdrmError, Result};
use crate::scalar::Real;

pub use mat::Mat;

use factor::{full_svd, FullSvd};
use grouped::{GroupLayout, GroupedKernel};
use separable::SeparableBlur;

/// Planar image geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub const fn square(channels: usize, side: usize) -> Self {
        Self::new(channels, side, side)
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn pixels(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for ImageShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OperatorKind {
    Denoise,
    Inpaint,
    BlockSr,
    BicubicSr,
    Colorize,
    SepBlur,
    Dense,
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OperatorKind::Denoise => "denoise",
            OperatorKind::Inpaint => "inpaint",
            OperatorKind::BlockSr => "block_sr",
            OperatorKind::BicubicSr => "bicubic_sr",
            OperatorKind::Colorize => "colorize",
            OperatorKind::SepBlur => "sep_blur",
            OperatorKind::Dense => "dense",
        })
    }
}

#[derive(Debug, Clone)]
enum Repr<T> {
    Identity,
    /// spectral index -> signal index; kept entries first, both halves ascending
    Select(Vec<u32>),
    Grouped(GroupedKernel<T>),
    Separable(Box<SeparableBlur<T>>),
    Dense { h: Mat<T>, svd: FullSvd<T> },
}

/// `ȳ = Σ†Uᵀy` together with the per-index measurement noise `σ_y / s_i`
/// (`+∞` where `s_i = 0`, whose `ȳ` entries are 0 and unused).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMeasurement<T> {
    pub y_bar: Vec<T>,
    pub noise: Vec<T>,
}

/// A degradation `H = U Σ Vᵀ` held in factored, matrix-free form.
///
/// Immutable after construction; all actions take `&self`.
#[derive(Debug, Clone)]
pub struct SvdOperator<T: Real = f64> {
    kind: OperatorKind,
    n: usize,
    m: usize,
    singulars: Vec<T>,
    repr: Repr<T>,
}

impl<T: Real> SvdOperator<T> {
    /// `H = I`.
    pub fn denoising(n: usize) -> Self {
        Self {
            kind: OperatorKind::Denoise,
            n,
            m: n,
            singulars: vec![T::one(); n],
            repr: Repr::Identity,
        }
    }

    /// Keeps the scalars at `kept` (indices into the planar signal of length
    /// `n`). The measurement lists kept values in ascending index order.
    pub fn inpainting(n: usize, kept: &[usize]) -> Result<Self> {
        let mut mask = vec![false; n];
        for &i in kept {
            if i >= n {
                return Err(DdrmError::Construction(format!(
                    "mask index {i} out of range for signal of length {n}"
                )));
            }
            if mask[i] {
                return Err(DdrmError::Construction(format!("duplicate mask index {i}")));
            }
            mask[i] = true;
        }
        let kept_iter = (0..n).filter(|&i| mask[i]);
        let dropped_iter = (0..n).filter(|&i| !mask[i]);
        let perm: Vec<u32> = kept_iter.chain(dropped_iter).map(|i| i as u32).collect();
        let m = kept.len();
        let mut singulars = vec![T::zero(); n];
        singulars[..m].fill(T::one());
        Ok(Self {
            kind: OperatorKind::Inpaint,
            n,
            m,
            singulars,
            repr: Repr::Select(perm),
        })
    }

    /// Block averaging by `factor` in each axis.
    pub fn block_sr(shape: ImageShape, factor: usize) -> Result<Self> {
        if factor == 0 || !shape.height.is_multiple_of(factor) || !shape.width.is_multiple_of(factor) {
            return Err(DdrmError::Construction(format!(
                "image {}x{} is not divisible by factor {factor}",
                shape.height, shape.width
            )));
        }
        let taps = factor * factor;
        let kernel = vec![T::one() / T::from_usize_lossy(taps); taps];
        let grouped = GroupedKernel::new(GroupLayout::Blocks { shape, factor }, kernel)?;
        Ok(Self::from_grouped(OperatorKind::BlockSr, grouped))
    }

    /// Grayscale as the mean of the three color channels.
    pub fn colorization(shape: ImageShape) -> Result<Self> {
        if shape.channels != 3 {
            return Err(DdrmError::Construction(format!(
                "colorization needs 3 channels, got {}",
                shape.channels
            )));
        }
        let kernel = vec![T::one() / T::lit(3.0); 3];
        let grouped = GroupedKernel::new(GroupLayout::Pixels { shape }, kernel)?;
        Ok(Self::from_grouped(OperatorKind::Colorize, grouped))
    }

    fn from_grouped(kind: OperatorKind, grouped: GroupedKernel<T>) -> Self {
        let (n, m) = (grouped.signal_len(), grouped.measured());
        let mut singulars = vec![T::zero(); n];
        singulars[..m].fill(grouped.singular());
        debug_assert!(matches!(
            (kind, grouped.layout()),
            (OperatorKind::BlockSr, GroupLayout::Blocks { .. })
                | (OperatorKind::Colorize, GroupLayout::Pixels { .. })
        ));
        Self {
            kind,
            n,
            m,
            singulars,
            repr: Repr::Grouped(grouped),
        }
    }

    /// Zero-padded separable blur with 2-D kernel `row_kernel · col_kernelᵀ`:
    /// `col_kernel` runs down the columns, `row_kernel` along the rows.
    /// Singular values below `sv_threshold · s_max` are zeroed.
    pub fn sep_blur(
        shape: ImageShape,
        row_kernel: &[T],
        col_kernel: &[T],
        sv_threshold: T,
    ) -> Result<Self> {
        let col_axis = kernels::conv_matrix(col_kernel, shape.height)?;
        let row_axis = kernels::conv_matrix(row_kernel, shape.width)?;
        let blur = SeparableBlur::new(shape, col_axis, row_axis, sv_threshold)?;
        Ok(Self::from_separable(OperatorKind::SepBlur, blur))
    }

    /// Bicubic (`a = −0.5`) downsampling by `factor`, as a strided separable
    /// convolution.
    pub fn bicubic_sr(shape: ImageShape, factor: usize, sv_threshold: T) -> Result<Self> {
        let col_axis = kernels::bicubic_matrix(shape.height, factor)?;
        let row_axis = kernels::bicubic_matrix(shape.width, factor)?;
        let blur = SeparableBlur::new(shape, col_axis, row_axis, sv_threshold)?;
        Ok(Self::from_separable(OperatorKind::BicubicSr, blur))
    }

    fn from_separable(kind: OperatorKind, blur: SeparableBlur<T>) -> Self {
        Self {
            kind,
            n: blur.singulars().len(),
            m: blur.measured(),
            singulars: blur.singulars().to_vec(),
            repr: Repr::Separable(Box::new(blur)),
        }
    }

    /// Explicit `m×n` matrix (`m ≤ n`), factored densely. Test-scale only.
    pub fn dense(h: Mat<T>) -> Result<Self> {
        let svd = full_svd(&h)?;
        let (m, n) = (h.rows, h.cols);
        let mut singulars = svd.s.clone();
        singulars.resize(n, T::zero());
        Ok(Self {
            kind: OperatorKind::Dense,
            n,
            m,
            singulars,
            repr: Repr::Dense { h, svd },
        })
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    /// Signal dimension `n`.
    pub fn input_len(&self) -> usize {
        self.n
    }

    /// Measurement dimension `m`.
    pub fn output_len(&self) -> usize {
        self.m
    }

    /// Singular values, descending, zero-padded to length `n`.
    pub fn singulars(&self) -> &[T] {
        &self.singulars
    }

    /// Number of strictly positive singular values.
    pub fn rank(&self) -> usize {
        self.singulars.iter().take_while(|s| **s > T::zero()).count()
    }

    /// Whether any singular value was zeroed by a threshold, in which case
    /// `apply` is the truncated operator `U Σ Vᵀ`.
    pub fn is_truncated(&self) -> bool {
        matches!(&self.repr, Repr::Separable(b) if b.is_truncated())
    }

    /// `H x`.
    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        check_len("apply input", self.n, x.len())?;
        Ok(match &self.repr {
            Repr::Identity => x.to_vec(),
            Repr::Select(perm) => perm[..self.m].iter().map(|&i| x[i as usize]).collect(),
            Repr::Grouped(g) => g.apply(x),
            Repr::Separable(b) if b.is_truncated() => self.compose(x),
            Repr::Separable(b) => b.apply_direct(x),
            Repr::Dense { h, .. } => h.matvec(x),
        })
    }

    /// `U Σ Vᵀ x`, through the factors only.
    pub fn apply_via_svd(&self, x: &[T]) -> Result<Vec<T>> {
        check_len("apply input", self.n, x.len())?;
        Ok(self.compose(x))
    }

    fn compose(&self, x: &[T]) -> Vec<T> {
        let xbar = self.vt_unchecked(x);
        let scaled: Vec<T> = xbar[..self.m]
            .iter()
            .zip(&self.singulars)
            .map(|(v, s)| *v * *s)
            .collect();
        self.u_unchecked(&scaled)
    }

    /// `Vᵀ x`: signal to spectral coordinates.
    pub fn apply_vt(&self, x: &[T]) -> Result<Vec<T>> {
        check_len("Vt input", self.n, x.len())?;
        Ok(self.vt_unchecked(x))
    }

    /// `V x̄`: spectral to signal coordinates.
    pub fn apply_v(&self, xbar: &[T]) -> Result<Vec<T>> {
        check_len("V input", self.n, xbar.len())?;
        Ok(match &self.repr {
            Repr::Identity => xbar.to_vec(),
            Repr::Select(perm) => {
                let mut out = vec![T::zero(); self.n];
                for (v, &i) in xbar.iter().zip(perm) {
                    out[i as usize] = *v;
                }
                out
            }
            Repr::Grouped(g) => g.v(xbar),
            Repr::Separable(b) => b.v(xbar),
            Repr::Dense { svd, .. } => svd.v.matvec(xbar),
        })
    }

    fn vt_unchecked(&self, x: &[T]) -> Vec<T> {
        match &self.repr {
            Repr::Identity => x.to_vec(),
            Repr::Select(perm) => perm.iter().map(|&i| x[i as usize]).collect(),
            Repr::Grouped(g) => g.vt(x),
            Repr::Separable(b) => b.vt(x),
            Repr::Dense { svd, .. } => svd.v.matvec_t(x),
        }
    }

    /// `Uᵀ y`.
    pub fn apply_ut(&self, y: &[T]) -> Result<Vec<T>> {
        check_len("Ut input", self.m, y.len())?;
        Ok(match &self.repr {
            Repr::Identity | Repr::Select(_) | Repr::Grouped(_) => y.to_vec(),
            Repr::Separable(b) => b.ut(y),
            Repr::Dense { svd, .. } => svd.u.matvec_t(y),
        })
    }

    /// `U ȳ`.
    pub fn apply_u(&self, ybar: &[T]) -> Result<Vec<T>> {
        check_len("U input", self.m, ybar.len())?;
        Ok(self.u_unchecked(ybar))
    }

    fn u_unchecked(&self, ybar: &[T]) -> Vec<T> {
        match &self.repr {
            Repr::Identity | Repr::Select(_) | Repr::Grouped(_) => ybar.to_vec(),
            Repr::Separable(b) => b.u(ybar),
            Repr::Dense { svd, .. } => svd.u.matvec(ybar),
        }
    }

    /// `Σ† Uᵀ y` and the spectral noise levels `σ_y / s_i`.
    pub fn spectral_measurement(&self, y: &[T], sigma_y: T) -> Result<SpectralMeasurement<T>> {
        if !(sigma_y >= T::zero()) || !sigma_y.is_finite() {
            return Err(DdrmError::InvalidParameter(format!(
                "sigma_y must be finite and >= 0, got {sigma_y}"
            )));
        }
        let uty = self.apply_ut(y)?;
        let mut y_bar = vec![T::zero(); self.n];
        let mut noise = vec![T::infinity(); self.n];
        for (i, (u, s)) in uty.iter().zip(&self.singulars).enumerate() {
            if *s > T::zero() {
                y_bar[i] = *u / *s;
                noise[i] = sigma_y / *s;
            }
        }
        Ok(SpectralMeasurement { y_bar, noise })
    }

    /// Moore–Penrose pseudo-inverse `H† y = V Σ† Uᵀ y`.
    pub fn pseudo_inverse(&self, y: &[T]) -> Result<Vec<T>> {
        let meas = self.spectral_measurement(y, T::zero())?;
        self.apply_v(&meas.y_bar)
    }

    /// Scales every singular value by `factor`, leaving the factors and
    /// `apply` untouched. Exists only to inject faults into the
    /// verification suite.
    #[doc(hidden)]
    pub fn corrupt_singulars(&mut self, factor: T) {
        self.singulars.iter_mut().for_each(|s| *s = *s * factor);
    }
}
