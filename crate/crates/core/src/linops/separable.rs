//! Separable (optionally strided) zero-padded blur, `H = A_r ⊗ A_c` per
//! channel.
//!
//! Only the per-axis matrices and their SVDs are stored. Every factor action
//! uses the reshape identity: a Kronecker product applied to a vectorized
//! image equals `L·X·Nᵀ` on the image itself. The spectral ordering is a
//! single index permutation over core positions `(channel, a, b)`.

use super::factor::{full_svd, FullSvd};
use super::mat::Mat;
use super::ImageShape;
use crate::error::{DdrmError, Result};
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub(crate) struct SeparableBlur<T> {
    shape: ImageShape,
    /// acts on image columns (height axis), `m_h × H`
    col_axis: Mat<T>,
    col_svd: FullSvd<T>,
    /// acts on image rows (width axis), `m_w × W`
    row_axis: Mat<T>,
    row_svd: FullSvd<T>,
    /// spectral index -> core position `c·H·W + a·W + b`
    order: Vec<u32>,
    singulars: Vec<T>,
    truncated: bool,
}

impl<T: Real> SeparableBlur<T> {
    /// `col_axis` is applied down the columns, `row_axis` along the rows:
    /// `B_c = A_col · X_c · A_rowᵀ`. Singular values below
    /// `threshold · s_max` are zeroed.
    pub fn new(shape: ImageShape, col_axis: Mat<T>, row_axis: Mat<T>, threshold: T) -> Result<Self> {
        if col_axis.cols != shape.height || row_axis.cols != shape.width {
            return Err(DdrmError::Construction(format!(
                "axis matrices {}x{} / {}x{} do not match image {}x{}",
                col_axis.rows, col_axis.cols, row_axis.rows, row_axis.cols, shape.height, shape.width
            )));
        }
        if !(threshold >= T::zero()) {
            return Err(DdrmError::Construction("sv threshold must be >= 0".into()));
        }
        let col_svd = full_svd(&col_axis)?;
        let row_svd = full_svd(&row_axis)?;
        let (h, w) = (shape.height, shape.width);
        let (mh, mw) = (col_axis.rows, row_axis.rows);
        let plane = h * w;

        let mut measured: Vec<(u32, T)> = Vec::with_capacity(shape.channels * mh * mw);
        let mut unmeasured: Vec<u32> = Vec::with_capacity(shape.len() - shape.channels * mh * mw);
        for c in 0..shape.channels {
            for a in 0..h {
                for b in 0..w {
                    let pos = (c * plane + a * w + b) as u32;
                    if a < mh && b < mw {
                        measured.push((pos, col_svd.s[a] * row_svd.s[b]));
                    } else {
                        unmeasured.push(pos);
                    }
                }
            }
        }
        // stable: equal values keep construction order
        measured.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap_or(std::cmp::Ordering::Equal));

        let smax = measured.first().map(|p| p.1).unwrap_or_else(T::zero);
        let cutoff = threshold * smax;
        let mut truncated = false;
        let mut singulars = Vec::with_capacity(shape.len());
        for &(_, s) in &measured {
            if s < cutoff {
                truncated = true;
                singulars.push(T::zero());
            } else {
                singulars.push(s);
            }
        }
        singulars.resize(shape.len(), T::zero());
        let order = measured
            .iter()
            .map(|p| p.0)
            .chain(unmeasured)
            .collect();

        Ok(Self {
            shape,
            col_axis,
            col_svd,
            row_axis,
            row_svd,
            order,
            singulars,
            truncated,
        })
    }

    pub fn measured(&self) -> usize {
        self.shape.channels * self.col_axis.rows * self.row_axis.rows
    }

    pub fn singulars(&self) -> &[T] {
        &self.singulars
    }

    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    fn planes<'a>(&self, v: &'a [T], rows: usize, cols: usize) -> impl Iterator<Item = Mat<T>> + 'a {
        v.chunks_exact(rows * cols).map(move |chunk| Mat {
            rows,
            cols,
            data: chunk.to_vec(),
        })
    }

    /// Direct blur `A_col · X · A_rowᵀ` per channel.
    pub fn apply_direct(&self, x: &[T]) -> Vec<T> {
        let (h, w) = (self.shape.height, self.shape.width);
        self.planes(x, h, w)
            .flat_map(|plane| self.col_axis.matmul(&plane).matmul_t(&self.row_axis).data)
            .collect()
    }

    /// measurement-core index of the measured core position `pos`
    #[inline]
    fn measurement_index(&self, pos: usize) -> usize {
        let plane = self.shape.height * self.shape.width;
        let (c, rem) = (pos / plane, pos % plane);
        let (a, b) = (rem / self.shape.width, rem % self.shape.width);
        let (mh, mw) = (self.col_axis.rows, self.row_axis.rows);
        c * mh * mw + a * mw + b
    }

    pub fn vt(&self, x: &[T]) -> Vec<T> {
        let (h, w) = (self.shape.height, self.shape.width);
        let core: Vec<T> = self
            .planes(x, h, w)
            .flat_map(|plane| self.col_svd.v.t_matmul(&plane).matmul(&self.row_svd.v).data)
            .collect();
        self.order.iter().map(|&p| core[p as usize]).collect()
    }

    pub fn v(&self, xbar: &[T]) -> Vec<T> {
        let (h, w) = (self.shape.height, self.shape.width);
        let mut core = vec![T::zero(); xbar.len()];
        for (i, &p) in self.order.iter().enumerate() {
            core[p as usize] = xbar[i];
        }
        self.planes(&core, h, w)
            .flat_map(|plane| self.col_svd.v.matmul(&plane).matmul_t(&self.row_svd.v).data)
            .collect()
    }

    pub fn ut(&self, y: &[T]) -> Vec<T> {
        let (mh, mw) = (self.col_axis.rows, self.row_axis.rows);
        let core: Vec<T> = self
            .planes(y, mh, mw)
            .flat_map(|plane| self.col_svd.u.t_matmul(&plane).matmul(&self.row_svd.u).data)
            .collect();
        self.order[..self.measured()]
            .iter()
            .map(|&p| core[self.measurement_index(p as usize)])
            .collect()
    }

    pub fn u(&self, ybar: &[T]) -> Vec<T> {
        let (mh, mw) = (self.col_axis.rows, self.row_axis.rows);
        let mut core = vec![T::zero(); ybar.len()];
        for (i, &p) in self.order[..self.measured()].iter().enumerate() {
            core[self.measurement_index(p as usize)] = ybar[i];
        }
        self.planes(&core, mh, mw)
            .flat_map(|plane| self.col_svd.u.matmul(&plane).matmul_t(&self.row_svd.u).data)
            .collect()
    }
}
