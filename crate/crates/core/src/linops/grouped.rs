//! Operators of the form `(I ⊗ kᵀ)·P₁`: every output scalar is `kᵀ` applied
//! to one disjoint group of input scalars.
//!
//! Block super-resolution groups the `r×r` patches of each channel;
//! colorization groups the three channel values of each pixel. `kᵀ` has the
//! one-line SVD `[1]·[‖k‖]·Qᵀ`, where `Q` is an orthogonal Householder-based
//! matrix with first column `k/‖k‖`, so only `k` and one reflector vector are
//! stored. The group gather `P₁` and the diagonal reorder `P₂` are computed
//! from indices and never materialized.

use super::ImageShape;
use crate::error::{DdrmError, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum GroupLayout {
    /// `r×r` patches, channel-major then block row-major.
    Blocks { shape: ImageShape, factor: usize },
    /// One group per pixel; members are the channels.
    Pixels { shape: ImageShape },
}

impl GroupLayout {
    pub fn groups(&self) -> usize {
        match *self {
            GroupLayout::Blocks { shape, factor } => {
                shape.channels * (shape.height / factor) * (shape.width / factor)
            }
            GroupLayout::Pixels { shape } => shape.height * shape.width,
        }
    }

    pub fn group_size(&self) -> usize {
        match *self {
            GroupLayout::Blocks { factor, .. } => factor * factor,
            GroupLayout::Pixels { shape } => shape.channels,
        }
    }

    /// Signal index of member `e` of group `j` (planar CHW layout).
    #[inline]
    pub fn index(&self, j: usize, e: usize) -> usize {
        match *self {
            GroupLayout::Blocks { shape, factor } => {
                let (bh, bw) = (shape.height / factor, shape.width / factor);
                let c = j / (bh * bw);
                let rem = j % (bh * bw);
                let (bi, bj) = (rem / bw, rem % bw);
                let (ii, jj) = (e / factor, e % factor);
                c * shape.height * shape.width + (bi * factor + ii) * shape.width + bj * factor + jj
            }
            GroupLayout::Pixels { shape } => e * shape.height * shape.width + j,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct GroupedKernel<T> {
    layout: GroupLayout,
    kernel: Vec<T>,
    norm: T,
    reflector: Vec<T>,
    reflector_sq: T,
    negate: bool,
}

impl<T: Real> GroupedKernel<T> {
    pub fn new(layout: GroupLayout, kernel: Vec<T>) -> Result<Self> {
        if kernel.len() != layout.group_size() {
            return Err(DdrmError::Construction(format!(
                "kernel has {} taps but groups have {} members",
                kernel.len(),
                layout.group_size()
            )));
        }
        let norm = kernel.iter().map(|k| *k * *k).sum::<T>().sqrt();
        if !(norm > T::zero()) || !norm.is_finite() {
            return Err(DdrmError::Construction("kernel norm must be positive".into()));
        }
        // Householder H with v = u + sign(u₀)e₁ maps e₁ to −sign(u₀)u; using
        // Q = −sign(u₀)·H puts u in the first column without cancellation.
        let unit: Vec<T> = kernel.iter().map(|k| *k / norm).collect();
        let negate = unit[0] >= T::zero();
        let mut reflector = unit;
        reflector[0] = if negate {
            reflector[0] + T::one()
        } else {
            reflector[0] - T::one()
        };
        let reflector_sq = reflector.iter().map(|v| *v * *v).sum();
        Ok(Self {
            layout,
            kernel,
            norm,
            reflector,
            reflector_sq,
            negate,
        })
    }

    pub fn layout(&self) -> GroupLayout {
        self.layout
    }

    pub fn measured(&self) -> usize {
        self.layout.groups()
    }

    pub fn signal_len(&self) -> usize {
        self.layout.groups() * self.layout.group_size()
    }

    pub fn singular(&self) -> T {
        self.norm
    }

    /// `Q·p` in place. `Q` is symmetric, so this is also `Qᵀ·p`.
    fn reflect(&self, p: &mut [T]) {
        let two = T::lit(2.0);
        let dot: T = self.reflector.iter().zip(p.iter()).map(|(a, b)| *a * *b).sum();
        let scale = two * dot / self.reflector_sq;
        for (pi, vi) in p.iter_mut().zip(&self.reflector) {
            *pi = *pi - scale * *vi;
            if self.negate {
                *pi = -*pi;
            }
        }
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let p = self.layout.group_size();
        (0..self.layout.groups())
            .map(|j| {
                (0..p)
                    .map(|e| self.kernel[e] * x[self.layout.index(j, e)])
                    .sum()
            })
            .collect()
    }

    pub fn vt(&self, x: &[T]) -> Vec<T> {
        let (g, p) = (self.layout.groups(), self.layout.group_size());
        let mut out = vec![T::zero(); g * p];
        let mut buf = vec![T::zero(); p];
        for j in 0..g {
            for (e, b) in buf.iter_mut().enumerate() {
                *b = x[self.layout.index(j, e)];
            }
            self.reflect(&mut buf);
            out[j] = buf[0];
            for e in 1..p {
                out[g + j * (p - 1) + e - 1] = buf[e];
            }
        }
        out
    }

    pub fn v(&self, xbar: &[T]) -> Vec<T> {
        let (g, p) = (self.layout.groups(), self.layout.group_size());
        let mut out = vec![T::zero(); g * p];
        let mut buf = vec![T::zero(); p];
        for j in 0..g {
            buf[0] = xbar[j];
            for e in 1..p {
                buf[e] = xbar[g + j * (p - 1) + e - 1];
            }
            self.reflect(&mut buf);
            for (e, b) in buf.iter().enumerate() {
                out[self.layout.index(j, e)] = *b;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_indices_cover_signal_once() {
        for layout in [
            GroupLayout::Blocks {
                shape: ImageShape::new(2, 4, 6),
                factor: 2,
            },
            GroupLayout::Pixels {
                shape: ImageShape::new(3, 3, 5),
            },
        ] {
            let n = layout.groups() * layout.group_size();
            let mut seen = vec![false; n];
            for j in 0..layout.groups() {
                for e in 0..layout.group_size() {
                    let i = layout.index(j, e);
                    assert!(!seen[i]);
                    seen[i] = true;
                }
            }
            assert!(seen.into_iter().all(|s| s));
        }
    }

    #[test]
    fn reflector_first_column_is_unit_kernel() {
        for kernel in [vec![0.25; 4], vec![-1.0, 2.0, 0.5], vec![3.0]] {
            let k = GroupedKernel::new(
                GroupLayout::Pixels {
                    shape: ImageShape::new(kernel.len(), 1, 1),
                },
                kernel.clone(),
            )
            .unwrap();
            let mut e1 = vec![0.0; kernel.len()];
            e1[0] = 1.0;
            k.reflect(&mut e1);
            let norm = kernel.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (a, b) in e1.iter().zip(&kernel) {
                assert!((a - b / norm).abs() < 1e-15);
            }
        }
    }
}
