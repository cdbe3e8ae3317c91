//! im2col / col2im kernels for strided 2-D convolutions.

use crate::nn::tensor::Scalar;

/// Geometry of a convolution mapping `[c, h, w]` to `[_, ho, wo]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Geometry {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl Geometry {
    pub fn patch_len(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn out_len(&self) -> usize {
        self.ho * self.wo
    }

    #[inline]
    fn source(&self, o: usize, kk: usize, n: usize) -> Option<usize> {
        let p = (o * self.stride + kk).checked_sub(self.pad)?;
        (p < n).then_some(p)
    }

    /// Output indices `lo..hi` whose tap `kk` lands inside `0..n`.
    #[inline]
    fn valid(&self, kk: usize, n: usize, outs: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kk).div_ceil(self.stride);
        let hi = if n + self.pad > kk { (n + self.pad - kk - 1) / self.stride + 1 } else { 0 };
        (lo.min(outs), hi.min(outs).max(lo.min(outs)))
    }

    /// Unrolls patches of `x` (`[c, h, w]`) into `cols` (`[c·k·k, ho·wo]`,
    /// rows `ld` apart so several samples can share one matrix).
    pub fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T], ld: usize) {
        let out = self.out_len();
        debug_assert_eq!(x.len(), self.c * self.h * self.w);
        debug_assert!(cols.len() >= (self.patch_len() - 1) * ld + out);
        for c in 0..self.c {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let dst = &mut cols[row * ld..row * ld + out];
                    let (lo, hi) = self.valid(kj, self.w, self.wo);
                    for oi in 0..self.ho {
                        let line = &mut dst[oi * self.wo..(oi + 1) * self.wo];
                        match self.source(oi, ki, self.h) {
                            None => line.fill(T::zero()),
                            Some(i) => {
                                let src = &plane[i * self.w..(i + 1) * self.w];
                                line[..lo].fill(T::zero());
                                line[hi..].fill(T::zero());
                                let base = lo * self.stride + kj - self.pad;
                                for (n, v) in line[lo..hi].iter_mut().enumerate() {
                                    *v = src[base + n * self.stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: scatters and accumulates `cols` into `x`.
    pub fn col2im<T: Scalar>(&self, cols: &[T], x: &mut [T], ld: usize) {
        let out = self.out_len();
        debug_assert_eq!(x.len(), self.c * self.h * self.w);
        for c in 0..self.c {
            let plane = &mut x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let src = &cols[row * ld..row * ld + out];
                    let (lo, hi) = self.valid(kj, self.w, self.wo);
                    if lo == hi {
                        continue;
                    }
                    let base = lo * self.stride + kj - self.pad;
                    for oi in 0..self.ho {
                        let Some(i) = self.source(oi, ki, self.h) else { continue };
                        let dst = &mut plane[i * self.w..(i + 1) * self.w];
                        let line = &src[oi * self.wo + lo..oi * self.wo + hi];
                        for (n, &v) in line.iter().enumerate() {
                            let j = base + n * self.stride;
                            dst[j] = dst[j] + v;
                        }
                    }
                }
            }
        }
    }
}

/// `[n, c, p]` → `[c, n·p]`.
pub(crate) fn to_channel_major<T: Scalar>(x: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for i in 0..n {
        for ch in 0..c {
            let src = &x[(i * c + ch) * p..(i * c + ch + 1) * p];
            out[ch * n * p + i * p..ch * n * p + (i + 1) * p].copy_from_slice(src);
        }
    }
    out
}

/// `[c, n·p]` → `[n, c, p]`.
pub(crate) fn from_channel_major<T: Scalar>(x: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for i in 0..n {
        for ch in 0..c {
            let src = &x[ch * n * p + i * p..ch * n * p + (i + 1) * p];
            out[(i * c + ch) * p..(i * c + ch + 1) * p].copy_from_slice(src);
        }
    }
    out
}
