//! Convolution via im2col + GEMM.

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    /// Output columns `[lo, hi)` whose input column `ox*stride + kj - padding`
    /// falls inside the image.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let wo = self.out_width();
        let lo = self.padding.saturating_sub(kj).div_ceil(self.stride);
        let reach = self.width + self.padding;
        let hi = if reach > kj { ((reach - kj - 1) / self.stride + 1).min(wo) } else { 0 };
        (lo.min(hi), hi)
    }
}

/// Unfolds one sample `[C, H, W]` into the first `Ho*Wo` entries of each
/// of the `C*k*k` rows of `cols`, rows `ld` apart. Those entries are all written.
pub(crate) fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry, cols: &mut [T], ld: usize) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let plane = ho * wo;
    let in_plane = g.height * g.width;
    for c in 0..g.channels {
        let src = &x[c * in_plane..][..in_plane];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let r = (c * g.kernel + ki) * g.kernel + kj;
                let row = &mut cols[r * ld..][..plane];
                let (lo, hi) = g.valid_cols(kj);
                for oy in 0..ho {
                    let dst = &mut row[oy * wo..][..wo];
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize || lo == hi {
                        dst.fill(T::zero());
                        continue;
                    }
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    let src_row = &src[iy as usize * g.width..][..g.width];
                    let x0 = lo * g.stride + kj - g.padding;
                    if g.stride == 1 {
                        dst[lo..hi].copy_from_slice(&src_row[x0..x0 + hi - lo]);
                    } else {
                        for (d, &v) in dst[lo..hi].iter_mut().zip(src_row[x0..].iter().step_by(g.stride)) {
                            *d = v;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: adds column gradients of one sample onto `x`.
pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry, x: &mut [T], ld: usize) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let plane = ho * wo;
    let in_plane = g.height * g.width;
    for c in 0..g.channels {
        let dst = &mut x[c * in_plane..][..in_plane];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let r = (c * g.kernel + ki) * g.kernel + kj;
                let row = &cols[r * ld..][..plane];
                let (lo, hi) = g.valid_cols(kj);
                if lo == hi {
                    continue;
                }
                let x0 = lo * g.stride + kj - g.padding;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.width..][..g.width];
                    let src = &row[oy * wo + lo..oy * wo + hi];
                    if g.stride == 1 {
                        for (d, &v) in dst_row[x0..x0 + hi - lo].iter_mut().zip(src) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst_row[x0..].iter_mut().step_by(g.stride).zip(src) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)> for arbitrary x, y.
        let g = ConvGeometry { channels: 2, height: 5, width: 4, kernel: 3, stride: 2, padding: 1 };
        for (stride, padding, kernel) in [(2, 1, 3), (1, 1, 3), (1, 0, 1), (2, 0, 1), (3, 2, 3)] {
            let g = ConvGeometry { stride, padding, kernel, ..g };
            let x: Vec<f64> = (0..2 * 5 * 4).map(|i| ((i * 7 % 13) as f64) - 6.0).collect();
            let mut cols = vec![f64::NAN; g.rows() * g.out_height() * g.out_width()];
            let ld = g.out_height() * g.out_width();
            im2col(&x, &g, &mut cols, ld);
            let y: Vec<f64> = (0..cols.len()).map(|i| ((i * 5 % 11) as f64) * 0.5).collect();
            let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
            let mut back = vec![0.0; x.len()];
            col2im(&y, &g, &mut back, ld);
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9, "stride {stride} padding {padding} kernel {kernel}");
        }
    }

    #[test]
    fn im2col_matches_direct_indexing() {
        let g = ConvGeometry { channels: 2, height: 5, width: 6, kernel: 3, stride: 2, padding: 1 };
        let x: Vec<f64> = (0..60).map(f64::from).collect();
        let (ho, wo) = (g.out_height(), g.out_width());
        let mut cols = vec![f64::NAN; g.rows() * ho * wo];
        im2col(&x, &g, &mut cols, ho * wo);
        for c in 0..2 {
            for ki in 0..3 {
                for kj in 0..3 {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let (iy, ix) = ((oy * 2 + ki) as isize - 1, (ox * 2 + kj) as isize - 1);
                            let want = if (0..5).contains(&iy) && (0..6).contains(&ix) { x[c * 30 + iy as usize * 6 + ix as usize] } else { 0.0 };
                            assert_eq!(cols[((c * 3 + ki) * 3 + kj) * ho * wo + oy * wo + ox], want);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn geometry_output_size() {
        let g = ConvGeometry { channels: 1, height: 256, width: 200, kernel: 3, stride: 2, padding: 1 };
        assert_eq!((g.out_height(), g.out_width()), (128, 100));
    }
}
