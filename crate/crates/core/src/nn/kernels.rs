//! Dense kernels behind the convolution ops.

/// `c = alpha * op(a) * op(b) + beta * c`, where `op` optionally transposes.
/// Shapes after `op`: `a` is `m x k`, `b` is `k x n`, `c` is `m x n`, all
/// stored row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a strided, zero-padded sliding window over one image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn new(channels: usize, height: usize, width: usize, kernel: usize, stride: usize, pad: usize) -> Option<Self> {
        if height + 2 * pad < kernel || width + 2 * pad < kernel || stride == 0 {
            return None;
        }
        Some(Window {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_h: (height + 2 * pad - kernel) / stride + 1,
            out_w: (width + 2 * pad - kernel) / stride + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input coordinate hit by output index `o` at kernel offset `k`, if inside.
    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let p = (o * self.stride + k) as isize - self.pad as isize;
        (p >= 0 && (p as usize) < extent).then_some(p as usize)
    }
}

/// Unfold `img` (`C x H x W`) into `col` (`C*k*k x OH*OW`).
pub fn im2col(img: &[f64], win: &Window, col: &mut [f64]) {
    let Window { channels, height, width, kernel, out_h, out_w, .. } = *win;
    let cols = out_h * out_w;
    for c in 0..channels {
        let plane = &img[c * height * width..(c + 1) * height * width];
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (c * kernel + ki) * kernel + kj;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oh in 0..out_h {
                    let line = &mut dst[oh * out_w..(oh + 1) * out_w];
                    match win.source(oh, ki, height) {
                        None => line.iter_mut().for_each(|v| *v = 0.0),
                        Some(ih) => {
                            let src = &plane[ih * width..(ih + 1) * width];
                            for (ow, v) in line.iter_mut().enumerate() {
                                *v = win.source(ow, kj, width).map_or(0.0, |iw| src[iw]);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add `col` back into `img`.
pub fn col2im(col: &[f64], win: &Window, img: &mut [f64]) {
    let Window { channels, height, width, kernel, out_h, out_w, .. } = *win;
    let cols = out_h * out_w;
    for c in 0..channels {
        let plane = &mut img[c * height * width..(c + 1) * height * width];
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (c * kernel + ki) * kernel + kj;
                let srcrow = &col[row * cols..(row + 1) * cols];
                for oh in 0..out_h {
                    let Some(ih) = win.source(oh, ki, height) else { continue };
                    let line = &srcrow[oh * out_w..(oh + 1) * out_w];
                    let dst = &mut plane[ih * width..(ih + 1) * width];
                    for (ow, v) in line.iter().enumerate() {
                        if let Some(iw) = win.source(ow, kj, width) {
                            dst[iw] += v;
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
    fn gemm_transposes() {
        // a = [[1,2,3],[4,5,6]], b = [[1,0],[0,1],[1,1]]
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = [0.0; 4];
        gemm(2, 3, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let bt = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let mut d = [1.0; 4];
        gemm(2, 3, 2, &at, true, &bt, true, 1.0, &mut d);
        assert_eq!(d, [5.0, 6.0, 11.0, 12.0]);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let win = Window::new(2, 5, 6, 3, 2, 1).unwrap();
        let img: Vec<f64> = (0..60).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let y: Vec<f64> = (0..win.col_rows() * win.col_cols()).map(|i| ((i * 3) % 5) as f64).collect();
        let mut col = vec![0.0; y.len()];
        im2col(&img, &win, &mut col);
        let mut back = vec![0.0; 60];
        col2im(&y, &win, &mut back);
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = img.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn window_extent() {
        let w = Window::new(1, 64, 64, 3, 2, 1).unwrap();
        assert_eq!((w.out_h, w.out_w), (32, 32));
        assert_eq!(Window::new(1, 8, 8, 3, 1, 1).unwrap().out_h, 8);
        assert!(Window::new(1, 1, 1, 5, 1, 0).is_none());
    }
}
