use super::Scalar;

/// Sliding-window geometry of a 2-D convolution over a batch of
/// `[C, H, W]` images producing `[Ho, Wo]` output positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Geometry {
    pub fn new(channels: usize, height: usize, width: usize, kernel: usize, stride: usize, padding: usize) -> Option<Self> {
        let span_h = (height + 2 * padding).checked_sub(kernel)?;
        let span_w = (width + 2 * padding).checked_sub(kernel)?;
        Some(Self {
            channels,
            height,
            width,
            kernel,
            stride,
            padding,
            out_h: span_h / stride + 1,
            out_w: span_w / stride + 1,
        })
    }

    /// Rows of the column matrix: `C * k * k`.
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Unfold `batch` images into `cols[C*k*k, batch*Ho*Wo]` (row-major).
    pub fn im2col<T: Scalar>(&self, images: &[T], batch: usize, cols: &mut Vec<T>) {
        let p = self.positions();
        let ld = batch * p;
        cols.clear();
        cols.resize(self.col_rows() * ld, T::zero());
        let (h, w, k, s, pad) = (self.height as isize, self.width as isize, self.kernel, self.stride, self.padding as isize);
        for n in 0..batch {
            let img = &images[n * self.image_len()..(n + 1) * self.image_len()];
            for c in 0..self.channels {
                let plane = &img[c * self.height * self.width..(c + 1) * self.height * self.width];
                for ki in 0..k {
                    for kj in 0..k {
                        let row = (c * k + ki) * k + kj;
                        let dst = &mut cols[row * ld + n * p..row * ld + (n + 1) * p];
                        for oy in 0..self.out_h {
                            let iy = (oy * s + ki) as isize - pad;
                            if iy < 0 || iy >= h {
                                continue;
                            }
                            let src_row = &plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                            for ox in 0..self.out_w {
                                let ix = (ox * s + kj) as isize - pad;
                                if ix >= 0 && ix < w {
                                    dst[oy * self.out_w + ox] = src_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Fold `cols[C*k*k, batch*Ho*Wo]` back into images, summing overlaps.
    pub fn col2im<T: Scalar>(&self, cols: &[T], batch: usize, images: &mut [T]) {
        let p = self.positions();
        let ld = batch * p;
        images.iter_mut().for_each(|v| *v = T::zero());
        let (h, w, k, s, pad) = (self.height as isize, self.width as isize, self.kernel, self.stride, self.padding as isize);
        for n in 0..batch {
            let img = &mut images[n * self.image_len()..(n + 1) * self.image_len()];
            for c in 0..self.channels {
                let plane = &mut img[c * self.height * self.width..(c + 1) * self.height * self.width];
                for ki in 0..k {
                    for kj in 0..k {
                        let row = (c * k + ki) * k + kj;
                        let src = &cols[row * ld + n * p..row * ld + (n + 1) * p];
                        for oy in 0..self.out_h {
                            let iy = (oy * s + ki) as isize - pad;
                            if iy < 0 || iy >= h {
                                continue;
                            }
                            let base = iy as usize * self.width;
                            for ox in 0..self.out_w {
                                let ix = (ox * s + kj) as isize - pad;
                                if ix >= 0 && ix < w {
                                    plane[base + ix as usize] = plane[base + ix as usize] + src[oy * self.out_w + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `[N, C, P]` to `[C, N*P]`.
pub(crate) fn nchw_to_cnp<T: Scalar>(src: &[T], n: usize, c: usize, p: usize, dst: &mut Vec<T>) {
    dst.clear();
    dst.resize(src.len(), T::zero());
    for b in 0..n {
        for ch in 0..c {
            let s = &src[(b * c + ch) * p..(b * c + ch + 1) * p];
            dst[ch * n * p + b * p..ch * n * p + (b + 1) * p].copy_from_slice(s);
        }
    }
}

/// `[C, N*P]` to `[N, C, P]`.
pub(crate) fn cnp_to_nchw<T: Scalar>(src: &[T], n: usize, c: usize, p: usize, dst: &mut [T]) {
    for b in 0..n {
        for ch in 0..c {
            dst[(b * c + ch) * p..(b * c + ch + 1) * p].copy_from_slice(&src[ch * n * p + b * p..ch * n * p + (b + 1) * p]);
        }
    }
}
