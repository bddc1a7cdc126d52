//! Dense kernels behind the graph ops. All layouts are row-major; images are NHWC
//! and convolution weights are `[out, k, k, in]`.

/// `op(a) * op(b)` where `a` is stored `[a_rows, a_cols]` and `op` optionally transposes.
pub fn matmul(
    a: &[f64],
    a_rows: usize,
    a_cols: usize,
    ta: bool,
    b: &[f64],
    b_rows: usize,
    b_cols: usize,
    tb: bool,
) -> (Vec<f64>, usize, usize) {
    let (m, k, rsa, csa) = if ta {
        (a_cols, a_rows, 1, a_cols)
    } else {
        (a_rows, a_cols, a_cols, 1)
    };
    let (kb, n, rsb, csb) = if tb {
        (b_cols, b_rows, 1, b_cols)
    } else {
        (b_rows, b_cols, b_cols, 1)
    };
    assert_eq!(k, kb, "matmul inner dimensions");
    assert_eq!(a.len(), a_rows * a_cols);
    assert_eq!(b.len(), b_rows * b_cols);
    let mut c = vec![0.0; m * n];
    // SAFETY: slices are sized exactly for the given dims and strides above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    (c, m, n)
}

/// Geometry of a valid, strided 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDims {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvDims {
    pub fn out_h(&self) -> usize {
        (self.in_h - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w - self.kernel) / self.stride + 1
    }

    fn positions(&self) -> usize {
        self.batch * self.out_h() * self.out_w()
    }

    fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_c
    }

    pub fn input_shape(&self) -> Vec<usize> {
        vec![self.batch, self.in_h, self.in_w, self.in_c]
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_h(), self.out_w(), self.out_c]
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.out_c, self.kernel, self.kernel, self.in_c]
    }
}

fn im2col(x: &[f64], d: &ConvDims) -> Vec<f64> {
    let (oh, ow, k, c) = (d.out_h(), d.out_w(), d.kernel, d.in_c);
    let mut col = vec![0.0; d.positions() * d.patch_len()];
    let mut row = 0;
    for n in 0..d.batch {
        for y in 0..oh {
            for xo in 0..ow {
                let dst = &mut col[row * d.patch_len()..(row + 1) * d.patch_len()];
                for i in 0..k {
                    let src_row = ((n * d.in_h + y * d.stride + i) * d.in_w + xo * d.stride) * c;
                    dst[i * k * c..(i + 1) * k * c].copy_from_slice(&x[src_row..src_row + k * c]);
                }
                row += 1;
            }
        }
    }
    col
}

fn col2im(col: &[f64], d: &ConvDims) -> Vec<f64> {
    let (oh, ow, k, c) = (d.out_h(), d.out_w(), d.kernel, d.in_c);
    let mut x = vec![0.0; d.batch * d.in_h * d.in_w * c];
    let mut row = 0;
    for n in 0..d.batch {
        for y in 0..oh {
            for xo in 0..ow {
                let src = &col[row * d.patch_len()..(row + 1) * d.patch_len()];
                for i in 0..k {
                    let dst_row = ((n * d.in_h + y * d.stride + i) * d.in_w + xo * d.stride) * c;
                    for (a, b) in x[dst_row..dst_row + k * c]
                        .iter_mut()
                        .zip(&src[i * k * c..(i + 1) * k * c])
                    {
                        *a += b;
                    }
                }
                row += 1;
            }
        }
    }
    x
}

/// `y[n,oy,ox,o] = sum_{i,j,c} x[n, oy*s+i, ox*s+j, c] * w[o,i,j,c]`
pub fn conv2d(x: &[f64], w: &[f64], d: &ConvDims) -> Vec<f64> {
    let col = im2col(x, d);
    matmul(&col, d.positions(), d.patch_len(), false, w, d.out_c, d.patch_len(), true).0
}

/// Adjoint of [`conv2d`] in its input: maps an output-shaped gradient to input shape.
pub fn conv2d_back_input(g: &[f64], w: &[f64], d: &ConvDims) -> Vec<f64> {
    let dcol = matmul(g, d.positions(), d.out_c, false, w, d.out_c, d.patch_len(), false).0;
    col2im(&dcol, d)
}

/// Adjoint of [`conv2d`] in its weights.
pub fn conv2d_back_weight(x: &[f64], g: &[f64], d: &ConvDims) -> Vec<f64> {
    let col = im2col(x, d);
    matmul(g, d.positions(), d.out_c, true, &col, d.positions(), d.patch_len(), false).0
}
