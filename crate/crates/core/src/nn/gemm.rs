//! Safe wrapper around `matrixmultiply::sgemm` with explicit strides.

/// Strided matrix view descriptor: `rows x cols` with row/col strides.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl Layout {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    /// Sub-block of a row-major matrix with `stride` columns, starting at column offset.
    pub fn strided(rows: usize, cols: usize, stride: usize) -> Self {
        Self {
            rows,
            cols,
            rs: stride,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn max_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// `c = alpha * a·b + beta * c`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    alpha: f32,
    a: &[f32],
    la: Layout,
    b: &[f32],
    lb: Layout,
    beta: f32,
    c: &mut [f32],
    lc: Layout,
) {
    assert_eq!(la.cols, lb.rows, "inner dimension mismatch");
    assert_eq!(la.rows, lc.rows, "output rows mismatch");
    assert_eq!(lb.cols, lc.cols, "output cols mismatch");
    assert!(a.len() >= la.max_index());
    assert!(b.len() >= lb.max_index());
    assert!(c.len() >= lc.max_index());
    if lc.rows == 0 || lc.cols == 0 {
        return;
    }
    if la.cols == 0 {
        if beta == 0.0 {
            for r in 0..lc.rows {
                for col in 0..lc.cols {
                    c[r * lc.rs + col * lc.cs] = 0.0;
                }
            }
        } else {
            for r in 0..lc.rows {
                for col in 0..lc.cols {
                    c[r * lc.rs + col * lc.cs] *= beta;
                }
            }
        }
        return;
    }
    // SAFETY: bounds of every strided view were checked above.
    unsafe {
        matrixmultiply::sgemm(
            la.rows,
            la.cols,
            lb.cols,
            alpha,
            a.as_ptr(),
            la.rs as isize,
            la.cs as isize,
            b.as_ptr(),
            lb.rs as isize,
            lb.cs as isize,
            beta,
            c.as_mut_ptr(),
            lc.rs as isize,
            lc.cs as isize,
        );
    }
}
