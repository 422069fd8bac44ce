//! Bounds-checked wrapper over `matrixmultiply::sgemm`.

/// Row/column strides of a matrix view into a flat buffer.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub rs: usize,
    pub cs: usize,
}

impl Layout {
    pub const fn row_major(cols: usize) -> Self {
        Self { rs: cols, cs: 1 }
    }
    /// The transpose of a row-major `rows x cols` buffer.
    pub const fn transposed(cols: usize) -> Self {
        Self { rs: 1, cs: cols }
    }
    fn max_index(&self, rows: usize, cols: usize) -> usize {
        (rows - 1) * self.rs + (cols - 1) * self.cs
    }
}

/// `C = alpha * A(m x k) * B(k x n) + beta * C`.
#[allow(clippy::too_many_arguments)]
pub fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    la: Layout,
    b: &[f32],
    lb: Layout,
    beta: f32,
    c: &mut [f32],
    lc: Layout,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[i * lc.rs + j * lc.cs] *= beta;
            }
        }
        return;
    }
    assert!(la.max_index(m, k) < a.len(), "lhs view out of bounds");
    assert!(lb.max_index(k, n) < b.len(), "rhs view out of bounds");
    assert!(lc.max_index(m, n) < c.len(), "output view out of bounds");
    // SAFETY: every index reachable through the three views was bounds-checked above,
    // and `c` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_product_and_transpose() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0]; // 3x2
        let mut c = [0.0; 4];
        sgemm(
            2,
            3,
            2,
            1.0,
            &a,
            Layout::row_major(3),
            &b,
            Layout::row_major(2),
            0.0,
            &mut c,
            Layout::row_major(2),
        );
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
        // a^T (3x2) * a (2x3) diagonal entries are column norms
        let mut g = [0.0; 9];
        sgemm(
            3,
            2,
            3,
            1.0,
            &a,
            Layout::transposed(3),
            &a,
            Layout::row_major(3),
            0.0,
            &mut g,
            Layout::row_major(3),
        );
        assert_eq!([g[0], g[4], g[8]], [17.0, 29.0, 45.0]);
    }
}
