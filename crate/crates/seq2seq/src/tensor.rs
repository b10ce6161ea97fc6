//! Strided matrix views over flat slices and a bounds-checked GEMM.

use crate::Scalar;

/// A read-only strided view: element (i, j) lives at `off + i*rs + j*cs`.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a, S> {
    pub d: &'a [S],
    pub off: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, S> Mat<'a, S> {
    /// Row-major matrix with `cols` columns.
    pub fn rm(d: &'a [S], cols: usize) -> Self {
        Mat { d, off: 0, rs: cols, cs: 1 }
    }

    /// Columns starting at `c` (a head slice of a row-major matrix).
    pub fn col(self, c: usize) -> Self {
        Mat { off: self.off + c * self.cs, ..self }
    }

    pub fn t(self) -> Self {
        Mat { rs: self.cs, cs: self.rs, ..self }
    }
}

pub(crate) struct MatMut<'a, S> {
    pub d: &'a mut [S],
    pub off: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, S> MatMut<'a, S> {
    pub fn rm(d: &'a mut [S], cols: usize) -> Self {
        MatMut { d, off: 0, rs: cols, cs: 1 }
    }

    pub fn col(self, c: usize) -> Self {
        MatMut { off: self.off + c * self.cs, ..self }
    }
}

fn last_index(off: usize, rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    off + (rows - 1) * rs + (cols - 1) * cs
}

/// `c = alpha * a(m×k) * b(k×n) + beta * c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<S: Scalar>(m: usize, k: usize, n: usize, alpha: S, a: Mat<S>, b: Mat<S>, beta: S, c: MatMut<S>) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(last_index(c.off, m, n, c.rs, c.cs) < c.d.len(), "gemm: c out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let x = &mut c.d[c.off + i * c.rs + j * c.cs];
                *x = beta * *x;
            }
        }
        return;
    }
    assert!(last_index(a.off, m, k, a.rs, a.cs) < a.d.len(), "gemm: a out of bounds");
    assert!(last_index(b.off, k, n, b.rs, b.cs) < b.d.len(), "gemm: b out of bounds");
    // SAFETY: all three views were bounds-checked above, and `c` is a
    // unique borrow so it cannot alias `a` or `b`.
    unsafe {
        S::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.d.as_ptr().add(a.off),
            a.rs as isize,
            a.cs as isize,
            b.d.as_ptr().add(b.off),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.d.as_mut_ptr().add(c.off),
            c.rs as isize,
            c.cs as isize,
        )
    }
}

/// Row-major product `a(m×k) * b(k×n)` into a new buffer.
#[cfg(test)]
pub(crate) fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    gemm(m, k, n, S::one(), Mat::rm(a, k), Mat::rm(b, n), S::zero(), MatMut::rm(&mut c, n));
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_and_sliced_products() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        assert_eq!(matmul(&a, &b, 2, 2, 2), vec![19.0, 22.0, 43.0, 50.0]);
        let mut c = vec![0.0f64; 4];
        gemm(2, 2, 2, 1.0, Mat::rm(&a, 2).t(), Mat::rm(&b, 2), 0.0, MatMut::rm(&mut c, 2));
        assert_eq!(c, vec![26.0, 30.0, 38.0, 44.0]);
        // second column of a times first row of b
        let mut c = vec![1.0f64; 4];
        gemm(2, 1, 2, 1.0, Mat::rm(&a, 2).col(1), Mat::rm(&b, 2), 1.0, MatMut::rm(&mut c, 2));
        assert_eq!(c, vec![11.0, 13.0, 21.0, 25.0]);
    }
}
