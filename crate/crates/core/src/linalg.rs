//! Dense symmetric positive-definite solves.

use crate::error::{Error, Result};

const ROW_BLOCK: usize = 4;

/// Cholesky factor `A = L·Lᵀ` of a dense symmetric positive-definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    // Row-major; only the lower triangle is meaningful.
    l: Vec<f64>,
}

impl Cholesky {
    /// Factors the row-major `n×n` matrix `a`, reading only its lower triangle.
    pub fn factor(mut a: Vec<f64>, n: usize) -> Result<Self> {
        assert_eq!(a.len(), n * n, "matrix buffer has the wrong length");
        let mut i0 = 0;
        while i0 < n {
            let i1 = (i0 + ROW_BLOCK).min(n);
            let (done, block) = a.split_at_mut(i0 * n);
            // Columns left of the block: each finished row is streamed once for all block rows.
            for j in 0..i0 {
                let lj = &done[j * n..j * n + j];
                let ljj = done[j * n + j];
                for i in i0..i1 {
                    let row = &mut block[(i - i0) * n..(i - i0) * n + j + 1];
                    let s = row[j] - dot(&row[..j], lj);
                    row[j] = s / ljj;
                }
            }
            for i in i0..i1 {
                let (upper, lower) = block.split_at_mut((i - i0) * n);
                let row_i = &mut lower[..n];
                for j in i0..i {
                    let lj = &upper[(j - i0) * n..(j - i0) * n + j + 1];
                    let s = row_i[j] - dot(&row_i[..j], &lj[..j]);
                    row_i[j] = s / lj[j];
                }
                let s = row_i[i] - dot(&row_i[..i], &row_i[..i]);
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::SingularMatrix { pivot: i, value: s });
                }
                row_i[i] = s.sqrt();
            }
            i0 = i1;
        }
        Ok(Cholesky { n, l: a })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Overwrites `b` with `A⁻¹·b`.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        for i in 0..n {
            let row = &self.l[i * n..i * n + i + 1];
            b[i] = (b[i] - dot(&row[..i], &b[..i])) / row[i];
        }
        for i in (0..n).rev() {
            let row = &self.l[i * n..i * n + i + 1];
            let x = b[i] / row[i];
            b[i] = x;
            for (bk, lk) in b[..i].iter_mut().zip(&row[..i]) {
                *bk -= lk * x;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Inner product with independent accumulators so the loop vectorizes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]) + tail
}
