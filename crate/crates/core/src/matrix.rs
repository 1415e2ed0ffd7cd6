//! Dense row-major `f64` matrix.
//!
//! Deliberately small: the loss and encoder kernels need row access, a few
//! matrix products, and nothing else. Products parallelize over output rows
//! with a fixed-order inner sum, so results are bit-identical regardless of
//! thread count.

use crate::parallel;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            data: vec![0.0; rows * cols],
            rows,
            cols,
        }
    }

    /// Builds from a row-major buffer. Panics if the length disagrees.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major buffer length mismatch");
        Matrix { data, rows, cols }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { data, rows: r, cols: c }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { data, rows, cols }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row with the largest absolute entry difference against `other`.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `self (m×k) · other^T (n×k) -> m×n`, parallel over output rows.
    pub fn matmul_nt(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "inner dimension mismatch (nt)");
        let (m, n, k) = (self.rows, other.rows, self.cols);
        let mut out = Matrix::zeros(m, n);
        parallel::for_each_row(out.data_mut(), n, |i, out_row| {
            let a = &self.data[i * k..(i + 1) * k];
            for (j, o) in out_row.iter_mut().enumerate() {
                let b = &other.data[j * k..(j + 1) * k];
                *o = dot(a, b);
            }
        });
        out
    }

    /// `self (m×k) · other (k×n) -> m×n`, parallel over output rows.
    pub fn matmul_nn(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "inner dimension mismatch (nn)");
        let (m, n, k) = (self.rows, other.cols, self.cols);
        let mut out = Matrix::zeros(m, n);
        parallel::for_each_row(out.data_mut(), n, |i, out_row| {
            let a = &self.data[i * k..(i + 1) * k];
            for (l, &av) in a.iter().enumerate() {
                let b = &other.data[l * n..(l + 1) * n];
                for (o, &bv) in out_row.iter_mut().zip(b) {
                    *o += av * bv;
                }
            }
        });
        out
    }

    /// `self^T (k×m as m-major) · other (k×n) -> m×n`: both inputs share the
    /// leading (row) dimension `k`; the sum over `k` runs in index order.
    pub fn matmul_tn(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "leading dimension mismatch (tn)");
        let (k, m, n) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(m, n);
        parallel::for_each_row(out.data_mut(), n, |i, out_row| {
            for l in 0..k {
                let av = self.data[l * m + i];
                let b = &other.data[l * n..(l + 1) * n];
                for (o, &bv) in out_row.iter_mut().zip(b) {
                    *o += av * bv;
                }
            }
        });
        out
    }

    /// Column sums (fixed row order).
    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.iter_rows() {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn scale_in_place(a: &mut [f64], s: f64) {
    for v in a {
        *v *= s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_nt_small() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = Matrix::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0], vec![9.0, 10.0]]);
        let c = a.matmul_nt(&b); // 2x3
        assert_eq!(c.row(0), &[17.0, 23.0, 29.0]);
        assert_eq!(c.row(1), &[39.0, 53.0, 67.0]);
    }

    #[test]
    fn matmul_nn_matches_nt_via_transpose() {
        let a = Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.0, 3.0, 1.0]]);
        let b = Matrix::from_rows(&[vec![2.0, 1.0], vec![-1.0, 4.0], vec![0.5, 0.0]]);
        let c = a.matmul_nn(&b);
        let bt = Matrix::from_rows(&[vec![2.0, -1.0, 0.5], vec![1.0, 4.0, 0.0]]);
        let c2 = a.matmul_nt(&bt);
        assert_eq!(c, c2);
    }

    #[test]
    fn matmul_tn_small() {
        // a: 3x2, b: 3x2 -> a^T b: 2x2
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let b = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        let c = a.matmul_tn(&b);
        assert_eq!(c.row(0), &[6.0, 8.0]);
        assert_eq!(c.row(1), &[8.0, 10.0]);
    }
}
