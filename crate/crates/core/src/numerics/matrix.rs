use std::ops::Range;

use crate::error::{Error, Result};
use crate::numerics::Real;
use crate::parallel;

/// Rows of `C` handed to one gemm call when a product is split across threads.
const GEMM_ROW_CHUNK: usize = 64;
/// Below this many multiply-adds a product runs as a single call.
const GEMM_PARALLEL_MIN_WORK: usize = 1 << 18;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "matrix data length",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Build from equal-length rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "matrix row length",
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        // chunks_exact panics on zero; a zero-column matrix has no data anyway
        self.data
            .chunks_exact(self.cols.max(1))
            .take(if self.cols == 0 { 0 } else { self.rows })
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::cast(x.widen())).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Copy of the given rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Contiguous block of rows.
    pub fn slice_rows(&self, range: Range<usize>) -> Self {
        Self {
            rows: range.len(),
            cols: self.cols,
            data: self.data[range.start * self.cols..range.end * self.cols].to_vec(),
        }
    }

    /// Contiguous block of columns.
    pub fn slice_cols(&self, range: Range<usize>) -> Self {
        let mut data = Vec::with_capacity(self.rows * range.len());
        for r in self.iter_rows() {
            data.extend_from_slice(&r[range.clone()]);
        }
        Self {
            rows: self.rows,
            cols: range.len(),
            data,
        }
    }

    /// Overwrite the columns starting at `start` with `block`.
    pub fn write_cols(&mut self, start: usize, block: &Matrix<T>) {
        debug_assert_eq!(block.rows, self.rows);
        debug_assert!(start + block.cols <= self.cols);
        for i in 0..self.rows {
            let cols = self.cols;
            self.data[i * cols + start..i * cols + start + block.cols]
                .copy_from_slice(block.row(i));
        }
    }

    /// Vertical concatenation.
    pub fn vstack(blocks: &[&Matrix<T>]) -> Result<Self> {
        let cols = blocks.first().map_or(0, |b| b.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for b in blocks {
            if b.cols != cols {
                return Err(Error::DimensionMismatch {
                    context: "vstack columns",
                    expected: cols,
                    actual: b.cols,
                });
            }
            data.extend_from_slice(&b.data);
            rows += b.rows;
        }
        Ok(Self { rows, cols, data })
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix<T>) -> Result<Self> {
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(false, false, T::one(), self, other, T::zero(), &mut out)?;
        Ok(out)
    }

    /// `self · otherᵀ`
    pub fn matmul_nt(&self, other: &Matrix<T>) -> Result<Self> {
        let mut out = Matrix::zeros(self.rows, other.rows);
        gemm(false, true, T::one(), self, other, T::zero(), &mut out)?;
        Ok(out)
    }

    /// `selfᵀ · other`
    pub fn matmul_tn(&self, other: &Matrix<T>) -> Result<Self> {
        let mut out = Matrix::zeros(self.cols, other.cols);
        gemm(true, false, T::one(), self, other, T::zero(), &mut out)?;
        Ok(out)
    }

    /// Per-column sums, accumulated in `f64`.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.cols];
        for r in self.iter_rows() {
            for (a, &x) in acc.iter_mut().zip(r) {
                *a += x.widen();
            }
        }
        acc
    }
}

/// `C = alpha · op(A) · op(B) + beta · C`, where `op` optionally transposes.
///
/// Large products are split over fixed row blocks of `C`; each block is an
/// independent call with the same reduction order over the inner dimension.
pub fn gemm<T: Real>(
    transpose_a: bool,
    transpose_b: bool,
    alpha: T,
    a: &Matrix<T>,
    b: &Matrix<T>,
    beta: T,
    c: &mut Matrix<T>,
) -> Result<()> {
    let (m, k) = if transpose_a {
        (a.cols, a.rows)
    } else {
        (a.rows, a.cols)
    };
    let (kb, n) = if transpose_b {
        (b.cols, b.rows)
    } else {
        (b.rows, b.cols)
    };
    if k != kb {
        return Err(Error::DimensionMismatch {
            context: "matrix product inner dimension",
            expected: k,
            actual: kb,
        });
    }
    if c.rows != m || c.cols != n {
        return Err(Error::DimensionMismatch {
            context: "matrix product output",
            expected: m * n,
            actual: c.rows * c.cols,
        });
    }
    if m == 0 || n == 0 {
        return Ok(());
    }
    let (rsa, csa) = if transpose_a {
        (1isize, a.cols as isize)
    } else {
        (a.cols as isize, 1isize)
    };
    let (rsb, csb) = if transpose_b {
        (1isize, b.cols as isize)
    } else {
        (b.cols as isize, 1isize)
    };
    let a_data = a.as_slice();
    let b_data = b.as_slice();
    let run = |row0: usize, c_block: &mut [T]| {
        let rows = c_block.len() / n;
        let a_offset = row0 as isize * rsa;
        // SAFETY: a_offset addresses row `row0` of op(A), which has `rows`
        // rows of length k inside `a_data`; c_block is an exclusive
        // `rows × n` row-major slice.
        unsafe {
            T::gemm_raw(
                rows,
                k,
                n,
                alpha,
                a_data.as_ptr().offset(if k == 0 { 0 } else { a_offset }),
                rsa,
                csa,
                b_data.as_ptr(),
                rsb,
                csb,
                beta,
                c_block.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    };
    if m * n * k.max(1) < GEMM_PARALLEL_MIN_WORK || m <= GEMM_ROW_CHUNK {
        run(0, c.as_mut_slice());
    } else {
        parallel::for_each_chunk_mut(c.as_mut_slice(), GEMM_ROW_CHUNK * n, |i, block| {
            run(i * GEMM_ROW_CHUNK, block)
        });
    }
    Ok(())
}
