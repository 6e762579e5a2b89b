//! Dense vectors and column-major matrices.
//!
//! Column `r` of a [`Matrix`] is the weight vector of hidden neuron `r`, so the
//! mixed norms below are taken over columns: `‖M‖₂,₁ = Σ_r ‖M_r‖₂` and
//! `‖M‖₂,∞ = max_r ‖M_r‖₂`.

use std::ops::{Deref, Index};

use crate::error::{FalError, Result};
use crate::scalar::Real;

/// Dense vector with finite entries.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Vector<T> {
    data: Vec<T>,
}

impl<T: Real> Vector<T> {
    pub fn from_vec(data: Vec<T>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FalError::NonFinite("vector"));
        }
        Ok(Self { data })
    }

    pub(crate) fn from_vec_unchecked(data: Vec<T>) -> Self {
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { data }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![T::zero(); len],
        }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn dot(&self, other: &[T]) -> T {
        dot(&self.data, other)
    }

    pub fn norm2(&self) -> T {
        norm2(&self.data)
    }

    /// Element-wise conversion to another scalar width.
    pub fn cast<U: Real>(&self) -> Vector<U> {
        Vector {
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

impl<T> Deref for Vector<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.data
    }
}

/// Dense `rows × cols` matrix stored column by column.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(FalError::invalid(format!(
                "matrix must be at least 1x1, got {rows}x{cols}"
            )));
        }
        Ok(Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        })
    }

    /// Builds from column-major storage.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(FalError::invalid(format!(
                "matrix must be at least 1x1, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(FalError::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FalError::NonFinite("matrix"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_columns(columns: &[Vec<T>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows * columns.len());
        for col in columns {
            if col.len() != rows {
                return Err(FalError::DimensionMismatch {
                    expected: rows,
                    found: col.len(),
                });
            }
            data.extend_from_slice(col);
        }
        Self::from_col_major(rows, columns.len(), data)
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut m = Self::zeros(n, n)?;
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        Ok(m)
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

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[col * self.rows + row]
    }

    pub(crate) fn set(&mut self, row: usize, col: usize, value: T) {
        debug_assert!(value.is_finite());
        self.data[col * self.rows + row] = value;
    }

    pub fn column(&self, col: usize) -> &[T] {
        let start = col * self.rows;
        &self.data[start..start + self.rows]
    }

    pub fn columns(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.data.chunks_exact(self.rows)
    }

    pub(crate) fn columns_mut(&mut self) -> impl ExactSizeIterator<Item = &mut [T]> + '_ {
        self.data.chunks_exact_mut(self.rows)
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(FalError::DimensionMismatch {
                expected: self.data.len(),
                found: other.data.len(),
            });
        }
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.check_same_shape(other)?;
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s = *s + alpha * *o;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| *a - *b)
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scaled(&self, alpha: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| *v * alpha).collect(),
        }
    }

    /// Frobenius inner product.
    pub fn inner(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other)?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn norm_2_1(&self) -> T {
        norm_2_1(self)
    }

    pub fn norm_2_inf(&self) -> T {
        norm_2_inf(self)
    }

    pub fn frobenius(&self) -> T {
        frobenius(self)
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

impl<T: Real> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    fn index(&self, (row, col): (usize, usize)) -> &T {
        &self.data[col * self.rows + row]
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

#[inline]
pub fn norm2<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub fn distance<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (x, y)| acc + (*x - *y) * (*x - *y))
        .sqrt()
}

/// Sum of column ℓ₂ norms.
pub fn norm_2_1<T: Real>(m: &Matrix<T>) -> T {
    m.columns().map(norm2).fold(T::zero(), |acc, n| acc + n)
}

/// Largest column ℓ₂ norm.
pub fn norm_2_inf<T: Real>(m: &Matrix<T>) -> T {
    m.columns().map(norm2).fold(T::zero(), T::max)
}

pub fn frobenius<T: Real>(m: &Matrix<T>) -> T {
    norm2(&m.data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m34() -> Matrix<f64> {
        Matrix::from_columns(&[vec![3.0, 0.0], vec![0.0, 4.0]]).unwrap()
    }

    #[test]
    fn norms_on_simple_matrix() {
        let m = m34();
        assert_eq!(norm_2_1(&m), 7.0);
        assert_eq!(norm_2_inf(&m), 4.0);
        assert_eq!(frobenius(&m), 5.0);
    }

    #[test]
    fn norms_of_zero_matrix() {
        let z = Matrix::<f64>::zeros(3, 5).unwrap();
        assert_eq!(norm_2_1(&z), 0.0);
        assert_eq!(norm_2_inf(&z), 0.0);
        assert_eq!(frobenius(&z), 0.0);
    }

    #[test]
    fn one_by_one_and_identity() {
        let m = Matrix::from_col_major(1, 1, vec![-2.0_f64]).unwrap();
        assert_eq!(norm_2_1(&m), 2.0);
        let i = Matrix::<f64>::identity(2).unwrap();
        assert_eq!(frobenius(&i), 2f64.sqrt());
    }

    #[test]
    fn rejects_bad_shapes_and_non_finite() {
        assert!(Matrix::<f64>::zeros(0, 3).is_err());
        assert!(Matrix::<f64>::zeros(3, 0).is_err());
        assert!(Matrix::from_col_major(2, 2, vec![1.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(Matrix::from_col_major(2, 2, vec![1.0; 3]).is_err());
        assert!(Vector::from_vec(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn column_major_indexing() {
        let m = Matrix::from_columns(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(m.shape(), (2, 3));
        assert_eq!(m.column(1), &[3.0, 4.0]);
        assert_eq!(m[(1, 2)], 6.0);
        assert_eq!(m.get(0, 2), 5.0);
    }

    #[test]
    fn norms_work_in_single_precision() {
        let m = m34().cast::<f32>();
        assert_eq!(norm_2_1(&m), 7.0f32);
        assert_eq!(frobenius(&m), 5.0f32);
    }

    fn matrix_strategy() -> impl Strategy<Value = (Matrix<f64>, Matrix<f64>)> {
        (1usize..6, 1usize..8).prop_flat_map(|(r, c)| {
            let entries = prop::collection::vec(-10.0f64..10.0, r * c);
            (entries.clone(), entries).prop_map(move |(a, b)| {
                (
                    Matrix::from_col_major(r, c, a).unwrap(),
                    Matrix::from_col_major(r, c, b).unwrap(),
                )
            })
        })
    }

    proptest! {
        #[test]
        fn norm_chain_holds((a, _b) in matrix_strategy()) {
            let slack = 1e-12 * (1.0 + norm_2_1(&a));
            prop_assert!(norm_2_inf(&a) <= frobenius(&a) + slack);
            prop_assert!(frobenius(&a) <= norm_2_1(&a) + slack);
            prop_assert!(norm_2_1(&a) <= a.cols() as f64 * norm_2_inf(&a) + slack);
        }

        #[test]
        fn triangle_inequality((a, b) in matrix_strategy()) {
            let mut sum = a.clone();
            sum.add_scaled(1.0, &b).unwrap();
            let norms: [fn(&Matrix<f64>) -> f64; 3] = [norm_2_1, norm_2_inf, frobenius];
            for n in norms {
                let rhs = n(&a) + n(&b);
                prop_assert!(n(&sum) <= rhs * (1.0 + 1e-12) + 1e-300);
            }
        }
    }
}
