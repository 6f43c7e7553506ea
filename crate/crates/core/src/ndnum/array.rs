use std::fmt::Debug;

use num_traits::Float;

use crate::error::{Error, Result};

/// Element type of an [`Array`]. Training runs in `f32`; `f64` exists for
/// gradient checking.
pub trait Scalar: Float + Default + Debug + Send + Sync + std::iter::Sum + 'static {
    fn from_f64_lossy(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Array<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Array<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(
                "array",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: Vec<usize>, value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn ones(shape: Vec<usize>) -> Self {
        Self::filled(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::dim("from_rows", "ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension, treating a 1-D array as a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    /// Trailing dimension.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols() + j]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_shape(other, op)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn cast<U: Scalar>(&self) -> Array<U> {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::from_f64_lossy(x.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn check_finite(self, op: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite(op))
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(op, format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self {
            shape: vec![c, r],
            data: out,
        }
    }

    /// Matrix product of two 2-D arrays.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::dim("matmul", format!("{:?} x {:?}", self.shape, other.shape)));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    /// Row-wise softmax over the trailing axis; entries whose mask is false
    /// come out as exactly zero.
    pub fn softmax_masked(&self, mask: &[bool]) -> Result<Self> {
        if mask.len() != self.len() {
            return Err(Error::dim(
                "softmax_masked",
                format!("mask length {} for {} values", mask.len(), self.len()),
            ));
        }
        let c = self.cols();
        let mut out = vec![T::zero(); self.len()];
        for (r, (row, mrow)) in self.data.chunks(c).zip(mask.chunks(c)).enumerate() {
            let mut max = T::neg_infinity();
            for (&x, &m) in row.iter().zip(mrow) {
                if m && x > max {
                    max = x;
                }
            }
            if !mrow.iter().any(|&m| m) {
                return Err(Error::Degenerate(format!("softmax row {r} is fully masked")));
            }
            let orow = &mut out[r * c..(r + 1) * c];
            let mut total = T::zero();
            for ((o, &x), &m) in orow.iter_mut().zip(row).zip(mrow) {
                if m {
                    *o = (x - max).exp();
                    total = total + *o;
                }
            }
            for o in orow.iter_mut() {
                *o = *o / total;
            }
        }
        Self::new(self.shape.clone(), out)?.check_finite("softmax_masked")
    }
}

impl<T: Scalar> Default for Array<T> {
    fn default() -> Self {
        Array::zeros(vec![0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let eye = Array::<f32>::from_rows(&[vec![1., 0.], vec![0., 1.]]).unwrap();
        let b = Array::from_rows(&[vec![1., 2., 3.], vec![4., 5., 6.]]).unwrap();
        assert_eq!(eye.matmul(&b).unwrap(), b);
    }

    #[test]
    fn matmul_hand_computed() {
        let a = Array::<f32>::from_rows(&[vec![1., 2.], vec![3., 4.]]).unwrap();
        let b = Array::from_rows(&[vec![1.], vec![1.]]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[3., 7.]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let z = Array::<f32>::zeros(vec![2, 3]);
        let b = Array::new(vec![3, 4], (0..12).map(|x| x as f32).collect()).unwrap();
        let out = z.matmul(&b).unwrap();
        assert_eq!(out.shape(), &[2, 4]);
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Array::<f32>::zeros(vec![2, 3]);
        let b = Array::<f32>::zeros(vec![2, 3]);
        assert!(matches!(a.matmul(&b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn softmax_symmetric_pair() {
        let x = Array::<f32>::vector(vec![0., 0.]);
        let s = x.softmax_masked(&[true, true]).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_mask_excludes() {
        let x = Array::<f32>::vector(vec![5., 5., 100.]);
        let s = x.softmax_masked(&[true, true, false]).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn softmax_known_values() {
        let x = Array::<f64>::vector(vec![1., 2., 3.]);
        let s = x.softmax_masked(&[true; 3]).unwrap();
        for (got, want) in s.data().iter().zip([0.0900, 0.2447, 0.6652]) {
            assert!((got - want).abs() < 1e-4, "{got} vs {want}");
        }
    }

    #[test]
    fn softmax_fully_masked_row_is_degenerate() {
        let x = Array::<f32>::from_rows(&[vec![1., 2.], vec![3., 4.]]).unwrap();
        let err = x.softmax_masked(&[true, false, false, false]).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn new_checks_length() {
        assert!(Array::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
