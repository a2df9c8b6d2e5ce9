//! Dense row-major tensors.

use std::fmt::Debug;

use num_traits::Float;

use crate::error::{Error, Result};

/// Scalar type a [`Tensor`] can hold.
///
/// Training runs in `f32`. The same model code instantiated at `f64` is what
/// the finite-difference checks exercise.
pub trait Real: Float + Debug + Default + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Real = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected = shape.iter().product::<usize>();
        if expected != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Row-major 2-D tensor from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            shape: vec![rows.len(), cols],
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
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

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Size of the leading dimension; 1 for a scalar.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Product of all trailing dimensions.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let w = self.row_len();
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// View as `[rows, row_len]`.
    pub fn flatten_rows(self) -> Self {
        let shape = vec![self.rows(), self.row_len()];
        Self {
            shape,
            data: self.data,
        }
    }

    /// Gathers the given leading-dimension rows into a new tensor.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let w = self.row_len();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            shape.push(idx.len());
        } else {
            shape[0] = idx.len();
        }
        Self { shape, data }
    }

    /// Stacks tensors with identical trailing shape along the leading dimension.
    pub fn concat_rows(parts: &[&Tensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let tail = &first.shape[1..];
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(Error::dim(format!(
                    "concat rows: {:?} vs {:?}",
                    p.shape, first.shape
                )));
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = rows;
        Ok(Self { shape, data })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sum with 64-bit accumulation in storage order.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn check_2d(&self, what: &str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::dim(format!("{what}: expected a matrix, got shape {s:?}"))),
        }
    }
}

/// Row-wise softmax of a `[n, c]` matrix.
pub fn softmax_rows<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let c = logits.row_len();
    let mut out = logits.clone();
    if c == 0 {
        return out;
    }
    for row in out.data.chunks_mut(c) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut z = 0.0f64;
        for v in row.iter_mut() {
            let e = (*v - m).exp();
            *v = e;
            z += e.as_f64();
        }
        for v in row.iter_mut() {
            *v = T::from_f64(v.as_f64() / z);
        }
    }
    out
}

/// Index of the largest value in each row; ties go to the lowest index.
pub fn argmax_rows<T: Real>(m: &Tensor<T>) -> Vec<usize> {
    let c = m.row_len();
    m.data
        .chunks(c.max(1))
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// `out[i,j] = sum_k a[i,k] b[k,j]`, accumulated in f64, row by row.
///
/// Each output row depends only on its own input row, so results do not
/// depend on how a batch is split.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k) = a.check_2d("matmul lhs")?;
    let (k2, m) = b.check_2d("matmul rhs")?;
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape, b.shape
        )));
    }
    Tensor::new(vec![n, m], gemm(&a.data, n, k, &b.data, m))
}

const ROW_BLOCK: usize = 8;

/// Row-major `[n,k] · [k,m]`. Every output entry is summed over `k` in
/// ascending order in f64, so a row's result does not depend on its neighbours.
fn gemm<T: Real>(a: &[T], n: usize, k: usize, b: &[T], m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    let mut acc = vec![0.0f64; ROW_BLOCK * m];
    let mut i0 = 0;
    while i0 < n {
        let rows = ROW_BLOCK.min(n - i0);
        acc.iter_mut().for_each(|v| *v = 0.0);
        for kk in 0..k {
            let brow = &b[kk * m..(kk + 1) * m];
            for r in 0..rows {
                let av = a[(i0 + r) * k + kk];
                if av == T::zero() {
                    continue;
                }
                let av = av.as_f64();
                for (dst, &bv) in acc[r * m..(r + 1) * m].iter_mut().zip(brow) {
                    *dst += av * bv.as_f64();
                }
            }
        }
        for r in 0..rows {
            let dst = &mut out[(i0 + r) * m..(i0 + r + 1) * m];
            for (o, &v) in dst.iter_mut().zip(&acc[r * m..(r + 1) * m]) {
                *o = T::from_f64(v);
            }
        }
        i0 += rows;
    }
    out
}

fn transpose<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// `out = a · bᵀ` for `a: [n,k]`, `b: [m,k]`.
pub fn matmul_nt<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k) = a.check_2d("matmul_nt lhs")?;
    let (m, k2) = b.check_2d("matmul_nt rhs")?;
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul_nt inner dimensions differ: {:?} x {:?}ᵀ",
            a.shape, b.shape
        )));
    }
    let bt = transpose(&b.data, m, k);
    Tensor::new(vec![n, m], gemm(&a.data, n, k, &bt, m))
}

/// `out = aᵀ · b` for `a: [n,k]`, `b: [n,m]`, summed over rows in order.
pub fn matmul_tn<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k) = a.check_2d("matmul_tn lhs")?;
    let (n2, m) = b.check_2d("matmul_tn rhs")?;
    if n != n2 {
        return Err(Error::dim(format!(
            "matmul_tn row counts differ: {:?}ᵀ x {:?}",
            a.shape, b.shape
        )));
    }
    let at = transpose(&a.data, n, k);
    Tensor::new(vec![k, m], gemm(&at, k, n, &b.data, m))
}

/// `x W + b` for `x: [n,in]`, `W: [in,out]`, `b: [out]`.
pub fn affine_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut out = matmul(x, w)?;
    let m = out.row_len();
    if b.len() != m {
        return Err(Error::dim(format!(
            "bias has {} entries, layer output has {m}",
            b.len()
        )));
    }
    for row in out.data.chunks_mut(m) {
        for (o, &bv) in row.iter_mut().zip(&b.data) {
            *o = *o + bv;
        }
    }
    Ok(out)
}
