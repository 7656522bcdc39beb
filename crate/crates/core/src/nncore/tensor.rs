use std::fmt;

use super::NnError;

/// Dense row-major array of `f64` values.
///
/// Most of the crate works with rank-2 tensors (`rows × cols`) holding one
/// sample per row; rank-1 tensors store bias vectors.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        let head: Vec<f64> = self.data.iter().take(PREVIEW).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("head", &head)
            .field("len", &self.data.len())
            .finish()
    }
}

impl Tensor {
    /// Builds a tensor, rejecting inconsistent shapes and non-finite values.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NnError> {
        if shape.contains(&0) {
            return Err(NnError::Shape(format!("zero extent in shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NnError::Shape(format!("shape {shape:?} needs {expected} values, got {}", data.len())));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(NnError::NonFinite(format!("value {} at flat index {pos}", data[pos])));
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for results of operations on valid tensors.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![0.0; n])
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self, NnError> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NnError> {
        Self::new(vec![rows, cols], data)
    }

    /// Stacks equal-length rows into a `rows × cols` matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NnError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NnError::Shape("ragged rows".into()));
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::from_parts(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw buffer. Callers must keep values finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Outer dimension (batch size for matrices, length for vectors).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all inner dimensions.
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, NnError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(NnError::Shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        Ok(Self::from_parts(shape, self.data))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| if v.is_nan() || m.is_nan() { f64::NAN } else { m.max(v.abs()) })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self, NnError> {
        self.expect_same_shape(other, "zip_map")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    pub fn add(&self, other: &Self) -> Result<Self, NnError> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, NnError> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn expect_same_shape(&self, other: &Self, what: &str) -> Result<(), NnError> {
        if self.shape != other.shape {
            return Err(NnError::Shape(format!("{what}: {:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    /// Column sums of a matrix, as a vector of length `cols`.
    pub fn sum_rows(&self) -> Self {
        let c = self.cols();
        let mut out = vec![0.0; c];
        for row in self.data.chunks_exact(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        Self::from_parts(vec![c], out)
    }

    /// Gathers rows by index into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self, NnError> {
        if idx.is_empty() {
            return Err(NnError::Shape("select_rows with no indices".into()));
        }
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= self.rows() {
                return Err(NnError::Shape(format!("row {i} out of range for {} rows", self.rows())));
            }
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = idx.len();
        Ok(Self::from_parts(shape, data))
    }

    /// Concatenates matrices along the row axis.
    pub fn concat_rows(parts: &[&Self]) -> Result<Self, NnError> {
        let first = parts.first().ok_or_else(|| NnError::Shape("concat_rows of nothing".into()))?;
        let inner = &first.shape[1..];
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if &p.shape[1..] != inner {
                return Err(NnError::Shape(format!("concat_rows: {:?} vs {:?}", first.shape, p.shape)));
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = rows;
        Ok(Self::from_parts(shape, data))
    }

    /// `self · other` for matrices `m×k` and `k×n`.
    pub fn matmul(&self, other: &Self) -> Result<Self, NnError> {
        let (m, k) = self.dims2("matmul lhs")?;
        let (k2, n) = other.dims2("matmul rhs")?;
        if k != k2 {
            return Err(NnError::Shape(format!("matmul: {m}×{k} · {k2}×{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data, k as isize, 1, &other.data, n as isize, 1, &mut out);
        Ok(Self::from_parts(vec![m, n], out))
    }

    /// `self · otherᵀ` for matrices `m×k` and `n×k`.
    pub fn matmul_t(&self, other: &Self) -> Result<Self, NnError> {
        let (m, k) = self.dims2("matmul_t lhs")?;
        let (n, k2) = other.dims2("matmul_t rhs")?;
        if k != k2 {
            return Err(NnError::Shape(format!("matmul_t: {m}×{k} · ({n}×{k2})ᵀ")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data, k as isize, 1, &other.data, 1, k as isize, &mut out);
        Ok(Self::from_parts(vec![m, n], out))
    }

    /// `selfᵀ · other` for matrices `k×m` and `k×n`.
    pub fn t_matmul(&self, other: &Self) -> Result<Self, NnError> {
        let (k, m) = self.dims2("t_matmul lhs")?;
        let (k2, n) = other.dims2("t_matmul rhs")?;
        if k != k2 {
            return Err(NnError::Shape(format!("t_matmul: ({k}×{m})ᵀ · {k2}×{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data, 1, m as isize, &other.data, n as isize, 1, &mut out);
        Ok(Self::from_parts(vec![m, n], out))
    }

    pub fn transpose(&self) -> Result<Self, NnError> {
        let (r, c) = self.dims2("transpose")?;
        Ok(Self::from_fn(c, r, |i, j| self.data[j * c + i]))
    }

    pub(crate) fn dims2(&self, what: &str) -> Result<(usize, usize), NnError> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(NnError::Shape(format!("{what}: expected a matrix, got {other:?}"))),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
) {
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: the strides describe matrices that lie entirely inside `a`, `b`
    // and `c`, whose lengths the callers have checked against m, k and n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
