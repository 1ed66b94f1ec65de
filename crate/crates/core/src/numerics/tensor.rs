use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
///
/// Every matrix routine here sums over the contracted index left to right,
/// so results are bit-reproducible across runs and platforms.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension {
                op: "tensor construction",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds an `n×d` matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::Dimension {
                    op: "from_rows",
                    left: vec![d],
                    right: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![n, d], data)
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

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

    /// Number of rows of a matrix (first dimension).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Number of columns of a matrix (product of trailing dimensions).
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Dimension {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    fn expect_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            _ => Err(Error::Dimension {
                op,
                left: self.shape.clone(),
                right: vec![],
            }),
        }
    }

    fn check_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// `self · other` for `m×k` by `k×n`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.expect_matrix("matmul")?;
        let (k2, n) = other.expect_matrix("matmul")?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            accumulate_rows(o_row, a_row.iter().enumerate().map(|(p, &a)| (a, &other.data[p * n..(p + 1) * n])));
        }
        Tensor::new(vec![m, n], out)
    }

    /// `selfᵀ · other` for `k×m` by `k×n`, without materializing the transpose.
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        let (k, m) = self.expect_matrix("matmul_tn")?;
        let (k2, n) = other.expect_matrix("matmul_tn")?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul_tn",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let o_row = &mut out[i * n..(i + 1) * n];
            accumulate_rows(o_row, (0..k).map(|p| (self.data[p * m + i], &other.data[p * n..(p + 1) * n])));
        }
        Tensor::new(vec![m, n], out)
    }

    /// `self · otherᵀ` for `m×k` by `n×k`.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        let (_, k) = self.expect_matrix("matmul_nt")?;
        let (_, k2) = other.expect_matrix("matmul_nt")?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul_nt",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        // same per-entry summation order as `dot`, but vectorizes across columns
        self.matmul(&other.transpose()?)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.expect_matrix("transpose")?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new(vec![n, m], out)
    }

    /// Euclidean (Frobenius) norm over all entries.
    pub fn norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape(other, "dot")?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn zip_with(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        self.check_same_shape(other, op)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        self.check_same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Selects rows by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            shape.push(idx.len());
        } else {
            shape[0] = idx.len();
        }
        Tensor { shape, data }
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn vstack(parts: &[&Tensor]) -> Result<Tensor> {
        let cols = parts.first().map_or(0, |t| t.cols());
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.cols() != cols {
                return Err(Error::Dimension {
                    op: "vstack",
                    left: parts[0].shape.clone(),
                    right: p.shape.clone(),
                });
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        Tensor::new(vec![rows, cols], data)
    }

    /// Row-wise L2 normalization.
    pub fn l2_normalize_rows(&self) -> Result<Tensor> {
        self.l2_normalize_rows_with_norms().map(|(t, _)| t)
    }

    /// Row-wise L2 normalization, also returning the original row norms
    /// (needed to backpropagate through the normalization).
    pub fn l2_normalize_rows_with_norms(&self) -> Result<(Tensor, Vec<f64>)> {
        self.expect_matrix("l2_normalize_rows")?;
        let mut out = self.clone();
        let mut norms = Vec::with_capacity(self.rows());
        for i in 0..self.rows() {
            let row = out.row_mut(i);
            let n = dot(row, row).sqrt();
            if n.is_nan() || n < 1e-12 {
                return Err(Error::DegenerateFeature { row: i });
            }
            for v in row.iter_mut() {
                *v /= n;
            }
            norms.push(n);
        }
        Ok((out, norms))
    }
}

/// Gradient of a row-wise L2 normalization.
///
/// Given `y = x / ‖x‖` per row, returns `∂L/∂x = (g − (g·y) y) / ‖x‖`.
pub fn l2_normalize_rows_backward(normalized: &Tensor, norms: &[f64], grad: &Tensor) -> Tensor {
    let mut out = grad.clone();
    for (i, &n) in norms.iter().enumerate() {
        let y = normalized.row(i);
        let g = grad.row(i);
        let gy = dot(g, y);
        for ((o, &gv), &yv) in out.row_mut(i).iter_mut().zip(g).zip(y) {
            *o = (gv - gy * yv) / n;
        }
    }
    out
}

/// `out += Σ_p a_p·b_p` over rows `b_p`, adding terms to each entry in
/// iteration order. Four rows at a time are kept in registers; the per-entry
/// order of additions is unchanged.
fn accumulate_rows<'a>(out: &mut [f64], mut terms: impl Iterator<Item = (f64, &'a [f64])>) {
    loop {
        let Some((a0, b0)) = terms.next() else { return };
        match (terms.next(), terms.next(), terms.next()) {
            (Some((a1, b1)), Some((a2, b2)), Some((a3, b3))) => {
                for ((((o, &x0), &x1), &x2), &x3) in out.iter_mut().zip(b0).zip(b1).zip(b2).zip(b3) {
                    *o = *o + a0 * x0 + a1 * x1 + a2 * x2 + a3 * x3;
                }
            }
            rest => {
                for (a, b) in [Some((a0, b0)), rest.0, rest.1, rest.2].into_iter().flatten() {
                    for (o, &x) in out.iter_mut().zip(b) {
                        *o += a * x;
                    }
                }
            }
        }
    }
}

/// Fixed-order dot product of two slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (&x, &y)| acc + x * y)
}
