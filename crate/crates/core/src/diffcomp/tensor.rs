use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Dense row-major tensor of doubles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(invalid!("shape {shape:?} needs {n} values, got {}", data.len()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1, 1], data: vec![v] }
    }

    pub fn column(values: Vec<f64>) -> Self {
        Tensor { shape: vec![values.len(), 1], data: values }
    }

    pub fn row(values: Vec<f64>) -> Self {
        Tensor { shape: vec![1, values.len()], data: values }
    }

    /// `n×m` one-hot rows.
    pub fn one_hot(labels: &[usize], m: usize) -> Result<Self> {
        let mut t = Tensor::zeros(&[labels.len(), m]);
        for (i, &y) in labels.iter().enumerate() {
            if y >= m {
                return Err(invalid!("label {y} out of range for {m} classes"));
            }
            t.data[i * m + y] = 1.0;
        }
        Ok(t)
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

    /// Rank ≤ 2 view as `(rows, cols)`: scalars are `1×1`, vectors `1×k`.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [] => Ok((1, 1)),
            [k] => Ok((1, *k)),
            [r, c] => Ok((*r, *c)),
            s => Err(invalid!("expected rank ≤ 2, got shape {s:?}")),
        }
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        let cols = *self.shape.last().unwrap_or(&1);
        self.data[r * cols + c]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let cols = *self.shape.last().unwrap_or(&1);
        &self.data[r * cols..(r + 1) * cols]
    }

    /// Rows `idx` gathered into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let cols = *self.shape.last().unwrap_or(&1);
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(&self.data[i * cols..(i + 1) * cols]);
        }
        Tensor { shape: vec![idx.len(), cols], data }
    }

    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|v| !v.is_finite())
    }
}

/// `a (r×k) · b (k×c)`.
pub(crate) fn matmul(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let orow = &mut out[i * c..(i + 1) * c];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&b[p * c..(p + 1) * c]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `aᵀ (k×r)ᵀ · b (k×c)` → `r×c`.
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], k: usize, r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for p in 0..k {
        let brow = &b[p * c..(p + 1) * c];
        for (i, &av) in a[p * r..(p + 1) * r].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out[i * c..(i + 1) * c].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a (r×k) · bᵀ` with `b` stored `c×k` → `r×c`.
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..c {
            out[i * c + j] = arow.iter().zip(&b[j * k..(j + 1) * k]).map(|(x, y)| x * y).sum();
        }
    }
    out
}
