//! Label-noise channels given by row-stochastic confusion matrices.
//!
//! `entries[i][j]` is the probability that a sample whose clean label is `i`
//! is observed with label `j`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::findist::FiniteJoint;

/// Rows must sum to one within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Pivots below this magnitude declare the matrix rank-deficient.
pub const PIVOT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConfusionRepr", into = "ConfusionRepr")]
pub struct ConfusionMatrix {
    m: usize,
    entries: Vec<f64>,
    cdf: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ConfusionRepr {
    m: usize,
    rows: Vec<Vec<f64>>,
}

impl TryFrom<ConfusionRepr> for ConfusionMatrix {
    type Error = Error;

    fn try_from(r: ConfusionRepr) -> Result<Self> {
        if r.rows.len() != r.m {
            return Err(invalid!("expected {} rows, found {}", r.m, r.rows.len()));
        }
        ConfusionMatrix::from_rows(&r.rows)
    }
}

impl From<ConfusionMatrix> for ConfusionRepr {
    fn from(c: ConfusionMatrix) -> Self {
        ConfusionRepr { m: c.m, rows: c.rows() }
    }
}

impl ConfusionMatrix {
    /// Builds a channel from a row-major `m×m` table, validating stochasticity.
    pub fn new(m: usize, entries: Vec<f64>) -> Result<Self> {
        if m == 0 {
            return Err(invalid!("class count must be positive"));
        }
        if entries.len() != m * m {
            return Err(invalid!("expected {} entries, found {}", m * m, entries.len()));
        }
        for (k, &e) in entries.iter().enumerate() {
            if !(0.0..=1.0).contains(&e) {
                return Err(invalid!("entry ({}, {}) = {e} outside [0, 1]", k / m, k % m));
            }
        }
        let mut cdf = Vec::with_capacity(m * m);
        for (i, row) in entries.chunks(m).enumerate() {
            let mut acc = 0.0;
            for &e in row {
                acc += e;
                cdf.push(acc);
            }
            if (acc - 1.0).abs() > ROW_SUM_TOL {
                return Err(invalid!("row {i} sums to {acc}, not 1"));
            }
        }
        Ok(ConfusionMatrix { m, entries, cdf })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != m) {
            return Err(invalid!("row {i} has {} entries, expected {m}", r.len()));
        }
        Self::new(m, rows.concat())
    }

    pub fn identity(m: usize) -> Result<Self> {
        let mut e = vec![0.0; m * m];
        for i in 0..m {
            e[i * m + i] = 1.0;
        }
        Self::new(m, e)
    }

    /// Uniform flipping: a label survives with probability `pi` and otherwise
    /// moves to one of the other `m - 1` labels uniformly.
    pub fn uniform_flip(m: usize, pi: f64) -> Result<Self> {
        if m < 2 {
            return Err(invalid!("uniform flipping needs at least 2 classes, got {m}"));
        }
        if !(0.0..=1.0).contains(&pi) {
            return Err(invalid!("label accuracy {pi} outside [0, 1]"));
        }
        let off = (1.0 - pi) / (m - 1) as f64;
        let mut e = vec![off; m * m];
        for i in 0..m {
            e[i * m + i] = pi;
        }
        Self::new(m, e)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.m..(i + 1) * self.m]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.m).map(<[f64]>::to_vec).collect()
    }

    /// The channel that applies `self` and then `next`: the product `self·next`.
    pub fn then(&self, next: &ConfusionMatrix) -> Result<ConfusionMatrix> {
        let m = self.m;
        if next.m != m {
            return Err(invalid!("cannot chain {m}-class and {}-class channels", next.m));
        }
        let mut e = vec![0.0; m * m];
        for i in 0..m {
            for k in 0..m {
                let a = self.get(i, k);
                for j in 0..m {
                    e[i * m + j] += a * next.get(k, j);
                }
            }
        }
        // Renormalize away rounding so the row-sum check stays tight.
        for row in e.chunks_mut(m) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v = (*v / s).clamp(0.0, 1.0));
        }
        Self::new(m, e)
    }

    pub fn is_identity(&self) -> bool {
        (0..self.m).all(|i| (0..self.m).all(|j| self.get(i, j) == if i == j { 1.0 } else { 0.0 }))
    }

    /// Draws a corrupted label for clean label `y` by inverse-CDF sampling on row `y`.
    pub fn corrupt<R: rand::Rng + ?Sized>(&self, y: usize, rng: &mut R) -> Result<usize> {
        if y >= self.m {
            return Err(invalid!("label {y} out of range for {} classes", self.m));
        }
        let u: f64 = rng.random();
        let cdf = &self.cdf[y * self.m..(y + 1) * self.m];
        let j = cdf.partition_point(|&c| c <= u);
        Ok(j.min(self.m - 1))
    }

    /// Joint distribution of `(x, corrupted label)` when `p`'s labels pass
    /// through this channel.
    pub fn push_forward(&self, p: &FiniteJoint) -> Result<FiniteJoint> {
        if p.m() != self.m {
            return Err(invalid!("distribution has {} labels, channel has {}", p.m(), self.m));
        }
        let m = self.m;
        let mut out = vec![0.0; p.support() * m];
        for x in 0..p.support() {
            let row = p.row(x);
            let dst = &mut out[x * m..(x + 1) * m];
            for (y, &mass) in row.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                for (d, &c) in dst.iter_mut().zip(self.row(y)) {
                    *d += mass * c;
                }
            }
        }
        FiniteJoint::new(p.support(), m, out)
    }

    pub fn analyze(&self) -> ChannelAnalysis {
        match invert(self.m, &self.entries) {
            Some(inv) => {
                let max_norm_inv = max_row_abs_sum(self.m, &inv);
                ChannelAnalysis {
                    inverse: Some(inv.chunks(self.m).map(<[f64]>::to_vec).collect()),
                    max_norm_inv,
                    is_full_rank: true,
                    is_diagonally_dominant: self.is_diagonally_dominant(),
                }
            }
            None => ChannelAnalysis {
                inverse: None,
                max_norm_inv: f64::INFINITY,
                is_full_rank: false,
                is_diagonally_dominant: self.is_diagonally_dominant(),
            },
        }
    }

    /// Strict row dominance: each diagonal entry exceeds every other entry of its row.
    pub fn is_diagonally_dominant(&self) -> bool {
        (0..self.m).all(|i| (0..self.m).all(|j| i == j || self.get(i, i) > self.get(i, j)))
    }
}

/// Inverse and max-norm of a channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelAnalysis {
    pub inverse: Option<Vec<Vec<f64>>>,
    /// `max_i Σ_j |C⁻¹[i][j]|`, infinite when `C` is singular.
    pub max_norm_inv: f64,
    pub is_full_rank: bool,
    pub is_diagonally_dominant: bool,
}

/// `max_i Σ_j |a[i][j]|` for a row-major `m×m` matrix.
pub fn max_row_abs_sum(m: usize, a: &[f64]) -> f64 {
    a.chunks(m)
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Gauss-Jordan inversion with partial pivoting; `None` when a pivot falls
/// below [`PIVOT_TOL`].
pub fn invert(m: usize, a: &[f64]) -> Option<Vec<f64>> {
    let w = 2 * m;
    let mut aug = vec![0.0; m * w];
    for i in 0..m {
        aug[i * w..i * w + m].copy_from_slice(&a[i * m..(i + 1) * m]);
        aug[i * w + m + i] = 1.0;
    }
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&r, &s| aug[r * w + col].abs().total_cmp(&aug[s * w + col].abs()))
            .unwrap();
        if aug[piv * w + col].abs() < PIVOT_TOL {
            return None;
        }
        if piv != col {
            for k in 0..w {
                aug.swap(piv * w + k, col * w + k);
            }
        }
        let p = aug[col * w + col];
        for k in 0..w {
            aug[col * w + k] /= p;
        }
        for r in 0..m {
            if r == col {
                continue;
            }
            let f = aug[r * w + col];
            if f == 0.0 {
                continue;
            }
            for k in 0..w {
                aug[r * w + k] -= f * aug[col * w + k];
            }
        }
    }
    Some((0..m).flat_map(|i| aug[i * w + m..(i + 1) * w].to_vec()).collect())
}
