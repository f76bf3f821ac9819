//! Label recovery by generator inversion: the recovered label of `x` is the
//! class whose conditional generator gets closest to it,
//! `argmin_y min_z ‖G(z; y) − x‖²`.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcomp::{Bind, Graph, OptimizerState, ParamStore, Tensor};
use crate::error::{invalid, Result};
use crate::models::{standard_normal, GeneratorParams};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryConfig {
    /// Independent starts per class.
    pub restarts: usize,
    /// Adam steps per start.
    pub steps: usize,
    pub lr: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig { restarts: 5, steps: 200, lr: 0.05 }
    }
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.steps == 0 {
            return Err(invalid!("restarts and steps must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(invalid!("learning rate must be positive, got {}", self.lr));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub label: usize,
    /// Best squared distance reached for each class.
    pub residuals: Vec<f64>,
}

/// First index of the minimum, so ties go to the lowest class.
fn argmin(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |best, i| if v[i] < v[best] { i } else { best })
}

/// Inverts `g` at `x`. All `restarts × m` inner problems run as rows of one
/// batch; Adam is elementwise, so each row follows exactly the trajectory it
/// would follow alone. The start for (class `y`, restart `r`) depends only
/// on `(y, r)` and one draw from `rng`, so adding restarts never changes the
/// earlier ones.
pub fn recover_label(x: &[f64], g: &GeneratorParams, cfg: &RecoveryConfig, rng: &mut Rng) -> Result<Recovery> {
    cfg.validate()?;
    let (m, d, dz) = (g.spec.m, g.spec.data_dim, g.spec.latent_dim);
    if x.len() != d {
        return Err(invalid!("sample has {} coordinates, generator emits {d}", x.len()));
    }
    let base = rng.next_u64();
    let rows = cfg.restarts * m;
    let mut z0 = Vec::with_capacity(rows * dz);
    let mut labels = Vec::with_capacity(rows);
    for r in 0..cfg.restarts {
        for y in 0..m {
            let mut s = seed::substream(base, "recovery-start", ((r as u64) << 32) | y as u64);
            z0.extend(standard_normal(1, dz, &mut s).into_data());
            labels.push(y);
        }
    }
    let mut store = ParamStore::new();
    let zk = store.insert("z", Tensor::matrix(rows, dz, z0)?);
    let target = Tensor::matrix(rows, d, x.iter().copied().cycle().take(rows * d).collect())?;
    let mut opt = OptimizerState::adam(cfg.lr);
    let mut best = vec![f64::INFINITY; rows];
    for step in 0..=cfg.steps {
        let mut graph = Graph::new();
        let z = store.var(&mut graph, zk);
        let out = g.forward_with(&mut graph, z, &labels, Bind::Frozen)?;
        let t = graph.input(target.clone());
        let diff = graph.sub(out, t)?;
        for (i, row) in graph.value(diff).data().chunks(d).enumerate() {
            let r: f64 = row.iter().map(|v| v * v).sum();
            if r < best[i] {
                best[i] = r;
            }
        }
        if step == cfg.steps {
            break;
        }
        let loss = graph.squared_l2(diff);
        let grads = graph.backward(loss)?;
        opt.step(&mut store, &grads)?;
    }
    let mut residuals = vec![f64::INFINITY; m];
    for (i, &r) in best.iter().enumerate() {
        let y = labels[i];
        residuals[y] = residuals[y].min(r);
    }
    Ok(Recovery { label: argmin(&residuals), residuals })
}

/// Recovers every row of `xs`; row `i` uses stream `(seed, i)`.
pub fn recover_labels(xs: &Tensor, g: &GeneratorParams, cfg: &RecoveryConfig, seed: u64) -> Result<Vec<Recovery>> {
    let (n, _) = xs.dims2()?;
    (0..n)
        .into_par_iter()
        .map(|i| recover_label(xs.row_slice(i), g, cfg, &mut seed::substream(seed, "recover", i as u64)))
        .collect()
}
