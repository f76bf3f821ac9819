//! Dense generator, projection discriminator and classifiers.
//!
//! The discriminator scores a labeled sample as
//! `D(x, y) = onehot(y)ᵀ V ψ(x) + vᵀ ψ'(x)`, with `ψ` and `ψ'` two linear
//! heads on a shared trunk. Keeping `V` inside the column-wise max-norm ball
//! and `v` inside the unit ball is what lets a corrupted-label discriminator
//! control the clean distance.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffcomp::{Bind, Graph, OptimizerState, ParamKey, ParamStore, Tensor, Var};
use crate::error::{invalid, Result};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

/// Fully connected stack; `sizes` lists every width including input and output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    act: Activation,
    activate_last: bool,
    layers: Vec<(ParamKey, ParamKey)>,
}

impl Mlp {
    pub fn build(
        store: &mut ParamStore,
        prefix: &str,
        sizes: &[usize],
        act: Activation,
        activate_last: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(invalid!("layer sizes {sizes:?} need ≥ 2 positive widths"));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let std = (1.0 / w[0] as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                let weights = (0..w[0] * w[1]).map(|_| normal.sample(rng)).collect();
                let wk = store.insert(format!("{prefix}.{i}.w"), Tensor::matrix(w[0], w[1], weights).unwrap());
                let bk = store.insert(format!("{prefix}.{i}.b"), Tensor::zeros(&[1, w[1]]));
                (wk, bk)
            })
            .collect();
        Ok(Mlp { sizes: sizes.to_vec(), act, activate_last, layers })
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, bind: Bind) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(wk, bk)) in self.layers.iter().enumerate() {
            let w = store.bind(g, wk, bind);
            let b = store.bind(g, bk, bind);
            h = g.matmul(h, w)?;
            h = g.add(h, b)?;
            if i < last || self.activate_last {
                h = match self.act {
                    Activation::Relu => g.relu(h),
                    Activation::Tanh => g.tanh(h),
                };
            }
        }
        Ok(h)
    }
}

fn check_labels(labels: &[usize], m: usize) -> Result<()> {
    match labels.iter().find(|&&y| y >= m) {
        Some(y) => Err(invalid!("label {y} out of range for {m} classes")),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub latent_dim: usize,
    pub m: usize,
    pub data_dim: usize,
    pub hidden: Vec<usize>,
}

/// `G(z; y)`: tanh hidden layers, linear output, input `[z | onehot(y)]`.
#[derive(Debug, Clone)]
pub struct GeneratorParams {
    pub spec: GeneratorSpec,
    pub store: ParamStore,
    net: Mlp,
}

impl GeneratorParams {
    pub fn new(spec: GeneratorSpec, rng: &mut Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut sizes = vec![spec.latent_dim + spec.m];
        sizes.extend(&spec.hidden);
        sizes.push(spec.data_dim);
        let net = Mlp::build(&mut store, "gen", &sizes, Activation::Tanh, false, rng)?;
        Ok(GeneratorParams { spec, store, net })
    }

    /// Rebuilds a generator from the `gen.*` entries of a saved store (for
    /// example a training checkpoint that also holds the discriminator).
    pub fn from_store(spec: GeneratorSpec, saved: &ParamStore) -> Result<Self> {
        let mut g = GeneratorParams::new(spec, &mut crate::seed::rng(0))?;
        let mut own = ParamStore::new();
        for (name, t) in saved.iter().filter(|(n, _)| n.starts_with("gen.")) {
            own.insert(name, t.clone());
        }
        if own.len() != g.store.len() {
            return Err(invalid!("saved store has {} generator tensors, expected {}", own.len(), g.store.len()));
        }
        g.store.load_from(&own)?;
        Ok(g)
    }

    /// Generator graph for latent rows `z` conditioned on `labels`.
    pub fn forward(&self, g: &mut Graph, z: Var, labels: &[usize]) -> Result<Var> {
        self.forward_with(g, z, labels, Bind::Train)
    }

    pub fn forward_with(&self, g: &mut Graph, z: Var, labels: &[usize], bind: Bind) -> Result<Var> {
        check_labels(labels, self.spec.m)?;
        let y = g.input(Tensor::one_hot(labels, self.spec.m)?);
        let input = g.concat(z, y)?;
        self.net.forward(g, &self.store, input, bind)
    }

    pub fn generate(&self, z: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let zv = g.input(z.clone());
        let out = self.forward_with(&mut g, zv, labels, Bind::Frozen)?;
        Ok(g.value(out).clone())
    }

    /// Standard-normal latent rows.
    pub fn sample_latent(&self, n: usize, rng: &mut Rng) -> Tensor {
        standard_normal(n, self.spec.latent_dim, rng)
    }
}

pub fn standard_normal(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| normal.sample(rng)).collect()).unwrap()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub m: usize,
    pub data_dim: usize,
    pub hidden: Vec<usize>,
    /// Width of `ψ` (rows of `Vᵀ`).
    pub proj_dim: usize,
    /// Width of `ψ'`.
    pub uncond_dim: usize,
    /// Concatenate `onehot(y)` to the trunk input.
    pub concat_y: bool,
    /// Include the `onehot(y)ᵀVψ` term.
    pub projection: bool,
}

/// Discriminator parameters `(V, v, θ)`. `V` is stored transposed
/// (`proj_dim × m`) so that `ψ·Vᵀ` is a plain matmul; column `j` of `V` is
/// row `j` of the stored tensor.
#[derive(Debug, Clone)]
pub struct ProjDiscParams {
    pub spec: DiscriminatorSpec,
    pub store: ParamStore,
    trunk: Mlp,
    psi: Mlp,
    psi_prime: Mlp,
    v_big: ParamKey,
    v_small: ParamKey,
}

impl ProjDiscParams {
    pub fn new(spec: DiscriminatorSpec, rng: &mut Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let input = spec.data_dim + if spec.concat_y { spec.m } else { 0 };
        let mut sizes = vec![input];
        sizes.extend(&spec.hidden);
        let trunk_out = *sizes.last().unwrap();
        let trunk = if spec.hidden.is_empty() {
            return Err(invalid!("discriminator needs at least one hidden layer"));
        } else {
            Mlp::build(&mut store, "disc.trunk", &sizes, Activation::Relu, true, rng)?
        };
        let psi = Mlp::build(&mut store, "disc.psi", &[trunk_out, spec.proj_dim], Activation::Relu, false, rng)?;
        let psi_prime = Mlp::build(&mut store, "disc.psi_prime", &[trunk_out, spec.uncond_dim], Activation::Relu, false, rng)?;
        let normal = Normal::new(0.0, 0.1).expect("positive std");
        let vt = (0..spec.proj_dim * spec.m).map(|_| normal.sample(rng)).collect();
        let v_big = store.insert("disc.V_t", Tensor::matrix(spec.proj_dim, spec.m, vt)?);
        let vs = (0..spec.uncond_dim).map(|_| normal.sample(rng)).collect();
        let v_small = store.insert("disc.v", Tensor::matrix(spec.uncond_dim, 1, vs)?);
        let mut p = ProjDiscParams { spec, store, trunk, psi, psi_prime, v_big, v_small };
        p.project_constraints();
        Ok(p)
    }

    /// `V` as an `m × proj_dim` row-major table.
    pub fn v_matrix(&self) -> Vec<Vec<f64>> {
        let vt = self.store.get(self.v_big);
        let (d, m) = (self.spec.proj_dim, self.spec.m);
        (0..m).map(|i| (0..d).map(|j| vt.data()[j * m + i]).collect()).collect()
    }

    pub fn set_v_matrix(&mut self, v: &[Vec<f64>]) -> Result<()> {
        let (d, m) = (self.spec.proj_dim, self.spec.m);
        if v.len() != m || v.iter().any(|r| r.len() != d) {
            return Err(invalid!("V must be {m}×{d}"));
        }
        let vt = self.store.get_mut(self.v_big).data_mut();
        for (i, row) in v.iter().enumerate() {
            for (j, &val) in row.iter().enumerate() {
                vt[j * m + i] = val;
            }
        }
        Ok(())
    }

    pub fn v_vector(&self) -> &[f64] {
        self.store.get(self.v_small).data()
    }

    pub fn set_v_vector(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.spec.uncond_dim {
            return Err(invalid!("v must have {} entries", self.spec.uncond_dim));
        }
        self.store.get_mut(self.v_small).data_mut().copy_from_slice(v);
        Ok(())
    }

    /// Rescales each column of `V` whose max-abs entry exceeds 1 and `v` when
    /// its Euclidean norm exceeds 1. Idempotent.
    pub fn project_constraints(&mut self) {
        let m = self.spec.m;
        let vt = self.store.get_mut(self.v_big).data_mut();
        for col in vt.chunks_mut(m) {
            let peak = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if peak > 1.0 {
                col.iter_mut().for_each(|v| *v /= peak);
            }
        }
        let v = self.store.get_mut(self.v_small).data_mut();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let n = norm(v);
        if n > 1.0 {
            v.iter_mut().for_each(|x| *x /= n);
            // Rounding can leave the norm an ulp above 1.
            while norm(v) > 1.0 {
                v.iter_mut().for_each(|x| *x *= 1.0 - f64::EPSILON);
            }
        }
    }

    /// Whether `V ∈ V₁` and `v ∈ V₂`.
    pub fn is_feasible(&self) -> bool {
        let m = self.spec.m;
        let cols_ok = self
            .store
            .get(self.v_big)
            .data()
            .chunks(m)
            .all(|c| c.iter().all(|v| v.abs() <= 1.0));
        let norm = self.v_vector().iter().map(|x| x * x).sum::<f64>().sqrt();
        cols_ok && norm <= 1.0
    }

    fn trunk_features(&self, g: &mut Graph, x: Var, labels: Option<&[usize]>, bind: Bind) -> Result<Var> {
        let input = match (self.spec.concat_y, labels) {
            (true, Some(l)) => {
                let y = g.input(Tensor::one_hot(l, self.spec.m)?);
                g.concat(x, y)?
            }
            (true, None) => return Err(invalid!("concat discriminator needs labels")),
            (false, _) => x,
        };
        self.trunk.forward(g, &self.store, input, bind)
    }

    /// Scores for every label at once: `n × m`.
    fn scores_from_features(&self, g: &mut Graph, h: Var, bind: Bind) -> Result<Var> {
        let n = g.value(h).dims2()?.0;
        let psi2 = self.psi_prime.forward(g, &self.store, h, bind)?;
        let v = self.store.bind(g, self.v_small, bind);
        let uncond = g.matmul(psi2, v)?;
        if self.spec.projection {
            let psi = self.psi.forward(g, &self.store, h, bind)?;
            let vt = self.store.bind(g, self.v_big, bind);
            let cond = g.matmul(psi, vt)?;
            g.add(cond, uncond)
        } else {
            let ones = g.input(Tensor::matrix(n, self.spec.m, vec![1.0; n * self.spec.m])?);
            g.mul(ones, uncond)
        }
    }

    /// `D(x_i, y_i)` as an `n × 1` column.
    pub fn forward(&self, g: &mut Graph, x: Var, labels: &[usize]) -> Result<Var> {
        self.forward_with(g, x, labels, Bind::Train)
    }

    pub fn forward_with(&self, g: &mut Graph, x: Var, labels: &[usize], bind: Bind) -> Result<Var> {
        check_labels(labels, self.spec.m)?;
        let h = self.trunk_features(g, x, Some(labels), bind)?;
        let all = self.scores_from_features(g, h, bind)?;
        let mask = g.input(Tensor::one_hot(labels, self.spec.m)?);
        let picked = g.mul(all, mask)?;
        g.sum_cols(picked)
    }

    /// `D(x_i, k)` for every label `k`: `n × m`.
    pub fn forward_all(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.forward_all_with(g, x, Bind::Train)
    }

    pub fn forward_all_with(&self, g: &mut Graph, x: Var, bind: Bind) -> Result<Var> {
        if !self.spec.concat_y {
            let h = self.trunk_features(g, x, None, bind)?;
            return self.scores_from_features(g, h, bind);
        }
        let n = g.value(x).dims2()?.0;
        let mut out: Option<Var> = None;
        for k in 0..self.spec.m {
            let col = self.forward_with(g, x, &vec![k; n], bind)?;
            out = Some(match out {
                None => col,
                Some(prev) => g.concat(prev, col)?,
            });
        }
        Ok(out.expect("m ≥ 1"))
    }

    /// Plain evaluation of [`ProjDiscParams::forward`].
    pub fn score(&self, x: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let out = self.forward_with(&mut g, xv, labels, Bind::Frozen)?;
        Ok(g.value(out).data().to_vec())
    }
}

/// Free-function form of the discriminator evaluation.
pub fn disc_forward(x: &Tensor, labels: &[usize], p: &ProjDiscParams) -> Result<Vec<f64>> {
    p.score(x, labels)
}

pub fn project_constraints(p: &ProjDiscParams) -> ProjDiscParams {
    let mut out = p.clone();
    out.project_constraints();
    out
}

/// Membership of an `m × d` table in the column-wise max-norm ball.
pub fn v_feasible(v: &[Vec<f64>]) -> bool {
    v.iter().all(|row| row.iter().all(|x| x.abs() <= 1.0))
}

/// `T·V` for a label-mixing matrix `T` (`m × m`) and `V` (`m × d`).
pub fn mix_labels(t: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = v.first().map_or(0, Vec::len);
    t.iter()
        .map(|trow| (0..d).map(|j| trow.iter().zip(v).map(|(a, vr)| a * vr[j]).sum()).collect())
        .collect()
}

/// Dense classifier `x → m` logits.
#[derive(Debug, Clone)]
pub struct ClassifierParams {
    pub m: usize,
    pub store: ParamStore,
    net: Mlp,
}

impl ClassifierParams {
    pub fn new(input: usize, hidden: &[usize], m: usize, rng: &mut Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut sizes = vec![input];
        sizes.extend(hidden);
        sizes.push(m);
        let net = Mlp::build(&mut store, "clf", &sizes, Activation::Relu, false, rng)?;
        Ok(ClassifierParams { m, store, net })
    }

    pub fn input_width(&self) -> usize {
        self.net.input_width()
    }

    pub fn logits(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.logits_with(g, x, Bind::Train)
    }

    pub fn logits_with(&self, g: &mut Graph, x: Var, bind: Bind) -> Result<Var> {
        self.net.forward(g, &self.store, x, bind)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let out = self.logits_with(&mut g, xv, Bind::Frozen)?;
        let t = g.value(out);
        let (n, m) = t.dims2()?;
        Ok((0..n)
            .map(|i| {
                let row = &t.data()[i * m..(i + 1) * m];
                // First maximum wins.
                (0..m).fold(0, |best, j| if row[j] > row[best] { j } else { best })
            })
            .collect())
    }

    pub fn accuracy(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let pred = self.predict(x)?;
        if labels.is_empty() {
            return Ok(0.0);
        }
        Ok(pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierTraining {
    /// Hidden widths; empty gives a linear model.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for ClassifierTraining {
    fn default() -> Self {
        ClassifierTraining { hidden: vec![32, 32], epochs: 10, lr: 0.01, batch: 64, seed: 0 }
    }
}

/// Fits a classifier by Adam on mean softmax cross-entropy. Returns the
/// parameters and the final training accuracy.
pub fn train_classifier(x: &Tensor, labels: &[usize], m: usize, cfg: &ClassifierTraining) -> Result<(ClassifierParams, f64)> {
    let (n, d) = x.dims2()?;
    if n == 0 || labels.is_empty() {
        return Err(invalid!("cannot train a classifier on an empty dataset"));
    }
    if labels.len() != n {
        return Err(invalid!("{n} samples but {} labels", labels.len()));
    }
    check_labels(labels, m)?;
    if cfg.batch == 0 {
        return Err(invalid!("batch size must be positive"));
    }
    let mut init_rng = seed::substream(cfg.seed, "classifier-init", 0);
    let mut clf = ClassifierParams::new(d, &cfg.hidden, m, &mut init_rng)?;
    let mut opt = OptimizerState::adam(cfg.lr);
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle = seed::substream(cfg.seed, "classifier-shuffle", 0);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        for chunk in order.chunks(cfg.batch) {
            let xb = x.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let xv = g.input(xb);
            let logits = clf.logits(&mut g, xv)?;
            let loss = g.softmax_xent(logits, &yb)?;
            let grads = g.backward(loss)?;
            opt.step(&mut clf.store, &grads)?;
        }
    }
    let acc = clf.accuracy(x, labels)?;
    Ok((clf, acc))
}
