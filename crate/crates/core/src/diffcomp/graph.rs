use std::collections::HashMap;

use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

/// Index of a parameter in the caller's [`ParamStore`](super::ParamStore).
pub type ParamKey = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Hinge(Var),
    Affine(Var, f64),
    SoftmaxRows(Var),
    SoftmaxXent(Var, Vec<usize>),
    SquaredL2(Var),
    MeanBatch(Var),
    Mean(Var),
    SumCols(Var),
    Concat(Var, Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softplus(_) => "softplus",
            Op::Hinge(_) => "hinge",
            Op::Affine(..) => "affine",
            Op::SoftmaxRows(_) => "softmax",
            Op::SoftmaxXent(..) => "softmax_xent",
            Op::SquaredL2(_) => "squared_l2",
            Op::MeanBatch(_) => "mean_batch",
            Op::Mean(_) => "mean",
            Op::SumCols(_) => "sum_cols",
            Op::Concat(..) => "concat",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    param: Option<ParamKey>,
}

/// Hinge `φ(a) = max(0, 1 − 2a)`.
pub fn hinge(a: f64) -> f64 {
    (1.0 - 2.0 * a).max(0.0)
}

/// Define-by-run tape: every op evaluates eagerly and appends a node, so node
/// order is a topological order.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamKey, Var>,
}

/// Gradients of a scalar loss with respect to every node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamKey, Var)>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.grads[v.0].clone().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    /// `(key, gradient)` for every parameter registered in the graph.
    pub fn params(&self) -> impl Iterator<Item = (ParamKey, Tensor)> + '_ {
        self.params.iter().map(|&(k, v)| (k, self.wrt(v)))
    }

    pub fn param(&self, key: ParamKey) -> Option<Tensor> {
        self.params.iter().find(|(k, _)| *k == key).map(|&(_, v)| self.wrt(v))
    }
}

fn broadcastable(a: (usize, usize), b: (usize, usize)) -> bool {
    (b.0 == a.0 || b.0 == 1) && (b.1 == a.1 || b.1 == 1)
}

/// Sums `g` (shaped like `a`) down to `b`'s broadcast shape.
fn reduce_to(g: &[f64], a: (usize, usize), b: (usize, usize)) -> Vec<f64> {
    if a == b {
        return g.to_vec();
    }
    let mut out = vec![0.0; b.0 * b.1];
    for i in 0..a.0 {
        for j in 0..a.1 {
            out[(i % b.0) * b.1 + (j % b.1)] += g[i * a.1 + j];
        }
    }
    out
}

fn bcast_index(i: usize, j: usize, b: (usize, usize)) -> usize {
    (i % b.0) * b.1 + (j % b.1)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value, param: None });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var, ctx: &str) -> Result<(usize, usize)> {
        self.value(v)
            .dims2()
            .map_err(|e| Error::InvalidArgument(format!("node {} ({ctx}): {e}", self.nodes.len())))
    }

    fn mismatch(&self, op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
        Error::InvalidArgument(format!(
            "node {} ({op}): shape mismatch {}×{} vs {}×{}",
            self.nodes.len(),
            a.0,
            a.1,
            b.0,
            b.1
        ))
    }

    /// Constant input.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t)
    }

    /// Parameter leaf; registering the same key twice returns the same node.
    pub fn param(&mut self, key: ParamKey, t: &Tensor) -> Var {
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let v = self.push(Op::Leaf, t.clone());
        self.nodes[v.0].param = Some(key);
        self.params.insert(key, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (da, db) = (self.dims(a, "matmul")?, self.dims(b, "matmul")?);
        if da.1 != db.0 {
            return Err(self.mismatch("matmul", da, db));
        }
        let out = matmul(self.value(a).data(), self.value(b).data(), da.0, da.1, db.1);
        Ok(self.push(Op::MatMul(a, b), Tensor::matrix(da.0, db.1, out)?))
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, (usize, usize))> {
        let (da, db) = (self.dims(a, name)?, self.dims(b, name)?);
        if !broadcastable(da, db) {
            return Err(self.mismatch(name, da, db));
        }
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(da.0 * da.1);
        for i in 0..da.0 {
            for j in 0..da.1 {
                out.push(f(va[i * da.1 + j], vb[bcast_index(i, j, db)]));
            }
        }
        Ok((Tensor::matrix(da.0, da.1, out)?, da))
    }

    /// `a + b`, with `b` broadcast over rows and/or columns of size 1.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), t))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), t))
    }

    /// Elementwise product, `b` broadcast as in [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), t))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|v| v.max(0.0));
        self.push(Op::Relu(a), t)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), t)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(Op::Sigmoid(a), t)
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|v| v.max(0.0) + (-v.abs()).exp().ln_1p());
        self.push(Op::Softplus(a), t)
    }

    /// Elementwise [`hinge`].
    pub fn hinge(&mut self, a: Var) -> Var {
        let t = self.value(a).map(hinge);
        self.push(Op::Hinge(a), t)
    }

    /// `scale·a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let t = self.value(a).map(|v| scale * v + shift);
        self.push(Op::Affine(a, scale), t)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a, "softmax")?;
        let out = softmax_rows(self.value(a).data(), r, c);
        Ok(self.push(Op::SoftmaxRows(a), Tensor::matrix(r, c, out)?))
    }

    /// Mean softmax cross-entropy of logit rows against integer targets.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(logits, "softmax_xent")?;
        if targets.len() != r {
            return Err(Error::InvalidArgument(format!(
                "node {} (softmax_xent): {} targets for {r} rows",
                self.nodes.len(),
                targets.len()
            )));
        }
        if let Some(t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::InvalidArgument(format!(
                "node {} (softmax_xent): target {t} out of range for {c} classes",
                self.nodes.len()
            )));
        }
        let x = self.value(logits).data();
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = &x[i * c..(i + 1) * c];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            loss += lse - row[t];
        }
        Ok(self.push(Op::SoftmaxXent(logits, targets.to_vec()), Tensor::scalar(loss / r as f64)))
    }

    /// `Σ a²` over all entries.
    pub fn squared_l2(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|v| v * v).sum();
        self.push(Op::SquaredL2(a), Tensor::scalar(s))
    }

    /// Mean over rows: `r×c → 1×c`.
    pub fn mean_batch(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a, "mean_batch")?;
        let x = self.value(a).data();
        let mut out = vec![0.0; c];
        for i in 0..r {
            out.iter_mut().zip(&x[i * c..(i + 1) * c]).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        Ok(self.push(Op::MeanBatch(a), Tensor::matrix(1, c, out)?))
    }

    /// Mean of all entries as a `1×1` scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a).data();
        let s = x.iter().sum::<f64>() / x.len().max(1) as f64;
        self.push(Op::Mean(a), Tensor::scalar(s))
    }

    /// Row sums: `r×c → r×1`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a, "sum_cols")?;
        let x = self.value(a).data();
        let out = (0..r).map(|i| x[i * c..(i + 1) * c].iter().sum()).collect();
        Ok(self.push(Op::SumCols(a), Tensor::matrix(r, 1, out)?))
    }

    /// Column-wise concatenation `[a | b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (da, db) = (self.dims(a, "concat")?, self.dims(b, "concat")?);
        if da.0 != db.0 {
            return Err(self.mismatch("concat", da, db));
        }
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(da.0 * (da.1 + db.1));
        for i in 0..da.0 {
            out.extend_from_slice(&va[i * da.1..(i + 1) * da.1]);
            out.extend_from_slice(&vb[i * db.1..(i + 1) * db.1]);
        }
        Ok(self.push(Op::Concat(a, b), Tensor::matrix(da.0, da.1 + db.1, out)?))
    }

    /// Reverse accumulation from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, node {} ({}) has shape {:?}",
                loss.0,
                self.nodes[loss.0].op.name(),
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(g).for_each(|(e, x)| *e += x),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = node.value.data();
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (da, db) = (self.value(*a).dims2()?, self.value(*b).dims2()?);
                    // dA = G·Bᵀ, dB = Aᵀ·G
                    let ga = matmul_nt(&g, self.value(*b).data(), da.0, db.1, da.1);
                    let gb = matmul_tn(self.value(*a).data(), &g, da.0, da.1, db.1);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let (da, db) = (self.value(*a).dims2()?, self.value(*b).dims2()?);
                    let mut gb = reduce_to(&g, da, db);
                    if matches!(node.op, Op::Sub(..)) {
                        gb.iter_mut().for_each(|v| *v = -*v);
                    }
                    acc(&mut grads, *a, g);
                    acc(&mut grads, *b, gb);
                }
                Op::Mul(a, b) => {
                    let (da, db) = (self.value(*a).dims2()?, self.value(*b).dims2()?);
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    let mut ga = Vec::with_capacity(g.len());
                    let mut gfull = Vec::with_capacity(g.len());
                    for i in 0..da.0 {
                        for j in 0..da.1 {
                            let k = i * da.1 + j;
                            ga.push(g[k] * vb[bcast_index(i, j, db)]);
                            gfull.push(g[k] * va[k]);
                        }
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, reduce_to(&gfull, da, db));
                }
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    let ga = g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                    acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = g.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect();
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect();
                    acc(&mut grads, *a, ga);
                }
                Op::Softplus(a) => {
                    let x = self.value(*a).data();
                    let ga = g.iter().zip(x).map(|(g, &x)| g / (1.0 + (-x).exp())).collect();
                    acc(&mut grads, *a, ga);
                }
                Op::Hinge(a) => {
                    // Active only strictly left of the kink at 1/2.
                    let x = self.value(*a).data();
                    let ga = g.iter().zip(x).map(|(g, &x)| if x < 0.5 { -2.0 * g } else { 0.0 }).collect();
                    acc(&mut grads, *a, ga);
                }
                Op::Affine(a, scale) => {
                    acc(&mut grads, *a, g.iter().map(|v| v * scale).collect());
                }
                Op::SoftmaxRows(a) => {
                    let (r, c) = self.value(*a).dims2()?;
                    let mut ga = vec![0.0; r * c];
                    for i in 0..r {
                        let y = &out[i * c..(i + 1) * c];
                        let gy = &g[i * c..(i + 1) * c];
                        let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            ga[i * c + j] = y[j] * (gy[j] - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SoftmaxXent(a, targets) => {
                    let (r, c) = self.value(*a).dims2()?;
                    let mut ga = softmax_rows(self.value(*a).data(), r, c);
                    for (i, &t) in targets.iter().enumerate() {
                        ga[i * c + t] -= 1.0;
                    }
                    let s = g[0] / r as f64;
                    ga.iter_mut().for_each(|v| *v *= s);
                    acc(&mut grads, *a, ga);
                }
                Op::SquaredL2(a) => {
                    let ga = self.value(*a).data().iter().map(|x| 2.0 * x * g[0]).collect();
                    acc(&mut grads, *a, ga);
                }
                Op::MeanBatch(a) => {
                    let (r, c) = self.value(*a).dims2()?;
                    let mut ga = Vec::with_capacity(r * c);
                    for _ in 0..r {
                        ga.extend(g.iter().map(|v| v / r as f64));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    acc(&mut grads, *a, vec![g[0] / n as f64; n]);
                }
                Op::SumCols(a) => {
                    let (r, c) = self.value(*a).dims2()?;
                    let ga = (0..r * c).map(|k| g[k / c]).collect();
                    acc(&mut grads, *a, ga);
                }
                Op::Concat(a, b) => {
                    let (da, db) = (self.value(*a).dims2()?, self.value(*b).dims2()?);
                    let w = da.1 + db.1;
                    let mut ga = Vec::with_capacity(da.0 * da.1);
                    let mut gb = Vec::with_capacity(db.0 * db.1);
                    for i in 0..da.0 {
                        ga.extend_from_slice(&g[i * w..i * w + da.1]);
                        gb.extend_from_slice(&g[i * w + da.1..(i + 1) * w]);
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
            }
        }

        let shapes: Vec<Vec<usize>> = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .zip(&shapes)
            .map(|(g, s)| g.map(|g| Tensor::new(s.clone(), g).expect("gradient matches node shape")))
            .collect();
        let mut params: Vec<(ParamKey, Var)> = self.params.iter().map(|(&k, &v)| (k, v)).collect();
        params.sort_unstable();
        Ok(Gradients { grads, params, shapes })
    }
}

pub(crate) fn softmax_rows(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = &x[i * c..(i + 1) * c];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for j in 0..c {
            let e = (row[j] - mx).exp();
            out[i * c + j] = e;
            s += e;
        }
        out[i * c..(i + 1) * c].iter_mut().for_each(|v| *v /= s);
    }
    out
}
