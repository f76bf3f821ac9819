//! Exact divergences and neural-network distances between joint distributions
//! over a finite support × `m` labels.
//!
//! The support carries no geometry: a "function class" here is a set of
//! tables `D(x, y)`, and every distance below is the exact supremum over
//! that set.

use rand_distr::{Binomial, Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const MASS_TOL: f64 = 1e-12;

/// Joint mass table `probs[x][y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "JointRepr", into = "JointRepr")]
pub struct FiniteJoint {
    support: usize,
    m: usize,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct JointRepr {
    support: usize,
    m: usize,
    probs: Vec<Vec<f64>>,
}

impl TryFrom<JointRepr> for FiniteJoint {
    type Error = Error;

    fn try_from(r: JointRepr) -> Result<Self> {
        if r.probs.len() != r.support || r.probs.iter().any(|row| row.len() != r.m) {
            return Err(invalid!("probs table does not match {}×{}", r.support, r.m));
        }
        FiniteJoint::new(r.support, r.m, r.probs.concat())
    }
}

impl From<FiniteJoint> for JointRepr {
    fn from(p: FiniteJoint) -> Self {
        JointRepr {
            support: p.support,
            m: p.m,
            probs: p.probs.chunks(p.m).map(<[f64]>::to_vec).collect(),
        }
    }
}

impl FiniteJoint {
    pub fn new(support: usize, m: usize, probs: Vec<f64>) -> Result<Self> {
        if support == 0 || m == 0 {
            return Err(invalid!("support size and class count must be positive"));
        }
        if probs.len() != support * m {
            return Err(invalid!("expected {} masses, found {}", support * m, probs.len()));
        }
        if let Some(bad) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(invalid!("negative or non-finite mass {bad}"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(invalid!("total mass {total} is not 1"));
        }
        Ok(FiniteJoint { support, m, probs })
    }

    /// Normalizes a non-negative table with positive total.
    pub fn from_weights(support: usize, m: usize, mut w: Vec<f64>) -> Result<Self> {
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(invalid!("weights must have positive total"));
        }
        w.iter_mut().for_each(|v| *v /= total);
        Self::new(support, m, w)
    }

    /// A random joint with exponential weights (uniform on the simplex).
    pub fn random<R: rand::Rng + ?Sized>(support: usize, m: usize, rng: &mut R) -> Self {
        let w: Vec<f64> = (0..support * m).map(|_| Exp1.sample(rng)).collect();
        Self::from_weights(support, m, w).expect("exponential weights are positive")
    }

    pub fn support(&self) -> usize {
        self.support
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.probs[x * self.m..(x + 1) * self.m]
    }

    pub fn label_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for row in self.probs.chunks(self.m) {
            out.iter_mut().zip(row).for_each(|(o, p)| *o += p);
        }
        out
    }

    pub fn x_marginal(&self) -> Vec<f64> {
        self.probs.chunks(self.m).map(|r| r.iter().sum()).collect()
    }

    fn check_shape(&self, other: &FiniteJoint) -> Result<()> {
        if self.support != other.support || self.m != other.m {
            return Err(invalid!(
                "shape mismatch: {}×{} vs {}×{}",
                self.support,
                self.m,
                other.support,
                other.m
            ));
        }
        Ok(())
    }

    /// Per-x difference rows `P(x,·) − Q(x,·)`.
    pub fn diff_rows(&self, other: &FiniteJoint) -> Result<Vec<Vec<f64>>> {
        self.check_shape(other)?;
        Ok(self
            .probs
            .chunks(self.m)
            .zip(other.probs.chunks(self.m))
            .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p - q).collect())
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DivergenceKind {
    Tv,
    Kl,
    Js,
}

pub fn divergence(p: &FiniteJoint, q: &FiniteJoint, kind: DivergenceKind) -> Result<f64> {
    p.check_shape(q)?;
    match kind {
        DivergenceKind::Tv => Ok(0.5 * p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).abs()).sum::<f64>()),
        DivergenceKind::Kl => kl(&p.probs, &q.probs),
        DivergenceKind::Js => {
            let mid: Vec<f64> = p.probs.iter().zip(&q.probs).map(|(a, b)| 0.5 * (a + b)).collect();
            Ok(0.5 * kl(&p.probs, &mid)? + 0.5 * kl(&q.probs, &mid)?)
        }
    }
}

fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    let mut acc = 0.0;
    for (k, (&a, &b)) in p.iter().zip(q).enumerate() {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            return Err(Error::Domain(format!("KL undefined: cell {k} has mass {a} under P but 0 under Q")));
        }
        acc += a * (a / b).ln();
    }
    Ok(acc)
}

/// `sup_{d ∈ [c1,c2]} w·d`, summed coordinatewise.
fn box_support(w: &[f64], c1: f64, c2: f64) -> f64 {
    w.iter().map(|&a| (c2 * a).max(c1 * a)).sum()
}

fn check_range(c1: f64, c2: f64) -> Result<()> {
    if !(c1 <= c2) {
        return Err(invalid!("range [{c1}, {c2}] is empty"));
    }
    Ok(())
}

/// IPM over all `[c1, c2]`-valued tables, i.e. `(c2 − c1)·TV(P, Q)`.
pub fn bounded_class_distance(p: &FiniteJoint, q: &FiniteJoint, c1: f64, c2: f64) -> Result<f64> {
    check_range(c1, c2)?;
    let diffs = p.diff_rows(q)?;
    Ok(0.5 * (c2 - c1) * diffs.iter().flatten().map(|d| d.abs()).sum::<f64>())
}

/// IPM over `T∘F` for `F` the `[c1, c2]`-bounded class: each discriminator
/// table is mixed per x as `D'(x,·) = T·D(x,·)`.
pub fn transformed_distance(p: &FiniteJoint, q: &FiniteJoint, t: &[f64], c1: f64, c2: f64) -> Result<f64> {
    check_range(c1, c2)?;
    let m = p.m;
    if t.len() != m * m {
        return Err(invalid!("transform must be {m}×{m}, got {} entries", t.len()));
    }
    let diffs = p.diff_rows(q)?;
    let mut total = 0.0;
    let mut w = vec![0.0; m];
    for u in &diffs {
        // w = Tᵀ u
        for (j, wj) in w.iter_mut().enumerate() {
            *wj = (0..m).map(|i| t[i * m + j] * u[i]).sum();
        }
        total += box_support(&w, c1, c2);
    }
    Ok(total)
}

/// Bounded tables further restricted, per x, to the slab `|w(x)ᵀ D(x,·)| ≤ ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedBoxClass {
    pub c1: f64,
    pub c2: f64,
    pub slab_vectors: Vec<Vec<f64>>,
    pub epsilon: f64,
}

impl ConstrainedBoxClass {
    pub fn new(c1: f64, c2: f64, slab_vectors: Vec<Vec<f64>>, epsilon: f64) -> Result<Self> {
        check_range(c1, c2)?;
        if !(epsilon >= 0.0) {
            return Err(invalid!("slab half-width {epsilon} must be non-negative"));
        }
        Ok(ConstrainedBoxClass { c1, c2, slab_vectors, epsilon })
    }
}

pub fn constrained_class_distance(p: &FiniteJoint, q: &FiniteJoint, cls: &ConstrainedBoxClass) -> Result<f64> {
    check_range(cls.c1, cls.c2)?;
    if cls.epsilon == f64::INFINITY {
        return bounded_class_distance(p, q, cls.c1, cls.c2);
    }
    let diffs = p.diff_rows(q)?;
    if cls.slab_vectors.len() != diffs.len() || cls.slab_vectors.iter().any(|w| w.len() != p.m) {
        return Err(invalid!("slab vectors must cover all {} support points with {} entries", diffs.len(), p.m));
    }
    diffs
        .iter()
        .zip(&cls.slab_vectors)
        .enumerate()
        .map(|(x, (u, w))| {
            slab_box_max(u, w, cls.c1, cls.c2, cls.epsilon)
                .ok_or_else(|| Error::Domain(format!("box and slab do not intersect at support point {x}")))
        })
        .sum()
}

/// `max uᵀd` over `d ∈ [c1,c2]ᵐ` with `|wᵀd| ≤ eps`, by minimizing the
/// Lagrangian dual `g(μ) = eps·|μ| + sup_box (u − μw)ᵀd` over `μ ∈ ℝ`.
///
/// `g` is convex and piecewise linear with kinks at `μ = 0` and
/// `μ = u_j / w_j`, so its minimum is attained at one of those points unless
/// it decreases without bound, which happens exactly when the feasible set is
/// empty. Returns `None` in that case.
pub(crate) fn slab_box_max(u: &[f64], w: &[f64], c1: f64, c2: f64, eps: f64) -> Option<f64> {
    let g = |mu: f64| -> f64 {
        let a: Vec<f64> = u.iter().zip(w).map(|(ui, wi)| ui - mu * wi).collect();
        eps * mu.abs() + box_support(&a, c1, c2)
    };
    // Asymptotic slopes: g(μ) ~ |μ|·(eps + sup_box(∓w)·) as μ → ±∞.
    let neg_w: Vec<f64> = w.iter().map(|v| -v).collect();
    let slope_pos = eps + box_support(&neg_w, c1, c2);
    let slope_neg = eps + box_support(w, c1, c2);
    if slope_pos < -1e-15 || slope_neg < -1e-15 {
        return None;
    }
    let mut best = g(0.0);
    for (ui, wi) in u.iter().zip(w) {
        if *wi != 0.0 {
            best = best.min(g(ui / wi));
        }
    }
    Some(best)
}

/// Normalized histogram of `n` i.i.d. draws from `p`, via sequential
/// conditional binomials (an exact multinomial sampler).
pub fn empirical<R: rand::Rng + ?Sized>(p: &FiniteJoint, n: u64, rng: &mut R) -> Result<FiniteJoint> {
    if n == 0 {
        return Err(invalid!("empirical distribution needs at least one sample"));
    }
    let cells = p.probs.len();
    let mut counts = vec![0u64; cells];
    let mut left = n;
    let mut rest = 1.0f64;
    for (k, &pk) in p.probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if k == cells - 1 {
            counts[k] = left;
            break;
        }
        let prob = if rest > 0.0 { (pk / rest).clamp(0.0, 1.0) } else { 0.0 };
        let c = if prob == 0.0 {
            0
        } else if prob == 1.0 {
            left
        } else {
            Binomial::new(left, prob).expect("probability clamped to [0,1]").sample(rng)
        };
        counts[k] = c;
        left -= c;
        rest -= pk;
    }
    // Trailing zero-mass cells can absorb leftovers only through rounding of
    // `rest`; push them back onto the last positive cell.
    if let Some(last) = p.probs.iter().rposition(|&v| v > 0.0) {
        let stray: u64 = counts[last + 1..].iter().sum();
        counts[last + 1..].iter_mut().for_each(|c| *c = 0);
        counts[last] += stray;
    }
    let probs = counts.iter().map(|&c| c as f64 / n as f64).collect();
    FiniteJoint::new(p.support, p.m, probs).or_else(|_| {
        let w = counts.iter().map(|&c| c as f64).collect();
        FiniteJoint::from_weights(p.support, p.m, w)
    })
}
