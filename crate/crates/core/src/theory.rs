//! Executable checks of the approximation bounds relating clean and
//! label-corrupted distributions, their tightness witnesses, counterexample
//! classes, and finite-sample behavior.

use rand::Rng as _;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ConfusionMatrix;
use crate::error::{invalid, Error, Result};
use crate::findist::{
    bounded_class_distance, constrained_class_distance, divergence, empirical, transformed_distance,
    ConstrainedBoxClass, DivergenceKind, FiniteJoint,
};
use crate::seed;

/// Slack below which a bound is reported as violated.
pub const BOUND_TOL: f64 = 1e-9;

/// `lhs ≤ mid ≤ rhs` with signed slacks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub lower_ok: bool,
    pub upper_ok: bool,
    pub lhs: f64,
    pub mid: f64,
    pub rhs: f64,
    pub slack_lower: f64,
    pub slack_upper: f64,
}

impl BoundReport {
    pub fn new(lhs: f64, mid: f64, rhs: f64) -> Self {
        let slack_lower = mid - lhs;
        let slack_upper = rhs - mid;
        BoundReport {
            lower_ok: slack_lower >= -BOUND_TOL,
            upper_ok: slack_upper >= -BOUND_TOL,
            lhs,
            mid,
            rhs,
            slack_lower,
            slack_upper,
        }
    }

    pub fn ok(&self) -> bool {
        self.lower_ok && self.upper_ok
    }
}

fn full_rank_norm(c: &ConfusionMatrix) -> Result<f64> {
    let a = c.analyze();
    if !a.is_full_rank {
        return Err(Error::Precondition("confusion matrix is rank-deficient".into()));
    }
    Ok(a.max_norm_inv)
}

/// TV and JS sandwich bounds between the clean pair and its corrupted image.
pub fn check_thm1(p: &FiniteJoint, q: &FiniteJoint, c: &ConfusionMatrix) -> Result<(BoundReport, BoundReport)> {
    let kappa = full_rank_norm(c)?;
    let (pt, qt) = (c.push_forward(p)?, c.push_forward(q)?);

    let tv_noisy = divergence(&pt, &qt, DivergenceKind::Tv)?;
    let tv_clean = divergence(p, q, DivergenceKind::Tv)?;
    let tv = BoundReport::new(tv_noisy, tv_clean, kappa * tv_noisy);

    let js_noisy = divergence(&pt, &qt, DivergenceKind::Js)?;
    let js_clean = divergence(p, q, DivergenceKind::Js)?;
    let js = BoundReport::new(js_noisy * js_noisy / 8.0, js_clean, kappa * (8.0 * js_noisy).sqrt());
    Ok((tv, js))
}

/// Clean/corrupted sandwich for the `[c1, c2]`-bounded class.
pub fn check_thm2_bounded(p: &FiniteJoint, q: &FiniteJoint, c: &ConfusionMatrix, c1: f64, c2: f64) -> Result<BoundReport> {
    let kappa = full_rank_norm(c)?;
    let (pt, qt) = (c.push_forward(p)?, c.push_forward(q)?);
    let noisy = bounded_class_distance(&pt, &qt, c1, c2)?;
    let clean = bounded_class_distance(p, q, c1, c2)?;
    Ok(BoundReport::new(noisy, clean, kappa * noisy))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Lower,
    Upper,
}

/// Two-point pair `(P, Q)` whose difference makes one side of the bounded-class
/// sandwich hold with equality.
///
/// Both start from the uniform joint on `2m` cells; `P` adds half the signed
/// difference and `Q` subtracts it. The lower side uses the difference
/// `±eps·𝟙`; the upper side uses `±eps·C⁻ᵀe_i` with `i` the row of `C⁻¹`
/// of largest absolute sum, so the corrupted difference is `±eps·e_i`.
pub fn witness_tight(c: &ConfusionMatrix, eps: f64, side: Side) -> Result<(FiniteJoint, FiniteJoint)> {
    let m = c.m();
    if !(eps > 0.0) {
        return Err(invalid!("eps must be positive, got {eps}"));
    }
    let d = witness_direction(c, side)?;
    let max_eps = feasible_eps(&d);
    if eps > max_eps {
        return Err(invalid!("eps {eps} breaks non-negativity; maximal feasible eps is {max_eps}"));
    }
    let base = 1.0 / (2 * m) as f64;
    let mut p = Vec::with_capacity(2 * m);
    let mut q = Vec::with_capacity(2 * m);
    for sign in [1.0, -1.0] {
        for &dj in &d {
            let half = 0.5 * sign * eps * dj;
            p.push((base + half).max(0.0));
            q.push((base - half).max(0.0));
        }
    }
    Ok((FiniteJoint::from_weights(2, m, p)?, FiniteJoint::from_weights(2, m, q)?))
}

/// Per-cell difference `d` placed at the first support point (negated at the second).
fn witness_direction(c: &ConfusionMatrix, side: Side) -> Result<Vec<f64>> {
    match side {
        Side::Lower => Ok(vec![1.0; c.m()]),
        Side::Upper => {
            let inv = c
                .analyze()
                .inverse
                .ok_or_else(|| Error::Precondition("upper witness needs a full-rank channel".into()))?;
            // Column i of C⁻ᵀ is row i of C⁻¹.
            let abs_sum = |r: &Vec<f64>| r.iter().map(|v| v.abs()).sum::<f64>();
            let best = inv.iter().max_by(|a, b| abs_sum(a).total_cmp(&abs_sum(b))).unwrap();
            Ok(best.clone())
        }
    }
}

/// Cells are `1/(2m) ± eps·d_j/2`, so non-negativity caps `eps`.
fn feasible_eps(d: &[f64]) -> f64 {
    let peak = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    1.0 / (d.len() as f64 * peak)
}

/// Largest eps accepted by [`witness_tight`] for this channel and side.
pub fn witness_max_eps(c: &ConfusionMatrix, side: Side) -> Result<f64> {
    Ok(feasible_eps(&witness_direction(c, side)?))
}

/// Gaps produced by the slab-restricted classes `F₃` (slab `Cᵀu(x)`) and
/// `F₄` (slab `u(x)`), where `u(x) = P(x,·) − Q(x,·)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleGaps {
    /// `d_F₃(P, Q) / max(d_F₃(P̃, Q̃), eps)`
    pub gap_f3: f64,
    /// `d_F₄(P̃, Q̃) / max(d_F₄(P, Q), eps)`
    pub gap_f4: f64,
}

/// Minimum angle (radians) between `u(x)` and `Cᵀu(x)` that counts as
/// "not an eigenvector".
pub const EIGEN_ANGLE_TOL: f64 = 1e-6;

fn angle(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot.abs() / (na * nb)).min(1.0).acos()
}

fn transpose_apply(c: &ConfusionMatrix, u: &[f64]) -> Vec<f64> {
    let m = c.m();
    (0..m).map(|j| (0..m).map(|i| c.get(i, j) * u[i]).sum()).collect()
}

/// Whether some positive-mass `x` has `u(x)` off every eigen-direction of `Cᵀ`.
pub fn eigen_condition_holds(p: &FiniteJoint, q: &FiniteJoint, c: &ConfusionMatrix) -> Result<bool> {
    let diffs = p.diff_rows(q)?;
    let (px, qx) = (p.x_marginal(), q.x_marginal());
    Ok(diffs.iter().enumerate().any(|(x, u)| {
        px[x] + qx[x] > 0.0 && u.iter().any(|v| *v != 0.0) && angle(u, &transpose_apply(c, u)) > EIGEN_ANGLE_TOL
    }))
}

pub fn build_counterexample(p: &FiniteJoint, q: &FiniteJoint, c: &ConfusionMatrix, eps: f64) -> Result<CounterexampleGaps> {
    if !(eps > 0.0) {
        return Err(invalid!("eps must be positive, got {eps}"));
    }
    if p.m() != c.m() {
        return Err(invalid!("distribution has {} labels, channel has {}", p.m(), c.m()));
    }
    let diffs = p.diff_rows(q)?;
    if diffs.iter().flatten().all(|v| *v == 0.0) {
        return Err(Error::Degenerate("P = Q: both gaps are undefined".into()));
    }
    if !eigen_condition_holds(p, q, c)? {
        return Err(Error::Precondition(
            "every difference row P(x,·) − Q(x,·) is aligned with an eigenvector of Cᵀ".into(),
        ));
    }
    let (pt, qt) = (c.push_forward(p)?, c.push_forward(q)?);
    let f3 = ConstrainedBoxClass::new(-1.0, 1.0, diffs.iter().map(|u| transpose_apply(c, u)).collect(), eps)?;
    let f4 = ConstrainedBoxClass::new(-1.0, 1.0, diffs, eps)?;
    let f3_clean = constrained_class_distance(p, q, &f3)?;
    let f3_noisy = constrained_class_distance(&pt, &qt, &f3)?;
    let f4_clean = constrained_class_distance(p, q, &f4)?;
    let f4_noisy = constrained_class_distance(&pt, &qt, &f4)?;
    Ok(CounterexampleGaps {
        gap_f3: f3_clean / f3_noisy.max(eps),
        gap_f4: f4_noisy / f4_clean.max(eps),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: u64,
    pub mean_abs_dev: f64,
}

/// Mean `|d_F(P_n, Q_n) − d_F(P, Q)|` over `trials` for each sample count,
/// `F` the `[−1, 1]`-bounded class. Trials run in parallel on per-trial
/// sub-streams of `root_seed`.
pub fn empirical_convergence(
    p: &FiniteJoint,
    q: &FiniteJoint,
    n_list: &[u64],
    trials: usize,
    root_seed: u64,
) -> Result<Vec<ConvergenceRow>> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid!("sample counts must be non-empty and strictly increasing"));
    }
    if trials == 0 {
        return Err(invalid!("need at least one trial"));
    }
    let truth = bounded_class_distance(p, q, -1.0, 1.0)?;
    n_list
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let devs: Result<Vec<f64>> = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = seed::substream(root_seed, "convergence", ((k as u64) << 32) | t as u64);
                    let pn = empirical(p, n, &mut rng)?;
                    let qn = empirical(q, n, &mut rng)?;
                    Ok((bounded_class_distance(&pn, &qn, -1.0, 1.0)? - truth).abs())
                })
                .collect();
            let devs = devs?;
            Ok(ConvergenceRow { n, mean_abs_dev: devs.iter().sum::<f64>() / trials as f64 })
        })
        .collect()
}

/// Consecutive means may rise by at most a factor `slack` (Monte-Carlo noise).
pub fn is_non_increasing_within(rows: &[ConvergenceRow], slack: f64) -> bool {
    rows.windows(2).all(|w| w[1].mean_abs_dev <= slack * w[0].mean_abs_dev)
}

/// Random row-stochastic matrix, rows uniform on the simplex.
pub fn random_channel<R: rand::Rng + ?Sized>(m: usize, rng: &mut R) -> ConfusionMatrix {
    let rows: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            let w: Vec<f64> = (0..m).map(|_| Exp1.sample(rng)).collect();
            let s: f64 = w.iter().sum();
            let mut r: Vec<f64> = w.iter().map(|v| v / s).collect();
            // Absorb rounding into the largest entry so the row sums to 1.
            let err = 1.0 - r.iter().sum::<f64>();
            let k = (0..m).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap();
            r[k] += err;
            r
        })
        .collect();
    ConfusionMatrix::from_rows(&rows).expect("normalized rows are stochastic")
}

/// Random full-rank channel (rejection on the singularity test).
pub fn random_full_rank_channel<R: rand::Rng + ?Sized>(m: usize, rng: &mut R) -> ConfusionMatrix {
    loop {
        let c = random_channel(m, rng);
        if c.analyze().is_full_rank {
            return c;
        }
    }
}

/// One randomized theory instance.
#[derive(Debug, Clone)]
pub struct Instance {
    pub p: FiniteJoint,
    pub q: FiniteJoint,
    pub c: ConfusionMatrix,
}

/// Instance family: `m ∈ {2..5}`, `|X| ∈ {2..10}`, full-rank `C`.
pub fn random_instance(root_seed: u64, index: u64) -> Instance {
    let mut rng = seed::substream(root_seed, "instance", index);
    let m = rng.random_range(2..=5);
    let support = rng.random_range(2..=10);
    let p = FiniteJoint::random(support, m, &mut rng);
    let q = FiniteJoint::random(support, m, &mut rng);
    let c = random_full_rank_channel(m, &mut rng);
    Instance { p, q, c }
}

/// Outcome of the randomized sandwich suites over `instances` instances.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub instances: usize,
    pub failures: usize,
    pub worst_slack: f64,
    /// Largest `|d_F(P̃,Q̃) − d_{C∘F}(P,Q)|` (bounded suite only).
    pub worst_identity_gap: f64,
}

impl SuiteSummary {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn summarize(instances: usize, rows: Vec<Result<(bool, f64, f64)>>) -> Result<SuiteSummary> {
    let mut s = SuiteSummary { instances, worst_slack: f64::INFINITY, ..Default::default() };
    for r in rows {
        let (ok, slack, gap) = r?;
        if !ok {
            s.failures += 1;
        }
        s.worst_slack = s.worst_slack.min(slack);
        s.worst_identity_gap = s.worst_identity_gap.max(gap);
    }
    Ok(s)
}

/// TV and JS sandwiches on random instances.
pub fn run_thm1_suite(instances: usize, root_seed: u64) -> Result<SuiteSummary> {
    let rows = (0..instances as u64)
        .into_par_iter()
        .map(|i| {
            let inst = random_instance(root_seed, i);
            let (tv, js) = check_thm1(&inst.p, &inst.q, &inst.c)?;
            let slack = tv.slack_lower.min(tv.slack_upper).min(js.slack_lower).min(js.slack_upper);
            Ok((tv.ok() && js.ok(), slack, 0.0))
        })
        .collect();
    summarize(instances, rows)
}

/// Tolerance on the transform identity `d_F(P̃,Q̃) = d_{C∘F}(P,Q)`.
pub const IDENTITY_TOL: f64 = 1e-10;

/// Bounded-class sandwich plus the transform identity on random instances.
pub fn run_thm2_suite(instances: usize, root_seed: u64) -> Result<SuiteSummary> {
    let rows = (0..instances as u64)
        .into_par_iter()
        .map(|i| {
            let inst = random_instance(root_seed, i);
            let rep = check_thm2_bounded(&inst.p, &inst.q, &inst.c, -1.0, 1.0)?;
            let (pt, qt) = (inst.c.push_forward(&inst.p)?, inst.c.push_forward(&inst.q)?);
            let lhs = bounded_class_distance(&pt, &qt, -1.0, 1.0)?;
            let rhs = transformed_distance(&inst.p, &inst.q, inst.c.entries(), -1.0, 1.0)?;
            let gap = (lhs - rhs).abs();
            Ok((rep.ok() && gap <= IDENTITY_TOL, rep.slack_lower.min(rep.slack_upper), gap))
        })
        .collect();
    summarize(instances, rows)
}

/// Deviation of a witness from exact equality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TightnessOutcome {
    pub m: usize,
    pub max_norm_inv: f64,
    /// `|d_F(P̃,Q̃) − d_F(P,Q)|` for the lower witness.
    pub lower_gap: f64,
    /// `|d_F(P,Q)/d_F(P̃,Q̃) − |||C⁻¹|||_∞|` for the upper witness.
    pub upper_gap: f64,
}

/// Tightness witnesses for `channels` random full-rank channels with
/// `m ∈ {2..6}`, eps at a quarter of each side's feasibility limit.
pub fn run_tightness_suite(channels: usize, root_seed: u64) -> Result<Vec<TightnessOutcome>> {
    (0..channels as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::substream(root_seed, "tightness", i);
            let m = rng.random_range(2..=6);
            let c = random_full_rank_channel(m, &mut rng);
            tightness_outcome(&c)
        })
        .collect()
}

pub fn tightness_outcome(c: &ConfusionMatrix) -> Result<TightnessOutcome> {
    let kappa = c.analyze().max_norm_inv;
    let eval = |side: Side| -> Result<(f64, f64)> {
        let limit = witness_max_eps(c, side)?;
        let (p, q) = witness_tight(c, 0.25 * limit, side)?;
        let (pt, qt) = (c.push_forward(&p)?, c.push_forward(&q)?);
        Ok((bounded_class_distance(&p, &q, -1.0, 1.0)?, bounded_class_distance(&pt, &qt, -1.0, 1.0)?))
    };
    let (lc, ln) = eval(Side::Lower)?;
    let (uc, un) = eval(Side::Upper)?;
    Ok(TightnessOutcome {
        m: c.m(),
        max_norm_inv: kappa,
        lower_gap: (lc - ln).abs(),
        upper_gap: (uc / un - kappa).abs(),
    })
}
