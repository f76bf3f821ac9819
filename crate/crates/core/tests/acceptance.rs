//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_RED` are still evaluated and printed as FAIL
//! when they fail; they do not fail the binary. Any other failure does.

use std::cell::Cell;
use std::fs;
use std::time::{Duration, Instant};

use ncgl::channel::ConfusionMatrix;
use ncgl::diffcomp::{Graph, Tensor, Var};
use ncgl::experiment::{run, RecoveryEval, RunConfig, RunOutcome};
use ncgl::findist::FiniteJoint;
use ncgl::models::{mix_labels, project_constraints, v_feasible, DiscriminatorSpec, ProjDiscParams};
use ncgl::recovery::RecoveryConfig;
use ncgl::theory::{
    build_counterexample, eigen_condition_holds, empirical_convergence, random_instance, run_thm1_suite,
    run_thm2_suite, run_tightness_suite,
};
use ncgl::training::{ExperimentConfig, NoiseSchedule, Variant};
use ncgl::{seed, Result};
use rand::Rng as _;

/// Criteria that fail for a documented structural reason (see README).
const KNOWN_RED: &[u32] = &[4];

const SEEDS: [u64; 3] = [0, 1, 2];

struct Verdict {
    id: u32,
    pass: bool,
    detail: String,
}

fn verdict(id: u32, pass: bool, detail: String) -> Verdict {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("criterion {id:>2}: {tag}  {detail}");
    Verdict { id, pass, detail }
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------- theory

fn thm1() -> Result<Verdict> {
    let t = Instant::now();
    let s = run_thm1_suite(1000, 7)?;
    let el = t.elapsed();
    let pass = s.passed() && s.worst_slack >= -1e-9 && el < Duration::from_secs(10);
    Ok(verdict(1, pass, format!("{} instances, {} failures, worst slack {:.3e}, {:.2?}", s.instances, s.failures, s.worst_slack, el)))
}

fn thm2() -> Result<Verdict> {
    let t = Instant::now();
    let s = run_thm2_suite(1000, 7)?;
    let el = t.elapsed();
    let pass = s.passed() && s.worst_slack >= -1e-9 && s.worst_identity_gap <= 1e-10 && el < Duration::from_secs(10);
    Ok(verdict(
        2,
        pass,
        format!(
            "{} instances, {} failures, worst slack {:.3e}, identity gap {:.3e}, {:.2?}",
            s.instances, s.failures, s.worst_slack, s.worst_identity_gap, el
        ),
    ))
}

fn tightness() -> Result<Verdict> {
    let rows = run_tightness_suite(50, 7)?;
    let lower = rows.iter().map(|r| r.lower_gap).fold(0.0, f64::max);
    let upper = rows.iter().map(|r| r.upper_gap).fold(0.0, f64::max);
    let max_m = rows.iter().map(|r| r.m).max().unwrap_or(0);
    Ok(verdict(
        3,
        rows.len() == 50 && lower <= 1e-9 && upper <= 1e-9,
        format!("50 channels (m ≤ {max_m}), worst lower gap {lower:.2e}, worst ratio gap {upper:.2e}"),
    ))
}

fn counterexamples() -> Result<Verdict> {
    // Fixed batch: the first 100 instances of the theory family that meet
    // the eigenvector precondition.
    let (mut valid, mut at_10, mut monotone, mut index) = (0, 0, 0, 0u64);
    let mut worst = (f64::INFINITY, f64::INFINITY);
    while valid < 100 {
        let inst = random_instance(11, index);
        index += 1;
        if !eigen_condition_holds(&inst.p, &inst.q, &inst.c)? {
            continue;
        }
        valid += 1;
        let gaps: Vec<_> =
            [0.1, 0.01, 0.001].iter().map(|&e| build_counterexample(&inst.p, &inst.q, &inst.c, e)).collect::<Result<_>>()?;
        let g = gaps[1];
        worst = (worst.0.min(g.gap_f3), worst.1.min(g.gap_f4));
        if g.gap_f3 >= 10.0 && g.gap_f4 >= 10.0 {
            at_10 += 1;
        }
        if gaps.windows(2).all(|w| w[1].gap_f3 > w[0].gap_f3 && w[1].gap_f4 > w[0].gap_f4) {
            monotone += 1;
        }
    }
    Ok(verdict(
        4,
        at_10 == valid && monotone == valid,
        format!(
            "{valid} valid instances: both gaps ≥ 10 at eps 0.01 on {at_10}, increasing in 1/eps on {monotone}; smallest gaps ({:.2}, {:.2})",
            worst.0, worst.1
        ),
    ))
}

fn convergence() -> Result<Verdict> {
    let mut rng = seed::rng(21);
    let p = FiniteJoint::random(4, 3, &mut rng);
    let q = FiniteJoint::random(4, 3, &mut rng);
    let rows = empirical_convergence(&p, &q, &[100, 1_000, 10_000, 100_000], 50, 5)?;
    let (first, last) = (rows[0].mean_abs_dev, rows[3].mean_abs_dev);
    let devs: Vec<f64> = rows.iter().map(|r| r.mean_abs_dev).collect();
    Ok(verdict(5, last <= first / 10.0, format!("mean deviation by n = 1e2..1e5: {}", fmt(&devs))))
}

// ---------------------------------------------------------------- gradients

const DELTA: f64 = 1e-6;
/// Inputs this close to a relu or hinge kink are resampled.
const KINK_MARGIN: f64 = 1e-3;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

type Builder<'a> = dyn Fn(&mut Graph, &[Var], &Cell<f64>) -> Result<Var> + 'a;

/// Largest relative error between backward and central differences over
/// every input entry, or `None` when some kink lies within the margin.
fn fd_check(inputs: &[Tensor], build: &Builder<'_>) -> Result<Option<f64>> {
    let eval = |ts: &[Tensor], kink: &Cell<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars, kink)?;
        Ok(g.value(out).item())
    };
    let kink = Cell::new(f64::INFINITY);
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = build(&mut g, &vars, &kink)?;
    if kink.get() < KINK_MARGIN {
        return Ok(None);
    }
    let grads = g.backward(out)?;
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v);
        for i in 0..inputs[k].len() {
            let mut hi = inputs.to_vec();
            hi[k].data_mut()[i] += DELTA;
            let mut lo = inputs.to_vec();
            lo[k].data_mut()[i] -= DELTA;
            let numeric = (eval(&hi, &Cell::new(f64::INFINITY))? - eval(&lo, &Cell::new(f64::INFINITY))?) / (2.0 * DELTA);
            worst = worst.max(rel_err(analytic.data()[i], numeric));
        }
    }
    Ok(Some(worst))
}

fn note_kink(g: &Graph, v: Var, at: f64, kink: &Cell<f64>) {
    let d = g.value(v).data().iter().map(|x| (x - at).abs()).fold(f64::INFINITY, f64::min);
    kink.set(kink.get().min(d));
}

fn random_tensor(r: usize, c: usize, rng: &mut seed::Rng) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.5..1.5)).collect()).expect("shape")
}

/// Weighted sum with fixed weights so every output entry matters.
fn reduce(g: &mut Graph, v: Var) -> Result<Var> {
    let (r, c) = g.value(v).dims2()?;
    let w = g.input(Tensor::matrix(r, c, (0..r * c).map(|i| 0.3 + 0.17 * i as f64).collect())?);
    let p = g.mul(v, w)?;
    Ok(g.mean(p))
}

#[derive(Clone, Copy, Debug)]
enum Step {
    Relu,
    Tanh,
    Sigmoid,
    Softplus,
    Hinge,
    Affine(f64, f64),
    Add,
    Sub,
    Mul,
    MatMul,
    Softmax,
    ConcatProject,
}

#[derive(Clone, Copy, Debug)]
enum Head {
    Weighted,
    SquaredL2,
    Xent,
    MeanBatch,
    SumCols,
}

const ROWS: usize = 3;
const COLS: usize = 4;

fn random_step(rng: &mut seed::Rng) -> Step {
    match rng.random_range(0..12) {
        0 => Step::Relu,
        1 => Step::Tanh,
        2 => Step::Sigmoid,
        3 => Step::Softplus,
        4 => Step::Hinge,
        5 => Step::Affine(rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)),
        6 => Step::Add,
        7 => Step::Sub,
        8 => Step::Mul,
        9 => Step::MatMul,
        10 => Step::Softmax,
        _ => Step::ConcatProject,
    }
}

/// Extra inputs a step consumes.
fn step_inputs(s: Step, rng: &mut seed::Rng) -> Vec<Tensor> {
    match s {
        Step::Add | Step::Sub | Step::Mul => vec![random_tensor(ROWS, COLS, rng)],
        Step::MatMul => vec![random_tensor(COLS, COLS, rng)],
        Step::ConcatProject => vec![random_tensor(ROWS, COLS, rng), random_tensor(2 * COLS, COLS, rng)],
        _ => vec![],
    }
}

fn apply(g: &mut Graph, s: Step, x: Var, extra: &[Var], kink: &Cell<f64>) -> Result<Var> {
    Ok(match s {
        Step::Relu => {
            note_kink(g, x, 0.0, kink);
            g.relu(x)
        }
        Step::Tanh => g.tanh(x),
        Step::Sigmoid => g.sigmoid(x),
        Step::Softplus => g.softplus(x),
        Step::Hinge => {
            note_kink(g, x, 0.5, kink);
            g.hinge(x)
        }
        Step::Affine(a, b) => g.affine(x, a, b),
        Step::Add => g.add(x, extra[0])?,
        Step::Sub => g.sub(x, extra[0])?,
        Step::Mul => g.mul(x, extra[0])?,
        Step::MatMul => g.matmul(x, extra[0])?,
        Step::Softmax => g.softmax_rows(x)?,
        Step::ConcatProject => {
            let c = g.concat(x, extra[0])?;
            g.matmul(c, extra[1])?
        }
    })
}

fn apply_head(g: &mut Graph, h: Head, x: Var) -> Result<Var> {
    match h {
        Head::Weighted => reduce(g, x),
        Head::SquaredL2 => Ok(g.squared_l2(x)),
        Head::Xent => g.softmax_xent(x, &[1, 3, 0]),
        Head::MeanBatch => {
            let m = g.mean_batch(x)?;
            reduce(g, m)
        }
        Head::SumCols => {
            let s = g.sum_cols(x)?;
            reduce(g, s)
        }
    }
}

/// Checks a chain of steps under a head, resampling inputs near kinks.
/// `None` when every sample sits on a kink (e.g. a hinge fed by a
/// saturated hinge).
fn check_chain(steps: &[Step], head: Head, rng: &mut seed::Rng) -> Result<Option<f64>> {
    for _ in 0..100 {
        let mut inputs = vec![random_tensor(ROWS, COLS, rng)];
        let mut spans = Vec::new();
        for &s in steps {
            let extra = step_inputs(s, rng);
            spans.push((inputs.len(), extra.len()));
            inputs.extend(extra);
        }
        let build = |g: &mut Graph, vars: &[Var], kink: &Cell<f64>| -> Result<Var> {
            let mut x = vars[0];
            for (&s, &(start, len)) in steps.iter().zip(&spans) {
                x = apply(g, s, x, &vars[start..start + len], kink)?;
            }
            apply_head(g, head, x)
        };
        if let Some(e) = fd_check(&inputs, &build)? {
            return Ok(Some(e));
        }
    }
    Ok(None)
}

fn gradients() -> Result<Verdict> {
    let mut rng = seed::rng(31);
    let mut worst: f64 = 0.0;
    let singles = [
        Step::Relu,
        Step::Tanh,
        Step::Sigmoid,
        Step::Softplus,
        Step::Hinge,
        Step::Affine(1.7, -0.3),
        Step::Add,
        Step::Sub,
        Step::Mul,
        Step::MatMul,
        Step::Softmax,
        Step::ConcatProject,
    ];
    for s in singles {
        worst = worst.max(check_chain(&[s], Head::Weighted, &mut rng)?.expect("single ops have kink-free points"));
    }
    for h in [Head::SquaredL2, Head::Xent, Head::MeanBatch, Head::SumCols] {
        worst = worst.max(check_chain(&[], h, &mut rng)?.expect("heads are smooth"));
    }
    // Row broadcasting in add/mul.
    let bias = random_tensor(1, COLS, &mut rng);
    let x = random_tensor(ROWS, COLS, &mut rng);
    let broadcast = |g: &mut Graph, v: &[Var], _: &Cell<f64>| -> Result<Var> {
        let a = g.add(v[0], v[1])?;
        let b = g.mul(a, v[1])?;
        reduce(g, b)
    };
    worst = worst.max(fd_check(&[x, bias], &broadcast)?.expect("no kinks"));
    let singles_worst = worst;
    let heads = [Head::Weighted, Head::SquaredL2, Head::Xent, Head::MeanBatch, Head::SumCols];
    let compositions = 300;
    let mut on_kink = 0;
    for _ in 0..compositions {
        let depth = rng.random_range(1..=4);
        let steps: Vec<Step> = (0..depth).map(|_| random_step(&mut rng)).collect();
        let head = heads[rng.random_range(0..heads.len())];
        match check_chain(&steps, head, &mut rng)? {
            Some(e) => worst = worst.max(e),
            None => on_kink += 1,
        }
    }
    Ok(verdict(
        6,
        worst <= 1e-5,
        format!(
            "single ops worst rel err {singles_worst:.2e}; {} random depth ≤ 4 compositions ({on_kink} pinned to a kink, excluded), overall worst {worst:.2e}",
            compositions
        ),
    ))
}

// ---------------------------------------------------------------- projection

fn projection() -> Result<Verdict> {
    let mut rng = seed::rng(41);
    let (mut idempotent, mut included) = (0, 0);
    let trials = 1000;
    for i in 0..trials {
        let m = rng.random_range(2..=6);
        let d = rng.random_range(1..=8);
        let spec = DiscriminatorSpec {
            m,
            data_dim: 2,
            hidden: vec![4],
            proj_dim: d,
            uncond_dim: d,
            concat_y: false,
            projection: true,
        };
        let mut p = ProjDiscParams::new(spec, &mut seed::substream(41, "disc", i))?;
        let scale = rng.random_range(0.1..5.0);
        let raw: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| scale * rng.random_range(-1.0..1.0)).collect()).collect();
        p.set_v_matrix(&raw)?;
        let vs: Vec<f64> = (0..d).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        p.set_v_vector(&vs)?;
        let once = project_constraints(&p);
        let twice = project_constraints(&once);
        if once.v_matrix() == twice.v_matrix() && once.v_vector() == twice.v_vector() && once.is_feasible() {
            idempotent += 1;
        }
        // Label mixing with |||T|||_∞ = 1 exactly.
        let mut t: Vec<Vec<f64>> = (0..m).map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let norm = t.iter().map(|r| r.iter().map(|x: &f64| x.abs()).sum::<f64>()).fold(0.0, f64::max);
        t.iter_mut().flatten().for_each(|x| *x /= norm);
        if v_feasible(&mix_labels(&t, &once.v_matrix())) {
            included += 1;
        }
    }
    Ok(verdict(
        7,
        idempotent == trials && included == trials,
        format!("{trials} random (T, V): idempotent {idempotent}, T·V feasible {included}"),
    ))
}

// ---------------------------------------------------------------- experiments

fn experiment(variant: Variant, pi: f64, seed: u64) -> RunConfig {
    let c = ConfusionMatrix::uniform_flip(3, pi).expect("valid accuracy");
    RunConfig {
        noise_pi: Some(pi),
        channel: variant.requires_channel().then_some(c),
        training: ExperimentConfig {
            variant,
            seed,
            lambda: if variant == Variant::RcganU { 1.0 } else { 0.0 },
            schedule: (variant == Variant::RcganPlusY).then(NoiseSchedule::default),
            ..ExperimentConfig::default()
        },
        ..RunConfig::default()
    }
}

struct Timed {
    outcome: RunOutcome,
    elapsed: Duration,
}

fn timed(cfg: &RunConfig) -> Result<Timed> {
    let t = Instant::now();
    let outcome = run(cfg, None)?;
    Ok(Timed { outcome, elapsed: t.elapsed() })
}

struct Grid {
    pi07: Vec<(Variant, Vec<Timed>)>,
    pi10: Vec<(Variant, Vec<Timed>)>,
    rcgan08: Vec<Timed>,
}

impl Grid {
    fn at(rows: &[(Variant, Vec<Timed>)], v: Variant) -> Vec<f64> {
        rows.iter().find(|(k, _)| *k == v).map(|(_, r)| r.iter().map(|t| t.outcome.gen_label_acc).collect()).unwrap_or_default()
    }

    fn slowest(&self) -> Duration {
        self.pi07
            .iter()
            .chain(&self.pi10)
            .flat_map(|(_, r)| r)
            .chain(&self.rcgan08)
            .map(|t| t.elapsed)
            .max()
            .unwrap_or_default()
    }
}

fn run_grid() -> Result<Grid> {
    let recovery = Some(RecoveryEval { config: RecoveryConfig::default(), samples: 500 });
    let mut pi07 = Vec::new();
    for v in [Variant::Biased, Variant::Rcgan, Variant::RcganU, Variant::AmbientStyle] {
        let runs = SEEDS
            .iter()
            .map(|&s| {
                let mut cfg = experiment(v, 0.7, s);
                if v == Variant::Rcgan {
                    cfg.recovery = recovery.clone();
                }
                timed(&cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        pi07.push((v, runs));
    }
    let mut pi10 = Vec::new();
    for v in Variant::ALL {
        let runs = SEEDS.iter().map(|&s| timed(&experiment(v, 1.0, s))).collect::<Result<Vec<_>>>()?;
        pi10.push((v, runs));
    }
    let rcgan08 = SEEDS
        .iter()
        .map(|&s| {
            let mut cfg = experiment(Variant::Rcgan, 0.8, s);
            cfg.recovery = recovery.clone();
            timed(&cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Grid { pi07, pi10, rcgan08 })
}

fn ordering(grid: &Grid) -> Verdict {
    let rc = Grid::at(&grid.pi07, Variant::Rcgan);
    let ru = Grid::at(&grid.pi07, Variant::RcganU);
    let bi = Grid::at(&grid.pi07, Variant::Biased);
    let strong = rc.iter().chain(&ru).all(|&a| a >= 0.9);
    let biased_near = bi.iter().all(|a| (a - 0.7).abs() <= 0.1);
    let gap = rc.iter().zip(&bi).all(|(r, b)| *r >= b + 0.1);
    let means: Vec<(Variant, f64)> = grid.pi10.iter().map(|(v, _)| (*v, mean(&Grid::at(&grid.pi10, *v)))).collect();
    let hi = means.iter().map(|m| m.1).fold(f64::NEG_INFINITY, f64::max);
    let lo = means.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
    let slowest = grid.slowest();
    let parity: Vec<String> = means.iter().map(|(v, a)| format!("{v} {a:.3}")).collect();
    verdict(
        8,
        strong && biased_near && gap && hi - lo <= 0.05 && slowest <= Duration::from_secs(600),
        format!(
            "pi 0.7: RCGAN {} RCGAN_U {} Biased {}; pi 1.0 means {{{}}} spread {:.3}; slowest run {:.1?}",
            fmt(&rc),
            fmt(&ru),
            fmt(&bi),
            parity.join(", "),
            hi - lo,
            slowest
        ),
    )
}

fn channel_recovery(grid: &Grid) -> Verdict {
    let errs: Vec<f64> = grid
        .pi07
        .iter()
        .find(|(v, _)| *v == Variant::RcganU)
        .map(|(_, r)| r.iter().map(|t| t.outcome.m_error.unwrap_or(f64::INFINITY)).collect())
        .unwrap_or_default();
    verdict(9, errs.len() == 3 && errs.iter().all(|&e| e <= 0.1), format!("max |M − C| per seed {}", fmt(&errs)))
}

fn label_recovery(grid: &Grid) -> Verdict {
    let err = |runs: &[Timed]| -> Vec<f64> { runs.iter().map(|t| 1.0 - t.outcome.recovery_acc.unwrap_or(0.0)).collect() };
    let e07 = grid.pi07.iter().find(|(v, _)| *v == Variant::Rcgan).map(|(_, r)| err(r)).unwrap_or_default();
    let e08 = err(&grid.rcgan08);
    let pass = e07.len() == 3 && e08.len() == 3 && e07.iter().all(|&e| e < 0.3) && e08.iter().all(|&e| e < 0.2);
    verdict(10, pass, format!("recovery error on 500 samples: pi 0.7 {} (< 0.3), pi 0.8 {} (< 0.2)", fmt(&e07), fmt(&e08)))
}

fn ablation(grid: &Grid) -> Verdict {
    let rc = Grid::at(&grid.pi07, Variant::Rcgan);
    let amb = Grid::at(&grid.pi07, Variant::AmbientStyle);
    verdict(
        11,
        mean(&rc) >= mean(&amb),
        format!("pi 0.7 mean accuracy: projection RCGAN {:.3} vs AmbientStyle {:.3} (per seed {} vs {})", mean(&rc), mean(&amb), fmt(&rc), fmt(&amb)),
    )
}

fn determinism() -> Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let cfg = experiment(Variant::RcganU, 0.7, 0);
    let mut logs = Vec::new();
    for rep in 0..2 {
        let out = dir.path().join(format!("rep{rep}"));
        fs::create_dir_all(&out)?;
        run(&cfg, Some(&out))?;
        logs.push(fs::read(out.join("metrics.csv"))?);
    }
    let same = !logs[0].is_empty() && logs[0] == logs[1];
    Ok(verdict(12, same, format!("RCGAN_U seed 0 repeated: metric logs {} ({} bytes)", if same { "identical" } else { "differ" }, logs[0].len())))
}

fn main() {
    let start = Instant::now();
    let mut verdicts = Vec::new();
    let mut push = |r: Result<Verdict>, id: u32| match r {
        Ok(v) => verdicts.push(v),
        Err(e) => verdicts.push(verdict(id, false, format!("error: {e}"))),
    };
    push(thm1(), 1);
    push(thm2(), 2);
    push(tightness(), 3);
    push(counterexamples(), 4);
    push(convergence(), 5);
    push(gradients(), 6);
    push(projection(), 7);
    match run_grid() {
        Ok(grid) => {
            push(Ok(ordering(&grid)), 8);
            push(Ok(channel_recovery(&grid)), 9);
            push(Ok(label_recovery(&grid)), 10);
            push(Ok(ablation(&grid)), 11);
        }
        Err(e) => {
            for id in 8..=11 {
                push(Err(ncgl::Error::Numeric(format!("experiment grid: {e}"))), id);
            }
        }
    }
    push(determinism(), 12);
    verdicts.sort_by_key(|v| v.id);

    let passed = verdicts.iter().filter(|v| v.pass).count();
    println!("{passed}/{} criteria pass ({:.1?})", verdicts.len(), start.elapsed());
    let unexpected: Vec<&Verdict> = verdicts.iter().filter(|v| !v.pass && !KNOWN_RED.contains(&v.id)).collect();
    for v in verdicts.iter().filter(|v| !v.pass && KNOWN_RED.contains(&v.id)) {
        println!("known red: criterion {} ({})", v.id, v.detail);
    }
    for v in verdicts.iter().filter(|v| v.pass && KNOWN_RED.contains(&v.id)) {
        println!("note: criterion {} is listed as known red but passed", v.id);
    }
    if !unexpected.is_empty() {
        let ids: Vec<String> = unexpected.iter().map(|v| v.id.to_string()).collect();
        println!("failing: {}", ids.join(", "));
        std::process::exit(1);
    }
}
