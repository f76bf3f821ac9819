//! Conditional GAN training on noisy-labeled data.
//!
//! Variants differ in how the discriminator sees fake samples:
//!
//! * `Biased`: fake pairs `(G(z; y), y)` against real `(x, ỹ)`.
//! * `Unbiased`: as `Biased`, with the real term reweighted by `C⁻¹`.
//! * `RCGAN`: fake labels pass through the known channel `C` first.
//! * `RCGAN_U`: the channel is learned jointly as a row-softmax `M`.
//! * `RCGAN_plus_y`: `RCGAN` with the label also fed to the trunk, trained
//!   under an extra-noise schedule.
//! * `AmbientStyle`: `RCGAN` with a concat-only discriminator (no projection).
//!
//! The discriminator minimizes `E φ(D(real)) + E φ(−D(fake))` with
//! `φ(a) = max(0, 1 − 2a)`; see [`DiscLoss`] for the alternatives.

use std::fmt;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::channel::ConfusionMatrix;
use crate::data::TrainingView;
use crate::diffcomp::{
    softmax_rows, write_checkpoint, Bind, Graph, OptimizerKind, OptimizerState, ParamStore, Tensor, Var,
};
use crate::error::{invalid, Error, Result};
use crate::metrics::{confusion_error, generator_label_accuracy};
use crate::models::{
    train_classifier, ClassifierParams, ClassifierTraining, DiscriminatorSpec, GeneratorParams, GeneratorSpec,
    ProjDiscParams,
};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Biased,
    Unbiased,
    #[serde(rename = "RCGAN")]
    Rcgan,
    #[serde(rename = "RCGAN_U")]
    RcganU,
    #[serde(rename = "RCGAN_plus_y")]
    RcganPlusY,
    AmbientStyle,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Variant::Biased, Variant::Unbiased, Variant::Rcgan, Variant::RcganU, Variant::RcganPlusY, Variant::AmbientStyle];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Biased => "Biased",
            Variant::Unbiased => "Unbiased",
            Variant::Rcgan => "RCGAN",
            Variant::RcganU => "RCGAN_U",
            Variant::RcganPlusY => "RCGAN_plus_y",
            Variant::AmbientStyle => "AmbientStyle",
        }
    }

    /// Needs the true channel as input.
    pub fn requires_channel(self) -> bool {
        matches!(self, Variant::Unbiased | Variant::Rcgan | Variant::RcganPlusY | Variant::AmbientStyle)
    }

    /// Passes fake labels through a channel before the discriminator.
    pub fn corrupts_fakes(self) -> bool {
        matches!(self, Variant::Rcgan | Variant::RcganU | Variant::RcganPlusY | Variant::AmbientStyle)
    }

    pub fn uses_projection(self) -> bool {
        self != Variant::AmbientStyle
    }

    pub fn concat_label(self) -> bool {
        matches!(self, Variant::RcganPlusY | Variant::AmbientStyle)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| invalid!("unknown variant {s:?}"))
    }
}

/// Where the conditioning labels of fake samples come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FakeLabels {
    /// Empirical marginal of the observed labels.
    Observed,
    Uniform,
    /// Observed marginal pushed back through `C⁻¹`, clipped to the simplex.
    Deconvolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscLoss {
    /// `φ(D(real)) + φ(−D(fake))`: zero cost once real scores reach ½ and
    /// fake scores fall to −½.
    Hinge,
    /// `φ(D(real)) + φ(1 − D(fake))`. Both thresholds sit at ½, so the
    /// constant `D ≡ ½` attains the minimum 0 whatever the generator does.
    HingeComplement,
    /// `softplus(−D(real)) + softplus(D(fake))`; `Biased` only.
    Logistic,
}

impl DiscLoss {
    /// Fake-side term of the discriminator loss, elementwise.
    fn fake_term(self, g: &mut Graph, scores: Var) -> Var {
        match self {
            DiscLoss::Hinge => {
                let neg = g.affine(scores, -1.0, 0.0);
                g.hinge(neg)
            }
            DiscLoss::HingeComplement => {
                let flipped = g.affine(scores, -1.0, 1.0);
                g.hinge(flipped)
            }
            DiscLoss::Logistic => g.softplus(scores),
        }
    }

    fn real_term(self, g: &mut Graph, scores: Var) -> Var {
        match self {
            DiscLoss::Hinge | DiscLoss::HingeComplement => g.hinge(scores),
            DiscLoss::Logistic => {
                let neg = g.affine(scores, -1.0, 0.0);
                g.softplus(neg)
            }
        }
    }
}

/// Per-label generator objective, weighted by the channel row in the
/// learned-channel variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenLoss {
    /// `−D(G(z; y), ỹ)`.
    Linear,
    /// The negated fake-side discriminator term; flat wherever the
    /// discriminator already rejects the fake.
    Minimax,
}

/// Three-phase extra noise for the label-concatenating variant: hold the
/// effective accuracy at `start_accuracy`, ramp the extra-channel accuracy
/// linearly to 1 between the two fractions of training, then hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSchedule {
    pub start_accuracy: f64,
    pub ramp_start: f64,
    pub ramp_end: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule { start_accuracy: 0.3, ramp_start: 0.3, ramp_end: 0.8 }
    }
}

impl NoiseSchedule {
    fn validate(&self) -> Result<()> {
        let NoiseSchedule { start_accuracy: a, ramp_start: s, ramp_end: e } = *self;
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&s) || !(s..=1.0).contains(&e) {
            return Err(invalid!("schedule needs accuracy in [0,1] and 0 ≤ ramp_start ≤ ramp_end ≤ 1"));
        }
        Ok(())
    }

    /// Extra-channel accuracy `π̃` at `epoch` of `epochs`, for true accuracy `pi`.
    pub fn pi_tilde(&self, epoch: usize, epochs: usize, pi: f64, m: usize) -> f64 {
        let q = (1.0 - pi) / (m - 1) as f64;
        let start = if pi - q > 1e-12 { ((self.start_accuracy - q) / (pi - q)).clamp(0.0, 1.0) } else { 1.0 };
        let t = epoch as f64 / epochs.max(1) as f64;
        if t < self.ramp_start {
            start
        } else if t >= self.ramp_end {
            1.0
        } else {
            start + (1.0 - start) * (t - self.ramp_start) / (self.ramp_end - self.ramp_start)
        }
    }
}

/// Effective label accuracy `π̄ = π̃(π − q) + q`, `q = (1 − π)/(m − 1)`, after
/// chaining a uniform flip of accuracy `π̃` behind one of accuracy `π`.
pub fn effective_noise(pi_tilde: f64, pi: f64, m: usize) -> Result<f64> {
    if m < 2 || !(0.0..=1.0).contains(&pi_tilde) || !(0.0..=1.0).contains(&pi) {
        return Err(invalid!("need m ≥ 2 and accuracies in [0, 1]"));
    }
    let q = (1.0 - pi) / (m - 1) as f64;
    Ok(pi_tilde * (pi - q) + q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub variant: Variant,
    /// Weight of the permutation regularizer; used by the channel-aware variants.
    pub lambda: f64,
    pub lr_d: f64,
    pub lr_g: f64,
    /// Learning rate of the channel logits relative to `lr_g`.
    pub m_lr_multiplier: f64,
    pub batch: usize,
    pub epochs: usize,
    pub d_steps_per_g: usize,
    pub seed: u64,
    pub schedule: Option<NoiseSchedule>,
    pub latent_dim: usize,
    pub gen_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub proj_dim: usize,
    pub uncond_dim: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub fake_labels: FakeLabels,
    pub disc_loss: DiscLoss,
    pub gen_loss: GenLoss,
    /// Initial diagonal of the learned channel; `None` keeps a 2.25
    /// diagonal-to-off-diagonal ratio.
    pub m_init_diag: Option<f64>,
    /// Hidden widths of the permutation-regularizer classifier.
    pub h_star_hidden: Vec<usize>,
    pub h_star_epochs: usize,
    pub h_star_lr: f64,
    /// Samples drawn per epoch for the generator label accuracy.
    pub eval_samples: usize,
    /// Write a checkpoint every this many epochs; 0 writes only the last.
    pub checkpoint_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            variant: Variant::Rcgan,
            lambda: 0.0,
            lr_d: 2e-3,
            lr_g: 2e-3,
            m_lr_multiplier: 0.3,
            batch: 64,
            epochs: 30,
            d_steps_per_g: 1,
            seed: 0,
            schedule: None,
            latent_dim: 4,
            gen_hidden: vec![64, 64],
            disc_hidden: vec![64, 64],
            proj_dim: 64,
            uncond_dim: 64,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            fake_labels: FakeLabels::Observed,
            disc_loss: DiscLoss::Hinge,
            gen_loss: GenLoss::Linear,
            m_init_diag: None,
            h_star_hidden: vec![],
            h_star_epochs: 20,
            h_star_lr: 0.01,
            eval_samples: 2000,
            checkpoint_every: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(invalid!("lambda must be ≥ 0, got {}", self.lambda));
        }
        if self.batch == 0 || self.d_steps_per_g == 0 || self.latent_dim == 0 {
            return Err(invalid!("batch, d_steps_per_g and latent_dim must be ≥ 1"));
        }
        if !positive(self.m_lr_multiplier) || !positive(self.lr_d) || !positive(self.lr_g) || !positive(self.h_star_lr) {
            return Err(invalid!("learning rates and the channel multiplier must be > 0"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(invalid!("Adam betas must lie in [0, 1)"));
        }
        if self.disc_hidden.is_empty() || self.proj_dim == 0 || self.uncond_dim == 0 {
            return Err(invalid!("discriminator needs a hidden layer and positive head widths"));
        }
        if self.disc_loss == DiscLoss::Logistic && self.variant != Variant::Biased {
            return Err(invalid!("logistic loss is only available for Biased"));
        }
        if let Some(s) = &self.schedule {
            if !self.variant.requires_channel() {
                return Err(invalid!("a noise schedule needs a known channel"));
            }
            s.validate()?;
        }
        if let Some(d) = self.m_init_diag {
            if !(d > 0.0 && d < 1.0) {
                return Err(invalid!("m_init_diag must lie in (0, 1)"));
            }
        }
        if self.eval_samples == 0 {
            return Err(invalid!("eval_samples must be ≥ 1"));
        }
        Ok(())
    }

    fn optimizer(&self, lr: f64) -> OptimizerState {
        OptimizerState::new(OptimizerKind::Adam { beta1: self.adam_beta1, beta2: self.adam_beta2, eps: 1e-8 }, lr)
    }
}

/// Learned channel: logits whose row-wise softmax is the channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    logits: Tensor,
}

impl ChannelEstimate {
    pub fn new(logits: Tensor) -> Result<Self> {
        let (r, c) = logits.dims2()?;
        if r != c || r == 0 {
            return Err(invalid!("channel logits must be square, got {r}×{c}"));
        }
        Ok(ChannelEstimate { logits })
    }

    /// Realizes to diagonal `diag` and uniform off-diagonal entries.
    pub fn diagonal(m: usize, diag: f64) -> Result<Self> {
        if m < 2 || !(diag > 0.0 && diag < 1.0) {
            return Err(invalid!("need m ≥ 2 and a diagonal in (0, 1)"));
        }
        let (on, off) = (diag.ln(), ((1.0 - diag) / (m - 1) as f64).ln());
        let data = (0..m * m).map(|k| if k / m == k % m { on } else { off }).collect();
        Self::new(Tensor::matrix(m, m, data)?)
    }

    pub fn m(&self) -> usize {
        self.logits.shape()[0]
    }

    pub fn logits(&self) -> &Tensor {
        &self.logits
    }

    pub fn realized(&self) -> ConfusionMatrix {
        let m = self.m();
        let mut p = softmax_rows(self.logits.data(), m, m);
        // Let the largest entry of each row absorb the rounding.
        for row in p.chunks_mut(m) {
            let top = (0..m).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            let rest: f64 = (0..m).filter(|&j| j != top).map(|j| row[j]).sum();
            row[top] = 1.0 - rest;
        }
        ConfusionMatrix::new(m, p).expect("softmax rows are stochastic")
    }
}

/// Default initial diagonal: entries in the ratio 2.25 : 1, which gives 0.2
/// on the diagonal at ten classes.
pub fn default_m_init_diag(m: usize) -> f64 {
    2.25 / (m as f64 - 1.0 + 2.25)
}

/// `Σ_ỹ M_{yỹ} φ(1 − D(x, ỹ))` per row, from per-row channel weights and
/// per-label scores (`n × m` each).
pub fn phi_m(g: &mut Graph, weights: Var, scores: Var) -> Result<Var> {
    let flipped = g.affine(scores, -1.0, 1.0);
    let phi = g.hinge(flipped);
    let weighted = g.mul(weights, phi)?;
    g.sum_cols(weighted)
}

/// Rows `y_i` of `softmax_rows(logits)`: `n × m`.
pub fn channel_rows(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let m = g.value(logits).dims2()?.0;
    let probs = g.softmax_rows(logits)?;
    let pick = g.input(Tensor::one_hot(labels, m)?);
    g.matmul(pick, probs)
}

fn generator_term(g: &mut Graph, kind: GenLoss, disc_loss: DiscLoss, scores: Var) -> Var {
    match kind {
        GenLoss::Linear => g.affine(scores, -1.0, 0.0),
        GenLoss::Minimax => {
            let t = disc_loss.fake_term(g, scores);
            g.affine(t, -1.0, 0.0)
        }
    }
}

/// Discriminator loss on one real and one fake batch. `fake_x` is a constant;
/// `fake_labels` are the labels the discriminator sees for it (already
/// corrupted where the variant calls for it).
pub fn loss_d(
    g: &mut Graph,
    variant: Variant,
    kind: DiscLoss,
    d: &ProjDiscParams,
    real: (&Tensor, &[usize]),
    fake: (&Tensor, &[usize]),
    channel_inverse: Option<&[f64]>,
) -> Result<Var> {
    if real.1.is_empty() || fake.1.is_empty() {
        return Err(invalid!("loss needs non-empty real and fake batches"));
    }
    let m = d.spec.m;
    let xr = g.input(real.0.clone());
    let xf = g.input(fake.0.clone());
    let real_term = if variant == Variant::Unbiased {
        let inv = channel_inverse.ok_or_else(|| Error::Precondition("Unbiased needs C⁻¹".into()))?;
        let w: Vec<f64> = real.1.iter().flat_map(|&yt| inv[yt * m..(yt + 1) * m].iter().copied()).collect();
        let w = g.input(Tensor::matrix(real.1.len(), m, w)?);
        let all = d.forward_all(g, xr)?;
        let phi = kind.real_term(g, all);
        let weighted = g.mul(w, phi)?;
        let per_row = g.sum_cols(weighted)?;
        g.mean(per_row)
    } else {
        let s = d.forward(g, xr, real.1)?;
        let t = kind.real_term(g, s);
        g.mean(t)
    };
    let sf = d.forward(g, xf, fake.1)?;
    let fake_term = kind.fake_term(g, sf);
    let fake_term = g.mean(fake_term);
    g.add(real_term, fake_term)
}

/// Channel the generator step routes fake labels through.
pub enum GenChannel<'a> {
    /// Labels fed to the discriminator unchanged.
    Clean,
    /// One corrupted label per sample, drawn outside the graph.
    Sampled(&'a [usize]),
    /// Summed over all labels with weights from these channel logits.
    Learned(Var),
}

/// Generator loss on latent rows `z` conditioned on clean `labels`. The
/// discriminator and `h_star` enter frozen.
#[allow(clippy::too_many_arguments)]
pub fn loss_g(
    g: &mut Graph,
    kind: GenLoss,
    disc_loss: DiscLoss,
    gen: &GeneratorParams,
    d: &ProjDiscParams,
    z: &Tensor,
    labels: &[usize],
    channel: GenChannel<'_>,
    h_star: Option<&ClassifierParams>,
    lambda: f64,
) -> Result<Var> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(invalid!("lambda must be ≥ 0"));
    }
    let zv = g.input(z.clone());
    let x = gen.forward(g, zv, labels)?;
    let adversarial = match channel {
        GenChannel::Clean => {
            let s = d.forward_with(g, x, labels, Bind::Frozen)?;
            let t = generator_term(g, kind, disc_loss, s);
            g.mean(t)
        }
        GenChannel::Sampled(noisy) => {
            let s = d.forward_with(g, x, noisy, Bind::Frozen)?;
            let t = generator_term(g, kind, disc_loss, s);
            g.mean(t)
        }
        GenChannel::Learned(logits) => {
            let w = channel_rows(g, logits, labels)?;
            let all = d.forward_all_with(g, x, Bind::Frozen)?;
            let t = generator_term(g, kind, disc_loss, all);
            let weighted = g.mul(w, t)?;
            let per_row = g.sum_cols(weighted)?;
            g.mean(per_row)
        }
    };
    match h_star {
        Some(h) if lambda > 0.0 => {
            let logits = h.logits_with(g, x, Bind::Frozen)?;
            let xent = g.softmax_xent(logits, labels)?;
            let reg = g.affine(xent, lambda, 0.0);
            g.add(adversarial, reg)
        }
        _ => Ok(adversarial),
    }
}

/// What per-epoch evaluation may use. Clean information lives here only.
#[derive(Debug, Clone, Copy)]
pub struct Evaluation<'a> {
    pub classifier: &'a ClassifierParams,
    pub true_channel: Option<&'a ConfusionMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub variant: Variant,
    pub loss_d: f64,
    pub loss_g: f64,
    pub gen_label_acc: Option<f64>,
    pub m_error: Option<f64>,
}

pub fn write_metric_log(path: &Path, rows: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metric_log(path: &Path) -> Result<Vec<EpochLog>> {
    csv::Reader::from_path(path)?.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub generator: GeneratorParams,
    pub discriminator: ProjDiscParams,
    pub channel_estimate: Option<ChannelEstimate>,
    pub h_star: Option<ClassifierParams>,
    pub log: Vec<EpochLog>,
    pub checkpoints: Vec<PathBuf>,
    /// Clean-to-corrupted counts of the fake labels seen by the discriminator
    /// in the last epoch.
    pub fake_label_counts: Vec<Vec<u64>>,
    /// Discriminator updates that left `V` or `v` infeasible (projection
    /// variants only).
    pub projection_violations: usize,
}

impl RunArtifacts {
    pub fn learned_channel(&self) -> Option<ConfusionMatrix> {
        self.channel_estimate.as_ref().map(ChannelEstimate::realized)
    }
}

fn categorical(cdf: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    p.iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

fn fake_label_marginal(mode: FakeLabels, view: &TrainingView<'_>, inverse: Option<&[f64]>) -> Result<Vec<f64>> {
    let m = view.m;
    Ok(match mode {
        FakeLabels::Observed => view.label_marginal(),
        FakeLabels::Uniform => vec![1.0 / m as f64; m],
        FakeLabels::Deconvolved => {
            let inv = inverse.ok_or_else(|| invalid!("deconvolved marginal needs an invertible known channel"))?;
            let obs = view.label_marginal();
            let mut p: Vec<f64> =
                (0..m).map(|y| (0..m).map(|t| obs[t] * inv[t * m + y]).sum::<f64>().max(0.0)).collect();
            let s: f64 = p.iter().sum();
            if s <= 0.0 {
                return Err(Error::Degenerate("deconvolved label marginal vanished".into()));
            }
            p.iter_mut().for_each(|v| *v /= s);
            p
        }
    })
}

fn combined_store(gen: &GeneratorParams, d: &ProjDiscParams, est: Option<&ChannelEstimate>) -> ParamStore {
    let mut all = ParamStore::new();
    for (name, t) in gen.store.iter().chain(d.store.iter()) {
        all.insert(name, t.clone());
    }
    if let Some(e) = est {
        all.insert("channel.logits", e.logits.clone());
    }
    all
}

fn save_checkpoint(path: &Path, store: &ParamStore) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_checkpoint(&mut w, store)
}

fn check_finite(what: &str, epoch: usize, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} became {v} in epoch {epoch}")))
    }
}

/// Runs pre-processing and the alternating discriminator/generator updates.
/// Checkpoints are written only when `out_dir` is given. On a non-finite
/// loss or gradient the run stops with a numeric error; the parameters from
/// the end of the last finished epoch are saved as `last_good.ckpt` first.
pub fn train(
    config: &ExperimentConfig,
    view: TrainingView<'_>,
    c_known: Option<&ConfusionMatrix>,
    eval: Option<Evaluation<'_>>,
    out_dir: Option<&Path>,
) -> Result<RunArtifacts> {
    config.validate()?;
    let variant = config.variant;
    let m = view.m;
    let (n, d_x) = view.x.dims2()?;
    if n == 0 {
        return Err(invalid!("training set is empty"));
    }
    if m < 2 {
        return Err(invalid!("need at least two classes"));
    }
    match (variant.requires_channel(), c_known) {
        (true, None) => return Err(invalid!("{variant} needs the known confusion matrix")),
        (false, Some(_)) => return Err(invalid!("{variant} must not be given a confusion matrix")),
        (true, Some(c)) if c.m() != m => {
            return Err(invalid!("channel has {} classes, data {m}", c.m()));
        }
        _ => {}
    }
    if let Some(e) = &eval {
        if e.classifier.m != m {
            return Err(invalid!("evaluation classifier has {} classes, data {m}", e.classifier.m));
        }
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }

    let s = config.seed;
    let mut gen = GeneratorParams::new(
        GeneratorSpec { latent_dim: config.latent_dim, m, data_dim: d_x, hidden: config.gen_hidden.clone() },
        &mut seed::substream(s, "init-gen", 0),
    )?;
    let mut disc = ProjDiscParams::new(
        DiscriminatorSpec {
            m,
            data_dim: d_x,
            hidden: config.disc_hidden.clone(),
            proj_dim: config.proj_dim,
            uncond_dim: config.uncond_dim,
            concat_y: variant.concat_label(),
            projection: variant.uses_projection(),
        },
        &mut seed::substream(s, "init-disc", 0),
    )?;
    let mut estimate = if variant == Variant::RcganU {
        Some(ChannelEstimate::diagonal(m, config.m_init_diag.unwrap_or_else(|| default_m_init_diag(m)))?)
    } else {
        None
    };
    let h_star = if config.lambda > 0.0 && variant.corrupts_fakes() {
        let cfg = ClassifierTraining {
            hidden: config.h_star_hidden.clone(),
            epochs: config.h_star_epochs,
            lr: config.h_star_lr,
            batch: config.batch,
            seed: seed::derive(s, "h-star", 0),
        };
        Some(train_classifier(view.x, view.labels, m, &cfg)?.0)
    } else {
        None
    };

    let base_inverse = c_known.map(|c| c.analyze().inverse.map(|rows| rows.concat()));
    if variant == Variant::Unbiased && base_inverse.as_ref().is_some_and(Option::is_none) {
        return Err(Error::Precondition("Unbiased needs a full-rank confusion matrix".into()));
    }
    let marginal = fake_label_marginal(config.fake_labels, &view, base_inverse.clone().flatten().as_deref())?;
    let marginal_cdf = cumulative(&marginal);
    let true_pi = c_known.map(|c| (0..m).map(|i| c.get(i, i)).sum::<f64>() / m as f64);

    let mut opt_d = config.optimizer(config.lr_d);
    let mut opt_g = config.optimizer(config.lr_g);
    let mut opt_m = config.optimizer(config.lr_g * config.m_lr_multiplier);
    let mut m_store = ParamStore::new();
    let mk = estimate.as_ref().map(|e| m_store.insert("channel.logits", e.logits.clone()));

    let mut log = Vec::with_capacity(config.epochs);
    let mut checkpoints = Vec::new();
    let mut counts = vec![vec![0u64; m]; m];
    let mut violations = 0;
    let mut last_good = combined_store(&gen, &disc, estimate.as_ref());
    let mut order: Vec<usize> = (0..n).collect();

    let abort = |err: Error, last_good: &ParamStore| -> Error {
        match out_dir {
            Some(dir) => {
                let path = dir.join("last_good.ckpt");
                match save_checkpoint(&path, last_good) {
                    Ok(()) => Error::Numeric(format!("{err}; last good checkpoint at {}", path.display())),
                    Err(e) => Error::Numeric(format!("{err}; saving last good checkpoint failed: {e}")),
                }
            }
            None => err,
        }
    };

    for epoch in 0..config.epochs {
        // Extra noise for this epoch: real labels go through `extra`, fakes
        // through `C·extra`.
        let (extra, fake_channel) = match (&config.schedule, c_known, true_pi) {
            (Some(sched), Some(c), Some(pi)) => {
                let pt = sched.pi_tilde(epoch, config.epochs, pi, m);
                let a = ConfusionMatrix::uniform_flip(m, pt)?;
                let chained = c.then(&a)?;
                (Some(a), Some(chained))
            }
            _ => (None, c_known.cloned()),
        };
        let inverse: Option<Vec<f64>> = match (&extra, variant) {
            (Some(_), Variant::Unbiased) => {
                let inv = fake_channel.as_ref().and_then(|c| c.analyze().inverse).map(|r| r.concat());
                Some(inv.ok_or_else(|| Error::Precondition("scheduled channel is singular".into()))?)
            }
            _ => base_inverse.clone().flatten(),
        };
        let real_labels: Vec<usize> = match &extra {
            Some(a) => view
                .labels
                .iter()
                .enumerate()
                .map(|(i, &y)| a.corrupt(y, &mut seed::substream(s, "extra-noise", ((epoch as u64) << 32) | i as u64)))
                .collect::<Result<_>>()?,
            None => view.labels.to_vec(),
        };

        order.shuffle(&mut seed::substream(s, "epoch-order", epoch as u64));
        let mut draws = seed::substream(s, "epoch-draws", epoch as u64);
        counts.iter_mut().for_each(|r| r.iter_mut().for_each(|c| *c = 0));
        let (mut sum_d, mut n_d, mut sum_g, mut n_g) = (0.0, 0usize, 0.0, 0usize);

        for (step, chunk) in order.chunks(config.batch).enumerate() {
            let b = chunk.len();
            let xr = view.x.select_rows(chunk);
            let yr: Vec<usize> = chunk.iter().map(|&i| real_labels[i]).collect();

            // Discriminator step.
            let yf: Vec<usize> = (0..b).map(|_| categorical(&marginal_cdf, &mut draws)).collect();
            let z = gen.sample_latent(b, &mut draws);
            let xf = gen.generate(&z, &yf)?;
            let seen: Vec<usize> = if variant.corrupts_fakes() {
                let ch = match &estimate {
                    Some(e) => e.realized(),
                    None => fake_channel.clone().expect("channel checked above"),
                };
                yf.iter().map(|&y| ch.corrupt(y, &mut draws)).collect::<Result<_>>()?
            } else {
                yf.clone()
            };
            for (&y, &t) in yf.iter().zip(&seen) {
                counts[y][t] += 1;
            }
            let mut g = Graph::new();
            let loss = loss_d(&mut g, variant, config.disc_loss, &disc, (&xr, &yr), (&xf, &seen), inverse.as_deref())?;
            let lv = g.value(loss).item();
            if let Err(e) = check_finite("discriminator loss", epoch, lv) {
                return Err(abort(e, &last_good));
            }
            let grads = g.backward(loss)?;
            if let Err(e) = opt_d.step(&mut disc.store, &grads) {
                return Err(abort(e, &last_good));
            }
            if variant.uses_projection() {
                disc.project_constraints();
                if !disc.is_feasible() {
                    violations += 1;
                }
            }
            sum_d += lv;
            n_d += 1;

            if (step + 1) % config.d_steps_per_g != 0 {
                continue;
            }
            // Generator step.
            let yg: Vec<usize> = (0..b).map(|_| categorical(&marginal_cdf, &mut draws)).collect();
            let z = gen.sample_latent(b, &mut draws);
            let mut g = Graph::new();
            let noisy: Vec<usize>;
            let mut m_var = None;
            let channel = match (&estimate, variant.corrupts_fakes()) {
                (Some(_), _) => {
                    // An input rather than a parameter: its key would collide
                    // with the generator's.
                    let v = g.input(m_store.get(mk.expect("estimate implies key")).clone());
                    m_var = Some(v);
                    GenChannel::Learned(v)
                }
                (None, true) => {
                    let ch = fake_channel.as_ref().expect("channel checked above");
                    noisy = yg.iter().map(|&y| ch.corrupt(y, &mut draws)).collect::<Result<_>>()?;
                    GenChannel::Sampled(&noisy)
                }
                (None, false) => GenChannel::Clean,
            };
            let h = if variant.corrupts_fakes() { h_star.as_ref() } else { None };
            let loss = loss_g(&mut g, config.gen_loss, config.disc_loss, &gen, &disc, &z, &yg, channel, h, config.lambda)?;
            let lv = g.value(loss).item();
            if let Err(e) = check_finite("generator loss", epoch, lv) {
                return Err(abort(e, &last_good));
            }
            let grads = g.backward(loss)?;
            let step_result = opt_g.step(&mut gen.store, &grads).and_then(|()| match (m_var, mk) {
                (Some(v), Some(k)) => opt_m.step_with(&mut m_store, &[(k, grads.wrt(v))]),
                _ => Ok(()),
            });
            if let Err(e) = step_result {
                return Err(abort(e, &last_good));
            }
            sum_g += lv;
            n_g += 1;
        }

        if let (Some(e), Some(k)) = (estimate.as_mut(), mk) {
            e.logits = m_store.get(k).clone();
        }
        let mut eval_rng = seed::substream(s, "eval", epoch as u64);
        let gen_label_acc = match &eval {
            Some(ev) => Some(generator_label_accuracy(&gen, ev.classifier, config.eval_samples, &mut eval_rng)?),
            None => None,
        };
        let m_error = match (&eval, &estimate) {
            (Some(Evaluation { true_channel: Some(c), .. }), Some(est)) => Some(confusion_error(&est.realized(), c)?),
            _ => None,
        };
        let mean = |s: f64, k: usize| if k == 0 { f64::NAN } else { s / k as f64 };
        log.push(EpochLog {
            epoch,
            variant,
            loss_d: mean(sum_d, n_d),
            loss_g: mean(sum_g, n_g),
            gen_label_acc,
            m_error,
        });
        last_good = combined_store(&gen, &disc, estimate.as_ref());
        if let Some(dir) = out_dir {
            let last = epoch + 1 == config.epochs;
            if last || (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0) {
                let path = dir.join(format!("epoch_{:04}.ckpt", epoch + 1));
                save_checkpoint(&path, &last_good)?;
                checkpoints.push(path);
            }
        }
    }
    if let Some(dir) = out_dir {
        write_metric_log(&dir.join("metrics.csv"), &log)?;
    }
    Ok(RunArtifacts {
        generator: gen,
        discriminator: disc,
        channel_estimate: estimate,
        h_star,
        log,
        checkpoints,
        fake_label_counts: counts,
        projection_violations: violations,
    })
}
