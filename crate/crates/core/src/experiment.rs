//! End-to-end runs: build and corrupt a dataset, fit the evaluation
//! classifier on clean data, train one variant and score it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::ConfusionMatrix;
use crate::data::{inject_noise, load_idx, make_mixture, LabeledDataset, MixtureSpec};
use crate::error::{invalid, Result};
use crate::metrics::{confusion_error, generator_label_accuracy, recovery_accuracy};
use crate::models::{train_classifier, ClassifierParams, ClassifierTraining};
use crate::recovery::RecoveryConfig;
use crate::seed;
use crate::training::{train, Evaluation, ExperimentConfig, RunArtifacts};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Mixture(MixtureSpec),
    /// Labels in the files are taken as clean.
    Idx { images: PathBuf, labels: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Mixture(MixtureSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryEval {
    #[serde(default)]
    pub config: RecoveryConfig,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataSource,
    /// Accuracy of the uniform flip that corrupts the training labels.
    pub noise_pi: Option<f64>,
    /// Confusion matrix handed to the trainer. Corrupts the labels as well
    /// when `noise_pi` is unset.
    pub channel: Option<ConfusionMatrix>,
    pub training: ExperimentConfig,
    /// Evaluation classifier f.
    pub classifier: ClassifierTraining,
    pub recovery: Option<RecoveryEval>,
    pub final_eval_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataSource::default(),
            noise_pi: None,
            channel: None,
            training: ExperimentConfig::default(),
            classifier: ClassifierTraining::default(),
            recovery: None,
            final_eval_samples: 10_000,
        }
    }
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.training.seed
    }

    /// The channel that actually corrupts the training labels.
    pub fn corruption(&self, m: usize) -> Result<ConfusionMatrix> {
        match (self.noise_pi, &self.channel) {
            (Some(pi), _) => ConfusionMatrix::uniform_flip(m, pi),
            (None, Some(c)) => Ok(c.clone()),
            (None, None) => ConfusionMatrix::identity(m),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub artifacts: RunArtifacts,
    pub dataset: LabeledDataset,
    pub true_channel: ConfusionMatrix,
    pub classifier: ClassifierParams,
    /// Accuracy of f on held-out clean data.
    pub classifier_accuracy: f64,
    pub gen_label_acc: f64,
    pub m_error: Option<f64>,
    pub recovery_acc: Option<f64>,
}

fn clean_data(cfg: &RunConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    let s = cfg.seed();
    match &cfg.data {
        DataSource::Mixture(spec) => {
            Ok((make_mixture(spec, seed::derive(s, "data", 0))?, make_mixture(spec, seed::derive(s, "eval-data", 0))?))
        }
        DataSource::Idx { images, labels } => {
            let ds = load_idx(images, labels)?;
            Ok((ds.clone(), ds))
        }
    }
}

/// Runs one configured experiment. Checkpoints and the metric log go to
/// `out_dir` when given.
pub fn run(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<RunOutcome> {
    if cfg.final_eval_samples == 0 {
        return Err(invalid!("final_eval_samples must be at least 1"));
    }
    let s = cfg.seed();
    let (clean, held_out) = clean_data(cfg)?;
    let m = clean.m();
    let true_channel = cfg.corruption(m)?;
    let dataset = inject_noise(&clean, &true_channel, seed::derive(s, "noise", 0))?;
    let held_labels = held_out.clean_labels().ok_or_else(|| invalid!("evaluation data lacks clean labels"))?;
    let (classifier, _) = train_classifier(held_out.x(), held_labels, m, &cfg.classifier)?;
    let classifier_accuracy = match &cfg.data {
        DataSource::Mixture(spec) => {
            let check = make_mixture(spec, seed::derive(s, "check-data", 0))?;
            classifier.accuracy(check.x(), check.clean_labels().unwrap_or_default())?
        }
        DataSource::Idx { .. } => classifier.accuracy(held_out.x(), held_labels)?,
    };
    let eval = Evaluation { classifier: &classifier, true_channel: Some(&true_channel) };
    let artifacts = train(&cfg.training, dataset.training_view(), cfg.channel.as_ref(), Some(eval), out_dir)?;
    let mut rng = seed::substream(s, "final-eval", 0);
    let gen_label_acc = generator_label_accuracy(&artifacts.generator, &classifier, cfg.final_eval_samples, &mut rng)?;
    let m_error = artifacts.learned_channel().map(|lc| confusion_error(&lc, &true_channel)).transpose()?;
    let recovery_acc = match &cfg.recovery {
        Some(r) => Some(recovery_accuracy(
            &artifacts.generator,
            &dataset,
            &r.config,
            r.samples,
            &mut seed::substream(s, "recovery-eval", 0),
        )?),
        None => None,
    };
    Ok(RunOutcome {
        artifacts,
        dataset,
        true_channel,
        classifier,
        classifier_accuracy,
        gen_label_acc,
        m_error,
        recovery_acc,
    })
}
