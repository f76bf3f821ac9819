//! Evaluation of trained generators and channel estimates.

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::channel::ConfusionMatrix;
use crate::data::LabeledDataset;
use crate::error::{invalid, Result};
use crate::models::{ClassifierParams, GeneratorParams};
use crate::recovery::{recover_labels, RecoveryConfig};
use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub gen_label_acc: f64,
    pub recovery_acc: Option<f64>,
    /// Largest entrywise gap between the learned and the true channel.
    pub m_error: Option<f64>,
    /// Average distance between generated and observed class means.
    pub per_class_mean_err: f64,
}

fn uniform_labels(n: usize, m: usize, rng: &mut Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..m)).collect()
}

/// Fraction of `n` conditional samples `G(z; y)`, `y` uniform, that `f`
/// assigns back to `y`.
pub fn generator_label_accuracy(g: &GeneratorParams, f: &ClassifierParams, n: usize, rng: &mut Rng) -> Result<f64> {
    if f.m != g.spec.m {
        return Err(invalid!("classifier has {} classes, generator {}", f.m, g.spec.m));
    }
    if n == 0 {
        return Err(invalid!("need at least one evaluation sample"));
    }
    let labels = uniform_labels(n, g.spec.m, rng);
    let z = g.sample_latent(n, rng);
    let pred = f.predict(&g.generate(&z, &labels)?)?;
    Ok(pred.iter().zip(&labels).filter(|(a, b)| a == b).count() as f64 / n as f64)
}

pub fn confusion_error(m: &ConfusionMatrix, c: &ConfusionMatrix) -> Result<f64> {
    if m.m() != c.m() {
        return Err(invalid!("comparing {}-class and {}-class channels", m.m(), c.m()));
    }
    Ok(m.entries().iter().zip(c.entries()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// Recovers the labels of `sample_count` rows drawn without replacement and
/// scores them against the clean labels.
pub fn recovery_accuracy(
    g: &GeneratorParams,
    ds: &LabeledDataset,
    cfg: &RecoveryConfig,
    sample_count: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let clean = ds.clean_labels().ok_or_else(|| invalid!("recovery accuracy needs clean labels"))?;
    if sample_count == 0 || sample_count > ds.len() {
        return Err(invalid!("cannot score {sample_count} of {} samples", ds.len()));
    }
    let idx = index::sample(rng, ds.len(), sample_count).into_vec();
    let stream = rng.random::<u64>();
    let found = recover_labels(&ds.x().select_rows(&idx), g, cfg, stream)?;
    let hits = found.iter().zip(&idx).filter(|(r, &i)| r.label == clean[i]).count();
    Ok(hits as f64 / sample_count as f64)
}

/// Mean over classes of the distance between the average generated sample
/// and the average clean-labeled sample of that class.
pub fn per_class_mean_error(g: &GeneratorParams, ds: &LabeledDataset, n_per_class: usize, rng: &mut Rng) -> Result<f64> {
    let clean = ds.clean_labels().ok_or_else(|| invalid!("class means need clean labels"))?;
    let (m, d) = (g.spec.m, g.spec.data_dim);
    if ds.dim() != d || ds.m() != m {
        return Err(invalid!("dataset shape does not match the generator"));
    }
    if n_per_class == 0 {
        return Err(invalid!("need at least one sample per class"));
    }
    let mut total = 0.0;
    for y in 0..m {
        let rows: Vec<usize> = (0..ds.len()).filter(|&i| clean[i] == y).collect();
        if rows.is_empty() {
            return Err(invalid!("class {y} has no samples"));
        }
        let data_mean = column_means(&ds.x().select_rows(&rows).into_data(), d);
        let z = g.sample_latent(n_per_class, rng);
        let fake = g.generate(&z, &vec![y; n_per_class])?;
        let gen_mean = column_means(fake.data(), d);
        total += data_mean.iter().zip(&gen_mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    }
    Ok(total / m as f64)
}

fn column_means(data: &[f64], d: usize) -> Vec<f64> {
    let n = (data.len() / d).max(1) as f64;
    let mut out = vec![0.0; d];
    for row in data.chunks(d) {
        out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
    }
    out.iter().map(|v| v / n).collect()
}

/// Bundles the individual metrics. Recovery runs only when `recovery` is set.
pub fn evaluate(
    g: &GeneratorParams,
    f: &ClassifierParams,
    ds: &LabeledDataset,
    learned: Option<&ConfusionMatrix>,
    truth: Option<&ConfusionMatrix>,
    recovery: Option<(&RecoveryConfig, usize)>,
    n: usize,
    rng: &mut Rng,
) -> Result<EvalReport> {
    let gen_label_acc = generator_label_accuracy(g, f, n, rng)?;
    let m_error = match (learned, truth) {
        (Some(a), Some(b)) => Some(confusion_error(a, b)?),
        _ => None,
    };
    let recovery_acc = match recovery {
        Some((cfg, count)) => Some(recovery_accuracy(g, ds, cfg, count, rng)?),
        None => None,
    };
    let per_class_mean_err = per_class_mean_error(g, ds, n.div_ceil(g.spec.m), rng)?;
    Ok(EvalReport { gen_label_acc, recovery_acc, m_error, per_class_mean_err })
}
