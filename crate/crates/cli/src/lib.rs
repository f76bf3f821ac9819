//! Command-line harness: theory verification, training, label recovery and
//! reporting.

pub mod manifest;
pub mod report;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use ncgl::data::LabeledDataset;
use ncgl::diffcomp::{read_checkpoint, Tensor};
use ncgl::error::Error;
use ncgl::experiment::run;
use ncgl::models::GeneratorParams;
use ncgl::recovery::{recover_labels, RecoveryConfig};
use ncgl::theory::{
    build_counterexample, eigen_condition_holds, empirical_convergence, random_instance, run_thm1_suite,
    run_thm2_suite, run_tightness_suite,
};
use ncgl::{FiniteJoint, Result};

use crate::manifest::{config_hash, load_config, now, read_manifest, RunManifest};
use crate::report::{load_point, render_svg, summarize, write_summary, Metric};

macro_rules! usage {
    ($($arg:tt)*) => { Error::InvalidArgument(format!($($arg)*)) };
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ncgl", version, about = "Conditional GANs under label noise")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the randomized theory suites and print a pass/fail table.
    Verify {
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train one variant from a JSON config (or a previous run's manifest).
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to runs/<variant>-seed<seed>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recover clean labels of the samples in a CSV with a trained generator.
    Recover {
        /// Manifest written by `train`.
        #[arg(long)]
        manifest: PathBuf,
        /// CSV of samples: an optional `sample_id` column, then coordinates.
        #[arg(long)]
        input: PathBuf,
        /// Recovery settings (restarts, steps, lr) as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "recovered.csv")]
        out: PathBuf,
    },
    /// Aggregate run logs into summary.csv and report.svg.
    Report {
        #[arg(long, default_value = "runs/*/metrics.csv")]
        glob: String,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Metric::GenLabelAcc)]
        metric: Metric,
    },
}

/// Exit status for an error: bad input is a usage error, the rest are
/// experiment failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::Format(_) | Error::Json(_) | Error::Csv(_) => EXIT_USAGE,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Verify { instances, seed } => verify(instances, seed, out),
        Command::Train { config, seed, out: dir } => train(&config, seed, dir, out).map(|_| EXIT_OK),
        Command::Recover { manifest, input, config, seed, out: path } => {
            recover(&manifest, &input, config.as_deref(), seed, &path, out).map(|_| EXIT_OK)
        }
        Command::Report { glob, out: dir, metric } => report(&glob, &dir, metric, out).map(|_| EXIT_OK),
    }
}

struct Row {
    name: &'static str,
    pass: bool,
    detail: String,
}

pub fn verify(instances: usize, seed: u64, out: &mut dyn Write) -> Result<i32> {
    if instances == 0 {
        return Err(usage!("--instances must be at least 1"));
    }
    let mut rows = Vec::new();
    let s = run_thm1_suite(instances, seed)?;
    rows.push(Row {
        name: "TV/JS sandwich",
        pass: s.passed(),
        detail: format!("{} instances, {} failures, worst slack {:.2e}", s.instances, s.failures, s.worst_slack),
    });
    let s = run_thm2_suite(instances, seed)?;
    rows.push(Row {
        name: "bounded-class sandwich",
        pass: s.passed(),
        detail: format!(
            "{} instances, {} failures, worst slack {:.2e}, identity gap {:.2e}",
            s.instances, s.failures, s.worst_slack, s.worst_identity_gap
        ),
    });
    let t = run_tightness_suite(50, seed)?;
    let worst = t.iter().map(|r| r.lower_gap.max(r.upper_gap)).fold(0.0, f64::max);
    rows.push(Row { name: "tightness witnesses", pass: worst <= 1e-9, detail: format!("50 channels, worst gap {worst:.2e}") });

    let (mut valid, mut growing, mut index) = (0usize, 0usize, 0u64);
    let cap = instances.min(100);
    while valid < cap {
        let inst = random_instance(seed, index);
        index += 1;
        if !eigen_condition_holds(&inst.p, &inst.q, &inst.c)? {
            continue;
        }
        valid += 1;
        let gaps = [0.1, 0.01, 0.001]
            .iter()
            .map(|&e| build_counterexample(&inst.p, &inst.q, &inst.c, e))
            .collect::<Result<Vec<_>>>()?;
        if gaps.windows(2).all(|w| w[1].gap_f3 > w[0].gap_f3 && w[1].gap_f4 > w[0].gap_f4) {
            growing += 1;
        }
    }
    rows.push(Row {
        name: "unconstrained-class gaps",
        pass: growing == valid,
        detail: format!("gaps grow as eps shrinks on {growing}/{valid} instances"),
    });

    let mut rng = ncgl::seed::substream(seed, "verify-convergence", 0);
    let p = FiniteJoint::random(4, 3, &mut rng);
    let q = FiniteJoint::random(4, 3, &mut rng);
    let conv = empirical_convergence(&p, &q, &[100, 1_000, 10_000, 100_000], 50, seed)?;
    let (first, last) = (conv[0].mean_abs_dev, conv[conv.len() - 1].mean_abs_dev);
    rows.push(Row {
        name: "empirical convergence",
        pass: last <= first / 10.0,
        detail: format!("mean deviation {first:.4} at n=1e2, {last:.4} at n=1e5"),
    });

    for r in &rows {
        writeln!(out, "{:<26} {}  {}", r.name, if r.pass { "PASS" } else { "FAIL" }, r.detail)?;
    }
    Ok(if rows.iter().all(|r| r.pass) { EXIT_OK } else { EXIT_FAILURE })
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

pub fn train(config: &Path, seed: Option<u64>, dir: Option<PathBuf>, out: &mut dyn Write) -> Result<RunManifest> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.training.seed = s;
    }
    let dir = dir.unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{}", cfg.training.variant, cfg.training.seed)));
    fs::create_dir_all(&dir)?;
    let started = now();
    let outcome = run(&cfg, Some(&dir))?;
    let c = &outcome.true_channel;
    let label_accuracy = (0..c.m()).map(|i| c.get(i, i)).sum::<f64>() / c.m() as f64;
    let manifest = RunManifest {
        config_hash: config_hash(&cfg)?,
        seed: cfg.training.seed,
        started,
        finished: now(),
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        metric_log: dir.join("metrics.csv"),
        checkpoints: outcome.artifacts.checkpoints.clone(),
        generator: outcome.artifacts.generator.spec.clone(),
        label_accuracy,
        gen_label_acc: outcome.gen_label_acc,
        m_error: outcome.m_error,
        recovery_acc: outcome.recovery_acc,
        config: cfg,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    writeln!(
        out,
        "{} seed {}: generator label accuracy {:.4}{}; wrote {}",
        manifest.config.training.variant,
        manifest.seed,
        manifest.gen_label_acc,
        manifest.m_error.map(|e| format!(", channel error {e:.4}")).unwrap_or_default(),
        dir.display()
    )?;
    Ok(manifest)
}

/// Samples from a CSV with a header row. A first column named `sample_id`
/// gives the ids; otherwise ids are row numbers.
pub fn read_samples(path: &Path) -> Result<(Vec<String>, Tensor)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let has_id = rdr.headers()?.get(0).is_some_and(|h| h.trim() == "sample_id");
    let (mut ids, mut data, mut width) = (Vec::new(), Vec::new(), None);
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut fields = rec.iter();
        ids.push(if has_id { fields.next().unwrap_or_default().trim().to_string() } else { i.to_string() });
        let row = fields
            .map(|f| f.trim().parse::<f64>().map_err(|e| Error::Format(format!("row {}: {f:?}: {e}", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => return Err(Error::Format(format!("row {} has {} values, expected {w}", i + 1, row.len()))),
            _ => {}
        }
        data.extend(row);
    }
    let w = width.ok_or_else(|| usage!("{} holds no samples", path.display()))?;
    Ok((ids, Tensor::matrix(data.len() / w.max(1), w, data)?))
}

pub fn load_generator(manifest: &RunManifest) -> Result<GeneratorParams> {
    let ckpt = manifest.checkpoints.last().ok_or_else(|| usage!("manifest lists no checkpoint"))?;
    let store = read_checkpoint(&mut std::io::BufReader::new(fs::File::open(ckpt)?))?;
    GeneratorParams::from_store(manifest.generator.clone(), &store)
}

pub fn recover(
    manifest: &Path,
    input: &Path,
    config: Option<&Path>,
    seed: u64,
    path: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    let man = read_manifest(manifest)?;
    let cfg: RecoveryConfig = match config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => RecoveryConfig::default(),
    };
    let g = load_generator(&man)?;
    let (ids, xs) = read_samples(input)?;
    let found = recover_labels(&xs, &g, &cfg, seed)?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sample_id".to_string(), "recovered_label".to_string()];
    header.extend((0..g.spec.m).map(|y| format!("residual_{y}")));
    w.write_record(&header)?;
    for (id, r) in ids.iter().zip(&found) {
        let mut rec = vec![id.clone(), r.label.to_string()];
        rec.extend(r.residuals.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    writeln!(out, "recovered {} samples into {}", found.len(), path.display())?;
    Ok(())
}

pub fn report(pattern: &str, dir: &Path, metric: Metric, out: &mut dyn Write) -> Result<()> {
    let paths = glob::glob(pattern).map_err(|e| usage!("bad glob {pattern:?}: {e}"))?;
    let mut points = Vec::new();
    for p in paths {
        let p = p.map_err(|e| Error::Io(e.into()))?;
        match load_point(&p, metric)? {
            Some(pt) => points.push(pt),
            None => writeln!(out, "skipping {} (no run manifest or metric)", p.display())?,
        }
    }
    if points.is_empty() {
        return Err(usage!("no run logs matched {pattern:?}"));
    }
    let rows = summarize(&points);
    fs::create_dir_all(dir)?;
    write_summary(&dir.join("summary.csv"), &rows)?;
    fs::write(dir.join("report.svg"), render_svg(&rows, metric))?;
    writeln!(out, "{} runs in {} groups; wrote summary.csv and report.svg to {}", points.len(), rows.len(), dir.display())?;
    Ok(())
}

/// Test/CLI helper: the rows of a dataset as a sample CSV.
pub fn write_samples(path: &Path, ds: &LabeledDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sample_id".to_string()];
    header.extend((0..ds.dim()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for (i, id) in ds.ids().iter().enumerate() {
        let mut rec = vec![id.to_string()];
        rec.extend(ds.x().row_slice(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
