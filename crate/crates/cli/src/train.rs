use std::time::Instant;

use invflow_core::data::{dequantize_batch, load_mnist_idx, save_checkpoint, synth_dataset, Dataset, SynthKind};
use invflow_core::flow::{AdamOutcome, FlowModel, Trainer};
use invflow_core::report::{Metric, RunReport, Series};
use invflow_core::{Exec, ImageTensor};

use crate::config::{load_config, DataConfig, RunConfig};
use crate::{command_line, io_err, Cli, CliError};

/// Seed mixed into the evaluation-batch dequantization so it never collides
/// with the training stream.
const EVAL_NOISE_SEED: u64 = 0x5eed_e7a1;

fn load_data(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let data = match &cfg.data {
        DataConfig::Synthetic { kind, count, seed } => {
            let kind: SynthKind = kind.parse()?;
            synth_dataset(kind, *count, cfg.model.input_shape, seed.unwrap_or(cfg.model.seed))?
        }
        DataConfig::Mnist { images, labels, limit } => {
            let d = load_mnist_idx(images, labels.as_deref())?;
            match limit {
                Some(n) => d.take(*n)?,
                None => d,
            }
        }
    };
    if data.shape() != cfg.model.input_shape {
        return Err(CliError::Config(vec![format!(
            "model.input_shape: {:?} does not match the dataset shape {:?}",
            cfg.model.input_shape,
            data.shape()
        )]));
    }
    Ok(data)
}

fn eval_bpd(model: &FlowModel, batch: &[ImageTensor], offset: f64, exec: &Exec) -> Result<f64, CliError> {
    Ok(model.log_prob_batch(batch, offset, exec)?.bpd)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("train needs --config <file>".into()))?;
    let mut cfg = load_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.model.seed = seed;
    }
    let exec = cli.single_exec()?;
    cli.create_out()?;
    let data = load_data(&cfg)?;

    let batches_per_epoch = data.len().div_ceil(cfg.model.batch_size) as u64;
    let total = cfg.train.steps.unwrap_or(cfg.train.epochs * batches_per_epoch);
    let eval_items: Vec<_> = data.images().iter().take(cfg.train.eval_size).collect();
    let (eval, offset) = dequantize_batch(&eval_items, cfg.model.seed ^ EVAL_NOISE_SEED);

    let mut report = RunReport::new(
        command_line(),
        serde_json::to_value(&cfg).expect("config serializes"),
        exec.threads(),
    );
    let identity = FlowModel::identity(&cfg.model)?;
    let identity_bpd = eval_bpd(&identity, &eval, offset, &exec)?;
    let mut trainer = Trainer::new(&cfg.model)?;
    let initial_bpd = eval_bpd(&trainer.model, &eval, offset, &exec)?;
    eprintln!(
        "{} images from {}, {total} steps; eval bpd {initial_bpd:.4} (identity {identity_bpd:.4})",
        data.len(),
        data.source()
    );

    let ckpt = cli.out.join("checkpoint.ivfl");
    let mut train_curve = Series {
        name: "train_bpd".into(),
        points: Vec::new(),
    };
    let mut eval_curve = Series {
        name: "eval_bpd".into(),
        points: vec![(0.0, initial_bpd)],
    };
    let mut skipped = 0u64;
    let started = Instant::now();
    for _ in 0..total {
        let stats = trainer.train_step(&data, &exec)?;
        if stats.outcome == AdamOutcome::SkippedNonFinite {
            skipped += 1;
        }
        train_curve.points.push((stats.step as f64, stats.bpd));
        if stats.step % cfg.train.log_every == 0 || stats.step == total {
            let bpd = eval_bpd(&trainer.model, &eval, offset, &exec)?;
            eval_curve.points.push((stats.step as f64, bpd));
            eprintln!("step {:>6}  train bpd {:.4}  eval bpd {bpd:.4}", stats.step, stats.bpd);
        }
        if cfg.train.checkpoint_every.is_some_and(|n| stats.step % n == 0) {
            save_checkpoint(&trainer, &ckpt)?;
        }
    }
    save_checkpoint(&trainer, &ckpt)?;

    let final_bpd = eval_curve.points.last().map_or(initial_bpd, |p| p.1);
    report.metrics.extend([
        Metric::scalar("identity_bpd", identity_bpd, "bits/dim"),
        Metric::scalar("initial_bpd", initial_bpd, "bits/dim"),
        Metric::scalar("final_bpd", final_bpd, "bits/dim"),
        Metric::scalar("steps", total as f64, "steps"),
        Metric::scalar("skipped_steps", skipped as f64, "steps"),
        Metric::scalar("train_seconds", started.elapsed().as_secs_f64(), "s"),
    ]);
    report.series.extend([train_curve, eval_curve]);
    report.finish();
    let report_path = cli.out.join("report.json");
    report.write_json(&report_path).map_err(|e| io_err(&report_path, e))?;
    println!("final bpd {final_bpd:.4} (initial {initial_bpd:.4}); checkpoint {}", ckpt.display());
    Ok(())
}
