use std::fmt::Write as _;

use invflow_core::flow::{FlowConfig, FlowModel};
use invflow_core::invconv::{inv_conv_solve_with, MaskedKernel};
use invflow_core::oracle::{build_operator_matrix, gaussian_elimination_solve};
use invflow_core::report::{time_repeated, Metric, RunReport, Series, Timing, MIN_WARMUP};
use invflow_core::{Exec, ImageTensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::load_config;
use crate::{alloc, command_line, io_err, BenchArgs, Cli, CliError};

pub const CSV_HEADER: &str = "input_size,kernel,batch,threads,sampling_ms_mean,sampling_ms_sd,forward_ms_mean,forward_ms_sd,peak_mem_bytes,wavefront_ms_mean,naive_ge_ms_mean,status";

#[derive(Debug, Clone)]
struct Row {
    size: usize,
    kernel: usize,
    batch: usize,
    threads: usize,
    sampling: Option<Timing>,
    forward: Option<Timing>,
    peak_mem: Option<usize>,
    wavefront: Option<Timing>,
    naive: Option<Timing>,
    status: String,
}

impl Row {
    fn csv(&self) -> String {
        let t = |v: &Option<Timing>, sd: bool| {
            v.as_ref()
                .map(|t| format!("{:.4}", if sd { t.sd_ms } else { t.mean_ms }))
                .unwrap_or_default()
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.size,
            self.kernel,
            self.batch,
            self.threads,
            t(&self.sampling, false),
            t(&self.sampling, true),
            t(&self.forward, false),
            t(&self.forward, true),
            self.peak_mem.map(|v| v.to_string()).unwrap_or_default(),
            t(&self.wavefront, false),
            t(&self.naive, false),
            self.status
        )
    }

    fn key(&self) -> String {
        format!("size={},kernel={},batch={},threads={}", self.size, self.kernel, self.batch, self.threads)
    }
}

/// Rough working set of one density pass: every layer input is retained.
fn estimated_bytes(model: &FlowModel, batch: usize) -> usize {
    let dims = model.dims();
    (model.layer_count() + 2) * dims * batch * std::mem::size_of::<f64>() * 2
}

fn bench_row(
    base: &FlowConfig,
    size: usize,
    kernel: usize,
    batch: usize,
    threads: usize,
    args: &BenchArgs,
    seed: u64,
) -> Result<Row, CliError> {
    let mut row = Row {
        size,
        kernel,
        batch,
        threads,
        sampling: None,
        forward: None,
        peak_mem: None,
        wavefront: None,
        naive: None,
        status: "ok".into(),
    };
    let mut cfg = base.clone();
    cfg.input_shape = [base.input_shape[0], size, size];
    cfg.kernel_size = kernel;
    cfg.seed = seed;
    if let Err(e) = cfg.validate() {
        row.status = format!("skipped_invalid_config: {}", e.to_string().replace(',', ";"));
        return Ok(row);
    }
    let exec = Exec::with_threads(threads)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = FlowModel::new(&cfg, &mut rng)?;
    if estimated_bytes(&model, batch) > args.mem_limit_mb << 20 {
        row.status = "skipped_memory_guard".into();
        return Ok(row);
    }
    let c = cfg.input_shape[0];
    let xs: Vec<ImageTensor> = (0..batch)
        .map(|_| {
            let mut x = ImageTensor::random_normal(c, size, size, &mut rng);
            x.scale(0.25);
            x
        })
        .collect();

    let base_mem = alloc::reset_peak();
    row.sampling = Some(time_repeated(MIN_WARMUP, args.repeats, || model.sample(batch, 1.0, seed, &exec))?);
    row.forward = Some(time_repeated(MIN_WARMUP, args.repeats, || model.log_prob_batch(&xs, 8.0, &exec))?);
    row.peak_mem = Some(alloc::peak_bytes().saturating_sub(base_mem));

    // a single masked-convolution inverse at the model's input resolution
    let w = MaskedKernel::random_stable(c, kernel, 0.9, &mut rng);
    let y = ImageTensor::random_normal(c, size, size, &mut rng);
    row.wavefront = Some(time_repeated(MIN_WARMUP, args.repeats, || inv_conv_solve_with(&y, &w, &exec))?);
    let n = c * size * size;
    if n <= args.naive_limit {
        let m = build_operator_matrix(&w, size, size)?;
        let yv = y.to_raster();
        row.naive = Some(time_repeated(MIN_WARMUP, args.repeats, || gaussian_elimination_solve(&m, &yv))?);
    }
    Ok(row)
}

pub fn run(cli: &Cli, args: &BenchArgs) -> Result<(), CliError> {
    if args.sizes.is_empty() || args.kernels.is_empty() || args.batches.is_empty() {
        return Err(CliError::Usage("--sizes, --kernels and --batches must be non-empty".into()));
    }
    if args.sizes.iter().chain(&args.kernels).chain(&args.batches).chain(&cli.threads).any(|&v| v == 0) {
        return Err(CliError::Usage("sizes, kernels, batches and threads must be >= 1".into()));
    }
    let base = match &cli.config {
        Some(path) => load_config(path)?.model,
        None => {
            let mut c = FlowConfig::new(2, 2, [1, 16, 16]);
            c.hidden_width = 8;
            c
        }
    };
    let seed = cli.seed.unwrap_or(base.seed);
    cli.create_out()?;

    let mut rows = Vec::new();
    for &size in &args.sizes {
        for &kernel in &args.kernels {
            for &batch in &args.batches {
                for &threads in &cli.threads {
                    let row = bench_row(&base, size, kernel, batch, threads, args, seed)?;
                    eprintln!("{}", row.csv());
                    rows.push(row);
                }
            }
        }
    }

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        writeln!(csv, "{}", r.csv()).expect("string write");
    }
    let csv_path = cli.out.join("bench.csv");
    std::fs::write(&csv_path, &csv).map_err(|e| io_err(&csv_path, e))?;

    let mut report = RunReport::new(
        command_line(),
        serde_json::json!({
            "model": base,
            "sizes": args.sizes,
            "kernels": args.kernels,
            "batches": args.batches,
            "threads": cli.threads,
            "repeats": args.repeats,
            "seed": seed,
        }),
        cli.threads.iter().copied().max().unwrap_or(1),
    );
    for r in &rows {
        for (what, t) in [
            ("sampling_ms", &r.sampling),
            ("forward_ms", &r.forward),
            ("wavefront_ms", &r.wavefront),
            ("naive_ge_ms", &r.naive),
        ] {
            if let Some(t) = t {
                report.metrics.push(Metric::timing(format!("{what}[{}]", r.key()), t));
            }
        }
        if let Some(p) = r.peak_mem {
            report.metrics.push(Metric::scalar(format!("peak_mem_bytes[{}]", r.key()), p as f64, "bytes"));
        }
        // speedup relative to the single-thread row of the same shape
        if r.threads != 1 {
            let single = rows.iter().find(|s| {
                s.threads == 1 && (s.size, s.kernel, s.batch) == (r.size, r.kernel, r.batch)
            });
            for (what, a, b) in [
                ("forward_speedup", single.and_then(|s| s.forward.as_ref()), r.forward.as_ref()),
                ("sampling_speedup", single.and_then(|s| s.sampling.as_ref()), r.sampling.as_ref()),
            ] {
                if let (Some(a), Some(b)) = (a, b) {
                    report.metrics.push(Metric::scalar(format!("{what}[{}]", r.key()), a.mean_ms / b.mean_ms, "x"));
                }
            }
        }
    }
    for &kernel in &args.kernels {
        for &batch in &args.batches {
            for &threads in &cli.threads {
                let pick = |f: fn(&Row) -> &Option<Timing>| -> Vec<(f64, f64)> {
                    rows.iter()
                        .filter(|r| (r.kernel, r.batch, r.threads) == (kernel, batch, threads))
                        .filter_map(|r| f(r).as_ref().map(|t| (r.size as f64, t.mean_ms)))
                        .collect()
                };
                let tag = format!("kernel={kernel},batch={batch},threads={threads}");
                report.series.push(Series {
                    name: format!("forward_ms_vs_size[{tag}]"),
                    points: pick(|r| &r.forward),
                });
                report.series.push(Series {
                    name: format!("sampling_ms_vs_size[{tag}]"),
                    points: pick(|r| &r.sampling),
                });
            }
        }
    }
    report.finish();
    let report_path = cli.out.join("report.json");
    report.write_json(&report_path).map_err(|e| io_err(&report_path, e))?;
    print!("{csv}");
    Ok(())
}
