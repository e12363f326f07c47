use invflow_core::data::{denormalize, image_grid, load_checkpoint, write_pnm};
use invflow_core::report::{time_repeated, Metric, RunReport, MIN_REPEATS, MIN_WARMUP};

use crate::{command_line, io_err, Cli, CliError, SampleArgs};

pub fn run(cli: &Cli, args: &SampleArgs) -> Result<(), CliError> {
    if args.n == 0 {
        return Err(CliError::Usage("--n must be >= 1".into()));
    }
    if !(args.temperature >= 0.0 && args.temperature.is_finite()) {
        return Err(CliError::Usage("--temperature must be finite and >= 0".into()));
    }
    let exec = cli.single_exec()?;
    let model = load_checkpoint(&args.checkpoint)?.model;
    let seed = cli.seed.unwrap_or(model.config().seed);
    cli.create_out()?;

    let timing = time_repeated(MIN_WARMUP, MIN_REPEATS, || model.sample(args.n, args.temperature, seed, &exec))?;
    let samples = model.sample(args.n, args.temperature, seed, &exec)?;
    let images: Vec<_> = samples.iter().map(denormalize).collect();
    let cols = (args.n as f64).sqrt().ceil() as usize;
    let grid = image_grid(&images, cols)?;
    let ext = if grid.channels == 1 { "pgm" } else { "ppm" };
    let image_path = cli.out.join(format!("samples.{ext}"));
    write_pnm(&grid, &image_path)?;

    let mut report = RunReport::new(
        command_line(),
        serde_json::json!({
            "checkpoint": args.checkpoint,
            "n": args.n,
            "temperature": args.temperature,
            "seed": seed,
            "model": model.config(),
        }),
        exec.threads(),
    );
    report.metrics.push(Metric::timing("sampling_ms", &timing));
    report.finish();
    let report_path = cli.out.join("report.json");
    report.write_json(&report_path).map_err(|e| io_err(&report_path, e))?;
    println!(
        "{} samples -> {}; sampling {:.3} ± {:.3} ms",
        args.n,
        image_path.display(),
        timing.mean_ms,
        timing.sd_ms
    );
    Ok(())
}
