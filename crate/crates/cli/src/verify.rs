use invflow_core::report::RunReport;
use invflow_core::verify::{run_all, VerifyOptions};

use crate::{command_line, io_err, Cli, CliError, VerifyArgs};

pub fn run(cli: &Cli, args: &VerifyArgs) -> Result<(), CliError> {
    let exec = cli.single_exec()?;
    let max_size = args.sizes.iter().copied().max().unwrap_or(16);
    if max_size == 0 || args.n == 0 {
        return Err(CliError::Usage("--sizes and --n must be >= 1".into()));
    }
    let opts = VerifyOptions {
        max_size,
        instances: args.n,
        seed: cli.seed.unwrap_or(0),
        inject_mask_violation: args.inject_mask_violation,
    };
    cli.create_out()?;
    let mut report = RunReport::new(
        command_line(),
        serde_json::to_value(&opts).expect("options serialize"),
        exec.threads(),
    );
    report.properties = run_all(&opts, &exec);
    report.finish();
    for p in &report.properties {
        println!(
            "{} {:<24} max_error {:.3e} (tol {:.1e}) {}",
            if p.passed { "PASS" } else { "FAIL" },
            p.name,
            p.max_error,
            p.tolerance,
            p.detail
        );
    }
    let path = cli.out.join("report.json");
    report.write_json(&path).map_err(|e| io_err(&path, e))?;
    let failed: Vec<String> = report.properties.iter().filter(|p| !p.passed).map(|p| p.name.clone()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(failed))
    }
}
