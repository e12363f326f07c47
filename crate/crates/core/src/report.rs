//! Timing statistics and the JSON run report shared by every command.

use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Repeats after warm-up that every reported timing uses at minimum.
pub const MIN_REPEATS: usize = 5;
pub const MIN_WARMUP: usize = 1;

/// Sample mean and (n − 1) standard deviation.
pub fn mean_sd(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub warmup: usize,
    pub samples_ms: Vec<f64>,
    pub mean_ms: f64,
    pub sd_ms: f64,
}

/// Runs `f` `warmup` times untimed, then `repeats` timed times. Fewer than
/// [`MIN_WARMUP`] / [`MIN_REPEATS`] are raised to the minimum.
pub fn time_repeated<T, F>(warmup: usize, repeats: usize, mut f: F) -> Result<Timing>
where
    F: FnMut() -> Result<T>,
{
    let warmup = warmup.max(MIN_WARMUP);
    for _ in 0..warmup {
        std::hint::black_box(f()?);
    }
    let mut samples_ms = Vec::with_capacity(repeats.max(MIN_REPEATS));
    for _ in 0..repeats.max(MIN_REPEATS) {
        let t = Instant::now();
        std::hint::black_box(f()?);
        samples_ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let (mean_ms, sd_ms) = mean_sd(&samples_ms);
    Ok(Timing {
        warmup,
        samples_ms,
        mean_ms,
        sd_ms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub unit: String,
    pub repeats: usize,
    pub mean: f64,
    pub sd: f64,
}

impl Metric {
    pub fn scalar(name: impl Into<String>, value: f64, unit: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            value,
            unit: unit.into(),
            repeats: 1,
            mean: value,
            sd: 0.0,
        }
    }

    pub fn timing(name: impl Into<String>, t: &Timing) -> Self {
        Self {
            name: name.into(),
            value: t.mean_ms,
            unit: "ms".into(),
            repeats: t.samples_ms.len(),
            mean: t.mean_ms,
            sd: t.sd_ms,
        }
    }
}

/// Outcome of one checked property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    pub max_error: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl PropertyResult {
    /// Passes when `max_error` is finite and within `tolerance`.
    pub fn check(name: impl Into<String>, max_error: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: max_error.is_finite() && max_error <= tolerance,
            max_error,
            tolerance,
            detail: detail.into(),
        }
    }

    pub fn failed(name: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: false,
            max_error: f64::INFINITY,
            tolerance: 0.0,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    /// `(x, y)` pairs, e.g. optimizer step and BPD.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub threads: usize,
    pub os: String,
    pub arch: String,
}

impl Environment {
    pub fn current(threads: usize) -> Self {
        Self {
            threads,
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
        }
    }
}

pub fn unix_millis() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: Vec<String>,
    pub config: serde_json::Value,
    pub metrics: Vec<Metric>,
    #[serde(default)]
    pub properties: Vec<PropertyResult>,
    #[serde(default)]
    pub series: Vec<Series>,
    pub environment: Environment,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

impl RunReport {
    pub fn new(command: Vec<String>, config: serde_json::Value, threads: usize) -> Self {
        let now = unix_millis();
        Self {
            command,
            config,
            metrics: Vec::new(),
            properties: Vec::new(),
            series: Vec::new(),
            environment: Environment::current(threads),
            started_unix_ms: now,
            finished_unix_ms: now,
        }
    }

    pub fn finish(&mut self) {
        self.finished_unix_ms = unix_millis();
    }

    pub fn all_passed(&self) -> bool {
        self.properties.iter().all(|p| p.passed)
    }

    pub fn to_json(&self) -> String {
        // non-finite numbers have no JSON form; they are written as null
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_and_protocol_minimums() {
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
        let mut calls = 0;
        let t = time_repeated(0, 2, || -> Result<()> {
            calls += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(t.samples_ms.len(), MIN_REPEATS);
        assert_eq!(calls, MIN_REPEATS + MIN_WARMUP);
    }

    #[test]
    fn report_round_trips_through_json() {
        let mut r = RunReport::new(vec!["verify".into()], serde_json::json!({"a": 1}), 2);
        r.metrics.push(Metric::scalar("x", 1.5, "bits"));
        r.properties.push(PropertyResult::check("p", 1e-12, 1e-8, ""));
        r.finish();
        let back: RunReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(back.all_passed());
    }
}
