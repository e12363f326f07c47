//! JSON run configuration for `train` and `bench`.
//!
//! ```json
//! {
//!   "model": { "steps_per_block": 2, "blocks": 2, "kernel_size": 3,
//!              "input_shape": [1, 28, 28], "hidden_width": 16,
//!              "learning_rate": 0.001, "batch_size": 16, "seed": 0 },
//!   "data":  { "source": "synthetic", "kind": "gaussian-blobs", "count": 1000, "seed": 0 },
//!   "train": { "epochs": 1, "steps": 500, "log_every": 10,
//!              "checkpoint_every": 100, "eval_size": 256 }
//! }
//! ```
//!
//! `data.source` may instead be `"mnist"` with `images`, optional `labels`
//! and optional `limit`. Only `model` is required.

use std::path::{Path, PathBuf};

use invflow_core::data::SynthKind;
use invflow_core::flow::{FlowConfig, DEFAULT_LEARNING_RATE};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

const MODEL_KEYS: &[&str] = &[
    "steps_per_block",
    "blocks",
    "kernel_size",
    "input_shape",
    "hidden_width",
    "learning_rate",
    "batch_size",
    "seed",
];
const SYNTH_KEYS: &[&str] = &["source", "kind", "count", "seed"];
const MNIST_KEYS: &[&str] = &["source", "images", "labels", "limit"];
const TRAIN_KEYS: &[&str] = &["epochs", "steps", "log_every", "checkpoint_every", "eval_size"];

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataConfig {
    Synthetic { kind: String, count: usize, seed: Option<u64> },
    Mnist { images: PathBuf, labels: Option<PathBuf>, limit: Option<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSettings {
    pub epochs: u64,
    /// Overrides `epochs` when set.
    pub steps: Option<u64>,
    pub log_every: u64,
    pub checkpoint_every: Option<u64>,
    pub eval_size: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 1,
            steps: None,
            log_every: 10,
            checkpoint_every: None,
            eval_size: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: FlowConfig,
    pub data: DataConfig,
    pub train: TrainSettings,
}

struct Fields<'a> {
    section: &'a str,
    obj: &'a Map<String, Value>,
    problems: &'a mut Vec<String>,
}

impl Fields<'_> {
    fn unknown(&mut self, allowed: &[&str]) {
        for key in self.obj.keys() {
            if !allowed.contains(&key.as_str()) {
                self.problems.push(format!("{}.{key}: unknown key", self.section));
            }
        }
    }

    fn opt<T: DeserializeOwned>(&mut self, key: &str) -> Option<T> {
        let v = self.obj.get(key)?;
        match serde_json::from_value(v.clone()) {
            Ok(t) => Some(t),
            Err(e) => {
                self.problems.push(format!("{}.{key}: {e}", self.section));
                None
            }
        }
    }

    fn req<T: DeserializeOwned>(&mut self, key: &str) -> Option<T> {
        if !self.obj.contains_key(key) {
            self.problems.push(format!("{}.{key}: missing", self.section));
            return None;
        }
        self.opt(key)
    }
}

fn section<'a>(root: &'a Map<String, Value>, name: &str, problems: &mut Vec<String>) -> Option<&'a Map<String, Value>> {
    match root.get(name)? {
        Value::Object(m) => Some(m),
        _ => {
            problems.push(format!("{name}: must be an object"));
            None
        }
    }
}

fn parse_model(obj: &Map<String, Value>, problems: &mut Vec<String>) -> Option<FlowConfig> {
    let mut f = Fields {
        section: "model",
        obj,
        problems,
    };
    f.unknown(MODEL_KEYS);
    let steps = f.req("steps_per_block");
    let blocks = f.req("blocks");
    let kernel = f.opt("kernel_size");
    let shape = f.req("input_shape");
    let hidden = f.opt("hidden_width");
    let lr = f.opt("learning_rate");
    let batch = f.opt("batch_size");
    let seed = f.opt("seed");
    let mut cfg = FlowConfig::new(steps?, blocks?, shape?);
    if let Some(k) = kernel {
        cfg.kernel_size = k;
    }
    if let Some(h) = hidden {
        cfg.hidden_width = h;
    }
    cfg.learning_rate = lr.unwrap_or(DEFAULT_LEARNING_RATE);
    if let Some(b) = batch {
        cfg.batch_size = b;
    }
    cfg.seed = seed.unwrap_or(0);
    Some(cfg)
}

fn parse_data(obj: Option<&Map<String, Value>>, problems: &mut Vec<String>) -> Option<DataConfig> {
    let Some(obj) = obj else {
        return Some(DataConfig::Synthetic {
            kind: SynthKind::GaussianBlobs.name().into(),
            count: 1000,
            seed: None,
        });
    };
    let mut f = Fields {
        section: "data",
        obj,
        problems,
    };
    let source: String = f.opt("source").unwrap_or_else(|| "synthetic".into());
    match source.as_str() {
        "synthetic" => {
            f.unknown(SYNTH_KEYS);
            let kind: String = f.opt("kind").unwrap_or_else(|| SynthKind::GaussianBlobs.name().into());
            if kind.parse::<SynthKind>().is_err() {
                f.problems.push(format!(
                    "data.kind: unknown synthetic dataset '{kind}' (gaussian-blobs, checkerboard, constant)"
                ));
            }
            let count = f.opt("count").unwrap_or(1000);
            if count == 0 {
                f.problems.push("data.count: must be >= 1".into());
            }
            let seed = f.opt("seed");
            Some(DataConfig::Synthetic { kind, count, seed })
        }
        "mnist" => {
            f.unknown(MNIST_KEYS);
            let images = f.req("images");
            let labels = f.opt("labels");
            let limit = f.opt("limit");
            Some(DataConfig::Mnist {
                images: images?,
                labels,
                limit,
            })
        }
        other => {
            f.problems.push(format!("data.source: unknown source '{other}' (synthetic, mnist)"));
            None
        }
    }
}

fn parse_train(obj: Option<&Map<String, Value>>, problems: &mut Vec<String>) -> TrainSettings {
    let mut out = TrainSettings::default();
    let Some(obj) = obj else {
        return out;
    };
    let mut f = Fields {
        section: "train",
        obj,
        problems,
    };
    f.unknown(TRAIN_KEYS);
    if let Some(v) = f.opt("epochs") {
        out.epochs = v;
    }
    out.steps = f.opt("steps");
    if let Some(v) = f.opt("log_every") {
        out.log_every = v;
    }
    out.checkpoint_every = f.opt("checkpoint_every");
    if let Some(v) = f.opt("eval_size") {
        out.eval_size = v;
    }
    if out.epochs == 0 && out.steps.is_none() {
        f.problems.push("train.epochs: must be >= 1".into());
    }
    if out.steps == Some(0) {
        f.problems.push("train.steps: must be >= 1".into());
    }
    if out.log_every == 0 {
        f.problems.push("train.log_every: must be >= 1".into());
    }
    if out.checkpoint_every == Some(0) {
        f.problems.push("train.checkpoint_every: must be >= 1".into());
    }
    if out.eval_size == 0 {
        f.problems.push("train.eval_size: must be >= 1".into());
    }
    out
}

/// Parses and validates a whole configuration, reporting every problem.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let root: Value = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config is not valid JSON: {e}")))?;
    let Value::Object(root) = root else {
        return Err(CliError::Usage("config must be a JSON object".into()));
    };
    let mut problems = Vec::new();
    for key in root.keys() {
        if !["model", "data", "train"].contains(&key.as_str()) {
            problems.push(format!("{key}: unknown key"));
        }
    }
    let model = match section(&root, "model", &mut problems) {
        Some(m) => parse_model(m, &mut problems),
        None => {
            if !root.contains_key("model") {
                problems.push("model: missing".into());
            }
            None
        }
    };
    let data_obj = section(&root, "data", &mut problems);
    let data = parse_data(data_obj, &mut problems);
    let train_obj = section(&root, "train", &mut problems);
    let train = parse_train(train_obj, &mut problems);
    if let Some(m) = &model {
        problems.extend(m.problems().into_iter().map(|p| format!("model.{p}")));
    }
    match (model, data) {
        (Some(model), Some(data)) if problems.is_empty() => Ok(RunConfig { model, data, train }),
        _ => Err(CliError::Config(problems)),
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"model": {"steps_per_block": 1, "blocks": 1, "input_shape": [1, 8, 8]}}"#;

    #[test]
    fn defaults_fill_in() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.model.learning_rate, 1e-3);
        assert_eq!(c.model.kernel_size, 3);
        assert_eq!(c.train, TrainSettings::default());
        assert!(matches!(c.data, DataConfig::Synthetic { count: 1000, .. }));
    }

    #[test]
    fn every_problem_is_listed() {
        let text = r#"{
            "model": {"steps_per_block": 0, "blocks": "two", "input_shape": [1, 8, 8], "colour": 1},
            "data": {"source": "synthetic", "kind": "noise", "count": 0, "extra": true},
            "train": {"log_every": 0, "speed": 2},
            "misc": {}
        }"#;
        let Err(CliError::Config(p)) = parse_config(text) else {
            panic!("expected config error");
        };
        for needle in [
            "model.colour",
            "model.blocks",
            "data.kind",
            "data.count",
            "data.extra",
            "train.log_every",
            "train.speed",
            "misc",
        ] {
            assert!(p.iter().any(|s| s.starts_with(needle)), "{needle} missing from {p:?}");
        }
    }

    #[test]
    fn model_invariants_are_reported() {
        let text = r#"{"model": {"steps_per_block": 0, "blocks": 2, "input_shape": [1, 6, 8], "learning_rate": -1}}"#;
        let Err(CliError::Config(p)) = parse_config(text) else {
            panic!("expected config error");
        };
        assert_eq!(p.len(), 3, "{p:?}");
    }

    #[test]
    fn mnist_source_needs_images() {
        let text = r#"{"model": {"steps_per_block": 1, "blocks": 1, "input_shape": [1, 8, 8]}, "data": {"source": "mnist"}}"#;
        let Err(CliError::Config(p)) = parse_config(text) else {
            panic!("expected config error");
        };
        assert_eq!(p, vec!["data.images: missing".to_string()]);
    }
}
