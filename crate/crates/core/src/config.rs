//! Run configuration: every tunable of a pipeline run under a dotted key.
//!
//! Files are flat `section.key = value` lines; `#` starts a comment. Lists
//! are comma separated, `none` clears an optional value. Later assignments
//! (file first, then command-line overrides) win.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dsp::SpectrogramConfig;
use crate::error::{Error, Result};
use crate::eval::{AblationRun, Objective};
use crate::ingest::DEFAULT_APNEA_LABELS;
use crate::model::ResNetConfig;
use crate::synth::SynthConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// Directory holding the spectrogram caches; empty means the output directory.
    pub cache_dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Directory with `<record>.wav` files.
    pub dir: PathBuf,
    /// Annotation CSV, relative to `dir` unless absolute.
    pub annotations: PathBuf,
    /// Split CSV, relative to `dir` unless absolute.
    pub split: PathBuf,
    pub sample_rate_hz: f64,
    pub chunk_seconds: f64,
    pub apnea_labels: Vec<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: PathBuf::from("data"),
            annotations: PathBuf::from("annotations.csv"),
            split: PathBuf::from("split.csv"),
            sample_rate_hz: 125.0,
            chunk_seconds: 30.0,
            apnea_labels: DEFAULT_APNEA_LABELS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl DataConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }

    pub fn label_set(&self) -> BTreeSet<String> {
        self.apnea_labels.iter().cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Fixed decision threshold; when unset the sweep objective picks one.
    pub threshold: Option<f64>,
    pub objective: String,
    /// Used when `objective` has no feasible threshold.
    pub fallback_objective: String,
    /// Fixed threshold at which ablation rows are scored.
    pub ablation_threshold: f64,
    pub ablation_runs: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold: None,
            objective: "recall_floor:0.9".into(),
            fallback_objective: "max_f1".into(),
            ablation_threshold: 0.5,
            ablation_runs: AblationRun::ALL.iter().map(|r| r.name().to_string()).collect(),
        }
    }
}

impl EvalConfig {
    pub fn objective(&self) -> Result<Objective> {
        self.objective.parse()
    }

    pub fn fallback(&self) -> Result<Objective> {
        self.fallback_objective.parse()
    }

    pub fn runs(&self) -> Result<Vec<AblationRun>> {
        self.ablation_runs.iter().map(|s| s.parse()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub records: usize,
    #[serde(flatten)]
    pub record: SynthConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            records: 18,
            record: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataConfig,
    pub dsp: SpectrogramConfig,
    pub model: ResNetConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run: RunSection {
                seed: 0,
                cache_dir: String::new(),
            },
            data: DataConfig::default(),
            dsp: SpectrogramConfig::default(),
            model: ResNetConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            synth: SynthSection::default(),
        }
    }
}

/// Keys mirrored from elsewhere (`run.seed`, `model.*`) and not settable.
const DERIVED: [&str; 3] = ["train.seed", "train.model", "synth.seed"];

fn is_derived(key: &str) -> bool {
    DERIVED.iter().any(|d| key == *d || key.starts_with(&format!("{d}.")))
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        _ => out.push((prefix.to_string(), v.clone())),
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::Null => "none".into(),
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(render).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

fn parse_scalar(raw: &str, like: &Value) -> std::result::Result<Value, String> {
    let raw = raw.trim();
    if raw == "none" {
        return Ok(Value::Null);
    }
    match like {
        Value::Bool(_) => match raw {
            "true" => Ok(Value::Bool(true)),
            "false" => Ok(Value::Bool(false)),
            _ => Err(format!("expected true or false, got {raw:?}")),
        },
        Value::Number(_) => serde_json::from_str::<serde_json::Number>(raw)
            .map(Value::Number)
            .map_err(|_| format!("expected a number, got {raw:?}")),
        Value::String(_) => Ok(Value::String(raw.to_string())),
        Value::Null => Ok(serde_json::from_str::<serde_json::Number>(raw)
            .map(Value::Number)
            .unwrap_or_else(|_| Value::String(raw.to_string()))),
        _ => Err(format!("unsupported value {raw:?}")),
    }
}

fn parse_value(raw: &str, like: &Value) -> std::result::Result<Value, String> {
    match like {
        Value::Array(items) => {
            let elem = items.first().cloned().unwrap_or(Value::String(String::new()));
            let raw = raw.trim();
            if raw.is_empty() {
                return Ok(Value::Array(Vec::new()));
            }
            raw.split(',').map(|s| parse_scalar(s, &elem)).collect::<std::result::Result<_, _>>().map(Value::Array)
        }
        _ => parse_scalar(raw, like),
    }
}

fn lookup<'a>(root: &'a mut Value, key: &str) -> Option<&'a mut Value> {
    let mut cur = root;
    for part in key.split('.') {
        cur = cur.as_object_mut()?.get_mut(part)?;
    }
    Some(cur)
}

impl RunConfig {
    fn to_value(&self) -> Result<Value> {
        serde_json::to_value(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// All settable keys with their current values, sorted by key.
    pub fn entries(&self) -> Result<Vec<(String, String)>> {
        let mut flat = Vec::new();
        flatten("", &self.to_value()?, &mut flat);
        let mut out: Vec<(String, String)> = flat
            .into_iter()
            .filter(|(k, _)| !is_derived(k))
            .map(|(k, v)| (k, render(&v)))
            .collect();
        out.sort();
        Ok(out)
    }

    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        if is_derived(key) {
            return Err(Error::Config(format!("{key} is derived and cannot be set")));
        }
        let mut root = self.to_value()?;
        let slot = lookup(&mut root, key)
            .filter(|v| !v.is_object())
            .ok_or_else(|| Error::Config(format!("unknown configuration key {key:?}")))?;
        *slot = parse_value(raw, slot).map_err(|m| Error::Config(format!("{key}: {m}")))?;
        let updated: RunConfig =
            serde_json::from_value(root).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        *self = updated;
        Ok(())
    }

    /// Applies `key = value` lines.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected `key = value`", origin.display(), n + 1))
            })?;
            self.set(key.trim(), value).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}:{}: {m}", origin.display(), n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, path)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        self.set(k.trim(), v)
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        for (k, v) in self.entries()? {
            let _ = writeln!(out, "{k} = {v}");
        }
        Ok(out)
    }

    /// Training configuration with the shared seed and model filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.run.seed,
            model: self.model.clone(),
            ..self.train.clone()
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.run.seed,
            ..self.synth.record.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dsp.validate()?;
        self.train_config().validate()?;
        self.synth_config().validate()?;
        self.eval.objective()?;
        self.eval.fallback()?;
        self.eval.runs()?;
        if (self.dsp.sample_rate_hz - self.data.sample_rate_hz).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "data.sample_rate_hz {} differs from dsp.sample_rate_hz {}",
                self.data.sample_rate_hz, self.dsp.sample_rate_hz
            )));
        }
        if !(self.data.chunk_seconds > 0.0) {
            return Err(Error::Config("data.chunk_seconds must be positive".into()));
        }
        if let Some(t) = self.eval.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("eval.threshold {t} not in [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn cache_dir(&self, out: &Path) -> PathBuf {
        if self.run.cache_dir.is_empty() {
            out.to_path_buf()
        } else {
            PathBuf::from(&self.run.cache_dir)
        }
    }
}

/// Writes `effective_config.txt` into `dir`.
pub fn persist(config: &RunConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("effective_config.txt");
    fs::write(&path, config.to_text()?).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_roundtrip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = c.to_text().unwrap();
        assert!(text.contains("dsp.n_fft = 512\n"));
        assert!(text.contains("model.stage_blocks = 2,2,3,3\n"));
        assert!(text.contains("data.apnea_labels = LA,H,HA\n"));
        assert!(text.contains("eval.threshold = none\n"));
        assert!(!text.contains("train.seed"));
        assert!(!text.contains("train.model"));
        let mut back = RunConfig::default();
        back.set("run.seed", "9").unwrap();
        back.apply_text(&text, Path::new("x")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn sets_typed_values() {
        let mut c = RunConfig::default();
        c.apply_text(
            "# comment\n dsp.n_fft = 1024  # trailing\nmodel.stage_blocks = 1,1,1,1\ntrain.loss.kind = focal\n\
             train.oversample = false\neval.threshold = 0.635\nsynth.apnea_duration_s = 5,10\n",
            Path::new("cfg"),
        )
        .unwrap();
        assert_eq!(c.dsp.n_fft, 1024);
        assert_eq!(c.model.stage_blocks, vec![1, 1, 1, 1]);
        assert_eq!(c.train.loss.kind, crate::training::LossKind::Focal);
        assert!(!c.train.oversample);
        assert_eq!(c.eval.threshold, Some(0.635));
        assert_eq!(c.synth.record.apnea_duration_s, (5.0, 10.0));
        c.set("eval.threshold", "none").unwrap();
        assert_eq!(c.eval.threshold, None);
        assert_eq!(c.train_config().model.stage_blocks, vec![1, 1, 1, 1]);
    }

    #[test]
    fn rejects_bad_keys_and_values() {
        let mut c = RunConfig::default();
        for bad in ["dsp.nfft = 3", "dsp = 3", "dsp.n_fft = x", "train.oversample = 1", "train.seed = 3", "noequals"] {
            let err = c.apply_text(bad, Path::new("f.cfg")).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{bad}");
            assert!(err.to_string().contains("f.cfg:1"), "{err}");
        }
        assert!(c.set("train.loss.kind", "hinge").is_err());
        c.set("eval.objective", "bogus").unwrap();
        assert!(c.validate().is_err());
        assert_eq!(c.dsp.n_fft, 512);
    }
}
