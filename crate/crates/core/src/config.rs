//! Run configuration as flat dotted `key = value` text.
//!
//! ```text
//! # comments run to end of line
//! data.seed = 3
//! model.hidden = 256,256
//! loss.rho = 0.6
//! ```
//!
//! Values are resolved in order: built-in default, then the config file,
//! then command-line overrides. [`RunSettings::snapshot`] writes every key
//! with its resolved value.

use std::fmt::Write as _;

use thiserror::Error;

use crate::data::SyntheticSpec;
use crate::eval::EvalConfig;
use crate::losses::LossConfig;
use crate::model::{ClassifierMode, ClassifierSettings};
use crate::train::TrainConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {message}")]
    Value { key: String, value: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Everything a command needs: data recipe, both training stages,
/// evaluation targets, and the sweep ratios.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSettings {
    pub data: SyntheticSpec,
    pub baseline: TrainConfig,
    pub adapt: TrainConfig,
    pub eval: EvalConfig,
    pub rhos: Vec<f64>,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            data: SyntheticSpec::default(),
            baseline: TrainConfig::baseline(),
            adapt: TrainConfig::adapt(),
            eval: EvalConfig::default(),
            rhos: vec![0.0, 0.5, 0.6, 0.7, 0.8, 0.9],
        }
    }
}

/// `key = value` pairs from config text, in file order.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: i + 1,
            message: format!("expected key = value, got {line:?}"),
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1, message: "empty key".into() });
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// A single `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String), ConfigError> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(ConfigError::Syntax { line: 0, message: format!("override {s:?} is not key=value") }),
    }
}

fn value_err(key: &str, value: &str, message: impl ToString) -> ConfigError {
    ConfigError::Value { key: key.into(), value: value.into(), message: message.to_string() }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| value_err(key, value, e))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(value_err(key, value, "expected true or false")),
    }
}

fn parse_head(key: &str, value: &str) -> Result<Option<usize>, ConfigError> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn set_stage(c: &mut TrainConfig, field: &str, key: &str, v: &str) -> Result<bool, ConfigError> {
    match field {
        "epochs" => c.epochs = parse(key, v)?,
        "lr" => c.base_lr = parse(key, v)?,
        "lr_divisor" => c.lr_divisor = parse(key, v)?,
        "lr_interval" => c.lr_interval = parse(key, v)?,
        "momentum" => c.momentum = parse(key, v)?,
        "batch_source" => c.batch_source = parse(key, v)?,
        "batch_target" => c.batch_target = parse(key, v)?,
        "seed" => c.seed = parse(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

impl RunSettings {
    /// Applies config-file text, then overrides.
    pub fn resolve(file: Option<&str>, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut s = Self::default();
        if let Some(text) = file {
            for (k, v) in parse_pairs(text)? {
                s.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            s.set(k, v)?;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let (section, field) = key.split_once('.').unwrap_or(("", key));
        let d = &mut self.data;
        match (section, field) {
            ("", "seed") => {
                let seed = parse(key, v)?;
                self.baseline.seed = seed;
                self.adapt.seed = seed;
            }
            ("data", "side") => d.side = parse(key, v)?,
            ("data", "source_classes") => d.source_classes = parse(key, v)?,
            ("data", "target_classes") => d.target_classes = parse(key, v)?,
            ("data", "samples_per_class") => d.samples_per_class = parse(key, v)?,
            ("data", "symmetric_blobs") => d.symmetric_blobs = parse(key, v)?,
            ("data", "asymmetric_blobs") => d.asymmetric_blobs = parse(key, v)?,
            ("data", "asymmetric_strength") => d.asymmetric_strength = parse(key, v)?,
            ("data", "noise_std") => d.noise_std = parse(key, v)?,
            ("data", "source_illumination") => d.source_illumination = parse(key, v)?,
            ("data", "target_illumination") => d.target_illumination = parse(key, v)?,
            ("data", "target_brightness") => d.target_brightness = parse(key, v)?,
            ("data", "target_contrast") => d.target_contrast = parse(key, v)?,
            ("data", "target_blur") => d.target_blur = parse(key, v)?,
            ("data", "seed") => d.seed = parse(key, v)?,
            ("model", "hidden") => {
                let h = parse_list(key, v)?;
                self.baseline.hidden = h.clone();
                self.adapt.hidden = h;
            }
            ("model", "embed_dim") => {
                self.baseline.embed_dim = parse(key, v)?;
                self.adapt.embed_dim = self.baseline.embed_dim;
            }
            ("model", "head_hidden") => self.adapt.head_hidden = parse_head(key, v)?,
            ("model", "classifier") => {
                let mode: ClassifierMode = parse(key, v)?;
                self.baseline.classifier.mode = mode;
                self.adapt.classifier.mode = mode;
            }
            ("model", "scale") => {
                let s = parse(key, v)?;
                self.baseline.classifier.scale = s;
                self.adapt.classifier.scale = s;
            }
            ("model", "margin") => {
                let m = parse(key, v)?;
                self.baseline.classifier.margin = m;
                self.adapt.classifier.margin = m;
            }
            ("loss", "gamma") => {
                self.baseline.loss.gamma = parse(key, v)?;
                self.adapt.loss.gamma = self.baseline.loss.gamma;
            }
            ("loss", "rho") => self.adapt.loss.rho = parse(key, v)?,
            ("baseline", "mirror_augment") => self.baseline.mirror_augment = parse_bool(key, v)?,
            ("baseline", f) => {
                if !set_stage(&mut self.baseline, f, key, v)? {
                    return Err(ConfigError::UnknownKey(key.into()));
                }
            }
            ("adapt", "drop_classification") => self.adapt.drop_classification = parse_bool(key, v)?,
            ("adapt", f) => {
                if !set_stage(&mut self.adapt, f, key, v)? {
                    return Err(ConfigError::UnknownKey(key.into()));
                }
            }
            ("eval", "fpr") => self.eval.fpr_targets = parse_list(key, v)?,
            ("eval", "fpir") => self.eval.fpir_targets = parse_list(key, v)?,
            ("eval", "ranks") => self.eval.ranks = parse_list(key, v)?,
            ("sweep", "rhos") => self.rhos = parse_list(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.data.validate().map_err(|e| invalid(&e))?;
        self.baseline.validate().map_err(|e| invalid(&e))?;
        self.adapt.validate().map_err(|e| invalid(&e))?;
        let rates = self.eval.fpr_targets.iter().chain(&self.eval.fpir_targets);
        if let Some(r) = rates.clone().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(ConfigError::Invalid(format!("target rate {r} outside [0, 1]")));
        }
        if self.eval.ranks.contains(&0) {
            return Err(ConfigError::Invalid("rank K must be at least 1".into()));
        }
        if let Some(r) = self.rhos.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(ConfigError::Invalid(format!("sweep rho {r} outside [0, 1]")));
        }
        Ok(())
    }

    /// Every key with its resolved value, sorted by key.
    pub fn snapshot(&self) -> String {
        let d = &self.data;
        let b = &self.baseline;
        let a = &self.adapt;
        let mut pairs: Vec<(String, String)> = vec![
            ("seed".into(), b.seed.to_string()),
            ("data.side".into(), d.side.to_string()),
            ("data.source_classes".into(), d.source_classes.to_string()),
            ("data.target_classes".into(), d.target_classes.to_string()),
            ("data.samples_per_class".into(), d.samples_per_class.to_string()),
            ("data.symmetric_blobs".into(), d.symmetric_blobs.to_string()),
            ("data.asymmetric_blobs".into(), d.asymmetric_blobs.to_string()),
            ("data.asymmetric_strength".into(), d.asymmetric_strength.to_string()),
            ("data.noise_std".into(), d.noise_std.to_string()),
            ("data.source_illumination".into(), d.source_illumination.to_string()),
            ("data.target_illumination".into(), d.target_illumination.to_string()),
            ("data.target_brightness".into(), d.target_brightness.to_string()),
            ("data.target_contrast".into(), d.target_contrast.to_string()),
            ("data.target_blur".into(), d.target_blur.to_string()),
            ("data.seed".into(), d.seed.to_string()),
            ("model.hidden".into(), join(&b.hidden)),
            ("model.embed_dim".into(), b.embed_dim.to_string()),
            ("model.head_hidden".into(), a.head_hidden.map_or("auto".into(), |h| h.to_string())),
            ("model.classifier".into(), b.classifier.mode.to_string()),
            ("model.scale".into(), b.classifier.scale.to_string()),
            ("model.margin".into(), b.classifier.margin.to_string()),
            ("loss.gamma".into(), b.loss.gamma.to_string()),
            ("loss.rho".into(), a.loss.rho.to_string()),
            ("baseline.mirror_augment".into(), b.mirror_augment.to_string()),
            ("adapt.drop_classification".into(), a.drop_classification.to_string()),
            ("eval.fpr".into(), join(&self.eval.fpr_targets)),
            ("eval.fpir".into(), join(&self.eval.fpir_targets)),
            ("eval.ranks".into(), join(&self.eval.ranks)),
            ("sweep.rhos".into(), join(&self.rhos)),
        ];
        for (name, c) in [("baseline", b), ("adapt", a)] {
            pairs.extend([
                (format!("{name}.epochs"), c.epochs.to_string()),
                (format!("{name}.lr"), c.base_lr.to_string()),
                (format!("{name}.lr_divisor"), c.lr_divisor.to_string()),
                (format!("{name}.lr_interval"), c.lr_interval.to_string()),
                (format!("{name}.momentum"), c.momentum.to_string()),
                (format!("{name}.batch_source"), c.batch_source.to_string()),
                (format!("{name}.batch_target"), c.batch_target.to_string()),
                (format!("{name}.seed"), c.seed.to_string()),
            ]);
        }
        pairs.sort();
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn classifier(&self) -> ClassifierSettings {
        self.adapt.classifier
    }

    pub fn loss(&self) -> LossConfig {
        self.adapt.loss
    }
}
