//! Experiment configuration.
//!
//! Config files are TOML. Keys form a flat dotted schema (`train.lr_init`),
//! written either as dotted keys or under `[train]`-style tables; lists may be
//! TOML arrays or comma-separated strings. Every key has a default, unknown
//! keys are rejected, and command-line overrides (`--train.epochs 10`) are
//! applied on top of the file. The fully resolved key set is written next to
//! each command's outputs so a run can be repeated from that snapshot alone.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::data::{CorruptionKind, Dataset};
use crate::error::{MisdError, Result};
use crate::radius::{BaseAttack, RadiusConfig, RadiusMethod};
use crate::scores::{ScoreMethod, TEMPERATURE_GRID};
use crate::training::{Objective, TrainConfig};

/// Environment variable naming the directory relative output paths resolve against.
pub const OUTPUT_ROOT_ENV: &str = "MISD_OUT";

/// File name of a command's resolved-config snapshot inside the output directory.
pub fn snapshot_file(command: &str) -> String {
    format!("{command}.resolved.toml")
}

const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("output_dir", "out"),
    ("data.source", "synthetic"),
    ("data.train_path", ""),
    ("data.test_path", ""),
    ("data.train_images", ""),
    ("data.train_labels", ""),
    ("data.test_images", ""),
    ("data.test_labels", ""),
    ("data.n_train", "5000"),
    ("data.n_test", "3000"),
    ("data.dim", "100"),
    ("data.classes", "4"),
    ("data.separation", "2.4"),
    ("data.scale", "0.02"),
    ("data.val_fraction", "0.2"),
    ("data.split_seed", ""),
    ("data.corruption", "none"),
    ("data.severity", "0"),
    ("model.hidden", "32,32"),
    ("model.checkpoint", ""),
    ("train.objective", "standard"),
    ("train.epsilon", "0.001"),
    ("train.epochs", "100"),
    ("train.batch_size", "128"),
    ("train.lr_init", "0.1"),
    ("train.momentum", "0.9"),
    ("train.warmup_epochs", "5"),
    ("train.schedule", "cosine"),
    ("train.mixup_alpha", "none"),
    ("train.mixup_on_rat", "false"),
    ("train.inner_steps", "1"),
    ("score.methods", "msr,odin,doctor,rr_bs,rr_fast"),
    ("score.temperature", "1"),
    ("score.preprocess_eps", "0"),
    ("score.tune", "true"),
    ("radius.method", "rr_bs"),
    ("radius.temperature", "1"),
    ("radius.r_init", "0.0001"),
    ("radius.max_total_passes", "25"),
    ("radius.alpha", "0.01"),
    ("radius.r_cap", ""),
    ("radius.pgd_steps", "10"),
    ("radius.temperature_in_gradient", "true"),
    ("radius.oracle_grid_points", "10000"),
    ("sweep.temperatures", ""),
    ("bench.repetitions", "3"),
    ("bench.n", "200"),
];

/// Untyped `key = value` pairs, validated against the key schema.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    /// Parses TOML. Tables and dotted keys both map onto the flat key schema,
    /// so `[train]\nepochs = 3` and `train.epochs = 3` are equivalent.
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| MisdError::config("config file", e.message().to_string()))?;
        let mut raw = RawConfig::default();
        raw.absorb("", &table)?;
        Ok(raw)
    }

    fn absorb(&mut self, prefix: &str, table: &toml::Table) -> Result<()> {
        for (k, v) in table {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match v {
                toml::Value::Table(t) => self.absorb(&key, t)?,
                toml::Value::Array(items) => {
                    let parts = items.iter().map(|item| scalar(&key, item)).collect::<Result<Vec<_>>>()?;
                    self.set(&key, &parts.join(","))?;
                }
                other => {
                    let value = scalar(&key, other)?;
                    self.set(&key, &value)?;
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MisdError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !DEFAULTS.iter().any(|(k, _)| *k == key) {
            return Err(MisdError::config(key, "unknown key"));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies `--key value` / `--key=value` pairs.
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<()> {
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let Some(flag) = arg.strip_prefix("--") else {
                return Err(MisdError::Usage(format!("expected `--key value`, got `{arg}`")));
            };
            match flag.split_once('=') {
                Some((k, v)) => self.set(k, v)?,
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| MisdError::config(flag, "flag is missing its value"))?;
                    self.set(flag, v)?;
                }
            }
        }
        Ok(())
    }

    /// Defaults overlaid with the explicit entries.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        let mut all: BTreeMap<String, String> =
            DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        all.extend(self.entries.clone());
        all
    }
}

fn scalar(key: &str, v: &toml::Value) -> Result<String> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(format!("{f:?}")),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        _ => Err(MisdError::config(key, "expected a string, number, boolean or list of those")),
    }
}

/// Typed TOML value for a resolved string, so numbers and flags stay
/// unquoted and comma lists become arrays.
fn typed(v: &str) -> toml::Value {
    if v.contains(',') {
        return toml::Value::Array(v.split(',').map(|p| typed(p.trim())).collect());
    }
    if let Ok(i) = v.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    match v.parse::<f64>() {
        Ok(f) if f.is_finite() => toml::Value::Float(f),
        _ => match v {
            "true" => toml::Value::Boolean(true),
            "false" => toml::Value::Boolean(false),
            _ => toml::Value::String(v.to_string()),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        n_train: usize,
        n_test: usize,
        dim: usize,
        classes: usize,
        separation: f64,
        scale: f64,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub val_fraction: f64,
    pub split_seed: u64,
    pub corruption: Option<(CorruptionKind, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSection {
    pub methods: Vec<ScoreMethod>,
    pub temperature: f64,
    pub preprocess_eps: f64,
    pub tune: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadiusSection {
    pub method: RadiusMethod,
    /// `None` means twice the dataset's range width.
    pub r_cap: Option<f64>,
    pub config: RadiusConfig,
}

impl RadiusSection {
    pub fn config_for(&self, dataset: &Dataset) -> RadiusConfig {
        RadiusConfig {
            r_cap: self.r_cap.unwrap_or(2.0 * dataset.range_width()),
            ..self.config
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub hidden: Vec<usize>,
    pub checkpoint: Option<PathBuf>,
    pub train: TrainConfig,
    pub score: ScoreSection,
    pub radius: RadiusSection,
    pub temperatures: Vec<f64>,
    pub bench_repetitions: usize,
    pub bench_n: usize,
    resolved: BTreeMap<String, String>,
}

struct Lookup<'a>(&'a BTreeMap<String, String>);

impl Lookup<'_> {
    fn str(&self, key: &str) -> &str {
        self.0.get(key).map(String::as_str).unwrap_or("")
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.str(key);
        v.parse()
            .map_err(|e| MisdError::config(key, format!("cannot parse `{v}`: {e}")))
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.str(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| MisdError::config(key, format!("cannot parse `{s}`: {e}"))))
            .collect()
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.str(key) {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            v => Err(MisdError::config(key, format!("expected true/false, got `{v}`"))),
        }
    }

    fn path(&self, key: &str) -> Result<PathBuf> {
        let v = self.str(key);
        if v.is_empty() {
            return Err(MisdError::config(key, "a dataset path is required"));
        }
        let p = PathBuf::from(v);
        if !p.exists() {
            return Err(MisdError::config(key, format!("file `{v}` does not exist")));
        }
        Ok(p)
    }
}

impl ExperimentConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let mut resolved = raw.resolved();
        let l = Lookup(&resolved);
        let seed: u64 = l.parse("seed")?;

        let source = match l.str("data.source") {
            "synthetic" => DataSource::Synthetic {
                n_train: l.parse("data.n_train")?,
                n_test: l.parse("data.n_test")?,
                dim: l.parse("data.dim")?,
                classes: l.parse("data.classes")?,
                separation: l.parse("data.separation")?,
                scale: l.parse("data.scale")?,
            },
            "csv" => DataSource::Csv {
                train: l.path("data.train_path")?,
                test: l.path("data.test_path")?,
            },
            "idx" => DataSource::Idx {
                train_images: l.path("data.train_images")?,
                train_labels: l.path("data.train_labels")?,
                test_images: l.path("data.test_images")?,
                test_labels: l.path("data.test_labels")?,
            },
            other => {
                return Err(MisdError::config(
                    "data.source",
                    format!("expected synthetic, csv or idx, got `{other}`"),
                ))
            }
        };
        let val_fraction: f64 = l.parse("data.val_fraction")?;
        if !(val_fraction > 0.0 && val_fraction < 1.0) {
            return Err(MisdError::config("data.val_fraction", "must be in (0, 1)"));
        }
        let split_seed = match l.str("data.split_seed") {
            "" => seed,
            _ => l.parse("data.split_seed")?,
        };
        let corruption = match l.str("data.corruption") {
            "none" => None,
            s => {
                let kind: CorruptionKind = s
                    .parse()
                    .map_err(|e: MisdError| MisdError::config("data.corruption", e.to_string()))?;
                let severity: u32 = l.parse("data.severity")?;
                if severity > 5 {
                    return Err(MisdError::config("data.severity", "must be in 0..=5"));
                }
                Some((kind, severity))
            }
        };

        let hidden: Vec<usize> = l.list("model.hidden")?;
        if hidden.contains(&0) {
            return Err(MisdError::config("model.hidden", "layer widths must be positive"));
        }
        let checkpoint = match l.str("model.checkpoint") {
            "" => None,
            p => Some(PathBuf::from(p)),
        };

        let train = TrainConfig {
            objective: l.parse::<Objective>("train.objective")?,
            epsilon: l.parse("train.epsilon")?,
            epochs: l.parse("train.epochs")?,
            batch_size: l.parse("train.batch_size")?,
            lr_init: l.parse("train.lr_init")?,
            momentum: l.parse("train.momentum")?,
            warmup_epochs: l.parse("train.warmup_epochs")?,
            schedule: l.parse("train.schedule")?,
            mixup_alpha: match l.str("train.mixup_alpha") {
                "none" | "" => None,
                _ => Some(l.parse("train.mixup_alpha")?),
            },
            mixup_on_rat: l.flag("train.mixup_on_rat")?,
            inner_steps: l.parse("train.inner_steps")?,
            seed,
        };
        train.validate()?;

        let score = ScoreSection {
            methods: l.list("score.methods")?,
            temperature: l.parse("score.temperature")?,
            preprocess_eps: l.parse("score.preprocess_eps")?,
            tune: l.flag("score.tune")?,
        };
        if score.methods.is_empty() {
            return Err(MisdError::config("score.methods", "at least one method is required"));
        }

        let method: RadiusMethod = l.parse("radius.method")?;
        let pgd_steps: usize = l.parse("radius.pgd_steps")?;
        let radius = RadiusSection {
            method,
            r_cap: match l.str("radius.r_cap") {
                "" => None,
                _ => Some(l.parse("radius.r_cap")?),
            },
            config: RadiusConfig {
                r_init: l.parse("radius.r_init")?,
                max_total_passes: l.parse("radius.max_total_passes")?,
                alpha: l.parse("radius.alpha")?,
                temperature: l.parse("radius.temperature")?,
                r_cap: 2.0,
                base_attack: match method {
                    RadiusMethod::RrBsPgd => BaseAttack::Pgd { steps: pgd_steps },
                    _ => BaseAttack::Fgsm,
                },
                temperature_in_gradient: l.flag("radius.temperature_in_gradient")?,
                oracle_grid_points: l.parse("radius.oracle_grid_points")?,
            },
        };

        let temperatures = match l.str("sweep.temperatures") {
            "" => TEMPERATURE_GRID.to_vec(),
            _ => l.list("sweep.temperatures")?,
        };
        if temperatures.is_empty() || temperatures.iter().any(|t| !(*t > 0.0)) {
            return Err(MisdError::config("sweep.temperatures", "need positive temperatures"));
        }

        let output_dir = PathBuf::from(l.str("output_dir"));
        let bench_repetitions = l.parse("bench.repetitions")?;
        let bench_n = l.parse("bench.n")?;
        resolved.insert("data.split_seed".into(), split_seed.to_string());
        let temps: Vec<String> = temperatures.iter().map(|t| format!("{t:?}")).collect();
        resolved.insert("sweep.temperatures".into(), temps.join(","));

        Ok(Self {
            seed,
            output_dir,
            data: DataConfig {
                source,
                val_fraction,
                split_seed,
                corruption,
            },
            hidden,
            checkpoint,
            train,
            score,
            radius,
            temperatures,
            bench_repetitions,
            bench_n,
            resolved,
        })
    }

    /// Output directory, resolved against the output-root variable when relative.
    pub fn output_path(&self) -> PathBuf {
        resolve_output(&self.output_dir, std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.output_path().join("model.ckpt"))
    }

    /// Every key with its effective value as a TOML document.
    pub fn snapshot(&self) -> String {
        let mut root = toml::Table::new();
        for (key, value) in &self.resolved {
            let mut table = &mut root;
            let mut parts: Vec<&str> = key.split('.').collect();
            let leaf = parts.pop().expect("keys are non-empty");
            for part in parts {
                table = table
                    .entry(part)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .expect("sections never collide with leaf keys");
            }
            table.insert(leaf.to_string(), typed(value));
        }
        toml::to_string(&root).expect("flat tables serialize")
    }
}

pub fn resolve_output(dir: &Path, root: Option<PathBuf>) -> PathBuf {
    match root {
        Some(r) if dir.is_relative() => r.join(dir),
        _ => dir.to_path_buf(),
    }
}
