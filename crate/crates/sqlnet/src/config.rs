//! Run configuration: flat key=value files, override entries, validation,
//! and the resolved-config echo written beside run artifacts.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::{ModelConfig, ModelVariant, TrainOptions};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("config line {line} is not key=value: {text:?}")]
    BadLine { line: usize, text: String },
    #[error("unknown config key {key:?}")]
    UnknownKey { key: String },
    #[error("invalid value for {field}: {value:?} (expected {expect})")]
    BadValue {
        field: &'static str,
        value: String,
        expect: &'static str,
    },
    #[error("invalid {field}: {why}")]
    Invariant { field: &'static str, why: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train_examples: Option<PathBuf>,
    pub dev_examples: Option<PathBuf>,
    pub test_examples: Option<PathBuf>,
    pub tables: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    /// Checkpoint to start from (eval, predict, or warm-started train).
    pub checkpoint: Option<PathBuf>,
    /// Overrides the default checkpoint location inside the run directory.
    pub checkpoint_dir: Option<PathBuf>,
    /// Root under which each run creates its timestamp+seed directory.
    pub out: PathBuf,
    pub d: usize,
    pub d_emb: usize,
    pub n_cond: usize,
    pub alpha: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub unfreeze_epoch: usize,
    pub seed: u64,
    pub variant: ModelVariant,
    pub max_value_len: usize,
    pub train_ratio: f64,
    pub dev_ratio: f64,
    pub test_ratio: f64,
    pub gc_samples: usize,
    pub gc_step: f64,
    pub gc_tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train_examples: None,
            dev_examples: None,
            test_examples: None,
            tables: None,
            embeddings: None,
            checkpoint: None,
            checkpoint_dir: None,
            out: PathBuf::from("runs"),
            d: 100,
            d_emb: 50,
            n_cond: 4,
            alpha: 3.0,
            lr: 0.001,
            epochs: 200,
            batch: 64,
            unfreeze_epoch: 100,
            seed: 1,
            variant: ModelVariant::Seq2SetCaWe,
            max_value_len: 10,
            train_ratio: 0.7,
            dev_ratio: 0.15,
            test_ratio: 0.15,
            gc_samples: 2,
            gc_step: 1e-5,
            gc_tolerance: 1e-4,
        }
    }
}

fn parse_num<T: std::str::FromStr>(
    field: &'static str,
    value: &str,
    expect: &'static str,
) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        field,
        value: value.to_string(),
        expect,
    })
}

fn parse_path(value: &str) -> Option<PathBuf> {
    if value.is_empty() {
        None
    } else {
        Some(PathBuf::from(value))
    }
}

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Parses a key=value file. Blank lines and lines starting with `#` are
    /// skipped; inline comments are not supported.
    pub fn parse_file(path: &Path) -> Result<Vec<(String, String)>, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::BadLine {
                    line: i + 1,
                    text: line.to_string(),
                });
            };
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(entries)
    }

    /// Applies one entry, rejecting unknown keys and unparseable values.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "train_examples" => self.train_examples = parse_path(value),
            "dev_examples" => self.dev_examples = parse_path(value),
            "test_examples" => self.test_examples = parse_path(value),
            "tables" => self.tables = parse_path(value),
            "embeddings" => self.embeddings = parse_path(value),
            "checkpoint" => self.checkpoint = parse_path(value),
            "checkpoint_dir" => self.checkpoint_dir = parse_path(value),
            "out" => {
                self.out = parse_path(value).ok_or(ConfigError::BadValue {
                    field: "out",
                    value: value.to_string(),
                    expect: "a directory path",
                })?
            }
            "d" => self.d = parse_num("d", value, "a positive integer")?,
            "d_emb" => self.d_emb = parse_num("d_emb", value, "a positive integer")?,
            "n_cond" => self.n_cond = parse_num("n_cond", value, "a positive integer")?,
            "alpha" => self.alpha = parse_num("alpha", value, "a positive number")?,
            "lr" => self.lr = parse_num("lr", value, "a number")?,
            "epochs" => self.epochs = parse_num("epochs", value, "an integer")?,
            "batch" => self.batch = parse_num("batch", value, "a positive integer")?,
            "unfreeze_epoch" => {
                self.unfreeze_epoch = parse_num("unfreeze_epoch", value, "an integer")?
            }
            "seed" => self.seed = parse_num("seed", value, "an integer")?,
            "variant" => {
                self.variant = ModelVariant::parse(value).ok_or(ConfigError::BadValue {
                    field: "variant",
                    value: value.to_string(),
                    expect: "seq2set, seq2set+CA, or seq2set+CA+WE",
                })?
            }
            "max_value_len" => {
                self.max_value_len = parse_num("max_value_len", value, "a positive integer")?
            }
            "train_ratio" => self.train_ratio = parse_num("train_ratio", value, "a fraction")?,
            "dev_ratio" => self.dev_ratio = parse_num("dev_ratio", value, "a fraction")?,
            "test_ratio" => self.test_ratio = parse_num("test_ratio", value, "a fraction")?,
            "gc_samples" => {
                self.gc_samples = parse_num("gc_samples", value, "a positive integer")?
            }
            "gc_step" => self.gc_step = parse_num("gc_step", value, "a positive number")?,
            "gc_tolerance" => {
                self.gc_tolerance = parse_num("gc_tolerance", value, "a positive number")?
            }
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Builds the effective config: defaults, then the file, then overrides,
    /// then the invariant check.
    pub fn load(
        file: Option<&Path>,
        overrides: &[(String, String)],
    ) -> Result<RunConfig, ConfigError> {
        let mut config = RunConfig::default();
        if let Some(path) = file {
            for (k, v) in RunConfig::parse_file(path)? {
                config.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            config.set(k, v)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.d == 0 || self.d % 2 != 0 {
            return Err(ConfigError::Invariant {
                field: "d",
                why: format!("must be a positive even number, got {}", self.d),
            });
        }
        if self.d_emb == 0 {
            return Err(ConfigError::Invariant {
                field: "d_emb",
                why: "must be positive".to_string(),
            });
        }
        if self.n_cond == 0 {
            return Err(ConfigError::Invariant {
                field: "n_cond",
                why: "must be at least 1".to_string(),
            });
        }
        if !(self.alpha > 0.0) {
            return Err(ConfigError::Invariant {
                field: "alpha",
                why: format!("must be positive, got {}", self.alpha),
            });
        }
        if self.batch == 0 {
            return Err(ConfigError::Invariant {
                field: "batch",
                why: "must be positive".to_string(),
            });
        }
        if self.max_value_len == 0 {
            return Err(ConfigError::Invariant {
                field: "max_value_len",
                why: "must be positive".to_string(),
            });
        }
        if self.epochs < self.unfreeze_epoch {
            return Err(ConfigError::Invariant {
                field: "unfreeze_epoch",
                why: format!(
                    "must not exceed epochs ({} > {})",
                    self.unfreeze_epoch, self.epochs
                ),
            });
        }
        let ratios = [self.train_ratio, self.dev_ratio, self.test_ratio];
        let sum: f64 = ratios.iter().sum();
        if ratios.iter().any(|r| *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(ConfigError::Invariant {
                field: "train_ratio/dev_ratio/test_ratio",
                why: format!("must be nonnegative and sum to 1, got {ratios:?}"),
            });
        }
        if !(self.gc_step > 0.0) {
            return Err(ConfigError::Invariant {
                field: "gc_step",
                why: "must be positive".to_string(),
            });
        }
        if !(self.gc_tolerance > 0.0) {
            return Err(ConfigError::Invariant {
                field: "gc_tolerance",
                why: "must be positive".to_string(),
            });
        }
        Ok(())
    }

    /// Fully-resolved key=value rendering; parsing it back reproduces the
    /// config exactly.
    pub fn text(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        push("train_examples", path_str(&self.train_examples));
        push("dev_examples", path_str(&self.dev_examples));
        push("test_examples", path_str(&self.test_examples));
        push("tables", path_str(&self.tables));
        push("embeddings", path_str(&self.embeddings));
        push("checkpoint", path_str(&self.checkpoint));
        push("checkpoint_dir", path_str(&self.checkpoint_dir));
        push("out", self.out.display().to_string());
        push("d", self.d.to_string());
        push("d_emb", self.d_emb.to_string());
        push("n_cond", self.n_cond.to_string());
        push("alpha", self.alpha.to_string());
        push("lr", self.lr.to_string());
        push("epochs", self.epochs.to_string());
        push("batch", self.batch.to_string());
        push("unfreeze_epoch", self.unfreeze_epoch.to_string());
        push("seed", self.seed.to_string());
        push("variant", self.variant.as_str().to_string());
        push("max_value_len", self.max_value_len.to_string());
        push("train_ratio", self.train_ratio.to_string());
        push("dev_ratio", self.dev_ratio.to_string());
        push("test_ratio", self.test_ratio.to_string());
        push("gc_samples", self.gc_samples.to_string());
        push("gc_step", self.gc_step.to_string());
        push("gc_tolerance", self.gc_tolerance.to_string());
        out
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d: self.d,
            d_emb: self.d_emb,
            n_cond: self.n_cond,
            alpha: self.alpha,
            max_value_len: self.max_value_len,
            formula: self.variant.formula(),
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            batch_size: self.batch,
            lr: self.lr,
            seed: self.seed,
            unfreeze_epoch: self.unfreeze_epoch,
            train_embeddings: self.variant.train_embeddings(),
        }
    }

    /// Run-level entries stored in checkpoints next to the model's own
    /// hyperparameters.
    pub fn checkpoint_entries(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("seed".to_string(), self.seed.to_string());
        m.insert("variant".to_string(), self.variant.as_str().to_string());
        m.insert("lr".to_string(), self.lr.to_string());
        m.insert("epochs".to_string(), self.epochs.to_string());
        m.insert("batch".to_string(), self.batch.to_string());
        m.insert("unfreeze_epoch".to_string(), self.unfreeze_epoch.to_string());
        m
    }
}
