//! Line-oriented run configuration: `[section]` headers, `key = value`
//! lines and `#` comments. Every subcommand has a table of recognized keys
//! with their defaults; anything else is rejected.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CliError, Result};

/// The harness subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Command {
    FitGen,
    Latent,
    Invprob,
    Attack,
    Advtrain,
    Meta,
    BenchSolvers,
    BenchEfficiency,
    Gradcheck,
}

impl Command {
    pub const ALL: [Command; 9] = [
        Command::FitGen,
        Command::Latent,
        Command::Invprob,
        Command::Attack,
        Command::Advtrain,
        Command::Meta,
        Command::BenchSolvers,
        Command::BenchEfficiency,
        Command::Gradcheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::FitGen => "fit-gen",
            Command::Latent => "latent",
            Command::Invprob => "invprob",
            Command::Attack => "attack",
            Command::Advtrain => "advtrain",
            Command::Meta => "meta",
            Command::BenchSolvers => "bench-solvers",
            Command::BenchEfficiency => "bench-efficiency",
            Command::Gradcheck => "gradcheck",
        }
    }
}

/// A recognized key: `Some(default)` or `None` for keys that are only
/// required in some configurations (for example IDX paths).
type Entry = (&'static str, &'static str, Option<&'static str>);

const MODEL: &[Entry] = &[
    ("model", "kind", Some("tanh")),
    ("model", "state_dim", Some("32")),
    ("model", "gamma", Some("0.6")),
    ("model", "checkpoint", None),
];

const SOLVER: &[Entry] = &[
    ("solver", "kind", Some("anderson")),
    ("solver", "max_iter", Some("40")),
    ("solver", "tol", Some("1e-10")),
    ("solver", "memory", Some("20")),
];

const TRAIN: &[Entry] = &[
    ("train", "steps", Some("100")),
    ("train", "batch", Some("8")),
    ("train", "lr", Some("0.01")),
    ("train", "lambda", Some("0.1")),
    ("train", "hutchinson_samples", Some("2")),
    ("train", "contraction", Some("0.9")),
];

const DATA: &[Entry] = &[
    ("data", "source", Some("synthetic")),
    ("data", "count", Some("64")),
    ("data", "test_count", Some("16")),
    ("data", "idx_images", None),
    ("data", "idx_labels", None),
];

fn damping(alpha_x: &'static str, after: &'static str, reduced: &'static str) -> [Entry; 5] {
    [
        ("damping", "alpha_z", Some("0.8")),
        ("damping", "alpha_mu", Some("0.6")),
        ("damping", "alpha_x", Some(alpha_x)),
        ("damping", "reduce_after", Some(after)),
        ("damping", "alpha_x_reduced", Some(reduced)),
    ]
}

/// Recognized keys and defaults for `cmd`. Later entries override earlier
/// ones with the same section and key.
pub fn schema(cmd: Command) -> Vec<Entry> {
    let mut s: Vec<Entry> = Vec::new();
    let latent_damping = damping("0.02", "0", "0.02");
    match cmd {
        Command::FitGen => {
            s.extend(MODEL);
            s.extend(SOLVER);
            s.extend(latent_damping);
            s.extend(TRAIN);
            s.extend(DATA);
            s.push(("output", "samples", Some("8")));
        }
        Command::Latent => {
            s.extend(MODEL);
            s.extend(SOLVER);
            s.extend(latent_damping);
            s.extend(DATA);
            s.push(("solver", "max_iter", Some("100")));
        }
        Command::Invprob => {
            s.extend(MODEL);
            s.extend(SOLVER);
            s.extend(latent_damping);
            s.extend(TRAIN);
            s.extend(DATA);
            s.extend([
                ("inverse", "sigma", Some("0.2")),
                ("inverse", "mask_size", Some("3")),
                ("inverse", "mask_row", Some("2")),
                ("inverse", "mask_col", Some("2")),
                ("inverse", "eval_iter", Some("100")),
            ]);
        }
        Command::Attack | Command::Advtrain => {
            s.extend(MODEL);
            s.extend(SOLVER);
            s.extend(damping("0.6", "65", "0.2"));
            s.extend(TRAIN);
            s.extend(DATA);
            s.extend([
                ("model", "state_dim", Some("32")),
                ("solver", "max_iter", Some("80")),
                ("train", "lambda", Some("0.01")),
                ("train", "steps", Some("600")),
                ("train", "batch", Some("16")),
                ("train", "lr", Some("0.02")),
                ("data", "count", Some("200")),
                ("data", "test_count", Some("100")),
                ("attack", "eps", Some("0.15")),
                ("attack", "pgd_steps", Some("20")),
                ("attack", "pgd_step_size", Some("0.0375")),
            ]);
            if cmd == Command::Advtrain {
                s.push(("attack", "adversary", Some("jiio")));
            }
        }
        Command::Meta => {
            s.extend(MODEL);
            s.extend(SOLVER);
            s.extend(damping("0.04", "65", "0.01"));
            s.extend(TRAIN);
            s.extend([
                ("model", "state_dim", Some("16")),
                ("solver", "max_iter", Some("100")),
                ("train", "lambda", Some("0.5")),
                ("train", "batch", Some("4")),
                ("meta", "features", Some("4")),
                ("meta", "task_dim", Some("2")),
                ("meta", "targets", Some("2")),
                ("meta", "support", Some("5")),
                ("meta", "query", Some("5")),
                ("meta", "tasks", Some("32")),
            ]);
        }
        Command::BenchSolvers => {
            s.extend([
                ("bench", "dim", Some("20")),
                ("bench", "spectral_radius", Some("0.9")),
                ("bench", "tol", Some("1e-6")),
                ("bench", "max_iter", Some("500")),
                ("bench", "memory", Some("20")),
                ("bench", "instances", Some("5")),
                ("bench", "state_dim", Some("32")),
                ("bench", "input_dim", Some("8")),
            ]);
        }
        Command::BenchEfficiency => {
            s.extend(MODEL);
            s.extend(SOLVER);
            s.extend(damping("0.2", "0", "0.2"));
            s.extend([
                ("solver", "max_iter", Some("400")),
                ("model", "input_dim", Some("8")),
                ("model", "output_dim", Some("32")),
                ("bench", "instances", Some("20")),
                ("bench", "adam_steps", Some("40")),
                ("bench", "adam_lr", Some("0.1")),
            ]);
        }
        Command::Gradcheck => {
            s.extend([
                ("model", "state_dim", Some("6")),
                ("model", "input_dim", Some("3")),
                ("model", "output_dim", Some("6")),
                ("gradcheck", "instances", Some("5")),
                ("gradcheck", "h", Some("1e-3")),
            ]);
        }
    }
    if matches!(cmd, Command::FitGen | Command::Latent | Command::Invprob) {
        s.push(("model", "input_dim", Some("16")));
    }
    s
}

/// Parsed configuration with defaults applied.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    command: Command,
    values: BTreeMap<(String, String), String>,
}

impl RunConfig {
    /// The documented defaults for `cmd`.
    pub fn defaults(cmd: Command) -> Self {
        let mut values = BTreeMap::new();
        for (section, key, default) in schema(cmd) {
            let slot = (section.to_string(), key.to_string());
            match default {
                Some(v) => {
                    values.insert(slot, v.to_string());
                }
                None => {
                    values.remove(&slot);
                }
            }
        }
        Self { command: cmd, values }
    }

    /// Parses `text`, starting from the defaults for `cmd`.
    pub fn parse(cmd: Command, text: &str) -> Result<Self> {
        let known: Vec<(&str, &str)> = schema(cmd).iter().map(|(s, k, _)| (*s, *k)).collect();
        let mut cfg = Self::defaults(cmd);
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| CliError::Parse {
                    line: line_no,
                    message: format!("unterminated section header `{line}`"),
                })?;
                let name = name.trim();
                if name.is_empty() || name.contains(['[', ']']) {
                    return Err(CliError::Parse {
                        line: line_no,
                        message: format!("invalid section header `{line}`"),
                    });
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CliError::Parse {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(CliError::Parse {
                    line: line_no,
                    message: format!("invalid key `{key}`"),
                });
            }
            let sec = section.clone().ok_or_else(|| CliError::Parse {
                line: line_no,
                message: format!("key `{key}` appears before any section header"),
            })?;
            if !known.iter().any(|(s, k)| *s == sec && *k == key) {
                return Err(CliError::UnknownKey {
                    section: sec,
                    key: key.to_string(),
                });
            }
            cfg.values.insert((sec, key.to_string()), value.to_string());
        }
        Ok(cfg)
    }

    /// Reads and parses `path`.
    pub fn load(cmd: Command, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(cmd, &text)
    }

    pub fn command(&self) -> Command {
        self.command
    }

    /// The raw value, if set.
    pub fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.values
            .get(&(section.to_string(), key.to_string()))
            .map(String::as_str)
    }

    /// The raw value or [`CliError::MissingKey`].
    pub fn require(&self, section: &str, key: &str) -> Result<&str> {
        self.raw(section, key).ok_or_else(|| CliError::MissingKey {
            section: section.to_string(),
            key: key.to_string(),
        })
    }

    /// Parses the value of a key.
    pub fn get<T>(&self, section: &str, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        let raw = self.require(section, key)?;
        raw.parse().map_err(|e: T::Err| CliError::BadValue {
            section: section.to_string(),
            key: key.to_string(),
            value: raw.to_string(),
            reason: e.to_string(),
        })
    }

    pub fn f64(&self, section: &str, key: &str) -> Result<f64> {
        self.get(section, key)
    }

    pub fn usize(&self, section: &str, key: &str) -> Result<usize> {
        self.get(section, key)
    }

    /// Canonical `section.key=value` lines, sorted.
    pub fn canonical(&self) -> String {
        self.values
            .iter()
            .map(|((s, k), v)| format!("{s}.{k}={v}\n"))
            .collect()
    }

    /// Stable 64-bit digest of [`RunConfig::canonical`].
    pub fn hash(&self) -> u64 {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.canonical().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("digest has at least 8 bytes"))
    }

    /// Rejects a value with a reason.
    pub fn bad(&self, section: &str, key: &str, reason: &str) -> CliError {
        CliError::BadValue {
            section: section.to_string(),
            key: key.to_string(),
            value: self.raw(section, key).unwrap_or("").to_string(),
            reason: reason.to_string(),
        }
    }
}
