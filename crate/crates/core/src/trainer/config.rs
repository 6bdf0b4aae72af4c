//! Training configuration and its flat `key = value` file format.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::neural::ModelDims;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    Fresh,
    SameAsCheckpoint,
}

impl InitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InitMode::Fresh => "fresh",
            InitMode::SameAsCheckpoint => "same-as-checkpoint",
        }
    }
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fresh" => Ok(InitMode::Fresh),
            "same-as-checkpoint" => Ok(InitMode::SameAsCheckpoint),
            other => Err(Error::Config(format!("init_mode must be fresh or same-as-checkpoint, got {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Vocabulary capacity, PAD and OOV included.
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub seq_len: usize,
    pub num_classes: usize,
    /// `f64::INFINITY` means fully dense masks.
    pub epsilon: f64,
    pub zeta: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub rewire_enabled: bool,
    pub fixed_topology: Option<PathBuf>,
    pub init_mode: InitMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            vocab_size: 20000,
            embed_dim: 256,
            hidden_dim: 256,
            seq_len: 100,
            num_classes: 2,
            epsilon: 10.0,
            zeta: 0.4,
            lr: 1e-3,
            batch_size: 64,
            epochs: 10,
            seed: 0,
            rewire_enabled: true,
            fixed_topology: None,
            init_mode: InitMode::Fresh,
        }
    }
}

pub const KEYS: [&str; 14] = [
    "vocab_size",
    "embed_dim",
    "hidden_dim",
    "seq_len",
    "num_classes",
    "epsilon",
    "zeta",
    "lr",
    "batch_size",
    "epochs",
    "seed",
    "rewire_enabled",
    "fixed_topology",
    "init_mode",
];

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn format_f64(x: f64) -> String {
    if x.is_infinite() {
        "dense".to_string()
    } else {
        format!("{x:?}")
    }
}

impl TrainConfig {
    /// Model dimensions with `vocab` rows in the embedding.
    pub fn dims(&self, vocab: usize) -> ModelDims {
        ModelDims {
            vocab,
            embed: self.embed_dim,
            hidden: self.hidden_dim,
            seq_len: self.seq_len,
            classes: self.num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("seq_len", self.seq_len),
            ("batch_size", self.batch_size),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if self.vocab_size < 3 {
            return Err(Error::Config("vocab_size must be >= 3".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(0.0..=1.0).contains(&self.zeta) {
            return Err(Error::Config(format!("zeta must lie in [0, 1], got {}", self.zeta)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }

    /// Whether the per-epoch prune-and-regrow step runs.
    pub fn rewiring(&self) -> bool {
        self.rewire_enabled && self.fixed_topology.is_none()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, v) = (key.trim(), value.trim());
            if seen.contains(&key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", n + 1)));
            }
            seen.push(key.to_string());
            match key {
                "vocab_size" => c.vocab_size = parse_num(key, v)?,
                "embed_dim" => c.embed_dim = parse_num(key, v)?,
                "hidden_dim" => c.hidden_dim = parse_num(key, v)?,
                "seq_len" => c.seq_len = parse_num(key, v)?,
                "num_classes" => c.num_classes = parse_num(key, v)?,
                "epsilon" => {
                    c.epsilon = if v == "dense" {
                        f64::INFINITY
                    } else {
                        parse_num(key, v)?
                    }
                }
                "zeta" => c.zeta = parse_num(key, v)?,
                "lr" => c.lr = parse_num(key, v)?,
                "batch_size" => c.batch_size = parse_num(key, v)?,
                "epochs" => c.epochs = parse_num(key, v)?,
                "seed" => c.seed = parse_num(key, v)?,
                "rewire_enabled" => c.rewire_enabled = parse_bool(key, v)?,
                "fixed_topology" => c.fixed_topology = (!v.is_empty() && v != "none").then(|| PathBuf::from(v)),
                "init_mode" => c.init_mode = v.parse()?,
                _ => return Err(Error::Config(format!("line {}: unknown key {key:?}", n + 1))),
            }
        }
        c.validate()?;
        if c.init_mode == InitMode::SameAsCheckpoint && c.fixed_topology.is_none() {
            return Err(Error::Config("init_mode same-as-checkpoint needs fixed_topology".into()));
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text)
    }

    /// Canonical text form; `parse(to_text())` is the identity.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let fixed = self
            .fixed_topology
            .as_ref()
            .map_or_else(|| "none".to_string(), |p| p.display().to_string());
        let values = [
            self.vocab_size.to_string(),
            self.embed_dim.to_string(),
            self.hidden_dim.to_string(),
            self.seq_len.to_string(),
            self.num_classes.to_string(),
            format_f64(self.epsilon),
            format_f64(self.zeta),
            format_f64(self.lr),
            self.batch_size.to_string(),
            self.epochs.to_string(),
            self.seed.to_string(),
            self.rewire_enabled.to_string(),
            fixed,
            self.init_mode.as_str().to_string(),
        ];
        for (k, v) in KEYS.iter().zip(values) {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }
}
