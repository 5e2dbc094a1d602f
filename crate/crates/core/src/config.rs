//! Run configuration, serialized as flat `key=value` lines.

use std::collections::BTreeMap;
use std::fmt::{self, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::layers::StackLayout;
use crate::tensor::PaddingMode;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    HyCube,
    HyCubePlus,
    HyPlane,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::HyCube => "hycube",
            Variant::HyCubePlus => "hycube-plus",
            Variant::HyPlane => "hyplane",
        })
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "hycube" => Ok(Variant::HyCube),
            "hycube-plus" | "hycube_plus" => Ok(Variant::HyCubePlus),
            "hyplane" => Ok(Variant::HyPlane),
            _ => Err(format!("unknown variant {s:?}")),
        }
    }
}

fn layout_name(l: StackLayout) -> &'static str {
    match l {
        StackLayout::Alternate => "alternate",
        StackLayout::Standard => "standard",
    }
}

pub fn parse_layout(s: &str) -> std::result::Result<StackLayout, String> {
    match s {
        "alternate" => Ok(StackLayout::Alternate),
        "standard" => Ok(StackLayout::Standard),
        _ => Err(format!("unknown stack {s:?}")),
    }
}

fn padding_name(p: PaddingMode) -> &'static str {
    match p {
        PaddingMode::Circular => "circular",
        PaddingMode::Zero => "zero",
    }
}

pub fn parse_padding(s: &str) -> std::result::Result<PaddingMode, String> {
    match s {
        "circular" => Ok(PaddingMode::Circular),
        "zero" => Ok(PaddingMode::Zero),
        _ => Err(format!("unknown padding {s:?}")),
    }
}

/// Candidate set used by the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeMode {
    /// Every entity is a candidate (1-N scoring).
    Full,
    /// The target plus `rate` sampled corruptions per masked position.
    Sampled { rate: usize },
}

/// `(d1, d2)` with `d1 * d2 = d`, `d1 <= d2`, as square as possible.
pub fn default_factorization(d: usize) -> (usize, usize) {
    let mut d1 = (d as f64).sqrt() as usize;
    while d1 > 1 && d % d1 != 0 {
        d1 -= 1;
    }
    let d1 = d1.max(1);
    (d1, d / d1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    pub stack: StackLayout,
    pub padding: PaddingMode,
    pub dim: usize,
    pub d1: usize,
    pub d2: usize,
    /// Height/width padding; the kernel side is `2 * pad + 1`.
    pub pad: usize,
    pub channels: usize,
    pub pool: usize,
    pub input_dropout: f64,
    pub feature_dropout: f64,
    pub lr: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub negatives: NegativeMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: Variant::HyCube,
            stack: StackLayout::Alternate,
            padding: PaddingMode::Circular,
            dim: 400,
            d1: 20,
            d2: 20,
            pad: 1,
            channels: 8,
            pool: 4,
            input_dropout: 0.2,
            feature_dropout: 0.3,
            lr: 0.001,
            lr_decay: 0.995,
            batch_size: 128,
            max_epochs: 500,
            patience: 50,
            seed: 0,
            negatives: NegativeMode::Full,
        }
    }
}

impl RunConfig {
    /// Sets `dim` and re-derives the default `d1 x d2` factorization.
    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        (self.d1, self.d2) = default_factorization(dim);
        self
    }

    pub fn kernel_size(&self) -> usize {
        2 * self.pad + 1
    }

    pub fn pooled_channels(&self) -> usize {
        self.channels / self.pool.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.dim == 0 || self.d1 * self.d2 != self.dim {
            return bad(format!("d1 * d2 = {} * {} must equal d = {}", self.d1, self.d2, self.dim));
        }
        if self.channels == 0 || self.pool == 0 || self.channels % self.pool != 0 {
            return bad(format!(
                "pool window {} must divide the {} conv channels",
                self.pool, self.channels
            ));
        }
        if self.variant == Variant::HyCubePlus && self.pooled_channels() != 2 {
            return bad(format!(
                "hycube-plus adds a 2-plane residual, so channels / pool must be 2 (got {})",
                self.pooled_channels()
            ));
        }
        for (name, rate) in [("input", self.input_dropout), ("feature", self.feature_dropout)] {
            if !(0.0..1.0).contains(&rate) {
                return bad(format!("{name} dropout {rate} outside [0, 1)"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr decay {} outside (0, 1]", self.lr_decay));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if let NegativeMode::Sampled { rate: 0 } = self.negatives {
            return bad("sampled negatives need a rate >= 1".into());
        }
        Ok(())
    }

    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let (mode, rate) = match self.negatives {
            NegativeMode::Full => ("full", 0),
            NegativeMode::Sampled { rate } => ("sampled", rate),
        };
        let pairs: [(&str, String); 19] = [
            ("variant", self.variant.to_string()),
            ("stack", layout_name(self.stack).into()),
            ("padding", padding_name(self.padding).into()),
            ("dim", self.dim.to_string()),
            ("d1", self.d1.to_string()),
            ("d2", self.d2.to_string()),
            ("pad", self.pad.to_string()),
            ("channels", self.channels.to_string()),
            ("pool", self.pool.to_string()),
            ("input_dropout", format!("{:?}", self.input_dropout)),
            ("feature_dropout", format!("{:?}", self.feature_dropout)),
            ("lr", format!("{:?}", self.lr)),
            ("lr_decay", format!("{:?}", self.lr_decay)),
            ("batch_size", self.batch_size.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("neg_mode", mode.into()),
            ("neg_rate", rate.to_string()),
        ];
        for (k, v) in pairs {
            writeln!(out, "{k}={v}").unwrap();
        }
        out
    }

    /// Applies `key=value` lines on top of `self`. Unknown keys are errors.
    pub fn apply_key_value(mut self, text: &str) -> Result<Self> {
        let kv = parse_key_value(text)?;
        let mut neg_mode: Option<String> = None;
        let mut neg_rate: Option<usize> = None;
        for (line, key, value) in kv {
            let err = |message: String| ConfigError::Parse { line, message };
            fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
                v.parse().map_err(|_| format!("cannot parse {v:?}"))
            }
            let r: std::result::Result<(), String> = (|| {
                match key.as_str() {
                    "variant" => self.variant = value.parse()?,
                    "stack" => self.stack = parse_layout(&value)?,
                    "padding" => self.padding = parse_padding(&value)?,
                    "dim" => self.dim = num(&value)?,
                    "d1" => self.d1 = num(&value)?,
                    "d2" => self.d2 = num(&value)?,
                    "pad" => self.pad = num(&value)?,
                    "channels" => self.channels = num(&value)?,
                    "pool" => self.pool = num(&value)?,
                    "input_dropout" => self.input_dropout = num(&value)?,
                    "feature_dropout" => self.feature_dropout = num(&value)?,
                    "lr" => self.lr = num(&value)?,
                    "lr_decay" => self.lr_decay = num(&value)?,
                    "batch_size" => self.batch_size = num(&value)?,
                    "max_epochs" => self.max_epochs = num(&value)?,
                    "patience" => self.patience = num(&value)?,
                    "seed" => self.seed = num(&value)?,
                    "neg_mode" => neg_mode = Some(value.clone()),
                    "neg_rate" => neg_rate = Some(num(&value)?),
                    other => return Err(format!("unknown key {other:?}")),
                }
                Ok(())
            })();
            r.map_err(err)?;
        }
        match neg_mode.as_deref() {
            None => {
                if let (NegativeMode::Sampled { .. }, Some(rate)) = (self.negatives, neg_rate) {
                    self.negatives = NegativeMode::Sampled { rate };
                }
            }
            Some("full") => self.negatives = NegativeMode::Full,
            Some("sampled") => {
                let rate = neg_rate.ok_or_else(|| {
                    ConfigError::Invalid("neg_mode=sampled requires neg_rate".into())
                })?;
                self.negatives = NegativeMode::Sampled { rate };
            }
            Some(other) => return Err(ConfigError::Invalid(format!("unknown neg_mode {other:?}"))),
        }
        Ok(self)
    }

    pub fn from_key_value(text: &str) -> Result<Self> {
        let cfg = RunConfig::default().apply_key_value(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `(line number, key, value)` triples; blank lines and `#` comments skipped.
pub fn parse_key_value(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
            line: idx + 1,
            message: format!("expected key=value, got {line:?}"),
        })?;
        out.push((idx + 1, k.trim().to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

/// Parses `key=value` lines into a map (last value wins).
pub fn key_value_map(text: &str) -> Result<BTreeMap<String, String>> {
    Ok(parse_key_value(text)?
        .into_iter()
        .map(|(_, k, v)| (k, v))
        .collect())
}
