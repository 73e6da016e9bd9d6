use std::fmt::Write as _;
use std::path::PathBuf;

use crate::config::ModelConfig;
use crate::error::{Error, Result};

/// Environment variable consulted when no dataset root is configured.
pub const DATA_ROOT_ENV: &str = "BUSI_ROOT";

/// Every knob of a training or evaluation run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops after this many optimiser steps even mid-epoch.
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub lr: f64,
    pub train_fraction: f64,
    pub stratify: bool,
    pub augment: bool,
    /// Write `epoch_N.bin` every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Probability threshold; `p > threshold` is foreground.
    pub threshold: f64,
    /// Use only this many discovered pairs, drawn by seed.
    pub subset: Option<usize>,
    pub lambda_seg: f64,
    pub lambda_dc: f64,
    pub sigma_seg: f64,
    pub sigma_dc: f64,
    pub data_root: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            batch_size: 16,
            epochs: 50,
            max_steps: None,
            seed: 0,
            lr: 1e-3,
            train_fraction: 0.8,
            stratify: true,
            augment: true,
            checkpoint_every: 10,
            threshold: 0.5,
            subset: None,
            lambda_seg: 1.0,
            lambda_dc: 1.0,
            sigma_seg: 1.0,
            sigma_dc: 1.0,
            data_root: None,
            out_dir: PathBuf::from("runs"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

fn parse_opt<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.is_empty() || value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl RunConfig {
    pub const KEYS: [&'static str; 26] = [
        "depth",
        "base_channels",
        "input_channels",
        "image_size",
        "lstm_hidden",
        "lstm_layers",
        "spatial_kernel",
        "distance_threshold",
        "dropout",
        "batch_size",
        "epochs",
        "max_steps",
        "seed",
        "lr",
        "train_fraction",
        "stratify",
        "augment",
        "checkpoint_every",
        "threshold",
        "subset",
        "lambda_seg",
        "lambda_dc",
        "sigma_seg",
        "sigma_dc",
        "data_root",
        "out_dir",
    ];

    /// Sets one field by name. Dashes and underscores are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = key.trim().replace('-', "_");
        let v = value.trim();
        let m = &mut self.model;
        match k.as_str() {
            "depth" => m.depth = parse(&k, v)?,
            "base_channels" => m.base_channels = parse(&k, v)?,
            "input_channels" => m.input_channels = parse(&k, v)?,
            "image_size" => m.image_size = parse(&k, v)?,
            "lstm_hidden" => m.lstm_hidden = parse(&k, v)?,
            "lstm_layers" => m.lstm_layers = parse(&k, v)?,
            "spatial_kernel" => m.spatial_kernel = parse(&k, v)?,
            "distance_threshold" | "d" => m.distance_threshold = parse(&k, v)?,
            "dropout" => m.dropout = parse(&k, v)?,
            "batch_size" => self.batch_size = parse(&k, v)?,
            "epochs" => self.epochs = parse(&k, v)?,
            "max_steps" => self.max_steps = parse_opt(&k, v)?,
            "seed" => self.seed = parse(&k, v)?,
            "lr" | "learning_rate" => self.lr = parse(&k, v)?,
            "train_fraction" => self.train_fraction = parse(&k, v)?,
            "stratify" => self.stratify = parse_bool(&k, v)?,
            "augment" => self.augment = parse_bool(&k, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(&k, v)?,
            "threshold" => self.threshold = parse(&k, v)?,
            "subset" => self.subset = parse_opt(&k, v)?,
            "lambda_seg" => self.lambda_seg = parse(&k, v)?,
            "lambda_dc" => self.lambda_dc = parse(&k, v)?,
            "sigma_seg" => self.sigma_seg = parse(&k, v)?,
            "sigma_dc" => self.sigma_dc = parse(&k, v)?,
            "data_root" => self.data_root = (!v.is_empty()).then(|| PathBuf::from(v)),
            "out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {raw:?}", n + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Configured root, else the environment variable.
    pub fn resolve_data_root(&self) -> Option<PathBuf> {
        self.data_root
            .clone()
            .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be non-negative", self.lr)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "train_fraction {} must be in (0, 1]",
                self.train_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} must be in [0, 1)", self.threshold)));
        }
        for (k, v) in [
            ("lambda_seg", self.lambda_seg),
            ("lambda_dc", self.lambda_dc),
            ("sigma_seg", self.sigma_seg),
            ("sigma_dc", self.sigma_dc),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} {v} must be positive")));
            }
        }
        Ok(())
    }

    /// `key=value` text that [`RunConfig::from_text`] reads back.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        put("depth", m.depth.to_string());
        put("base_channels", m.base_channels.to_string());
        put("input_channels", m.input_channels.to_string());
        put("image_size", m.image_size.to_string());
        put("lstm_hidden", m.lstm_hidden.to_string());
        put("lstm_layers", m.lstm_layers.to_string());
        put("spatial_kernel", m.spatial_kernel.to_string());
        put("distance_threshold", m.distance_threshold.to_string());
        put("dropout", m.dropout.to_string());
        put("batch_size", self.batch_size.to_string());
        put("epochs", self.epochs.to_string());
        put("max_steps", opt(self.max_steps.map(|v| v.to_string())));
        put("seed", self.seed.to_string());
        put("lr", self.lr.to_string());
        put("train_fraction", self.train_fraction.to_string());
        put("stratify", self.stratify.to_string());
        put("augment", self.augment.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("threshold", self.threshold.to_string());
        put("subset", opt(self.subset.map(|v| v.to_string())));
        put("lambda_seg", self.lambda_seg.to_string());
        put("lambda_dc", self.lambda_dc.to_string());
        put("sigma_seg", self.sigma_seg.to_string());
        put("sigma_dc", self.sigma_dc.to_string());
        if let Some(root) = &self.data_root {
            put("data_root", root.display().to_string());
        }
        put("out_dir", self.out_dir.display().to_string());
        s
    }
}
