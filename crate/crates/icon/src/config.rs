//! Plain-text `key = value` configuration.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Keys are grouped by prefix (`model.`, `data.`, `train.`, `eval.`); an
//! unknown key is a validation error. Lists are comma separated and sizes
//! are written `HxW`. See the README for the full key table.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use icon_core::dfa::Branch;
use icon_core::metrics::MetricSettings;
use icon_core::network::{IconConfig, HEADS};
use icon_core::optim::SgdConfig;
use icon_core::DType;

use crate::error::{read, CliError, Result};

pub type KeyValues = BTreeMap<String, String>;

pub fn parse_key_values(text: &str) -> Result<KeyValues> {
    let mut out = KeyValues::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("line {}: expected key = value", no + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Parses `key=value` command-line overrides.
pub fn parse_overrides(items: &[String]) -> Result<KeyValues> {
    items
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| CliError::Validation(format!("override `{s}` is not key=value")))
        })
        .collect()
}

/// Per-channel image normalization `(x / 255 - mean) / std`, RGB order.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { mean: [0.485, 0.456, 0.406], std: [0.229, 0.224, 0.225] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    pub warmup_epochs: usize,
    /// Global gradient-norm threshold; 0 disables clipping.
    pub clip_norm: f64,
    pub bn_momentum: f64,
    pub dtype: DType,
    pub flip: bool,
    /// Smallest random crop side as a fraction of the image; 1 disables cropping.
    pub crop_scale: f64,
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 60,
            batch_size: 8,
            sgd: SgdConfig::default(),
            warmup_epochs: 2,
            clip_norm: 5.0,
            bn_momentum: 0.1,
            dtype: DType::F32,
            flip: true,
            crop_scale: 0.85,
            train_dir: None,
            val_dir: None,
            out_dir: PathBuf::from("run"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct EvalConfig {
    pub metrics: MetricSettings,
    /// Worker threads; `None` uses `ICON_WORKERS` or the available cores.
    pub workers: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Settings {
    pub model: IconConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

fn val<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse().map_err(|e| CliError::Validation(format!("{key} = {v}: {e}")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    v.split(',').map(|s| val(key, s.trim())).collect()
}

fn array<T: FromStr + Copy + Default, const N: usize>(key: &str, v: &str) -> Result<[T; N]>
where
    T::Err: Display,
{
    let items = list::<T>(key, v)?;
    items.try_into().map_err(|_| CliError::Validation(format!("{key} needs exactly {N} values")))
}

fn size(key: &str, v: &str) -> Result<(usize, usize)> {
    let (a, b) = v.split_once('x').ok_or_else(|| CliError::Validation(format!("{key} = {v}: expected HxW")))?;
    Ok((val(key, a.trim())?, val(key, b.trim())?))
}

fn auto<T: FromStr>(key: &str, v: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    if v == "auto" || v == "none" {
        Ok(None)
    } else {
        val(key, v).map(Some)
    }
}

fn branch(key: &str, v: &str) -> Result<Branch> {
    match v {
        "asymmetric" => Ok(Branch::Asymmetric),
        "original" => Ok(Branch::Original),
        _ => match v.strip_prefix("atrous") {
            Some(rate) => Ok(Branch::Atrous(val(key, rate)?)),
            None => Err(CliError::Validation(format!("{key}: unknown branch `{v}`"))),
        },
    }
}

fn branch_name(b: Branch) -> String {
    match b {
        Branch::Asymmetric => "asymmetric".into(),
        Branch::Original => "original".into(),
        Branch::Atrous(r) => format!("atrous{r}"),
    }
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn opt<T: Display>(v: Option<T>, none: &str) -> String {
    v.map_or_else(|| none.to_string(), |v| v.to_string())
}

impl Settings {
    pub fn load(path: &Path, overrides: &KeyValues) -> Result<Self> {
        let text = String::from_utf8(read(path)?).map_err(|_| CliError::format(path, "config is not UTF-8"))?;
        let mut kv = parse_key_values(&text)?;
        kv.extend(overrides.clone());
        Self::from_key_values(&kv)
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut s = Settings::default();
        for (k, v) in kv {
            s.set(k, v)?;
        }
        s.model.validate()?;
        s.check()?;
        Ok(s)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let (m, t, e) = (&mut self.model, &mut self.train, &mut self.eval);
        match key {
            "model.backbone_widths" => m.backbone_widths = array(key, v)?,
            "model.decoder_width" => m.decoder_width = val(key, v)?,
            "model.dfa_branch_width" => m.dfa.branch_width = val(key, v)?,
            "model.dfa_branches" => {
                let names: Vec<String> = list(key, v)?;
                let b: Vec<Branch> = names.iter().map(|n| branch(key, n)).collect::<Result<_>>()?;
                m.dfa.branches = b.try_into().map_err(|_| CliError::Validation(format!("{key} needs 3 branches")))?;
            }
            "model.dfa_reduce_to" => m.dfa.reduce_to = auto(key, v)?,
            "model.ice_ratio" => m.ice_ratio = val(key, v)?,
            "model.capsule_pose" => m.capsule.pose = size(key, v)?,
            "model.capsule_lower_types" => m.capsule.lower_types = val(key, v)?,
            "model.capsule_higher_types" => m.capsule.higher_types = val(key, v)?,
            "model.capsule_grid" => m.capsule.grid = auto(key, v)?,
            "model.routing_iterations" => m.capsule.iterations = val(key, v)?,
            "model.input" => m.input = size(key, v)?,
            "model.head_weights" => m.head_weights = array::<f64, HEADS>(key, v)?,
            "data.mean" => self.data.mean = array(key, v)?,
            "data.std" => self.data.std = array(key, v)?,
            "train.seed" => t.seed = val(key, v)?,
            "train.epochs" => t.epochs = val(key, v)?,
            "train.batch_size" => t.batch_size = val(key, v)?,
            "train.lr" => t.sgd.lr = val(key, v)?,
            "train.momentum" => t.sgd.momentum = val(key, v)?,
            "train.weight_decay" => t.sgd.weight_decay = val(key, v)?,
            "train.warmup_epochs" => t.warmup_epochs = val(key, v)?,
            "train.clip_norm" => t.clip_norm = val(key, v)?,
            "train.bn_momentum" => t.bn_momentum = val(key, v)?,
            "train.dtype" => {
                t.dtype = DType::parse(v).ok_or_else(|| CliError::Validation(format!("{key}: unknown dtype {v}")))?
            }
            "train.flip" => t.flip = val(key, v)?,
            "train.crop_scale" => t.crop_scale = val(key, v)?,
            "train.train_dir" => t.train_dir = Some(PathBuf::from(v)),
            "train.val_dir" => t.val_dir = Some(PathBuf::from(v)),
            "train.out_dir" => t.out_dir = PathBuf::from(v),
            "eval.fnr_threshold" => e.metrics.fnr_threshold = val(key, v)?,
            "eval.wfm_beta2" => e.metrics.wfm_beta2 = val(key, v)?,
            "eval.curve_beta2" => e.metrics.curve_beta2 = val(key, v)?,
            "eval.s_alpha" => e.metrics.s_alpha = val(key, v)?,
            "eval.workers" => e.workers = auto(key, v)?,
            _ => return Err(CliError::Validation(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    fn check(&self) -> Result<()> {
        let t = &self.train;
        let bad = |m: &str| Err(CliError::Validation(m.into()));
        if t.epochs == 0 || t.batch_size == 0 {
            return bad("train.epochs and train.batch_size must be positive");
        }
        if !(t.sgd.lr > 0.0) || !(0.0..1.0).contains(&t.sgd.momentum) || t.sgd.weight_decay < 0.0 {
            return bad("train.lr must be positive, train.momentum in [0,1), train.weight_decay >= 0");
        }
        if t.warmup_epochs >= t.epochs {
            return bad("train.warmup_epochs must be smaller than train.epochs");
        }
        if !(t.clip_norm >= 0.0) || !(0.0..=1.0).contains(&t.bn_momentum) {
            return bad("train.clip_norm must be >= 0 and train.bn_momentum in [0,1]");
        }
        if !(t.crop_scale > 0.0 && t.crop_scale <= 1.0) {
            return bad("train.crop_scale must lie in (0,1]");
        }
        if self.data.std.iter().any(|&s| !(s > 0.0)) {
            return bad("data.std entries must be positive");
        }
        if self.eval.workers == Some(0) {
            return bad("eval.workers must be positive");
        }
        Ok(())
    }

    /// `model.*` and `data.*` keys, enough to rebuild the network and its
    /// input pipeline. Stored in checkpoint metadata.
    pub fn model_key_values(&self) -> KeyValues {
        let m = &self.model;
        let c = &m.capsule;
        [
            ("model.backbone_widths", join(&m.backbone_widths)),
            ("model.decoder_width", m.decoder_width.to_string()),
            ("model.dfa_branch_width", m.dfa.branch_width.to_string()),
            ("model.dfa_branches", m.dfa.branches.iter().map(|&b| branch_name(b)).collect::<Vec<_>>().join(",")),
            ("model.dfa_reduce_to", opt(m.dfa.reduce_to, "none")),
            ("model.ice_ratio", m.ice_ratio.to_string()),
            ("model.capsule_pose", format!("{}x{}", c.pose.0, c.pose.1)),
            ("model.capsule_lower_types", c.lower_types.to_string()),
            ("model.capsule_higher_types", c.higher_types.to_string()),
            ("model.capsule_grid", opt(c.grid, "auto")),
            ("model.routing_iterations", c.iterations.to_string()),
            ("model.input", format!("{}x{}", m.input.0, m.input.1)),
            ("model.head_weights", join(&m.head_weights)),
            ("data.mean", join(&self.data.mean)),
            ("data.std", join(&self.data.std)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Model and data settings recovered from checkpoint metadata.
    pub fn from_model_meta(meta: &KeyValues) -> Result<Self> {
        let kv: KeyValues = meta
            .iter()
            .filter(|(k, _)| k.starts_with("model.") || k.starts_with("data."))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Self::from_key_values(&kv)
    }
}
