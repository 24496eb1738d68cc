//! Training loop: SGD with momentum and weight decay, warm-up then linear
//! decay, global-norm clipping, per-epoch validation and best-checkpoint
//! selection by validation MAE.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use icon_core::losses::{cpr_graph, head_losses};
use icon_core::network::IconNet;
use icon_core::optim::{clip_global_norm, global_norm, LrSchedule, Sgd};
use icon_core::params::{Ctx, Mode, ParamKind, ParamStore};
use icon_core::{DType, Real, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::to_bytes;
use crate::config::Settings;
use crate::data::{augment, load_dataset, stack, DatasetIndex, Sample};
use crate::error::{write, CliError, Result};
use crate::model::{validation_scores, Model};

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Learning rate of the epoch's last iteration.
    pub lr: f64,
    pub train_loss: f64,
    pub grad_norm: f64,
    pub val_mae: f64,
    pub val_fnr: Option<f64>,
}

pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    /// Checkpoint bytes of the best epoch and of the final epoch.
    pub best_checkpoint: Vec<u8>,
    pub last_checkpoint: Vec<u8>,
}

impl TrainOutcome {
    pub fn best_model(&self) -> Result<Model> {
        let ck = crate::checkpoint::Checkpoint::parse(&self.best_checkpoint, Path::new("<best>"))?;
        Ok(Model::from_checkpoint(&ck)?.0)
    }
}

/// Trailing moving average with window `w` (shorter at the start).
pub fn smoothed(values: &[f64], w: usize) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

fn meta(settings: &Settings, epoch: usize, val_mae: f64) -> BTreeMap<String, String> {
    let mut m = settings.model_key_values();
    m.insert("train.epoch".into(), epoch.to_string());
    m.insert("train.seed".into(), settings.train.seed.to_string());
    m.insert("train.val_mae".into(), val_mae.to_string());
    m
}

fn dump_batch<T: Real>(
    dir: &Path,
    batch: &[Sample],
    images: &Tensor<f64>,
    masks: &Tensor<f64>,
    head_values: &[f64],
    where_: (usize, usize, f64),
    store: &ParamStore<T>,
) -> Result<PathBuf> {
    let mut t = ParamStore::<f64>::new();
    t.add("batch.image", images.clone(), ParamKind::Buffer);
    t.add("batch.mask", masks.clone(), ParamKind::Buffer);
    let mut m = BTreeMap::new();
    m.insert("epoch".to_string(), where_.0.to_string());
    m.insert("iteration".to_string(), where_.1.to_string());
    m.insert("lr".to_string(), where_.2.to_string());
    m.insert("names".to_string(), batch.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(","));
    m.insert("head_losses".to_string(), head_values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
    let path = dir.join("nan_batch.ckpt");
    write(&path, &to_bytes(&t, &m))?;
    write(&dir.join("nan_weights.ckpt"), &to_bytes(store, &BTreeMap::new()))?;
    Ok(path)
}

fn run<T: Real>(
    net: &mut IconNet<T>,
    settings: &Settings,
    train: &[Sample],
    val: &[Sample],
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(&EpochLog),
    wrap: fn(IconNet<T>) -> Model,
) -> Result<TrainOutcome> {
    let t = &settings.train;
    let per_epoch = train.len().div_ceil(t.batch_size);
    let schedule = LrSchedule::new(t.sgd.lr, t.warmup_epochs * per_epoch, t.epochs * per_epoch)?;
    let mut opt = Sgd::new(t.sgd, &net.store);
    let mut rng = ChaCha8Rng::seed_from_u64(t.seed ^ 0x7261_696e);
    let weights = settings.model.head_weights;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(usize, f64, Vec<u8>)> = None;
    let mut it = 0;
    for epoch in 1..=t.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut norm_sum, mut lr) = (0.0, 0.0, 0.0);
        for idx in order.chunks(t.batch_size) {
            let batch: Vec<Sample> = idx.iter().map(|&i| augment(&train[i], t.flip, t.crop_scale, &mut rng)).collect();
            let (images, masks) = stack(&batch);
            lr = schedule.lr(it);
            let mut ctx = Ctx::new(&net.store, Mode::Train);
            let x = ctx.input(images.cast());
            let target: Tensor<T> = masks.cast();
            let pred = net.forward(&mut ctx, x)?;
            let loss = cpr_graph(&mut ctx, &pred, &target, &weights)?;
            let value = ctx.graph.value(loss).item().as_f64();
            ctx.graph.backward(loss)?;
            let mut grads = ctx.param_grads();
            let norm = global_norm(&grads);
            if !value.is_finite() || !norm.is_finite() {
                let heads = head_losses(&mut ctx, &pred.heads(), &target)?;
                let hv: Vec<f64> = heads.iter().map(|&h| ctx.graph.value(h).item().as_f64()).collect();
                let mut msg =
                    format!("non-finite loss {value} (gradient norm {norm}) at epoch {epoch}, iteration {it}");
                if let Some(dir) = out_dir {
                    let p = dump_batch(dir, &batch, &images, &masks, &hv, (epoch, it, lr), &net.store)?;
                    msg.push_str(&format!("; batch dumped to {}", p.display()));
                }
                return Err(CliError::Validation(msg));
            }
            let stats = ctx.take_running_stats();
            drop(ctx);
            if t.clip_norm > 0.0 {
                clip_global_norm(&mut grads, t.clip_norm);
            }
            opt.step(&mut net.store, &grads, lr)?;
            stats.apply(&mut net.store, T::cst(t.bn_momentum));
            loss_sum += value;
            norm_sum += norm;
            it += 1;
        }
        let model = wrap(net.clone());
        let (val_mae, val_fnr) = validation_scores(&model, val, t.batch_size)?;
        let row = EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / per_epoch as f64,
            grad_norm: norm_sum / per_epoch as f64,
            val_mae,
            val_fnr,
        };
        progress(&row);
        log.push(row);
        if best.as_ref().is_none_or(|b| val_mae < b.1) {
            best = Some((epoch, val_mae, to_bytes(&net.store, &meta(settings, epoch, val_mae))));
        }
        if let Some(dir) = out_dir {
            write_log(&dir.join("loss.csv"), &log)?;
        }
    }
    let (best_epoch, best_val_mae, best_checkpoint) = best.expect("at least one epoch");
    let last = log.last().expect("at least one epoch");
    let last_checkpoint = to_bytes(&net.store, &meta(settings, last.epoch, last.val_mae));
    if let Some(dir) = out_dir {
        write(&dir.join("best.ckpt"), &best_checkpoint)?;
        write(&dir.join("last.ckpt"), &last_checkpoint)?;
    }
    Ok(TrainOutcome { log, best_epoch, best_val_mae, best_checkpoint, last_checkpoint })
}

pub fn write_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::format(path, e.to_string());
    w.write_record(["epoch", "lr", "train_loss", "grad_norm", "val_mae", "val_fnr"]).map_err(io)?;
    for r in log {
        let fnr = r.val_fnr.map_or_else(String::new, |v| v.to_string());
        w.write_record([
            r.epoch.to_string(),
            r.lr.to_string(),
            r.train_loss.to_string(),
            r.grad_norm.to_string(),
            r.val_mae.to_string(),
            fnr,
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::format(path, e.to_string()))?;
    write(path, &bytes)
}

/// Trains on in-memory samples. Files (`loss.csv`, `best.ckpt`,
/// `last.ckpt`) are written only when `out_dir` is given.
pub fn train_samples(
    settings: &Settings,
    train: &[Sample],
    val: &[Sample],
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(CliError::Validation("training and validation sets must be nonempty".into()));
    }
    let (cfg, seed) = (&settings.model, settings.train.seed);
    match settings.train.dtype {
        DType::F32 => {
            run(&mut IconNet::<f32>::new(cfg.clone(), seed)?, settings, train, val, out_dir, progress, Model::F32)
        }
        DType::F64 => {
            run(&mut IconNet::<f64>::new(cfg.clone(), seed)?, settings, train, val, out_dir, progress, Model::F64)
        }
    }
}

/// Loads `train.train_dir` (and `train.val_dir`, or every tenth training
/// pair when absent) and trains into `train.out_dir`.
pub fn train(settings: &Settings, progress: &mut dyn FnMut(&EpochLog)) -> Result<TrainOutcome> {
    let t = &settings.train;
    let dir = t.train_dir.as_ref().ok_or_else(|| CliError::Validation("train.train_dir is not set".into()))?;
    let size = settings.model.input;
    let all = load_dataset(&DatasetIndex::from_dir(dir, "train")?, size, &settings.data)?;
    let (train, val) = match &t.val_dir {
        Some(v) => (all, load_dataset(&DatasetIndex::from_dir(v, "val")?, size, &settings.data)?),
        None => {
            let (val, train): (Vec<_>, Vec<_>) = all.into_iter().enumerate().partition(|(i, _)| i % 10 == 9);
            (train.into_iter().map(|p| p.1).collect(), val.into_iter().map(|p| p.1).collect())
        }
    };
    train_samples(settings, &train, &val, Some(&t.out_dir), progress)
}
