//! A network of either precision, built fresh or from a checkpoint.

use std::collections::BTreeMap;

use icon_core::metrics::{fnr, mae, EvalPair};
use icon_core::network::{IconConfig, IconNet};
use icon_core::{DType, Real, Tensor};

use crate::checkpoint::{to_bytes, Checkpoint};
use crate::config::Settings;
use crate::data::{stack, Sample};
use crate::error::{CliError, Result};

pub enum Model {
    F32(IconNet<f32>),
    F64(IconNet<f64>),
}

fn predict_with<T: Real>(net: &IconNet<T>, images: &Tensor<f64>) -> Result<Tensor<f64>> {
    Ok(net.infer(&images.cast(), None)?.cast())
}

impl Model {
    pub fn new(config: &IconConfig, seed: u64, dtype: DType) -> Result<Self> {
        Ok(match dtype {
            DType::F32 => Model::F32(IconNet::new(config.clone(), seed)?),
            DType::F64 => Model::F64(IconNet::new(config.clone(), seed)?),
        })
    }

    /// Rebuilds the network described by the checkpoint metadata and loads
    /// its tensors. The stored dtype selects the precision.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, Settings)> {
        let settings = Settings::from_model_meta(&ck.index.meta)?;
        let dtype = match ck.index.tensors.first().map(|t| t.dtype.as_str()) {
            Some("f32") => DType::F32,
            Some("f64") => DType::F64,
            _ => return Err(CliError::Validation("checkpoint holds no tensors of a known dtype".into())),
        };
        let mut model = Model::new(&settings.model, 0, dtype)?;
        match &mut model {
            Model::F32(n) => ck.restore(&mut n.store)?,
            Model::F64(n) => ck.restore(&mut n.store)?,
        }
        Ok((model, settings))
    }

    pub fn dtype(&self) -> DType {
        match self {
            Model::F32(_) => DType::F32,
            Model::F64(_) => DType::F64,
        }
    }

    /// Saliency probabilities `[B,1,H,W]` for normalized images `[B,3,H,W]`.
    pub fn predict(&self, images: &Tensor<f64>) -> Result<Tensor<f64>> {
        match self {
            Model::F32(n) => predict_with(n, images),
            Model::F64(n) => predict_with(n, images),
        }
    }

    pub fn checkpoint_bytes(&self, meta: &BTreeMap<String, String>) -> Vec<u8> {
        match self {
            Model::F32(n) => to_bytes(&n.store, meta),
            Model::F64(n) => to_bytes(&n.store, meta),
        }
    }
}

/// Mean per-image MAE and mean FNR (images with foreground only) at the
/// 0.5 binarization, predicting `batch` samples at a time.
pub fn validation_scores(model: &Model, samples: &[Sample], batch: usize) -> Result<(f64, Option<f64>)> {
    let (mut mae_sum, mut fnrs) = (0.0, Vec::new());
    for chunk in samples.chunks(batch.max(1)) {
        let (images, masks) = stack(chunk);
        let probs = model.predict(&images)?;
        let hw = masks.len() / chunk.len();
        let (h, w) = (masks.shape()[2], masks.shape()[3]);
        for k in 0..chunk.len() {
            let p = &probs.data()[k * hw..(k + 1) * hw];
            let g = &masks.data()[k * hw..(k + 1) * hw];
            let pair = EvalPair::new(p, g, w, h)?;
            mae_sum += mae(&pair);
            if let Ok(v) = fnr(&pair, 0.5) {
                fnrs.push(v);
            }
        }
    }
    let fnr_mean = if fnrs.is_empty() { None } else { Some(fnrs.iter().sum::<f64>() / fnrs.len() as f64) };
    Ok((mae_sum / samples.len() as f64, fnr_mean))
}
