//! Checkpoint container.
//!
//! ```text
//! offset  size  content
//! 0       8     magic "ICONCKPT"
//! 8       4     format version, u32 little-endian (currently 1)
//! 12      8     index length N in bytes, u64 little-endian
//! 20      N     JSON index, UTF-8
//! 20+N    ...   tensor data, little-endian, packed in index order
//! ```
//!
//! The index is `{"version":1,"tensors":[{"name","dtype","kind","shape",
//! "offset","nbytes"}...],"meta":{...}}`; `offset` counts from the start of
//! the data section and `dtype` is `"f32"` or `"f64"`.

use std::collections::BTreeMap;
use std::path::Path;

use icon_core::params::{ParamKind, ParamStore};
use icon_core::{DType, Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{read, write, CliError, Result};

pub const MAGIC: &[u8; 8] = b"ICONCKPT";
pub const VERSION: u32 = 1;
const HEADER: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub dtype: String,
    pub kind: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Index {
    pub version: u32,
    pub tensors: Vec<TensorRecord>,
    pub meta: BTreeMap<String, String>,
}

fn kind_name(kind: ParamKind) -> &'static str {
    match kind {
        ParamKind::Weight => "weight",
        ParamKind::Buffer => "buffer",
    }
}

pub fn to_bytes<T: Real>(store: &ParamStore<T>, meta: &BTreeMap<String, String>) -> Vec<u8> {
    let mut data = Vec::new();
    let mut tensors = Vec::with_capacity(store.len());
    for e in store.entries() {
        let start = data.len() as u64;
        for &v in e.tensor.data() {
            match T::DTYPE {
                DType::F32 => data.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                DType::F64 => data.extend_from_slice(&v.as_f64().to_le_bytes()),
            }
        }
        tensors.push(TensorRecord {
            name: e.name.clone(),
            dtype: T::DTYPE.name().into(),
            kind: kind_name(e.kind).into(),
            shape: e.tensor.shape().to_vec(),
            offset: start,
            nbytes: data.len() as u64 - start,
        });
    }
    let index = serde_json::to_vec(&Index { version: VERSION, tensors, meta: meta.clone() }).expect("index serializes");
    let mut out = Vec::with_capacity(HEADER + index.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(index.len() as u64).to_le_bytes());
    out.extend_from_slice(&index);
    out.extend_from_slice(&data);
    out
}

/// Decoded checkpoint: the index plus every tensor converted to `f64`.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub index: Index,
    pub tensors: Vec<(TensorRecord, Tensor<f64>)>,
}

impl Checkpoint {
    pub fn parse(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: String| CliError::format(path, m);
        if bytes.len() < HEADER || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let data_start =
            HEADER.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated index".into()))?;
        let index: Index =
            serde_json::from_slice(&bytes[HEADER..data_start]).map_err(|e| bad(format!("bad index: {e}")))?;
        let data = &bytes[data_start..];
        let mut tensors = Vec::with_capacity(index.tensors.len());
        for rec in &index.tensors {
            let dtype =
                DType::parse(&rec.dtype).ok_or_else(|| bad(format!("{}: unknown dtype {}", rec.name, rec.dtype)))?;
            let count: usize = rec.shape.iter().product();
            let (start, n) = (rec.offset as usize, rec.nbytes as usize);
            if n != count * dtype.size_of() || start.checked_add(n).is_none_or(|e| e > data.len()) {
                return Err(bad(format!("{}: data range does not match its shape", rec.name)));
            }
            let raw = &data[start..start + n];
            let values: Vec<f64> = match dtype {
                DType::F32 => raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
                DType::F64 => raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            };
            tensors.push((rec.clone(), Tensor::new(&rec.shape, values)?));
        }
        Ok(Self { index, tensors })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read(path)?, path)
    }

    /// Copies every stored tensor into `store`, matching by name. Missing,
    /// extra or misshapen tensors are validation errors.
    pub fn restore<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        if self.tensors.len() != store.len() {
            return Err(CliError::Validation(format!(
                "checkpoint holds {} tensors, model expects {}",
                self.tensors.len(),
                store.len()
            )));
        }
        for (rec, t) in &self.tensors {
            let id =
                store.find(&rec.name).ok_or_else(|| CliError::Validation(format!("unknown tensor {}", rec.name)))?;
            if store.get(id).shape() != t.shape() {
                return Err(CliError::Validation(format!(
                    "{}: checkpoint shape {:?}, model shape {:?}",
                    rec.name,
                    t.shape(),
                    store.get(id).shape()
                )));
            }
            *store.get_mut(id) = t.cast();
        }
        Ok(())
    }
}

pub fn save<T: Real>(path: &Path, store: &ParamStore<T>, meta: &BTreeMap<String, String>) -> Result<()> {
    write(path, &to_bytes(store, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store<T: Real>() -> ParamStore<T> {
        let mut s = ParamStore::new();
        s.add("a.weight", Tensor::from_f64(&[2, 3], &[1.0, -2.5, 3.25, 0.0, 1e-3, 7.0]).unwrap(), ParamKind::Weight);
        s.add("a.running_mean", Tensor::from_f64(&[2], &[0.5, -0.5]).unwrap(), ParamKind::Buffer);
        s
    }

    #[test]
    fn layout_and_round_trip() {
        let meta = BTreeMap::from([("model.input".to_string(), "64x64".to_string())]);
        let bytes = to_bytes(&store::<f32>(), &meta);
        assert_eq!(&bytes[..8], b"ICONCKPT");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 20 + n + 8 * 4);
        assert_eq!(&bytes[20 + n..24 + n], &1.0f32.to_le_bytes());
        let ck = Checkpoint::parse(&bytes, Path::new("x")).unwrap();
        assert_eq!(ck.index.meta, meta);
        assert_eq!(ck.index.tensors[1].offset, 24);
        let mut back = store::<f32>();
        back.get_mut(back.find("a.weight").unwrap()).data_mut()[0] = 9.0;
        ck.restore(&mut back).unwrap();
        assert_eq!(back, store::<f32>());
        assert_eq!(to_bytes(&back, &meta), bytes);
    }

    #[test]
    fn f64_is_exact() {
        let bytes = to_bytes(&store::<f64>(), &BTreeMap::new());
        let ck = Checkpoint::parse(&bytes, Path::new("x")).unwrap();
        let mut back = store::<f64>();
        ck.restore(&mut back).unwrap();
        assert_eq!(back, store::<f64>());
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = to_bytes(&store::<f64>(), &BTreeMap::new());
        let p = Path::new("x");
        assert!(Checkpoint::parse(&bytes[..10], p).is_err());
        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(Checkpoint::parse(&b, p).is_err());
        assert!(Checkpoint::parse(&bytes[..bytes.len() - 1], p).is_err());
        let mut other = ParamStore::<f64>::new();
        other.add("a.weight", Tensor::zeros(&[3, 2]), ParamKind::Weight);
        other.add("a.running_mean", Tensor::zeros(&[2]), ParamKind::Buffer);
        let ck = Checkpoint::parse(&bytes, p).unwrap();
        assert!(matches!(ck.restore(&mut other), Err(CliError::Validation(_))));
    }
}
