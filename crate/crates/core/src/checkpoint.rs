//! Binary checkpoints.
//!
//! Layout (little-endian): `"VCCK"`, `u32` version, `u64` header length, a
//! JSON header (configuration, model description, step, loss history), `u32`
//! entry count, then per parameter: `u32` name length, UTF-8 name
//! (`store/parameter`), `u32` rank, `u64` per dimension, `u64` Adam step,
//! and the values, first and second Adam moments as `f64`.

use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use vclab_autodiff::{ParamStore, Real};

use crate::config::TrainConfig;
use crate::error::{Result, VclabError};
use crate::features::DomainCorpus;
use crate::model::{Model, ModelInfo};
use crate::trainer::{LossHistory, Trainer};
use crate::util::{read_file, write_atomic, Reader};

pub const MAGIC: &[u8; 4] = b"VCCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: TrainConfig,
    pub info: ModelInfo,
    pub step: usize,
    pub history: LossHistory,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub adam_step: u64,
    pub value: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&e.adam_step.to_le_bytes());
            for xs in [&e.value, &e.m, &e.v] {
                for x in xs {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |detail: String| VclabError::Format { what: "checkpoint", detail };
        let mut r = Reader::new(bytes, "checkpoint");
        if r.take(4)? != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let hlen = r.u64()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(hlen)?)?;
        let count = r.u32()?;
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|e| bad(e.to_string()))?;
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let adam_step = r.u64()?;
            let n: usize = shape.iter().product();
            let mut read = || (0..n).map(|_| r.f64()).collect::<Result<Vec<f64>>>();
            let (value, m, v) = (read()?, read()?, read()?);
            entries.push(Entry { name, shape, adam_step, value, m, v });
        }
        r.finish()?;
        Ok(Checkpoint { header, entries })
    }

    /// Snapshot of a trainer's full state.
    pub fn capture<T: Real>(trainer: &Trainer<T>) -> Self {
        let mut entries = Vec::new();
        for (group, store) in trainer.model.stores() {
            for p in store.iter() {
                let mut e = Entry {
                    name: format!("{group}/{}", p.name),
                    shape: p.value.shape().to_vec(),
                    adam_step: p.adam.step,
                    value: Vec::new(),
                    m: Vec::new(),
                    v: Vec::new(),
                };
                e.value = p.value.iter().map(|x| x.as_f64()).collect();
                e.m = p.adam.m.iter().map(|x| x.as_f64()).collect();
                e.v = p.adam.v.iter().map(|x| x.as_f64()).collect();
                entries.push(e);
            }
        }
        let header = CheckpointHeader {
            config: trainer.config.clone(),
            info: trainer.model.info.clone(),
            step: trainer.step,
            history: trainer.history.clone(),
        };
        Checkpoint { header, entries }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }

    /// Rebuilds the networks and restores every parameter and Adam state.
    pub fn model<T: Real>(&self) -> Result<Model<T>> {
        let mut model = Model::<T>::new(self.header.info.clone())?;
        let expected: usize = model.stores().iter().map(|(_, s)| s.len()).sum();
        if expected != self.entries.len() {
            return Err(VclabError::Format {
                what: "checkpoint",
                detail: format!("{} entries for a model with {expected} parameters", self.entries.len()),
            });
        }
        for e in &self.entries {
            let (group, name) = e.name.split_once('/').unwrap_or(("", &e.name));
            let store: &mut ParamStore<T> = model
                .stores_mut()
                .into_iter()
                .find(|(g, _)| *g == group)
                .map(|(_, s)| s)
                .ok_or_else(|| VclabError::Format { what: "checkpoint", detail: format!("unknown store in `{}`", e.name) })?;
            let id = store
                .find(name)
                .ok_or_else(|| VclabError::Format { what: "checkpoint", detail: format!("unknown parameter `{}`", e.name) })?;
            let p = store.get_mut(id);
            if p.value.shape() != e.shape.as_slice() {
                return Err(VclabError::Format {
                    what: "checkpoint",
                    detail: format!("`{}` has shape {:?}, expected {:?}", e.name, e.shape, p.value.shape()),
                });
            }
            let arr = |xs: &[f64]| ArrayD::from_shape_vec(IxDyn(&e.shape), xs.iter().map(|&x| T::lit(x)).collect()).unwrap();
            p.value = arr(&e.value);
            p.adam.m = arr(&e.m);
            p.adam.v = arr(&e.v);
            p.adam.step = e.adam_step;
        }
        Ok(model)
    }

    /// A trainer that continues from this checkpoint.
    pub fn resume<T: Real>(&self, corpus: &DomainCorpus) -> Result<Trainer<T>> {
        let mut t = Trainer::with_model(self.header.config.clone(), self.model()?, corpus)?;
        t.step = self.header.step;
        t.history = self.header.history.clone();
        Ok(t)
    }
}
