//! Named-tensor container used for weights and training checkpoints.
//!
//! Layout, little-endian: magic "GPGM", version u32, tensor_count u32, then
//! per tensor: name_len u16, name bytes (UTF-8), rank u8, dims u32 x rank,
//! payload of f32 samples. Names are unique and stored sorted so identical
//! contents always serialize to identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{param_specs, ModelConfig, ParamStore};
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: [u8; 4] = *b"GPGM";
pub const WEIGHTS_VERSION: u32 = 1;

/// Arbitrary named f32 arrays with explicit dims. The weights file stores
/// model parameters as rank-4 entries; checkpoints add optimizer moments and
/// rank-1 counters under reserved prefixes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NamedTensors {
    entries: BTreeMap<String, (Vec<u32>, Vec<f32>)>,
}

impl NamedTensors {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_raw(&mut self, name: &str, dims: Vec<u32>, data: Vec<f32>) -> Result<()> {
        let count: usize = dims.iter().map(|&d| d as usize).product();
        if count != data.len() {
            return Err(Error::shape(
                "NamedTensors::insert",
                format!("{name}: dims {dims:?} imply {count} values, got {}", data.len()),
            ));
        }
        if name.is_empty() || name.len() > u16::MAX as usize {
            return Err(Error::arg("NamedTensors::insert", format!("bad name length for {name:?}")));
        }
        if self.entries.insert(name.to_string(), (dims, data)).is_some() {
            return Err(Error::arg("NamedTensors::insert", format!("duplicate tensor {name}")));
        }
        Ok(())
    }

    pub fn insert_tensor(&mut self, name: &str, t: &Tensor<f32>) -> Result<()> {
        let dims = t.shape().iter().map(|&d| d as u32).collect();
        self.insert_raw(name, dims, t.data().to_vec())
    }

    pub fn insert_scalar(&mut self, name: &str, value: f32) -> Result<()> {
        self.insert_raw(name, vec![1], vec![value])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get_raw(&self, name: &str) -> Result<(&[u32], &[f32])> {
        self.entries
            .get(name)
            .map(|(d, v)| (d.as_slice(), v.as_slice()))
            .ok_or_else(|| Error::ParamMismatch {
                missing: vec![name.to_string()],
                unexpected: vec![],
            })
    }

    pub fn get_tensor4(&self, name: &str) -> Result<Tensor<f32>> {
        let (dims, data) = self.get_raw(name)?;
        if dims.len() != 4 {
            return Err(Error::shape(
                "NamedTensors::get_tensor4",
                format!("{name} has rank {}, expected 4", dims.len()),
            ));
        }
        Tensor::from_vec(
            [dims[0] as usize, dims[1] as usize, dims[2] as usize, dims[3] as usize],
            data.to_vec(),
        )
    }

    pub fn get_scalar(&self, name: &str) -> Result<f32> {
        let (_, data) = self.get_raw(name)?;
        if data.len() != 1 {
            return Err(Error::shape(
                "NamedTensors::get_scalar",
                format!("{name} holds {} values, expected 1", data.len()),
            ));
        }
        Ok(data[0])
    }

    pub fn remove(&mut self, name: &str) -> Option<(Vec<u32>, Vec<f32>)> {
        self.entries.remove(name)
    }

    fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, (dims, data)) in &self.entries {
            if dims.len() > u8::MAX as usize {
                return Err(Error::arg("save_weights", format!("{name}: rank too large")));
            }
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(dims.len() as u8);
            for &d in dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for &v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    fn decode(bytes: &[u8], path: &str) -> Result<NamedTensors> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize, what: &str| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::file(path, format!("truncated while reading {what}")));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4, "magic")? != WEIGHTS_MAGIC {
            return Err(Error::file(path, "bad magic, not a GPGM file"));
        }
        let version = u32::from_le_bytes(take(&mut pos, 4, "version")?.try_into().unwrap());
        if version != WEIGHTS_VERSION {
            return Err(Error::file(path, format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(take(&mut pos, 4, "tensor count")?.try_into().unwrap());
        let mut out = NamedTensors::new();
        for i in 0..count {
            let name_len =
                u16::from_le_bytes(take(&mut pos, 2, "name length")?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(&mut pos, name_len, "name")?)
                .map_err(|_| Error::file(path, format!("tensor {i}: name is not UTF-8")))?
                .to_string();
            let rank = take(&mut pos, 1, "rank")?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            let mut total = 1usize;
            for _ in 0..rank {
                let d = u32::from_le_bytes(
                    take(&mut pos, 4, &format!("dims of {name}"))?.try_into().unwrap(),
                );
                total = total.checked_mul(d as usize).ok_or_else(|| {
                    Error::file(path, format!("tensor {name}: dimension overflow"))
                })?;
                dims.push(d);
            }
            let payload = take(&mut pos, total * 4, &format!("payload of tensor {name}"))?;
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if out.contains(&name) {
                return Err(Error::file(path, format!("duplicate tensor {name}")));
            }
            out.insert_raw(&name, dims, data)?;
        }
        if pos != bytes.len() {
            return Err(Error::file(
                path,
                format!("{} trailing bytes after last tensor", bytes.len() - pos),
            ));
        }
        Ok(out)
    }
}

pub fn save_named_tensors(t: &NamedTensors, path: impl AsRef<Path>) -> Result<()> {
    let p = path.as_ref();
    fs::write(p, t.encode()?).map_err(|e| Error::io(p.display().to_string(), e))
}

pub fn load_named_tensors(path: impl AsRef<Path>) -> Result<NamedTensors> {
    let p = path.as_ref();
    let name = p.display().to_string();
    let bytes = fs::read(p).map_err(|e| Error::io(&name, e))?;
    NamedTensors::decode(&bytes, &name)
}

/// Save model parameters (buffers included) as rank-4 named tensors.
pub fn save_weights(params: &ParamStore<f32>, path: impl AsRef<Path>) -> Result<()> {
    let mut t = NamedTensors::new();
    for (name, tensor) in params.iter() {
        t.insert_tensor(name, tensor)?;
    }
    save_named_tensors(&t, path)
}

/// Load parameters and validate them against a config: the tensor set must
/// match `param_specs` exactly, names and shapes both.
pub fn load_weights(path: impl AsRef<Path>, cfg: &ModelConfig) -> Result<ParamStore<f32>> {
    let named = load_named_tensors(&path)?;
    named_tensors_to_params(&named, cfg, &path.as_ref().display().to_string())
}

pub fn named_tensors_to_params(
    named: &NamedTensors,
    cfg: &ModelConfig,
    origin: &str,
) -> Result<ParamStore<f32>> {
    let specs = param_specs(cfg);
    let mut missing = Vec::new();
    for spec in &specs {
        if !named.contains(&spec.name) {
            missing.push(spec.name.clone());
        }
    }
    let spec_names: std::collections::BTreeSet<&str> =
        specs.iter().map(|s| s.name.as_str()).collect();
    let unexpected: Vec<String> = named
        .names()
        .filter(|n| !spec_names.contains(n))
        .map(|n| n.to_string())
        .collect();
    if !missing.is_empty() || !unexpected.is_empty() {
        return Err(Error::ParamMismatch { missing, unexpected });
    }
    let mut store = ParamStore::new();
    for spec in &specs {
        let t = named.get_tensor4(&spec.name)?;
        if t.shape() != spec.shape {
            return Err(Error::shape(
                "load_weights",
                format!(
                    "{origin}: tensor {} is {:?}, config wants {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                ),
            ));
        }
        store.insert(&spec.name, t);
    }
    Ok(store)
}
