//! Named trainable tensors and their gradients.
//!
//! Checkpoint layout (little-endian):
//!
//! ```text
//! magic        8 bytes   "ARCLPARM"
//! version      u32
//! header_len   u64
//! header       JSON: { "meta": <caller metadata>, "tensors": [{name, shape, kind}, ...] }
//! values       f64 values of each tensor in header order
//! ```

use std::io::Write;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const PARAMS_MAGIC: &[u8; 8] = b"ARCLPARM";
pub const PARAMS_SCHEMA_VERSION: u32 = 1;

/// Weights are penalized and decayed; biases are not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Weight,
    Bias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

/// Gradients for every parameter of a store, aligned by index.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    grads: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, kind: ParamKind, value: Tensor) -> Result<usize> {
        if self.index_of(name).is_some() {
            return Err(Error::invalid(format!("duplicate parameter {name:?}")));
        }
        let grad = value.zeros_like();
        self.params.push(Param {
            name: name.to_string(),
            kind,
            value,
            grad,
        });
        Ok(self.params.len() - 1)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn zero_grads(&self) -> ParamGrads {
        ParamGrads {
            grads: self.params.iter().map(|p| p.value.zeros_like()).collect(),
        }
    }

    /// `grad += scale * grads`.
    pub fn accumulate(&mut self, grads: &ParamGrads, scale: f64) -> Result<()> {
        if grads.grads.len() != self.params.len() {
            return Err(Error::invalid("gradient set does not match parameter store"));
        }
        for (p, g) in self.params.iter_mut().zip(&grads.grads) {
            if p.grad.shape() != g.shape() {
                return Err(Error::invalid(format!("gradient shape mismatch for {}", p.name)));
            }
            for (a, b) in p.grad.data_mut().iter_mut().zip(g.data()) {
                *a += scale * b;
            }
        }
        Ok(())
    }

    /// Sum of squared weight entries; biases are excluded.
    pub fn weight_sq_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Weight)
            .flat_map(|p| p.value.data())
            .map(|v| v * v)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Writes the store with caller-supplied metadata in the header.
    pub fn write<W: Write, M: Serialize>(&self, w: &mut W, meta: &M) -> Result<()> {
        #[derive(Serialize)]
        struct Header<'a, M> {
            meta: &'a M,
            tensors: Vec<TensorEntry>,
        }
        let header = Header {
            meta,
            tensors: self
                .params
                .iter()
                .map(|p| TensorEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    kind: p.kind,
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).map_err(std::io::Error::from)?;
        w.write_all(PARAMS_MAGIC)?;
        w.write_all(&PARAMS_SCHEMA_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for p in &self.params {
            for v in p.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<M: DeserializeOwned>(bytes: &[u8]) -> Result<(ParamStore, M)> {
        #[derive(Deserialize)]
        struct Header<M> {
            meta: M,
            tensors: Vec<TensorEntry>,
        }
        let fixed = PARAMS_MAGIC.len() + 12;
        if bytes.len() < fixed || !bytes.starts_with(PARAMS_MAGIC) {
            return Err(Error::malformed("not a parameter file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != PARAMS_SCHEMA_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: PARAMS_SCHEMA_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|l| fixed.checked_add(l))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::malformed("truncated header"))?;
        let header: Header<M> = serde_json::from_slice(&bytes[fixed..header_end])
            .map_err(|e| Error::malformed(format!("bad header: {e}")))?;

        let mut body = &bytes[header_end..];
        let mut store = ParamStore::new();
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            if body.len() < n * 8 {
                return Err(Error::malformed("truncated tensor data"));
            }
            let (raw, rest) = body.split_at(n * 8);
            body = rest;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let value = Tensor::new(&entry.shape, data).map_err(|e| Error::malformed(e.to_string()))?;
            store
                .insert(&entry.name, entry.kind, value)
                .map_err(|e| Error::malformed(e.to_string()))?;
        }
        if !body.is_empty() {
            return Err(Error::malformed("trailing bytes after tensor data"));
        }
        Ok((store, header.meta))
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    kind: ParamKind,
}

impl ParamGrads {
    pub fn tensors(&self) -> &[Tensor] {
        &self.grads
    }

    pub(crate) fn tensor_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.grads[index]
    }

    /// `self += other`, in parameter order.
    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.grads.iter().flat_map(|g| g.data().iter().copied()).collect()
    }
}
