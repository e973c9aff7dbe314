//! Named parameter storage, gradient buffers and checkpoint I/O.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::NumericsError;
use crate::tensor::Tensor;

const CHECKPOINT_MAGIC: &[u8; 8] = b"CDGTPRM\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of trainable matrices, addressed by [`ParamId`] or by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics on duplicate names.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.values.len();
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            values: self
                .values
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect(),
        }
    }

    /// Writes a versioned checkpoint: magic, version, a free-form metadata
    /// string, then each parameter as (name, rows, cols, little-endian f64 data).
    pub fn save<W: Write>(&self, mut w: W, metadata: &str) -> Result<(), NumericsError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        write_bytes(&mut w, metadata.as_bytes())?;
        w.write_all(&(self.values.len() as u32).to_le_bytes())?;
        for (name, value) in self.names.iter().zip(&self.values) {
            write_bytes(&mut w, name.as_bytes())?;
            w.write_all(&(value.rows() as u32).to_le_bytes())?;
            w.write_all(&(value.cols() as u32).to_le_bytes())?;
            for v in value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a checkpoint written by [`ParamStore::save`], returning the store
    /// and its metadata string.
    pub fn load<R: Read>(mut r: R) -> Result<(Self, String), NumericsError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(NumericsError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(NumericsError::UnsupportedVersion(version));
        }
        let metadata = String::from_utf8(read_bytes(&mut r)?)
            .map_err(|_| NumericsError::Corrupt("metadata is not UTF-8".into()))?;
        let count = read_u32(&mut r)? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name = String::from_utf8(read_bytes(&mut r)?)
                .map_err(|_| NumericsError::Corrupt("parameter name is not UTF-8".into()))?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let mut data = vec![0.0; rows * cols];
            let mut buf = [0u8; 8];
            for v in &mut data {
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            if store.by_name.contains_key(&name) {
                return Err(NumericsError::Corrupt(format!(
                    "duplicate parameter {name}"
                )));
            }
            store.add(name, Tensor::from_vec(rows, cols, data));
        }
        Ok((store, metadata))
    }

    /// Copies values from `other` by name, requiring identical names and shapes.
    pub fn assign_from(&mut self, other: &ParamStore) -> Result<(), NumericsError> {
        if other.len() != self.len() {
            return Err(NumericsError::ShapeMismatch(format!(
                "expected {} parameters, found {}",
                self.len(),
                other.len()
            )));
        }
        for i in 0..self.values.len() {
            let name = &self.names[i];
            let src = other
                .lookup(name)
                .ok_or_else(|| NumericsError::ShapeMismatch(format!("missing parameter {name}")))?;
            let src = other.get(src);
            if !src.same_shape(&self.values[i]) {
                return Err(NumericsError::ShapeMismatch(format!(
                    "parameter {name}: expected {:?}, found {:?}",
                    self.values[i].shape(),
                    src.shape()
                )));
            }
            self.values[i] = src.clone();
        }
        Ok(())
    }
}

fn write_bytes<W: Write>(w: &mut W, bytes: &[u8]) -> std::io::Result<()> {
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(bytes)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NumericsError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_bytes<R: Read>(r: &mut R) -> Result<Vec<u8>, NumericsError> {
    let n = read_u32(r)? as usize;
    if n > 1 << 24 {
        return Err(NumericsError::Corrupt(format!(
            "implausible string length {n}"
        )));
    }
    let mut v = vec![0u8; n];
    r.read_exact(&mut v)?;
    Ok(v)
}

/// Per-parameter gradient accumulators, index-aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    values: Vec<Tensor>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        self.values[id.0].add_assign(g);
    }

    pub fn merge(&mut self, other: &Grads) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            v.scale_assign(s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Tensor::all_finite)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.values.iter().enumerate().map(|(i, t)| (ParamId(i), t))
    }
}
