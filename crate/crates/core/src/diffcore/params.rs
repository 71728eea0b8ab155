use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{CheckpointError, ShapeError};

const CHECKPOINT_MAGIC: &[u8; 8] = b"MASBCKPT";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    value: Tensor,
    grad: Tensor,
}

/// Named trainable tensors plus their accumulated gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    slots: BTreeMap<String, Slot>,
    rng: ChaCha8Rng,
}

/// Outcome of one [`ParameterStore::sgd_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub grad_norm: f64,
    pub clipped: bool,
}

impl ParameterStore {
    pub fn new(seed: u64) -> Self {
        Self {
            slots: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Registers a parameter drawn from `U(-1/√fan_in, 1/√fan_in)`, with
    /// `fan_in` the column count.
    pub fn init_uniform(&mut self, name: &str, rows: usize, cols: usize) {
        let bound = 1.0 / (cols.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| self.rng.random_range(-bound..bound))
            .collect();
        let value = Tensor::new(rows, cols, data).expect("length matches");
        self.insert(name, value);
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.slots.insert(name.to_string(), Slot { value, grad });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.slots.get(name).map(|s| &s.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.slots.get(name).map(|s| &s.grad)
    }

    /// Overwrites a parameter value; the shape is fixed at registration.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<(), ShapeError> {
        let slot = self
            .slots
            .get_mut(name)
            .ok_or_else(|| ShapeError::UnknownParam(name.to_string()))?;
        if slot.value.shape() != value.shape() {
            return Err(ShapeError::Mismatch {
                op: "set",
                lhs: slot.value.shape(),
                rhs: value.shape(),
            });
        }
        slot.value = value;
        Ok(())
    }

    pub(crate) fn value_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.slots.get_mut(name).map(|s| &mut s.value)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Total number of scalar coordinates.
    pub fn coordinate_count(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for slot in self.slots.values_mut() {
            slot.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Sets every parameter to zero (used by tests and the zero-policy baseline).
    pub fn zero_values(&mut self) {
        for slot in self.slots.values_mut() {
            slot.value.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub(crate) fn accumulate_grad(&mut self, name: &str, delta: &Tensor) -> Result<(), ShapeError> {
        let slot = self
            .slots
            .get_mut(name)
            .ok_or_else(|| ShapeError::UnknownParam(name.to_string()))?;
        if slot.grad.shape() != delta.shape() {
            return Err(ShapeError::Mismatch {
                op: "accumulate_grad",
                lhs: slot.grad.shape(),
                rhs: delta.shape(),
            });
        }
        slot.grad.add_assign(delta);
        Ok(())
    }

    pub fn grad_norm(&self) -> f64 {
        self.slots
            .values()
            .map(|s| s.grad.norm_sq())
            .sum::<f64>()
            .sqrt()
    }

    /// `W ← W − lr·∇W`, with the global gradient norm clipped to `clip`
    /// when given. Gradients are zeroed afterwards.
    pub fn sgd_step(&mut self, lr: f64, clip: Option<f64>) -> StepReport {
        let norm = self.grad_norm();
        let factor = match clip {
            Some(max) if norm > max && norm > 0.0 => max / norm,
            _ => 1.0,
        };
        for slot in self.slots.values_mut() {
            for (w, g) in slot.value.data_mut().iter_mut().zip(slot.grad.data()) {
                *w -= lr * factor * g;
            }
        }
        self.zero_grads();
        StepReport {
            grad_norm: norm,
            clipped: factor < 1.0,
        }
    }

    /// Binary checkpoint: magic, version, then per tensor its name, shape
    /// and little-endian `f64` values. Gradients are not stored.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<(), CheckpointError> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(self.slots.len() as u32).to_le_bytes())?;
        for (name, slot) in &self.slots {
            let bytes = name.as_bytes();
            out.write_all(&(bytes.len() as u32).to_le_bytes())?;
            out.write_all(bytes)?;
            out.write_all(&(slot.value.rows() as u64).to_le_bytes())?;
            out.write_all(&(slot.value.cols() as u64).to_le_bytes())?;
            for v in slot.value.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut input: R, seed: u64) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::Format("bad magic".into()));
        }
        let version = read_u32(&mut input)?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Format(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut input)?;
        let mut store = ParameterStore::new(seed);
        for _ in 0..count {
            let len = read_u32(&mut input)? as usize;
            let mut name = vec![0u8; len];
            input.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| CheckpointError::Format("tensor name is not UTF-8".into()))?;
            let rows = read_u64(&mut input)? as usize;
            let cols = read_u64(&mut input)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                let mut b = [0u8; 8];
                input.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            let value = Tensor::new(rows, cols, data)
                .map_err(|e| CheckpointError::Format(e.to_string()))?;
            store.insert(&name, value);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path, seed: u64) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path)?;
        Self::read_checkpoint(bytes.as_slice(), seed)
    }

    /// True when both stores hold the same names, shapes and bit patterns.
    pub fn bitwise_eq(&self, other: &ParameterStore) -> bool {
        self.slots.len() == other.slots.len()
            && self.slots.iter().zip(&other.slots).all(|((na, a), (nb, b))| {
                na == nb
                    && a.value.shape() == b.value.shape()
                    && a
                        .value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
