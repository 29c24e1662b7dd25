//! Bit-packed binary masks.
//!
//! Bit `i` of a tensor lives in byte `i / 8` at position `i % 8`
//! (least-significant bit first). Padding bits in the final byte are zero.

use serde::Serialize;

use crate::error::{Error, Result};

/// Anything with a notion of pruned entries.
pub trait Sparsity {
    /// Number of entries.
    fn total(&self) -> usize;
    /// Number of pruned entries.
    fn pruned(&self) -> usize;

    /// Fraction of pruned entries; 0 for an empty object.
    fn sparsity(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.pruned() as f64 / n as f64,
        }
    }
}

/// One bit-packed `{0,1}` tensor.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskBits {
    shape: Vec<usize>,
    len: usize,
    bytes: Vec<u8>,
}

impl MaskBits {
    pub fn ones(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        let mut bits = Self::zeros(shape);
        for i in 0..len {
            bits.set(i, true);
        }
        bits
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            len,
            bytes: vec![0; len.div_ceil(8)],
        }
    }

    pub fn from_bools(shape: &[usize], bits: &[bool]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != bits.len() {
            return Err(Error::Dimension {
                op: "mask bits",
                left: shape.to_vec(),
                right: vec![bits.len()],
            });
        }
        let mut out = Self::zeros(shape);
        for (i, &b) in bits.iter().enumerate() {
            out.set(i, b);
        }
        Ok(out)
    }

    /// Rebuilds from packed bytes; padding bits must be zero.
    pub fn from_packed(shape: &[usize], bytes: Vec<u8>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::Malformed(format!(
                "{} packed bytes for {len} bits",
                bytes.len()
            )));
        }
        if len % 8 != 0 {
            let last = bytes[bytes.len() - 1];
            if last >> (len % 8) != 0 {
                return Err(Error::Malformed("non-zero padding bits".into()));
            }
        }
        Ok(Self {
            shape: shape.to_vec(),
            len,
            bytes,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn packed(&self) -> &[u8] {
        &self.bytes
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.bytes[i / 8] >> (i % 8) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let bit = 1u8 << (i % 8);
        if value {
            self.bytes[i / 8] |= bit;
        } else {
            self.bytes[i / 8] &= !bit;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|i| self.get(i))
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// The mask as `0.0` / `1.0` values, for elementwise products.
    pub fn to_f64(&self) -> Vec<f64> {
        self.iter().map(|b| if b { 1.0 } else { 0.0 }).collect()
    }
}

impl Sparsity for MaskBits {
    fn total(&self) -> usize {
        self.len
    }

    fn pruned(&self) -> usize {
        self.len - self.count_ones()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NamedBits {
    pub name: String,
    pub bits: MaskBits,
}

/// Ordered collection of named mask tensors.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    tensors: Vec<NamedBits>,
}

impl BinaryMask {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor; names must be unique.
    pub fn push(&mut self, name: impl Into<String>, bits: MaskBits) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::Usage(format!("duplicate mask tensor `{name}`")));
        }
        self.tensors.push(NamedBits { name, bits });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&MaskBits> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.bits)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut MaskBits> {
        self.tensors
            .iter_mut()
            .find(|t| t.name == name)
            .map(|t| &mut t.bits)
    }

    pub fn tensors(&self) -> &[NamedBits] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [NamedBits] {
        &mut self.tensors
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|t| t.name.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Global flat index over all tensors in order.
    pub fn flat_get(&self, mut i: usize) -> bool {
        for t in &self.tensors {
            if i < t.bits.len() {
                return t.bits.get(i);
            }
            i -= t.bits.len();
        }
        panic!("flat mask index out of range");
    }

    /// Indices (flat) of pruned entries, for set comparisons across steps.
    pub fn zero_positions(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut offset = 0;
        for t in &self.tensors {
            out.extend(t.bits.iter().enumerate().filter(|(_, b)| !b).map(|(i, _)| offset + i));
            offset += t.bits.len();
        }
        out
    }

    pub fn summary(&self) -> MaskSummary {
        MaskSummary {
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorSummary {
                    name: t.name.clone(),
                    shape: t.bits.shape().to_vec(),
                    ones: t.bits.count_ones(),
                    sparsity: t.bits.sparsity(),
                })
                .collect(),
            sparsity: self.sparsity(),
        }
    }
}

impl Sparsity for BinaryMask {
    fn total(&self) -> usize {
        self.tensors.iter().map(|t| t.bits.total()).sum()
    }

    fn pruned(&self) -> usize {
        self.tensors.iter().map(|t| t.bits.pruned()).sum()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorSummary {
    pub name: String,
    pub shape: Vec<usize>,
    pub ones: usize,
    pub sparsity: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MaskSummary {
    pub tensors: Vec<TensorSummary>,
    pub sparsity: f64,
}
