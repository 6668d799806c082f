use std::collections::BTreeMap;

use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::formats::{storage_bits, NumberFormat};

/// The GEMM site within a block that produced a stash entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Site {
    Query,
    Key,
    Value,
    AttnOut,
    Ffn1,
    Ffn2,
    /// `Q·Kᵀ` for one (sequence, head) instance.
    Scores,
    /// `P·V` for one (sequence, head) instance.
    Context,
    /// Final projection onto the vocabulary.
    Head,
}

/// Which operand of a GEMM was stashed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Operand {
    Lhs,
    Rhs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StashKey {
    pub layer: usize,
    pub site: Site,
    pub instance: usize,
    pub operand: Operand,
}

impl StashKey {
    pub fn new(layer: usize, site: Site) -> Self {
        StashKey {
            layer,
            site,
            instance: 0,
            operand: Operand::Lhs,
        }
    }

    pub fn instance(layer: usize, site: Site, instance: usize) -> Self {
        StashKey {
            instance,
            ..Self::new(layer, site)
        }
    }

    pub fn with_operand(self, operand: Operand) -> Self {
        StashKey { operand, ..self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StashRecord {
    pub tensor: Tensor,
    pub format: NumberFormat,
    pub bits: u64,
}

/// Forward activations held for the backward pass. Each key is written once
/// per forward pass and taken once per backward pass.
#[derive(Debug, Clone, Default)]
pub struct StashBuffer {
    records: BTreeMap<StashKey, StashRecord>,
    writes: u64,
    reads: u64,
    bits_written: u64,
    bits_read: u64,
}

impl StashBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores an already-quantized tensor.
    pub fn put(&mut self, key: StashKey, tensor: Tensor, format: NumberFormat) -> Result<()> {
        if self.records.contains_key(&key) {
            return Err(Error::Contract(format!(
                "{key:?} stashed twice in one step"
            )));
        }
        let bits = storage_bits(format, tensor.len() as u64);
        self.writes += 1;
        self.bits_written += bits;
        self.records.insert(
            key,
            StashRecord {
                tensor,
                format,
                bits,
            },
        );
        Ok(())
    }

    pub fn take(&mut self, key: StashKey) -> Result<StashRecord> {
        let rec = self
            .records
            .remove(&key)
            .ok_or_else(|| Error::Contract(format!("no stash entry for {key:?}")))?;
        self.reads += 1;
        self.bits_read += rec.bits;
        Ok(rec)
    }

    pub fn contains(&self, key: &StashKey) -> bool {
        self.records.contains_key(key)
    }

    /// Entries written but not yet consumed.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn writes(&self) -> u64 {
        self.writes
    }

    pub fn reads(&self) -> u64 {
        self.reads
    }

    pub fn bits_written(&self) -> u64 {
        self.bits_written
    }

    pub fn bits_read(&self) -> u64 {
        self.bits_read
    }

    /// Drops pending entries, e.g. after a step aborted mid-way.
    pub fn clear(&mut self) {
        self.records.clear();
    }
}
