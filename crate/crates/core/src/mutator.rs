// SPDX-License-Identifier: Apache-2.0

//! Boundary mutation: flip a handful of bits in one to three fields.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::state::{FieldId, VmState, FIELD_COUNT};

pub const MIN_DIRECTIVE_BYTES: usize = 16;
pub const MAX_FIELDS: usize = 3;
pub const MAX_BITS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldMutation {
    pub field: FieldId,
    /// Bit positions, each below the field width. Duplicates cancel.
    pub bits: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MutationDirective {
    pub fields: Vec<FieldMutation>,
}

impl MutationDirective {
    /// Checks the range invariants.
    pub fn is_well_formed(&self) -> bool {
        (1..=MAX_FIELDS).contains(&self.fields.len())
            && self.fields.iter().all(|m| {
                (1..=MAX_BITS).contains(&m.bits.len()) && m.bits.iter().all(|&b| b < m.field.width())
            })
    }

    pub fn touched_fields(&self) -> impl Iterator<Item = FieldId> + '_ {
        self.fields.iter().map(|m| m.field)
    }

    pub fn total_bits(&self) -> usize {
        self.fields.iter().map(|m| m.bits.len()).sum()
    }
}

impl fmt::Display for MutationDirective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, m) in self.fields.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            let bits: Vec<String> = m.bits.iter().map(u32::to_string).collect();
            write!(f, "{} flip [{}]", m.field, bits.join(","))?;
        }
        Ok(())
    }
}

/// Relative selection weights over the field catalog.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldWeights {
    cumulative: Vec<u64>,
}

impl Default for FieldWeights {
    fn default() -> Self {
        Self::uniform()
    }
}

impl FieldWeights {
    pub fn uniform() -> Self {
        Self { cumulative: (1..=FIELD_COUNT as u64).collect() }
    }

    pub fn new(weights: &[u32]) -> Result<Self> {
        if weights.len() != FIELD_COUNT {
            return Err(Error::WrongLength { expected: FIELD_COUNT, actual: weights.len() });
        }
        let cumulative: Vec<u64> = weights
            .iter()
            .scan(0u64, |acc, &w| {
                *acc += w as u64;
                Some(*acc)
            })
            .collect();
        if cumulative[FIELD_COUNT - 1] == 0 {
            return Err(Error::InvalidConfig("field weights sum to zero".into()));
        }
        Ok(Self { cumulative })
    }

    fn pick(&self, selector: u16) -> FieldId {
        let total = self.cumulative[FIELD_COUNT - 1];
        let target = selector as u64 % total;
        let idx = self.cumulative.partition_point(|&c| c <= target);
        FieldId(idx as u16)
    }
}

/// Reads bytes in order, wrapping around when the slice runs out.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn next(&mut self) -> u8 {
        let b = self.bytes[self.pos % self.bytes.len()];
        self.pos += 1;
        b
    }
}

pub fn parse_directive(input: &[u8]) -> Result<MutationDirective> {
    parse_directive_weighted(input, &FieldWeights::uniform())
}

pub fn parse_directive_weighted(input: &[u8], weights: &FieldWeights) -> Result<MutationDirective> {
    ensure_len("mutation directive", input, MIN_DIRECTIVE_BYTES)?;
    let mut cur = Cursor { bytes: input, pos: 0 };
    let count = cur.next() as usize % MAX_FIELDS + 1;
    let fields = (0..count)
        .map(|_| {
            let field = weights.pick(u16::from_le_bytes([cur.next(), cur.next()]));
            let n = cur.next() as usize % MAX_BITS + 1;
            let bits = (0..n).map(|_| cur.next() as u32 % field.width()).collect();
            FieldMutation { field, bits }
        })
        .collect();
    Ok(MutationDirective { fields })
}

pub fn mutate(state: &VmState, directive: &MutationDirective) -> VmState {
    let mut out = state.clone();
    for m in &directive.fields {
        let flip = m.bits.iter().fold(0u64, |acc, &b| acc ^ (1 << b));
        out.set(m.field, out.get(m.field) ^ flip);
    }
    out
}
