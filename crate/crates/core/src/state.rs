// SPDX-License-Identifier: Apache-2.0

//! VM control structure model: the field catalog, the 165-field [`VmState`],
//! its 1,000-byte [`StateBlob`] packing and bit-level distance.
//!
//! Fields use dense ids in `[0, 165)`. The catalog order is also the blob
//! order: field `i` occupies `width(i) / 8` little-endian bytes directly after
//! field `i - 1`. Named fields come first, grouped as execution controls,
//! entry/exit controls, host state and guest state; reserved padding fields
//! close the catalog so the total is exactly 8,000 bits.

use std::fmt;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::checks::CheckId;
use crate::error::{Error, Result};

/// Number of fields in the catalog.
pub const FIELD_COUNT: usize = 165;
/// Total state size in bits.
pub const STATE_BITS: usize = 8_000;
/// Total state size in bytes.
pub const STATE_BYTES: usize = STATE_BITS / 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FieldGroup {
    ExecutionControl,
    EntryExitControl,
    HostState,
    GuestState,
}

impl FieldGroup {
    /// Execution and entry/exit controls are rounded together as the control phase.
    pub fn is_control(self) -> bool {
        matches!(self, Self::ExecutionControl | Self::EntryExitControl)
    }
}

/// Dense field identifier, an index into the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FieldId(pub u16);

impl FieldId {
    pub const fn index(self) -> usize {
        self.0 as usize
    }

    pub fn new(id: usize) -> Result<Self> {
        if id < FIELD_COUNT {
            Ok(Self(id as u16))
        } else {
            Err(Error::UnknownField(id))
        }
    }

    pub fn spec(self) -> &'static FieldSpec {
        &catalog().fields[self.index()]
    }

    pub fn width(self) -> u32 {
        FIELD_TABLE[self.index()].1
    }

    pub fn mask(self) -> u64 {
        width_mask(self.width())
    }

    pub fn name(self) -> &'static str {
        FIELD_TABLE[self.index()].0
    }

    pub fn group(self) -> FieldGroup {
        FIELD_TABLE[self.index()].2
    }

    pub fn all() -> impl Iterator<Item = FieldId> {
        (0..FIELD_COUNT as u16).map(FieldId)
    }
}

impl fmt::Display for FieldId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const fn width_mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

use FieldGroup::{EntryExitControl as EE, ExecutionControl as EC, GuestState as GS, HostState as HS};

macro_rules! field_table {
    ($($id:literal $name:ident $width:literal $group:ident;)*) => {
        /// Named field ids.
        pub mod field {
            use super::FieldId;
            $(pub const $name: FieldId = FieldId($id);)*
        }

        const NAMED_FIELDS: &[(&str, u32, FieldGroup)] = &[
            $((stringify!($name), $width, $group),)*
        ];
    };
}

field_table! {
    0 PIN_CONTROLS 32 EC;
    1 PROC_CONTROLS 32 EC;
    2 PROC2_CONTROLS 32 EC;
    3 EXCEPTION_BITMAP 32 EC;
    4 CR3_TARGET_COUNT 32 EC;
    5 TPR_THRESHOLD 32 EC;
    6 VPID 16 EC;
    7 POSTED_INTR_NV 16 EC;
    8 IO_BITMAP_A 64 EC;
    9 IO_BITMAP_B 64 EC;
    10 MSR_BITMAP 64 EC;
    11 TSC_OFFSET 64 EC;
    12 VIRTUAL_APIC_ADDR 64 EC;
    13 POSTED_INTR_DESC 64 EC;
    14 EPT_POINTER 64 EC;
    15 CR0_GUEST_HOST_MASK 64 EC;
    16 CR4_GUEST_HOST_MASK 64 EC;
    17 CR0_READ_SHADOW 64 EC;
    18 CR4_READ_SHADOW 64 EC;
    19 CR3_TARGET_0 64 EC;
    20 EXIT_CONTROLS 32 EE;
    21 ENTRY_CONTROLS 32 EE;
    22 EXIT_MSR_STORE_COUNT 32 EE;
    23 EXIT_MSR_LOAD_COUNT 32 EE;
    24 ENTRY_MSR_LOAD_COUNT 32 EE;
    25 ENTRY_INTR_INFO 32 EE;
    26 ENTRY_EXCEPTION_ERROR_CODE 32 EE;
    27 MSR_LOAD_INDEX_0 32 EE;
    28 MSR_LOAD_INDEX_1 32 EE;
    29 MSR_LOAD_INDEX_2 32 EE;
    30 MSR_LOAD_INDEX_3 32 EE;
    31 EXIT_MSR_STORE_ADDR 64 EE;
    32 EXIT_MSR_LOAD_ADDR 64 EE;
    33 ENTRY_MSR_LOAD_ADDR 64 EE;
    34 MSR_LOAD_VALUE_0 64 EE;
    35 MSR_LOAD_VALUE_1 64 EE;
    36 MSR_LOAD_VALUE_2 64 EE;
    37 MSR_LOAD_VALUE_3 64 EE;
    38 HOST_ES_SELECTOR 16 HS;
    39 HOST_CS_SELECTOR 16 HS;
    40 HOST_SS_SELECTOR 16 HS;
    41 HOST_DS_SELECTOR 16 HS;
    42 HOST_FS_SELECTOR 16 HS;
    43 HOST_GS_SELECTOR 16 HS;
    44 HOST_TR_SELECTOR 16 HS;
    45 HOST_SYSENTER_CS 32 HS;
    46 HOST_CR0 64 HS;
    47 HOST_CR3 64 HS;
    48 HOST_CR4 64 HS;
    49 HOST_FS_BASE 64 HS;
    50 HOST_GS_BASE 64 HS;
    51 HOST_TR_BASE 64 HS;
    52 HOST_GDTR_BASE 64 HS;
    53 HOST_IDTR_BASE 64 HS;
    54 HOST_SYSENTER_ESP 64 HS;
    55 HOST_SYSENTER_EIP 64 HS;
    56 HOST_RSP 64 HS;
    57 HOST_RIP 64 HS;
    58 HOST_EFER 64 HS;
    59 HOST_PAT 64 HS;
    60 GUEST_ES_SELECTOR 16 GS;
    61 GUEST_CS_SELECTOR 16 GS;
    62 GUEST_SS_SELECTOR 16 GS;
    63 GUEST_DS_SELECTOR 16 GS;
    64 GUEST_FS_SELECTOR 16 GS;
    65 GUEST_GS_SELECTOR 16 GS;
    66 GUEST_LDTR_SELECTOR 16 GS;
    67 GUEST_TR_SELECTOR 16 GS;
    68 GUEST_INTR_STATUS 16 GS;
    69 GUEST_ES_LIMIT 32 GS;
    70 GUEST_CS_LIMIT 32 GS;
    71 GUEST_SS_LIMIT 32 GS;
    72 GUEST_DS_LIMIT 32 GS;
    73 GUEST_FS_LIMIT 32 GS;
    74 GUEST_GS_LIMIT 32 GS;
    75 GUEST_LDTR_LIMIT 32 GS;
    76 GUEST_TR_LIMIT 32 GS;
    77 GUEST_ES_AR 32 GS;
    78 GUEST_CS_AR 32 GS;
    79 GUEST_SS_AR 32 GS;
    80 GUEST_DS_AR 32 GS;
    81 GUEST_FS_AR 32 GS;
    82 GUEST_GS_AR 32 GS;
    83 GUEST_LDTR_AR 32 GS;
    84 GUEST_TR_AR 32 GS;
    85 GUEST_GDTR_LIMIT 32 GS;
    86 GUEST_IDTR_LIMIT 32 GS;
    87 GUEST_SYSENTER_CS 32 GS;
    88 GUEST_ACTIVITY_STATE 32 GS;
    89 GUEST_INTERRUPTIBILITY 32 GS;
    90 GUEST_PREEMPTION_TIMER 32 GS;
    91 GUEST_VGIF_STATE 32 GS;
    92 GUEST_CR0 64 GS;
    93 GUEST_CR3 64 GS;
    94 GUEST_CR4 64 GS;
    95 GUEST_DR7 64 GS;
    96 GUEST_RSP 64 GS;
    97 GUEST_RIP 64 GS;
    98 GUEST_RFLAGS 64 GS;
    99 GUEST_ES_BASE 64 GS;
    100 GUEST_CS_BASE 64 GS;
    101 GUEST_SS_BASE 64 GS;
    102 GUEST_DS_BASE 64 GS;
    103 GUEST_FS_BASE 64 GS;
    104 GUEST_GS_BASE 64 GS;
    105 GUEST_LDTR_BASE 64 GS;
    106 GUEST_TR_BASE 64 GS;
    107 GUEST_GDTR_BASE 64 GS;
    108 GUEST_IDTR_BASE 64 GS;
    109 GUEST_EFER 64 GS;
    110 GUEST_PAT 64 GS;
    111 GUEST_DEBUGCTL 64 GS;
    112 GUEST_SYSENTER_ESP 64 GS;
    113 GUEST_SYSENTER_EIP 64 GS;
    114 GUEST_PENDING_DBG 64 GS;
    115 GUEST_LINK_POINTER 64 GS;
}

/// First reserved (padding) field id.
pub const FIRST_RESERVED: usize = 116;
const RESERVED16_COUNT: usize = 8;
const RESERVED64_COUNT: usize = 41;

const RESERVED_NAMES: [&str; RESERVED16_COUNT + RESERVED64_COUNT] = [
    "RESERVED16_0", "RESERVED16_1", "RESERVED16_2", "RESERVED16_3",
    "RESERVED16_4", "RESERVED16_5", "RESERVED16_6", "RESERVED16_7",
    "RESERVED64_0", "RESERVED64_1", "RESERVED64_2", "RESERVED64_3",
    "RESERVED64_4", "RESERVED64_5", "RESERVED64_6", "RESERVED64_7",
    "RESERVED64_8", "RESERVED64_9", "RESERVED64_10", "RESERVED64_11",
    "RESERVED64_12", "RESERVED64_13", "RESERVED64_14", "RESERVED64_15",
    "RESERVED64_16", "RESERVED64_17", "RESERVED64_18", "RESERVED64_19",
    "RESERVED64_20", "RESERVED64_21", "RESERVED64_22", "RESERVED64_23",
    "RESERVED64_24", "RESERVED64_25", "RESERVED64_26", "RESERVED64_27",
    "RESERVED64_28", "RESERVED64_29", "RESERVED64_30", "RESERVED64_31",
    "RESERVED64_32", "RESERVED64_33", "RESERVED64_34", "RESERVED64_35",
    "RESERVED64_36", "RESERVED64_37", "RESERVED64_38", "RESERVED64_39",
    "RESERVED64_40",
];

const fn build_table() -> [(&'static str, u32, FieldGroup); FIELD_COUNT] {
    let mut out = [("", 0u32, FieldGroup::GuestState); FIELD_COUNT];
    let mut i = 0;
    while i < NAMED_FIELDS.len() {
        out[i] = NAMED_FIELDS[i];
        i += 1;
    }
    let mut r = 0;
    while r < RESERVED_NAMES.len() {
        let width = if r < RESERVED16_COUNT { 16 } else { 64 };
        out[FIRST_RESERVED + r] = (RESERVED_NAMES[r], width, FieldGroup::GuestState);
        r += 1;
    }
    out
}

const FIELD_TABLE: [(&str, u32, FieldGroup); FIELD_COUNT] = build_table();

const fn build_offsets() -> [usize; FIELD_COUNT] {
    let mut out = [0usize; FIELD_COUNT];
    let mut acc = 0;
    let mut i = 0;
    while i < FIELD_COUNT {
        out[i] = acc;
        acc += FIELD_TABLE[i].1 as usize / 8;
        i += 1;
    }
    out
}

/// Byte offset of every field inside a [`StateBlob`].
const BYTE_OFFSETS: [usize; FIELD_COUNT] = build_offsets();

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub id: FieldId,
    pub name: &'static str,
    pub width: u32,
    pub group: FieldGroup,
    /// Checks that read or correct this field.
    pub constraint_ids: Vec<CheckId>,
}

impl FieldSpec {
    pub fn is_reserved(&self) -> bool {
        self.id.index() >= FIRST_RESERVED
    }

    pub fn byte_offset(&self) -> usize {
        BYTE_OFFSETS[self.id.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldCatalog {
    fields: Vec<FieldSpec>,
}

impl FieldCatalog {
    /// Builds a fresh catalog. Prefer [`catalog`], which caches one.
    pub fn build() -> Self {
        let fields = FieldId::all()
            .map(|id| {
                let (name, width, group) = FIELD_TABLE[id.index()];
                let constraint_ids = CheckId::ALL
                    .iter()
                    .copied()
                    .filter(|c| c.fields().contains(&id))
                    .collect();
                FieldSpec { id, name, width, group, constraint_ids }
            })
            .collect();
        Self { fields }
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, FieldSpec> {
        self.fields.iter()
    }

    pub fn get(&self, id: usize) -> Result<&FieldSpec> {
        self.fields.get(id).ok_or(Error::UnknownField(id))
    }

    pub fn by_name(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn total_bits(&self) -> usize {
        self.fields.iter().map(|f| f.width as usize).sum()
    }

    /// JSON dump with `id`, `name`, `width` and `group` per field.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Array(
            self.fields
                .iter()
                .map(|f| {
                    serde_json::json!({
                        "id": f.id.0,
                        "name": f.name,
                        "width": f.width,
                        "group": f.group,
                    })
                })
                .collect(),
        )
    }
}

impl std::ops::Index<usize> for FieldCatalog {
    type Output = FieldSpec;

    fn index(&self, id: usize) -> &FieldSpec {
        &self.fields[id]
    }
}

static CATALOG: LazyLock<FieldCatalog> = LazyLock::new(FieldCatalog::build);

pub fn catalog() -> &'static FieldCatalog {
    &CATALOG
}

/// A full VM control structure image. Every value is kept masked to its field width.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct VmState {
    values: [u64; FIELD_COUNT],
}

impl Default for VmState {
    fn default() -> Self {
        Self::zeroed()
    }
}

impl fmt::Debug for VmState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut map = f.debug_map();
        for id in FieldId::all() {
            let v = self.values[id.index()];
            if v != 0 {
                map.entry(&id.name(), &format_args!("{v:#x}"));
            }
        }
        map.finish()
    }
}

impl VmState {
    pub const fn zeroed() -> Self {
        Self { values: [0; FIELD_COUNT] }
    }

    /// Builds a state from raw values, masking each one to its width.
    pub fn from_values(values: [u64; FIELD_COUNT]) -> Self {
        let mut s = Self { values };
        for id in FieldId::all() {
            s.values[id.index()] &= id.mask();
        }
        s
    }

    pub fn values(&self) -> &[u64; FIELD_COUNT] {
        &self.values
    }

    #[inline]
    pub fn get(&self, id: FieldId) -> u64 {
        self.values[id.index()]
    }

    /// Stores `value` truncated to the field width.
    #[inline]
    pub fn set(&mut self, id: FieldId, value: u64) {
        self.values[id.index()] = value & id.mask();
    }

    #[inline]
    pub fn bit(&self, id: FieldId, bit: u32) -> bool {
        self.get(id) >> bit & 1 == 1
    }

    pub fn set_bit(&mut self, id: FieldId, bit: u32, on: bool) {
        let v = self.get(id);
        self.set(id, if on { v | 1 << bit } else { v & !(1 << bit) });
    }

    pub fn read_field(&self, id: usize) -> Result<u64> {
        Ok(self.get(FieldId::new(id)?))
    }

    pub fn write_field(&self, id: usize, value: u64) -> Result<VmState> {
        let id = FieldId::new(id)?;
        let mut next = self.clone();
        next.set(id, value);
        Ok(next)
    }

    pub fn encode(&self) -> StateBlob {
        let mut bytes = [0u8; STATE_BYTES];
        for id in FieldId::all() {
            let off = BYTE_OFFSETS[id.index()];
            let n = id.width() as usize / 8;
            bytes[off..off + n].copy_from_slice(&self.get(id).to_le_bytes()[..n]);
        }
        StateBlob(bytes)
    }

    pub fn decode(bytes: &[u8]) -> Result<VmState> {
        if bytes.len() != STATE_BYTES {
            return Err(Error::WrongLength { expected: STATE_BYTES, actual: bytes.len() });
        }
        let mut s = Self::zeroed();
        for id in FieldId::all() {
            let off = BYTE_OFFSETS[id.index()];
            let n = id.width() as usize / 8;
            let mut raw = [0u8; 8];
            raw[..n].copy_from_slice(&bytes[off..off + n]);
            s.values[id.index()] = u64::from_le_bytes(raw);
        }
        Ok(s)
    }

    /// Builds a state from the leading bytes of a blob image; missing bytes are zero.
    pub fn from_prefix(bytes: &[u8]) -> VmState {
        let mut image = [0u8; STATE_BYTES];
        let n = bytes.len().min(STATE_BYTES);
        image[..n].copy_from_slice(&bytes[..n]);
        Self::decode(&image).expect("image has the blob length")
    }

    /// Number of differing bits across all 8,000 bits.
    /// Uniformly random state: every one of the 8,000 bits is an independent coin flip.
    pub fn random<R: rand::Rng + ?Sized>(rng: &mut R) -> VmState {
        let mut bytes = [0u8; STATE_BYTES];
        rng.fill_bytes(&mut bytes);
        Self::from_prefix(&bytes)
    }

    pub fn hamming_distance(&self, other: &VmState) -> u32 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    /// Fields whose values differ between the two states.
    pub fn diff_fields(&self, other: &VmState) -> Vec<FieldId> {
        FieldId::all().filter(|&id| self.get(id) != other.get(id)).collect()
    }
}

pub fn hamming_distance(a: &VmState, b: &VmState) -> u32 {
    a.hamming_distance(b)
}

/// The packed 1,000-byte image of a [`VmState`].
#[derive(Clone, PartialEq, Eq)]
pub struct StateBlob(pub [u8; STATE_BYTES]);

impl StateBlob {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn decode(&self) -> VmState {
        VmState::decode(&self.0).expect("blob has fixed length")
    }
}

impl fmt::Debug for StateBlob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StateBlob({} bytes)", self.0.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_geometry() {
        let cat = catalog();
        assert_eq!(cat.len(), 165);
        assert_eq!(cat.total_bits(), 8000);
        assert_eq!(cat[0].id, FieldId(0));
        for (i, f) in cat.iter().enumerate() {
            assert_eq!(f.id.index(), i);
            assert!(matches!(f.width, 16 | 32 | 64));
        }
        let names: std::collections::HashSet<_> = cat.iter().map(|f| f.name).collect();
        assert_eq!(names.len(), 165);
        assert_eq!(BYTE_OFFSETS[FIELD_COUNT - 1] + 8, STATE_BYTES);
    }

    #[test]
    fn catalog_is_rebuilt_identically() {
        assert_eq!(FieldCatalog::build(), FieldCatalog::build());
        assert_eq!(&FieldCatalog::build(), catalog());
    }

    #[test]
    fn named_fields_precede_reserved() {
        assert_eq!(NAMED_FIELDS.len(), FIRST_RESERVED);
        assert_eq!(field::GUEST_LINK_POINTER.index(), FIRST_RESERVED - 1);
        assert!(catalog()[FIRST_RESERVED].is_reserved());
        assert!(!catalog()[FIRST_RESERVED - 1].is_reserved());
    }

    #[test]
    fn groups_are_contiguous_in_order() {
        let groups: Vec<_> = catalog().iter().map(|f| f.group).collect();
        assert!(groups.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn read_write_and_masking() {
        let zero = VmState::zeroed();
        for id in 0..FIELD_COUNT {
            assert_eq!(zero.read_field(id).unwrap(), 0);
        }
        let s = zero.write_field(field::VPID.index(), 0x1FFFF).unwrap();
        assert_eq!(s.read_field(field::VPID.index()).unwrap(), 0xFFFF);
        let s = zero.write_field(field::PIN_CONTROLS.index(), 1 << 32).unwrap();
        assert_eq!(s.get(field::PIN_CONTROLS), 0);
        let s = zero.write_field(field::GUEST_CR0.index(), u64::MAX).unwrap();
        assert_eq!(s.get(field::GUEST_CR0), u64::MAX);
        assert!(matches!(zero.read_field(165), Err(Error::UnknownField(165))));
        assert!(matches!(zero.write_field(1000, 1), Err(Error::UnknownField(1000))));
    }

    #[test]
    fn write_identity_and_commute() {
        let mut s = VmState::zeroed();
        s.set(field::GUEST_RIP, 0xdead_beef);
        let same = s.write_field(field::GUEST_RIP.index(), s.get(field::GUEST_RIP)).unwrap();
        assert_eq!(same, s);
        let a = s.write_field(3, 7).unwrap().write_field(9, 11).unwrap();
        let b = s.write_field(9, 11).unwrap().write_field(3, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_state_encodes_to_zero_blob() {
        assert!(VmState::zeroed().encode().0.iter().all(|&b| b == 0));
    }

    #[test]
    fn decode_rejects_wrong_length() {
        assert!(matches!(
            VmState::decode(&[0u8; 999]),
            Err(Error::WrongLength { expected: 1000, actual: 999 })
        ));
    }

    #[test]
    fn one_blob_bit_changes_one_field_bit() {
        // Field-major packing: blob bit k lives in the field whose byte span contains k / 8.
        let base = VmState::zeroed().encode();
        for k in (0..STATE_BITS).step_by(37) {
            let mut bytes = base.0;
            bytes[k / 8] ^= 1 << (k % 8);
            let s = VmState::decode(&bytes).unwrap();
            let changed = s.diff_fields(&VmState::zeroed());
            assert_eq!(changed.len(), 1);
            let id = changed[0];
            let off = BYTE_OFFSETS[id.index()] * 8;
            assert_eq!(s.get(id), 1u64 << (k - off));
        }
    }

    #[test]
    fn hamming_examples() {
        let mut a = VmState::zeroed();
        let mut b = VmState::zeroed();
        assert_eq!(a.hamming_distance(&a), 0);
        a.set(field::VPID, 0x0F);
        b.set(field::VPID, 0xF0);
        assert_eq!(hamming_distance(&a, &b), 8);
    }
}
