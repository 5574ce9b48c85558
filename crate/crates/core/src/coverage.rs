// SPDX-License-Identifier: Apache-2.0

//! Edge coverage: a fixed 64 Ki-slot hit-count map keyed by hashed
//! (site, branch) pairs.

use crate::error::{Error, Result};

pub const MAP_SIZE: usize = 1 << 16;

/// FNV-1a over a site name, usable in const context.
pub const fn site_id(name: &str) -> u32 {
    let bytes = name.as_bytes();
    let mut h: u32 = 0x811C_9DC5;
    let mut i = 0;
    while i < bytes.len() {
        h ^= bytes[i] as u32;
        h = h.wrapping_mul(0x0100_0193);
        i += 1;
    }
    h
}

#[inline]
pub fn edge_id(site: u32, branch: u32) -> u16 {
    let mut x = site ^ branch.wrapping_mul(0x9E37_79B9);
    x ^= x >> 16;
    x = x.wrapping_mul(0x85EB_CA6B);
    x ^= x >> 13;
    (x ^ (x >> 16)) as u16
}

#[derive(Clone)]
pub struct CoverageMap {
    counts: Box<[u8]>,
    touched: Vec<u16>,
}

impl Default for CoverageMap {
    fn default() -> Self {
        Self::new()
    }
}

impl PartialEq for CoverageMap {
    fn eq(&self, other: &Self) -> bool {
        self.counts == other.counts
    }
}

impl Eq for CoverageMap {}

impl std::fmt::Debug for CoverageMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CoverageMap({} edges)", self.distinct())
    }
}

impl CoverageMap {
    pub fn new() -> Self {
        Self { counts: vec![0u8; MAP_SIZE].into_boxed_slice(), touched: Vec::new() }
    }

    #[inline]
    pub fn hit(&mut self, edge: u16) {
        let slot = &mut self.counts[edge as usize];
        if *slot == 0 {
            self.touched.push(edge);
        }
        *slot = slot.saturating_add(1);
    }

    pub fn count(&self, edge: u16) -> u8 {
        self.counts[edge as usize]
    }

    /// Number of slots with a nonzero count.
    pub fn distinct(&self) -> usize {
        self.touched.len()
    }

    /// Nonzero slots in first-hit order.
    pub fn edges(&self) -> &[u16] {
        &self.touched
    }

    /// Merges `other` by per-slot maximum and returns how many slots were new.
    pub fn merge(&mut self, other: &CoverageMap) -> usize {
        let mut fresh = 0;
        for &e in &other.touched {
            let theirs = other.counts[e as usize];
            let mine = &mut self.counts[e as usize];
            if *mine == 0 {
                fresh += 1;
                self.touched.push(e);
            }
            *mine = (*mine).max(theirs);
        }
        fresh
    }

    /// (slot, count) pairs in first-hit order.
    pub fn entries(&self) -> Vec<(u16, u8)> {
        self.touched.iter().map(|&e| (e, self.counts[e as usize])).collect()
    }

    /// As [`merge`](Self::merge) for a list of (slot, count) pairs.
    pub fn merge_entries(&mut self, entries: &[(u16, u8)]) -> usize {
        let mut fresh = 0;
        for &(e, c) in entries {
            let mine = &mut self.counts[e as usize];
            if *mine == 0 && c != 0 {
                fresh += 1;
                self.touched.push(e);
            }
            *mine = (*mine).max(c);
        }
        fresh
    }

    /// Slots hit in `other` that are zero here.
    pub fn novel_in(&self, other: &CoverageMap) -> usize {
        other.touched.iter().filter(|&&e| self.counts[e as usize] == 0).count()
    }

    pub fn reset(&mut self) {
        for &e in &self.touched {
            self.counts[e as usize] = 0;
        }
        self.touched.clear();
    }

    /// Raw map bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.counts.to_vec()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != MAP_SIZE {
            return Err(Error::WrongLength { expected: MAP_SIZE, actual: bytes.len() });
        }
        let touched = (0..MAP_SIZE).filter(|&i| bytes[i] != 0).map(|i| i as u16).collect();
        Ok(Self { counts: bytes.to_vec().into_boxed_slice(), touched })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn site_ids_are_stable() {
        assert_eq!(site_id(""), 0x811C_9DC5);
        assert_eq!(site_id("a"), 0xE40C_292C);
        const S: u32 = site_id("entry");
        assert_eq!(S, site_id("entry"));
    }

    #[test]
    fn hits_saturate_and_reset() {
        let mut m = CoverageMap::new();
        for _ in 0..300 {
            m.hit(7);
        }
        m.hit(9);
        assert_eq!(m.count(7), 255);
        assert_eq!(m.distinct(), 2);
        m.reset();
        assert_eq!(m.distinct(), 0);
        assert_eq!(m, CoverageMap::new());
    }

    #[test]
    fn merge_takes_maximum() {
        let mut a = CoverageMap::new();
        let mut b = CoverageMap::new();
        a.hit(1);
        b.hit(1);
        b.hit(1);
        b.hit(2);
        assert_eq!(a.novel_in(&b), 1);
        assert_eq!(a.merge(&b), 1);
        assert_eq!(a.count(1), 2);
        assert_eq!(a.distinct(), 2);
        assert_eq!(a.merge(&b), 0);
    }

    #[test]
    fn bytes_roundtrip() {
        let mut a = CoverageMap::new();
        a.hit(40000);
        let b = CoverageMap::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.edges(), &[40000]);
        assert!(CoverageMap::from_bytes(&[0; 3]).is_err());
    }
}
