//! Edge coverage: branch identifiers, per-execution branch sets and the
//! global coverage bitmap.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default number of entries in the coverage bitmap.
pub const DEFAULT_MAP_SIZE: usize = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CoverageError {
    #[error("map size {0} is not a non-zero power of two")]
    BadMapSize(usize),
    #[error("branch id {id} out of range for map size {map_size}")]
    OutOfRange { id: u32, map_size: usize },
    #[error("line {line}: cannot parse branch id {text:?}")]
    Parse { line: usize, text: String },
}

/// Index of a branch transition inside the coverage bitmap.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct BranchId(pub u32);

impl fmt::Display for BranchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

pub fn check_map_size(map_size: usize) -> Result<(), CoverageError> {
    if map_size == 0 || !map_size.is_power_of_two() || map_size > (u32::MAX as usize) + 1 {
        return Err(CoverageError::BadMapSize(map_size));
    }
    Ok(())
}

/// AFL-style edge hash: `((prev >> 1) ^ cur) mod map_size`.
pub fn hash_edge(prev_block: u32, cur_block: u32, map_size: usize) -> Result<BranchId, CoverageError> {
    check_map_size(map_size)?;
    let mask = (map_size - 1) as u32;
    Ok(BranchId(((prev_block >> 1) ^ cur_block) & mask))
}

/// Bucket index for an AFL hit count:
/// `1, 2, 3, 4-7, 8-15, 16-31, 32-127, 128+` map to `0..=7`.
pub fn hit_bucket(count: u32) -> u8 {
    match count {
        0 | 1 => 0,
        2 => 1,
        3 => 2,
        4..=7 => 3,
        8..=15 => 4,
        16..=31 => 5,
        32..=127 => 6,
        _ => 7,
    }
}

/// Derived identifier for `(branch, bucket)`; distinct buckets of the same
/// branch never collide as long as `map_size >= 8`.
pub fn bucketed_id(id: BranchId, count: u32, map_size: usize) -> BranchId {
    let mask = (map_size - 1) as u64;
    BranchId((((id.0 as u64) << 3 | hit_bucket(count) as u64) & mask) as u32)
}

/// A set of branches kept as a sorted, deduplicated vector.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BranchSet(Vec<BranchId>);

impl BranchSet {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    /// Builds a set from ids that are already strictly ascending.
    pub fn from_sorted_unchecked(ids: Vec<BranchId>) -> Self {
        debug_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        Self(ids)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = BranchId> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[BranchId] {
        &self.0
    }

    pub fn contains(&self, id: BranchId) -> bool {
        self.0.binary_search(&id).is_ok()
    }

    pub fn insert(&mut self, id: BranchId) -> bool {
        match self.0.binary_search(&id) {
            Ok(_) => false,
            Err(pos) => {
                self.0.insert(pos, id);
                true
            }
        }
    }

    /// Merges `other` into `self`; returns true if anything was added.
    pub fn union_with(&mut self, other: &BranchSet) -> bool {
        if other.is_empty() {
            return false;
        }
        if self.is_empty() {
            self.0.clone_from(&other.0);
            return true;
        }
        let mut merged = Vec::with_capacity(self.0.len() + other.0.len());
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.0, &other.0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => {
                    merged.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    merged.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    merged.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        merged.extend_from_slice(&a[i..]);
        merged.extend_from_slice(&b[j..]);
        let grew = merged.len() > self.0.len();
        self.0 = merged;
        grew
    }

    pub fn difference(&self, other: &BranchSet) -> BranchSet {
        BranchSet(self.0.iter().copied().filter(|id| !other.contains(*id)).collect())
    }

    pub fn is_subset(&self, other: &BranchSet) -> bool {
        self.0.iter().all(|id| other.contains(*id))
    }

    /// Parses the newline-separated decimal text format. Blank lines are
    /// skipped; order and duplicates in the input are normalized.
    pub fn parse_text(text: &str) -> Result<Self, CoverageError> {
        let mut ids = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let value = line.parse::<u32>().map_err(|_| CoverageError::Parse {
                line: idx + 1,
                text: line.to_string(),
            })?;
            ids.push(BranchId(value));
        }
        Ok(ids.into_iter().collect())
    }

    /// Newline-separated ascending decimal ids, no trailing newline.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.0.len() * 6);
        for (i, id) in self.0.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&id.0.to_string());
        }
        out
    }
}

impl FromStr for BranchSet {
    type Err = CoverageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse_text(s)
    }
}

impl FromIterator<BranchId> for BranchSet {
    fn from_iter<I: IntoIterator<Item = BranchId>>(iter: I) -> Self {
        let mut ids: Vec<BranchId> = iter.into_iter().collect();
        ids.sort_unstable();
        ids.dedup();
        Self(ids)
    }
}

impl<'a> IntoIterator for &'a BranchSet {
    type Item = &'a BranchId;
    type IntoIter = std::slice::Iter<'a, BranchId>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Global coverage bitmap for one campaign.
#[derive(Debug, Clone)]
pub struct CoverageMap {
    bits: Vec<u64>,
    map_size: usize,
    set_count: usize,
}

impl CoverageMap {
    pub fn new(map_size: usize) -> Result<Self, CoverageError> {
        check_map_size(map_size)?;
        Ok(Self {
            bits: vec![0; map_size.div_ceil(64)],
            map_size,
            set_count: 0,
        })
    }

    pub fn map_size(&self) -> usize {
        self.map_size
    }

    pub fn set_count(&self) -> usize {
        self.set_count
    }

    pub fn is_set(&self, id: BranchId) -> bool {
        let idx = id.0 as usize;
        idx < self.map_size && self.bits[idx / 64] & (1 << (idx % 64)) != 0
    }

    /// Marks every hit as covered and returns the ones that were not
    /// covered before.
    pub fn record_execution(&mut self, hits: &BranchSet) -> Result<BranchSet, CoverageError> {
        if let Some(bad) = hits.iter().find(|id| id.0 as usize >= self.map_size) {
            return Err(CoverageError::OutOfRange {
                id: bad.0,
                map_size: self.map_size,
            });
        }
        let mut novel = Vec::new();
        for id in hits.iter() {
            let idx = id.0 as usize;
            let word = &mut self.bits[idx / 64];
            let mask = 1u64 << (idx % 64);
            if *word & mask == 0 {
                *word |= mask;
                novel.push(id);
            }
        }
        self.set_count += novel.len();
        Ok(BranchSet(novel))
    }

    /// Whether any hit is not yet covered, without mutating the map.
    pub fn has_new(&self, hits: &BranchSet) -> bool {
        hits.iter().any(|id| !self.is_set(id))
    }

    pub fn coverage_ratio(&self) -> f64 {
        self.set_count as f64 / self.map_size as f64
    }

    pub fn covered(&self) -> BranchSet {
        let mut ids = Vec::with_capacity(self.set_count);
        for (w, word) in self.bits.iter().enumerate() {
            let mut word = *word;
            while word != 0 {
                let bit = word.trailing_zeros() as usize;
                ids.push(BranchId((w * 64 + bit) as u32));
                word &= word - 1;
            }
        }
        BranchSet(ids)
    }
}
