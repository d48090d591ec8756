//! The seed pool: retained inputs with their coverage and bookkeeping.

use std::fs;
use std::path::Path;

use crate::coverage::BranchSet;
use crate::seed_tree::SeedId;
use crate::target::{Input, InputId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub input: Input,
    pub branches: BranchSet,
    pub exec_us: u64,
    pub n_scheduled: u64,
    /// The tree node holding this input.
    pub node: SeedId,
}

impl CorpusEntry {
    pub fn id(&self) -> InputId {
        self.input.id
    }

    pub fn size(&self) -> usize {
        self.input.bytes.len()
    }
}

/// Entries are kept in ascending id order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    entries: Vec<CorpusEntry>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Panics if `entry` does not carry a fresh, larger id.
    pub fn push(&mut self, entry: CorpusEntry) {
        if let Some(last) = self.entries.last() {
            assert!(entry.id() > last.id(), "corpus ids must increase");
        }
        self.entries.push(entry);
    }

    pub fn position(&self, id: InputId) -> Option<usize> {
        self.entries.binary_search_by_key(&id, |e| e.id()).ok()
    }

    pub fn get(&self, id: InputId) -> Option<&CorpusEntry> {
        self.position(id).map(|i| &self.entries[i])
    }

    pub fn get_mut(&mut self, id: InputId) -> Option<&mut CorpusEntry> {
        self.position(id).map(move |i| &mut self.entries[i])
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = &CorpusEntry> {
        self.entries.iter()
    }

    /// Writes `<id>.bin` and `<id>.branches` for every entry into `dir`.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        for entry in &self.entries {
            fs::write(dir.join(format!("{}.bin", entry.id())), &entry.input.bytes)?;
            fs::write(dir.join(format!("{}.branches", entry.id())), entry.branches.to_text())?;
        }
        Ok(())
    }
}
