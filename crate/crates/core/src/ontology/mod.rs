//! ATC code arithmetic and the immutable prefix hierarchy.

mod code;

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use code::{level_for_length, level_length, AtcCode, CodeError, LEVEL_LENGTHS, MAX_LEVEL};

use crate::tsv::{self, RowError};

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("I/O error reading ontology: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("code {code} has no parent {parent} in the ontology")]
    OrphanCode { code: String, parent: String },
    #[error("duplicate code {0}")]
    DuplicateCode(String),
    #[error("empty name for code {0}")]
    EmptyName(String),
    #[error("unknown code {0}")]
    UnknownCode(String),
}

impl From<RowError> for OntologyError {
    fn from(e: RowError) -> Self {
        match e {
            RowError::Io(e) => OntologyError::Io(e),
            RowError::Malformed { line, message } => OntologyError::Parse { line, message },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OntologyEntry {
    pub code: AtcCode,
    pub name: String,
}

impl OntologyEntry {
    pub fn new(code: AtcCode, name: impl Into<String>) -> Self {
        Self {
            code,
            name: name.into(),
        }
    }
}

/// A traversal position: above the level-1 groups, or at a concrete code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Node<'a> {
    Root,
    Code(&'a AtcCode),
}

impl Node<'_> {
    /// Level of the node itself; the root sits at level 0.
    pub fn level(&self) -> u8 {
        match self {
            Node::Root => 0,
            Node::Code(c) => c.level(),
        }
    }

    fn key(&self) -> &str {
        match self {
            Node::Root => "",
            Node::Code(c) => c.as_str(),
        }
    }
}

impl<'a> From<&'a AtcCode> for Node<'a> {
    fn from(code: &'a AtcCode) -> Self {
        Node::Code(code)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptionStats {
    pub mean_branching: f64,
    pub max_branching: usize,
    /// Number of nodes (root included) with at least one child.
    pub branching_nodes: usize,
}

/// The ATC hierarchy, closed under parents.
///
/// Entries are kept sorted by code text, so every children list comes out in
/// ascending code order.
#[derive(Debug, Clone)]
pub struct Ontology {
    entries: Vec<OntologyEntry>,
    index: HashMap<String, usize>,
    // parent text ("" for the root) -> indices of children, ascending
    children: HashMap<String, Vec<usize>>,
}

impl PartialEq for Ontology {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl Eq for Ontology {}

impl Ontology {
    pub fn from_entries(entries: impl IntoIterator<Item = OntologyEntry>) -> Result<Self, OntologyError> {
        let mut sorted = BTreeMap::new();
        for entry in entries {
            if entry.name.trim().is_empty() {
                return Err(OntologyError::EmptyName(entry.code.to_string()));
            }
            let key = entry.code.as_str().to_owned();
            if sorted.insert(key.clone(), entry).is_some() {
                return Err(OntologyError::DuplicateCode(key));
            }
        }
        for entry in sorted.values() {
            if let Some(parent) = entry.code.parent() {
                if !sorted.contains_key(parent.as_str()) {
                    return Err(OntologyError::OrphanCode {
                        code: entry.code.to_string(),
                        parent: parent.to_string(),
                    });
                }
            }
        }

        let entries: Vec<OntologyEntry> = sorted.into_values().collect();
        let mut index = HashMap::with_capacity(entries.len());
        let mut children: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, entry) in entries.iter().enumerate() {
            index.insert(entry.code.as_str().to_owned(), i);
            let parent = entry.code.parent().map(String::from).unwrap_or_default();
            children.entry(parent).or_default().push(i);
        }
        Ok(Self {
            entries,
            index,
            children,
        })
    }

    /// Parses `code<TAB>name` rows; see [`load_ontology`].
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, OntologyError> {
        let mut entries = Vec::new();
        for row in tsv::read_rows(reader)? {
            let code = AtcCode::parse(&row.key).map_err(|e| OntologyError::Parse {
                line: row.line,
                message: e.to_string(),
            })?;
            entries.push(OntologyEntry::new(code, row.value));
        }
        Self::from_entries(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All entries in ascending code order.
    pub fn entries(&self) -> &[OntologyEntry] {
        &self.entries
    }

    pub fn get(&self, code: &str) -> Option<&OntologyEntry> {
        self.index.get(code).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, code: &AtcCode) -> bool {
        self.index.contains_key(code.as_str())
    }

    pub fn roots(&self) -> Vec<&OntologyEntry> {
        self.child_entries("")
    }

    /// Entries exactly one level below `parent`, in ascending code order.
    pub fn children(&self, parent: Node<'_>) -> Result<Vec<&OntologyEntry>, OntologyError> {
        if let Node::Code(code) = parent {
            if !self.contains(code) {
                return Err(OntologyError::UnknownCode(code.to_string()));
            }
        }
        Ok(self.child_entries(parent.key()))
    }

    fn child_entries(&self, key: &str) -> Vec<&OntologyEntry> {
        self.children
            .get(key)
            .map(|ids| ids.iter().map(|&i| &self.entries[i]).collect())
            .unwrap_or_default()
    }

    /// Count of entries at each level, index 0 holding level 1.
    pub fn level_counts(&self) -> [usize; MAX_LEVEL as usize] {
        let mut counts = [0; MAX_LEVEL as usize];
        for e in &self.entries {
            counts[usize::from(e.code.level()) - 1] += 1;
        }
        counts
    }

    /// Branching over every node with at least one child, the root included.
    pub fn option_stats(&self) -> OptionStats {
        let (total, nodes, max) = self
            .children
            .values()
            .map(Vec::len)
            .filter(|&n| n > 0)
            .fold((0usize, 0usize, 0usize), |(t, c, m), n| (t + n, c + 1, m.max(n)));
        OptionStats {
            mean_branching: if nodes == 0 { 0.0 } else { total as f64 / nodes as f64 },
            max_branching: max,
            branching_nodes: nodes,
        }
    }

    /// Canonical TSV rendering, loadable by [`Ontology::from_reader`].
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(e.code.as_str());
            out.push('\t');
            out.push_str(&e.name);
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the canonical TSV rendering, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_tsv().as_bytes()))
    }
}

/// Loads a UTF-8 `code<TAB>name` file (no header, `#` comments allowed) and
/// verifies the hierarchy is closed under parents.
pub fn load_ontology(path: impl AsRef<Path>) -> Result<Ontology, OntologyError> {
    let file = File::open(path)?;
    Ontology::from_reader(BufReader::new(file))
}
