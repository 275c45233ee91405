//! Grounding text for code options: generic names from the ontology, or
//! definitions from a user-supplied file.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::{AtcCode, OntologyEntry};
use crate::tsv::{self, RowError};

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("I/O error reading definitions: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate definition for code {0}")]
    DuplicateCode(String),
}

impl From<RowError> for KnowledgeError {
    fn from(e: RowError) -> Self {
        match e {
            RowError::Io(e) => KnowledgeError::Io(e),
            RowError::Malformed { line, message } => KnowledgeError::Parse { line, message },
        }
    }
}

/// How much context accompanies each option code in a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroundingSetting {
    CodeOnly,
    #[default]
    WithName,
    WithUmls,
}

impl GroundingSetting {
    pub const ALL: [GroundingSetting; 3] = [Self::CodeOnly, Self::WithName, Self::WithUmls];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::CodeOnly => "code-only",
            Self::WithName => "with-name",
            Self::WithUmls => "with-umls",
        }
    }
}

impl fmt::Display for GroundingSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Error)]
#[error("unknown grounding setting {0:?} (expected code-only, with-name or with-umls)")]
pub struct UnknownGrounding(String);

impl FromStr for GroundingSetting {
    type Err = UnknownGrounding;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "code-only" => Ok(Self::CodeOnly),
            "with-name" => Ok(Self::WithName),
            "with-umls" => Ok(Self::WithUmls),
            _ => Err(UnknownGrounding(s.to_owned())),
        }
    }
}

/// Per-code definition text keyed by code. Codes need not exist in any
/// particular ontology.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DefinitionStore {
    defs: HashMap<String, String>,
}

impl DefinitionStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, KnowledgeError> {
        let mut defs = HashMap::new();
        for row in tsv::read_rows(reader)? {
            let code = AtcCode::parse(&row.key).map_err(|e| KnowledgeError::Parse {
                line: row.line,
                message: e.to_string(),
            })?;
            if defs.insert(String::from(code.clone()), row.value).is_some() {
                return Err(KnowledgeError::DuplicateCode(code.to_string()));
            }
        }
        Ok(Self { defs })
    }

    /// Adds or replaces a definition. Blank definitions are ignored.
    pub fn insert(&mut self, code: &AtcCode, definition: impl Into<String>) {
        let definition = definition.into();
        let definition = definition.trim();
        if !definition.is_empty() {
            self.defs.insert(code.to_string(), definition.to_owned());
        }
    }

    pub fn get(&self, code: &AtcCode) -> Option<&str> {
        self.defs.get(code.as_str()).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }
}

/// Loads a UTF-8 `code<TAB>definition` file (no header, `#` comments allowed).
pub fn load_definitions(path: impl AsRef<Path>) -> Result<DefinitionStore, KnowledgeError> {
    DefinitionStore::from_reader(BufReader::new(File::open(path)?))
}

/// Renders one option line. Under [`GroundingSetting::WithUmls`], codes with no
/// stored definition fall back to their generic name.
pub fn render_option(entry: &OntologyEntry, setting: GroundingSetting, defs: &DefinitionStore) -> String {
    let code = entry.code.as_str();
    match setting {
        GroundingSetting::CodeOnly => code.to_owned(),
        GroundingSetting::WithName => format!("{code}: {}", entry.name),
        GroundingSetting::WithUmls => match defs.get(&entry.code) {
            Some(def) => format!("{code}: {def}"),
            None => format!("{code}: {}", entry.name),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const N02_DEF: &str = "Analgesics. compounds capable of relieving pain without the loss of consciousness or without producing anesthesia";

    fn entry(code: &str, name: &str) -> OntologyEntry {
        OntologyEntry::new(AtcCode::parse(code).unwrap(), name)
    }

    #[test]
    fn loads_single_definition() {
        let store = DefinitionStore::from_reader(format!("N02\t{N02_DEF}\n").as_bytes()).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.get(&AtcCode::parse("n02").unwrap()), Some(N02_DEF));
    }

    #[test]
    fn empty_file_is_empty_store() {
        assert!(DefinitionStore::from_reader(&b""[..]).unwrap().is_empty());
        assert!(DefinitionStore::from_reader(&b"# only a comment\n"[..]).unwrap().is_empty());
    }

    #[test]
    fn duplicates_rejected() {
        let err = DefinitionStore::from_reader(&b"N02\ta\nn02\tb\n"[..]).unwrap_err();
        assert!(matches!(err, KnowledgeError::DuplicateCode(c) if c == "N02"));
    }

    #[test]
    fn invalid_codes_rejected_with_line() {
        let err = DefinitionStore::from_reader(&b"N02\ta\nN0\tb\n"[..]).unwrap_err();
        assert!(matches!(err, KnowledgeError::Parse { line: 2, .. }));
    }

    #[test]
    fn renders_each_setting() {
        let e = entry("A12AA01", "calcium phosphate");
        let none = DefinitionStore::new();
        assert_eq!(render_option(&e, GroundingSetting::WithName, &none), "A12AA01: calcium phosphate");
        assert_eq!(render_option(&e, GroundingSetting::CodeOnly, &none), "A12AA01");
        assert_eq!(render_option(&e, GroundingSetting::WithUmls, &none), "A12AA01: calcium phosphate");

        let n02 = entry("N02", "Analgesics");
        let mut defs = DefinitionStore::new();
        defs.insert(&n02.code, N02_DEF);
        assert_eq!(render_option(&n02, GroundingSetting::WithUmls, &defs), format!("N02: {N02_DEF}"));
    }

    #[test]
    fn grounding_parses_cli_spellings() {
        for s in GroundingSetting::ALL {
            assert_eq!(s.as_str().parse::<GroundingSetting>().unwrap(), s);
        }
        assert_eq!("WITH_UMLS".parse::<GroundingSetting>().unwrap(), GroundingSetting::WithUmls);
        assert!("umls".parse::<GroundingSetting>().is_err());
    }

    proptest! {
        #[test]
        fn rendering_invariants(
            code in "[A-Z][0-9]{2}[A-Z]{2}[0-9]{2}",
            name in "[a-z ]{1,20}[a-z]",
            def in proptest::option::of("[A-Za-z. ]{0,40}[a-z]"),
        ) {
            let e = entry(&code, &name);
            let mut defs = DefinitionStore::new();
            if let Some(d) = &def {
                defs.insert(&e.code, d.clone());
            }
            for s in GroundingSetting::ALL {
                prop_assert!(render_option(&e, s, &defs).starts_with(&code));
            }
            prop_assert_eq!(render_option(&e, GroundingSetting::CodeOnly, &defs), code.clone());
            let with_name = render_option(&e, GroundingSetting::WithName, &defs);
            let with_umls = render_option(&e, GroundingSetting::WithUmls, &defs);
            prop_assert_eq!(with_name != with_umls, defs.get(&e.code).is_some() && defs.get(&e.code) != Some(name.as_str()));
        }
    }
}
