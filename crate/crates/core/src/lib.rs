//! Assigns WHO ATC codes to short drug mentions by walking a chat model down
//! the ATC hierarchy one level at a time.
//!
//! At each level the model sees only the children of the code it picked at the
//! previous level and must answer with one of them. The crate also covers the
//! surrounding workflow: ontology and definition loading, labeled dataset
//! handling, hierarchical evaluation, and fine-tuning data export.
//!
//! ```
//! use atc_core::{Coder, CodingConfig, DefinitionStore, OracleBackend, Ontology, AtcCode};
//!
//! let ontology = Ontology::from_reader(
//!     "A\tAlimentary tract and metabolism\nA10\tDrugs used in diabetes\n\
//!      A10B\tBlood glucose lowering drugs\nA10BA\tBiguanides\nA10BA02\tmetformin\n\
//!      N\tNervous system\n".as_bytes(),
//! ).unwrap();
//! let gold = AtcCode::parse("A10BA02").unwrap();
//! let backend = OracleBackend::new([("glucophage", gold.clone())]);
//! let defs = DefinitionStore::new();
//! let coder = Coder::new(&ontology, &defs, &backend, CodingConfig::default());
//! let trace = coder.code_mention("glucophage").unwrap();
//! assert_eq!(trace.final_code, Some(gold));
//! ```

pub mod backend;
pub mod data;
pub mod engine;
pub mod eval;
pub mod export;
pub mod knowledge;
pub mod ontology;
pub mod synthetic;
mod tsv;

pub use backend::{
    BackendError, ChatBackend, ChatMessage, GenerationParams, HttpChatBackend, HttpChatConfig, OracleBackend, Role,
    ScriptedBackend,
};
pub use data::{ColumnMapping, DataError, IngestMode, LabeledMention, SplitResult};
pub use engine::{Coder, CodingConfig, CodingTrace, EngineError, LevelStep, TraceRecord};
pub use eval::{CorrectLevel, EvalError, EvalOptions, EvalReport};
pub use export::{ExportError, ExportManifest, ExportOptions, SftRecord};
pub use knowledge::{DefinitionStore, GroundingSetting, KnowledgeError};
pub use ontology::{AtcCode, CodeError, Node, Ontology, OntologyEntry, OntologyError};
