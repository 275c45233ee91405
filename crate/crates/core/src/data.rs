//! Labeled mention datasets: ingestion, stratified splitting, and the
//! product-name/generic-name overlap diagnostic.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::{AtcCode, MAX_LEVEL};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("column {0:?} not found in header")]
    MissingColumn(String),
    #[error("split ratio must lie strictly between 0 and 1, got {0}")]
    InvalidRatio(f64),
    #[error("no item has a generic name")]
    EmptyEligibleSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledMention {
    pub mention: String,
    pub gold: AtcCode,
    pub generic_name: Option<String>,
    /// Deepest level the mention supports unambiguously (0-5).
    pub granularity: Option<u8>,
}

impl LabeledMention {
    pub fn new(mention: impl Into<String>, gold: AtcCode) -> Self {
        Self {
            mention: mention.into(),
            gold,
            generic_name: None,
            granularity: None,
        }
    }

    pub fn with_generic_name(mut self, name: impl Into<String>) -> Self {
        self.generic_name = Some(name.into());
        self
    }

    pub fn with_granularity(mut self, granularity: u8) -> Self {
        self.granularity = Some(granularity);
        self
    }
}

/// Header names of the columns to read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub mention: String,
    pub gold: String,
    pub generic_name: Option<String>,
    pub granularity: Option<String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            mention: "mention".into(),
            gold: "gold".into(),
            generic_name: None,
            granularity: None,
        }
    }
}

impl ColumnMapping {
    /// The layout written by [`write_canonical_csv`].
    pub fn canonical() -> Self {
        Self {
            generic_name: Some("generic_name".into()),
            granularity: Some("granularity".into()),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IngestMode {
    /// The first bad row aborts the load.
    #[default]
    Strict,
    /// Bad rows are skipped and reported.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedRow {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadedDataset {
    pub items: Vec<LabeledMention>,
    pub skipped: Vec<SkippedRow>,
}

/// Tab for `.tsv`/`.tab` files, comma otherwise.
pub fn delimiter_for(path: &Path) -> u8 {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("tsv" | "tab") => b'\t',
        _ => b',',
    }
}

pub fn load_dataset(path: impl AsRef<Path>, mapping: &ColumnMapping, mode: IngestMode) -> Result<LoadedDataset, DataError> {
    let path = path.as_ref();
    read_dataset(File::open(path)?, delimiter_for(path), mapping, mode)
}

/// Column names from the header row of a delimited file.
pub fn read_header(path: impl AsRef<Path>) -> Result<Vec<String>, DataError> {
    let path = path.as_ref();
    let delimiter = delimiter_for(path);
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .quoting(delimiter != b'\t')
        .from_reader(File::open(path)?);
    Ok(rdr
        .headers()?
        .iter()
        .map(|h| h.trim_start_matches('\u{feff}').trim().to_owned())
        .collect())
}

/// Reads a delimited file with a header row. Tab-delimited input is read
/// without quote handling, since free-text mentions often contain stray `"`.
pub fn read_dataset<R: Read>(
    reader: R,
    delimiter: u8,
    mapping: &ColumnMapping,
    mode: IngestMode,
) -> Result<LoadedDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .quoting(delimiter != b'\t')
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| -> Result<usize, DataError> {
        let name = name.trim();
        headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}').trim() == name)
            .or_else(|| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name)))
            .ok_or_else(|| DataError::MissingColumn(name.to_owned()))
    };
    let mention_col = column(&mapping.mention)?;
    let gold_col = column(&mapping.gold)?;
    let generic_col = mapping.generic_name.as_deref().map(column).transpose()?;
    let granularity_col = mapping.granularity.as_deref().map(column).transpose()?;

    let mut out = LoadedDataset::default();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).map(str::trim).unwrap_or("");
        let row = (|| -> Result<LabeledMention, String> {
            let mention = field(mention_col);
            if mention.is_empty() {
                return Err("empty mention".into());
            }
            let gold = AtcCode::parse(field(gold_col)).map_err(|e| e.to_string())?;
            let generic_name = generic_col.map(field).filter(|s| !s.is_empty()).map(str::to_owned);
            let granularity = match granularity_col.map(field).filter(|s| !s.is_empty()) {
                None => None,
                Some(g) => match g.parse::<u8>() {
                    Ok(v) if v <= MAX_LEVEL => Some(v),
                    _ => return Err(format!("granularity {g:?} is not an integer 0-5")),
                },
            };
            Ok(LabeledMention {
                mention: mention.to_owned(),
                gold,
                generic_name,
                granularity,
            })
        })();
        match (row, mode) {
            (Ok(item), _) => out.items.push(item),
            (Err(message), IngestMode::Strict) => return Err(DataError::Parse { line, message }),
            (Err(reason), IngestMode::Lenient) => out.skipped.push(SkippedRow { line, reason }),
        }
    }
    Ok(out)
}

/// Writes `mention,gold,generic_name,granularity` with a header row.
pub fn write_canonical_csv<W: Write>(items: &[LabeledMention], writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["mention", "gold", "generic_name", "granularity"])?;
    for item in items {
        let granularity = item.granularity.map(|g| g.to_string()).unwrap_or_default();
        w.write_record([
            item.mention.as_str(),
            item.gold.as_str(),
            item.generic_name.as_deref().unwrap_or(""),
            granularity.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub train: Vec<LabeledMention>,
    pub test: Vec<LabeledMention>,
    pub seed: u64,
    /// Fraction of each stratum assigned to train.
    pub ratio: f64,
}

/// Splits by level-1 group. Each stratum is shuffled with a generator seeded
/// from `seed`, then its first `round(len * ratio)` items go to train. A
/// stratum holding a single item goes wholly to train.
pub fn stratified_split(data: &[LabeledMention], ratio: f64, seed: u64) -> Result<SplitResult, DataError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DataError::InvalidRatio(ratio));
    }
    let mut strata: BTreeMap<char, Vec<&LabeledMention>> = BTreeMap::new();
    for item in data {
        let group = item.gold.as_str().chars().next().expect("codes are non-empty");
        strata.entry(group).or_default().push(item);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut items in strata.into_values() {
        items.shuffle(&mut rng);
        let cut = if items.len() == 1 {
            1
        } else {
            ((items.len() as f64 * ratio).round() as usize).min(items.len())
        };
        train.extend(items[..cut].iter().map(|&i| i.clone()));
        test.extend(items[cut..].iter().map(|&i| i.clone()));
    }
    Ok(SplitResult { train, test, seed, ratio })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Overlap {
    pub eligible: usize,
    pub overlapping: usize,
}

impl Overlap {
    pub fn rate(&self) -> f64 {
        self.overlapping as f64 / self.eligible as f64
    }
}

/// Whether either string contains the other, after trimming and lowercasing.
pub fn names_overlap(mention: &str, generic_name: &str) -> bool {
    let a = mention.trim().to_lowercase();
    let b = generic_name.trim().to_lowercase();
    a.contains(&b) || b.contains(&a)
}

/// Counts items whose mention and generic name contain one another. Items
/// with no generic name are ignored.
pub fn substring_overlap(data: &[LabeledMention]) -> Result<Overlap, DataError> {
    let mut overlap = Overlap { eligible: 0, overlapping: 0 };
    for item in data {
        if let Some(generic) = &item.generic_name {
            overlap.eligible += 1;
            if names_overlap(&item.mention, generic) {
                overlap.overlapping += 1;
            }
        }
    }
    if overlap.eligible == 0 {
        return Err(DataError::EmptyEligibleSet);
    }
    Ok(overlap)
}

pub fn substring_overlap_rate(data: &[LabeledMention]) -> Result<f64, DataError> {
    substring_overlap(data).map(|o| o.rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn code(s: &str) -> AtcCode {
        AtcCode::parse(s).unwrap()
    }

    fn mapping(mention: &str, gold: &str) -> ColumnMapping {
        ColumnMapping {
            mention: mention.into(),
            gold: gold.into(),
            ..ColumnMapping::default()
        }
    }

    #[test]
    fn loads_mapped_csv() {
        let ds = read_dataset(&b"name,atc\nGLUCOPHAGE,A10BA02\n"[..], b',', &mapping("name", "atc"), IngestMode::Strict).unwrap();
        assert_eq!(ds.items, [LabeledMention::new("GLUCOPHAGE", code("A10BA02"))]);
        assert!(ds.skipped.is_empty());
    }

    #[test]
    fn strict_mode_reports_bad_line() {
        let err = read_dataset(&b"name,atc\nGLUCOPHAGE,A10BA02\nX,A10BA0\n"[..], b',', &mapping("name", "atc"), IngestMode::Strict).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn lenient_mode_skips_bad_rows() {
        let input = b"name,atc\nGLUCOPHAGE,A10BA02\nX,A10BA0\n,N02\nTYLENOL,n02be01\n";
        let ds = read_dataset(&input[..], b',', &mapping("name", "atc"), IngestMode::Lenient).unwrap();
        assert_eq!(ds.items.len(), 2);
        assert_eq!(ds.items[1].gold, code("N02BE01"));
        let lines: Vec<_> = ds.skipped.iter().map(|s| s.line).collect();
        assert_eq!(lines, [3, 4]);
    }

    #[test]
    fn missing_column() {
        let err = read_dataset(&b"name,code\nA,A\n"[..], b',', &mapping("name", "atc"), IngestMode::Strict).unwrap_err();
        assert!(matches!(err, DataError::MissingColumn(c) if c == "atc"));
        let m = ColumnMapping {
            granularity: Some("gran".into()),
            ..mapping("name", "code")
        };
        assert!(matches!(
            read_dataset(&b"name,code\nA,A\n"[..], b',', &m, IngestMode::Strict),
            Err(DataError::MissingColumn(_))
        ));
    }

    #[test]
    fn tsv_with_optional_columns_and_stray_quotes() {
        let input = "text\tcode\tgeneric\tgran\n\"microlax\" miroenema\tA06AG11\t\t5\ndigestive enzyme - 1 tablet\tA09AA\t\t4\n";
        let m = ColumnMapping {
            mention: "text".into(),
            gold: "code".into(),
            generic_name: Some("generic".into()),
            granularity: Some("gran".into()),
        };
        let ds = read_dataset(input.as_bytes(), b'\t', &m, IngestMode::Strict).unwrap();
        assert_eq!(ds.items[0].mention, "\"microlax\" miroenema");
        assert_eq!(ds.items[0].generic_name, None);
        assert_eq!(ds.items[0].granularity, Some(5));
        assert_eq!(ds.items[1].gold.level(), 4);
        assert_eq!(ds.items[1].granularity, Some(4));
    }

    #[test]
    fn granularity_out_of_range() {
        let m = ColumnMapping {
            granularity: Some("g".into()),
            ..ColumnMapping::default()
        };
        let err = read_dataset(&b"mention,gold,g\nx,A,6\n"[..], b',', &m, IngestMode::Strict).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 2, .. }));
    }

    #[test]
    fn delimiter_by_extension() {
        assert_eq!(delimiter_for(Path::new("a/b.TSV")), b'\t');
        assert_eq!(delimiter_for(Path::new("b.csv")), b',');
        assert_eq!(delimiter_for(Path::new("noext")), b',');
    }

    fn items(spec: &[(&str, usize)]) -> Vec<LabeledMention> {
        let mut out = Vec::new();
        for (group, n) in spec {
            for i in 0..*n {
                out.push(LabeledMention::new(format!("{group}-{i}"), code(&format!("{group}01AA{:02}", i % 100))));
            }
        }
        out
    }

    #[test]
    fn single_stratum_split() {
        let s = stratified_split(&items(&[("A", 100)]), 0.9, 42).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (90, 10));
    }

    #[test]
    fn split_is_deterministic() {
        let data = items(&[("A", 37), ("N", 21), ("C", 5)]);
        assert_eq!(stratified_split(&data, 0.9, 7).unwrap(), stratified_split(&data, 0.9, 7).unwrap());
        assert_ne!(stratified_split(&data, 0.9, 7).unwrap(), stratified_split(&data, 0.9, 8).unwrap());
    }

    #[test]
    fn two_strata_rounding() {
        let s = stratified_split(&items(&[("A", 10), ("N", 10)]), 0.9, 1).unwrap();
        let count = |v: &[LabeledMention], g: char| v.iter().filter(|m| m.gold.as_str().starts_with(g)).count();
        assert_eq!((count(&s.train, 'A'), count(&s.train, 'N')), (9, 9));
        assert_eq!((count(&s.test, 'A'), count(&s.test, 'N')), (1, 1));
    }

    #[test]
    fn singleton_strata_go_to_train() {
        let s = stratified_split(&items(&[("V", 1)]), 0.3, 0).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (1, 0));
    }

    #[test]
    fn bad_ratio() {
        for r in [0.0, 1.0, -0.5, f64::NAN] {
            assert!(matches!(stratified_split(&[], r, 0), Err(DataError::InvalidRatio(_))));
        }
    }

    #[test]
    fn overlap_examples() {
        let one = |m: &str, g: &str| LabeledMention::new(m, code("A10BA02")).with_generic_name(g);
        assert_eq!(substring_overlap_rate(&[one("Metformin Hydrochloride Tablets", "metformin")]).unwrap(), 1.0);
        assert_eq!(substring_overlap_rate(&[one("Tylenol", "acetaminophen")]).unwrap(), 0.0);

        let pairs = [one("GLUCOPHAGE", "metformin"), one("metformin 500mg", "metformin")];
        // brute force: test containment both ways on every pair
        let hits = pairs
            .iter()
            .filter(|p| {
                let (a, b) = (p.mention.to_lowercase(), p.generic_name.as_ref().unwrap().to_lowercase());
                a.contains(&b) || b.contains(&a)
            })
            .count();
        assert_eq!(hits as f64 / pairs.len() as f64, 0.5);
        assert_eq!(substring_overlap_rate(&pairs).unwrap(), 0.5);
    }

    #[test]
    fn overlap_ignores_items_without_generic() {
        let data = [
            LabeledMention::new("x", code("A")),
            LabeledMention::new("aspirin", code("N02BA01")).with_generic_name("Aspirin "),
        ];
        assert_eq!(substring_overlap(&data).unwrap(), Overlap { eligible: 1, overlapping: 1 });
        assert!(matches!(substring_overlap_rate(&data[..1]), Err(DataError::EmptyEligibleSet)));
    }

    fn arb_item() -> impl Strategy<Value = LabeledMention> {
        (
            "[A-Za-z0-9 ,\"-]{0,15}[A-Za-z]",
            "[ABCNJ][0-9]{2}[A-Z]{2}[0-9]{2}",
            proptest::option::of("[a-z ]{0,10}[a-z]"),
            proptest::option::of(0u8..=5),
        )
            .prop_map(|(m, c, g, gr)| LabeledMention {
                mention: m.trim().to_owned(),
                gold: code(&c),
                generic_name: g.map(|s| s.trim().to_owned()),
                granularity: gr,
            })
    }

    fn by_group(v: &[LabeledMention]) -> HashMap<char, usize> {
        let mut m = HashMap::new();
        for i in v {
            *m.entry(i.gold.as_str().chars().next().unwrap()).or_insert(0) += 1;
        }
        m
    }

    proptest! {
        #[test]
        fn split_partitions_and_stratifies(data in prop::collection::vec(arb_item(), 0..120), seed in any::<u64>(), ratio in 0.05f64..0.95) {
            let s = stratified_split(&data, ratio, seed).unwrap();
            let mut all: Vec<_> = s.train.iter().chain(&s.test).cloned().collect();
            let mut orig = data.clone();
            let key = |m: &LabeledMention| (m.gold.to_string(), m.mention.clone(), m.generic_name.clone(), m.granularity);
            all.sort_by_key(key);
            orig.sort_by_key(key);
            prop_assert_eq!(all, orig);

            let total = by_group(&data);
            let test = by_group(&s.test);
            for (g, n) in total {
                let t = *test.get(&g).unwrap_or(&0) as f64;
                prop_assert!((t - n as f64 * (1.0 - ratio)).abs() <= 1.0, "group {} size {} test {}", g, n, t);
            }
        }

        #[test]
        fn canonical_csv_round_trip(data in prop::collection::vec(arb_item(), 0..30)) {
            let mut buf = Vec::new();
            write_canonical_csv(&data, &mut buf).unwrap();
            let back = read_dataset(&buf[..], b',', &ColumnMapping::canonical(), IngestMode::Strict).unwrap();
            prop_assert_eq!(back.items, data);
        }

        #[test]
        fn overlap_symmetric_and_case_blind(a in "[A-Za-z ]{1,12}", b in "[A-Za-z ]{1,12}") {
            prop_assert_eq!(names_overlap(&a, &b), names_overlap(&b, &a));
            prop_assert_eq!(names_overlap(&a, &b), names_overlap(&a.to_uppercase(), &b.to_lowercase()));
        }
    }
}
