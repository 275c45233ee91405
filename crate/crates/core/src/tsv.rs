//! Two-column `key<TAB>value` reader shared by the ontology and definition files.

use std::io::BufRead;

pub(crate) struct Row {
    pub line: usize,
    pub key: String,
    pub value: String,
}

#[derive(Debug)]
pub(crate) enum RowError {
    Io(std::io::Error),
    Malformed { line: usize, message: String },
}

/// Reads rows, skipping blank lines and `#` comments. Values are trimmed and
/// must be non-empty.
pub(crate) fn read_rows<R: BufRead>(reader: R) -> Result<Vec<Row>, RowError> {
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(RowError::Io)?;
        let line = line.strip_prefix('\u{feff}').unwrap_or(&line);
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('\t') else {
            return Err(RowError::Malformed {
                line: line_no,
                message: "expected two tab-separated columns".into(),
            });
        };
        let value = value.trim();
        if value.is_empty() {
            return Err(RowError::Malformed {
                line: line_no,
                message: "second column is empty".into(),
            });
        }
        rows.push(Row {
            line: line_no,
            key: key.trim().to_owned(),
            value: value.to_owned(),
        });
    }
    Ok(rows)
}
