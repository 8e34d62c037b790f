use std::collections::HashSet;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::error::{LamaError, Result};

/// Cell tokens (compared case-insensitively, after trimming) that mean "missing".
pub const MISSING_TOKENS: [&str; 5] = ["", "na", "nan", "null", "none"];

pub fn is_missing_token(cell: &str) -> bool {
    let t = cell.trim();
    MISSING_TOKENS.iter().any(|m| t.eq_ignore_ascii_case(m))
}

/// Untyped table straight from a CSV file. `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub column_names: Vec<String>,
    pub columns: Vec<Vec<Option<String>>>,
    pub n_rows: usize,
}

impl RawTable {
    pub fn new(column_names: Vec<String>, columns: Vec<Vec<Option<String>>>) -> Result<Self> {
        if column_names.len() != columns.len() {
            return Err(LamaError::LengthMismatch {
                expected: column_names.len(),
                found: columns.len(),
            });
        }
        let mut seen = HashSet::new();
        for name in &column_names {
            if !seen.insert(name.as_str()) {
                return Err(LamaError::DuplicateColumn(name.clone()));
            }
        }
        let n_rows = columns.first().map_or(0, Vec::len);
        for col in &columns {
            if col.len() != n_rows {
                return Err(LamaError::LengthMismatch {
                    expected: n_rows,
                    found: col.len(),
                });
            }
        }
        Ok(RawTable {
            column_names,
            columns,
            n_rows,
        })
    }

    /// Builds a table from string cells, applying the missing-token rule.
    pub fn from_cells(column_names: &[&str], rows: &[Vec<&str>]) -> Result<Self> {
        let mut columns = vec![Vec::with_capacity(rows.len()); column_names.len()];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != column_names.len() {
                return Err(LamaError::RaggedRow {
                    row: i + 1,
                    expected: column_names.len(),
                    found: row.len(),
                });
            }
            for (col, cell) in columns.iter_mut().zip(row) {
                col.push(normalize_cell(cell));
            }
        }
        RawTable::new(column_names.iter().map(|s| s.to_string()).collect(), columns)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<&[Option<String>]> {
        self.column_index(name).map(|i| self.columns[i].as_slice())
    }

    /// Copy of the table without the named column (if present).
    pub fn without_column(&self, name: &str) -> RawTable {
        let mut out = self.clone();
        if let Some(i) = out.column_index(name) {
            out.column_names.remove(i);
            out.columns.remove(i);
        }
        out
    }

    /// Parses CSV text from any reader. Row indices in errors are 1-based data rows.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| LamaError::Csv(e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut columns: Vec<Vec<Option<String>>> = vec![Vec::new(); header.len()];
        for (i, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| LamaError::Csv(e.to_string()))?;
            if record.len() != header.len() {
                return Err(LamaError::RaggedRow {
                    row: i + 1,
                    expected: header.len(),
                    found: record.len(),
                });
            }
            for (col, cell) in columns.iter_mut().zip(record.iter()) {
                col.push(normalize_cell(cell));
            }
        }
        RawTable::new(header, columns)
    }
}

fn normalize_cell(cell: &str) -> Option<String> {
    if is_missing_token(cell) {
        None
    } else {
        Some(cell.to_string())
    }
}

/// Reads a comma-separated file with a header row, requiring `target_name` in the header.
pub fn read_csv(path: impl AsRef<Path>, target_name: &str) -> Result<RawTable> {
    let table = read_csv_table(path)?;
    if table.column_index(target_name).is_none() {
        return Err(LamaError::MissingTarget(target_name.to_string()));
    }
    Ok(table)
}

/// Reads a comma-separated file with a header row; no target required.
pub fn read_csv_table(path: impl AsRef<Path>) -> Result<RawTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| LamaError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    RawTable::from_reader(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_three_line_file() {
        let t = RawTable::from_reader("a,b\n1,x\n2,y".as_bytes()).unwrap();
        assert_eq!(t.n_rows, 2);
        assert_eq!(t.column_names, vec!["a", "b"]);
        assert_eq!(
            t.columns,
            vec![
                vec![Some("1".to_string()), Some("2".to_string())],
                vec![Some("x".to_string()), Some("y".to_string())]
            ]
        );
    }

    #[test]
    fn missing_tokens_are_masked() {
        let t = RawTable::from_reader("a,b\nNA,x\n,y\nnull,None\n3,nan".as_bytes()).unwrap();
        assert_eq!(t.columns[0], vec![None, None, None, Some("3".into())]);
        assert_eq!(t.columns[1], vec![Some("x".into()), Some("y".into()), None, None]);
    }

    #[test]
    fn ragged_row_reports_index() {
        let err = RawTable::from_reader("a,b\n1,2\n1,2,3\n".as_bytes()).unwrap_err();
        match err {
            LamaError::RaggedRow { row, expected, found } => {
                assert_eq!((row, expected, found), (2, 2, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn quoted_fields_follow_rfc4180() {
        let t = RawTable::from_reader("a,b\n\"1,5\",\"say \"\"hi\"\"\"\n".as_bytes()).unwrap();
        assert_eq!(t.columns[0][0].as_deref(), Some("1,5"));
        assert_eq!(t.columns[1][0].as_deref(), Some("say \"hi\""));
    }

    #[test]
    fn missing_target_and_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(matches!(read_csv(&p, "c"), Err(LamaError::MissingTarget(_))));
        assert!(read_csv(&p, "b").is_ok());
        assert!(matches!(
            read_csv(dir.path().join("nope.csv"), "b"),
            Err(LamaError::Io { .. })
        ));
    }

    #[test]
    fn duplicate_header_rejected() {
        assert!(matches!(
            RawTable::from_reader("a,a\n1,2\n".as_bytes()),
            Err(LamaError::DuplicateColumn(_))
        ));
    }
}
