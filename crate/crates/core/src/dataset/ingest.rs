use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Which CSV column holds the integer class label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

impl std::fmt::Display for LabelColumn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LabelColumn::Index(i) => write!(f, "{i}"),
            LabelColumn::Name(n) => f.write_str(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvOptions {
    pub label_column: LabelColumn,
    pub l2_normalize: bool,
    /// Overrides the inferred `max(label) + 1`.
    pub num_classes: Option<usize>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            label_column: LabelColumn::Name("label".into()),
            l2_normalize: true,
            num_classes: None,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_csv(file, opts)
}

/// Parses comma-delimited rows. A header row is assumed when the label column
/// is given by name, or when any field of the first row is non-numeric.
pub fn read_csv<R: Read>(reader: R, opts: &CsvOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();

    let first = match records.next() {
        Some(r) => r?,
        None => return Err(Error::Data("empty file".into())),
    };
    let looks_like_header = first.iter().any(|f| f.parse::<f64>().is_err());
    let has_header = matches!(opts.label_column, LabelColumn::Name(_)) || looks_like_header;

    let arity = first.len();
    let label_idx = match &opts.label_column {
        LabelColumn::Index(i) if *i < arity => *i,
        LabelColumn::Index(i) => {
            return Err(Error::Data(format!(
                "label column {i} out of range for {arity} columns"
            )))
        }
        LabelColumn::Name(name) => first
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("label column `{name}` not found in header")))?,
    };
    if arity < 2 {
        return Err(Error::Data("need at least one feature column and a label column".into()));
    }
    let dim = arity - 1;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let body = (!has_header).then_some(Ok(first)).into_iter().chain(records);
    for (row, rec) in body.enumerate() {
        let rec = rec?;
        let line = row + 1 + usize::from(has_header);
        if rec.len() != arity {
            return Err(Error::Data(format!(
                "line {line}: expected {arity} fields, found {}",
                rec.len()
            )));
        }
        let start = features.len();
        for (j, field) in rec.iter().enumerate() {
            if j == label_idx {
                let label = field.parse::<usize>().map_err(|_| {
                    Error::Data(format!("line {line}: label `{field}` is not a non-negative integer"))
                })?;
                labels.push(label);
            } else {
                let v = field.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    Error::Data(format!("line {line}: feature `{field}` is not a finite number"))
                })?;
                features.push(v);
            }
        }
        if opts.l2_normalize {
            let row = &mut features[start..];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Data(format!(
                    "line {line}: zero feature vector cannot be L2-normalized"
                )));
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    if labels.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }
    let inferred = labels.iter().max().map_or(0, |m| m + 1).max(2);
    let num_classes = opts.num_classes.unwrap_or(inferred);
    Dataset::from_parts(features, labels, dim, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(col: LabelColumn, norm: bool) -> CsvOptions {
        CsvOptions {
            label_column: col,
            l2_normalize: norm,
            num_classes: None,
        }
    }

    #[test]
    fn three_rows_two_classes() {
        let csv = "x1,x2,label\n1,2,0\n3,4,1\n5,6,0\n";
        let ds = read_csv(csv.as_bytes(), &opts(LabelColumn::Name("label".into()), false)).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.features(1), &[3.0, 4.0]);
    }

    #[test]
    fn normalizes_to_unit_norm() {
        let ds = read_csv("3,4,1\n".as_bytes(), &opts(LabelColumn::Index(2), true)).unwrap();
        assert_eq!(ds.features(0), &[0.6, 0.8]);
    }

    #[test]
    fn unused_label_still_counted() {
        let ds = read_csv("1,0\n2,2\n".as_bytes(), &opts(LabelColumn::Index(1), false)).unwrap();
        assert_eq!(ds.num_classes(), 3);
    }

    #[test]
    fn headerless_with_label_first() {
        let ds = read_csv("1,0.5,0.25\n0,1,1\n".as_bytes(), &opts(LabelColumn::Index(0), false)).unwrap();
        assert_eq!(ds.labels(), &[1, 0]);
        assert_eq!(ds.features(0), &[0.5, 0.25]);
    }

    #[test]
    fn header_detected_with_index_column() {
        let ds = read_csv("a,b,y\n1,2,1\n".as_bytes(), &opts(LabelColumn::Index(2), false)).unwrap();
        assert_eq!(ds.len(), 1);
    }

    #[test]
    fn error_paths() {
        let o = opts(LabelColumn::Index(2), false);
        assert!(read_csv("".as_bytes(), &o).is_err());
        assert!(read_csv("1,2,0\n1,0\n".as_bytes(), &o).is_err());
        assert!(read_csv("1,2,0\n1,x,0\n".as_bytes(), &o).is_err());
        assert!(read_csv("0,0,1\n".as_bytes(), &opts(LabelColumn::Index(2), true)).is_err());
        let missing = read_csv("a,b\n1,0\n".as_bytes(), &opts(LabelColumn::Name("target".into()), false))
            .unwrap_err();
        assert!(missing.to_string().contains("target"));
    }
}
