//! CSV feature tables keyed by sample id.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// Header names recognised as a leading sample-id column.
pub const ID_COLUMNS: [&str; 2] = ["id", "sample_id"];

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    ids: Vec<String>,
    feature_names: Vec<String>,
    rows: Vec<Vec<f64>>,
    labels: Option<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(ids: Vec<String>, feature_names: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::width("sample ids", rows.len(), ids.len()));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Config(format!("duplicate feature column `{name}`")));
            }
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (r, (id, row)) in ids.iter().zip(&rows).enumerate() {
            if row.len() != feature_names.len() {
                return Err(Error::Data {
                    row: r + 1,
                    message: format!(
                        "expected {} values, found {}",
                        feature_names.len(),
                        row.len()
                    ),
                });
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data {
                    row: r + 1,
                    message: format!("non-finite value in column `{}`", feature_names[j]),
                });
            }
            if index.insert(id.clone(), r).is_some() {
                return Err(Error::Data {
                    row: r + 1,
                    message: format!("duplicate sample id `{id}`"),
                });
            }
        }
        Ok(Dataset {
            ids,
            feature_names,
            rows,
            labels: None,
            index,
        })
    }

    /// Rows without ids are keyed by their 0-based position.
    pub fn from_rows(feature_names: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        Dataset::new(ids, feature_names, rows)
    }

    pub fn with_labels(mut self, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != self.rows.len() {
            return Err(Error::width("labels", self.rows.len(), labels.len()));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Reads a CSV table. A first column headed `id` or `sample_id` holds
    /// sample ids; `label_column`, when given, is split off as labels.
    /// Error rows are file line numbers.
    pub fn from_csv<R: Read>(reader: R, label_column: Option<&str>) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = csv.headers()?.iter().map(str::to_string).collect();
        let has_id = headers
            .first()
            .is_some_and(|h| ID_COLUMNS.contains(&h.as_str()));
        let label_pos = match label_column {
            Some(name) => Some(
                headers
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| Error::UnknownFeature(name.to_string()))?,
            ),
            None => None,
        };
        let feature_cols: Vec<usize> = (usize::from(has_id)..headers.len())
            .filter(|c| Some(*c) != label_pos)
            .collect();
        let feature_names = feature_cols.iter().map(|&c| headers[c].clone()).collect();

        let (mut ids, mut rows, mut labels) = (Vec::new(), Vec::new(), Vec::new());
        for (r, record) in csv.records().enumerate() {
            let record = record.map_err(|e| Error::Data {
                row: e.position().map_or(r + 2, |p| p.line() as usize),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(r + 2, |p| p.line() as usize);
            let parse = |c: usize| -> Result<f64> {
                let field = &record[c];
                field.parse::<f64>().map_err(|_| Error::Data {
                    row: line,
                    message: format!(
                        "column `{}`: cannot parse `{field}` as a number",
                        headers[c]
                    ),
                })
            };
            ids.push(if has_id {
                record[0].to_string()
            } else {
                r.to_string()
            });
            rows.push(
                feature_cols
                    .iter()
                    .map(|&c| parse(c))
                    .collect::<Result<Vec<_>>>()?,
            );
            if let Some(c) = label_pos {
                labels.push(parse(c)?);
            }
        }
        let data = Dataset::new(ids, feature_names, rows).map_err(|e| match e {
            Error::Data { row, message } => Error::Data {
                row: row + 1,
                message,
            },
            other => other,
        })?;
        if label_pos.is_some() {
            data.with_labels(labels)
        } else {
            Ok(data)
        }
    }

    pub fn from_path(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Dataset::from_csv(file, label_column).map_err(|e| match e {
            Error::Data { row, message } => Error::Data {
                row,
                message: format!("{message} (in {})", path.display()),
            },
            other => other,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.labels.as_deref()
    }

    pub fn label(&self, i: usize) -> Option<f64> {
        self.labels.as_ref().map(|l| l[i])
    }

    pub fn position(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownSample(id.to_string()))
    }

    pub fn get(&self, id: &str) -> Result<&[f64]> {
        Ok(&self.rows[self.position(id)?])
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.feature_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownFeature(name.to_string()))
    }

    /// A copy restricted to the named columns, in the given order.
    pub fn select_columns(&self, names: &[String]) -> Result<Dataset> {
        let cols = names
            .iter()
            .map(|n| self.feature_index(n))
            .collect::<Result<Vec<_>>>()?;
        let rows = self
            .rows
            .iter()
            .map(|r| cols.iter().map(|&c| r[c]).collect())
            .collect();
        let mut out = Dataset::new(self.ids.clone(), names.to_vec(), rows)?;
        out.labels = self.labels.clone();
        Ok(out)
    }

    /// A copy restricted to the given sample ids, in the given order.
    pub fn select_rows(&self, ids: &[String]) -> Result<Dataset> {
        let positions = ids
            .iter()
            .map(|id| self.position(id))
            .collect::<Result<Vec<_>>>()?;
        let rows = positions.iter().map(|&p| self.rows[p].clone()).collect();
        let mut out = Dataset::new(ids.to_vec(), self.feature_names.clone(), rows)?;
        out.labels = self
            .labels
            .as_ref()
            .map(|l| positions.iter().map(|&p| l[p]).collect());
        Ok(out)
    }

    /// Writes the table with a leading `id` column.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["id".to_string()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header)?;
        for (id, row) in self.ids.iter().zip(&self.rows) {
            let mut record = vec![id.clone()];
            record.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&record)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
