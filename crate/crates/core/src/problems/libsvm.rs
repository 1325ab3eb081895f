//! LIBSVM text format: `label idx:val idx:val ...` with 1-based indices.

use std::io::BufRead;

use nalgebra::{DMatrix, DVector};

use super::ProblemError;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LibsvmData {
    /// Sparse rows as `(zero-based index, value)` pairs.
    pub rows: Vec<Vec<(usize, f64)>>,
    /// Labels in `{-1, +1}`.
    pub labels: Vec<f64>,
    /// Largest feature index seen.
    pub n_features: usize,
}

impl LibsvmData {
    pub fn dense(&self) -> (DMatrix<f64>, DVector<f64>) {
        let mut a = DMatrix::zeros(self.rows.len(), self.n_features);
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                a[(r, c)] = v;
            }
        }
        (a, DVector::from_column_slice(&self.labels))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Keeps the first `count` samples.
    pub fn truncate(&mut self, count: usize) {
        self.rows.truncate(count);
        self.labels.truncate(count);
    }
}

/// Reads LIBSVM records. Labels `0` map to `-1`; blank lines and `#`
/// comments are skipped.
pub fn parse_libsvm(reader: impl BufRead) -> Result<LibsvmData, ProblemError> {
    let mut data = LibsvmData::default();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| ProblemError::ParseError {
            line: lineno,
            msg: e.to_string(),
        })?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().unwrap_or_default();
        let raw: f64 = label_tok.parse().map_err(|_| ProblemError::ParseError {
            line: lineno,
            msg: format!("bad label `{label_tok}`"),
        })?;
        let label = match raw {
            x if x == 1.0 => 1.0,
            x if x == -1.0 || x == 0.0 => -1.0,
            x => {
                return Err(ProblemError::ParseError {
                    line: lineno,
                    msg: format!("label {x} is not binary"),
                })
            }
        };
        let mut row = Vec::new();
        for tok in tokens {
            let (i, v) = tok.split_once(':').ok_or_else(|| ProblemError::ParseError {
                line: lineno,
                msg: format!("expected idx:val, got `{tok}`"),
            })?;
            let index: i64 = i.parse().map_err(|_| ProblemError::ParseError {
                line: lineno,
                msg: format!("bad index `{i}`"),
            })?;
            if index <= 0 {
                return Err(ProblemError::IndexError { line: lineno, index });
            }
            let value: f64 = v.parse().map_err(|_| ProblemError::ParseError {
                line: lineno,
                msg: format!("bad value `{v}`"),
            })?;
            let col = (index - 1) as usize;
            data.n_features = data.n_features.max(col + 1);
            row.push((col, value));
        }
        data.rows.push(row);
        data.labels.push(label);
    }
    Ok(data)
}
