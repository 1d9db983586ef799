//! Whitespace-separated text embeddings (`word v1 ... vd` per line).

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmbeddingCoverage {
    pub matched: usize,
    /// `matched / vocab.len()`.
    pub coverage: f64,
}

/// Overwrites rows of `table` for words present in both the file and
/// `vocab`. Rows for other words keep their current values.
pub fn parse_embeddings(reader: impl BufRead, path: &Path, vocab: &Vocabulary, table: &mut Tensor) -> Result<EmbeddingCoverage> {
    let dim = table.cols();
    let err = |line: usize, message: String| Error::Data {
        path: path.display().to_string(),
        line,
        field: "embedding".into(),
        message,
    };
    let mut matched = 0;
    let mut seen = vec![false; vocab.len()];
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values = parts
            .map(|p| p.parse::<f64>().map_err(|_| err(lineno, format!("malformed float {p:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != dim {
            return Err(err(lineno, format!("expected {dim} values, found {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(err(lineno, "non-finite value".into()));
        }
        let Some(id) = vocab.get(&word.to_lowercase()) else { continue };
        if id < 2 {
            continue;
        }
        table.data_mut()[id * dim..(id + 1) * dim].copy_from_slice(&values);
        if !seen[id] {
            seen[id] = true;
            matched += 1;
        }
    }
    Ok(EmbeddingCoverage { matched, coverage: matched as f64 / vocab.len() as f64 })
}

pub fn load_pretrained_embeddings(path: &Path, vocab: &Vocabulary, table: &mut Tensor) -> Result<EmbeddingCoverage> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(BufReader::new(f), path, vocab, table)
}
