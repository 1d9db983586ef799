//! JSONL datasets, one record per line:
//!
//! ```json
//! {"id": "q1", "passage": "...", "question": "...", "options": ["...", "..."], "label": 0}
//! ```
//!
//! `label` may also be an option letter (`"A"` for index 0), which is how
//! RACE stores answers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::{tokenize, Vocabulary};
use super::Instance;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Index(usize),
    Letter(String),
}

impl Label {
    pub fn index(&self) -> std::result::Result<usize, String> {
        match self {
            Label::Index(i) => Ok(*i),
            Label::Letter(s) => {
                let mut chars = s.trim().chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) if c.is_ascii_alphabetic() => Ok((c.to_ascii_uppercase() as u8 - b'A') as usize),
                    _ => Err(format!("label {s:?} is neither an index nor an option letter")),
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: String,
    pub passage: String,
    pub question: String,
    pub options: Vec<String>,
    pub label: Label,
}

fn data_err(path: &Path, line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Data { path: path.display().to_string(), line, field: field.into(), message: message.into() }
}

/// Parses records from JSONL text, checking option count and label range.
pub fn read_records(reader: impl BufRead, path: &Path, n_options: Option<usize>) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| {
            let msg = e.to_string();
            let field = msg.split('`').nth(1).unwrap_or("record").to_string();
            data_err(path, lineno, &field, msg)
        })?;
        if let Some(n) = n_options {
            if rec.options.len() != n {
                return Err(data_err(path, lineno, "options", format!("expected {n} options, found {}", rec.options.len())));
            }
        }
        if rec.options.len() < 2 {
            return Err(data_err(path, lineno, "options", "need at least two options"));
        }
        let label = rec.label.index().map_err(|m| data_err(path, lineno, "label", m))?;
        if label >= rec.options.len() {
            return Err(data_err(
                path,
                lineno,
                "label",
                format!("label {label} out of range for {} options", rec.options.len()),
            ));
        }
        for (field, text) in [("passage", &rec.passage), ("question", &rec.question)]
            .into_iter()
            .chain(rec.options.iter().map(|o| ("options", o)))
        {
            if tokenize(text).is_empty() {
                return Err(data_err(path, lineno, field, "no tokens after tokenization"));
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_records(path: &Path, n_options: Option<usize>) -> Result<Vec<Record>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(BufReader::new(f), path, n_options)
}

impl Instance {
    pub fn from_record(rec: &Record, vocab: &Vocabulary) -> Instance {
        Instance {
            id: rec.id.clone(),
            passage: vocab.encode(&rec.passage),
            question: vocab.encode(&rec.question),
            options: rec.options.iter().map(|o| vocab.encode(o)).collect(),
            label: rec.label.index().expect("validated on load"),
            question_text: rec.question.clone(),
        }
    }

    pub fn to_record(&self, vocab: &Vocabulary) -> Record {
        Record {
            id: self.id.clone(),
            passage: vocab.decode(&self.passage),
            question: if self.question_text.is_empty() { vocab.decode(&self.question) } else { self.question_text.clone() },
            options: self.options.iter().map(|o| vocab.decode(o)).collect(),
            label: Label::Index(self.label),
        }
    }
}

/// Loads a JSONL file and maps it through `vocab`.
pub fn load_dataset(path: &Path, vocab: &Vocabulary, n_options: Option<usize>) -> Result<Vec<Instance>> {
    Ok(load_records(path, n_options)?.iter().map(|r| Instance::from_record(r, vocab)).collect())
}

pub fn to_records(instances: &[Instance], vocab: &Vocabulary) -> Vec<Record> {
    instances.iter().map(|i| i.to_record(vocab)).collect()
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_vocab;

    const FIG1: &str = r#"{"id": "fig1", "passage": "Then the people inside were taken out by the firefighters.", "question": "How did the people who didn't jump out of the window get out of the building?", "options": ["They were taken out by the firefighters.", "They climbed down a ladder by themselves.", "They walked out after the fire was put out.", "They were taken out by doctors"], "label": "A"}"#;

    fn read(text: &str, n: Option<usize>) -> Result<Vec<Record>> {
        read_records(text.as_bytes(), Path::new("mem.jsonl"), n)
    }

    #[test]
    fn letter_label_maps_to_index() {
        let recs = read(FIG1, Some(4)).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].label.index().unwrap(), 0);
    }

    #[test]
    fn label_out_of_range_reports_line() {
        let text = format!("{FIG1}\n{}", FIG1.replace(r#""label": "A""#, r#""label": 4"#));
        let err = read(&text, None).unwrap_err();
        match err {
            Error::Data { line, field, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field, "label");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_option_count() {
        let err = read(FIG1, Some(5)).unwrap_err();
        assert!(matches!(err, Error::Data { ref field, .. } if field == "options"), "{err}");
    }

    #[test]
    fn malformed_and_unknown_fields() {
        assert!(matches!(read("{not json", None), Err(Error::Data { line: 1, .. })));
        let extra = FIG1.replace(r#""id""#, r#""extra": 1, "id""#);
        assert!(read(&extra, None).is_err());
        let missing = r#"{"id": "x", "passage": "p", "options": ["a", "b"], "label": 0}"#;
        let err = read(missing, None).unwrap_err();
        assert!(err.to_string().contains("question"), "{err}");
    }

    #[test]
    fn empty_fields_rejected() {
        let text = r#"{"id": "x", "passage": "  ", "question": "q", "options": ["a", "b"], "label": 0}"#;
        assert!(matches!(read(text, None), Err(Error::Data { ref field, .. }) if field == "passage"));
    }

    #[test]
    fn record_round_trip_through_file() {
        let recs = read(FIG1, None).unwrap();
        let vocab = build_vocab(
            recs.iter().flat_map(|r| {
                let mut t = tokenize(&r.passage);
                t.extend(tokenize(&r.question));
                t
            }),
            100,
        );
        let inst: Vec<Instance> = recs.iter().map(|r| Instance::from_record(r, &vocab)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.jsonl");
        write_records(&path, &to_records(&inst, &vocab)).unwrap();
        let back = load_dataset(&path, &vocab, Some(4)).unwrap();
        assert_eq!(back, inst);
    }
}
