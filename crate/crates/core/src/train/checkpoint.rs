//! JSON checkpoints:
//!
//! ```json
//! {"format_version": "1", "config": {...}, "vocab": ["<pad>", "<unk>", ...],
//!  "params": {"name": {"shape": [r, c], "values": [...]}}}
//! ```
//!
//! Floats are written with round-trip precision, so a loaded model scores
//! bit-identically to the saved one.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Vocabulary, PAD_TOKEN, UNK_TOKEN};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: &str = "1";

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format_version: String,
    config: ModelConfig,
    vocab: Vec<String>,
    params: BTreeMap<String, StoredTensor>,
}

pub fn checkpoint_to_string(model: &Model, vocab: &Vocabulary) -> Result<String> {
    let params = model
        .params
        .iter()
        .map(|(_, name, t)| (name.to_string(), StoredTensor { shape: t.shape().to_vec(), values: t.data().to_vec() }))
        .collect();
    let file = CheckpointFile {
        format_version: FORMAT_VERSION.into(),
        config: model.config.clone(),
        vocab: vocab.tokens().to_vec(),
        params,
    };
    Ok(serde_json::to_string(&file)?)
}

/// Writes through a temporary sibling file so a failed save never leaves a
/// truncated checkpoint behind.
pub fn save_checkpoint(model: &Model, vocab: &Vocabulary, path: &Path) -> Result<()> {
    let text = checkpoint_to_string(model, vocab)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_from_str(text: &str) -> Result<(Model, Vocabulary)> {
    let bad = |m: String| Error::Checkpoint(m);
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| bad(format!("not valid JSON: {e}")))?;
    match value.get("format_version").and_then(|v| v.as_str()) {
        Some(FORMAT_VERSION) => {}
        Some(other) => return Err(bad(format!("unsupported format_version {other:?}, expected {FORMAT_VERSION:?}"))),
        None => return Err(bad("missing format_version".into())),
    }
    let file: CheckpointFile = serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
    file.config.validate()?;

    match file.vocab.get(..2) {
        Some([pad, unk]) if pad == PAD_TOKEN && unk == UNK_TOKEN => {}
        _ => return Err(bad("vocab must start with the reserved pad and unk tokens".into())),
    }
    let vocab = Vocabulary::from_tokens(file.vocab[2..].iter().cloned());
    if vocab.len() != file.vocab.len() {
        return Err(bad("vocab contains duplicate tokens".into()));
    }
    if vocab.len() != file.config.vocab_size {
        return Err(bad(format!("vocab has {} tokens but config.vocab_size is {}", vocab.len(), file.config.vocab_size)));
    }

    let mut store = ParamStore::new();
    for (name, t) in file.params {
        let tensor = Tensor::new(t.shape, t.values).map_err(|e| bad(format!("parameter {name}: {e}")))?;
        store.insert(name, tensor)?;
    }
    let model = Model::from_params(&file.config, store)?;
    Ok((model, vocab))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, Vocabulary)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Instance;
    use crate::model::build_model;

    fn toy() -> (Model, Vocabulary, Instance) {
        let vocab = Vocabulary::from_tokens((0..10).map(|i| format!("t{i}")));
        let cfg = ModelConfig {
            hidden_dim: 3,
            embedding_dim: 4,
            vocab_size: vocab.len(),
            l_passes: 3,
            allow_nonstandard: true,
            ..ModelConfig::default()
        };
        let inst = Instance {
            id: "a".into(),
            passage: vec![2, 3, 4, 5],
            question: vec![6, 7],
            options: vec![vec![8], vec![9], vec![10], vec![11]],
            label: 2,
            question_text: String::new(),
        };
        (build_model(&cfg, 5).unwrap(), vocab, inst)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (model, vocab, inst) = toy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_checkpoint(&model, &vocab, &path).unwrap();
        let (back, back_vocab) = load_checkpoint(&path).unwrap();
        assert_eq!(back_vocab, vocab);
        assert_eq!(back.config, model.config);
        for (_, name, t) in model.params.iter() {
            let b = back.params.by_name(name).unwrap();
            assert!(t.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()), "{name}");
        }
        let a = model.forward(&inst, false, None).unwrap().scores;
        let b = back.forward(&inst, false, None).unwrap().scores;
        assert_eq!(a, b);
    }

    #[test]
    fn version_is_one() {
        let (model, vocab, _) = toy();
        let text = checkpoint_to_string(&model, &vocab).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["format_version"], "1");
    }

    #[test]
    fn structured_errors() {
        let (model, vocab, _) = toy();
        let text = checkpoint_to_string(&model, &vocab).unwrap();
        assert!(matches!(checkpoint_from_str(&text[..text.len() / 2]), Err(Error::Checkpoint(_))));
        let v2 = text.replacen(r#""format_version":"1""#, r#""format_version":"2""#, 1);
        let err = checkpoint_from_str(&v2).err().unwrap();
        assert!(err.to_string().contains("format_version"), "{err}");
        let shape = text.replacen(r#""hidden_dim":3"#, r#""hidden_dim":5"#, 1);
        assert!(matches!(checkpoint_from_str(&shape), Err(Error::Checkpoint(_))));
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["params"]["select.w_att"]["values"].as_array_mut().unwrap().pop();
        assert!(matches!(checkpoint_from_str(&v.to_string()), Err(Error::Checkpoint(_))));
    }
}
